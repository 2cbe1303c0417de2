"""Supervised optimum-path classifiers.

Two training modes share the idea of growing an optimum-path forest
from class prototypes, but differ in graph and path score:

* the complete-graph classifier connects every pair of training
  samples, scores a path by its longest arc, and elects prototypes on
  the class boundary (endpoints of minimum-spanning-tree edges that
  join different classes);
* the adjacency classifier reuses the density machinery from
  clustering on a k-nearest-neighbour graph, except that prototypes
  propagate their true class label instead of a cluster id.

Both expose a train/classify pair operating on numeric label arrays;
mapping to string labels is the caller's concern.
"""

from dataclasses import dataclass

import numpy as np

from .core import DataError, pairwise_distances
from .clustering import cluster, min_density_gap
from .knn_graph import build_knn_graph, compute_densities, kernel_density

__all__ = [
    "CplModel",
    "KnnModel",
    "mst_prototypes",
    "train_cpl",
    "classify_cpl",
    "train_knn",
    "tune_k",
    "classify_knn",
]


@dataclass
class CplModel:
    """Complete-graph classifier state.

    ``order`` sorts the training nodes by ascending path cost; the
    classifier walks candidates in that order, so ties between equal
    scores resolve to the cheaper (then lower-indexed) node.
    """

    nodes: np.ndarray
    true_labels: np.ndarray
    labels: np.ndarray
    cost: np.ndarray
    order: np.ndarray
    prototypes: np.ndarray


@dataclass
class KnnModel:
    """Adjacency classifier state: the trained forest plus kernel data."""

    nodes: np.ndarray
    true_labels: np.ndarray
    labels: np.ndarray
    cost: np.ndarray
    density: np.ndarray
    k: int
    bandwidth: float
    degenerate: bool
    prototypes: np.ndarray


def _check_training_set(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise DataError(f"training samples must form a 2-d array, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} samples")
    if X.shape[0] < 2:
        raise DataError("need at least 2 training samples")
    if np.unique(y).size < 2:
        raise DataError("training set must contain at least 2 classes")
    return X, y


def mst_prototypes(X, y, dist=None):
    """Elect prototypes from the class boundary of the spanning tree.

    Grows a minimum spanning tree over the complete Euclidean graph
    (Prim's method from node 0, ties to the smaller index).  Whenever a
    tree edge joins samples of different classes, both endpoints become
    prototypes.  Returns the sorted prototype indices.
    """
    X, y = _check_training_set(X, y)
    n = X.shape[0]
    if dist is None:
        dist = pairwise_distances(X)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    best_src = np.zeros(n, dtype=np.int64)
    protos = set()
    for _ in range(n - 1):
        masked = np.where(in_tree, np.inf, best)
        v = int(np.argmin(masked))
        u = int(best_src[v])
        in_tree[v] = True
        if y[u] != y[v]:
            protos.add(u)
            protos.add(v)
        closer = ~in_tree & (dist[v] < best)
        best[closer] = dist[v][closer]
        best_src[closer] = v
    if not protos:
        raise DataError("no class boundary found in the spanning tree")
    return np.array(sorted(protos), dtype=np.int64)


def train_cpl(X, y):
    """Train the complete-graph classifier.

    Prototypes start at cost zero; every other sample is claimed by the
    neighbour minimising max(cost of neighbour, arc length), i.e. paths
    are scored by their longest arc and each sample keeps the best path
    from the prototype set.  Labels ride along the winning paths.
    """
    X, y = _check_training_set(X, y)
    n = X.shape[0]
    dist = pairwise_distances(X)
    protos = mst_prototypes(X, y, dist=dist)

    cost = np.full(n, np.inf)
    labels = np.full(n, -1, dtype=np.int64)
    cost[protos] = 0.0
    labels[protos] = y[protos]
    done = np.zeros(n, dtype=bool)
    for _ in range(n):
        masked = np.where(done, np.inf, cost)
        i = int(np.argmin(masked))
        done[i] = True
        offers = np.maximum(cost[i], dist[i])
        better = ~done & (offers < cost)
        cost[better] = offers[better]
        labels[better] = labels[i]

    order = np.argsort(cost, kind="stable").astype(np.int64)
    return CplModel(
        nodes=X,
        true_labels=y,
        labels=labels,
        cost=cost,
        order=order,
        prototypes=protos,
    )


def classify_cpl(model, X):
    """Classify rows of ``X`` with a complete-graph model.

    Each sample receives the label of the training node minimising
    max(node cost, distance to the sample).  Candidates are scanned in
    ascending cost order, so equal scores resolve to the cheaper node.
    Returns (labels, scores).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.nodes.shape[1]:
        raise DataError(f"samples of shape {X.shape} do not match training dimension {model.nodes.shape[1]}")
    sorted_nodes = model.nodes[model.order]
    sorted_cost = model.cost[model.order]
    sorted_labels = model.labels[model.order]
    d = pairwise_distances(X, sorted_nodes)
    scores = np.maximum(sorted_cost[None, :], d)
    pick = np.argmin(scores, axis=1)
    return sorted_labels[pick], scores[np.arange(X.shape[0]), pick]


def train_knn(X, y, k):
    """Train the adjacency classifier at a fixed neighbourhood size.

    Runs the clustering competition on the k-nearest-neighbour graph of
    the training set, with every would-be prototype propagating its
    true class label.
    """
    X, y = _check_training_set(X, y)
    graph = build_knn_graph(X, k)
    compute_densities(graph)
    gap, _ = min_density_gap(graph)
    forest = cluster(graph, gap=gap, root_labels=y)
    return KnnModel(
        nodes=X,
        true_labels=y,
        labels=forest.label,
        cost=forest.cost,
        density=graph.density,
        k=k,
        bandwidth=graph.bandwidth,
        degenerate=graph.degenerate,
        prototypes=np.array(forest.prototypes, dtype=np.int64),
    )


def classify_knn(model, X):
    """Classify rows of ``X`` with an adjacency model.

    A sample is scored against its k nearest training nodes: it takes
    the density it would have inside the training graph, each neighbour
    offers min(neighbour cost, that density), and the best offer wins.
    Equal offers resolve to the lower node index.  Returns
    (labels, scores).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.nodes.shape[1]:
        raise DataError(f"samples of shape {X.shape} do not match training dimension {model.nodes.shape[1]}")
    d = pairwise_distances(X, model.nodes)
    near = np.sort(np.argsort(d, axis=1, kind="stable")[:, : model.k], axis=1)
    labels = np.empty(X.shape[0], dtype=np.int64)
    scores = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        cand = near[r]
        rho = kernel_density(d[r, cand], model.bandwidth, model.k)
        offers = np.minimum(model.cost[cand], rho)
        best = int(np.argmax(offers))
        labels[r] = model.labels[cand[best]]
        scores[r] = offers[best]
    return labels, scores


def _select_best_k(scores):
    """Best neighbourhood size from {k: accuracy}: max accuracy, ties to small k."""
    best_k_val, best_acc = None, -np.inf
    for k in sorted(scores):
        if scores[k] > best_acc:
            best_k_val, best_acc = k, scores[k]
    return best_k_val


def tune_k(X, y, k_values, seed=0):
    """Choose a neighbourhood size on an internal stratified holdout.

    The training set is split in half per class (seeded shuffle, fit
    half rounded up); each candidate k trains on the fit half and is
    scored on the held-out half.  Candidates that are too large for the
    fit half are skipped; an empty candidate range is an error.
    """
    X, y = _check_training_set(X, y)
    rng = np.random.default_rng(seed)
    fit_idx, eval_idx = [], []
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(members.size)]
        n_fit = (members.size + 1) // 2
        fit_idx.extend(members[:n_fit].tolist())
        eval_idx.extend(members[n_fit:].tolist())
    fit_idx = np.array(sorted(fit_idx), dtype=np.int64)
    eval_idx = np.array(sorted(eval_idx), dtype=np.int64)
    if eval_idx.size == 0:
        raise DataError("holdout evaluation set is empty; need at least 2 samples in some class")
    if np.unique(y[fit_idx]).size < 2:
        raise DataError("holdout fit set lost a class; need at least 2 samples per class")

    viable = [k for k in k_values if 1 <= k < fit_idx.size]
    if not viable:
        raise DataError(
            f"no viable neighbourhood size: candidates {list(k_values)} vs fit-half size {fit_idx.size}"
        )
    scores = {}
    for k in viable:
        model = train_knn(X[fit_idx], y[fit_idx], k)
        pred, _ = classify_knn(model, X[eval_idx])
        scores[k] = float(np.mean(pred == y[eval_idx]))
    return _select_best_k(scores)
