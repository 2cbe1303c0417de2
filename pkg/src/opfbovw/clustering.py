"""Density-based clustering by optimum-path competition on a kNN graph.

Each sample starts with a cost just below its own density.  Samples are
processed from a max-priority queue; a sample popped while still
unclaimed becomes a prototype (a cluster root) and recovers its full
density as cost.  Conquered samples adopt the label of the neighbour
whose offer they accepted, where an offer along arc (i, j) is
min(cost(i), density(j)).  The forest that remains connects every
sample to exactly one prototype through a path of maximal minimum
density.
"""

import heapq
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .core import DataError
from .knn_graph import build_knn_graph, compute_densities

__all__ = [
    "Forest",
    "ClusterRun",
    "min_density_gap",
    "cluster",
    "normalized_cut",
    "sweep_cluster_runs",
    "best_k",
    "CUT_EPSILON",
]

# Added to arc weights before inverting them into similarities, so that
# zero-length arcs stay finite.
CUT_EPSILON = 1e-12


@dataclass
class Forest:
    """Result of one competition: per-node cost, parent, root and label.

    ``parent`` is -1 for prototypes.  ``label`` carries cluster ids in
    election order, or caller-supplied root labels when competition is
    run in supervised mode.  ``prototypes`` lists roots in the order
    they were elected.
    """

    cost: np.ndarray
    parent: np.ndarray
    root: np.ndarray
    label: np.ndarray
    prototypes: list

    @property
    def n_clusters(self):
        return len(self.prototypes)


@dataclass
class ClusterRun:
    """One clustering at a fixed neighbourhood size, plus its cut score."""

    k: int
    forest: Forest
    cut: float

    @property
    def n_clusters(self):
        return self.forest.n_clusters


def min_density_gap(graph):
    """Handicap subtracted from every density before competition.

    The gap is the smallest non-zero density difference across any
    stored arc.  It guarantees that no sample can conquer a denser
    neighbour while keeping prototypes at a strict local advantage.
    When every adjacent pair has equal density there is no meaningful
    gap; zero is returned together with a degenerate flag.
    """
    rho = graph.density
    if rho is None:
        raise DataError("graph has no densities; run compute_densities first")
    best = np.inf
    for i in range(graph.n):
        diffs = np.abs(rho[i] - rho[graph.neighbors[i]])
        diffs = diffs[diffs > 0]
        if diffs.size:
            best = min(best, float(diffs.min()))
    if not np.isfinite(best):
        return 0.0, True
    return best, False


def cluster(graph, gap=None, root_labels=None, trace=None):
    """Run label competition over a graph with densities.

    ``gap`` defaults to :func:`min_density_gap`.  ``root_labels`` maps
    each node to the label it would propagate if elected prototype;
    without it, prototypes receive consecutive cluster ids.  ``trace``,
    when given, is a list that receives ('prototype', node, cost) and
    ('offer', source, target, value, accepted) tuples in event order.

    An offer is accepted when it strictly exceeds the target's current
    cost, or equals it while the target is still unclaimed.  Ties in
    the queue are broken towards the smaller node index.
    """
    rho = graph.density
    if rho is None:
        raise DataError("graph has no densities; run compute_densities first")
    if gap is None:
        gap, _ = min_density_gap(graph)

    n = graph.n
    cost = rho - gap
    parent = np.full(n, -1, dtype=np.int64)
    root = np.arange(n, dtype=np.int64)
    label = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    prototypes = []

    heap = [(-cost[i], i) for i in range(n)]
    heapq.heapify(heap)
    while heap:
        neg, i = heapq.heappop(heap)
        if done[i] or -neg != cost[i]:
            continue
        done[i] = True
        if parent[i] < 0:
            cost[i] = rho[i]
            label[i] = root_labels[i] if root_labels is not None else len(prototypes)
            prototypes.append(i)
            if trace is not None:
                trace.append(("prototype", i, float(cost[i])))
        for j, _w in graph.arcs(i):
            if done[j]:
                continue
            offer = min(cost[i], rho[j])
            accepted = bool(offer > cost[j] or (offer == cost[j] and parent[j] < 0))
            if trace is not None:
                trace.append(("offer", i, j, float(offer), accepted))
            if accepted:
                cost[j] = offer
                parent[j] = i
                root[j] = root[i]
                label[j] = label[i]
                heapq.heappush(heap, (-offer, j))

    return Forest(cost=cost, parent=parent, root=root, label=label, prototypes=prototypes)


def normalized_cut(graph, labels):
    """Normalised cut of a graph partition.

    Arcs are reduced to unordered pairs first, so a pair connected in
    both directions counts once.  Each pair contributes the similarity
    1/(weight + epsilon) either to the internal mass of its cluster or
    to the boundary mass of both clusters it straddles.  The cut is the
    sum over clusters of boundary over (internal + boundary).
    """
    labels = np.asarray(labels)
    pair_weight = {}
    for i in range(graph.n):
        for j, w in graph.arcs(i):
            key = (i, j) if i < j else (j, i)
            if key not in pair_weight:
                pair_weight[key] = w
    internal = defaultdict(float)
    boundary = defaultdict(float)
    for (i, j), w in pair_weight.items():
        sim = 1.0 / (w + CUT_EPSILON)
        if labels[i] == labels[j]:
            internal[labels[i]] += sim
        else:
            boundary[labels[i]] += sim
            boundary[labels[j]] += sim
    total = 0.0
    for c in set(labels.tolist()):
        denom = internal[c] + boundary[c]
        if denom > 0:
            total += boundary[c] / denom
    return total


def _run_one_k(samples, k):
    graph = build_knn_graph(samples, k)
    compute_densities(graph)
    forest = cluster(graph)
    return ClusterRun(k=k, forest=forest, cut=normalized_cut(graph, forest.label))


def sweep_cluster_runs(samples, k_max, stride=1, n_jobs=1):
    """Cluster at every neighbourhood size in 1..k_max (stepped by stride).

    ``k_max`` is clamped to n - 1 with a warning when it is too large
    for the sample count.  Returns the runs in ascending k order.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 samples to cluster, got {n}")
    if k_max < 1:
        raise DataError(f"k_max must be positive, got {k_max}")
    if stride < 1:
        raise DataError(f"stride must be positive, got {stride}")
    if k_max > n - 1:
        warnings.warn(f"k_max={k_max} clamped to n-1={n - 1}", stacklevel=2)
        k_max = n - 1
    ks = list(range(1, k_max + 1, stride))
    if n_jobs != 1 and len(ks) > 1:
        runs = Parallel(n_jobs=n_jobs)(delayed(_run_one_k)(samples, k) for k in ks)
    else:
        runs = [_run_one_k(samples, k) for k in ks]
    return runs


def best_k(samples, k_max, stride=1, n_jobs=1):
    """Pick the neighbourhood size whose clustering minimises the cut.

    Ties go to the smaller k.  Returns the winning :class:`ClusterRun`.
    """
    runs = sweep_cluster_runs(samples, k_max, stride=stride, n_jobs=n_jobs)
    return min(runs, key=lambda r: (r.cut, r.k))
