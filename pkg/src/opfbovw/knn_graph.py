"""k-nearest-neighbour graphs and Gaussian kernel density estimation.

The clustering and the adjacency based classifier both operate on the
same structure: each sample keeps arcs to its k nearest neighbours, a
kernel bandwidth is derived from the largest stored arc, and a density
score is computed per sample from its own arcs.  Samples on density
plateaus receive extra reverse arcs so that a plateau behaves as one
connected region during label competition.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import DataError, pairwise_distances

__all__ = [
    "KnnGraph",
    "build_knn_graph",
    "compute_densities",
    "kernel_density",
    "symmetrize_plateaus",
    "PLATEAU_TOL",
]

# Two densities closer than this are treated as equal when deciding
# whether a plateau needs a reverse arc.
PLATEAU_TOL = 1e-12


@dataclass
class KnnGraph:
    """Nearest-neighbour adjacency with kernel metadata.

    ``neighbors`` and ``weights`` are (n, k) arrays: row i lists the k
    nearest samples of i in ascending distance order and the matching
    arc lengths.  ``extra_neighbors``/``extra_weights`` hold reverse
    arcs added for density plateaus; they take part in competition but
    never in density estimation.  ``bandwidth`` is the kernel width
    actually used: one third of ``max_weight``, or 1.0 when every
    stored arc has length zero (``degenerate`` is then set).
    """

    k: int
    neighbors: np.ndarray
    weights: np.ndarray
    max_weight: float
    bandwidth: float
    degenerate: bool = False
    density: np.ndarray | None = None
    extra_neighbors: list = field(default_factory=list)
    extra_weights: list = field(default_factory=list)

    @property
    def n(self):
        return self.neighbors.shape[0]

    def arcs(self, i):
        """Iterate over all outgoing arcs of node i as (target, weight)."""
        for j, w in zip(self.neighbors[i], self.weights[i]):
            yield int(j), float(w)
        if self.extra_neighbors:
            for j, w in zip(self.extra_neighbors[i], self.extra_weights[i]):
                yield int(j), float(w)

    def has_arc(self, i, j):
        if j in self.neighbors[i]:
            return True
        return bool(self.extra_neighbors) and j in self.extra_neighbors[i]


def build_knn_graph(samples, k):
    """Build the k-nearest-neighbour graph of a sample matrix.

    Neighbours are ranked by Euclidean distance; equal distances are
    broken towards the smaller sample index so that graph construction
    is deterministic.  Requires ``1 <= k < n``.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"samples must form a 2-d array, got shape {X.shape}")
    n = X.shape[0]
    if not 1 <= k < n:
        raise DataError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")

    dist = pairwise_distances(X)
    np.fill_diagonal(dist, np.inf)
    # Stable argsort keeps equal distances in index order.
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    weights = np.take_along_axis(dist, order, axis=1)

    max_weight = float(weights.max())
    degenerate = max_weight == 0.0
    bandwidth = 1.0 if degenerate else max_weight / 3.0
    return KnnGraph(
        k=k,
        neighbors=order.astype(np.int64),
        weights=weights,
        max_weight=max_weight,
        bandwidth=bandwidth,
        degenerate=degenerate,
    )


def kernel_density(arc_weights, bandwidth, k):
    """Gaussian kernel estimate from a row of stored arc lengths.

    The kernel is exp(-d / (2 * bandwidth^2)) on the raw distance, not
    its square, averaged over the k arcs and scaled by the usual
    1/sqrt(2 pi)/bandwidth normalisation.
    """
    coef = 1.0 / (np.sqrt(2.0 * np.pi) * bandwidth * k)
    return coef * np.sum(np.exp(-np.asarray(arc_weights, dtype=np.float64) / (2.0 * bandwidth ** 2)), axis=-1)


def compute_densities(graph):
    """Fill in per-node densities and symmetrise plateau arcs.

    The density of node i depends only on the arcs stored for i.  Once
    densities are known, any one-directional arc between two nodes of
    equal density gains its reverse twin so that competition can flow
    both ways across the plateau.  Returns the density array and stores
    it on the graph.
    """
    graph.density = kernel_density(graph.weights, graph.bandwidth, graph.k)
    symmetrize_plateaus(graph)
    return graph.density


def symmetrize_plateaus(graph):
    """Add reverse arcs between equal-density neighbours.

    Extra arcs take part in competition only; densities are already
    fixed when this runs.
    """
    rho = graph.density
    if rho is None:
        raise DataError("graph has no densities; compute or inject them first")
    n = graph.n
    extra_n = [[] for _ in range(n)]
    extra_w = [[] for _ in range(n)]
    base_sets = [set(row.tolist()) for row in graph.neighbors]
    for i in range(n):
        for j, w in zip(graph.neighbors[i], graph.weights[i]):
            j = int(j)
            if abs(rho[i] - rho[j]) <= PLATEAU_TOL and i not in base_sets[j] and i not in extra_n[j]:
                extra_n[j].append(i)
                extra_w[j].append(float(w))
    graph.extra_neighbors = extra_n
    graph.extra_weights = extra_w
