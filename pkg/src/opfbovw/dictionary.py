"""Visual dictionary construction and descriptor quantisation.

A dictionary is a matrix of visual words in descriptor space, plus
enough provenance (builder name and parameters) to reproduce it.  Three
builders are provided: uniform random sampling of pool descriptors,
k-means centroids, and density-cluster prototypes, whose count is
emergent rather than chosen.  Quantisation maps each descriptor of an
image to its nearest word and returns raw occurrence counts.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import DataError, pairwise_distances
from .clustering import sweep_cluster_runs

__all__ = [
    "Dictionary",
    "Histogram",
    "build_random",
    "build_kmeans",
    "build_opf",
    "quantize",
    "lloyd_iterations",
]


@dataclass
class Dictionary:
    """Visual words and the recipe that produced them."""

    words: np.ndarray
    builder: str
    params: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.words.shape[0]

    @property
    def dim(self):
        return self.words.shape[1]


@dataclass
class Histogram:
    """Word occurrence counts for one image (raw, unnormalised)."""

    counts: np.ndarray
    image_id: str = ""

    @property
    def total(self):
        return int(self.counts.sum())


def _check_pool(pool):
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise DataError(f"descriptor pool must be a non-empty 2-d array, got shape {pool.shape}")
    return pool


def build_random(pool, size, seed):
    """Sample ``size`` distinct pool descriptors uniformly at random."""
    pool = _check_pool(pool)
    if not 1 <= size <= pool.shape[0]:
        raise DataError(f"size must be in 1..{pool.shape[0]}, got {size}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(pool.shape[0], size=size, replace=False)
    return Dictionary(
        words=pool[np.sort(picks)].copy(),
        builder="random",
        params={"size": int(size), "seed": int(seed)},
    )


def _kmeans_pp_init(pool, size, rng):
    """Seed centroids by distance-squared weighted sampling."""
    n = pool.shape[0]
    centroids = np.empty((size, pool.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = pool[first]
    closest_sq = np.sum((pool - centroids[0]) ** 2, axis=1)
    for c in range(1, size):
        total = closest_sq.sum()
        if total == 0:
            centroids[c] = pool[int(rng.integers(n))]
            continue
        pick = int(rng.choice(n, p=closest_sq / total))
        centroids[c] = pool[pick]
        np.minimum(closest_sq, np.sum((pool - centroids[c]) ** 2, axis=1), out=closest_sq)
    return centroids


def lloyd_iterations(pool, size, seed, max_iter=300, tol=1e-6):
    """Run Lloyd's algorithm; returns (centroids, objective history).

    The objective is the sum of squared distances to the nearest
    centroid, recorded once per assignment step.  Empty clusters are
    reseeded at the pool point farthest from the vanished centroid,
    which cannot increase the objective.  Iteration stops at
    ``max_iter`` or when the relative centroid shift drops below
    ``tol``.
    """
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(pool, size, rng)
    history = []
    for _ in range(max_iter):
        d = pairwise_distances(pool, centroids)
        assign = np.argmin(d, axis=1)
        history.append(float(np.sum(d[np.arange(pool.shape[0]), assign] ** 2)))
        new = centroids.copy()
        for c in range(size):
            members = assign == c
            if members.any():
                new[c] = pool[members].mean(axis=0)
            else:
                far = int(np.argmax(np.sum((pool - centroids[c]) ** 2, axis=1)))
                new[c] = pool[far]
        shift = np.sqrt(np.sum((new - centroids) ** 2))
        scale = 1.0 + np.sqrt(np.sum(centroids ** 2))
        centroids = new
        if shift / scale < tol:
            break
    return centroids, history


def build_kmeans(pool, size, seed, max_iter=300, tol=1e-6):
    """Cluster the pool with k-means and use the centroids as words."""
    pool = _check_pool(pool)
    if not 1 <= size <= pool.shape[0]:
        raise DataError(f"size must be in 1..{pool.shape[0]}, got {size}")
    centroids, history = lloyd_iterations(pool, size, seed, max_iter=max_iter, tol=tol)
    return Dictionary(
        words=centroids,
        builder="kmeans",
        params={
            "size": int(size),
            "seed": int(seed),
            "max_iter": int(max_iter),
            "tol": float(tol),
            "iterations": len(history),
        },
    )


def build_opf(pool, k_max, target_size=None, stride=1, n_jobs=1):
    """Use density-cluster prototypes as visual words.

    Sweeps neighbourhood sizes 1..k_max and keeps, per candidate cap,
    the run with the lowest normalised cut among sizes up to that cap.
    Without a target the full cap wins and the word count is whatever
    the best clustering produced.  With ``target_size`` the cap whose
    winning run lands closest to the target is chosen (ties prefer the
    smaller word count, then the smaller cap).
    """
    pool = _check_pool(pool)
    runs = sweep_cluster_runs(pool, k_max, stride=stride, n_jobs=n_jobs)

    best = None
    prefix = []  # per swept cap, the best run among k <= cap
    for run in runs:
        if best is None or (run.cut, run.k) < (best.cut, best.k):
            best = run
        prefix.append(best)

    if target_size is None:
        chosen = prefix[-1]
    else:
        chosen = min(prefix, key=lambda r: (abs(r.n_clusters - target_size), r.n_clusters, r.k))

    words = pool[np.array(chosen.forest.prototypes, dtype=np.int64)].copy()
    params = {
        "k_max": int(k_max),
        "stride": int(stride),
        "k": int(chosen.k),
        "size": int(words.shape[0]),
    }
    if target_size is not None:
        params["target_size"] = int(target_size)
    return Dictionary(words=words, builder="opf", params=params)


def quantize(descriptors, dictionary, image_id=""):
    """Count nearest-word occurrences for one image's descriptors.

    Every descriptor votes for exactly one word (ties to the lower word
    index), so the counts always sum to the number of descriptors.
    """
    desc = np.asarray(descriptors, dtype=np.float64)
    if desc.ndim != 2 or desc.shape[0] == 0:
        raise DataError(f"cannot quantise an empty descriptor set (image {image_id!r})")
    if desc.shape[1] != dictionary.dim:
        raise DataError(
            f"descriptor dimension {desc.shape[1]} does not match dictionary dimension {dictionary.dim}"
        )
    nearest = np.argmin(pairwise_distances(desc, dictionary.words), axis=1)
    counts = np.bincount(nearest, minlength=dictionary.size).astype(np.int64)
    return Histogram(counts=counts, image_id=image_id)
