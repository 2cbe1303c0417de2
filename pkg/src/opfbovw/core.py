"""Shared data types, the descriptor metric, and dataset validation."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "DataError",
    "RegionMask",
    "ImageRecord",
    "Dataset",
    "Violation",
    "distance",
    "pairwise_distances",
    "as_descriptor_matrix",
    "validate_dataset",
]


class DataError(ValueError):
    """Raised when input data violates one of the documented contracts."""


def as_descriptor_matrix(values, dim=None):
    """Coerce ``values`` to a float64 matrix of shape (n, dim).

    A descriptor set is always a two dimensional array, one row per
    descriptor.  ``dim`` pins the expected number of columns; when the
    input is empty it is required, since an empty list carries no
    dimensionality of its own.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        if dim is None and (arr.ndim != 2 or arr.shape[1] == 0):
            raise DataError("cannot infer descriptor dimension from empty input")
        width = dim if dim is not None else arr.shape[1]
        return np.empty((0, width), dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DataError(f"descriptors must form a 2-d array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DataError(
            f"descriptor dimension mismatch: expected {dim}, got {arr.shape[1]}"
        )
    return arr


def distance(a, b):
    """Euclidean distance between two descriptor vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def pairwise_distances(X, Y=None):
    """Euclidean distance matrix between the rows of ``X`` and ``Y``.

    With ``Y`` omitted the matrix is ``X`` against itself.  All
    graph-building code funnels through here so that every component
    sees identical floating point values for identical point pairs.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    return cdist(X, Y, metric="euclidean")


@dataclass(frozen=True)
class RegionMask:
    """Boolean image region, True marks pixels inside the region."""

    width: int
    height: int
    bitmap: np.ndarray

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        if bm.shape != (self.height, self.width):
            raise DataError(
                f"mask bitmap shape {bm.shape} does not match "
                f"(height={self.height}, width={self.width})"
            )
        object.__setattr__(self, "bitmap", bm)

    def intersect(self, other):
        if (self.width, self.height) != (other.width, other.height):
            raise DataError("cannot intersect masks of different sizes")
        return RegionMask(self.width, self.height, self.bitmap & other.bitmap)

    def contains(self, x, y):
        """Membership test for a point in pixel coordinates (floored)."""
        col = int(np.floor(x))
        row = int(np.floor(y))
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise DataError(f"point ({x}, {y}) lies outside the {self.width}x{self.height} image")
        return bool(self.bitmap[row, col])


@dataclass
class ImageRecord:
    """One image: identifier, optional label, descriptors, optional mask."""

    image_id: str
    label: str | None
    descriptors: np.ndarray
    mask: RegionMask | None = None


@dataclass
class Dataset:
    """A collection of image records sharing one descriptor dimension."""

    records: list
    dim: int
    label_set: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def labels(self):
        return [r.label for r in self.records]

    def label_to_index(self):
        return {lab: i for i, lab in enumerate(self.label_set)}


@dataclass(frozen=True)
class Violation:
    """One validation failure, tied to the record that caused it."""

    image_id: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.image_id}: [{self.rule}] {self.message}"


def validate_dataset(dataset, supervised=False):
    """Check a dataset against the input contracts.

    Returns a list of violations; an empty list means the dataset is
    usable.  With ``supervised=True`` every record must carry a label
    from the dataset's label set.
    """
    violations = []
    seen_ids = set()
    for rec in dataset.records:
        if rec.image_id in seen_ids:
            violations.append(Violation(rec.image_id, "duplicate-id", "image id appears more than once"))
        seen_ids.add(rec.image_id)

        desc = rec.descriptors
        if desc.ndim != 2:
            violations.append(Violation(rec.image_id, "shape", f"descriptors have ndim {desc.ndim}, expected 2"))
            continue
        if desc.shape[0] == 0:
            violations.append(Violation(rec.image_id, "empty", "image has no descriptors"))
        if desc.shape[1] != dataset.dim:
            violations.append(
                Violation(
                    rec.image_id,
                    "dim",
                    f"descriptor dimension {desc.shape[1]} does not match dataset dimension {dataset.dim}",
                )
            )
        if desc.size and not np.all(np.isfinite(desc)):
            bad = int(np.argwhere(~np.isfinite(desc))[0][0])
            violations.append(Violation(rec.image_id, "non-finite", f"non-finite value in descriptor row {bad}"))

        if supervised:
            if rec.label is None:
                violations.append(Violation(rec.image_id, "label", "record is unlabeled"))
            elif dataset.label_set and rec.label not in dataset.label_set:
                violations.append(
                    Violation(rec.image_id, "label", f"label {rec.label!r} not in declared label set {dataset.label_set}")
                )
    return violations
