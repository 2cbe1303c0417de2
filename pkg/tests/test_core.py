import numpy as np
import pytest

from opfbovw.core import (
    DataError,
    Dataset,
    ImageRecord,
    RegionMask,
    as_descriptor_matrix,
    distance,
    pairwise_distances,
    validate_dataset,
)


def test_distance_euclidean():
    assert distance([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)
    assert distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_distance_shape_mismatch():
    with pytest.raises(DataError):
        distance([1.0, 2.0], [1.0, 2.0, 3.0])


def test_pairwise_matches_scalar_distance():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(6, 3))
    D = pairwise_distances(X)
    for i in range(6):
        for j in range(6):
            assert D[i, j] == pytest.approx(distance(X[i], X[j]), abs=1e-12)
            assert D[i, j] == D[j, i]


def test_as_descriptor_matrix_shapes():
    m = as_descriptor_matrix([[1, 2], [3, 4]])
    assert m.shape == (2, 2) and m.dtype == np.float64
    assert as_descriptor_matrix([1.0, 2.0, 3.0]).shape == (1, 3)
    assert as_descriptor_matrix([], dim=5).shape == (0, 5)
    with pytest.raises(DataError):
        as_descriptor_matrix([])
    with pytest.raises(DataError):
        as_descriptor_matrix([[1.0, 2.0]], dim=3)


def _record(image_id, label, desc):
    return ImageRecord(image_id=image_id, label=label, descriptors=np.asarray(desc, dtype=np.float64))


def test_validate_clean_dataset():
    ds = Dataset(
        records=[_record("a", "pos", [[1.0, 2.0]]), _record("b", "neg", [[3.0, 4.0]])],
        dim=2,
        label_set=["pos", "neg"],
    )
    assert validate_dataset(ds, supervised=True) == []


def test_validate_flags_problems():
    ds = Dataset(
        records=[
            _record("a", "pos", [[1.0, 2.0]]),
            _record("a", None, [[1.0, 2.0, 3.0]]),
            _record("c", "mystery", np.empty((0, 2))),
            _record("d", "neg", [[np.nan, 1.0]]),
        ],
        dim=2,
        label_set=["pos", "neg"],
    )
    rules = {v.rule for v in validate_dataset(ds, supervised=True)}
    assert {"duplicate-id", "dim", "empty", "non-finite", "label"} <= rules


def test_region_mask_contains_and_intersect():
    bitmap = np.zeros((2, 3), dtype=bool)
    bitmap[0, 1] = True
    bitmap[1, 2] = True
    mask = RegionMask(width=3, height=2, bitmap=bitmap)
    assert mask.contains(1.7, 0.2)       # floors to pixel (1, 0)
    assert not mask.contains(0.0, 0.0)
    with pytest.raises(DataError):
        mask.contains(3.0, 0.0)          # x == width is out of bounds

    other = RegionMask(width=3, height=2, bitmap=np.ones((2, 3), dtype=bool))
    both = mask.intersect(other)
    assert np.array_equal(both.bitmap, mask.bitmap)
    with pytest.raises(DataError):
        mask.intersect(RegionMask(width=2, height=2, bitmap=np.ones((2, 2), dtype=bool)))


def test_region_mask_shape_checked():
    with pytest.raises(DataError):
        RegionMask(width=3, height=2, bitmap=np.ones((3, 2), dtype=bool))
