import numpy as np
import pytest
from scipy.sparse.csgraph import minimum_spanning_tree

from opfbovw.core import DataError, pairwise_distances
from opfbovw.supervised import (
    CplModel,
    KnnModel,
    _select_best_k,
    classify_cpl,
    classify_knn,
    mst_prototypes,
    train_cpl,
    train_knn,
    tune_k,
)


def minimax_closure(D):
    """Widest-path closure: smallest possible maximum arc between pairs."""
    M = D.copy()
    for m in range(M.shape[0]):
        np.minimum(M, np.maximum(M[:, m : m + 1], M[m : m + 1, :]), out=M)
    return M


def boundary_prototypes_via_kruskal(X, y):
    """Independent prototype oracle built on scipy's spanning tree."""
    D = pairwise_distances(X)
    tree = minimum_spanning_tree(D).tocoo()
    protos = set()
    for u, v in zip(tree.row, tree.col):
        if y[u] != y[v]:
            protos.add(int(u))
            protos.add(int(v))
    return sorted(protos)


def blob_data(rng, n_per_class=12, spread=0.4, centers=((0.0, 0.0), (6.0, 6.0))):
    X = np.vstack([rng.normal(c, spread, size=(n_per_class, 2)) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return X, y


def test_mst_prototypes_hand_fixture():
    X = np.array([[0.0], [1.0], [2.0], [5.0], [6.0]])
    y = np.array([0, 0, 0, 1, 1])
    # The only tree edge joining the classes is (2, 3).
    assert mst_prototypes(X, y).tolist() == [2, 3]


def test_mst_prototypes_match_kruskal_oracle():
    rng = np.random.default_rng(23)
    for _ in range(30):
        X, y = blob_data(rng, n_per_class=int(rng.integers(4, 10)))
        assert mst_prototypes(X, y).tolist() == boundary_prototypes_via_kruskal(X, y)


def test_mst_prototypes_requires_two_classes():
    with pytest.raises(DataError):
        mst_prototypes(np.zeros((4, 2)), np.zeros(4, dtype=int))


def test_cpl_costs_match_minimax_closure():
    rng = np.random.default_rng(31)
    for _ in range(40):
        X, y = blob_data(rng, n_per_class=int(rng.integers(3, 12)))
        model = train_cpl(X, y)
        M = minimax_closure(pairwise_distances(X))
        oracle = M[model.prototypes].min(axis=0)
        oracle[model.prototypes] = 0.0
        assert np.array_equal(model.cost, oracle)


def test_cpl_zero_training_error():
    rng = np.random.default_rng(37)
    for trial in range(25):
        n = int(rng.integers(6, 40))
        X = rng.uniform(-1, 1, size=(n, int(rng.integers(1, 4))))
        if trial % 2:
            y = (X[:, 0] > 0).astype(np.int64)  # structured labels
        else:
            y = rng.integers(0, 2, size=n)      # arbitrary labels
        if np.unique(y).size < 2:
            continue
        model = train_cpl(X, y)
        pred, scores = classify_cpl(model, X)
        assert np.array_equal(pred, y)
        assert np.array_equal(pred, model.labels)
        # A training sample is its own best candidate.
        assert np.array_equal(scores, model.cost)


def test_cpl_classify_tie_prefers_cheaper_candidate():
    model = CplModel(
        nodes=np.array([[0.0], [2.0]]),
        true_labels=np.array([0, 1]),
        labels=np.array([0, 1]),
        cost=np.array([0.0, 0.0]),
        order=np.array([0, 1]),
        prototypes=np.array([0, 1]),
    )
    pred, score = classify_cpl(model, np.array([[1.0]]))
    # Both candidates score max(0, 1) = 1; the earlier sorted node wins.
    assert pred.tolist() == [0]
    assert score.tolist() == [1.0]


def test_cpl_rejects_bad_inputs():
    X = np.zeros((4, 2))
    y = np.array([0, 0, 1, 1])
    with pytest.raises(DataError):
        train_cpl(X[:1], y[:1])
    with pytest.raises(DataError):
        train_cpl(X, y[:3])
    model = train_cpl(np.array([[0.0], [1.0], [5.0], [6.0]]), y)
    with pytest.raises(DataError):
        classify_cpl(model, np.zeros((2, 3)))


def test_knn_training_propagates_true_labels_on_blobs():
    rng = np.random.default_rng(41)
    X, y = blob_data(rng)
    model = train_knn(X, y, k=3)
    assert np.array_equal(model.labels, y)
    for p in model.prototypes:
        assert model.labels[p] == y[p]


def test_knn_holdout_accuracy_on_separated_blobs():
    hits = 0
    total = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        X, y = blob_data(rng, n_per_class=15)
        test_rng = np.random.default_rng(200 + seed)
        Xt = np.vstack(
            [test_rng.normal((0.0, 0.0), 0.4, size=(5, 2)), test_rng.normal((6.0, 6.0), 0.4, size=(5, 2))]
        )
        yt = np.repeat([0, 1], 5)
        model = train_knn(X, y, k=4)
        pred, _ = classify_knn(model, Xt)
        hits += int(np.sum(pred == yt))
        total += yt.size
    assert hits / total >= 0.95


def test_knn_classify_tie_prefers_lower_node_index():
    model = KnnModel(
        nodes=np.array([[0.0], [2.0]]),
        true_labels=np.array([0, 1]),
        labels=np.array([0, 1]),
        cost=np.array([0.5, 0.5]),
        density=np.array([0.5, 0.5]),
        k=2,
        bandwidth=1.0,
        degenerate=False,
        prototypes=np.array([0, 1]),
    )
    pred, _ = classify_knn(model, np.array([[1.0]]))
    assert pred.tolist() == [0]


def test_knn_classify_scores_are_capped_offers():
    rng = np.random.default_rng(43)
    X, y = blob_data(rng, n_per_class=8)
    model = train_knn(X, y, k=3)
    _, scores = classify_knn(model, X[:5])
    assert np.all(scores <= model.cost.max() + 1e-12)


def test_select_best_k_breaks_ties_downward():
    assert _select_best_k({1: 0.6, 2: 0.8, 3: 0.8}) == 2
    assert _select_best_k({4: 0.2, 2: 0.9, 6: 0.9}) == 2


def test_tune_k_on_blobs_returns_viable_k():
    rng = np.random.default_rng(47)
    X, y = blob_data(rng, n_per_class=14)
    k = tune_k(X, y, range(1, 8), seed=3)
    assert 1 <= k < 14


def test_tune_k_errors_when_no_candidate_fits():
    X = np.array([[0.0], [1.0], [5.0], [6.0]])
    y = np.array([0, 0, 1, 1])
    with pytest.raises(DataError):
        tune_k(X, y, [10, 20], seed=0)


def test_train_knn_deterministic():
    rng = np.random.default_rng(53)
    X, y = blob_data(rng)
    m1 = train_knn(X, y, 3)
    m2 = train_knn(X, y, 3)
    assert np.array_equal(m1.cost, m2.cost)
    assert np.array_equal(m1.labels, m2.labels)
