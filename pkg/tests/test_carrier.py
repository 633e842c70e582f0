import numpy as np
import pytest

from edgemark import autodiff as ad
from edgemark.autodiff import grad_check
from edgemark.carrier import (edge_gap, edge_gap_values, extract_bits,
                              feature_cosines, standardize_logits,
                              standardize_predictions)
from edgemark.errors import DimensionError, NumericError
from edgemark.graphs import Graph, _mirror, generate_sbm
from edgemark.models import GnnModel, TrainConfig, default_arch, train_primary


def softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def path3():
    pairs = np.array([[0, 1], [1, 2]], dtype=np.int64)
    x = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    return Graph(x, _mirror(pairs), None, "p3")


# ---------------------------------------------------------------------------
# prediction transform


def test_transform_equals_standardized_logits():
    rng = np.random.default_rng(0)
    for _ in range(25):
        z = rng.uniform(-10, 10, size=(12, 5))
        probs = softmax_rows(z)
        got = standardize_predictions(ad.constant(probs)).data
        want = standardize_logits(z)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_transform_rows_have_zero_mean_unit_std():
    rng = np.random.default_rng(1)
    probs = softmax_rows(rng.uniform(-5, 5, size=(20, 7)))
    t = standardize_predictions(ad.constant(probs)).data
    np.testing.assert_allclose(t.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(t.std(axis=1, ddof=1), 1.0, atol=1e-9)


def test_transform_two_class_hand_case():
    probs = np.array([[0.9, 0.1]])
    logs = np.log(probs)
    mu = logs.mean()
    sd = logs.std(ddof=1)
    want = (logs - mu) / sd
    got = standardize_predictions(ad.constant(probs)).data
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_transform_constant_row_is_numeric_error():
    with pytest.raises(NumericError, match="node 1"):
        standardize_predictions(ad.constant([[0.9, 0.1], [0.5, 0.5]]))


def test_transform_clamps_zero_probabilities():
    out = standardize_predictions(ad.constant([[1.0, 0.0]])).data
    assert np.all(np.isfinite(out))


# ---------------------------------------------------------------------------
# per-edge gap values


def test_identical_endpoints_give_zero_gap():
    pairs = np.array([[0, 1]], dtype=np.int64)
    x = np.array([[1.0, 2.0], [1.0, 2.0]])
    g = Graph(x, _mirror(pairs), None, "same")
    probs = np.array([[0.7, 0.3], [0.7, 0.3]])
    vals = edge_gap(probs, g).data.ravel()
    np.testing.assert_allclose(vals, [0.0], atol=1e-12)


def test_three_node_hand_oracle():
    g = path3()
    probs = np.array([[0.8, 0.2], [0.55, 0.45], [0.1, 0.9]])
    t = standardize_logits(np.log(probs))
    expected = [cos(t[0], t[1]) - cos(g.x[0], g.x[1]),
                cos(t[1], t[2]) - cos(g.x[1], g.x[2])]
    got = edge_gap(probs, g).data.ravel()
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_gap_values_bounded():
    rng = np.random.default_rng(3)
    g = generate_sbm(60, 3, 0.15, 0.02, 6, 1.0, seed=4)
    probs = softmax_rows(rng.standard_normal((60, 3)))
    vals = edge_gap(probs, g).data
    assert np.all(vals >= -2.0) and np.all(vals <= 2.0)


def test_gap_invariant_to_node_relabeling():
    g = generate_sbm(30, 2, 0.2, 0.05, 4, 1.0, seed=5)
    rng = np.random.default_rng(6)
    probs = softmax_rows(rng.standard_normal((30, 2)))
    vals = edge_gap(probs, g).data.ravel()
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    pg = Graph(g.x[perm], inv[g.edges], None, "perm")
    pvals = edge_gap(probs[perm], pg).data.ravel()
    # map each original canonical edge to its relabeled counterpart
    lookup = {(min(u, v), max(u, v)): i
              for i, (u, v) in enumerate(pg.canonical_edges())}
    for val, (u, v) in zip(vals, g.canonical_edges()):
        pu, pv = int(inv[u]), int(inv[v])
        assert abs(pvals[lookup[(min(pu, pv), max(pu, pv))]] - val) < 1e-12


def test_row_count_mismatch_rejected():
    g = path3()
    with pytest.raises(DimensionError):
        edge_gap(np.ones((5, 2)) / 2.0, g)


def test_zero_norm_feature_row_is_numeric_error():
    pairs = np.array([[0, 1]], dtype=np.int64)
    g = Graph(np.array([[0.0, 0.0], [1.0, 1.0]]), _mirror(pairs), None, "z")
    with pytest.raises(NumericError, match="feature"):
        feature_cosines(g.x, g)


def test_pre_embedding_agreement_is_near_half():
    g = generate_sbm(150, 3, 0.08, 0.01, 8, 3.0, seed=7)
    model = train_primary(g, default_arch(8, 3, hidden=8, depth=2),
                          TrainConfig(learning_rate=1e-2, epochs=60, seed=0))
    vals = edge_gap_values(model, g)
    rng = np.random.default_rng(8)
    m = vals.size
    sims = []
    for _ in range(300):
        key = rng.choice(m, size=32, replace=False)
        bits = rng.integers(0, 2, size=32)
        sims.append(np.mean(extract_bits(vals, key) == bits))
    assert 0.45 < np.mean(sims) < 0.55


# ---------------------------------------------------------------------------
# sign binarization


def test_extract_bits_basic():
    np.testing.assert_array_equal(extract_bits([-0.3, 0.2], [0, 1]), [0, 1])


def test_extract_bits_zero_is_one():
    np.testing.assert_array_equal(extract_bits([0.0], [0]), [1])


def test_extract_bits_negation_complements():
    rng = np.random.default_rng(9)
    vals = rng.standard_normal(50)
    vals[np.abs(vals) < 1e-6] = 0.5  # keep away from the tie convention
    key = np.arange(50)
    a = extract_bits(vals, key)
    b = extract_bits(-vals, key)
    np.testing.assert_array_equal(a, 1 - b)


def test_extract_bits_index_out_of_range():
    with pytest.raises(DimensionError):
        extract_bits([0.1, -0.1], [0, 7])


# ---------------------------------------------------------------------------
# differentiability through the carrier


def test_weighted_gap_sum_gradients():
    g = path3()
    rng = np.random.default_rng(10)
    weights = rng.standard_normal((2, 1))

    def build(params):
        probs = ad.row_softmax(params[0])
        vals = edge_gap(probs, g)
        return ad.sum_all(ad.mul(vals, ad.constant(weights)))

    err = grad_check(build, [rng.standard_normal((3, 2))])
    assert err <= 1e-4


def test_gap_gradient_flows_into_features():
    g = path3()
    rng = np.random.default_rng(11)
    probs = softmax_rows(rng.standard_normal((3, 2)))

    def build(params):
        vals = edge_gap(ad.constant(probs), g, features=params[0])
        return ad.sum_all(ad.mul(vals, vals))

    err = grad_check(build, [g.x.copy()])
    assert err <= 1e-4
