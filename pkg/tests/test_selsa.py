import math

import numpy as np
import pytest

from vitcut.selsa import AggregationBatch, selsa_affinity, selsa_aggregate, softmax_weights


def batch(key, support, temperature=1.0):
    return AggregationBatch(
        key=np.asarray(key, dtype=np.float64),
        support=np.asarray(support, dtype=np.float64),
        temperature=temperature,
    )


def loop_affinity(b):
    k, s = b.key, b.support
    out = np.zeros((k.shape[0], s.shape[0]))
    for i in range(k.shape[0]):
        for j in range(s.shape[0]):
            nk = math.sqrt(float((k[i] ** 2).sum()))
            ns = math.sqrt(float((s[j] ** 2).sum()))
            if nk == 0.0 or ns == 0.0:
                continue
            out[i, j] = float(k[i] @ s[j]) / (nk * ns * b.temperature)
    return out


def loop_aggregate(b):
    aff = loop_affinity(b)
    out = np.zeros((b.key.shape[0], b.key.shape[1]))
    for i in range(aff.shape[0]):
        e = np.exp(aff[i] - aff[i].max())
        w = e / e.sum()
        for j in range(b.support.shape[0]):
            out[i] += w[j] * b.support[j]
    return out


def test_affinity_same_vector():
    v = [[3.0, 4.0]]
    assert selsa_affinity(batch(v, v))[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert selsa_affinity(batch(v, v, temperature=2.0))[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_affinity_orthogonal_pair():
    assert selsa_affinity(batch([[1.0, 0.0]], [[0.0, 5.0]]))[0, 0] == 0.0


def test_affinity_matches_loop_oracle():
    rng = np.random.default_rng(1)
    b = batch(rng.standard_normal((3, 6)), rng.standard_normal((4, 6)), temperature=0.7)
    assert np.allclose(selsa_affinity(b), loop_affinity(b), atol=1e-12)


def test_affinity_zero_norm_row():
    b = batch([[0.0, 0.0]], [[1.0, 2.0]])
    assert selsa_affinity(b)[0, 0] == 0.0


def test_aggregate_identical_supports_exact():
    v = np.array([2.5, -1.25, 0.75])
    b = batch(v[None, :], np.tile(v, (4, 1)))
    out = selsa_aggregate(b)
    assert np.array_equal(out[0], v)


def test_aggregate_equal_affinities_midpoint():
    b = batch([[1.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
    out = selsa_aggregate(b)
    assert np.array_equal(out[0], np.array([0.5, 0.5]))


def test_aggregate_matches_loop_oracle():
    rng = np.random.default_rng(2)
    b = batch(rng.standard_normal((2, 8)), rng.standard_normal((5, 8)))
    assert np.allclose(selsa_aggregate(b), loop_aggregate(b), atol=1e-10)


def test_aggregate_convex_bounds():
    rng = np.random.default_rng(3)
    for _ in range(20):
        b = batch(rng.standard_normal((3, 5)), rng.standard_normal((6, 5)), temperature=0.5)
        out = selsa_aggregate(b)
        lo = b.support.min(axis=0) - 1e-12
        hi = b.support.max(axis=0) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(4)
    b = batch(rng.standard_normal((5, 7)), rng.standard_normal((9, 7)), temperature=0.3)
    w = softmax_weights(b)
    assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-9)
    assert np.all(w >= 0.0)


def test_support_permutation_invariance():
    rng = np.random.default_rng(5)
    key = rng.standard_normal((2, 6))
    support = rng.standard_normal((5, 6))
    base = selsa_aggregate(batch(key, support))
    perm = rng.permutation(5)
    out = selsa_aggregate(batch(key, support[perm]))
    assert np.allclose(out, base, atol=1e-12)


def test_support_scaling():
    rng = np.random.default_rng(6)
    key = rng.standard_normal((2, 6))
    support = rng.standard_normal((4, 6))
    base_aff = selsa_affinity(batch(key, support))
    base_out = selsa_aggregate(batch(key, support))
    c = 3.5
    scaled_aff = selsa_affinity(batch(key, c * support))
    scaled_out = selsa_aggregate(batch(key, c * support))
    assert np.allclose(scaled_aff, base_aff, atol=1e-12)
    assert np.allclose(scaled_out, c * base_out, rtol=1e-12, atol=1e-12)


def test_batch_validation():
    with pytest.raises(ValueError):
        batch([[1.0, 2.0]], [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        batch(np.zeros((0, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        batch([[1.0]], [[1.0]], temperature=0.0)
    with pytest.raises(ValueError):
        batch([[np.inf]], [[1.0]])
    with pytest.raises(ValueError):
        AggregationBatch(key=np.zeros(3), support=np.zeros((1, 3)))
