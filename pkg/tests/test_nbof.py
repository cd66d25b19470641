import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnbof.errors import ShapeError
from attnbof.nbof import (Codebook, W_RAW_UNIT, aggregate, init_codebook,
                          quantize, quantize_op, quantize_raw)
from attnbof.numerics import grad_check

from .oracles import loop_mean_cols, loop_quantize


def unit_weights(v):
    return np.full_like(np.asarray(v, dtype=float), W_RAW_UNIT)


def test_softplus_unit_constant():
    assert np.isclose(np.logaddexp(0.0, W_RAW_UNIT), 1.0, atol=1e-15)


def test_single_codeword_gives_all_ones():
    cb = Codebook(v=np.array([[0.3, -0.7]]), w_raw=unit_weights(np.zeros((1, 2))))
    phi = quantize(np.random.default_rng(0).standard_normal((2, 6)), cb)
    assert np.array_equal(phi, np.ones((1, 6)))


def test_symmetric_distances_split_evenly():
    cb = Codebook(v=np.array([[-1.0], [1.0]]), w_raw=unit_weights(np.zeros((2, 1))))
    phi = quantize(np.zeros((1, 3)), cb)
    assert np.allclose(phi, 0.5, rtol=0, atol=1e-15)


def test_hand_value_one_dimensional():
    # distances 0 and 1 -> memberships 1/(1+e^-1) and e^-1/(1+e^-1)
    cb = Codebook(v=np.array([[0.0], [1.0]]), w_raw=unit_weights(np.zeros((2, 1))))
    phi = quantize(np.zeros((1, 1)), cb)
    assert np.allclose(phi[:, 0], [0.7310585786300049, 0.2689414213699951], atol=1e-6)


def test_quantize_matches_loop_oracle():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((3, 7))
    v = rng.standard_normal((5, 3))
    w_raw = rng.standard_normal((5, 3))
    w = np.logaddexp(0.0, w_raw)
    assert np.allclose(quantize_raw(x, v, w_raw), loop_quantize(x, v, w),
                       rtol=0, atol=1e-12)


def test_quantize_dimension_mismatch():
    cb = Codebook(v=np.zeros((2, 3)), w_raw=np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        quantize(np.zeros((4, 5)), cb)


def test_quantize_survives_distant_columns():
    # all distances huge: stabilization must keep columns on the simplex
    cb = Codebook(v=np.full((3, 2), 500.0), w_raw=unit_weights(np.zeros((3, 2))))
    phi = quantize(np.full((2, 4), -500.0), cb)
    assert np.all(np.isfinite(phi))
    assert np.allclose(phi.sum(axis=0), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.integers(1, 5),
       st.integers(1, 9))
def test_columns_live_on_the_simplex(seed, k, d, n):
    rng = np.random.default_rng(seed)
    phi = quantize_raw(rng.standard_normal((d, n)) * 3.0,
                       rng.standard_normal((k, d)),
                       rng.standard_normal((k, d)))
    assert np.all(phi >= 0.0)
    assert np.allclose(phi.sum(axis=0), 1.0, rtol=0, atol=1e-9)


def test_timestamp_permutation_equivariance_exact():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((4, 9))
    cb = Codebook(v=rng.standard_normal((6, 4)), w_raw=rng.standard_normal((6, 4)))
    perm = rng.permutation(9)
    assert np.array_equal(quantize(x[:, perm], cb), quantize(x, cb)[:, perm])


def test_plain_pipeline_is_order_blind():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((3, 12))
    cb = Codebook(v=rng.standard_normal((5, 3)), w_raw=rng.standard_normal((5, 3)))
    perm = rng.permutation(12)
    a = aggregate(quantize(x, cb))
    b = aggregate(quantize(x[:, perm], cb))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_quantize_gradients():
    rng = np.random.default_rng(15)
    for _ in range(5):
        point = quantize_op.sample_inputs(rng)
        report = grad_check(quantize_op, point)
        assert report.finite and report.max_rel_err <= 1e-4


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_constant_columns():
    col = np.array([0.2, 0.5, 0.3])
    phi = np.tile(col[:, None], 7)
    assert np.allclose(aggregate(phi), col, atol=1e-15)


def test_aggregate_hand_value():
    assert np.array_equal(aggregate(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])


def test_aggregate_matches_loop_oracle():
    rng = np.random.default_rng(16)
    raw = rng.random((6, 11))
    phi = raw / raw.sum(axis=0, keepdims=True)
    assert np.allclose(aggregate(phi), loop_mean_cols(phi), rtol=0, atol=1e-12)


def test_aggregate_rejects_empty_sequence():
    with pytest.raises(ShapeError, match="N=0"):
        aggregate(np.zeros((3, 0)))


# ---------------------------------------------------------------------------
# codebook initialization


def test_init_codebook_with_full_pool_is_permutation():
    rng = np.random.default_rng(17)
    pool = rng.standard_normal((3, 5))
    cb = init_codebook([pool], size=5, seed=123)
    got = sorted(map(tuple, cb.v))
    want = sorted(map(tuple, pool.T))
    assert got == want
    assert np.array_equal(cb.w_raw, np.full((5, 3), W_RAW_UNIT))


def test_init_codebook_deterministic():
    rng = np.random.default_rng(18)
    samples = [rng.standard_normal((4, 6)) for _ in range(3)]
    a = init_codebook(samples, size=8, seed=5)
    b = init_codebook(samples, size=8, seed=5)
    assert np.array_equal(a.v, b.v)
    c = init_codebook(samples, size=8, seed=6)
    assert not np.array_equal(a.v, c.v)


def test_init_codebook_insufficient_pool():
    with pytest.raises(ValueError, match="pooled"):
        init_codebook([np.zeros((2, 3))], size=4, seed=0)


def test_init_codebook_at_reference_scale():
    rng = np.random.default_rng(19)
    cb = init_codebook([rng.standard_normal((8, 300))], size=256, seed=0)
    assert cb.v.shape == (256, 8)
    assert np.all(cb.w > 0.0)
