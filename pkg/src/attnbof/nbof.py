"""Bag-of-features layer: soft codebook quantization and temporal averaging.

A sequence is a D x N matrix of feature columns.  Quantization maps each
column to a probability vector over K codewords via a Gaussian-style kernel:
the membership of column x_n in codeword k is

    phi[k, n] = exp(-||(x_n - v_k) * w_k||_2) / sum_m exp(-||(x_n - v_m) * w_m||_2)

where v_k is the codeword and w_k a positive per-dimension shape weight.
Averaging the columns of phi yields a fixed-size histogram regardless of N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ShapeError
from .numerics import Array, DiffOp, register, softplus

# softplus(W_RAW_UNIT) == 1, the all-ones initial shape weight
W_RAW_UNIT = float(np.log(np.e - 1.0))


@dataclass
class Codebook:
    """K codewords in D dimensions with unconstrained shape parameters.

    ``w_raw`` is stored unconstrained; the effective weight is
    ``softplus(w_raw)``, which keeps every shape weight strictly positive.
    """

    v: Array       # (K, D) codewords
    w_raw: Array   # (K, D)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.w_raw = np.asarray(self.w_raw, dtype=float)
        if self.v.ndim != 2 or self.v.shape != self.w_raw.shape:
            raise ShapeError(
                f"codebook: v {self.v.shape} and w_raw {self.w_raw.shape} must be "
                "equal 2-d shapes")
        if self.v.shape[0] < 1 or self.v.shape[1] < 1:
            raise ShapeError(f"codebook: need K >= 1 and D >= 1, got {self.v.shape}")

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def dim(self) -> int:
        return self.v.shape[1]

    @property
    def w(self) -> Array:
        return softplus(self.w_raw)


def _weighted_distances(x: Array, v: Array, w: Array) -> tuple[Array, Array, Array]:
    diff = x[None, :, :] - v[:, :, None]          # (K, D, N)
    wd = diff * w[:, :, None]
    dist = np.sqrt((wd * wd).sum(axis=1))         # (K, N)
    return diff, wd, dist


def quantize_raw(x: Array, v: Array, w_raw: Array) -> Array:
    """Per-column softmax memberships over codewords; see module docstring.

    Differentiable in x, v and w_raw.  Columns of the result are points on
    the K-simplex.  The per-column minimum distance is subtracted before
    exponentiation, which is exact (softmax shift invariance) and prevents
    underflow when all distances are large.
    """
    x = numerics.as_matrix(x, "quantize input")
    v = numerics.as_matrix(v, "codewords")
    w_raw = numerics.as_matrix(w_raw, "shape weights")
    if x.shape[0] != v.shape[1] or v.shape != w_raw.shape:
        raise ShapeError(
            f"quantize: input {x.shape}, codewords {v.shape}, weights {w_raw.shape} "
            "do not conform")
    _, _, dist = _weighted_distances(x, v, softplus(w_raw))
    s = dist.min(axis=0, keepdims=True) - dist    # <= 0, max exactly 0
    e = np.exp(s)
    return e / e.sum(axis=0, keepdims=True)


def quantize_vjp(inputs, output, upstream):
    x, v, w_raw = inputs
    phi = output
    w = softplus(w_raw)
    diff, wd, dist = _weighted_distances(x, v, w)
    # softmax over the codeword axis, per column
    ds = phi * (upstream - (upstream * phi).sum(axis=0, keepdims=True))
    ddist = -ds
    safe = np.where(dist > 0.0, dist, 1.0)
    coef = np.where(dist > 0.0, ddist / safe, 0.0)  # zero subgradient at the apex
    dwd = coef[:, None, :] * wd                     # (K, D, N)
    ddiff = dwd * w[:, :, None]
    dw = (dwd * diff).sum(axis=2)
    dx = ddiff.sum(axis=0)
    dv = -ddiff.sum(axis=2)
    dw_raw = dw * numerics._sigmoid_fwd(w_raw)      # softplus' = logistic
    return dx, dv, dw_raw


quantize_op = register(DiffOp(
    "quantize", quantize_raw, quantize_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((3, 5)),
                               rng.standard_normal((4, 3)),
                               rng.standard_normal((4, 3))],
))


def quantize(x: Array, cb: Codebook) -> Array:
    return quantize_raw(x, cb.v, cb.w_raw)


def aggregate(phi: Array) -> Array:
    """Mean of the membership columns: a length-K histogram."""
    phi = numerics.as_matrix(phi, "aggregate input")
    if phi.shape[1] == 0:
        raise ShapeError("aggregate: empty sequence (N=0)")
    return numerics.mean_cols(phi)


aggregate_vjp = numerics._mean_cols_vjp


def init_codebook(samples: list[Array], size: int, seed: int) -> Codebook:
    """Seeded codebook: ``size`` feature columns drawn without replacement
    from the pooled samples; shape weights start at one."""
    if size < 1:
        raise ValueError(f"init_codebook: size must be >= 1, got {size}")
    pool = np.concatenate([numerics.as_matrix(s, "sample") for s in samples], axis=1)
    total = pool.shape[1]
    if total < size:
        raise ValueError(
            f"init_codebook: need at least {size} pooled columns, got {total}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=size, replace=False)
    v = pool[:, picks].T.copy()
    return Codebook(v=v, w_raw=np.full_like(v, W_RAW_UNIT))
