"""Attention layers over quantized sequences.

Input is a K x N membership matrix ``phi`` (codewords by timestamps).  Four
re-weighting schemes are provided, each returning a matrix that downstream
averaging turns into a histogram:

* ``att_2da`` -- a directly learned mask: ``A = softmax_rows(M @ W)`` with the
  diagonal of ``W`` pinned at 1/n, mixed as ``alpha * (M * A) + (1-alpha) * M``.
  ``M`` is ``phi`` itself (temporal mode) or its transpose (codeword mode;
  input mode applies the same computation to the raw feature matrix).
* ``att_ctsa`` -- a joint codeword-by-timestamp mask from the scaled dot
  product of a codeword-side projection ``q = phi @ Wq^T`` and a temporal-side
  projection ``k = phi^T @ Wk^T``, squashed through a sigmoid and applied
  elementwise.
* ``att_csa`` -- codeword-to-codeword attention: both projections act on the
  temporal axis, ``A = softmax_rows(q k^T / sqrt(d))`` is K x K and is applied
  by matrix product to promote competition between codewords.
* ``att_tsa`` -- timestamp-to-timestamp attention: the same construction on
  ``phi^T``, giving an N x N mask over timestamps.

The self-attention variants mix per head as ``alpha * phi + (1-alpha) * att``
and concatenate head outputs along the codeword axis, so h heads yield an
(h*K) x N result.  Dropout on the attention matrix is training-only and
inverted (survivors scaled by 1/(1-rate)), so evaluation is a pure identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ShapeError
from .numerics import Array, DiffOp, logistic_scalar, register

MODES = ("input", "codeword", "temporal")
VARIANTS = ("ctsa", "csa", "tsa")


@dataclass
class Attention2DAParams:
    """Directly learned mask parameters; ``w`` is square with pinned diagonal."""

    w: Array            # (n, n) where n is the column count of the operand
    alpha_raw: Array    # (1, 1); mixing strength alpha = logistic(alpha_raw)
    mode: str = "temporal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"2da mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class AttentionHead:
    wq: Array
    wk: Array
    alpha_raw: Array    # (1, 1)


@dataclass
class SelfAttentionParams:
    heads: list[AttentionHead]
    latent_dim: int
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ShapeError(f"latent dimension must be >= 1, got {self.latent_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")


def _alpha(alpha_raw: Array) -> float:
    return logistic_scalar(float(np.asarray(alpha_raw).reshape(())))


def _dalpha_raw(alpha_raw: Array, dalpha: float) -> Array:
    a = _alpha(alpha_raw)
    return np.array([[dalpha * a * (1.0 - a)]])


# ---------------------------------------------------------------------------
# dropout


def _dropout_mask(shape: tuple[int, ...], rate: float, seed: int) -> Array:
    keep = np.random.default_rng(seed).random(shape) >= rate
    return keep / (1.0 - rate)


def attention_dropout(a: Array, rate: float, training: bool, seed: int) -> Array:
    """Inverted dropout on an attention matrix; identity when evaluating."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = np.asarray(a, dtype=float)
    if not training or rate == 0.0:
        return a
    return a * _dropout_mask(a.shape, rate, seed)


def attention_dropout_vjp(a: Array, rate: float, training: bool, seed: int,
                          upstream: Array) -> Array:
    if not training or rate == 0.0:
        return upstream
    return upstream * _dropout_mask(np.asarray(a).shape, rate, seed)


register(DiffOp(
    "attention_dropout_train",
    lambda a: attention_dropout(a, 0.3, True, 1234),
    lambda inputs, output, upstream: (attention_dropout_vjp(inputs[0], 0.3, True, 1234, upstream),),
    sample_inputs=lambda rng: [rng.standard_normal((6, 7))],
))


# ---------------------------------------------------------------------------
# directly learned 2-d mask


def _2da_orient(phi: Array, mode: str) -> Array:
    return phi if mode == "temporal" else phi.T


def _2da_pinned(w: Array, n: int) -> Array:
    if w.shape != (n, n):
        raise ShapeError(f"2da: weight is {w.shape}, operand needs ({n}, {n})")
    pinned = np.array(w, dtype=float)
    np.fill_diagonal(pinned, 1.0 / n)
    return pinned


def att_2da(phi: Array, p: Attention2DAParams) -> Array:
    """Mask-and-mix: ``alpha * (M * softmax_rows(M @ W)) + (1-alpha) * M``.

    Returns a matrix of the same shape and orientation as ``phi``.  The
    diagonal of ``W`` is treated as the constant 1/n regardless of the stored
    values, so those entries are not free parameters.
    """
    phi = numerics.as_matrix(phi, "2da input")
    m = _2da_orient(phi, p.mode)
    w = _2da_pinned(p.w, m.shape[1])
    a = numerics.softmax_rows(m @ w)
    alpha = _alpha(p.alpha_raw)
    out = alpha * (m * a) + (1.0 - alpha) * m
    return out if p.mode == "temporal" else out.T


def att_2da_matrix(phi: Array, p: Attention2DAParams) -> Array:
    """The softmax mask itself, in operand orientation."""
    m = _2da_orient(numerics.as_matrix(phi, "2da input"), p.mode)
    return numerics.softmax_rows(m @ _2da_pinned(p.w, m.shape[1]))


def att_2da_vjp(phi: Array, p: Attention2DAParams,
                upstream: Array) -> tuple[Array, Array, Array]:
    m = _2da_orient(phi, p.mode)
    g = upstream if p.mode == "temporal" else upstream.T
    w = _2da_pinned(p.w, m.shape[1])
    a = numerics.softmax_rows(m @ w)
    alpha = _alpha(p.alpha_raw)

    masked = m * a
    dalpha = float(np.sum(g * (masked - m)))
    da = alpha * g * m
    dm = alpha * g * a + (1.0 - alpha) * g
    dz = a * (da - (da * a).sum(axis=1, keepdims=True))
    dm += dz @ w.T
    dw = m.T @ dz
    np.fill_diagonal(dw, 0.0)  # the diagonal is a constant, not a parameter
    dphi = dm if p.mode == "temporal" else dm.T
    return dphi, dw, _dalpha_raw(p.alpha_raw, dalpha)


# ---------------------------------------------------------------------------
# self-attention variants

HeadGrads = list[tuple[Array, Array, Array]]


def _check_head_shapes(variant: str, phi: Array, head: AttentionHead, d: int) -> None:
    k, n = phi.shape
    want_q = {"ctsa": (d, n), "csa": (d, n), "tsa": (d, k)}[variant]
    want_k = {"ctsa": (d, k), "csa": (d, n), "tsa": (d, k)}[variant]
    if head.wq.shape != want_q or head.wk.shape != want_k:
        raise ShapeError(
            f"{variant}: head projections are wq {head.wq.shape} / wk {head.wk.shape}; "
            f"phi {phi.shape} with latent dim {d} needs wq {want_q} / wk {want_k}")


def _flat_softmax(z: Array) -> Array:
    e = np.exp(z - z.max())
    return e / e.sum()


def att_ctsa(phi: Array, p: SelfAttentionParams, training: bool = False,
             seed: int = 0, activation: str = "sigmoid") -> Array:
    """Joint codeword-temporal mask, applied elementwise per head.

    ``activation`` is ``"sigmoid"``; ``"flat_softmax"`` (normalizing over all
    K*N entries at once) exists for comparison tests only.
    """
    phi = numerics.as_matrix(phi, "ctsa input")
    d = p.latent_dim
    outs = []
    for i, head in enumerate(p.heads):
        _check_head_shapes("ctsa", phi, head, d)
        q = phi @ head.wq.T                       # (K, d)
        k = phi.T @ head.wk.T                     # (N, d)
        z = (q @ k.T) / math.sqrt(d)              # (K, N)
        a = numerics.sigmoid(z) if activation == "sigmoid" else _flat_softmax(z)
        a = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)
        outs.append(alpha * phi + (1.0 - alpha) * (a * phi))
    return np.concatenate(outs, axis=0)


def att_ctsa_vjp(phi: Array, p: SelfAttentionParams, upstream: Array,
                 training: bool = False, seed: int = 0,
                 activation: str = "sigmoid") -> tuple[Array, HeadGrads]:
    d = p.latent_dim
    kdim = phi.shape[0]
    dphi = np.zeros_like(phi)
    head_grads: HeadGrads = []
    for i, head in enumerate(p.heads):
        g = upstream[i * kdim:(i + 1) * kdim]
        q = phi @ head.wq.T
        k = phi.T @ head.wk.T
        z = (q @ k.T) / math.sqrt(d)
        a = numerics.sigmoid(z) if activation == "sigmoid" else _flat_softmax(z)
        a_used = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)

        dalpha = float(np.sum(g * (phi - a_used * phi)))
        dphi += alpha * g + (1.0 - alpha) * g * a_used
        da_used = (1.0 - alpha) * g * phi
        da = attention_dropout_vjp(a, p.dropout_rate, training, seed + i, da_used)
        if activation == "sigmoid":
            dz = da * a * (1.0 - a)
        else:
            dz = a * (da - float(np.sum(da * a)))
        dq = (dz @ k) / math.sqrt(d)
        dk = (dz.T @ q) / math.sqrt(d)
        dphi += dq @ head.wq + (dk @ head.wk).T
        head_grads.append((dq.T @ phi, (phi @ dk).T, _dalpha_raw(head.alpha_raw, dalpha)))
    return dphi, head_grads


def att_csa(phi: Array, p: SelfAttentionParams, training: bool = False,
            seed: int = 0) -> Array:
    """Codeword-to-codeword attention in a learned latent space."""
    phi = numerics.as_matrix(phi, "csa input")
    d = p.latent_dim
    outs = []
    for i, head in enumerate(p.heads):
        _check_head_shapes("csa", phi, head, d)
        q = phi @ head.wq.T
        k = phi @ head.wk.T
        a = numerics.softmax_rows((q @ k.T) / math.sqrt(d))   # (K, K)
        a = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)
        outs.append(alpha * phi + (1.0 - alpha) * (a @ phi))
    return np.concatenate(outs, axis=0)


def att_csa_vjp(phi: Array, p: SelfAttentionParams, upstream: Array,
                training: bool = False, seed: int = 0) -> tuple[Array, HeadGrads]:
    d = p.latent_dim
    kdim = phi.shape[0]
    dphi = np.zeros_like(phi)
    head_grads: HeadGrads = []
    for i, head in enumerate(p.heads):
        g = upstream[i * kdim:(i + 1) * kdim]
        q = phi @ head.wq.T
        k = phi @ head.wk.T
        a = numerics.softmax_rows((q @ k.T) / math.sqrt(d))
        a_used = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)

        mixed = a_used @ phi
        dalpha = float(np.sum(g * (phi - mixed)))
        dphi += alpha * g + (1.0 - alpha) * (a_used.T @ g)
        da_used = (1.0 - alpha) * (g @ phi.T)
        da = attention_dropout_vjp(a, p.dropout_rate, training, seed + i, da_used)
        dz = a * (da - (da * a).sum(axis=1, keepdims=True))
        dq = (dz @ k) / math.sqrt(d)
        dk = (dz.T @ q) / math.sqrt(d)
        dphi += dq @ head.wq + dk @ head.wk
        head_grads.append((dq.T @ phi, dk.T @ phi, _dalpha_raw(head.alpha_raw, dalpha)))
    return dphi, head_grads


def att_tsa(phi: Array, p: SelfAttentionParams, training: bool = False,
            seed: int = 0) -> Array:
    """Timestamp-to-timestamp attention, computed on the transpose."""
    phi = numerics.as_matrix(phi, "tsa input")
    d = p.latent_dim
    phi_t = phi.T
    outs = []
    for i, head in enumerate(p.heads):
        _check_head_shapes("tsa", phi, head, d)
        q = phi_t @ head.wq.T                     # (N, d)
        k = phi_t @ head.wk.T
        a = numerics.softmax_rows((q @ k.T) / math.sqrt(d))   # (N, N)
        a = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)
        outs.append((alpha * phi_t + (1.0 - alpha) * (a @ phi_t)).T)
    return np.concatenate(outs, axis=0)


def att_tsa_vjp(phi: Array, p: SelfAttentionParams, upstream: Array,
                training: bool = False, seed: int = 0) -> tuple[Array, HeadGrads]:
    d = p.latent_dim
    kdim = phi.shape[0]
    phi_t = phi.T
    dphi_t = np.zeros_like(phi_t)
    head_grads: HeadGrads = []
    for i, head in enumerate(p.heads):
        g = upstream[i * kdim:(i + 1) * kdim].T   # (N, K)
        q = phi_t @ head.wq.T
        k = phi_t @ head.wk.T
        a = numerics.softmax_rows((q @ k.T) / math.sqrt(d))
        a_used = attention_dropout(a, p.dropout_rate, training, seed + i)
        alpha = _alpha(head.alpha_raw)

        mixed = a_used @ phi_t
        dalpha = float(np.sum(g * (phi_t - mixed)))
        dphi_t += alpha * g + (1.0 - alpha) * (a_used.T @ g)
        da_used = (1.0 - alpha) * (g @ phi_t.T)
        da = attention_dropout_vjp(a, p.dropout_rate, training, seed + i, da_used)
        dz = a * (da - (da * a).sum(axis=1, keepdims=True))
        dq = (dz @ k) / math.sqrt(d)
        dk = (dz.T @ q) / math.sqrt(d)
        dphi_t += dq @ head.wq + dk @ head.wk
        head_grads.append((dq.T @ phi_t, dk.T @ phi_t, _dalpha_raw(head.alpha_raw, dalpha)))
    return dphi_t.T, head_grads


def head_matrices(phi: Array, p: SelfAttentionParams, variant: str) -> list[Array]:
    """Per-head attention matrices in evaluation mode (no dropout)."""
    phi = numerics.as_matrix(phi, "attention input")
    d = p.latent_dim
    mats = []
    for head in p.heads:
        _check_head_shapes(variant, phi, head, d)
        if variant == "ctsa":
            z = (phi @ head.wq.T) @ (phi.T @ head.wk.T).T
            mats.append(numerics.sigmoid(z / math.sqrt(d)))
        elif variant == "csa":
            z = (phi @ head.wq.T) @ (phi @ head.wk.T).T
            mats.append(numerics.softmax_rows(z / math.sqrt(d)))
        elif variant == "tsa":
            z = (phi.T @ head.wq.T) @ (phi.T @ head.wk.T).T
            mats.append(numerics.softmax_rows(z / math.sqrt(d)))
        else:
            raise ValueError(f"unknown self-attention variant {variant!r}")
    return mats


# ---------------------------------------------------------------------------
# registry bindings (fixed small shapes so the library-wide gradient test can
# sample valid points)

_FORWARD = {"ctsa": att_ctsa, "csa": att_csa, "tsa": att_tsa}
_VJP = {"ctsa": att_ctsa_vjp, "csa": att_csa_vjp, "tsa": att_tsa_vjp}


def make_self_attention_op(variant: str, heads: int, latent_dim: int,
                           k: int, n: int, training: bool = False,
                           dropout_rate: float = 0.0, seed: int = 0) -> DiffOp:
    """Bind a variant to fixed head count and shapes as a flat-input DiffOp.

    Input order is (phi, wq_0, wk_0, alpha_raw_0, wq_1, ...).
    """

    def unflatten(arrs):
        hs = [AttentionHead(arrs[3 * i], arrs[3 * i + 1], arrs[3 * i + 2])
              for i in range(heads)]
        return SelfAttentionParams(heads=hs, latent_dim=latent_dim,
                                   dropout_rate=dropout_rate)

    def fwd(phi, *arrs):
        return _FORWARD[variant](phi, unflatten(arrs), training=training, seed=seed)

    def vjp(inputs, output, upstream):
        phi, *arrs = inputs
        dphi, head_grads = _VJP[variant](phi, unflatten(arrs), upstream,
                                         training=training, seed=seed)
        flat: list[Array] = [dphi]
        for dwq, dwk, da in head_grads:
            flat += [dwq, dwk, da]
        return tuple(flat)

    def sample(rng: np.random.Generator) -> list[Array]:
        q_cols = {"ctsa": n, "csa": n, "tsa": k}[variant]
        k_cols = {"ctsa": k, "csa": n, "tsa": k}[variant]
        arrs = [rng.standard_normal((k, n))]
        for _ in range(heads):
            # fan-in scaling keeps attention logits O(1); saturated softmax
            # tails are outside finite-difference resolution
            arrs += [rng.standard_normal((latent_dim, q_cols)) / math.sqrt(q_cols),
                     rng.standard_normal((latent_dim, k_cols)) / math.sqrt(k_cols),
                     rng.standard_normal((1, 1))]
        return arrs

    suffix = "_train" if training else ""
    return DiffOp(f"att_{variant}_h{heads}{suffix}", fwd, vjp, sample_inputs=sample)


def make_2da_op(mode: str, rows: int, cols: int) -> DiffOp:
    def fwd(phi, w, alpha_raw):
        return att_2da(phi, Attention2DAParams(w=w, alpha_raw=alpha_raw, mode=mode))

    def vjp(inputs, output, upstream):
        phi, w, alpha_raw = inputs
        return att_2da_vjp(phi, Attention2DAParams(w=w, alpha_raw=alpha_raw, mode=mode),
                           upstream)

    side = cols if mode == "temporal" else rows

    def sample(rng: np.random.Generator) -> list[Array]:
        return [rng.standard_normal((rows, cols)),
                rng.standard_normal((side, side)) / math.sqrt(side),
                rng.standard_normal((1, 1))]

    return DiffOp(f"att_2da_{mode}", fwd, vjp, sample_inputs=sample)


for _mode in MODES:
    register(make_2da_op(_mode, 4, 5))
for _variant in VARIANTS:
    register(make_self_attention_op(_variant, heads=2, latent_dim=3, k=4, n=6))
register(make_self_attention_op("csa", heads=1, latent_dim=3, k=4, n=6,
                                training=True, dropout_rate=0.25, seed=99))
