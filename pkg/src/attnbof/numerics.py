"""Dense float64 matrix primitives with hand-written vector-Jacobian products.

Matrices are 2-d ``numpy.ndarray`` of float64, row-major; vectors are 1-d.
Every operation is exposed as a :class:`DiffOp`: a forward function paired
with a VJP that maps an upstream cotangent to one cotangent per input.  The
model graph is fixed, so there is no tape; composite layers chain these VJPs
explicitly.  ``grad_check`` validates any DiffOp against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray

# Generates a valid random input point for a registered op, used by the
# registry-wide gradient test.
SampleFn = Callable[[np.random.Generator], list[Array]]


@dataclass(frozen=True)
class DiffOp:
    """A differentiable operation: forward value plus vector-Jacobian product.

    ``vjp(inputs, output, upstream)`` returns one cotangent per input.
    Non-array configuration (modes, head counts, dropout seeds) is bound at
    construction time, so every element of ``inputs`` is a real array that
    ``grad_check`` may perturb.
    """

    name: str
    forward: Callable[..., Array]
    vjp: Callable[[Sequence[Array], Array, Array], tuple[Array, ...]]
    sample_inputs: SampleFn | None = None

    def __call__(self, *inputs: Array) -> Array:
        return self.forward(*inputs)


REGISTRY: dict[str, DiffOp] = {}


def register(op: DiffOp) -> DiffOp:
    REGISTRY[op.name] = op
    return op


def as_matrix(a, name: str = "matrix") -> Array:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-d matrix, got shape {m.shape}")
    return m


# ---------------------------------------------------------------------------
# elementary ops


def _matmul_fwd(a: Array, b: Array) -> Array:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} does not conform with {b.shape}")
    return a @ b


def _matmul_vjp(inputs, output, upstream):
    a, b = inputs
    return upstream @ b.T, a.T @ upstream


matmul = register(DiffOp(
    "matmul", _matmul_fwd, _matmul_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((4, 6)), rng.standard_normal((6, 3))],
))


def _softmax_rows_fwd(m: Array) -> Array:
    m = np.asarray(m, dtype=float)
    # max subtraction keeps exp in range for entries anywhere in [-700, 700]
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_rows_vjp(inputs, output, upstream):
    s = output
    return (s * (upstream - (upstream * s).sum(axis=-1, keepdims=True)),)


softmax_rows = register(DiffOp(
    "softmax_rows", _softmax_rows_fwd, _softmax_rows_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((4, 6))],
))


def _sigmoid_fwd(m: Array) -> Array:
    m = np.asarray(m, dtype=float)
    # 1/(1+exp(-m)) is value-correct for the whole double range; the overflow
    # in exp for very negative m lands harmlessly on inf -> 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-m))


def _sigmoid_vjp(inputs, output, upstream):
    return (upstream * output * (1.0 - output),)


sigmoid = register(DiffOp(
    "sigmoid", _sigmoid_fwd, _sigmoid_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((5, 3))],
))


def _transpose_fwd(m: Array) -> Array:
    return np.asarray(m, dtype=float).T


def _transpose_vjp(inputs, output, upstream):
    return (upstream.T,)


transpose = register(DiffOp(
    "transpose", _transpose_fwd, _transpose_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((3, 7))],
))


def _hadamard_fwd(a: Array, b: Array) -> Array:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def _hadamard_vjp(inputs, output, upstream):
    a, b = inputs
    return upstream * b, upstream * a


hadamard = register(DiffOp(
    "hadamard", _hadamard_fwd, _hadamard_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((4, 4)), rng.standard_normal((4, 4))],
))


def _mean_cols_fwd(m: Array) -> Array:
    m = as_matrix(m, "mean_cols")
    if m.shape[1] == 0:
        raise ShapeError("mean_cols: matrix has zero columns")
    return m.mean(axis=1)


def _mean_cols_vjp(inputs, output, upstream):
    (m,) = inputs
    n = m.shape[1]
    return (np.repeat(upstream[:, None] / n, n, axis=1),)


mean_cols = register(DiffOp(
    "mean_cols", _mean_cols_fwd, _mean_cols_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((5, 4))],
))


def _relu_fwd(m: Array) -> Array:
    return np.maximum(np.asarray(m, dtype=float), 0.0)


def _relu_vjp(inputs, output, upstream):
    (m,) = inputs
    return (upstream * (m > 0.0),)


def _relu_sample(rng: np.random.Generator) -> list[Array]:
    # keep entries away from the kink so finite differences stay clean
    m = rng.standard_normal((4, 5))
    m[np.abs(m) < 1e-2] += 0.5
    return [m]


relu = register(DiffOp("relu", _relu_fwd, _relu_vjp, sample_inputs=_relu_sample))


def _affine_fwd(w: Array, y: Array, b: Array) -> Array:
    w = as_matrix(w, "affine weight")
    y, b = np.asarray(y, dtype=float), np.asarray(b, dtype=float)
    if y.ndim != 1 or b.ndim != 1 or w.shape[1] != y.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeError(
            f"affine: weight {w.shape}, input {y.shape}, bias {b.shape} do not conform")
    return w @ y + b


def _affine_vjp(inputs, output, upstream):
    w, y, b = inputs
    return np.outer(upstream, y), w.T @ upstream, upstream.copy()


affine = register(DiffOp(
    "affine", _affine_fwd, _affine_vjp,
    sample_inputs=lambda rng: [rng.standard_normal((3, 6)), rng.standard_normal(6),
                               rng.standard_normal(3)],
))


def softplus(m: Array) -> Array:
    """log(1 + exp(m)), overflow-safe; derivative is the logistic."""
    return np.logaddexp(0.0, np.asarray(m, dtype=float))


def logistic_scalar(z: float) -> float:
    """Stable scalar logistic; exact 0.0 / 1.0 at -inf / +inf."""
    z = float(z)
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return float(e / (1.0 + e))


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    """Worst relative error of a DiffOp's VJP against central differences."""

    max_rel_err: float
    per_input: list[float]
    finite: bool

    @property
    def ok(self) -> bool:
        return self.finite and self.max_rel_err <= 1e-4


def grad_check(op: DiffOp, point: Sequence[Array], eps: float = 1e-5,
               projection_seed: int = 7) -> GradCheckReport:
    """Compare ``op.vjp`` against central finite differences at ``point``.

    The output is reduced to a scalar through a fixed random projection, the
    VJP is evaluated once with the projection as upstream cotangent, and each
    input entry is perturbed by +/- eps.  Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8).  Any non-finite value fails the check.
    """
    if eps <= 0.0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")
    point = [np.array(p, dtype=float) for p in point]
    out = np.asarray(op.forward(*point))
    rng = np.random.default_rng(projection_seed)
    r = rng.standard_normal(out.shape)

    def projected() -> float:
        return float(np.sum(r * np.asarray(op.forward(*point))))

    finite = bool(np.all(np.isfinite(out)))
    grads = op.vjp(tuple(point), out, r)
    per_input: list[float] = []
    worst = 0.0
    for i, p in enumerate(point):
        g = np.asarray(grads[i])
        if g.shape != p.shape:
            raise ShapeError(
                f"grad_check({op.name}): cotangent {i} has shape {g.shape}, "
                f"input has {p.shape}")
        finite = finite and bool(np.all(np.isfinite(g)))
        err = 0.0
        for idx in np.ndindex(*p.shape):
            saved = p[idx]
            p[idx] = saved + eps
            f_plus = projected()
            p[idx] = saved - eps
            f_minus = projected()
            p[idx] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(g[idx])
            if not (np.isfinite(numeric) and np.isfinite(analytic)):
                finite = False
                err = np.inf
                break
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            err = max(err, rel)
        per_input.append(err)
        worst = max(worst, err)
    if not finite:
        worst = np.inf
    return GradCheckReport(max_rel_err=worst, per_input=per_input, finite=finite)
