"""Dense float64 tensor ops with analytic gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every forward op
has a matching ``*_backward`` that maps the upstream gradient to gradients
of its inputs; :func:`grad_check` compares these against central finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "NumericsError", "ShapeMismatch", "NonFiniteValue", "IndexOutOfRange",
    "as_tensor", "check_finite",
    "matmul", "matmul_backward",
    "softmax", "softmax_backward",
    "layer_norm", "layer_norm_backward",
    "gelu", "gelu_backward",
    "cross_entropy",
    "GradCheckReport", "grad_check",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NumericsError(ValueError):
    pass


class ShapeMismatch(NumericsError):
    pass


class NonFiniteValue(NumericsError):
    pass


class IndexOutOfRange(NumericsError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")
    return x


def matmul(a, b) -> np.ndarray:
    """``a[..., m, k] @ b[k, n]``; a 2-D ``b`` is shared across leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(dc, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``c = a @ b``: ``da = dc bᵀ``, ``db = aᵀ dc`` summed over
    any leading dims of ``a``."""
    da = dc @ b.T
    k, n = b.shape
    db = a.reshape(-1, k).T @ dc.reshape(-1, n)
    return da, db


def softmax(x) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    x = as_tensor(x)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def layer_norm(x, gamma, beta, eps: float = 1e-12):
    """Standardize over the last axis then apply ``gamma``/``beta``.

    Returns ``(y, cache)``; pass the cache to :func:`layer_norm_backward`.
    """
    x = as_tensor(x)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch(f"gamma/beta {gamma.shape}/{beta.shape} vs input {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layer_norm_backward(dy, cache):
    xhat, rstd, gamma = cache
    n = xhat.shape[-1]
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    g = dy * gamma
    dx = rstd * (g - g.mean(axis=-1, keepdims=True)
                 - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n)
    return dx, dgamma, dbeta


def gelu(x) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_backward(dy, x) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its logit gradient."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeMismatch(f"logits must be [b>=1, k], got {logits.shape}")
    b, k = logits.shape
    if targets.shape != (b,):
        raise ShapeMismatch(f"{targets.shape[0] if targets.ndim else 0} targets for {b} rows")
    if np.any((targets < 0) | (targets >= k)):
        raise IndexOutOfRange(f"target outside [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(logz - shifted[rows, targets]))
    grad = np.exp(shifted - logz[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / b


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    n_checked: int = 0
    worst: tuple[int, tuple] | None = None

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def grad_check(f: Callable, inputs: Sequence[np.ndarray], tolerance: float = 1e-4,
               step: float = 1e-5, indices: Sequence | None = None) -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    ``f(*inputs)`` must return ``(value, grads)`` with one gradient array per
    input. Inputs are perturbed in place and restored. ``indices`` optionally
    restricts which input positions are checked (one list of index tuples per
    input, or None for all).
    """
    inputs = [np.asarray(x) for x in inputs]
    for i, x in enumerate(inputs):
        check_finite(x, f"input {i}")
    value, grads = f(*inputs)
    if not math.isfinite(value):
        raise NonFiniteValue("function value is not finite")
    report = GradCheckReport(0.0)
    for i, (x, ga) in enumerate(zip(inputs, grads)):
        worst = 0.0
        where = indices[i] if indices is not None and indices[i] is not None else np.ndindex(x.shape)
        for idx in where:
            orig = x[idx]
            x[idx] = orig + step
            fp, _ = f(*inputs)
            x[idx] = orig - step
            fm, _ = f(*inputs)
            x[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteValue(f"non-finite value perturbing input {i} at {idx}")
            gn = (fp - fm) / (2.0 * step)
            g = float(ga[idx])
            err = abs(g - gn) / max(abs(g), abs(gn), 1e-8)
            report.n_checked += 1
            if err > worst:
                worst = err
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (i, tuple(idx) if isinstance(idx, tuple) else (idx,))
        report.per_input.append(worst)
    return report
