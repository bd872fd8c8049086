"""Finite-difference and adjoint-identity checks used by the gradient tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GradReport:
    max_rel_error: float
    max_abs_error: float
    worst_index: int
    step: float

    def __str__(self) -> str:
        return (
            f"rel={self.max_rel_error:.3e} abs={self.max_abs_error:.3e} "
            f"at {self.worst_index} (h={self.step:g})"
        )


def finite_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x.copy())
        x[i] = old - h
        fm = f(x.copy())
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f is not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def compare(analytic, numeric, step: float = 0.0) -> GradReport:
    """Max error relative to the largest numeric entry (inf-norm relative error)."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    diff = np.abs(a - n)
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0))
    worst = int(np.argmax(diff)) if diff.size else -1
    rel = float(diff.max(initial=0.0) / scale) if scale > 0 else float(diff.max(initial=0.0))
    return GradReport(rel, float(diff.max(initial=0.0)), worst, step)


def check_gradient(f, grad, x, h: float = 1e-5) -> GradReport:
    """Compare an analytic gradient at ``x`` against central differences."""
    return compare(grad, finite_difference(f, x, h), h)


def adjoint_identity(A, At, dims: tuple[int, int], trials: int = 5, seed=0) -> GradReport:
    """Check ``<A x, y> == <x, At y>`` for random ``x`` and ``y``.

    ``dims`` is ``(input_size, output_size)``; both operators act on flat
    float64 vectors.
    """
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, worst_i = 0.0, 0.0, -1
    for t in range(trials):
        x = rng.standard_normal(dims[0])
        y = rng.standard_normal(dims[1])
        lhs = float(np.dot(np.ravel(A(x)), y))
        rhs = float(np.dot(x, np.ravel(At(y))))
        err = abs(lhs - rhs)
        rel = err / max(abs(lhs), abs(rhs), 1e-300)
        if rel > worst_rel:
            worst_rel, worst_abs, worst_i = rel, err, t
    return GradReport(worst_rel, worst_abs, worst_i, 0.0)
