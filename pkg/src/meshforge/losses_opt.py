"""Image losses, their weighted sum, and Adam.

Every loss returns ``(value, gradient wrt the prediction)``. L1 subgradients
are zero at exact ties.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import NumericError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "L_c", "L_s", "L_d", "total")


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 5.0
    lambda_s: float = 10.0
    lambda_d: float = 30.0

    def __post_init__(self):
        if min(self.lambda_c, self.lambda_s, self.lambda_d) < 0:
            raise ValueError("loss weights must be nonnegative")


def _same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {np.shape(a)} vs {shape}")


def silhouette_loss(S, S_hat, kind: str = "L2"):
    """Per-pixel mean of ``(S - S_hat)^2`` (or ``|S - S_hat|``)."""
    _same_shape(S, S_hat)
    diff = np.asarray(S, dtype=float) - np.asarray(S_hat, dtype=float)
    n = diff.size
    if kind == "L2":
        return float(np.sum(diff * diff) / n), -2.0 * diff / n
    if kind == "L1":
        return float(np.sum(np.abs(diff)) / n), -np.sign(diff) / n
    raise ValueError(f"unknown silhouette loss {kind!r}")


def depth_loss(D, valid, D_hat, coverage, kind: str = "L1"):
    """Mean ``|D - D_hat|`` (or squared) over ``valid & coverage`` pixels."""
    _same_shape(D, valid, D_hat, coverage)
    sel = (np.asarray(valid) > 0.5) & (np.asarray(coverage) > 0.5)
    grad = np.zeros(np.shape(D_hat))
    n = int(sel.sum())
    if n == 0:
        return 0.0, grad
    diff = np.asarray(D, dtype=float)[sel] - np.asarray(D_hat, dtype=float)[sel]
    if kind == "L1":
        grad[sel] = -np.sign(diff) / n
        return float(np.sum(np.abs(diff)) / n), grad
    if kind == "L2":
        grad[sel] = -2.0 * diff / n
        return float(np.sum(diff * diff) / n), grad
    raise ValueError(f"unknown depth loss {kind!r}")


def photometric_loss(I, I_hat, region):
    """Sum over channels of the mean ``|I - I_hat|`` over ``region`` pixels."""
    I = np.asarray(I, dtype=float)
    I_hat = np.asarray(I_hat, dtype=float)
    _same_shape(I, I_hat)
    if np.shape(region) != I.shape[:2]:
        raise ValueError("region must match the image height and width")
    sel = np.asarray(region) > 0.5
    grad = np.zeros(I.shape)
    n = int(sel.sum())
    if n == 0:
        log.warning("photometric loss: empty region")
        return 0.0, grad
    diff = I[sel] - I_hat[sel]
    grad[sel] = -np.sign(diff) / n
    return float(np.sum(np.abs(diff)) / n), grad


def total_loss(c: float, s: float, d: float, w: LossWeights) -> float:
    return w.lambda_c * c + w.lambda_s * s + w.lambda_d * d


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    name: str = "block"


def adam_step(block: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update of ``block`` in place (also returned)."""
    grad = np.asarray(grad)
    if grad.shape != block.shape:
        raise ValueError(f"{state.name}: gradient shape {grad.shape} != block shape {block.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient in parameter block '{state.name}'")
    if not block.flags.c_contiguous:
        raise ValueError(f"{state.name}: parameter block must be C-contiguous")
    if state.m is None or state.m.shape != block.shape:
        state.m = np.zeros_like(block)
        state.v = np.zeros_like(block)
        state.step = 0
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    _adam_kernel(
        block.reshape(-1), np.ascontiguousarray(grad, dtype=block.dtype).reshape(-1),
        state.m.reshape(-1), state.v.reshape(-1), state.lr, b1, b2, state.eps,
        1.0 - b1**state.step, 1.0 - b2**state.step,
    )
    return block


@numba.njit(cache=True)
def _adam_kernel(x, g, m, v, lr, b1, b2, eps, c1, c2):
    # fused single pass; the dense texture grid makes the numpy version slow
    for i in range(x.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        x[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


# --------------------------------------------------------------------------
# loss log


@dataclass
class LossLog:
    path: Path
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.path = Path(self.path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(CSV_COLUMNS)

    def append(self, epoch: int, L_c: float, L_s: float, L_d: float, total: float) -> None:
        row = (epoch, L_c, L_s, L_d, total)
        if not all(math.isfinite(x) for x in row[1:]):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        self.rows.append(row)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([epoch] + [repr(float(x)) for x in row[1:]])


def read_loss_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
