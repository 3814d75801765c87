"""Thresholded SNR losses, mixing-matrix solvers and the MixIT objective.

Two solvers find the binary 2xN assignment of separated sources to parent
mixtures: an exhaustive search over all 2**N one-hot-column matrices, and
the fast route that solves the unconstrained least-squares mixing problem
on the NxN Gram matrix and projects each column to one-hot.  Both report
the loss through the same code path, so identical assignments give
bit-identical losses.

Gradients treat the chosen assignment as a constant of the backward pass
(derivative of a pointwise minimum at its argmin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import (
    ShapeMismatch,
    SingularGram,
    TooManySources,
    ZeroMixture,
    ZeroReference,
)

MAX_EXHAUSTIVE_SOURCES = 16
_ENUM_BLOCK = 4096
_DB_FACTOR = 20.0 / np.log(10.0)


def _signal(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _stack_estimates(s_hat) -> np.ndarray:
    if isinstance(s_hat, np.ndarray):
        return np.asarray(s_hat, dtype=np.float64)
    return np.stack([_signal(s) for s in s_hat])


@dataclass(frozen=True)
class MixingMatrix:
    """Binary 2xN assignment; every column is one-hot."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or e.shape[0] != 2:
            raise ShapeMismatch(f"mixing matrix must be 2xN, got {e.shape}")
        if not np.all(e.sum(axis=0) == 1) or not np.all((e == 0) | (e == 1)):
            raise ShapeMismatch("every column must have exactly one entry = 1")
        object.__setattr__(self, "entries", e.astype(np.int64))

    @property
    def rows(self) -> np.ndarray:
        """Row index (0 or 1) each source column is assigned to."""
        return self.entries[1]

    @staticmethod
    def from_rows(rows: np.ndarray) -> "MixingMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        e = np.zeros((2, rows.size), dtype=np.int64)
        e[rows, np.arange(rows.size)] = 1
        return MixingMatrix(e)


@dataclass(frozen=True)
class MixitResult:
    loss: float
    assignment: MixingMatrix
    remixes: np.ndarray  # (2, ...) same trailing shape as the estimates


# ---------------------------------------------------------------------------
# SNR losses
# ---------------------------------------------------------------------------

def snr_loss(y, y_hat, tau: float = 1e-3) -> float:
    """Negative thresholded SNR in dB.

    -10*log10(|y|^2 / (|y - y_hat|^2 + tau*|y|^2)); tau bounds the loss
    below at 10*log10(tau), i.e. -30 dB for tau = 1e-3.
    """
    y = _signal(y)
    y_hat = _signal(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"reference {y.shape} vs estimate {y_hat.shape}")
    if tau <= 0:
        raise ShapeMismatch(f"tau must be positive, got {tau}")
    ref_energy = float(np.sum(y * y))
    if ref_energy == 0.0:
        raise ZeroReference("reference has zero energy; use snr_loss_zero_aware")
    err = float(np.sum((y - y_hat) ** 2))
    return 10.0 * np.log10(err + tau * ref_energy) - 10.0 * np.log10(ref_energy)


def snr_loss_zero_aware(y, y_hat, mixture, tau: float = 1e-3) -> float:
    """snr_loss that accepts an all-zero reference.

    For a zero reference the loss is 10*log10(|y_hat|^2 + tau*|mix|^2)
    - 10*log10(tau*|mix|^2): zero when the estimate is silent, growing
    with emitted energy.
    """
    y = _signal(y)
    if float(np.sum(y * y)) > 0.0:
        return snr_loss(y, y_hat, tau)
    y_hat = _signal(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"reference {y.shape} vs estimate {y_hat.shape}")
    mix_energy = float(np.sum(_signal(mixture) ** 2))
    if mix_energy == 0.0:
        raise ZeroMixture("zero-aware loss needs a mixture with nonzero energy")
    est_energy = float(np.sum(y_hat ** 2))
    floor = tau * mix_energy
    return 10.0 * np.log10(est_energy + floor) - 10.0 * np.log10(floor)


def snr_loss_gradient(y, y_hat, tau: float = 1e-3):
    """(loss, dloss/dy_hat) for the thresholded SNR loss."""
    y = _signal(y)
    y_hat = _signal(y_hat)
    loss = snr_loss(y, y_hat, tau)
    ref_energy = float(np.sum(y * y))
    denom = float(np.sum((y - y_hat) ** 2)) + tau * ref_energy
    grad = _DB_FACTOR * (y_hat - y) / denom
    return loss, grad


def snr_loss_zero_aware_gradient(y, y_hat, mixture, tau: float = 1e-3):
    """(loss, dloss/dy_hat) for the zero-aware variant; both branches."""
    y = _signal(y)
    y_hat = _signal(y_hat)
    if float(np.sum(y * y)) > 0.0:
        return snr_loss_gradient(y, y_hat, tau)
    loss = snr_loss_zero_aware(y, y_hat, mixture, tau)
    denom = float(np.sum(y_hat ** 2)) + tau * float(np.sum(_signal(mixture) ** 2))
    grad = _DB_FACTOR * y_hat / denom
    return loss, grad


# ---------------------------------------------------------------------------
# Assignment solvers
# ---------------------------------------------------------------------------

def _flatten_instance(x1, x2, s_hat):
    est = _stack_estimates(s_hat)
    x1 = _signal(x1)
    x2 = _signal(x2)
    if x1.shape != x2.shape or x1.shape != est.shape[1:]:
        raise ShapeMismatch(
            f"mixtures {x1.shape}/{x2.shape} vs estimates {est.shape[1:]}"
        )
    n = est.shape[0]
    return x1.ravel(), x2.ravel(), est.reshape(n, -1), est.shape[1:]


def _pair_loss(x1f, x2f, r1, r2, tau):
    e1 = float(np.sum(x1f * x1f))
    e2 = float(np.sum(x2f * x2f))
    if e1 == 0.0 or e2 == 0.0:
        raise ZeroReference("parent mixtures must have nonzero energy")
    d1 = float(np.sum((x1f - r1) ** 2))
    d2 = float(np.sum((x2f - r2) ** 2))
    return (10.0 * np.log10(d1 + tau * e1) - 10.0 * np.log10(e1)
            + 10.0 * np.log10(d2 + tau * e2) - 10.0 * np.log10(e2))


def _assignment_result(x1f, x2f, est2, rows, tau, trailing_shape) -> MixitResult:
    sel = rows.astype(bool)
    r1 = est2[~sel].sum(axis=0) if (~sel).any() else np.zeros_like(x1f)
    r2 = est2[sel].sum(axis=0) if sel.any() else np.zeros_like(x2f)
    loss = _pair_loss(x1f, x2f, r1, r2, tau)
    remixes = np.stack([r1, r2]).reshape((2,) + trailing_shape)
    return MixitResult(loss=loss, assignment=MixingMatrix.from_rows(rows),
                       remixes=remixes)


def exhaustive_mixit(x1, x2, s_hat, tau: float = 1e-3) -> MixitResult:
    """Minimize the paired SNR loss over all 2**N assignments.

    Ties break toward the lowest binary encoding (column n contributes
    bit n; bit 0 assigns to the first mixture).
    """
    x1f, x2f, est2, shape = _flatten_instance(x1, x2, s_hat)
    n = est2.shape[0]
    if n > MAX_EXHAUSTIVE_SOURCES:
        raise TooManySources(f"{n} sources; exhaustive search capped at "
                             f"{MAX_EXHAUSTIVE_SOURCES}")
    e1 = float(np.sum(x1f * x1f))
    e2 = float(np.sum(x2f * x2f))
    if e1 == 0.0 or e2 == 0.0:
        raise ZeroReference("parent mixtures must have nonzero energy")
    total = est2.sum(axis=0)
    bit_idx = np.arange(n)
    best_loss = np.inf
    best_code = 0
    for start in range(0, 1 << n, _ENUM_BLOCK):
        codes = np.arange(start, min(start + _ENUM_BLOCK, 1 << n))
        rows_blk = (codes[:, None] >> bit_idx) & 1          # (B, N)
        r2 = rows_blk.astype(np.float64) @ est2             # (B, K)
        r1 = total[None, :] - r2
        d1 = np.sum((x1f[None, :] - r1) ** 2, axis=1)
        d2 = np.sum((x2f[None, :] - r2) ** 2, axis=1)
        losses = (10.0 * np.log10(d1 + tau * e1) - 10.0 * np.log10(e1)
                  + 10.0 * np.log10(d2 + tau * e2) - 10.0 * np.log10(e2))
        k = int(np.argmin(losses))
        if losses[k] < best_loss:
            best_loss = float(losses[k])
            best_code = int(codes[k])
    rows = (best_code >> bit_idx) & 1
    return _assignment_result(x1f, x2f, est2, rows, tau, shape)


def least_squares_mix(x_stack, s_hat, ridge: float | None = None) -> np.ndarray:
    """Unconstrained least-squares mixing matrix X S^T (S S^T + ridge I)^-1.

    ridge=None applies the default 1e-8 * trace(Gram)/N, which keeps the
    Cholesky factorization alive when the model emits duplicate or silent
    sources early in training.
    """
    est2 = _stack_estimates(s_hat)
    est2 = est2.reshape(est2.shape[0], -1)
    x = np.asarray([_signal(v).ravel() for v in x_stack], dtype=np.float64) \
        if not isinstance(x_stack, np.ndarray) else \
        np.asarray(x_stack, dtype=np.float64).reshape(2, -1)
    if x.shape[0] != 2 or x.shape[1] != est2.shape[1]:
        raise ShapeMismatch(f"references {x.shape} vs estimates {est2.shape}")
    n = est2.shape[0]
    gram = est2 @ est2.T
    if ridge is None:
        ridge = 1e-8 * float(np.trace(gram)) / n
    elif ridge < 0:
        raise ShapeMismatch(f"ridge must be >= 0, got {ridge}")
    try:
        chol = np.linalg.cholesky(gram + ridge * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularGram(
            "Gram matrix not positive definite (duplicate or silent "
            "estimates); increase ridge"
        ) from exc
    rhs = est2 @ x.T                       # (N, 2)
    z = np.linalg.solve(chol, rhs)
    a_t = np.linalg.solve(chol.T, z)       # (N, 2)
    return a_t.T


def project_binary(a_real: np.ndarray) -> MixingMatrix:
    """Column-wise argmax to 1, the other entry to 0; ties go to row 1."""
    a = np.asarray(a_real, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != 2:
        raise ShapeMismatch(f"expected a 2xN matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise ShapeMismatch("projection input contains NaN/Inf")
    rows = (a[1] > a[0]).astype(np.int64)
    return MixingMatrix.from_rows(rows)


def efficient_mixit(x1, x2, s_hat, tau: float = 1e-3,
                    ridge: float | None = None) -> MixitResult:
    """Least-squares solve + binary projection instead of the 2**N search.

    Selects one candidate from the exhaustive feasible set, so its loss
    is never below exhaustive_mixit on the same inputs.
    """
    x1f, x2f, est2, shape = _flatten_instance(x1, x2, s_hat)
    a_real = least_squares_mix(np.stack([x1f, x2f]), est2, ridge)
    rows = project_binary(a_real).rows
    return _assignment_result(x1f, x2f, est2, rows, tau, shape)


def mixit_loss_gradient(x1, x2, s_hat, tau: float = 1e-3,
                        mode: str = "efficient",
                        ridge: float | None = None):
    """(dloss/d s_hat, MixitResult) with the assignment held fixed.

    dL/ds_n routes the remix gradient of whichever mixture source n was
    assigned to: (20/ln 10) * (r_b - x_b) / (|x_b - r_b|^2 + tau*|x_b|^2).
    """
    if mode == "exhaustive":
        res = exhaustive_mixit(x1, x2, s_hat, tau)
    elif mode == "efficient":
        res = efficient_mixit(x1, x2, s_hat, tau, ridge)
    else:
        raise ShapeMismatch(f"mode must be exhaustive|efficient, got {mode!r}")
    x1f, x2f, est2, shape = _flatten_instance(x1, x2, s_hat)
    remix = res.remixes.reshape(2, -1)
    grads = np.empty_like(remix)
    for b, xf in enumerate((x1f, x2f)):
        denom = float(np.sum((xf - remix[b]) ** 2)) + tau * float(np.sum(xf * xf))
        grads[b] = _DB_FACTOR * (remix[b] - xf) / denom
    grad = grads[res.assignment.rows].reshape((est2.shape[0],) + shape)
    return grad, res
