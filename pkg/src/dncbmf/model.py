"""Model types, the DNCB density and mean, factorized rates and the rho embedding."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit, prange

from .specfun import (MAX_TERMS, OK, TOL, ConvergenceError, DomainError,
                      _log_psi2_core, _logaddexp, kummer_1f1)

__all__ = [
    "CLAMP_DELTA",
    "FACTOR_FLOOR",
    "BetaMatrix",
    "Embedding",
    "FactorState",
    "Hyperparams",
    "RatePair",
    "conditional_mean",
    "dncb_log_pdf",
    "dncb_log_pdf_many",
    "dncb_mean",
    "embedding",
    "rates",
]

CLAMP_DELTA = 1e-6
FACTOR_FLOOR = 1e-300


@dataclass(frozen=True)
class Hyperparams:
    eps1: float = 0.75
    eps2: float = 0.75
    a0: float = 0.1
    b0: float = 0.1
    e0: float = 0.1
    f0: float = 0.1
    K: int = 10

    def __post_init__(self):
        for name in ("eps1", "eps2", "a0", "b0", "e0", "f0"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be positive and finite, got {val}")
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K}")

    @property
    def eps_tot(self) -> float:
        return self.eps1 + self.eps2


@dataclass
class BetaMatrix:
    """Observed N x M values in (0, 1) with row (sample) and column (gene) labels.

    Use :meth:`from_array` to build one from raw data; it applies the
    boundary clamp and records how many cells were moved.
    """

    values: np.ndarray
    row_ids: list
    col_ids: list
    n_clamped: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DomainError(f"expected a non-empty 2-D matrix, got shape {self.values.shape}")
        n, m = self.values.shape
        if len(self.row_ids) != n or len(self.col_ids) != m:
            raise DomainError(
                f"label counts ({len(self.row_ids)}, {len(self.col_ids)}) "
                f"do not match shape {self.values.shape}")
        lo, hi = CLAMP_DELTA, 1.0 - CLAMP_DELTA
        if np.any(~np.isfinite(self.values)) or np.any((self.values < lo) | (self.values > hi)):
            raise DomainError(f"values must lie in [{lo}, {hi}]; use BetaMatrix.from_array")

    @classmethod
    def from_array(cls, values, row_ids: Optional[Sequence] = None,
                   col_ids: Optional[Sequence] = None) -> "BetaMatrix":
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise DomainError(f"expected a 2-D matrix, got {values.ndim} dimensions")
        bad = ~np.isfinite(values) | (values < 0.0) | (values > 1.0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DomainError(f"value {values[i, j]!r} at ({i}, {j}) is outside [0, 1]")
        clamped = np.clip(values, CLAMP_DELTA, 1.0 - CLAMP_DELTA)
        n_clamped = int(np.count_nonzero(clamped != values))
        n, m = values.shape
        rows = list(row_ids) if row_ids is not None else [f"s{i}" for i in range(n)]
        cols = list(col_ids) if col_ids is not None else [f"g{j}" for j in range(m)]
        return cls(clamped, rows, cols, n_clamped)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class FactorState:
    """Theta1, Theta2 (N x K) and Phi (K x M), all strictly positive."""

    theta1: np.ndarray
    theta2: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.theta1.shape != self.theta2.shape or self.theta1.ndim != 2:
            raise DomainError("theta1 and theta2 must be N x K matrices of equal shape")
        if self.phi.ndim != 2 or self.phi.shape[0] != self.theta1.shape[1]:
            raise DomainError("phi must be K x M with K matching theta")
        for name in ("theta1", "theta2", "phi"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise DomainError(f"{name} must be finite and non-negative")
            np.maximum(arr, FACTOR_FLOOR, out=arr)

    @property
    def shape(self):
        return self.theta1.shape[0], self.phi.shape[1], self.phi.shape[0]

    def copy(self) -> "FactorState":
        return FactorState(self.theta1.copy(), self.theta2.copy(), self.phi.copy())

    def rate_matrices(self):
        """Full N x M matrices (lam1, lam2)."""
        return self.theta1 @ self.phi, self.theta2 @ self.phi


class RatePair(NamedTuple):
    lam1: float
    lam2: float
    lam_tot: float


@dataclass
class Embedding:
    rho: np.ndarray
    row_ids: list = field(default_factory=list)


def rates(state: FactorState, i: int, j: int) -> RatePair:
    """Non-centralities of cell (i, j): lam_r = sum_k theta_r[i, k] phi[k, j]."""
    n, m, _ = state.shape
    if not (0 <= i < n and 0 <= j < m):
        raise IndexError(f"cell ({i}, {j}) outside a {n} x {m} matrix")
    lam1 = float(state.theta1[i] @ state.phi[:, j])
    lam2 = float(state.theta2[i] @ state.phi[:, j])
    return RatePair(lam1, lam2, lam1 + lam2)


def conditional_mean(e1: float, e2: float, y1: int, y2: int) -> float:
    """E[beta | y1, y2] = (e1 + y1) / (e1 + e2 + y1 + y2)."""
    if not (e1 > 0 and e2 > 0):
        raise DomainError("shape parameters must be positive")
    if y1 < 0 or y2 < 0:
        raise DomainError("counts must be non-negative")
    return (e1 + y1) / (e1 + e2 + y1 + y2)


def embedding(state: FactorState) -> Embedding:
    """rho[i, k] = theta1[i, k] / (theta1[i, k] + theta2[i, k])."""
    # ratio form that survives both entries sitting at the floor
    t1, t2 = state.theta1, state.theta2
    big = np.maximum(t1, t2)
    rho = (t1 / big) / (t1 / big + t2 / big)
    return Embedding(rho)


@njit(cache=True)
def _log_beta_pdf(x, a, b):
    return ((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
            - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))


@njit(cache=True)
def _dncb_log_pdf_core(x, e1, e2, l1, l2, tol, max_terms):
    lpsi, _, status = _log_psi2_core(e1 + e2, e1, e2, l1 * x, l2 * (1.0 - x),
                                     tol, max_terms)
    return _log_beta_pdf(x, e1, e2) - (l1 + l2) + lpsi, status


@njit(parallel=True, cache=True)
def _dncb_log_pdf_vec(x, e1, e2, l1, l2, tol, max_terms, out, status):
    for i in prange(x.shape[0]):
        out[i], status[i] = _dncb_log_pdf_core(x[i], e1, e2, l1[i], l2[i], tol, max_terms)


def _check_shapes(e1, e2):
    if not (np.isfinite(e1) and np.isfinite(e2) and e1 > 0 and e2 > 0):
        raise DomainError(f"shape parameters must be positive, got ({e1}, {e2})")


def dncb_log_pdf(beta: float, e1: float, e2: float, l1: float, l2: float, *,
                 tol: float = TOL, max_terms: int = MAX_TERMS) -> float:
    """Log density of DNCB(e1, e2, l1, l2) at ``beta`` in (0, 1).

    log Beta(beta; e1, e2) - (l1 + l2) + log Psi2[e1+e2; e1, e2; l1 beta, l2 (1-beta)].
    """
    _check_shapes(e1, e2)
    if not (0.0 < beta < 1.0):
        raise DomainError(f"beta must lie strictly inside (0, 1), got {beta}")
    if not (l1 >= 0 and l2 >= 0 and np.isfinite(l1) and np.isfinite(l2)):
        raise DomainError(f"non-centralities must be finite and >= 0, got ({l1}, {l2})")
    val, status = _dncb_log_pdf_core(float(beta), float(e1), float(e2), float(l1),
                                     float(l2), tol, max_terms)
    if status != OK:
        raise ConvergenceError(
            f"DNCB density at beta={beta} (l1={l1}, l2={l2}) did not converge")
    return val


def dncb_log_pdf_many(beta, e1: float, e2: float, l1, l2, *, tol: float = TOL,
                      max_terms: int = MAX_TERMS, return_status: bool = False):
    """Vectorized :func:`dncb_log_pdf` over broadcast arrays of beta, l1, l2.

    With ``return_status`` the convergence flags are returned instead of
    raising on the first failure (failed cells hold a truncated value).
    """
    _check_shapes(e1, e2)
    b, a1, a2 = np.broadcast_arrays(np.asarray(beta, float), np.asarray(l1, float),
                                    np.asarray(l2, float))
    shape = b.shape
    b, a1, a2 = (np.ascontiguousarray(t).ravel() for t in (b, a1, a2))
    if np.any(~((b > 0) & (b < 1))):
        raise DomainError("beta values must lie strictly inside (0, 1)")
    if np.any(~np.isfinite(a1) | ~np.isfinite(a2) | (a1 < 0) | (a2 < 0)):
        raise DomainError("non-centralities must be finite and >= 0")
    out = np.empty(b.size)
    status = np.zeros(b.size, dtype=np.int64)
    _dncb_log_pdf_vec(b, float(e1), float(e2), a1, a2, tol, max_terms, out, status)
    failed = (status != OK).reshape(shape)
    out = out.reshape(shape)
    if return_status:
        return out, failed
    if failed.any():
        raise ConvergenceError(f"{int(failed.sum())} DNCB density evaluations did not converge")
    return out


def dncb_mean(e1: float, e2: float, l1: float, l2: float) -> float:
    """First moment of DNCB(e1, e2, l1, l2) through two Kummer functions.

    E[beta] = e1 / (e e^L) [1F1(e; e+1; L) + e l1 / (e1 (e+1)) 1F1(e+1; e+2; L)]
    with e = e1 + e2 and L = l1 + l2.
    """
    _check_shapes(e1, e2)
    if not (l1 >= 0 and l2 >= 0 and np.isfinite(l1) and np.isfinite(l2)):
        raise DomainError(f"non-centralities must be finite and >= 0, got ({l1}, {l2})")
    e = e1 + e2
    lam = l1 + l2
    log_terms = kummer_1f1(e, e + 1.0, lam)
    if l1 > 0:
        log_terms = float(_logaddexp(
            log_terms,
            math.log(e * l1 / (e1 * (e + 1.0))) + kummer_1f1(e + 1.0, e + 2.0, lam)))
    return math.exp(math.log(e1 / e) - lam + log_terms)
