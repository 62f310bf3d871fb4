"""Synthetic data drawn from the model's own generative process."""

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .gibbs import LAMBDA_CAP, sample_data, sample_prior
from .model import BetaMatrix, FactorState, Hyperparams
from .randist import RngStream, _gamma, _new_state, _poisson
from .specfun import DomainError

__all__ = ["SyntheticData", "from_prior", "two_block"]

_TAG_BLOCK_FACTORS = 21
_TAG_BLOCK_COUNTS = 22


@dataclass
class SyntheticData:
    beta: BetaMatrix
    truth: FactorState
    y1: np.ndarray
    y2: np.ndarray
    row_groups: np.ndarray = None
    col_groups: np.ndarray = None


def from_prior(n_rows: int, n_cols: int, hyper: Hyperparams, seed: int) -> SyntheticData:
    """Factors from the gamma priors, counts y_r ~ Pois(lam_r), beta ~ Beta(eps + y)."""
    if n_rows < 1 or n_cols < 1:
        raise DomainError("dimensions must be positive")
    rng = RngStream(seed, 0)
    state, y1, y2 = sample_prior(n_rows, n_cols, hyper, rng)
    values = sample_data(y1, y2, hyper, rng)
    return SyntheticData(BetaMatrix.from_array(values), state, y1, y2)


@njit(parallel=True, cache=True)
def _block_factors(theta1, theta2, phi, rows, cols, strength, k0, k1):
    n, kk = theta1.shape
    m = phi.shape[1]
    for i in prange(n):
        st = _new_state(k0, k1, np.uint64(i), np.uint64(1), np.uint64(_TAG_BLOCK_FACTORS))
        for k in range(kk):
            hi = _gamma(st, 20.0, 20.0)
            lo = 0.05 * _gamma(st, 20.0, 20.0)
            # group k is high on component k for theta1 and low for theta2
            if rows[i] == k:
                theta1[i, k] = hi
                theta2[i, k] = lo
            else:
                theta1[i, k] = lo
                theta2[i, k] = hi
    for j in prange(m):
        st = _new_state(k0, k1, np.uint64(n + j), np.uint64(1),
                        np.uint64(_TAG_BLOCK_FACTORS))
        for k in range(kk):
            g = _gamma(st, 20.0, 20.0 / strength)
            phi[k, j] = g if cols[j] == k else 1e-3 * g


@njit(parallel=True, cache=True)
def _poisson_counts(theta1, theta2, phi, y1, y2, k0, k1):
    n, m = y1.shape
    kk = phi.shape[0]
    for i in prange(n):
        for j in range(m):
            lam1 = 0.0
            lam2 = 0.0
            for k in range(kk):
                lam1 += theta1[i, k] * phi[k, j]
                lam2 += theta2[i, k] * phi[k, j]
            st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(2),
                            np.uint64(_TAG_BLOCK_COUNTS))
            y1[i, j] = _poisson(st, min(lam1, LAMBDA_CAP))
            y2[i, j] = _poisson(st, min(lam2, LAMBDA_CAP))


def two_block(n_rows: int, n_cols: int, seed: int, strength: float = 5.0,
              hyper: Hyperparams = None) -> SyntheticData:
    """Two sample groups and two disjoint gene blocks.

    Component k loads on gene block k. Samples in group k are
    hypermethylated on component k (theta1 high, theta2 low) and
    hypomethylated on the other component, so the rho embedding separates
    the groups. Rows and columns are split in half.
    """
    if n_rows < 2 or n_cols < 2:
        raise DomainError("two-block data needs at least 2 rows and 2 columns")
    if not strength > 0:
        raise DomainError("strength must be positive")
    hyper = Hyperparams(K=2) if hyper is None else hyper
    rows = (np.arange(n_rows) >= n_rows // 2).astype(np.int64)
    cols = (np.arange(n_cols) >= n_cols // 2).astype(np.int64)
    theta1 = np.empty((n_rows, 2))
    theta2 = np.empty((n_rows, 2))
    phi = np.empty((2, n_cols))
    k0, k1 = RngStream(seed, 0).key
    _block_factors(theta1, theta2, phi, rows, cols, float(strength), k0, k1)
    y1 = np.empty((n_rows, n_cols), np.int64)
    y2 = np.empty((n_rows, n_cols), np.int64)
    _poisson_counts(theta1, theta2, phi, y1, y2, k0, k1)
    values = sample_data(y1, y2, hyper, RngStream(seed, 0), epoch=3)
    return SyntheticData(BetaMatrix.from_array(values), FactorState(theta1, theta2, phi),
                         y1, y2, rows, cols)
