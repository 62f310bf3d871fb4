"""Auxiliary-variable Gibbs sampler for DNCB matrix factorization.

One sweep, in order:

1. impute held-out cells, beta_ij ~ Beta(eps1 + y1_ij, eps2 + y2_ij)
2. gamma_tot_ij ~ Gam(eps1 + eps2 + y1_ij + y2_ij, 1); gamma_r = share_r * gamma_tot
3. y_r,ij ~ Bessel(eps_r - 1, 2 sqrt(gamma_r,ij * lam_r,ij))
4. split y_r,ij into K subcounts ~ Mult(y_r,ij, theta_r[i, :] * phi[:, j])
5. theta_r[i, k] ~ Gam(a0 + sum_j y_r,ijk, b0 + sum_j phi[k, j])
6. phi[k, j] ~ Gam(e0 + sum_i sum_r y_r,ijk, f0 + sum_i sum_r theta_r[i, k])

Each kernel opens one random substream per entry keyed by (entry, sweep,
step), so a run is bit-reproducible for a seed whatever the thread count.
Subcounts are never stored per cell; they are folded straight into the two
sufficient statistics used in steps 5 and 6.
"""

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from numba import njit, prange

from .model import FACTOR_FLOOR, BetaMatrix, FactorState, Hyperparams
from .randist import (RngStream, _bessel, _beta, _gamma, _multinomial_into,
                      _new_state, _poisson)
from .specfun import DomainError

__all__ = [
    "AuxState",
    "GewekeReport",
    "PosteriorChain",
    "SamplerConfig",
    "geweke_check",
    "init_state",
    "log_joint",
    "run",
    "sample_counts",
    "sample_data",
    "sample_gamma_aux",
    "sample_prior",
    "thin_counts",
    "update_factors",
]

log = logging.getLogger(__name__)

TAG_IMPUTE = 1
TAG_GAMMA = 2
TAG_COUNTS = 3
TAG_THIN = 4
TAG_THETA = 5
TAG_PHI = 6
TAG_INIT_THETA = 7
TAG_INIT_PHI = 8
TAG_INIT_Y = 9
TAG_DATA = 10

COUNT_LIMIT = 2 ** 31 - 1
LAMBDA_CAP = 1e12
N_CHUNKS = 64


@dataclass
class SamplerConfig:
    """Sweep schedule. ``total`` counts the sweeps run after ``burnin``."""

    burnin: int = 1000
    total: int = 2000
    thin: int = 20
    seed: int = 0
    parallel: bool = False
    workers: Optional[int] = None
    stream_id: int = 0

    def __post_init__(self):
        if self.burnin < 0:
            raise DomainError(f"burnin must be >= 0, got {self.burnin}")
        if self.total < 1:
            raise DomainError(f"total must be >= 1, got {self.total}")
        if not 1 <= self.thin <= self.total:
            raise DomainError(f"thin must lie in [1, total], got {self.thin}")
        if self.workers is not None and self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")

    def saved_sweeps(self) -> list:
        return list(range(self.burnin + self.thin, self.burnin + self.total + 1, self.thin))


@dataclass
class AuxState:
    """Augmentation variables for every cell plus folded subcount statistics.

    ``theta_counts[r, i, k]`` is sum_j y_r,ijk and ``phi_counts[k, j]`` is
    sum_i sum_r y_r,ijk.
    """

    y1: np.ndarray
    y2: np.ndarray
    gamma_tot: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    theta_counts: np.ndarray
    phi_counts: np.ndarray
    n_capped: int = 0

    @classmethod
    def zeros(cls, n: int, m: int, k: int) -> "AuxState":
        return cls(np.zeros((n, m), np.int64), np.zeros((n, m), np.int64),
                   np.ones((n, m)), np.full((n, m), 0.5), np.full((n, m), 0.5),
                   np.zeros((2, n, k), np.int64), np.zeros((k, m), np.int64))

    def copy(self) -> "AuxState":
        return AuxState(self.y1.copy(), self.y2.copy(), self.gamma_tot.copy(),
                        self.gamma1.copy(), self.gamma2.copy(),
                        self.theta_counts.copy(), self.phi_counts.copy(), self.n_capped)


@dataclass
class PosteriorChain:
    snapshots: list
    config: SamplerConfig
    hyper: Hyperparams
    trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_capped: int = 0

    @property
    def sweeps(self) -> list:
        return [s for s, _ in self.snapshots]

    @property
    def states(self) -> list:
        return [st for _, st in self.snapshots]

    def __len__(self):
        return len(self.snapshots)


# -- kernels -----------------------------------------------------------------

@njit(parallel=True, cache=True)
def _impute_kernel(beta, cells, y1, y2, eps1, eps2, k0, k1, epoch):
    m = beta.shape[1]
    for c in prange(cells.shape[0]):
        idx = cells[c]
        i = idx // m
        j = idx % m
        st = _new_state(k0, k1, np.uint64(idx), np.uint64(epoch), np.uint64(TAG_IMPUTE))
        beta[i, j] = _beta(st, eps1 + y1[i, j], eps2 + y2[i, j])


@njit(parallel=True, cache=True)
def _gamma_kernel(beta, y1, y2, eps_tot, gtot, g1, g2, k0, k1, epoch):
    n, m = beta.shape
    for i in prange(n):
        for j in range(m):
            st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(epoch),
                            np.uint64(TAG_GAMMA))
            g = _gamma(st, eps_tot + y1[i, j] + y2[i, j], 1.0)
            g1[i, j] = beta[i, j] * g
            g2[i, j] = (1.0 - beta[i, j]) * g
            # stored as the rounded sum so that g1 + g2 == gtot holds bitwise
            gtot[i, j] = g1[i, j] + g2[i, j]


@njit(cache=True)
def _capped_bessel(st, v, gam, lam):
    y = _bessel(st, v, 2.0 * math.sqrt(gam * lam))
    if y > COUNT_LIMIT:
        y = _bessel(st, v, 2.0 * math.sqrt(gam * min(lam, LAMBDA_CAP)))
        return min(y, COUNT_LIMIT), 1
    return y, 0


@njit(parallel=True, cache=True)
def _counts_kernel(g1, g2, theta1, theta2, phi, v1, v2, y1, y2, k0, k1, epoch):
    n, m = g1.shape
    kk = phi.shape[0]
    capped = 0
    for i in prange(n):
        for j in range(m):
            lam1 = 0.0
            lam2 = 0.0
            for k in range(kk):
                lam1 += theta1[i, k] * phi[k, j]
                lam2 += theta2[i, k] * phi[k, j]
            st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(epoch),
                            np.uint64(TAG_COUNTS))
            a, c1 = _capped_bessel(st, v1, g1[i, j], lam1)
            b, c2 = _capped_bessel(st, v2, g2[i, j], lam2)
            y1[i, j] = a
            y2[i, j] = b
            capped += c1 + c2
    return capped


@njit(parallel=True, cache=True)
def _thin_kernel(y1, y2, theta1, theta2, phi, k0, k1, epoch, n_chunks,
                 theta_counts, phi_counts):
    n, m = y1.shape
    kk = phi.shape[0]
    per = (n + n_chunks - 1) // n_chunks
    acc = np.zeros((n_chunks, kk, m), dtype=np.int64)
    theta_counts[:] = 0
    for c in prange(n_chunks):
        w = np.empty(kk)
        sub = np.empty(kk, dtype=np.int64)
        for i in range(c * per, min(n, (c + 1) * per)):
            for j in range(m):
                st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(epoch),
                                np.uint64(TAG_THIN))
                for r in range(2):
                    y = y1[i, j] if r == 0 else y2[i, j]
                    if y == 0:
                        continue
                    tot = 0.0
                    for k in range(kk):
                        w[k] = (theta1[i, k] if r == 0 else theta2[i, k]) * phi[k, j]
                        tot += w[k]
                    if not tot > 0.0:
                        w[:] = 1.0
                    _multinomial_into(st, y, w, sub)
                    for k in range(kk):
                        theta_counts[r, i, k] += sub[k]
                        acc[c, k, j] += sub[k]
    phi_counts[:] = 0
    for c in range(n_chunks):
        phi_counts += acc[c]


@njit(parallel=True, cache=True)
def _factor_kernel(theta_counts, phi_counts, theta1, theta2, phi, a0, b0, e0, f0,
                   k0, k1, epoch):
    n, kk = theta1.shape
    m = phi.shape[1]
    phisum = np.zeros(kk)
    for k in range(kk):
        for j in range(m):
            phisum[k] += phi[k, j]
    for i in prange(n):
        st = _new_state(k0, k1, np.uint64(i), np.uint64(epoch), np.uint64(TAG_THETA))
        for k in range(kk):
            theta1[i, k] = max(_gamma(st, a0 + theta_counts[0, i, k], b0 + phisum[k]),
                               FACTOR_FLOOR)
            theta2[i, k] = max(_gamma(st, a0 + theta_counts[1, i, k], b0 + phisum[k]),
                               FACTOR_FLOOR)
    thetasum = np.zeros(kk)
    for i in range(n):
        for k in range(kk):
            thetasum[k] += theta1[i, k] + theta2[i, k]
    for j in prange(m):
        st = _new_state(k0, k1, np.uint64(j), np.uint64(epoch), np.uint64(TAG_PHI))
        for k in range(kk):
            phi[k, j] = max(_gamma(st, e0 + phi_counts[k, j], f0 + thetasum[k]),
                            FACTOR_FLOOR)


@njit(parallel=True, cache=True)
def _prior_kernel(theta1, theta2, phi, y1, y2, a0, b0, e0, f0, k0, k1, epoch):
    n, kk = theta1.shape
    m = phi.shape[1]
    for i in prange(n):
        st = _new_state(k0, k1, np.uint64(i), np.uint64(epoch), np.uint64(TAG_INIT_THETA))
        for k in range(kk):
            theta1[i, k] = max(_gamma(st, a0, b0), FACTOR_FLOOR)
            theta2[i, k] = max(_gamma(st, a0, b0), FACTOR_FLOOR)
    for j in prange(m):
        st = _new_state(k0, k1, np.uint64(j), np.uint64(epoch), np.uint64(TAG_INIT_PHI))
        for k in range(kk):
            phi[k, j] = max(_gamma(st, e0, f0), FACTOR_FLOOR)
    for i in prange(n):
        for j in range(m):
            lam1 = 0.0
            lam2 = 0.0
            for k in range(kk):
                lam1 += theta1[i, k] * phi[k, j]
                lam2 += theta2[i, k] * phi[k, j]
            st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(epoch),
                            np.uint64(TAG_INIT_Y))
            y1[i, j] = _poisson(st, min(lam1, LAMBDA_CAP))
            y2[i, j] = _poisson(st, min(lam2, LAMBDA_CAP))


@njit(parallel=True, cache=True)
def _data_kernel(y1, y2, eps1, eps2, beta, k0, k1, epoch):
    n, m = y1.shape
    for i in prange(n):
        for j in range(m):
            st = _new_state(k0, k1, np.uint64(i * m + j), np.uint64(epoch),
                            np.uint64(TAG_DATA))
            beta[i, j] = _beta(st, eps1 + y1[i, j], eps2 + y2[i, j])


@njit(parallel=True, cache=True)
def _log_joint_kernel(beta, y1, y2, theta1, theta2, phi, eps1, eps2, a0, b0, e0, f0):
    n, m = beta.shape
    kk = phi.shape[0]
    rows = np.zeros(n)
    for i in prange(n):
        s = 0.0
        for j in range(m):
            lam1 = 0.0
            lam2 = 0.0
            for k in range(kk):
                lam1 += theta1[i, k] * phi[k, j]
                lam2 += theta2[i, k] * phi[k, j]
            a = eps1 + y1[i, j]
            b = eps2 + y2[i, j]
            x = beta[i, j]
            s += ((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
                  - math.lgamma(a) - math.lgamma(b) + math.lgamma(a + b))
            s -= lam1 + lam2
            if y1[i, j] > 0:
                s += y1[i, j] * math.log(lam1) - math.lgamma(y1[i, j] + 1.0)
            if y2[i, j] > 0:
                s += y2[i, j] * math.log(lam2) - math.lgamma(y2[i, j] + 1.0)
        for k in range(kk):
            for t in (theta1[i, k], theta2[i, k]):
                s += a0 * math.log(b0) - math.lgamma(a0) + (a0 - 1.0) * math.log(t) - b0 * t
        rows[i] = s
    total = 0.0
    for i in range(n):
        total += rows[i]
    for k in range(kk):
        for j in range(m):
            t = phi[k, j]
            total += e0 * math.log(f0) - math.lgamma(e0) + (e0 - 1.0) * math.log(t) - f0 * t
    return total


# -- thread control ----------------------------------------------------------

@contextmanager
def _threads(parallel: bool, workers: Optional[int] = None):
    old = numba.get_num_threads()
    want = 1 if not parallel else min(workers or numba.config.NUMBA_NUM_THREADS,
                                      numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(want)
    try:
        yield
    finally:
        numba.set_num_threads(old)


# -- single steps --------------------------------------------------------------

def _values(beta):
    return beta.values if isinstance(beta, BetaMatrix) else np.asarray(beta, dtype=float)


def sample_gamma_aux(beta, aux: AuxState, hyper: Hyperparams, rng: RngStream,
                     epoch: Optional[int] = None) -> AuxState:
    """Redraw gamma_tot from Gam(eps_tot + y_tot, 1) and split it by beta.

    The draw of gamma_tot ignores beta entirely: sum and proportion of two
    independent gammas are independent.
    """
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    _gamma_kernel(_values(beta), aux.y1, aux.y2, hyper.eps_tot, aux.gamma_tot,
                  aux.gamma1, aux.gamma2, k0, k1, epoch)
    return aux


def sample_counts(aux: AuxState, state: FactorState, hyper: Hyperparams, rng: RngStream,
                  epoch: Optional[int] = None, swap_eps: bool = False) -> AuxState:
    """Redraw y_r from Bessel(eps_r - 1, 2 sqrt(gamma_r lam_r)).

    ``swap_eps`` exchanges the two orders; it exists only to check that the
    joint-distribution test catches a wrong conditional.
    """
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    v1, v2 = hyper.eps1 - 1.0, hyper.eps2 - 1.0
    if swap_eps:
        v1, v2 = v2, v1
    capped = _counts_kernel(aux.gamma1, aux.gamma2, state.theta1, state.theta2,
                            state.phi, v1, v2, aux.y1, aux.y2, k0, k1, epoch)
    if capped:
        log.warning("%d count draws exceeded %d; redrawn with lambda capped at %g",
                    capped, COUNT_LIMIT, LAMBDA_CAP)
        aux.n_capped += int(capped)
    return aux


def thin_counts(aux: AuxState, state: FactorState, rng: RngStream,
                epoch: Optional[int] = None) -> AuxState:
    """Allocate each y_r,ij over the K components and fold into the statistics."""
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    n = aux.y1.shape[0]
    _thin_kernel(aux.y1, aux.y2, state.theta1, state.theta2, state.phi, k0, k1, epoch,
                 min(N_CHUNKS, n), aux.theta_counts, aux.phi_counts)
    return aux


def update_factors(aux: AuxState, state: FactorState, hyper: Hyperparams, rng: RngStream,
                   epoch: Optional[int] = None) -> FactorState:
    """Gamma-Poisson conjugate updates, Theta first and then Phi (in place)."""
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    _factor_kernel(aux.theta_counts, aux.phi_counts, state.theta1, state.theta2,
                   state.phi, hyper.a0, hyper.b0, hyper.e0, hyper.f0, k0, k1, epoch)
    return state


def sample_prior(n: int, m: int, hyper: Hyperparams, rng: RngStream,
                 epoch: Optional[int] = None):
    """Forward draw of (FactorState, y1, y2) from the priors and Poisson counts."""
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    kk = hyper.K
    theta1 = np.empty((n, kk))
    theta2 = np.empty((n, kk))
    phi = np.empty((kk, m))
    y1 = np.empty((n, m), np.int64)
    y2 = np.empty((n, m), np.int64)
    _prior_kernel(theta1, theta2, phi, y1, y2, hyper.a0, hyper.b0, hyper.e0, hyper.f0,
                  k0, k1, epoch)
    return FactorState(theta1, theta2, phi), y1, y2


def sample_data(y1, y2, hyper: Hyperparams, rng: RngStream, epoch: Optional[int] = None):
    """beta_ij ~ Beta(eps1 + y1_ij, eps2 + y2_ij) for every cell."""
    epoch = rng.next_epoch() if epoch is None else epoch
    k0, k1 = rng.key
    beta = np.empty(y1.shape)
    _data_kernel(y1, y2, hyper.eps1, hyper.eps2, beta, k0, k1, epoch)
    return beta


def init_state(n: int, m: int, hyper: Hyperparams, rng: RngStream):
    """Factors from their priors and counts from Pois(lam), all at epoch 0."""
    state, y1, y2 = sample_prior(n, m, hyper, rng, epoch=0)
    aux = AuxState.zeros(n, m, hyper.K)
    aux.y1[:] = y1
    aux.y2[:] = y2
    return state, aux


def log_joint(beta, aux: AuxState, state: FactorState, hyper: Hyperparams) -> float:
    """log p(beta, y, Theta1, Theta2, Phi) with the gamma variables integrated out."""
    return float(_log_joint_kernel(_values(beta), aux.y1, aux.y2, state.theta1,
                                   state.theta2, state.phi, hyper.eps1, hyper.eps2,
                                   hyper.a0, hyper.b0, hyper.e0, hyper.f0))


class _Sweeper:
    """Holds the working copy of the data and runs complete sweeps."""

    def __init__(self, values, held_out, hyper, rng, state, aux, swap_eps=False):
        self.beta = np.array(values, dtype=float)
        self.cells = np.flatnonzero(held_out).astype(np.int64)
        self.hyper = hyper
        self.rng = rng
        self.state = state
        self.aux = aux
        self.swap_eps = swap_eps

    def sweep(self, epoch: int):
        h, aux, state, rng = self.hyper, self.aux, self.state, self.rng
        if self.cells.size:
            k0, k1 = rng.key
            _impute_kernel(self.beta, self.cells, aux.y1, aux.y2, h.eps1, h.eps2,
                           k0, k1, epoch)
        sample_gamma_aux(self.beta, aux, h, rng, epoch)
        sample_counts(aux, state, h, rng, epoch, swap_eps=self.swap_eps)
        thin_counts(aux, state, rng, epoch)
        update_factors(aux, state, h, rng, epoch)


def _mask_array(mask, shape):
    if mask is None:
        return np.zeros(shape, dtype=bool)
    if hasattr(mask, "to_array"):
        arr = mask.to_array(shape)
    else:
        arr = np.asarray(mask, dtype=bool)
    if arr.shape != tuple(shape):
        raise DomainError(f"mask shape {arr.shape} does not match data shape {tuple(shape)}")
    return arr


def run(beta, mask, hyper: Hyperparams, config: SamplerConfig,
        progress=None) -> PosteriorChain:
    """Run the sampler and keep every ``thin``-th state after burn-in.

    ``mask`` may be a HoldoutMask, a boolean N x M array or None. Held-out
    cells are never read: they are imputed at the start of every sweep.
    """
    values = _values(beta)
    if values.ndim != 2:
        raise DomainError("beta must be an N x M matrix")
    held = _mask_array(mask, values.shape)
    n, m = values.shape
    rng = RngStream(config.seed, config.stream_id)
    saved = set(config.saved_sweeps())
    snapshots = []
    trace = np.empty(config.burnin + config.total)
    with _threads(config.parallel, config.workers):
        state, aux = init_state(n, m, hyper, rng)
        sw = _Sweeper(values, held, hyper, rng, state, aux)
        t0 = time.time()
        for s in range(1, config.burnin + config.total + 1):
            sw.sweep(s)
            trace[s - 1] = log_joint(sw.beta, aux, state, hyper)
            if s in saved:
                snapshots.append((s, state.copy()))
            if progress is not None:
                progress(s, time.time() - t0)
    return PosteriorChain(snapshots, config, hyper, trace, aux.n_capped)


# -- joint-distribution test -----------------------------------------------------

@dataclass
class GewekeReport:
    """Per-statistic z-scores comparing forward and successive-conditional arms."""

    z: dict
    n_samples: int

    @property
    def max_abs_z(self) -> float:
        return float(max(abs(v) for v in self.z.values()))

    def worst(self, n: int = 5) -> list:
        return sorted(self.z.items(), key=lambda kv: -abs(kv[1]))[:n]


def _flatten(state, y1, y2, beta):
    return np.concatenate([state.theta1.ravel(), state.theta2.ravel(), state.phi.ravel(),
                           y1.ravel().astype(float), y2.ravel().astype(float),
                           np.ravel(beta)])


def _stat_names(n, m, k):
    names = []
    for name, shape in (("theta1", (n, k)), ("theta2", (n, k)), ("phi", (k, m)),
                        ("y1", (n, m)), ("y2", (n, m)), ("beta", (n, m))):
        names += [f"{name}[{i},{j}]" for i in range(shape[0]) for j in range(shape[1])]
    return names


def _batch_se(x, n_batches=50):
    # standard error of the mean under autocorrelation, by batch means
    n = x.shape[0] // n_batches * n_batches
    means = x[:n].reshape(n_batches, -1, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def geweke_check(hyper: Hyperparams, dims=(3, 4), n_samples: int = 10_000,
                 thin: int = 5, seed: int = 0, swap_eps: bool = False) -> GewekeReport:
    """Compare first and second moments of (Theta, Phi, y, beta) under two arms.

    The forward arm draws everything from the generative model. The
    successive-conditional arm alternates a data redraw, beta ~ p(beta | y),
    with a Gibbs sweep, keeping one state every ``thin`` sweeps. Both target
    the same joint, so every z-score should look standard normal.
    """
    n, m = dims
    fwd_rng = RngStream(seed, 1)
    fwd = np.empty((n_samples, 2 * n * hyper.K + hyper.K * m + 3 * n * m))
    with _threads(False):
        for s in range(n_samples):
            state, y1, y2 = sample_prior(n, m, hyper, fwd_rng, epoch=s + 1)
            beta = sample_data(y1, y2, hyper, fwd_rng, epoch=s + 1)
            fwd[s] = _flatten(state, y1, y2, beta)

        sc_rng = RngStream(seed, 2)
        state, y1, y2 = sample_prior(n, m, hyper, sc_rng, epoch=0)
        beta = sample_data(y1, y2, hyper, sc_rng, epoch=0)
        aux = AuxState.zeros(n, m, hyper.K)
        aux.y1[:] = y1
        aux.y2[:] = y2
        sw = _Sweeper(beta, np.ones((n, m), bool), hyper, sc_rng, state, aux,
                      swap_eps=swap_eps)
        succ = np.empty_like(fwd)
        epoch = 0
        for s in range(n_samples):
            for _ in range(thin):
                epoch += 1
                sw.sweep(epoch)
            succ[s] = _flatten(state, aux.y1, aux.y2, sw.beta)

    names = _stat_names(n, m, hyper.K)
    z = {}
    for label, f_vals, s_vals in (("mean", fwd, succ), ("second", fwd ** 2, succ ** 2)):
        diff = f_vals.mean(axis=0) - s_vals.mean(axis=0)
        se = np.sqrt(f_vals.var(axis=0, ddof=1) / n_samples + _batch_se(s_vals) ** 2)
        for name, d, e in zip(names, diff, se):
            z[f"{label} {name}"] = float(d / e) if e > 0 else 0.0
    return GewekeReport(z, n_samples)
