"""Holdout masks and pointwise predictive density (PPD) scoring."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import beta as beta_dist

from .model import CLAMP_DELTA, BetaMatrix, Hyperparams, dncb_log_pdf_many
from .specfun import MAX_TERMS, DomainError

__all__ = ["BetaBaseline", "HoldoutMask", "PpdReport", "beta_baseline_ppd", "holdout_count",
           "make_mask", "ppd"]


def holdout_count(n_cells: int, fraction: float) -> int:
    """Number of held-out cells, fraction * n_cells rounded half up."""
    return int(math.floor(fraction * n_cells + 0.5))


@dataclass(frozen=True)
class HoldoutMask:
    """A set of held-out (row, col) cells.

    ``held_out`` is a (n, 2) integer array sorted row-major. ``fraction`` and
    ``seed`` record how the mask was drawn (``None`` for masks read from file).
    """

    held_out: np.ndarray
    fraction: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        cells = np.asarray(self.held_out, dtype=np.int64).reshape(-1, 2)
        if cells.size and cells.min() < 0:
            raise DomainError("mask indices must be non-negative")
        order = np.lexsort((cells[:, 1], cells[:, 0]))
        cells = cells[order]
        if len(cells) > 1 and np.any(np.all(cells[1:] == cells[:-1], axis=1)):
            raise DomainError("mask contains duplicate cells")
        object.__setattr__(self, "held_out", cells)

    def __len__(self):
        return len(self.held_out)

    def to_array(self, shape) -> np.ndarray:
        n, m = shape
        cells = self.held_out
        if cells.size and (cells[:, 0].max() >= n or cells[:, 1].max() >= m):
            raise DomainError(f"mask cells fall outside a {n} x {m} matrix")
        out = np.zeros((n, m), dtype=bool)
        out[cells[:, 0], cells[:, 1]] = True
        return out

    @classmethod
    def from_array(cls, arr) -> "HoldoutMask":
        return cls(np.argwhere(np.asarray(arr, dtype=bool)))


def make_mask(n_rows: int, n_cols: int, fraction: float, seed: int) -> HoldoutMask:
    """Uniform random subset of round(fraction * N * M) cells, without replacement."""
    if not (0.0 < fraction < 1.0):
        raise DomainError(f"mask fraction must lie in (0, 1), got {fraction}")
    if n_rows < 1 or n_cols < 1:
        raise DomainError("matrix dimensions must be positive")
    total = n_rows * n_cols
    count = holdout_count(total, fraction)
    flat = np.random.default_rng(seed).choice(total, size=count, replace=False)
    cells = np.column_stack(np.divmod(flat, n_cols))
    return HoldoutMask(cells, fraction, seed)


@dataclass
class PpdReport:
    log_ppd_total: float
    scaled_ppd: float
    per_cell_log: np.ndarray
    cells: np.ndarray
    n_failed: int = 0
    n_clamped: int = 0

    @property
    def n_held_out(self) -> int:
        return len(self.per_cell_log)


def ppd(chain, beta, mask, hyper: Optional[Hyperparams] = None, *,
        max_terms: int = MAX_TERMS) -> PpdReport:
    """Score held-out cells by the DNCB density averaged over posterior snapshots.

    For each cell, log (1/S) sum_s p(beta_ij | Theta1_s, Theta2_s, Phi_s) is
    formed with log-sum-exp. The scaled PPD is the geometric mean of the
    per-cell averages. Cells whose density series did not converge are
    scored at the truncated value and counted in ``n_failed``; ``max_terms``
    bounds the density series per evaluation.
    """
    hyper = chain.hyper if hyper is None else hyper
    states = [s for _, s in chain.snapshots]
    if not states:
        raise DomainError("cannot score an empty chain")
    values = beta.values if isinstance(beta, BetaMatrix) else np.asarray(beta, float)
    if not isinstance(mask, HoldoutMask):
        mask = HoldoutMask.from_array(mask)
    mask.to_array(values.shape)
    if len(mask) == 0:
        raise DomainError("mask holds no cells; the predictive density would be vacuous")
    rows, cols = mask.held_out[:, 0], mask.held_out[:, 1]
    x = values[rows, cols]
    logs = np.empty((len(states), len(x)))
    failed = np.zeros(len(x), dtype=bool)
    for s, st in enumerate(states):
        phi = st.phi[:, cols]
        l1 = np.einsum("ck,kc->c", st.theta1[rows], phi)
        l2 = np.einsum("ck,kc->c", st.theta2[rows], phi)
        logs[s], bad = dncb_log_pdf_many(x, hyper.eps1, hyper.eps2, l1, l2,
                                         max_terms=max_terms, return_status=True)
        failed |= bad
    per_cell = logsumexp(logs, axis=0) - math.log(len(states))
    total = float(per_cell.sum())
    # held-out cells sitting on the clamp bounds were scored at clamped values
    n_clamped = int(np.count_nonzero((x <= CLAMP_DELTA) | (x >= 1.0 - CLAMP_DELTA)))
    return PpdReport(total, math.exp(total / len(x)), per_cell, mask.held_out,
                     int(failed.sum()), n_clamped)


@dataclass
class BetaBaseline:
    """A single Beta(a, b) fitted by the method of moments."""

    a: float
    b: float

    @classmethod
    def fit(cls, values) -> "BetaBaseline":
        x = np.asarray(values, dtype=float).ravel()
        if x.size < 2:
            raise DomainError("need at least two values for a moment fit")
        mean = x.mean()
        var = x.var(ddof=1)
        if not (0.0 < var < mean * (1.0 - mean)):
            raise DomainError("sample variance is incompatible with a beta fit")
        common = mean * (1.0 - mean) / var - 1.0
        return cls(mean * common, (1.0 - mean) * common)

    def score(self, values) -> PpdReport:
        x = np.asarray(values, dtype=float).ravel()
        per_cell = beta_dist.logpdf(x, self.a, self.b)
        total = float(per_cell.sum())
        return PpdReport(total, math.exp(total / x.size), per_cell,
                         np.empty((0, 2), np.int64))


def beta_baseline_ppd(beta, mask) -> PpdReport:
    """Scaled PPD of a moment-fitted Beta trained on the unmasked cells."""
    values = beta.values if isinstance(beta, BetaMatrix) else np.asarray(beta, float)
    if not isinstance(mask, HoldoutMask):
        mask = HoldoutMask.from_array(mask)
    held = mask.to_array(values.shape)
    if not held.any():
        raise DomainError("mask holds no cells")
    report = BetaBaseline.fit(values[~held]).score(values[held])
    report.cells = mask.held_out
    return report
