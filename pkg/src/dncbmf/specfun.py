"""Log-domain special functions: modified Bessel I_v, Kummer 1F1, Humbert Psi2.

All three are sums of positive series, so they are accumulated in log space
starting from the largest term and walking outward. That keeps every
intermediate finite for arguments far beyond where the plain functions
overflow, e.g. the Bessel argument 2*sqrt(gamma*lambda) met during sampling.

The numba kernels return a status code instead of raising so that they can be
called from other compiled code; the Python wrappers turn codes into
exceptions.
"""

import math

import numpy as np
from numba import njit

__all__ = [
    "ConvergenceError",
    "DomainError",
    "TOL",
    "MAX_TERMS",
    "log_bessel_i",
    "kummer_1f1",
    "log_humbert_psi2",
]

TOL = 1e-15
MAX_TERMS = 100_000

# Above this argument (and above v**2) log I_v switches to the large-argument
# expansion. Checked against the series in tests/test_specfun.py.
BESSEL_ASYMPTOTIC_CROSSOVER = 1000.0

OK = 0
NOT_CONVERGED = 1

_LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """An argument lies outside the domain of a function or distribution."""


class ConvergenceError(ArithmeticError):
    """A series did not reach its tolerance within the term budget."""


@njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _log1f1_core(alpha, beta, x, tol, max_terms):
    """log 1F1(alpha; beta; x) for alpha, beta > 0 and x >= 0.

    Returns (value, n_terms, status).
    """
    if x == 0.0:
        return 0.0, 1, OK
    lx = math.log(x)
    logtol = math.log(tol)
    # term ratio t[n+1]/t[n] = (alpha+n) x / ((beta+n)(n+1)); it exceeds one
    # strictly between the roots of n^2 + (beta+1-x) n + beta - alpha x.
    bq = beta + 1.0 - x
    cq = beta - alpha * x
    disc = bq * bq - 4.0 * cq
    upper = -1.0
    if disc >= 0.0:
        upper = 0.5 * (-bq + math.sqrt(disc))
    nm = 0
    if upper > 0.0:
        nm = int(math.ceil(upper))
    lt = (math.lgamma(alpha + nm) - math.lgamma(alpha) - math.lgamma(beta + nm)
          + math.lgamma(beta) + nm * lx - math.lgamma(nm + 1.0))
    total = lt
    count = 1

    # upward: past the upper root the ratio stays below one
    n = nm
    lcur = lt
    while True:
        step = math.log(alpha + n) + lx - math.log(beta + n) - math.log(n + 1.0)
        lcur += step
        n += 1
        total = _logaddexp(total, lcur)
        count += 1
        if count > max_terms:
            return total, count, NOT_CONVERGED
        if step < 0.0:
            r = math.exp(step)
            if lcur - math.log1p(-r) < total + logtol:
                break

    # downward: terms fall to the lower root then may rise again toward t[0] = 1,
    # so the untouched head is bounded by n * max(t[n], 1)
    n = nm
    lcur = lt
    while n > 0:
        lcur -= (math.log(alpha + n - 1.0) + lx - math.log(beta + n - 1.0)
                 - math.log(float(n)))
        n -= 1
        total = _logaddexp(total, lcur)
        count += 1
        if count > max_terms:
            return total, count, NOT_CONVERGED
        if n > 0 and math.log(float(n)) + max(lcur, 0.0) < total + logtol:
            break
    return total, count, OK


@njit(cache=True)
def _row_mode(a, b, x):
    # mode of n -> (a)_n / (b)_n x^n / n! with a >= b
    if x == 0.0:
        return 0
    bq = b + 1.0 - x
    cq = b - a * x
    disc = bq * bq - 4.0 * cq
    if disc < 0.0:
        return 0
    root = 0.5 * (-bq + math.sqrt(disc))
    if root <= 0.0:
        return 0
    return int(math.ceil(root))


@njit(cache=True)
def _log_psi2_core(e_tot, e1, e2, x1, x2, tol, max_terms):
    """log Psi2[e_tot; e1, e2; x1, x2]; returns (value, n_terms, status)."""
    if x1 == 0.0 and x2 == 0.0:
        return 0.0, 1, OK
    if x2 == 0.0:
        return _log1f1_core(e_tot, e1, x1, tol, max_terms)
    if x1 == 0.0:
        return _log1f1_core(e_tot, e2, x2, tol, max_terms)

    lx1 = math.log(x1)
    logtol = math.log(tol)
    # coordinate ascent to the joint mode of the double series
    m = 0
    n = 0
    for _ in range(200):
        m_new = _row_mode(e_tot + n, e1, x1)
        n_new = _row_mode(e_tot + m_new, e2, x2)
        if m_new == m and n_new == n:
            break
        m = m_new
        n = n_new
    m0 = m

    # row m sums to (e_tot)_m / ((e1)_m m!) x1^m 1F1(e_tot + m; e2; x2)
    lg_e_tot = math.lgamma(e_tot)
    lg_e1 = math.lgamma(e1)
    total = -np.inf
    count = 0
    for direction in (1, -1):
        m = m0 if direction == 1 else m0 - 1
        prev = np.inf
        below = 0
        while m >= 0:
            lhead = (math.lgamma(e_tot + m) - lg_e_tot - math.lgamma(e1 + m) + lg_e1
                     + m * lx1 - math.lgamma(m + 1.0))
            lrow, nt, status = _log1f1_core(e_tot + m, e2, x2, tol,
                                            max_terms - count)
            count += nt
            if status != OK or count > max_terms:
                return _logaddexp(total, lhead + lrow), count, NOT_CONVERGED
            lrow += lhead
            total = _logaddexp(total, lrow)
            if lrow < total + logtol and lrow < prev:
                below += 1
                if below >= 2:
                    break
            else:
                below = 0
            prev = lrow
            m += direction
    return total, count, OK


@njit(cache=True)
def _log_bessel_series(v, a, tol, max_terms):
    # sum_k (a/2)^(2k+v) / (k! Gamma(k+v+1)); log-concave in k for v > -1
    if a == 0.0:
        if v == 0.0:
            return 0.0, 1, OK
        return (-np.inf if v > 0.0 else np.inf), 1, OK
    lh = math.log(0.5 * a)
    logtol = math.log(tol)
    k0 = int(max(0.0, math.ceil(0.5 * (math.sqrt(v * v + a * a) - v)) - 1.0))
    lt = (2.0 * k0 + v) * lh - math.lgamma(k0 + 1.0) - math.lgamma(k0 + v + 1.0)
    total = lt
    count = 1
    k = k0
    lcur = lt
    while True:
        step = 2.0 * lh - math.log(k + 1.0) - math.log(k + v + 1.0)
        lcur += step
        k += 1
        total = _logaddexp(total, lcur)
        count += 1
        if count > max_terms:
            return total, count, NOT_CONVERGED
        if step < 0.0 and lcur - math.log1p(-math.exp(step)) < total + logtol:
            break
    k = k0
    lcur = lt
    while k > 0:
        step = 2.0 * lh - math.log(float(k)) - math.log(k + v)
        lcur -= step
        k -= 1
        total = _logaddexp(total, lcur)
        count += 1
        if count > max_terms:
            return total, count, NOT_CONVERGED
        if step > 0.0 and lcur - math.log1p(-math.exp(-step)) < total + logtol:
            break
    return total, count, OK


@njit(cache=True)
def _log_bessel_asymptotic(v, a):
    # I_v(a) ~ e^a / sqrt(2 pi a) * sum_k (-1)^k prod_{j<=k}(4v^2-(2j-1)^2) / (k! (8a)^k)
    mu = 4.0 * v * v
    s = 1.0
    term = 1.0
    for k in range(1, 60):
        nxt = -term * (mu - (2.0 * k - 1.0) ** 2) / (k * 8.0 * a)
        if abs(nxt) >= abs(term):
            return np.nan, NOT_CONVERGED
        term = nxt
        s += term
        if abs(term) < 1e-17 * abs(s):
            return a - 0.5 * (_LOG_2PI + math.log(a)) + math.log(s), OK
    return np.nan, NOT_CONVERGED


@njit(cache=True)
def _log_bessel_core(v, a, tol, max_terms):
    if a > BESSEL_ASYMPTOTIC_CROSSOVER and a > v * v:
        val, status = _log_bessel_asymptotic(v, a)
        if status == OK:
            return val, 0, OK
    return _log_bessel_series(v, a, tol, max_terms)


def _check_finite(name, value):
    if not np.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")


def log_bessel_i(v: float, a: float, *, tol: float = TOL,
                 max_terms: int = MAX_TERMS) -> float:
    """Natural log of the modified Bessel function of the first kind I_v(a).

    Defined for v > -1 and a >= 0. At a == 0 the value is the limit: 0 for
    v == 0, -inf for v > 0 and +inf for -1 < v < 0 (I_v diverges there).
    """
    v = float(v)
    a = float(a)
    _check_finite("v", v)
    _check_finite("a", a)
    if v <= -1.0:
        raise DomainError(f"Bessel order must exceed -1, got v={v}")
    if a < 0.0:
        raise DomainError(f"Bessel argument must be non-negative, got a={a}")
    val, n, status = _log_bessel_core(v, a, tol, max_terms)
    if status != OK:
        raise ConvergenceError(
            f"log I_v series for v={v}, a={a} not converged after {n} terms")
    return val


def kummer_1f1(alpha: float, beta: float, x: float, *, tol: float = TOL,
               max_terms: int = MAX_TERMS) -> float:
    """Natural log of Kummer's function 1F1(alpha; beta; x), alpha, beta > 0, x >= 0."""
    alpha, beta, x = float(alpha), float(beta), float(x)
    for name, val in (("alpha", alpha), ("beta", beta), ("x", x)):
        _check_finite(name, val)
    if alpha <= 0.0 or beta <= 0.0:
        raise DomainError(f"1F1 parameters must be positive, got ({alpha}, {beta})")
    if x < 0.0:
        raise DomainError(f"1F1 argument must be non-negative, got x={x}")
    val, n, status = _log1f1_core(alpha, beta, x, tol, max_terms)
    if status != OK:
        raise ConvergenceError(
            f"1F1({alpha}; {beta}; {x}) not converged after {n} terms")
    return val


def log_humbert_psi2(e_tot: float, e1: float, e2: float, x1: float, x2: float, *,
                     tol: float = TOL, max_terms: int = MAX_TERMS) -> float:
    """Natural log of Humbert's confluent hypergeometric function Psi2.

    Psi2[a; c1, c2; x1, x2] = sum_{m,n} (a)_{m+n} / ((c1)_m (c2)_n)
    * x1^m / m! * x2^n / n!. The double series is summed row by row, each
    row collapsing to a 1F1, outward from the joint mode.

    Raises ConvergenceError when more than ``max_terms`` terms are needed.
    """
    args = [float(t) for t in (e_tot, e1, e2, x1, x2)]
    for name, val in zip(("e_tot", "e1", "e2", "x1", "x2"), args):
        _check_finite(name, val)
    e_tot, e1, e2, x1, x2 = args
    if e_tot <= 0.0 or e1 <= 0.0 or e2 <= 0.0:
        raise DomainError(f"Psi2 shapes must be positive, got ({e_tot}, {e1}, {e2})")
    if x1 < 0.0 or x2 < 0.0:
        raise DomainError(f"Psi2 arguments must be non-negative, got ({x1}, {x2})")
    val, n, status = _log_psi2_core(e_tot, e1, e2, x1, x2, tol, max_terms)
    if status != OK:
        raise ConvergenceError(
            f"Psi2 series not converged within {max_terms} terms "
            f"(x1={x1}, x2={x2})")
    return val
