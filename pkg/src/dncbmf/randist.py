"""Counter-based random streams and the samplers the model needs.

Every draw comes from Philox4x64-10 keyed by ``(seed, stream_id)``. The
four-word counter is laid out as ``[block, entry, epoch, tag]``: the scalar
API below uses ``entry = epoch = tag = 0`` and walks ``block``, while the
Gibbs kernels open one substream per (entry, sweep, step) so that parallel
draws do not depend on how work is split across threads.

Samplers are written as numba functions acting on a small ``uint64`` state
vector; the public wrappers validate arguments and fill arrays.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .specfun import DomainError

__all__ = [
    "BesselParams",
    "RngStream",
    "sample_bessel",
    "sample_beta",
    "sample_dncb",
    "sample_gamma",
    "sample_multinomial",
    "sample_poisson",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_FOUR = np.uint64(4)

# state layout: key[2], counter[4], buffer position, buffer[4]
_STATE_SIZE = 11
_TWO_M53 = 2.0 ** -53
_ONE_MINUS_ULP = 1.0 - 2.0 ** -53
_TINY = 1e-300

# below this Bessel argument the mode is 0 and the pmf is inverted directly
_BESSEL_INVERSION_MAX_A = 1e-2


@njit(cache=True)
def _mulhilo(a, b):
    lo = a * b
    a0 = a & _MASK32
    a1 = a >> _S32
    b0 = b & _MASK32
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _MASK32) + (p10 & _MASK32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, lo


@njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block: four 64-bit outputs for a counter and key."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(cache=True)
def _new_state(k0, k1, entry, epoch, tag):
    st = np.zeros(_STATE_SIZE, dtype=np.uint64)
    st[0] = k0
    st[1] = k1
    st[3] = entry
    st[4] = epoch
    st[5] = tag
    st[6] = _FOUR
    return st


@njit(cache=True)
def _next_u64(st):
    if st[6] >= _FOUR:
        o0, o1, o2, o3 = philox4x64(st[2], st[3], st[4], st[5], st[0], st[1])
        st[7] = o0
        st[8] = o1
        st[9] = o2
        st[10] = o3
        st[2] = st[2] + _ONE
        st[6] = np.uint64(0)
    pos = st[6]
    st[6] = pos + _ONE
    return st[7 + np.int64(pos)]


@njit(cache=True)
def _uniform(st):
    # open interval (0, 1)
    return (float(_next_u64(st) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True)
def _exponential(st):
    return -math.log(_uniform(st))


@njit(cache=True)
def _normal(st):
    u1 = _uniform(st)
    u2 = _uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def _std_gamma(st, shape):
    """Gam(shape, 1) by Marsaglia-Tsang; shape < 1 via the U^(1/shape) boost."""
    if shape < 1.0:
        g = _std_gamma(st, shape + 1.0)
        return math.exp(math.log(g) + math.log(_uniform(st)) / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(st)
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


@njit(cache=True)
def _gamma(st, shape, rate):
    return max(_std_gamma(st, shape) / rate, _TINY)


@njit(cache=True)
def _beta(st, a, b):
    g1 = _std_gamma(st, a)
    g2 = _std_gamma(st, b)
    x = g1 / (g1 + g2)
    if not (x > _TINY):
        x = _TINY
    if x > _ONE_MINUS_ULP:
        x = _ONE_MINUS_ULP
    return x


@njit(cache=True)
def _poisson(st, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        # sequential inversion
        p = math.exp(-lam)
        s = p
        u = _uniform(st)
        k = 0
        while u > s:
            k += 1
            p *= lam / k
            s += p
            if p < 1e-300 and s >= 1.0 - 1e-16:
                break
        return k
    # PTRS, Hormann (1993)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = _uniform(st) - 0.5
        v = _uniform(st)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return np.int64(k)


@njit(cache=True)
def _binomial(st, n, p):
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if p > 0.5:
        return n - _binomial(st, n, 1.0 - p)
    q = 1.0 - p
    if n * p < 10.0:
        # inversion by pmf recursion from zero
        s = p / q
        a = (n + 1) * s
        r = math.exp(n * math.log1p(-p))
        u = _uniform(st)
        x = 0
        while u > r:
            u -= r
            x += 1
            if x > n:
                # round-off left mass beyond n; restart
                u = _uniform(st)
                x = 0
                r = math.exp(n * math.log1p(-p))
                continue
            r *= a / x - s
        return x
    # BTRS, Hormann (1993)
    spq = math.sqrt(n * p * q)
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    alpha = (2.83 + 5.1 / b) * spq
    vr = 0.92 - 4.2 / b
    m = math.floor((n + 1) * p)
    lpq = math.log(p / q)
    h = math.lgamma(m + 1.0) + math.lgamma(n - m + 1.0)
    while True:
        u = _uniform(st) - 0.5
        v = _uniform(st)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + c)
        if k < 0.0 or k > n:
            continue
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        v = math.log(v * alpha / (a / (us * us) + b))
        if v <= h - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0) + (k - m) * lpq:
            return np.int64(k)


@njit(cache=True)
def _multinomial_into(st, n, weights, out):
    total = 0.0
    for k in range(weights.shape[0]):
        total += weights[k]
    left = n
    for k in range(weights.shape[0] - 1):
        if left == 0:
            out[k] = 0
            continue
        p = weights[k] / total
        x = _binomial(st, left, min(p, 1.0))
        out[k] = x
        left -= x
        total -= weights[k]
        if total <= 0.0:
            total = 0.0
    out[weights.shape[0] - 1] = left


@njit(cache=True)
def _bessel_logw(k, v, lh):
    # unnormalized log pmf of Bes(v, a), lh = log(a/2)
    return 2.0 * k * lh - math.lgamma(k + 1.0) - math.lgamma(k + v + 1.0)


@njit(cache=True)
def _bessel(st, v, a):
    """Draw from Bes(v, a), pmf (a/2)^(2y+v) / (y! Gamma(y+v+1) I_v(a))."""
    if a <= 0.0:
        return 0
    h2 = 0.25 * a * a
    if a < _BESSEL_INVERSION_MAX_A:
        # weights w[k+1]/w[k] = (a/2)^2 / ((k+1)(k+v+1)); mass beyond a few
        # terms is below double precision
        w0 = 1.0
        s = 0.0
        w = w0
        k = 0
        while True:
            s += w
            w *= h2 / ((k + 1.0) * (k + v + 1.0))
            k += 1
            if w < 1e-18 * s:
                break
        u = _uniform(st) * s
        w = w0
        k = 0
        while u > w:
            u -= w
            w *= h2 / ((k + 1.0) * (k + v + 1.0))
            k += 1
        return k

    lh = math.log(0.5 * a)
    m = int(max(0.0, math.ceil(0.5 * (math.sqrt(v * v + a * a) - v)) - 1.0))
    while m > 0 and _bessel_logw(m - 1, v, lh) > _bessel_logw(m, v, lh):
        m -= 1
    while _bessel_logw(m + 1, v, lh) > _bessel_logw(m, v, lh):
        m += 1
    lm = _bessel_logw(m, v, lh)

    # flat envelope at the mode over [m - dl, m + dr], geometric tails along
    # the chords to m - dl and m + dr (valid by log-concavity)
    var = 1.0 / (1.0 / (m + 1.0) + 1.0 / (m + v + 1.0))
    d = max(1, int(1.5 * math.sqrt(var) + 0.5))
    dr = d
    drop_r = lm - _bessel_logw(m + dr, v, lh)
    while drop_r < 1.0:
        dr *= 2
        drop_r = lm - _bessel_logw(m + dr, v, lh)
    sr = drop_r / dr
    dl = min(d, m)
    sl = 0.0
    if dl < m:
        drop_l = lm - _bessel_logw(m - dl, v, lh)
        while drop_l < 1.0 and dl < m:
            dl = min(2 * dl, m)
            drop_l = lm - _bessel_logw(m - dl, v, lh)
        sl = drop_l / dl
    w_flat = float(dl + dr + 1)
    w_right = math.exp(-sr * (dr + 1)) / (-math.expm1(-sr))
    w_left = 0.0
    if dl < m:
        w_left = math.exp(-sl * (dl + 1)) / (-math.expm1(-sl))
    w_all = w_flat + w_right + w_left
    while True:
        u = _uniform(st) * w_all
        if u < w_flat:
            k = m - dl + int(u)
            if k > m + dr:
                k = m + dr
            log_env = lm
        elif u < w_flat + w_right:
            j = 1 + int(math.floor(_exponential(st) / sr))
            k = m + dr + j
            log_env = lm - sr * (dr + j)
        else:
            j = 1 + int(math.floor(_exponential(st) / sl))
            k = m - dl - j
            if k < 0:
                continue
            log_env = lm - sl * (dl + j)
        if math.log(_uniform(st)) <= _bessel_logw(k, v, lh) - log_env:
            return k


@njit(cache=True)
def _fill_bessel(st, v, a, out):
    for i in range(out.shape[0]):
        out[i] = _bessel(st, v, a)


@njit(cache=True)
def _fill_gamma(st, shape, rate, out):
    for i in range(out.shape[0]):
        out[i] = _gamma(st, shape, rate)


@njit(cache=True)
def _fill_poisson(st, lam, out):
    for i in range(out.shape[0]):
        out[i] = _poisson(st, lam)


@njit(cache=True)
def _fill_beta(st, a, b, out):
    for i in range(out.shape[0]):
        out[i] = _beta(st, a, b)


@njit(cache=True)
def _fill_multinomial(st, n, weights, out):
    for i in range(out.shape[0]):
        _multinomial_into(st, n, weights, out[i])


@njit(cache=True)
def _fill_dncb(st, e1, e2, l1, l2, out):
    for i in range(out.shape[0]):
        y1 = _poisson(st, l1)
        y2 = _poisson(st, l2)
        out[i] = _beta(st, e1 + y1, e2 + y2)


def _as_u64(x, name):
    x = int(x)
    if not 0 <= x < 2 ** 64:
        raise DomainError(f"{name} must fit in an unsigned 64-bit integer, got {x}")
    return np.uint64(x)


@dataclass
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Identical keys give identical sequences; distinct stream ids give
    independent ones. The Gibbs kernels use ``key`` directly and pull fresh
    epochs through :meth:`next_epoch`.
    """

    seed: int
    stream_id: int = 0
    state: np.ndarray = field(init=False, repr=False)
    _epoch: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        k0 = _as_u64(self.seed, "seed")
        k1 = _as_u64(self.stream_id, "stream_id")
        self.state = _new_state(k0, k1, np.uint64(0), np.uint64(0), np.uint64(0))

    @property
    def key(self) -> tuple:
        return np.uint64(self.seed), np.uint64(self.stream_id)

    def next_epoch(self) -> int:
        """Reserve a fresh epoch number for substream-keyed kernels."""
        self._epoch += 1
        return self._epoch

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = np.array([_uniform(self.state) for _ in range(n)])
        return out[0] if size is None else out.reshape(size)


@dataclass(frozen=True)
class BesselParams:
    """Order ``v > -1`` and argument ``a >= 0`` of a Bessel distribution."""

    v: float
    a: float

    def __post_init__(self):
        if not (np.isfinite(self.v) and self.v > -1.0):
            raise DomainError(f"Bessel order must exceed -1, got v={self.v}")
        if not (np.isfinite(self.a) and self.a >= 0.0):
            raise DomainError(f"Bessel argument must be finite and >= 0, got a={self.a}")

    def mean(self) -> float:
        """Analytic mean (a/2) I_{v+1}(a) / I_v(a)."""
        from .specfun import log_bessel_i

        if self.a == 0.0:
            return 0.0
        return 0.5 * self.a * math.exp(log_bessel_i(self.v + 1.0, self.a)
                                       - log_bessel_i(self.v, self.a))

    def log_pmf(self, y):
        """Exact log pmf at integer(s) ``y``."""
        from scipy.special import gammaln

        from .specfun import log_bessel_i

        y = np.asarray(y, dtype=float)
        if self.a == 0.0:
            return np.where(y == 0, 0.0, -np.inf)
        lh = math.log(0.5 * self.a)
        return ((2.0 * y + self.v) * lh - gammaln(y + 1.0) - gammaln(y + self.v + 1.0)
                - log_bessel_i(self.v, self.a))


def _shape(size):
    return (1,) if size is None else ((size,) if np.isscalar(size) else tuple(size))


def _finish(out, size):
    return out[0] if size is None else out.reshape(_shape(size))


def sample_bessel(p: BesselParams, rng: RngStream, size=None):
    """Exact Bessel draws.

    Rejection from a flat-top envelope with geometric tails around the mode,
    or inversion of the pmf when ``a`` is tiny. ``a == 0`` returns 0.
    """
    out = np.empty(int(np.prod(_shape(size))), dtype=np.int64)
    if p.a == 0.0:
        out[:] = 0
    else:
        _fill_bessel(rng.state, float(p.v), float(p.a), out)
    return _finish(out, size)


def sample_gamma(shape: float, rate: float, rng: RngStream, size=None):
    """Gamma draws in the shape-rate parameterization (mean ``shape / rate``)."""
    if not (shape > 0 and rate > 0 and np.isfinite(shape) and np.isfinite(rate)):
        raise DomainError(f"gamma shape and rate must be positive, got ({shape}, {rate})")
    out = np.empty(int(np.prod(_shape(size))))
    _fill_gamma(rng.state, float(shape), float(rate), out)
    return _finish(out, size)


def sample_poisson(lam: float, rng: RngStream, size=None):
    if not (lam >= 0 and np.isfinite(lam)):
        raise DomainError(f"Poisson rate must be finite and >= 0, got {lam}")
    out = np.empty(int(np.prod(_shape(size))), dtype=np.int64)
    _fill_poisson(rng.state, float(lam), out)
    return _finish(out, size)


def sample_beta(a: float, b: float, rng: RngStream, size=None):
    """Beta draws realized as g1 / (g1 + g2) with independent gamma draws."""
    if not (a > 0 and b > 0):
        raise DomainError(f"beta shapes must be positive, got ({a}, {b})")
    out = np.empty(int(np.prod(_shape(size))))
    _fill_beta(rng.state, float(a), float(b), out)
    return _finish(out, size)


def sample_multinomial(n: int, weights, rng: RngStream, size=None):
    """Multinomial counts for ``n`` trials with unnormalized positive weights."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError("weights must be a non-empty vector")
    if not np.all((w > 0) & np.isfinite(w)):
        raise DomainError("weights must be strictly positive and finite")
    if int(n) != n or n < 0:
        raise DomainError(f"trial count must be a non-negative integer, got {n}")
    out = np.empty((int(np.prod(_shape(size))), w.size), dtype=np.int64)
    _fill_multinomial(rng.state, int(n), w, out)
    return out[0] if size is None else out.reshape(_shape(size) + (w.size,))


def sample_dncb(e1: float, e2: float, l1: float, l2: float, rng: RngStream, size=None):
    """DNCB draws through the Poisson-randomized beta construction.

    y_r ~ Pois(l_r), then Beta(e1 + y1, e2 + y2). Values are kept strictly
    inside (0, 1) by pinning to the nearest representable interior point.
    """
    if not (e1 > 0 and e2 > 0):
        raise DomainError(f"shape parameters must be positive, got ({e1}, {e2})")
    if not (l1 >= 0 and l2 >= 0 and np.isfinite(l1) and np.isfinite(l2)):
        raise DomainError(f"non-centralities must be finite and >= 0, got ({l1}, {l2})")
    out = np.empty(int(np.prod(_shape(size))))
    _fill_dncb(rng.state, float(e1), float(e2), float(l1), float(l2), out)
    return _finish(out, size)
