"""Source distributions, seeded random streams, and reference-law utilities.

The distributions here are the data generators for the bench.  Each one
carries whatever closed forms it has (CDF, quantile, truncated second
moment, tail mean) so that downstream checks can be run against analytic
values instead of chained Monte Carlo.  Where a closed form does not
exist we fall back to adaptive quadrature with absolute tolerance 1e-10.

The heavy-tailed benchmark density

    f(x) = |x - a|^(-3)   for |x - a| >= 1,  a != 0

is symmetric about ``a`` with mean ``a`` and infinite variance; its
truncated second moment about ``a`` grows like ``2 ln t``, which is the
slowly-varying profile the norming-sequence estimator below is built to
handle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import ArgumentError, DegenerateNormalizerError

QUAD_ABS_TOL = 1e-10

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    """Standard normal CDF, vectorized."""
    return 0.5 * (1.0 + special.erf(np.asarray(x, dtype=float) / _SQRT2))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


# ---------------------------------------------------------------------------
# Seeds and streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Seed:
    """A (master, stream) pair naming one reproducible random stream.

    Distinct pairs give independent streams; the same pair always
    reproduces the same draws regardless of scheduling, so replications
    can run in any parallel arrangement.
    """

    master: int
    stream: int = 0

    def __post_init__(self):
        if not isinstance(self.master, int) or self.master < 0:
            raise ArgumentError("master seed must be a non-negative integer")
        if not isinstance(self.stream, int) or self.stream < 0:
            raise ArgumentError("stream index must be a non-negative integer")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master, spawn_key=(self.stream,))
        return np.random.default_rng(ss)

    def child(self, stream: int) -> "Seed":
        return Seed(self.master, stream)


# Stream-index namespaces.  Replications use small indices; internal
# consumers (centering constants, per-point projection caches) offset
# into disjoint ranges so they can never collide with a replication.
STREAM_CENTERING = 1 << 48
STREAM_HAJEK_CACHE = 1 << 49


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


class Distribution:
    """Common sampling/closed-form interface; subclasses fill in the math."""

    kind: str = "abstract"

    @property
    def params(self) -> dict:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def var(self) -> float:
        raise NotImplementedError

    def has_moment(self, p: float) -> bool:
        """Whether E|X|^p is finite."""
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, u):
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Default sampler: inverse CDF over uniforms clipped away from 0."""
        if n < 1:
            raise ArgumentError("sample size must be >= 1")
        u = rng.random(n)
        u = np.maximum(u, np.finfo(float).tiny)
        return np.asarray(self.quantile(u), dtype=float)

    # --- moments under truncation ------------------------------------

    def truncated_second_moment(self, center: float, t: float) -> float:
        """E((X-center)^2 1{|X-center| <= t}); quadrature fallback."""
        if t < 0:
            raise ArgumentError("truncation level must be >= 0")
        if t == 0:
            return 0.0
        return self._tv_quad(center, t)

    def _tv_quad(self, center: float, t: float) -> float:
        lo, hi = center - t, center + t
        total = 0.0
        for a, b in self.support_segments(lo, hi):
            val, _ = integrate.quad(
                lambda x: (x - center) ** 2 * self.pdf(x), a, b,
                epsabs=QUAD_ABS_TOL, limit=200,
            )
            total += val
        return total

    def support_segments(self, lo: float, hi: float):
        """Support pieces intersected with [lo, hi] for quadrature."""
        if hi > lo:
            yield lo, hi

    def tail_mean(self, c: float) -> float:
        """E(X 1{|X| > c}); quadrature fallback."""
        if c < 0:
            raise ArgumentError("tail level must be >= 0")
        lo = -np.inf
        hi = np.inf
        total = 0.0
        for a, b in self.support_segments(lo, -c):
            val, _ = integrate.quad(lambda x: x * self.pdf(x), a, b,
                                    epsabs=QUAD_ABS_TOL, limit=200)
            total += val
        for a, b in self.support_segments(c, hi):
            val, _ = integrate.quad(lambda x: x * self.pdf(x), a, b,
                                    epsabs=QUAD_ABS_TOL, limit=200)
            total += val
        return total

    def label(self) -> str:
        inner = " ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.kind} {inner}" if inner else self.kind


class ExamplePareto(Distribution):
    """Symmetric Pareto-type law: density |x-a|^(-3) on |x-a| >= 1.

    Mean a, infinite variance; E|X|^p < inf exactly for p < 2.  Inverse
    CDF: x = a - (2u)^(-1/2) for u < 1/2 and x = a + (2(1-u))^(-1/2)
    for u >= 1/2.
    """

    kind = "example-pareto"

    def __init__(self, a: float):
        a = float(a)
        if a == 0.0 or not math.isfinite(a):
            raise ArgumentError("example-pareto requires a finite a != 0")
        self.a = a

    @property
    def params(self) -> dict:
        return {"a": self.a}

    def mean(self) -> float:
        return self.a

    def var(self) -> float:
        return math.inf

    def has_moment(self, p: float) -> bool:
        return p < 2

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = np.abs(x - self.a)
        with np.errstate(divide="ignore"):
            out = np.where(s >= 1.0, s ** -3.0, 0.0)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        s = x - self.a
        left = 0.5 / np.maximum(-s, 1.0) ** 2
        right = 1.0 - 0.5 / np.maximum(s, 1.0) ** 2
        return np.where(s <= -1.0, left, np.where(s >= 1.0, right, 0.5))

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0) | (u >= 1)):
            raise ArgumentError("quantile defined on (0, 1)")
        lo = self.a - (2.0 * u) ** -0.5
        hi = self.a + (2.0 * (1.0 - u)) ** -0.5
        return np.where(u < 0.5, lo, hi)

    def support_segments(self, lo: float, hi: float):
        for a, b in ((lo, min(hi, self.a - 1.0)), (max(lo, self.a + 1.0), hi)):
            if b > a:
                yield a, b

    def truncated_second_moment(self, center: float, t: float) -> float:
        if t < 0:
            raise ArgumentError("truncation level must be >= 0")
        if center == self.a:
            # int over 1 <= |s| <= t of s^2 |s|^-3 ds = 2 ln t
            return 0.0 if t <= 1.0 else 2.0 * math.log(t)
        if t == 0:
            return 0.0
        return self._tv_quad(center, t)

    def tail_mean(self, c):
        c_in = np.asarray(c, dtype=float)
        scalar = c_in.ndim == 0
        cs = np.atleast_1d(c_in)
        if np.any(cs < 0):
            raise ArgumentError("tail level must be >= 0")
        a, sign = (self.a, 1.0) if self.a > 0 else (-self.a, -1.0)
        u1 = cs - a   # right exceedance region starts here (in S = X - a units)
        u2 = -cs - a  # left exceedance region ends here
        right = a * _pareto_offset_sf(u1) + _pareto_offset_mean_above(u1)
        left = a * (1.0 - _pareto_offset_sf(u2)) - _pareto_offset_mean_above(u2)
        out = sign * (right + left)
        return float(out[0]) if scalar else out


def _pareto_offset_sf(u: np.ndarray) -> np.ndarray:
    """P(S > u) for the symmetric offset density |s|^-3 on |s| >= 1."""
    safe = np.maximum(np.abs(u), 1.0)
    half_tail = 0.5 / (safe * safe)
    return np.where(u <= -1.0, 1.0 - half_tail, np.where(u >= 1.0, half_tail, 0.5))


def _pareto_offset_mean_above(u: np.ndarray) -> np.ndarray:
    """E(S 1{S > u}) for the same offset law."""
    safe = np.where(np.abs(u) >= 1.0, u, 1.0)
    return np.where(u <= -1.0, -1.0 / safe, np.where(u >= 1.0, 1.0 / safe, 1.0))


class Normal(Distribution):
    kind = "normal"

    def __init__(self, mean: float = 0.0, sd: float = 1.0):
        mean, sd = float(mean), float(sd)
        if not (math.isfinite(mean) and math.isfinite(sd)) or sd <= 0:
            raise ArgumentError("normal requires finite mean and sd > 0")
        self.mu = mean
        self.sd = sd

    @property
    def params(self) -> dict:
        return {"mean": self.mu, "sd": self.sd}

    def mean(self) -> float:
        return self.mu

    def var(self) -> float:
        return self.sd ** 2

    def has_moment(self, p: float) -> bool:
        return True

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sd
        return norm_pdf(z) / self.sd

    def cdf(self, x):
        return norm_cdf((np.asarray(x, dtype=float) - self.mu) / self.sd)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0) | (u >= 1)):
            raise ArgumentError("quantile defined on (0, 1)")
        return self.mu + self.sd * special.ndtri(u)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ArgumentError("sample size must be >= 1")
        return rng.normal(self.mu, self.sd, size=n)

    def truncated_second_moment(self, center: float, t: float) -> float:
        if t < 0:
            raise ArgumentError("truncation level must be >= 0")
        if t == 0:
            return 0.0
        return float(_normal_trunc_sq(self.mu - center, self.sd, t))

    def tail_mean(self, c):
        c_in = np.asarray(c, dtype=float)
        scalar = c_in.ndim == 0
        cs = np.atleast_1d(c_in)
        if np.any(cs < 0):
            raise ArgumentError("tail level must be >= 0")
        mu, sd = self.mu, self.sd
        b = (cs - mu) / sd
        a = (-cs - mu) / sd
        upper = mu * (1.0 - norm_cdf(b)) + sd * norm_pdf(b)
        lower = mu * norm_cdf(a) - sd * norm_pdf(a)
        out = upper + lower
        return float(out[0]) if scalar else out


def _normal_trunc_sq(nu, sd: float, t: float):
    """E(V^2 1{|V| <= t}) for V ~ N(nu, sd^2), vectorized over nu."""
    nu = np.asarray(nu, dtype=float)
    alpha = (-t - nu) / sd
    beta = (t - nu) / sd
    pa, pb = norm_cdf(alpha), norm_cdf(beta)
    fa, fb = norm_pdf(alpha), norm_pdf(beta)
    p = pb - pa
    return nu * nu * p + 2.0 * nu * sd * (fa - fb) + sd * sd * (p - (beta * fb - alpha * fa))


def normal_tail_abs_sq(nu, sd: float, t: float):
    """E(V^2 1{|V| > t}) for V ~ N(nu, sd^2), vectorized over nu."""
    nu = np.asarray(nu, dtype=float)
    out = nu * nu + sd * sd - _normal_trunc_sq(nu, sd, t)
    return float(out) if out.ndim == 0 else out


def normal_tail_abs_mean(nu, sd: float, t: float):
    """E(|V| 1{|V| > t}) for V ~ N(nu, sd^2), vectorized over nu."""
    nu = np.asarray(nu, dtype=float)
    beta = (t - nu) / sd
    alpha = (-t - nu) / sd
    upper = nu * (1.0 - norm_cdf(beta)) + sd * norm_pdf(beta)
    lower = nu * norm_cdf(alpha) - sd * norm_pdf(alpha)
    out = upper - lower
    return float(out) if out.ndim == 0 else out


class Exponential(Distribution):
    kind = "exponential"

    def __init__(self, rate: float = 1.0):
        rate = float(rate)
        if not math.isfinite(rate) or rate <= 0:
            raise ArgumentError("exponential requires rate > 0")
        self.rate = rate

    @property
    def params(self) -> dict:
        return {"rate": self.rate}

    def mean(self) -> float:
        return 1.0 / self.rate

    def var(self) -> float:
        return 1.0 / self.rate ** 2

    def has_moment(self, p: float) -> bool:
        return True

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, 1.0 - np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0) | (u >= 1)):
            raise ArgumentError("quantile defined on (0, 1)")
        return -np.log1p(-u) / self.rate

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ArgumentError("sample size must be >= 1")
        return rng.exponential(1.0 / self.rate, size=n)

    def support_segments(self, lo: float, hi: float):
        a = max(lo, 0.0)
        if hi > a:
            yield a, hi

    def tail_mean(self, c):
        c_in = np.asarray(c, dtype=float)
        scalar = c_in.ndim == 0
        cs = np.atleast_1d(c_in)
        if np.any(cs < 0):
            raise ArgumentError("tail level must be >= 0")
        out = (cs + 1.0 / self.rate) * np.exp(-self.rate * cs)
        return float(out[0]) if scalar else out


class StudentT(Distribution):
    """Student t; included to probe moment-condition failure, df > 1 required."""

    kind = "student-t"

    def __init__(self, df: float):
        df = float(df)
        if not math.isfinite(df) or df <= 1:
            raise ArgumentError("student-t requires df > 1 (finite mean)")
        self.df = df

    @property
    def params(self) -> dict:
        return {"df": self.df}

    def mean(self) -> float:
        return 0.0

    def var(self) -> float:
        return self.df / (self.df - 2.0) if self.df > 2 else math.inf

    def has_moment(self, p: float) -> bool:
        return p < self.df

    def pdf(self, x):
        from scipy.stats import t as _t
        return _t.pdf(np.asarray(x, dtype=float), self.df)

    def cdf(self, x):
        from scipy.stats import t as _t
        return _t.cdf(np.asarray(x, dtype=float), self.df)

    def quantile(self, u):
        from scipy.stats import t as _t
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0) | (u >= 1)):
            raise ArgumentError("quantile defined on (0, 1)")
        return _t.ppf(u, self.df)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ArgumentError("sample size must be >= 1")
        return rng.standard_t(self.df, size=n)

    def tail_mean(self, c: float) -> float:
        if c < 0:
            raise ArgumentError("tail level must be >= 0")
        return 0.0  # symmetric about 0 with finite mean


_DIST_KINDS = {
    "example-pareto": (ExamplePareto, ("a",)),
    "normal": (Normal, ("mean", "sd")),
    "exponential": (Exponential, ("rate",)),
    "student-t": (StudentT, ("df",)),
}


def make_distribution(kind: str, **params) -> Distribution:
    """Build a distribution from its CLI/config name and parameters."""
    if kind not in _DIST_KINDS:
        raise ArgumentError(f"unknown distribution kind {kind!r}; "
                            f"known: {sorted(_DIST_KINDS)}")
    cls, allowed = _DIST_KINDS[kind]
    bad = set(params) - set(allowed)
    if bad:
        raise ArgumentError(f"{kind} does not accept parameters {sorted(bad)}")
    return cls(**params)


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def sample(dist: Distribution, n: int, seed: Seed) -> np.ndarray:
    """n i.i.d. draws from dist, reproducible from the seed."""
    if n < 1:
        raise ArgumentError("sample size must be >= 1")
    return dist.sample(n, seed.rng())


def truncated_second_moment(dist: Distribution, center: float, t: float) -> float:
    return dist.truncated_second_moment(center, t)


def estimate_bn(tv, n: int) -> float:
    """Norming constant from the truncated-variance fixed point.

    tv(b) must be E(Y^2 1{|Y| <= b}) for the projection variable Y.  The
    returned b* is the last down-crossing of r(b) = n tv(b) / b^2 through
    1, i.e. the largest solution of b^2 = n tv(b).  (Gapped supports make
    r vanish near 0, so the literal infimum over {r <= 1} would be
    degenerate; the large root is the one that norms partial sums.)
    """
    if n < 2:
        raise ArgumentError("n must be >= 2")

    def ratio(b: float) -> float:
        return n * tv(b) / (b * b)

    last_above = None
    first_below_after = None
    b = 1e-9
    while b <= 1e15:
        if ratio(b) > 1.0:
            last_above = b
            first_below_after = None
        elif last_above is not None and first_below_after is None:
            first_below_after = b
        b *= 2.0
    if last_above is None:
        raise DegenerateNormalizerError(
            "truncated-variance ratio never exceeds 1; provider degenerate")
    if first_below_after is None:
        raise DegenerateNormalizerError(
            "truncated-variance ratio still above 1 at the sweep ceiling")

    lo, hi = last_above, first_below_after
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ratio(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


def wiener_path(n: int, seed: Seed) -> np.ndarray:
    """Values W(k/n), k = 0..n, of a standard Wiener path on [0, 1]."""
    if n < 1:
        raise ArgumentError("grid size must be >= 1")
    rng = seed.rng()
    steps = rng.normal(0.0, 1.0 / math.sqrt(n), size=n)
    out = np.empty(n + 1)
    out[0] = 0.0
    np.cumsum(steps, out=out[1:])
    return out


def simulate_wiener_sup_abs(n_paths: int, grid: int, seed: Seed,
                            chunk: int = 4096) -> np.ndarray:
    """sup_k |W(k/grid)| for n_paths independent Wiener paths (chunked)."""
    if n_paths < 1 or grid < 1:
        raise ArgumentError("n_paths and grid must be >= 1")
    rng = seed.rng()
    scale = 1.0 / math.sqrt(grid)
    out = np.empty(n_paths)
    done = 0
    while done < n_paths:
        b = min(chunk, n_paths - done)
        steps = rng.normal(0.0, scale, size=(b, grid))
        np.cumsum(steps, axis=1, out=steps)
        out[done:done + b] = np.max(np.abs(steps), axis=1)
        done += b
    return out


def sup_abs_wiener_cdf(x):
    """P(sup_{0<=t<=1} |W(t)| <= x), by the alternating reflection series.

    Series (4/pi) sum_k (-1)^k/(2k+1) exp(-pi^2 (2k+1)^2 / (8 x^2)),
    truncated once the (monotone decreasing) term magnitude drops below
    1e-12, which bounds the truncation error by the same amount.
    """
    scalar = np.isscalar(x) or np.asarray(x).ndim == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0) or not np.all(np.isfinite(xs)):
        raise ArgumentError("argument must be positive and finite")
    out = np.zeros(xs.shape)
    active = np.arange(xs.size)
    coef = 4.0 / math.pi
    k = 0
    inv8x2 = 1.0 / (8.0 * xs ** 2)
    while active.size and k < 1_000_000:
        q = 2 * k + 1
        term = (coef / q) * np.exp(-(math.pi ** 2) * q * q * inv8x2[active])
        out[active] += term if k % 2 == 0 else -term
        active = active[term >= 1e-12]
        k += 1
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out
