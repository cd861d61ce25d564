"""Symmetric kernels of order m, bound to a source distribution.

A kernel is a pure symmetric function of m reals.  Because the target
parameter and the first-order projection both depend on the source law
F, a ``Kernel`` object is always built *for* a distribution: ``theta``
is E h under that F, and ``hajek`` (when a closed form exists) is

    x  |->  E( h(x, Y_2, ..., Y_m) ) - theta,   Y_i i.i.d. ~ F,

the centered conditional expectation given the first argument.

Built-ins and their closed forms
--------------------------------
mean      m = 1, h = x.           theta = E X, hajek = x - theta.
product   any m, h = prod x_i.    theta = mu^m, hajek = x mu^(m-1) - mu^m
                                  (mu = E X; holds for every F by
                                  independence of the factors).
variance  m = 2, h = (x-y)^2/2.   theta = Var X; under N(mu, s^2):
                                  hajek = ((x-mu)^2 - s^2)/2.
gini      m = 2, h = |x-y|.       under N(mu, s^2): theta = 2 s/sqrt(pi),
                                  hajek = s*(2 phi(z) + z(2 Phi(z)-1)) - theta,
                                  z = (x-mu)/s.
wilcoxon  m = 2, h = 1{x+y > 0}.  theta = P(X+Y > 0) (quadrature),
                                  hajek = (1 - F(-x)) - theta; bounded.

Pairings without a known closed form get ``theta = nan`` and
``hajek = None``; the evaluators still work (they never need theta) and
``hajek_mc`` provides the projection by conditional Monte Carlo.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate

from .errors import ArgumentError, InputError, UnsupportedOperationError
from .sampling import Distribution, Normal, Seed, norm_cdf, norm_pdf, QUAD_ABS_TOL


@dataclass(frozen=True)
class Kernel:
    """A symmetric order-m kernel with its F-bound parameters.

    evaluate must accept m scalars or m broadcastable arrays and apply
    elementwise.  var_hajek is Var(hajek(X)) when known (may be inf);
    second_moment_finite records whether E h^2 < inf under the paired F
    (None = unknown); abs_bound is sup |h| for bounded kernels;
    hajek_tv, when present, maps b to E(hajek(X)^2 1{|hajek(X)| <= b}).
    """

    name: str
    order: int
    evaluate: Callable
    theta: float
    hajek: Optional[Callable] = None
    family: str = "custom"
    var_hajek: Optional[float] = None
    second_moment_finite: Optional[bool] = None
    abs_bound: Optional[float] = None
    hajek_tv: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.order, int) or self.order < 1:
            raise ArgumentError("kernel order must be a positive integer")


def evaluate_kernel(kernel: Kernel, args) -> float:
    """Apply the kernel to exactly kernel.order finite reals."""
    args = tuple(float(a) for a in args)
    if len(args) != kernel.order:
        raise ArgumentError(
            f"kernel {kernel.name!r} takes {kernel.order} arguments, got {len(args)}")
    if not all(math.isfinite(a) for a in args):
        raise InputError("kernel arguments must be finite")
    return float(kernel.evaluate(*args))


def hajek_analytic(kernel: Kernel, x):
    """Closed-form projection hajek(x); error when none is attached."""
    if kernel.hajek is None:
        raise UnsupportedOperationError(
            f"kernel {kernel.name!r} has no analytic projection")
    return kernel.hajek(x)


class McEstimate(NamedTuple):
    value: float
    stderr: float
    n_nonfinite: int


def hajek_mc(kernel: Kernel, x: float, dist: Distribution, draws: int,
             seed: Seed) -> McEstimate:
    """Monte Carlo projection E(h(x, Y...)) - theta with Y i.i.d. from dist.

    Deterministic given the seed.  Non-finite kernel outputs are counted
    and excluded from the mean rather than silently dropped.
    """
    if kernel.order < 2:
        raise UnsupportedOperationError(
            "order-1 kernels have an exact projection; use hajek_analytic")
    if draws < 1:
        raise ArgumentError("draws must be >= 1")
    rng = seed.rng()
    y = dist.sample(draws * (kernel.order - 1), rng).reshape(draws, kernel.order - 1)
    cols = [np.full(draws, float(x))] + [y[:, j] for j in range(kernel.order - 1)]
    terms = np.asarray(kernel.evaluate(*cols), dtype=float) - kernel.theta
    finite = np.isfinite(terms)
    n_bad = int(draws - finite.sum())
    good = terms[finite]
    if good.size == 0:
        return McEstimate(math.nan, math.nan, n_bad)
    value = float(np.mean(good))
    stderr = float(np.std(good, ddof=1) / math.sqrt(good.size)) if good.size > 1 else math.nan
    return McEstimate(value, stderr, n_bad)


# ---------------------------------------------------------------------------
# Built-in catalog
# ---------------------------------------------------------------------------

BUILTIN_KERNELS = ("mean", "product", "variance", "gini", "wilcoxon")


def _product_eval(*xs):
    return functools.reduce(np.multiply, (np.asarray(x, dtype=float) for x in xs))


def _variance_eval(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * d * d


def _gini_eval(x, y):
    return np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))


def _wilcoxon_eval(x, y):
    return (np.asarray(x, dtype=float) + np.asarray(y, dtype=float) > 0).astype(float)


def _quad_over(dist: Distribution, fn) -> float:
    total = 0.0
    for a, b in dist.support_segments(-np.inf, np.inf):
        val, _ = integrate.quad(lambda t: fn(t) * float(dist.pdf(t)), a, b,
                                epsabs=QUAD_ABS_TOL, limit=200)
        total += val
    return total


def builtin_kernel(name: str, dist: Distribution, m: Optional[int] = None) -> Kernel:
    """Build one catalog kernel bound to a source distribution."""
    if name not in BUILTIN_KERNELS:
        raise ArgumentError(f"unknown kernel {name!r}; known: {BUILTIN_KERNELS}")

    if name == "mean":
        if m not in (None, 1):
            raise ArgumentError("mean kernel has order 1")
        mu = dist.mean()
        return Kernel(
            name="mean", order=1,
            evaluate=lambda x: np.asarray(x, dtype=float),
            theta=mu,
            hajek=lambda x: np.asarray(x, dtype=float) - mu,
            family="mean",
            var_hajek=dist.var(),
            second_moment_finite=dist.has_moment(2),
            hajek_tv=lambda b, _d=dist, _mu=mu: _d.truncated_second_moment(_mu, b),
        )

    if name == "product":
        if m is None:
            m = 2
        if not isinstance(m, int) or m < 1:
            raise ArgumentError("product kernel order must be a positive integer")
        mu = dist.mean()
        scale = mu ** (m - 1)
        theta = mu ** m
        hajek_tv = None
        if mu != 0.0:
            s = abs(scale)
            hajek_tv = (lambda b, _d=dist, _mu=mu, _s=s:
                        _s * _s * _d.truncated_second_moment(_mu, b / _s))
        var_h = scale * scale * dist.var() if mu != 0.0 else (0.0 if m > 1 else dist.var())
        return Kernel(
            name=f"product{m}", order=m,
            evaluate=_product_eval,
            theta=theta,
            hajek=lambda x, _s=scale, _t=theta: np.asarray(x, dtype=float) * _s - _t,
            family="product",
            var_hajek=var_h,
            second_moment_finite=dist.has_moment(2),
            hajek_tv=hajek_tv,
        )

    if name == "variance":
        if m not in (None, 2):
            raise ArgumentError("variance kernel has order 2")
        if isinstance(dist, Normal):
            mu, sd = dist.mu, dist.sd
            theta = sd * sd

            def hj(x, _mu=mu, _s2=theta):
                z = np.asarray(x, dtype=float) - _mu
                return 0.5 * (z * z - _s2)

            def tv(b, _mu=mu, _sd=sd, _s2=theta):
                # |((X-mu)^2 - s^2)/2| <= b  <=>  (X-mu)^2 in [s^2-2b, s^2+2b]
                hi = math.sqrt(_s2 + 2.0 * b)
                total = _normal_sq_fn_trunc(_sd, 0.0, hi, _s2)
                if _s2 - 2.0 * b > 0:
                    lo = math.sqrt(_s2 - 2.0 * b)
                    total -= _normal_sq_fn_trunc(_sd, 0.0, lo, _s2)
                return total

            return Kernel(
                name="variance", order=2, evaluate=_variance_eval,
                theta=theta, hajek=hj, family="variance",
                var_hajek=0.5 * sd ** 4,
                second_moment_finite=True,
                hajek_tv=tv,
            )
        theta = dist.var()
        return Kernel(
            name="variance", order=2, evaluate=_variance_eval,
            theta=theta if math.isfinite(theta) else math.inf,
            hajek=None, family="variance",
            var_hajek=None,
            second_moment_finite=dist.has_moment(4),
        )

    if name == "gini":
        if m not in (None, 2):
            raise ArgumentError("gini kernel has order 2")
        if isinstance(dist, Normal):
            mu, sd = dist.mu, dist.sd
            theta = 2.0 * sd / math.sqrt(math.pi)

            def hj(x, _mu=mu, _sd=sd, _t=theta):
                z = (np.asarray(x, dtype=float) - _mu) / _sd
                return _sd * (2.0 * norm_pdf(z) + z * (2.0 * norm_cdf(z) - 1.0)) - _t

            var_h = _quad_over(dist, lambda t: float(hj(t)) ** 2)
            return Kernel(
                name="gini", order=2, evaluate=_gini_eval,
                theta=theta, hajek=hj, family="gini",
                var_hajek=var_h,
                second_moment_finite=True,
            )
        return Kernel(
            name="gini", order=2, evaluate=_gini_eval,
            theta=math.nan, hajek=None, family="gini",
            var_hajek=None,
            second_moment_finite=dist.has_moment(2),
        )

    # wilcoxon: valid for any continuous source with a CDF
    if m not in (None, 2):
        raise ArgumentError("wilcoxon kernel has order 2")
    if isinstance(dist, Normal):
        theta = float(norm_cdf(math.sqrt(2.0) * dist.mu / dist.sd))
    else:
        theta = _quad_over(dist, lambda t: 1.0 - float(dist.cdf(-t)))

    def hj(x, _d=dist, _t=theta):
        return (1.0 - np.asarray(_d.cdf(-np.asarray(x, dtype=float)), dtype=float)) - _t

    var_h = _quad_over(dist, lambda t: float(hj(t)) ** 2)
    return Kernel(
        name="wilcoxon", order=2, evaluate=_wilcoxon_eval,
        theta=theta, hajek=hj, family="wilcoxon",
        var_hajek=var_h,
        second_moment_finite=True,
        abs_bound=1.0,
    )


def _normal_sq_fn_trunc(sd: float, lo: float, hi: float, s2: float) -> float:
    """E( ((Z)^2 - s2)^2/4 * 1{lo <= |Z| <= hi} ) for Z ~ N(0, sd^2)."""
    def piece(z):
        w = z * z - s2
        return 0.25 * w * w

    total = 0.0
    for a, b in ((-hi, -lo), (lo, hi)):
        if b > a:
            val, _ = integrate.quad(
                lambda z: piece(z) * float(norm_pdf(z / sd)) / sd, a, b,
                epsabs=QUAD_ABS_TOL, limit=200)
            total += val
    return total


def builtin_catalog(dist: Distribution, product_order: int = 2) -> list[Kernel]:
    """All built-in kernels bound to dist (product at the given order)."""
    out = []
    for name in BUILTIN_KERNELS:
        m = product_order if name == "product" else None
        out.append(builtin_kernel(name, dist, m=m))
    return out
