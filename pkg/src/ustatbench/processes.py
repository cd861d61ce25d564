"""Normalized U-statistic process paths and sup-distance diagnostics.

All paths live on the grid t in {0, 1/n, ..., 1}.  For step paths the
value on [k/n, (k+1)/n) is the grid value at k, so the sup over [0, 1]
of a step-path difference is attained at a grid point and grid
evaluation is exact, not an approximation.  Piecewise-linear paths are
determined by the same grid nodes, and the sup of a piecewise-linear
function is attained at a node; all functional statistics here are
therefore computed on grid values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateNormalizerError, InputError
from .ustat import PrefixUPath

STYLE_STEP = "step"
STYLE_LINEAR = "piecewise-linear"

NORM_SELF = "self"
NORM_SCALAR = "scalar"
NORM_MILLER_SEN = "miller-sen"


@dataclass(frozen=True)
class NormalizedProcessPath:
    """A normalized process on the grid k/n, k = 0..n."""

    n: int
    m: int
    times: np.ndarray
    values: np.ndarray
    style: str
    normalizer_kind: str
    normalizer: float

    def __post_init__(self):
        if len(self.times) != self.n + 1 or len(self.values) != self.n + 1:
            raise ArgumentError("grid arrays must have length n + 1")

    def grid_index(self, t: float) -> int:
        """The prefix length [n t] for t in [0, 1]."""
        if not 0.0 <= t <= 1.0:
            raise ArgumentError("t must lie in [0, 1]")
        # tolerate float fuzz just below an integer boundary
        return min(self.n, int(math.floor(self.n * t + 1e-9)))

    def value_at(self, t: float) -> float:
        k = self.grid_index(t)
        if self.style == STYLE_STEP:
            return float(self.values[k])
        if k >= self.n:
            return float(self.values[self.n])
        frac = self.n * t - k
        return float((1.0 - frac) * self.values[k] + frac * self.values[k + 1])

    def statistic_at(self, t0: float) -> float:
        """The grid statistic at prefix [n t0] (used for CLT checks)."""
        return float(self.values[self.grid_index(t0)])

    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class SelfNormalizer:
    """V_n^2 = sum of squared projection values over the sample."""

    vn2: float
    n: int

    @classmethod
    def from_hajek_values(cls, hajek_values) -> "SelfNormalizer":
        hv = np.asarray(hajek_values, dtype=float)
        if not np.all(np.isfinite(hv)):
            raise InputError("projection values must be finite")
        return cls(vn2=float(np.sum(hv * hv)), n=len(hv))

    @property
    def vn(self) -> float:
        if self.vn2 <= 0.0:
            raise DegenerateNormalizerError("V_n^2 must be positive")
        return math.sqrt(self.vn2)


def _normalized_step_values(path: PrefixUPath, norm: float, theta: float) -> np.ndarray:
    values = np.zeros(path.n + 1)
    ks = np.arange(path.m, path.n + 1, dtype=float)
    values[path.m:] = (ks / path.m) * (path.values - theta) / norm
    return values


def _grid(n: int) -> np.ndarray:
    return np.arange(n + 1) / n


def build_self_normalized_process(path: PrefixUPath, hajek_values,
                                  theta: float) -> NormalizedProcessPath:
    """([nt]/m) (U_[nt] - theta) / V_n, zero before t = m/n."""
    hv = np.asarray(hajek_values, dtype=float)
    if len(hv) != path.n:
        raise ArgumentError("need one projection value per sample point")
    sn = SelfNormalizer.from_hajek_values(hv)
    if sn.vn2 <= 0.0:
        raise DegenerateNormalizerError(
            "V_n^2 = 0: projection vanishes on this sample (degenerate law)")
    return NormalizedProcessPath(
        n=path.n, m=path.m, times=_grid(path.n),
        values=_normalized_step_values(path, sn.vn, theta),
        style=STYLE_STEP, normalizer_kind=NORM_SELF, normalizer=sn.vn)


def build_scalar_normalized_process(path: PrefixUPath, bn: float,
                                    theta: float) -> NormalizedProcessPath:
    """Same shape with a deterministic norming constant in place of V_n."""
    if not (bn > 0.0 and math.isfinite(bn)):
        raise ArgumentError("bn must be positive and finite")
    return NormalizedProcessPath(
        n=path.n, m=path.m, times=_grid(path.n),
        values=_normalized_step_values(path, bn, theta),
        style=STYLE_STEP, normalizer_kind=NORM_SCALAR, normalizer=bn)


def build_miller_sen_process(path: PrefixUPath, var_h1: float,
                             theta: float) -> NormalizedProcessPath:
    """Piecewise-linear classical path k(U_k - theta)/(m sqrt(n Var)).

    Zero on [0, (m-1)/n]; node values for k >= m match the scalar path
    with bn = sqrt(n var_h1); linear in between.
    """
    if not (var_h1 > 0.0 and math.isfinite(var_h1)):
        raise ArgumentError("var_h1 must be positive and finite")
    bn = math.sqrt(path.n * var_h1)
    return NormalizedProcessPath(
        n=path.n, m=path.m, times=_grid(path.n),
        values=_normalized_step_values(path, bn, theta),
        style=STYLE_LINEAR, normalizer_kind=NORM_MILLER_SEN, normalizer=bn)


def partial_sum_path(hajek_values, normalizer: float,
                     normalizer_kind: str = NORM_SCALAR) -> NormalizedProcessPath:
    """Step path of normalized running sums of projection values."""
    if not (normalizer > 0.0 and math.isfinite(normalizer)):
        raise ArgumentError("normalizer must be positive and finite")
    hv = np.asarray(hajek_values, dtype=float)
    if hv.ndim != 1 or len(hv) < 1:
        raise ArgumentError("need a one-dimensional value array")
    if not np.all(np.isfinite(hv)):
        raise InputError("projection values must be finite")
    n = len(hv)
    values = np.zeros(n + 1)
    np.cumsum(hv, out=values[1:])
    values /= normalizer
    return NormalizedProcessPath(
        n=n, m=1, times=_grid(n), values=values,
        style=STYLE_STEP, normalizer_kind=normalizer_kind, normalizer=normalizer)


def sup_distance(a: NormalizedProcessPath, b: NormalizedProcessPath) -> float:
    """Max over grid points of |a - b| (exact sup for same-style paths)."""
    if a.n != b.n or not np.array_equal(a.times, b.times):
        raise ArgumentError("paths must share the same grid")
    return float(np.max(np.abs(a.values - b.values)))
