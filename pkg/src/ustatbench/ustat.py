"""Exact and incremental evaluators for running U-statistic families.

The oracle path enumerates every m-subset (lexicographic, fixed order)
with error-free-transformation summation; the fast paths exploit kernel
structure:

* product kernels: elementary symmetric polynomials updated by
  e_j <- e_j + x_k e_{j-1} (descending j), O(m) per new point;
* variance kernel: running power sums after pre-centering by the sample
  mean (the kernel is translation invariant, and pre-centering removes
  the catastrophic cancellation of k*p2 - p1^2);
* gini / wilcoxon: a Fenwick tree over value ranks, O(log k) per point.

U_k always uses the first k points in arrival order, matching the
process definition over the [nt] prefix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, InputError, ResourceBudgetError
from .kernels import Kernel

ENUMERATION_BUDGET = 10 ** 8


class NeumaierSum:
    """Compensated accumulator (Neumaier's variant of Kahan summation)."""

    __slots__ = ("s", "c")

    def __init__(self, value: float = 0.0):
        self.s = float(value)
        self.c = 0.0

    def add(self, x: float) -> None:
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def total(self) -> float:
        return self.s + self.c


@dataclass(frozen=True)
class PrefixUPath:
    """The running family {U_k : m <= k <= n} for one sample.

    values[i] is U_{m+i}; theta is the centering parameter carried along
    for downstream process construction (nan when not bound).
    """

    m: int
    n: int
    values: np.ndarray
    theta: float = math.nan

    def __post_init__(self):
        if self.n < self.m:
            raise ArgumentError("need n >= m")
        if len(self.values) != self.n - self.m + 1:
            raise ArgumentError("values must have length n - m + 1")

    def u(self, k: int) -> float:
        if not self.m <= k <= self.n:
            raise ArgumentError(f"k must be in [{self.m}, {self.n}]")
        return float(self.values[k - self.m])

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.m, self.n + 1)


def _as_sample(sample) -> np.ndarray:
    arr = np.ascontiguousarray(sample, dtype=float)
    if arr.ndim != 1:
        raise ArgumentError("sample must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise InputError("sample values must be finite")
    return arr


def _check_budget(n: int, m: int) -> int:
    if n < m:
        raise ArgumentError(f"need n >= m, got n={n}, m={m}")
    total = math.comb(n, m)
    if total > ENUMERATION_BUDGET:
        raise ResourceBudgetError(
            f"C({n},{m}) = {total} exceeds the enumeration budget {ENUMERATION_BUDGET}")
    return total


def _eval_batch(kernel: Kernel, arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Evaluate the kernel on each row of an index matrix."""
    cols = (arr[idx[:, j]] for j in range(idx.shape[1]))
    return np.asarray(kernel.evaluate(*cols), dtype=float)


def u_statistic_oracle(kernel: Kernel, sample) -> float:
    """Exact U_n by lexicographic enumeration of all m-subsets."""
    arr = _as_sample(sample)
    n, m = len(arr), kernel.order
    total = _check_budget(n, m)
    acc = NeumaierSum()
    chunk = 1 << 16
    it = itertools.combinations(range(n), m)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            break
        vals = _eval_batch(kernel, arr, np.asarray(block, dtype=np.intp))
        acc.add(math.fsum(vals.tolist()))
    return acc.total / total


def prefix_u_oracle(kernel: Kernel, sample, theta: float = math.nan) -> PrefixUPath:
    """All U_k for m <= k <= n with exactly C(n,m) kernel evaluations.

    When point k arrives, only the C(k-1, m-1) subsets whose largest
    index is k are evaluated; the running compensated sum is divided by
    C(k, m) to give U_k.
    """
    arr = _as_sample(sample)
    n, m = len(arr), kernel.order
    _check_budget(n, m)
    values = np.empty(n - m + 1)
    acc = NeumaierSum()
    for k in range(m, n + 1):
        base = list(itertools.combinations(range(k - 1), m - 1))
        idx = np.empty((len(base), m), dtype=np.intp)
        if m > 1:
            idx[:, : m - 1] = np.asarray(base, dtype=np.intp).reshape(len(base), m - 1)
        idx[:, m - 1] = k - 1
        vals = _eval_batch(kernel, arr, idx)
        acc.add(math.fsum(vals.tolist()))
        values[k - m] = acc.total / math.comb(k, m)
    return PrefixUPath(m=m, n=n, values=values, theta=theta)


# ---------------------------------------------------------------------------
# Fast paths
# ---------------------------------------------------------------------------


def prefix_u_product_fast(m: int, sample, theta: float = math.nan,
                          extended: bool = False) -> PrefixUPath:
    """Product-kernel prefixes via streaming elementary symmetric polynomials.

    e_j <- e_j + x_k e_{j-1}, j descending, with compensated accumulators
    per degree; U_k = e_m / C(k, m).  ``extended`` switches to 80-bit
    long-double accumulation, the toggle for heavy-tail cancellation
    studies.
    """
    if not isinstance(m, int) or m < 1:
        raise ArgumentError("order must be a positive integer")
    arr = _as_sample(sample)
    n = len(arr)
    if n < m:
        raise ArgumentError(f"need n >= m, got n={n}, m={m}")

    if m == 1:
        values = np.cumsum(arr) / np.arange(1, n + 1)
        return PrefixUPath(m=1, n=n, values=values, theta=theta)

    values = np.empty(n - m + 1)
    denom = np.array([math.comb(k, m) for k in range(m, n + 1)], dtype=float)

    if extended:
        e = np.zeros(m + 1, dtype=np.longdouble)
        e[0] = 1.0
        xs = arr.astype(np.longdouble)
        for k in range(n):
            x = xs[k]
            top = min(m, k + 1)
            for j in range(top, 0, -1):
                e[j] += x * e[j - 1]
            if k + 1 >= m:
                values[k + 1 - m] = float(e[m])
        values /= denom
        return PrefixUPath(m=m, n=n, values=values, theta=theta)

    if m == 2:
        s1 = c1 = s2 = c2 = 0.0
        out = values
        data = arr.tolist()
        for k in range(n):
            x = data[k]
            # e2 += x * e1
            y = x * (s1 + c1)
            t = s2 + y
            if abs(s2) >= abs(y):
                c2 += (s2 - t) + y
            else:
                c2 += (y - t) + s2
            s2 = t
            # e1 += x
            t = s1 + x
            if abs(s1) >= abs(x):
                c1 += (s1 - t) + x
            else:
                c1 += (x - t) + s1
            s1 = t
            if k >= 1:
                out[k - 1] = s2 + c2
        values /= denom
        return PrefixUPath(m=2, n=n, values=values, theta=theta)

    acc = [NeumaierSum() for _ in range(m + 1)]
    acc[0].s = 1.0
    data = arr.tolist()
    for k in range(n):
        x = data[k]
        top = min(m, k + 1)
        for j in range(top, 0, -1):
            acc[j].add(x * acc[j - 1].total)
        if k + 1 >= m:
            values[k + 1 - m] = acc[m].total
    values /= denom
    return PrefixUPath(m=m, n=n, values=values, theta=theta)


class _Fenwick:
    """Fenwick tree over value ranks carrying counts and value sums."""

    def __init__(self, size: int):
        self.n = size
        self.cnt = [0] * (size + 1)
        self.sum = [0.0] * (size + 1)

    def insert(self, rank: int, value: float) -> None:
        i = rank + 1
        while i <= self.n:
            self.cnt[i] += 1
            self.sum[i] += value
            i += i & (-i)

    def prefix(self, rank: int) -> tuple[int, float]:
        """(count, sum) over ranks <= rank."""
        c, s = 0, 0.0
        i = rank + 1
        while i > 0:
            c += self.cnt[i]
            s += self.sum[i]
            i -= i & (-i)
        return c, s


DEGREE2_KINDS = ("variance", "gini", "wilcoxon")


def prefix_u_degree2_fast(kind: str, sample, theta: float = math.nan) -> PrefixUPath:
    """Fast order-2 prefixes for the finite-variance baseline kernels."""
    if kind not in DEGREE2_KINDS:
        raise ArgumentError(f"unknown kind {kind!r}; known: {DEGREE2_KINDS}")
    arr = _as_sample(sample)
    n = len(arr)
    if n < 2:
        raise ArgumentError("need n >= 2")
    k = np.arange(2, n + 1, dtype=float)

    if kind == "variance":
        centered = arr - math.fsum(arr.tolist()) / n
        p1 = np.cumsum(centered)[1:]
        p2 = np.cumsum(centered * centered)[1:]
        values = (k * p2 - p1 * p1) / (k * (k - 1.0))
        return PrefixUPath(m=2, n=n, values=values, theta=theta)

    if kind == "gini":
        uniq = np.unique(arr)
        ranks = np.searchsorted(uniq, arr)
        tree = _Fenwick(len(uniq))
        acc = NeumaierSum()
        running_sum = NeumaierSum()
        values = np.empty(n - 1)
        data = arr.tolist()
        for i in range(n):
            x = data[i]
            if i > 0:
                c_le, s_le = tree.prefix(int(ranks[i]))
                s_tot = running_sum.total
                # sum_{j<i} |x - x_j|: below-or-equal part + above part
                acc.add((c_le * x - s_le) + ((s_tot - s_le) - (i - c_le) * x))
                values[i - 1] = acc.total
            tree.insert(int(ranks[i]), x)
            running_sum.add(x)
        values /= k * (k - 1.0) / 2.0
        return PrefixUPath(m=2, n=n, values=values, theta=theta)

    # wilcoxon: count of earlier partners with x_j > -x_i (exact integers)
    grid = np.unique(np.concatenate([arr, -arr]))
    ranks = np.searchsorted(grid, arr)
    neg_ranks = np.searchsorted(grid, -arr)
    tree = _Fenwick(len(grid))
    total_pairs = 0
    values = np.empty(n - 1)
    for i in range(n):
        if i > 0:
            c_le, _ = tree.prefix(int(neg_ranks[i]))
            total_pairs += i - c_le
            values[i - 1] = float(total_pairs)
    # note: insert after the query so a point never pairs with itself
        tree.insert(int(ranks[i]), 0.0)
    values /= k * (k - 1.0) / 2.0
    return PrefixUPath(m=2, n=n, values=values, theta=theta)


def prefix_u_fast(kernel: Kernel, sample, theta: float | None = None) -> PrefixUPath:
    """Dispatch to the structure-specific fast path; oracle as fallback."""
    th = kernel.theta if theta is None else theta
    if kernel.family in ("product", "mean"):
        return prefix_u_product_fast(kernel.order, sample, theta=th)
    if kernel.family in DEGREE2_KINDS:
        return prefix_u_degree2_fast(kernel.family, sample, theta=th)
    return prefix_u_oracle(kernel, sample, theta=th)
