"""Exact combinatorial sequences behind the SPOD weight construction.

Everything here works in exact integer or ``Fraction`` arithmetic. Floating
point only appears in the closed-form cross-checks (``*_closed_form``).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Mapping

from .errors import OrderCapExceeded

DEFAULT_ORDER_CAP = 12


@dataclass(frozen=True)
class MultiIndex:
    """Finitely supported multi-index, stored as sorted ``(dimension, exponent)`` pairs.

    Dimensions are 1-based. Zero exponents are never stored.
    """

    entries: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        prev = 0
        for j, e in self.entries:
            if j <= prev:
                raise ValueError("dimensions must be strictly increasing and >= 1")
            if e < 1:
                raise ValueError("stored exponents must be >= 1")
            prev = j

    @classmethod
    def from_dict(cls, mapping: Mapping[int, int]) -> MultiIndex:
        return cls(tuple(sorted((int(j), int(e)) for j, e in mapping.items() if e != 0)))

    @classmethod
    def from_list(cls, exponents) -> MultiIndex:
        """Dense constructor: ``exponents[0]`` is the exponent of dimension 1."""
        return cls(tuple((j + 1, int(e)) for j, e in enumerate(exponents) if e != 0))

    @classmethod
    def unit(cls, j: int) -> MultiIndex:
        return cls(((j, 1),))

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def order(self) -> int:
        return sum(e for _, e in self.entries)

    def support(self) -> frozenset[int]:
        return frozenset(j for j, _ in self.entries)

    def __getitem__(self, j: int) -> int:
        for k, e in self.entries:
            if k == j:
                return e
        return 0

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __le__(self, other: MultiIndex) -> bool:
        return all(e <= other[j] for j, e in self.entries)

    def __sub__(self, other: MultiIndex) -> MultiIndex:
        if not other <= self:
            raise ValueError("difference would have a negative entry")
        d = self.as_dict()
        for j, e in other.entries:
            d[j] -= e
        return MultiIndex.from_dict(d)

    def __add__(self, other: MultiIndex) -> MultiIndex:
        d = self.as_dict()
        for j, e in other.entries:
            d[j] = d.get(j, 0) + e
        return MultiIndex.from_dict(d)

    def factorial(self) -> int:
        return math.prod(math.factorial(e) for _, e in self.entries)

    def binom(self, w: MultiIndex) -> int:
        """Multi-index binomial coefficient ``C(self, w)``."""
        return math.prod(math.comb(e, w[j]) for j, e in self.entries)

    def lower_set(self) -> Iterator[MultiIndex]:
        """All ``w <= self`` (including 0 and self), by per-coordinate product."""
        dims = [j for j, _ in self.entries]
        ranges = [range(e + 1) for _, e in self.entries]
        for combo in itertools.product(*ranges):
            yield MultiIndex(tuple((j, c) for j, c in zip(dims, combo) if c))

    def minus_unit_set(self, u) -> MultiIndex:
        """``self - e_u`` for a subset ``u`` of the support."""
        return self - MultiIndex(tuple((j, 1) for j in sorted(u)))


ZERO = MultiIndex()


class SequenceKind(enum.Enum):
    A = "a"
    APRIME = "a_prime"
    TAU = "tau"


@dataclass(frozen=True)
class SequenceTable:
    kind: SequenceKind
    values: tuple

    def __getitem__(self, k):
        return self.values[k]

    def __len__(self):
        return len(self.values)


@lru_cache(maxsize=None)
def stirling2(n: int, m: int) -> int:
    """Stirling number of the second kind via the alternating-sum formula."""
    if n < 0 or m < 0:
        raise ValueError("stirling2 is defined for non-negative arguments")
    if n == 0 and m == 0:
        return 1
    if m > n:
        return 0
    total = sum((-1) ** (m - j) * math.comb(m, j) * j**n for j in range(m + 1))
    q, r = divmod(total, math.factorial(m))
    assert r == 0
    return q


def delannoy_q(q, m: MultiIndex) -> int:
    """Generalized Delannoy number ``D_q(m)``.

    ``q`` is a positive integer, or ``None``/``math.inf`` for the unbounded case.
    Memoization is local to the call.
    """
    if q is None or q == math.inf:
        qmax = None
    else:
        qmax = int(q)
        if qmax < 1:
            raise ValueError("q must be >= 1")
    memo: dict[MultiIndex, int] = {ZERO: 1}

    def rec(mi: MultiIndex) -> int:
        hit = memo.get(mi)
        if hit is not None:
            return hit
        supp = sorted(mi.support())
        top = len(supp) if qmax is None else min(qmax, len(supp))
        total = 0
        for size in range(1, top + 1):
            for u in itertools.combinations(supp, size):
                total += rec(mi.minus_unit_set(u))
        memo[mi] = total
        return total

    return rec(m)


def delannoy_closed_form(k: int, l: int) -> int:
    """Two-dimensional Delannoy number, ``sum_t 2^t C(k,t) C(l,t)``."""
    return sum(2**t * math.comb(k, t) * math.comb(l, t) for t in range(min(k, l) + 1))


def seq_a(k_max: int) -> SequenceTable:
    vals = [Fraction(1), Fraction(1)][: k_max + 1]
    for k in range(2, k_max + 1):
        vals.append(vals[k - 1] + vals[k - 2] / 2)
    return SequenceTable(SequenceKind.A, tuple(vals))


def seq_a_closed_form(k: int) -> float:
    r3 = math.sqrt(3.0)
    return ((1 + r3) ** (k + 1) - (1 - r3) ** (k + 1)) / (2 ** (k + 1) * r3)


def seq_a_prime(k_max: int) -> SequenceTable:
    vals = [Fraction(1), Fraction(1)][: k_max + 1]
    for k in range(2, k_max + 1):
        vals.append(k * vals[k - 1] + Fraction(k * k - k, 2) * vals[k - 2])
    return SequenceTable(SequenceKind.APRIME, tuple(vals))


def seq_tau(k_max: int) -> SequenceTable:
    vals = [1]
    for k in range(1, k_max + 1):
        vals.append(sum((k - j + 1) * vals[j] for j in range(k)))
    return SequenceTable(SequenceKind.TAU, tuple(vals))


def seq_tau_closed_form(k: int) -> float:
    """Closed form of tau_k; only valid for k >= 1 (it gives 1/2 at k = 0)."""
    r2 = math.sqrt(2.0)
    return ((2 + r2) ** (k + 1) - (2 - r2) ** (k + 1)) / (4 * r2)


def seq_p(m: MultiIndex, d: int, order_cap: int = DEFAULT_ORDER_CAP) -> Fraction:
    """The order-weight sequence ``P_m`` for spatial dimension ``d``.

    P_0 = 1 and P_m = (|m|+d)!/(m! d!) + sum_{w<m} P_w (|m|-|w|+1)!.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if m.order() > order_cap:
        raise OrderCapExceeded(f"|m| = {m.order()} exceeds order cap {order_cap}")
    memo: dict[MultiIndex, Fraction] = {ZERO: Fraction(1)}
    d_fact = math.factorial(d)

    def rec(mi: MultiIndex) -> Fraction:
        hit = memo.get(mi)
        if hit is not None:
            return hit
        order = mi.order()
        val = Fraction(math.factorial(order + d), mi.factorial() * d_fact)
        for w in mi.lower_set():
            if w == mi:
                continue
            val += rec(w) * math.factorial(order - w.order() + 1)
        memo[mi] = val
        return val

    return rec(m)


def p_upper_bound(order: int, d: int) -> int:
    """2 tau_|m| (|m|+d-1)!/(d-1)!, the bound on P_m for m != 0."""
    tau = seq_tau(order)[order]
    return 2 * tau * math.factorial(order + d - 1) // math.factorial(d - 1)


def order_factor(ell: int, d: int) -> int:
    """(ell+d-1)!/(d-1)!, the order-dependent part of the SPOD weights."""
    return math.factorial(ell + d - 1) // math.factorial(d - 1)


def multi_indices(order: int, dims: int, max_support: int | None = None) -> Iterator[MultiIndex]:
    """Every multi-index of the given order over dimensions 1..dims."""
    for combo in itertools.combinations_with_replacement(range(1, dims + 1), order):
        counts: dict[int, int] = {}
        for j in combo:
            counts[j] = counts.get(j, 0) + 1
        if max_support is not None and len(counts) > max_support:
            continue
        yield MultiIndex.from_dict(counts)
