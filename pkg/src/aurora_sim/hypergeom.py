"""Exact hypergeometric arithmetic.

Everything here works on Python integers and :class:`fractions.Fraction`;
nothing is rounded. Probabilities passed in as strings are parsed as
decimals, so ``"0.999"`` becomes exactly ``999/1000``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

ProbabilityLike = Union[str, Fraction, int, float]


@dataclass(frozen=True)
class HypergeomParams:
    """Population of ``population`` items, ``successes`` of them good, ``sample`` drawn."""

    population: int
    successes: int
    sample: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.population:
            raise ValueError(
                f"successes must be in [0, {self.population}], got {self.successes}"
            )
        if not 0 <= self.sample <= self.population:
            raise ValueError(
                f"sample must be in [0, {self.population}], got {self.sample}"
            )


def as_probability(p: ProbabilityLike) -> Fraction:
    """Convert ``p`` to an exact rational.

    Floats go through their shortest ``repr`` so ``0.999`` maps to
    ``999/1000`` rather than the nearest binary double.
    """
    if isinstance(p, Fraction):
        return p
    if isinstance(p, float):
        return Fraction(repr(p))
    return Fraction(p)


def _support(params: HypergeomParams) -> tuple[int, int]:
    n, big_k, pop = params.sample, params.successes, params.population
    return max(0, n - (pop - big_k)), min(n, big_k)


def _weight(params: HypergeomParams, x: int) -> int:
    return math.comb(params.successes, x) * math.comb(
        params.population - params.successes, params.sample - x
    )


def pmf(params: HypergeomParams, x: int) -> Fraction:
    lo, hi = _support(params)
    if x < lo or x > hi:
        return Fraction(0)
    return Fraction(_weight(params, x), math.comb(params.population, params.sample))


def tail_weight(params: HypergeomParams, k: int) -> int:
    """Integer numerator of P(X >= k); the denominator is C(population, sample)."""
    lo, hi = _support(params)
    x = max(k, lo)
    if x > hi:
        return 0
    big_k, n = params.successes, params.sample
    bad = params.population - big_k
    w = _weight(params, x)
    total = w
    while x < hi:
        # w(x+1) = w(x) * (K-x)(n-x) / ((x+1)(N-K-n+x+1)); the division is exact
        w = w * (big_k - x) * (n - x) // ((x + 1) * (bad - n + x + 1))
        x += 1
        total += w
    return total


def tail_geq(params: HypergeomParams, k: int) -> Fraction:
    """P(X >= k) as an exact fraction."""
    return Fraction(tail_weight(params, k), math.comb(params.population, params.sample))


def predicate(params: HypergeomParams, k: int, p: ProbabilityLike) -> bool:
    """True iff P(X >= k) >= p, compared without rounding."""
    p = as_probability(p)
    # cross-multiplied to avoid building a Fraction over a huge gcd
    lhs = tail_weight(params, k) * p.denominator
    rhs = p.numerator * math.comb(params.population, params.sample)
    return lhs >= rhs


def log_tail_geq(params: HypergeomParams, k: int) -> float:
    """Floating-point P(X >= k) via log-gamma. Fast, approximate, for reporting only."""
    lo, hi = _support(params)
    start = max(k, lo)
    if start > hi:
        return 0.0

    def lcomb(a: int, b: int) -> float:
        return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)

    denom = lcomb(params.population, params.sample)
    bad = params.population - params.successes
    terms = [
        lcomb(params.successes, x) + lcomb(bad, params.sample - x) - denom
        for x in range(start, hi + 1)
    ]
    top = max(terms)
    return min(1.0, math.exp(top) * sum(math.exp(t - top) for t in terms))
