"""Deterministic and probabilistic honest-set sizes.

A *safe* set must contain at least one honest node, a *progress* set an
honest majority. The deterministic sizes are the closed forms ``t + 1`` and
``2t + 1``; the probabilistic sizes come from the smallest sample whose
hypergeometric tail clears the confidence ``p``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from decimal import ROUND_DOWN, ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Optional

from .hypergeom import HypergeomParams, ProbabilityLike, as_probability, tail_geq, tail_weight

# largest address table a Bitcoin client keeps; upper edge of population searches
MAX_POPULATION = 20480


class NoSolution(Exception):
    """The population cannot support the requested guarantee."""


class SetKind(str, enum.Enum):
    SAFE = "safe"
    PROGRESS = "progress"


class Bound(str, enum.Enum):
    SQRT = "sqrt"
    LN = "ln"

    def value_at(self, t: int) -> float:
        return math.sqrt(t) if self is Bound.SQRT else math.log(t)

    def admits(self, size: int, t: int) -> bool:
        """Exact ``size <= f(t)`` for an integer size."""
        if t < 1:
            return False
        if self is Bound.SQRT:
            return size <= math.isqrt(t)
        # size <= ln t  <=>  e**size <= t; e**size is never an integer
        return math.exp(size) <= t

    def cap(self, t: int) -> int:
        """Largest integer size admitted at ``t`` (0 if none)."""
        if t < 1:
            return 0
        if self is Bound.SQRT:
            return math.isqrt(t)
        s = int(math.log(t))
        while s >= 0 and not self.admits(s, t):
            s -= 1
        while self.admits(s + 1, t):
            s += 1
        return max(s, 0)


def required_honest(kind: SetKind, size: int) -> int:
    return 1 if kind is SetKind.SAFE else size // 2 + 1


def _check_kind_precondition(kind: SetKind, u: int, t: int) -> None:
    if t < 0:
        raise ValueError(f"tolerance must be >= 0, got {t}")
    if kind is SetKind.SAFE and not u > t:
        raise ValueError(f"safe sets need u > t (u={u}, t={t})")
    if kind is SetKind.PROGRESS and not u > 2 * t:
        raise ValueError(f"progress sets need u > 2t (u={u}, t={t})")


@dataclass(frozen=True)
class SizingQuery:
    discovered: int
    tolerance: int
    kind: SetKind
    confidence: Fraction

    def __post_init__(self):
        object.__setattr__(self, "kind", SetKind(self.kind))
        object.__setattr__(self, "confidence", as_probability(self.confidence))
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie strictly between 0 and 1")
        _check_kind_precondition(self.kind, self.discovered, self.tolerance)


@dataclass(frozen=True)
class RatioRow:
    u: int
    kind: SetKind
    bound: Bound
    boundary_t: int
    ratio: Fraction
    bound_value: float
    set_size: int
    deterministic_size: int
    achieved_p: Fraction

    @property
    def honest(self) -> int:
        return self.u - self.boundary_t

    @property
    def size_reduction(self) -> Fraction:
        return Fraction(self.deterministic_size, self.set_size)

    def as_dict(self) -> dict:
        return {
            "u": self.u,
            "kind": self.kind.value,
            "bound": self.bound.value,
            "honest": self.honest,
            "boundary_t": self.boundary_t,
            "ratio": round_sig(self.ratio, 6),
            "bound_value": f"{self.bound_value:.5f}",
            "deterministic_size": self.deterministic_size,
            "set_size": self.set_size,
            "size_reduction": round_sig(self.size_reduction, 8, ROUND_DOWN),
            "achieved_p": str(round_probability(self.achieved_p)),
        }


def round_probability(p: Fraction, places: int = 7) -> Decimal:
    """Round half-even to ``places`` decimals."""
    with localcontext() as ctx:
        ctx.prec = 60
        value = Decimal(p.numerator) / Decimal(p.denominator)
        return value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN)


def round_sig(x: Fraction, digits: int, rounding: str = ROUND_HALF_EVEN) -> str:
    """Format with ``digits`` significant digits."""
    with localcontext() as ctx:
        ctx.prec = digits
        ctx.rounding = rounding
        value = +(Decimal(x.numerator) / Decimal(x.denominator))
    return format(value, "f")


def deterministic_size(kind: SetKind, t: int) -> int:
    if t < 0:
        raise ValueError("tolerance must be >= 0")
    return t + 1 if SetKind(kind) is SetKind.SAFE else 2 * t + 1


def satisfies(u: int, t: int, size: int, kind: SetKind, p: ProbabilityLike) -> bool:
    """Whether a set of ``size`` drawn from ``u`` nodes with ``t`` malicious meets ``p``."""
    p = as_probability(p)
    if size < 1 or size > u or t > u:
        return False
    if kind is SetKind.SAFE:
        # P(X >= 1) = 1 - C(t, s) / C(u, s)
        return math.comb(t, size) * p.denominator <= (p.denominator - p.numerator) * math.comb(u, size)
    k = required_honest(kind, size)
    lhs = tail_weight(HypergeomParams(u, u - t, size), k) * p.denominator
    return lhs >= p.numerator * math.comb(u, size)


def achieved_probability(u: int, t: int, size: int, kind: SetKind) -> Fraction:
    return tail_geq(HypergeomParams(u, u - t, size), required_honest(kind, size))


def min_probabilistic_size(query: SizingQuery, limit: Optional[int] = None) -> int:
    """Smallest set size meeting the query's guarantee.

    Sizes are tried upward from 1; for progress sets the required majority
    grows with the size, so the predicate is not monotone and bisection
    would be unsound. ``limit`` caps the search (defaults to ``u``).
    """
    u, t = query.discovered, query.tolerance
    top = u if limit is None else min(limit, u)
    for s in range(1, top + 1):
        if satisfies(u, t, s, query.kind, query.confidence):
            return s
    raise NoSolution(
        f"no {query.kind.value} set of size <= {top} for u={u}, t={t}, p={query.confidence}"
    )


def _precondition_ceiling(kind: SetKind, u: int) -> int:
    return u - 1 if kind is SetKind.SAFE else (u - 1) // 2


def ratio_scan(u: int, kind: SetKind, bound: Bound, p: ProbabilityLike = "0.999") -> RatioRow:
    """Largest tolerance at which the minimal set fits under ``bound(t)``.

    Tolerances are walked downward from the kind's ceiling one at a time and
    the first hit is returned.
    """
    if u < 2:
        raise ValueError("ratio_scan needs u >= 2")
    kind, bound, p = SetKind(kind), Bound(bound), as_probability(p)
    for t in range(_precondition_ceiling(kind, u), 0, -1):
        cap = bound.cap(t)
        if cap < 1:
            continue
        try:
            size = min_probabilistic_size(SizingQuery(u, t, kind, p), limit=cap)
        except NoSolution:
            continue
        return RatioRow(
            u=u,
            kind=kind,
            bound=bound,
            boundary_t=t,
            ratio=Fraction(u, t),
            bound_value=bound.value_at(t),
            set_size=size,
            deterministic_size=deterministic_size(kind, t),
            achieved_p=achieved_probability(u, t, size, kind),
        )
    raise NoSolution(f"{kind.value}/{bound.value} never satisfiable for u={u}")


def _fits_under(u: int, t: int, kind: SetKind, cap: int, p: Fraction) -> bool:
    return any(satisfies(u, t, s, kind, p) for s in range(1, min(cap, u) + 1))


def min_population(
    t: int,
    kind: SetKind = SetKind.PROGRESS,
    bound: Bound = Bound.SQRT,
    p: ProbabilityLike = "0.999",
    max_population: int = MAX_POPULATION,
) -> int:
    """Smallest number of discovered nodes for which a set of size <= bound(t) exists.

    Dividing by ``t`` gives the ratio the message bound needs.
    """
    if t < 1:
        raise ValueError("min_population needs t >= 1")
    bound = Bound(bound)
    cap = bound.cap(t)
    if cap < 1:
        raise NoSolution(f"{bound.value}({t}) admits no set size")
    return population_threshold(t, kind, cap, p, max_population)


def population_threshold(
    t: int,
    kind: SetKind,
    max_size: Optional[int],
    p: ProbabilityLike = "0.999",
    max_population: int = MAX_POPULATION,
) -> int:
    """Smallest ``u`` at which some set of size <= ``max_size`` meets the guarantee.

    ``max_size=None`` lets the set grow to ``u``, in which case the answer is
    just the kind's precondition. For a fixed size the tail only grows as
    honest nodes are added, so the search bisects over the population.
    """
    kind, p = SetKind(kind), as_probability(p)
    if t < 0:
        raise ValueError("tolerance must be >= 0")
    lo = t + 1 if kind is SetKind.SAFE else 2 * t + 1
    if max_size is None:
        return lo
    if max_size < 1:
        raise NoSolution("set size cap must be >= 1")
    hi = max(max_population, lo)
    if not _fits_under(hi, t, kind, max_size, p):
        raise NoSolution(f"t={t} needs more than {hi} nodes at set size <= {max_size}")
    while lo < hi:
        mid = (lo + hi) // 2
        if _fits_under(mid, t, kind, max_size, p):
            hi = mid
        else:
            lo = mid + 1
    return lo


def table1(u: int, p: ProbabilityLike = "0.999") -> list[RatioRow]:
    """The four (kind, bound) columns: safe/sqrt, safe/ln, progress/sqrt, progress/ln."""
    rows = []
    for kind in (SetKind.SAFE, SetKind.PROGRESS):
        for bound in (Bound.SQRT, Bound.LN):
            try:
                rows.append(ratio_scan(u, kind, bound, p))
            except NoSolution:
                pass
    return rows


FIG1_COLUMNS = ["u", "t", "dss", "pss", "dps", "pps"]


def fig1_table(
    u_values: Iterable[int], p: ProbabilityLike = "0.999", t_step: int = 1
) -> list[dict]:
    """Deterministic vs probabilistic sizes for every tolerance below each ``u``.

    Progress columns are left empty where ``u <= 2t``.
    """
    p = as_probability(p)
    rows = []
    for u in u_values:
        if u < 2:
            raise ValueError("fig1_table needs u >= 2")
        prev_pss = prev_pps = 1
        for t in range(0, u, t_step):
            row = {"u": u, "t": t, "dss": t + 1, "dps": "", "pss": "", "pps": ""}
            prev_pss = _min_size_from(u, t, SetKind.SAFE, p, prev_pss)
            row["pss"] = prev_pss
            if u > 2 * t:
                row["dps"] = 2 * t + 1
                row["pps"] = min_probabilistic_size(SizingQuery(u, t, SetKind.PROGRESS, p))
            rows.append(row)
    return rows


def _min_size_from(u: int, t: int, kind: SetKind, p: Fraction, start: int) -> int:
    # safe sizes are non-decreasing in t, so the previous answer is a valid floor
    start = max(1, start)
    if start > 1 and satisfies(u, t, start - 1, kind, p):
        start = 1
    for s in range(start, u + 1):
        if satisfies(u, t, s, kind, p):
            return s
    raise NoSolution(f"no {kind.value} set for u={u}, t={t}")


def to_csv(rows: list[dict], columns: Optional[list[str]] = None) -> str:
    """Render dict rows as CSV text with LF line endings."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
