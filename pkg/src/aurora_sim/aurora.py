"""Probabilistic honest-set construction and its two uses.

``construct_ps`` interleaves gathering draws with the hypergeometric check
and samples the set once the check passes. ``choose_bootstrap`` walks a
safe set from the highest advertised chain head down until a sync succeeds.
``verify_inclusion`` majority-votes Merkle proofs across a progress set.
"""

from __future__ import annotations

import enum
import hashlib
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

from . import merkle
from .hypergeom import ProbabilityLike, as_probability
from .netmodel import RoleAssignment, sample_without_replacement
from .simcore import (
    DefaultHalting,
    GatheringState,
    HaltingPolicy,
    HaltReason,
    MaxDraws,
    World,
    run_gathering,
)
from .sizing import (
    NoSolution,
    SetKind,
    achieved_probability,
    population_threshold,
    required_honest,
    round_probability,
    satisfies,
    table1,
)


class Halted(Exception):
    """The gathering ended before the guarantee could be met."""

    def __init__(self, state: GatheringState, reason: str):
        super().__init__(reason)
        self.state = state
        self.reason = reason


class AllCandidatesFailed(Exception):
    def __init__(self, attempts: list[dict], messages: int):
        super().__init__("every safe-set member failed to sync")
        self.attempts = attempts
        self.messages = messages


def sqrt_cap(t: int) -> int:
    # a zero-size set is useless, so t = 0 still allows one member
    return max(1, math.isqrt(t))


@dataclass(frozen=True)
class AuroraParams:
    confidence: Fraction
    first_contact: int
    tolerance: int
    kind: SetKind = SetKind.SAFE
    max_set_size: Optional[int] = None
    halting: HaltingPolicy = field(default_factory=DefaultHalting)
    sqrt_constraint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "confidence", as_probability(self.confidence))
        object.__setattr__(self, "kind", SetKind(self.kind))
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie strictly between 0 and 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.sqrt_constraint:
            cap = sqrt_cap(self.tolerance)
            size = cap if self.max_set_size is None else self.max_set_size
            if size > cap:
                raise ValueError(f"max_set_size {size} exceeds floor(sqrt(t)) = {cap}")
            object.__setattr__(self, "max_set_size", size)
        if self.max_set_size is not None and self.max_set_size < 1:
            raise ValueError("max_set_size must be >= 1")

    def required_honest(self, size: int) -> int:
        return required_honest(self.kind, size)

    def describe(self) -> dict:
        return {
            "confidence": str(self.confidence),
            "first_contact": self.first_contact,
            "tolerance": self.tolerance,
            "kind": self.kind.value,
            "max_set_size": self.max_set_size,
            "sqrt_constraint": self.sqrt_constraint,
            "halting": self.halting.describe(),
        }


@dataclass(frozen=True)
class ProbabilisticSet:
    members: tuple[int, ...]
    kind: SetKind
    achieved_p: Fraction
    tolerance: int
    population: int
    gathering: GatheringState = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def required_honest(self) -> int:
        return required_honest(self.kind, self.size)


@lru_cache(maxsize=256)
def _threshold(t: int, kind: SetKind, cap: Optional[int], p: Fraction) -> Optional[int]:
    try:
        return population_threshold(t, kind, cap, p)
    except NoSolution:
        return None


def smallest_set_size(u: int, t: int, kind: SetKind, cap: Optional[int], p: Fraction) -> Optional[int]:
    """Smallest size <= cap satisfying the guarantee at population ``u``."""
    top = u if cap is None else min(cap, u)
    for s in range(1, top + 1):
        if satisfies(u, t, s, kind, p):
            return s
    return None


def construct_ps(params: AuroraParams, world: World, rng: random.Random) -> ProbabilisticSet:
    """Gather until a set meeting the guarantee exists, then sample it.

    Raises :class:`Halted` if the halting policy fires or no queryable node
    is left first.
    """
    t, kind, p, cap = params.tolerance, params.kind, params.confidence, params.max_set_size
    # the check is monotone in |U|, so the per-draw test reduces to a cached threshold
    threshold = _threshold(t, kind, cap, p)
    floor = t if kind is SetKind.SAFE else 2 * t

    def ready(state: GatheringState) -> bool:
        return threshold is not None and state.size > floor and state.size >= threshold

    state = run_gathering(params.first_contact, params.halting, world, rng, stop_check=ready)
    if state.halt_reason is not HaltReason.SATISFIED:
        raise Halted(state, state.halt_reason.value)
    u = state.size
    size = smallest_set_size(u, t, kind, cap, p)
    if size is None:  # pragma: no cover - threshold and linear search disagree
        raise AssertionError(f"threshold {threshold} admitted u={u} but no size fits")
    members = tuple(sample_without_replacement(rng, state.discovered, size))
    return ProbabilisticSet(
        members=members,
        kind=kind,
        achieved_p=achieved_probability(u, t, size, kind),
        tolerance=t,
        population=u,
        gathering=state,
    )


@dataclass(frozen=True)
class LedgerOracle:
    """Ground truth the simulation checks against.

    Honest nodes advertise the canonical head; malicious nodes advertise a
    strictly higher, spoofed total difficulty and always lie about inclusion.
    """

    roles: RoleAssignment
    block: merkle.MerkleTree
    block_id: str = "block-0"
    canonical_difficulty: int = 1_000_000
    spoof_margin: int = 1

    def head(self, node: int) -> tuple[int, str]:
        if self.roles.is_malicious(node):
            return self.canonical_difficulty + self.spoof_margin, "spoofed"
        return self.canonical_difficulty, "canonical"

    def attempt_sync(self, node: int) -> bool:
        """Downloading and checking the chain exposes tampering."""
        return not self.roles.is_malicious(node)

    def includes(self, txid: bytes) -> bool:
        return txid in self.block.leaves

    def proof_from(self, node: int, txid: bytes, rng: random.Random) -> Optional[merkle.MerkleProof]:
        if not self.roles.is_malicious(node):
            if not self.includes(txid):
                return None
            return merkle.prove(self.block, self.block.index_of(txid))
        # forged path of random digests: never folds to the honest root
        height = max(self.block.height, 1)
        path = tuple(
            (rng.getrandbits(256).to_bytes(32, "big"), merkle.LEFT if rng.randrange(2) else merkle.RIGHT)
            for _ in range(height)
        )
        return merkle.MerkleProof(txid, path, self.block.root)


def make_ledger(roles: RoleAssignment, rng: random.Random, tx_count: int = 16) -> LedgerOracle:
    txids = [hashlib.sha256(rng.getrandbits(64).to_bytes(8, "big")).digest() for _ in range(tx_count)]
    return LedgerOracle(roles, merkle.build(txids))


def absent_txid(ledger: LedgerOracle, rng: random.Random) -> bytes:
    while True:
        txid = hashlib.sha256(b"absent" + rng.getrandbits(64).to_bytes(8, "big")).digest()
        if not ledger.includes(txid):
            return txid


@dataclass
class BootstrapResult:
    node: int
    attempts: list[dict]
    messages: int


def choose_bootstrap(pss: ProbabilisticSet, ledger: LedgerOracle) -> BootstrapResult:
    """Sync with the member advertising the highest head; drop it if tampering shows up."""
    if pss.kind is not SetKind.SAFE:
        raise ValueError("bootstrap selection expects a safe set")
    remaining = set(pss.members)
    attempts = []
    messages = 0
    while remaining:
        # highest difficulty first, ties to the lowest id
        candidate = min(remaining, key=lambda n: (-ledger.head(n)[0], n))
        ok = ledger.attempt_sync(candidate)
        messages += 2
        attempts.append({"node": candidate, "head": ledger.head(candidate)[0], "synced": ok})
        if ok:
            return BootstrapResult(candidate, attempts, messages)
        remaining.discard(candidate)
    raise AllCandidatesFailed(attempts, messages)


class Verdict(str, enum.Enum):
    INCLUDED = "included"
    NOT_INCLUDED = "not_included"
    UNDECIDABLE = "undecidable"


@dataclass
class InclusionResult:
    verdict: Verdict
    included: int
    not_included: int
    queried: int
    messages: int
    votes: list[dict]


def verify_inclusion(
    pps: ProbabilisticSet,
    txid: bytes,
    block_id: str,
    root: bytes,
    ledger: LedgerOracle,
    rng: random.Random,
    offline: frozenset[int] = frozenset(),
) -> InclusionResult:
    """Ask members in order for a proof of ``txid``; stop at the first majority."""
    majority = pps.size // 2 + 1
    included = not_included = 0
    messages = 0
    votes = []
    for node in pps.members:
        if node in offline:
            messages += 1
            votes.append({"node": node, "vote": None})
            continue
        messages += 2
        proof = ledger.proof_from(node, txid, rng)
        valid = proof is not None and proof.leaf == txid and merkle.verify(proof, root)
        if valid:
            included += 1
        else:
            not_included += 1
        votes.append({"node": node, "vote": "included" if valid else "not_included"})
        if included == majority:
            return InclusionResult(Verdict.INCLUDED, included, not_included, len(votes), messages, votes)
        if not_included == majority:
            return InclusionResult(Verdict.NOT_INCLUDED, included, not_included, len(votes), messages, votes)
    return InclusionResult(Verdict.UNDECIDABLE, included, not_included, len(votes), messages, votes)


def suggest_params(
    world: World,
    entry: int,
    budget: int,
    rng: random.Random,
    p: ProbabilityLike = "0.999",
):
    """Gather for ``budget`` ticks, then size sets for the population reached.

    Returns the gathering state and the sizing-table style rows for ``|U|`` so the
    caller can pick a tolerance.
    """
    state = run_gathering(entry, MaxDraws(budget), world, rng)
    rows = table1(state.size, p) if state.size >= 2 else []
    return state, rows


def decision_trace(
    params: AuroraParams,
    state: GatheringState,
    pset: Optional[ProbabilisticSet],
    roles: RoleAssignment,
    extra: Optional[dict] = None,
) -> dict:
    doc = {
        "params": params.describe(),
        "gathering": {
            "halt_reason": state.halt_reason.value if state.halt_reason else None,
            "draws": state.draws,
            "failed_pings": state.failed_pings,
            "messages": state.messages,
            "discovered": state.size,
        },
        "set": None,
    }
    if pset is not None:
        doc["set"] = {
            "kind": pset.kind.value,
            "members": list(pset.members),
            "honest_members": sum(1 for m in pset.members if not roles.is_malicious(m)),
            "achieved_p": str(round_probability(pset.achieved_p, 10)),
            "population": pset.population,
        }
    if extra:
        doc.update(extra)
    return doc
