"""Discrete-event gathering engine.

Time is logical: one draw (ping/pong pair, or a ping that got no answer)
is one tick. All randomness flows through a single ``random.Random``
(Mersenne Twister MT19937) seeded with an integer, and only ``randrange``
is called on it, so a seed pins every run exactly.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Union

from .netmodel import (
    JOINER,
    RevealLedger,
    RoleAssignment,
    Topology,
    Unresponsive,
    peer_list,
    sample_without_replacement,
)


def make_rng(seed: int) -> random.Random:
    return random.Random(seed)


def split_seed(base: int, index: int) -> int:
    """Seed of the ``index``-th run of a batch: ``base + index`` mod 2**64."""
    return (base + index) % (1 << 64)


@dataclass
class World:
    """Immutable topology and roles plus the state one run mutates."""

    topology: Topology
    roles: RoleAssignment
    offline: frozenset[int] = frozenset()
    max_addr_per_pong: Optional[int] = None
    ledger: RevealLedger = field(default_factory=RevealLedger)
    querier: int = JOINER

    @classmethod
    def build(
        cls,
        topology: Topology,
        roles: RoleAssignment,
        rng: Optional[random.Random] = None,
        unresponsive_prob: float = 0.0,
        max_addr_per_pong: Optional[int] = None,
    ) -> "World":
        offline: frozenset[int] = frozenset()
        if unresponsive_prob > 0:
            if rng is None:
                raise ValueError("an rng is needed to pick offline nodes")
            count = round(unresponsive_prob * topology.node_count)
            offline = frozenset(
                sample_without_replacement(rng, range(topology.node_count), count)
            )
        return cls(topology, roles, offline, max_addr_per_pong)

    @property
    def node_count(self) -> int:
        return self.topology.node_count

    def ask(self, responder: int, tick: int) -> list[int]:
        return peer_list(
            responder,
            self.querier,
            self.roles,
            self.topology,
            self.ledger,
            tick=tick,
            offline=self.offline,
            max_addr=self.max_addr_per_pong,
        )


class HaltReason(str, enum.Enum):
    SATISFIED = "satisfied"
    POLICY = "policy"
    NONE_LEFT = "none_left"


@dataclass
class GatheringState:
    first_contact: int
    discovered: list[int] = field(default_factory=list)
    queried: set[int] = field(default_factory=set)
    exhausted: set[int] = field(default_factory=set)
    dag_edges: list[tuple[int, int]] = field(default_factory=list)
    draws: int = 0
    failed_pings: int = 0
    messages: int = 0
    new_per_draw: list[int] = field(default_factory=list)
    new_total: int = 0
    trace: list[dict] = field(default_factory=list)
    halt_reason: Optional[HaltReason] = None
    _known: set[int] = field(default_factory=set, repr=False)
    _pool: list[int] = field(default_factory=list, repr=False)
    _pool_index: dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.discovered)

    def knows(self, node: int) -> bool:
        return node in self._known

    def eligible(self) -> list[int]:
        """Discovered nodes not yet queried or exhausted, in pool order."""
        return list(self._pool)

    def mean_new(self) -> Fraction:
        return Fraction(self.new_total, self.draws) if self.draws else Fraction(0)

    def _admit(self, node: int) -> None:
        self._known.add(node)
        self.discovered.append(node)
        if node not in self.queried and node not in self.exhausted:
            self._pool_index[node] = len(self._pool)
            self._pool.append(node)

    def _retire(self, node: int) -> None:
        i = self._pool_index.pop(node, None)
        if i is None:
            return
        last = self._pool.pop()
        if last != node:
            self._pool[i] = last
            self._pool_index[last] = i


@dataclass(frozen=True)
class DrawResult:
    target: int
    response: Optional[list[int]]  # None when the target did not answer
    new_nodes: list[int]


def perform_draw(state: GatheringState, target: int, world: World) -> DrawResult:
    """Ping ``target``, merge the unique nodes of its pong into the state."""
    if target in state.queried or target in state.exhausted:
        raise ValueError(f"node {target} already drawn from")
    if target != state.first_contact and not state.knows(target):
        raise ValueError(f"node {target} is not discovered")
    state._retire(target)
    state.queried.add(target)
    tick = state.draws + state.failed_pings
    try:
        response = world.ask(target, tick)
    except Unresponsive:
        state.failed_pings += 1
        state.messages += 1
        state.exhausted.add(target)
        state.trace.append(_trace_row(state, target, 0))
        return DrawResult(target, None, [])

    new = [x for x in response if not state.knows(x)]
    for x in new:
        state._admit(x)
        if x != state.first_contact:
            state.dag_edges.append((target, x))
    state.draws += 1
    state.messages += 2
    state.new_per_draw.append(len(new))
    state.new_total += len(new)
    if not new:
        state.exhausted.add(target)
    state.trace.append(_trace_row(state, target, len(new)))
    return DrawResult(target, response, new)


def _trace_row(state: GatheringState, target: int, new: int) -> dict:
    return {
        "step": state.draws + state.failed_pings,
        "target": target,
        "new_nodes": new,
        "U": state.size,
        "messages": state.messages,
    }


def next_target(state: GatheringState, rng: random.Random) -> Optional[int]:
    """Uniform pick among eligible discovered nodes; ``None`` when none are left."""
    if not state._pool:
        return None
    return state._pool[rng.randrange(len(state._pool))]


@dataclass(frozen=True)
class DefaultHalting:
    """Never halts on its own; the gathering ends when nobody is left to ask."""

    def should_halt(self, state: GatheringState) -> bool:
        return False

    def describe(self) -> dict:
        return {"policy": "default"}


@dataclass(frozen=True)
class AvgNewNodesThreshold:
    """Halt once the cumulative mean of new nodes per draw drops below ``threshold``.

    The mean is only consulted after ``min_draws`` draws.
    """

    threshold: Fraction
    min_draws: int = 10

    def __post_init__(self):
        object.__setattr__(self, "threshold", Fraction(self.threshold))
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")
        if self.min_draws < 1:
            raise ValueError("min_draws must be >= 1")

    def should_halt(self, state: GatheringState) -> bool:
        if state.draws < self.min_draws:
            return False
        return state.new_total < self.threshold * state.draws

    def describe(self) -> dict:
        return {"policy": "avg_new_nodes", "threshold": str(self.threshold), "min_draws": self.min_draws}


@dataclass(frozen=True)
class MaxDraws:
    limit: int

    def __post_init__(self):
        if self.limit < 0:
            raise ValueError("limit must be >= 0")

    def should_halt(self, state: GatheringState) -> bool:
        return state.draws + state.failed_pings >= self.limit

    def describe(self) -> dict:
        return {"policy": "max_draws", "limit": self.limit}


HaltingPolicy = Union[DefaultHalting, AvgNewNodesThreshold, MaxDraws]


def run_gathering(
    entry: int,
    policy: HaltingPolicy,
    world: World,
    rng: random.Random,
    stop_check: Optional[Callable[[GatheringState], bool]] = None,
) -> GatheringState:
    """Draw from ``entry`` onward until ``stop_check`` holds, the policy halts, or nobody is left.

    ``stop_check`` is evaluated before the policy at every step, so a draw
    that both satisfies the caller and trips the policy counts as satisfied.
    """
    if not 0 <= entry < world.node_count:
        raise ValueError(f"entry {entry} is not a network node")
    state = GatheringState(first_contact=entry)
    target: Optional[int] = entry
    while True:
        if stop_check is not None and stop_check(state):
            state.halt_reason = HaltReason.SATISFIED
            return state
        if policy.should_halt(state):
            state.halt_reason = HaltReason.POLICY
            return state
        if target is None:
            target = next_target(state, rng)
            if target is None:
                state.halt_reason = HaltReason.NONE_LEFT
                return state
        perform_draw(state, target, world)
        target = None


def trace_jsonl(state: GatheringState) -> str:
    return "".join(json.dumps(row, separators=(",", ":")) + "\n" for row in state.trace)
