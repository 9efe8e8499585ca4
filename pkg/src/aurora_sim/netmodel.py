"""Network world: core/edge topology, adversary clique, stateful peer lists."""

from __future__ import annotations

import bisect
import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

# the joining node is not part of the topology
JOINER = -1

MAX_REGENERATIONS = 100


class GenerationFailed(Exception):
    pass


class Unresponsive(Exception):
    """The responder produced no pong."""


@dataclass(frozen=True)
class TopologyConfig:
    node_count: int = 6356
    core_fraction: float = 0.2
    outbound_core: int = 125
    outbound_edge: int = 8
    core_weight: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if not 0.0 <= self.core_fraction <= 1.0:
            raise ValueError("core_fraction must lie in [0, 1]")
        if self.outbound_core < 0 or self.outbound_edge < 0:
            raise ValueError("outbound degrees must be >= 0")
        if self.node_count > 1 and max(self.outbound_core, self.outbound_edge) >= self.node_count:
            raise ValueError("outbound degrees must be < node_count")
        if self.core_weight < 1:
            raise ValueError("core_weight must be >= 1")

    @property
    def core_size(self) -> int:
        return int(self.node_count * self.core_fraction)


@dataclass(frozen=True)
class Topology:
    """Symmetric knowledge graph. ``adjacency[i]`` is a sorted tuple of neighbors."""

    adjacency: tuple[tuple[int, ...], ...]

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self.adjacency[node]

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a, nbrs in enumerate(self.adjacency) for b in nbrs if a < b]

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        adj: list[set[int]] = [set() for _ in range(node_count)]
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if not (0 <= a < node_count and 0 <= b < node_count):
                raise ValueError(f"edge ({a}, {b}) out of range")
            adj[a].add(b)
            adj[b].add(a)
        return cls(tuple(tuple(sorted(s)) for s in adj))


def reachable(topology: Topology, start: int, allowed: Optional[set[int]] = None) -> set[int]:
    """Breadth-first closure from ``start``, optionally restricted to ``allowed`` nodes."""
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in topology.neighbors(node):
            if nxt not in seen and (allowed is None or nxt in allowed):
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _connected(topology: Topology, nodes: Optional[set[int]] = None) -> bool:
    nodes = set(range(topology.node_count)) if nodes is None else nodes
    if len(nodes) <= 1:
        return True
    return len(reachable(topology, min(nodes), nodes)) == len(nodes)


def _draw_targets(rng: random.Random, source: int, count: int, cum: list[int]) -> set[int]:
    # weighted draw without replacement by rejection; count < node_count
    total = cum[-1]
    picked: set[int] = set()
    while len(picked) < count:
        target = bisect.bisect_right(cum, rng.randrange(total))
        if target != source:
            picked.add(target)
    return picked


def generate_topology(config: TopologyConfig) -> Topology:
    """Core/edge graph: nodes ``0 .. core_size-1`` are core.

    Every node opens ``outbound_core`` or ``outbound_edge`` links to distinct
    targets, core targets weighted ``core_weight``:1. Links are then made
    symmetric. Regenerated until connected.
    """
    n = config.node_count
    core = config.core_size
    cum = list(itertools.accumulate(config.core_weight if i < core else 1 for i in range(n)))
    rng = random.Random(config.seed)
    for _ in range(MAX_REGENERATIONS):
        adj: list[set[int]] = [set() for _ in range(n)]
        if n > 1:
            for a in range(n):
                out = config.outbound_core if a < core else config.outbound_edge
                for b in _draw_targets(rng, a, out, cum):
                    adj[a].add(b)
                    adj[b].add(a)
        topo = Topology(tuple(tuple(sorted(s)) for s in adj))
        if _connected(topo):
            return topo
    raise GenerationFailed(
        f"no connected topology after {MAX_REGENERATIONS} attempts for {config}"
    )


@dataclass(frozen=True)
class RoleAssignment:
    """Malicious set; clique edges among malicious nodes are implicit."""

    malicious: frozenset[int]
    node_count: int

    @property
    def honest(self) -> frozenset[int]:
        return frozenset(range(self.node_count)) - self.malicious

    def is_malicious(self, node: int) -> bool:
        return node in self.malicious

    def knowledge(self, topology: Topology, node: int) -> set[int]:
        """Neighbors of ``node`` in the knowledge graph (topology plus clique)."""
        nbrs = set(topology.neighbors(node))
        if node in self.malicious:
            nbrs |= self.malicious
            nbrs.discard(node)
        return nbrs

    def with_clique(self, topology: Topology) -> Topology:
        """Materialize the clique edges into a new topology."""
        mal = sorted(self.malicious)
        return Topology.from_edges(
            topology.node_count,
            itertools.chain(topology.edges(), itertools.combinations(mal, 2)),
        )

    def honest_connected(self, topology: Topology) -> bool:
        return _connected(topology, set(self.honest))


def plant_adversary(topology: Topology, count: int, seed) -> RoleAssignment:
    """Mark ``count`` nodes, chosen uniformly, as one colluding clique."""
    n = topology.node_count
    if not 0 <= count <= n:
        raise ValueError(f"adversary count must be in [0, {n}], got {count}")
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    return RoleAssignment(frozenset(sample_without_replacement(rng, range(n), count)), n)


def sample_without_replacement(rng: random.Random, population, count: int) -> list:
    """Partial Fisher-Yates over a copy of ``population``; only uses ``randrange``."""
    pool = list(population)
    if count > len(pool):
        raise ValueError("sample larger than population")
    for i in range(count):
        j = rng.randrange(i, len(pool))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:count]


@dataclass
class RevealLedger:
    """What each responder already told each querier. Entries are only added."""

    revealed: dict[tuple[int, int], set[int]] = field(default_factory=dict)
    last_reveal: dict[tuple[int, int], int] = field(default_factory=dict)

    def seen(self, responder: int, querier: int) -> set[int]:
        return self.revealed.get((responder, querier), set())

    def record(self, responder: int, querier: int, nodes: Iterable[int], tick: int) -> None:
        self.revealed.setdefault((responder, querier), set()).update(nodes)
        self.last_reveal[(responder, querier)] = tick


def peer_list(
    responder: int,
    querier: int,
    roles: RoleAssignment,
    topology: Topology,
    ledger: RevealLedger,
    tick: int = 0,
    offline: frozenset[int] = frozenset(),
    max_addr: Optional[int] = None,
) -> list[int]:
    """Pong contents from ``responder`` to ``querier``.

    Honest nodes reveal all neighbors, malicious nodes only fellow malicious
    nodes. Nothing already revealed to this querier is repeated.
    """
    if responder == querier:
        raise ValueError("a node does not query itself")
    if responder in offline:
        raise Unresponsive(responder)
    if roles.is_malicious(responder):
        candidates = sorted(roles.malicious)
    else:
        candidates = topology.neighbors(responder)
    already = ledger.seen(responder, querier)
    out = [x for x in candidates if x != responder and x != querier and x not in already]
    if max_addr is not None:
        out = out[:max_addr]
    ledger.record(responder, querier, out, tick)
    return out


def export_json(topology: Topology, roles: Optional[RoleAssignment] = None) -> str:
    doc = {
        "node_count": topology.node_count,
        "edges": [list(e) for e in topology.edges()],
        "malicious": sorted(roles.malicious) if roles else [],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def import_json(text: str) -> tuple[Topology, RoleAssignment]:
    doc = json.loads(text)
    n = int(doc["node_count"])
    topo = Topology.from_edges(n, (tuple(e) for e in doc["edges"]))
    mal = frozenset(int(m) for m in doc.get("malicious", []))
    if any(not 0 <= m < n for m in mal):
        raise ValueError("malicious id out of range")
    return topo, RoleAssignment(mal, n)
