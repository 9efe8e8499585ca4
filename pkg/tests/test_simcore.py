from __future__ import annotations

import json
import random
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aurora_sim.netmodel import (
    RoleAssignment,
    Topology,
    TopologyConfig,
    generate_topology,
    plant_adversary,
    reachable,
)
from aurora_sim.simcore import (
    AvgNewNodesThreshold,
    DefaultHalting,
    GatheringState,
    HaltReason,
    MaxDraws,
    World,
    make_rng,
    next_target,
    perform_draw,
    run_gathering,
    split_seed,
    trace_jsonl,
)


def star(leaves=5) -> Topology:
    return Topology.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def honest_world(topo, **kw) -> World:
    return World.build(topo, RoleAssignment(frozenset(), topo.node_count), **kw)


def small(n=300, seed=0):
    return generate_topology(TopologyConfig(node_count=n, outbound_core=10, outbound_edge=4, seed=seed))


def test_draw_with_all_new_neighbors():
    world = honest_world(star(5))
    state = GatheringState(first_contact=0)
    res = perform_draw(state, 0, world)
    assert len(res.new_nodes) == 5
    assert state.size == 5
    assert state.messages == 2
    assert state.draws == 1
    assert state.dag_edges == [(0, i) for i in range(1, 6)]


def test_draw_with_nothing_new_exhausts():
    world = honest_world(star(3))
    state = GatheringState(first_contact=0)
    perform_draw(state, 0, world)
    # the first reply to name the entry still adds it to U
    assert perform_draw(state, 1, world).new_nodes == [0]
    res = perform_draw(state, 2, world)
    assert res.new_nodes == []
    assert 2 in state.exhausted
    assert state.messages == 6


def test_offline_target():
    topo = star(3)
    world = World(topo, RoleAssignment(frozenset(), topo.node_count), offline=frozenset({2}))
    state = GatheringState(first_contact=0)
    perform_draw(state, 0, world)
    before = (state.size, state.draws, list(state.dag_edges))
    res = perform_draw(state, 2, world)
    assert res.response is None
    assert (state.size, state.draws, state.dag_edges) == before
    assert 2 in state.exhausted
    assert state.messages == 3
    assert state.failed_pings == 1


def test_draw_preconditions():
    world = honest_world(star(3))
    state = GatheringState(first_contact=0)
    with pytest.raises(ValueError):
        perform_draw(state, 2, world)  # not discovered yet
    perform_draw(state, 0, world)
    with pytest.raises(ValueError):
        perform_draw(state, 0, world)  # already queried


def test_next_target_none_left():
    world = honest_world(star(2))
    state = GatheringState(first_contact=0)
    perform_draw(state, 0, world)
    perform_draw(state, 1, world)
    perform_draw(state, 2, world)
    assert next_target(state, make_rng(0)) is None


def test_next_target_single_candidate():
    world = honest_world(star(2))
    state = GatheringState(first_contact=0)
    perform_draw(state, 0, world)
    perform_draw(state, 1, world)
    rng = make_rng(3)
    assert all(next_target(state, rng) == 2 for _ in range(20))


def test_next_target_frequency():
    world = honest_world(star(4))
    state = GatheringState(first_contact=0)
    perform_draw(state, 0, world)
    rng = make_rng(12345)
    counts = Counter(next_target(state, rng) for _ in range(10_000))
    assert set(counts) == {1, 2, 3, 4}
    assert all(2350 <= c <= 2650 for c in counts.values()), counts


@pytest.mark.parametrize("seed", range(5))
def test_default_policy_reaches_component(seed):
    topo = small(seed=seed)
    world = honest_world(topo)
    entry = seed * 17 % topo.node_count
    state = run_gathering(entry, DefaultHalting(), world, make_rng(seed))
    assert state.halt_reason is HaltReason.NONE_LEFT
    # the entry only counts once somebody reports it back
    assert set(state.discovered) | {entry} == reachable(topo, entry)


def test_disconnected_component_only():
    topo = Topology.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    state = run_gathering(0, DefaultHalting(), honest_world(topo), make_rng(0))
    assert set(state.discovered) == {0, 1, 2}


def test_malicious_clique_entry():
    topo = small()
    roles = plant_adversary(topo, 12, 7)
    world = World.build(topo, roles)
    entry = min(roles.malicious)
    state = run_gathering(entry, DefaultHalting(), world, make_rng(1))
    assert set(state.discovered) == set(roles.malicious)
    assert state.draws + state.failed_pings <= 12
    assert state.halt_reason is HaltReason.NONE_LEFT


def test_max_draws_policy():
    world = honest_world(small())
    state = run_gathering(0, MaxDraws(7), world, make_rng(0))
    assert state.draws == 7
    assert state.halt_reason is HaltReason.POLICY


def test_stop_check_wins():
    world = honest_world(small())
    state = run_gathering(0, MaxDraws(0), world, make_rng(0), stop_check=lambda s: True)
    assert state.halt_reason is HaltReason.SATISFIED
    assert state.draws == 0


def test_policy_validation():
    with pytest.raises(ValueError):
        AvgNewNodesThreshold(0)
    with pytest.raises(ValueError):
        AvgNewNodesThreshold(5, min_draws=0)
    with pytest.raises(ValueError):
        MaxDraws(-1)


def assert_acyclic(edges):
    graph: dict[int, list[int]] = {}
    for a, b in edges:
        graph.setdefault(a, []).append(b)
    color: dict[int, int] = {}

    def visit(x):
        color[x] = 1
        for y in graph.get(x, ()):
            c = color.get(y, 0)
            assert c != 1, "cycle"
            if c == 0:
                visit(y)
        color[x] = 2

    for node in list(graph):
        if color.get(node, 0) == 0:
            visit(node)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40), st.floats(0, 0.3))
def test_gathering_invariants(seed, threshold, offline):
    topo = small(200, seed=seed % 3)
    rng = make_rng(seed)
    roles = plant_adversary(topo, rng.randrange(40), rng)
    world = World.build(topo, roles, rng, offline)
    policy = AvgNewNodesThreshold(threshold, 10)
    sizes = []
    state = run_gathering(
        rng.randrange(200), policy, world, rng,
        stop_check=lambda s: sizes.append(s.size) or False,
    )
    assert sizes == sorted(sizes)
    assert_acyclic(state.dag_edges)
    assert state.messages == 2 * state.draws + state.failed_pings
    assert state.messages <= 2 * state.draws + len(state.exhausted)
    assert len(state.queried) == state.draws + state.failed_pings
    assert state.queried <= set(state.discovered) | {state.first_contact}
    if state.halt_reason is HaltReason.POLICY:
        assert state.new_total < threshold * state.draws
        running = 0
        for i, new in enumerate(state.new_per_draw[:-1], start=1):
            running += new
            if i >= 10:
                assert running >= threshold * i


def test_threshold_halt_mean():
    world = honest_world(small())
    state = run_gathering(0, AvgNewNodesThreshold(Fraction(15), 10), world, make_rng(2))
    assert state.halt_reason is HaltReason.POLICY
    assert state.mean_new() < 15
    assert state.draws >= 10


def test_trace_jsonl():
    world = honest_world(small())
    state = run_gathering(0, MaxDraws(5), world, make_rng(0))
    lines = trace_jsonl(state).splitlines()
    assert len(lines) == 5
    rows = [json.loads(x) for x in lines]
    assert list(rows[0]) == ["step", "target", "new_nodes", "U", "messages"]
    assert [r["step"] for r in rows] == [1, 2, 3, 4, 5]
    assert rows[-1]["U"] == state.size


def test_same_seed_same_run():
    topo = small()
    a = run_gathering(0, DefaultHalting(), honest_world(topo), make_rng(9))
    b = run_gathering(0, DefaultHalting(), honest_world(topo), make_rng(9))
    assert a.trace == b.trace


def test_split_seed():
    assert split_seed(1, 0) == 1
    assert split_seed(2**64 - 1, 1) == 0


def test_unresponsive_world_needs_rng():
    with pytest.raises(ValueError):
        honest_world(small(), unresponsive_prob=0.1)
    world = honest_world(small(), rng=random.Random(0), unresponsive_prob=0.1)
    assert len(world.offline) == 30
