"""Monte Carlo experiment runners and the closed-form message bound.

Run ``i`` of a batch is seeded with ``split_seed(seed, i)`` and owns all of
its state; only the topology is shared. Records are sorted by run index, so
serial and parallel execution give identical output.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Sequence

from .aurora import (
    AllCandidatesFailed,
    AuroraParams,
    Halted,
    Verdict,
    absent_txid,
    choose_bootstrap,
    construct_ps,
    make_ledger,
    verify_inclusion,
)
from .netmodel import Topology, TopologyConfig, generate_topology, plant_adversary, reachable
from .simcore import (
    AvgNewNodesThreshold,
    DefaultHalting,
    World,
    make_rng,
    run_gathering,
    split_seed,
)
from .sizing import Bound, SetKind, min_population

# message bounds printed for the two tolerances of the bound experiment
PUBLISHED_BOUNDS = {1272: 728, 1614: 880}


@dataclass(frozen=True)
class BoundInputs:
    tolerance: int
    avg_new_per_draw: Fraction
    ratio: Fraction

    def __post_init__(self):
        object.__setattr__(self, "avg_new_per_draw", Fraction(self.avg_new_per_draw))
        object.__setattr__(self, "ratio", Fraction(self.ratio))
        if self.avg_new_per_draw <= 0:
            raise ValueError("average new nodes per draw must be > 0")
        if self.tolerance > 0 and self.ratio < 1:
            raise ValueError("ratio must be >= 1")


def closed_form_bound(inputs: BoundInputs) -> int:
    """2 * ceil(ratio * t / avg_new) + 2 * floor(sqrt(t))."""
    t = inputs.tolerance
    gathering = math.ceil(inputs.ratio * t / inputs.avg_new_per_draw)
    return 2 * gathering + 2 * math.isqrt(t)


@lru_cache(maxsize=64)
def progress_ratio(t: int, p: str = "0.999") -> Fraction:
    """u/t at the smallest population where a progress set fits under sqrt(t)."""
    return Fraction(min_population(t, SetKind.PROGRESS, Bound.SQRT, p), t)


def message_bound(t: int, avg_new: Fraction, p: str = "0.999") -> int:
    if t == 0:
        return closed_form_bound(BoundInputs(0, avg_new, Fraction(1)))
    return closed_form_bound(BoundInputs(t, avg_new, progress_ratio(t, p)))


def full_scale_run_count(confidence: float = 0.99, margin: float = 0.01) -> int:
    """Runs per point for a worst-case proportion estimate at the given confidence and margin."""
    z = statistics.NormalDist().inv_cdf(0.5 + confidence / 2)
    return math.ceil(z * z * 0.25 / (margin * margin))


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    runs: int = 200
    seed: int = 1
    fractions: tuple[int, ...] = (0, 10, 20, 30, 40, 50, 60)  # percent malicious
    thresholds: tuple[int, ...] = (1, 5, 10, 15, 25, 50, 100, 250, 500)
    tolerances: tuple[int, ...] = (1272, 1614)
    confidence: str = "0.999"
    threshold: Fraction = Fraction(15)
    min_draws: int = 10
    unresponsive_prob: float = 0.0
    jobs: int = 1

    def describe(self) -> dict:
        doc = asdict(self)
        doc["threshold"] = str(self.threshold)
        doc["fractions"] = list(self.fractions)
        doc["thresholds"] = list(self.thresholds)
        doc["tolerances"] = list(self.tolerances)
        doc.pop("jobs")
        return doc


def default_config(experiment: int, **overrides) -> ExperimentConfig:
    """Desk-scale defaults: 1000 nodes for experiments 1-3, the full 6356 for 4-5."""
    nodes = 1000 if experiment in (1, 2, 3) else 6356
    base = ExperimentConfig(topology=TopologyConfig(node_count=nodes))
    if experiment == 5:
        base = replace(base, fractions=(0, 5, 10, 15, 20, 25, 30, 40, 50))
    return replace(base, **overrides)


@dataclass
class ExperimentRecord:
    run_index: int
    run_seed: int
    malicious_pct: int
    malicious_count: int
    tolerance: int
    first_contact: int
    first_contact_role: str
    outcome: str  # halt | progressed
    success: bool
    halt_reason: str
    messages: int
    draws: int
    discovered: int
    set_size: int
    honest_in_set: int
    result: str  # chosen node role, inclusion verdict, or empty
    bound: int = 0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@lru_cache(maxsize=4)
def shared_topology(config: TopologyConfig) -> Topology:
    return generate_topology(config)


def _role(roles, node: int) -> str:
    return "malicious" if roles.is_malicious(node) else "honest"


def _percent_count(pct: int, n: int) -> int:
    return round(Fraction(pct, 100) * n)


def run_bootstrap(config: ExperimentConfig, index: int, pct: int) -> ExperimentRecord:
    """One run of the safe-set / bootstrap task with ``t = |M|`` and no size cap."""
    topo = shared_topology(config.topology)
    seed = split_seed(config.seed, index)
    rng = make_rng(seed)
    m = _percent_count(pct, topo.node_count)
    roles = plant_adversary(topo, m, rng)
    world = World.build(topo, roles, rng, config.unresponsive_prob)
    ledger = make_ledger(roles, rng)
    entry = rng.randrange(topo.node_count)
    params = AuroraParams(config.confidence, entry, m, SetKind.SAFE, halting=DefaultHalting())
    rec = ExperimentRecord(
        index, seed, pct, m, m, entry, _role(roles, entry),
        "halt", True, "", 0, 0, 0, 0, 0, "",
    )
    try:
        pss = construct_ps(params, world, rng)
    except Halted as h:
        return _fill_gathering(rec, h.state, h.reason)
    _fill_gathering(rec, pss.gathering, "satisfied")
    rec.outcome = "progressed"
    rec.set_size = pss.size
    rec.honest_in_set = sum(1 for x in pss.members if not roles.is_malicious(x))
    try:
        chosen = choose_bootstrap(pss, ledger)
    except AllCandidatesFailed as exc:
        rec.messages += exc.messages
        rec.success = False
        rec.result = "all_failed"
        return rec
    rec.messages += chosen.messages
    rec.result = _role(roles, chosen.node)
    rec.success = rec.result == "honest"
    return rec


def run_inclusion(
    config: ExperimentConfig, index: int, pct: int, tolerance: Optional[int] = None
) -> ExperimentRecord:
    """One run of the progress-set / inclusion task under the sqrt size cap and threshold halting."""
    topo = shared_topology(config.topology)
    seed = split_seed(config.seed, index)
    rng = make_rng(seed)
    m = _percent_count(pct, topo.node_count) if tolerance is None else tolerance
    roles = plant_adversary(topo, m, rng)
    world = World.build(topo, roles, rng, config.unresponsive_prob)
    ledger = make_ledger(roles, rng)
    entry = rng.randrange(topo.node_count)
    halting = AvgNewNodesThreshold(config.threshold, config.min_draws)
    params = AuroraParams(
        config.confidence, entry, m, SetKind.PROGRESS, halting=halting, sqrt_constraint=True
    )
    present = rng.randrange(2) == 1
    txid = ledger.block.leaves[rng.randrange(len(ledger.block.leaves))] if present else absent_txid(ledger, rng)
    rec = ExperimentRecord(
        index, seed, pct, m, m, entry, _role(roles, entry),
        "halt", True, "", 0, 0, 0, 0, 0, "",
        bound=message_bound(m, config.threshold, config.confidence),
    )
    try:
        pps = construct_ps(params, world, rng)
    except Halted as h:
        return _fill_gathering(rec, h.state, h.reason)
    _fill_gathering(rec, pps.gathering, "satisfied")
    rec.outcome = "progressed"
    rec.set_size = pps.size
    rec.honest_in_set = sum(1 for x in pps.members if not roles.is_malicious(x))
    res = verify_inclusion(pps, txid, ledger.block_id, ledger.block.root, ledger, rng, world.offline)
    rec.messages += res.messages
    rec.result = res.verdict.value
    truth = Verdict.INCLUDED if present else Verdict.NOT_INCLUDED
    rec.success = res.verdict is truth
    return rec


def _fill_gathering(rec: ExperimentRecord, state, reason: str) -> ExperimentRecord:
    rec.halt_reason = reason
    rec.messages = state.messages
    rec.draws = state.draws
    rec.discovered = state.size
    return rec


def _execute(tasks: Sequence[tuple], worker: Callable, jobs: int) -> list:
    if jobs <= 1 or len(tasks) < 2:
        return [worker(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_star, [(worker, t) for t in tasks], chunksize=max(1, len(tasks) // (4 * jobs))))


def _star(packed):
    worker, args = packed
    return worker(*args)


def experiment1(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Success and halt rates of bootstrap selection across malicious fractions."""
    tasks = [
        (config, fi * config.runs + i, pct)
        for fi, pct in enumerate(config.fractions)
        for i in range(config.runs)
    ]
    return sorted(_execute(tasks, run_bootstrap, config.jobs), key=lambda r: r.run_index)


def experiment5(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Inclusion verification with the sqrt cap and threshold halting."""
    tasks = [
        (config, fi * config.runs + i, pct)
        for fi, pct in enumerate(config.fractions)
        for i in range(config.runs)
    ]
    return sorted(_execute(tasks, run_inclusion, config.jobs), key=lambda r: r.run_index)


def experiment4(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Message counts against the closed-form bound at fixed tolerances, ``|M| = t``."""
    n = config.topology.node_count
    tasks = [
        (config, ti * config.runs + i, round(100 * t / n), t)
        for ti, t in enumerate(config.tolerances)
        for i in range(config.runs)
    ]
    return sorted(_execute(tasks, run_inclusion, config.jobs), key=lambda r: r.run_index)


@dataclass
class GatheringRecord:
    run_index: int
    run_seed: int
    threshold: str
    first_contact: int
    draws: int
    messages: int
    discovered: int
    discovered_pct: float
    reachable: int
    halt_reason: str
    curve: list[int] = field(default_factory=list, repr=False)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "curve"]


def run_discovery(config: ExperimentConfig, index: int, threshold: Optional[int]) -> GatheringRecord:
    """Adversary-free gathering from a random entry; ``threshold=None`` crawls to exhaustion."""
    topo = shared_topology(config.topology)
    seed = split_seed(config.seed, index)
    rng = make_rng(seed)
    roles = plant_adversary(topo, 0, rng)
    world = World.build(topo, roles, rng, config.unresponsive_prob)
    entry = rng.randrange(topo.node_count)
    policy = DefaultHalting() if threshold is None else AvgNewNodesThreshold(threshold, config.min_draws)
    state = run_gathering(entry, policy, world, rng)
    n = topo.node_count
    return GatheringRecord(
        run_index=index,
        run_seed=seed,
        threshold="" if threshold is None else str(threshold),
        first_contact=entry,
        draws=state.draws,
        messages=state.messages,
        discovered=state.size,
        discovered_pct=round(100 * state.size / n, 6),
        reachable=len(reachable(topo, entry)),
        halt_reason=state.halt_reason.value,
        curve=[row["U"] for row in state.trace],
    )


def experiment2(config: ExperimentConfig) -> list[GatheringRecord]:
    """Discovery curves under the default halting condition, no adversary."""
    tasks = [(config, i, None) for i in range(config.runs)]
    return sorted(_execute(tasks, run_discovery, config.jobs), key=lambda r: r.run_index)


def experiment3(config: ExperimentConfig) -> list[GatheringRecord]:
    """Fraction of the network discovered as the new-nodes threshold grows."""
    tasks = [
        (config, ti * config.runs + i, thr)
        for ti, thr in enumerate(config.thresholds)
        for i in range(config.runs)
    ]
    return sorted(_execute(tasks, run_discovery, config.jobs), key=lambda r: r.run_index)


def discovery_curve(records: Sequence[GatheringRecord], node_count: int) -> list[dict]:
    """Mean and stddev of ``|U|`` after each draw; finished runs hold their final value."""
    if not records:
        return []
    length = max(len(r.curve) for r in records)
    rows = []
    for step in range(length):
        values = [r.curve[step] if step < len(r.curve) else r.curve[-1] for r in records if r.curve]
        active = sum(1 for r in records if step < len(r.curve))
        mean = statistics.fmean(values)
        std = statistics.pstdev(values)
        rows.append({
            "step": step,
            "mean_discovered": round(mean, 6),
            "std_discovered": round(std, 6),
            "mean_pct": round(100 * mean / node_count, 6),
            "std_pct": round(100 * std / node_count, 6),
            "active_runs": active,
        })
    return rows


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    return statistics.fmean(values), statistics.pstdev(values)


def summarize_outcomes(records: Sequence[ExperimentRecord], key: str = "malicious_pct") -> list[dict]:
    groups: dict[int, list[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault(getattr(r, key), []).append(r)
    rows = []
    for k in sorted(groups):
        rs = groups[k]
        n = len(rs)
        progressed = [r for r in rs if r.outcome == "progressed"]
        mal_fc = [r for r in rs if r.first_contact_role == "malicious"]
        msgs, _ = _mean_std([r.messages for r in rs])
        row = {
            key: k,
            "runs": n,
            "halts": n - len(progressed),
            "progressed": len(progressed),
            "successes": sum(r.success for r in rs),
            "failures": sum(not r.success for r in rs),
            "success_rate": round(sum(r.success for r in rs) / n, 6),
            "malicious_first_contact": len(mal_fc),
            "malicious_fc_halt_rate": round(sum(r.outcome == "halt" for r in mal_fc) / len(mal_fc), 6) if mal_fc else "",
            "at_least_one_honest_rate": round(sum(r.honest_in_set > 0 for r in progressed) / len(progressed), 6) if progressed else "",
            "mean_messages": round(msgs, 3),
            "max_messages": max(r.messages for r in rs),
        }
        if any(r.bound for r in rs):
            row["bound"] = max(r.bound for r in rs)
            row["violations"] = sum(r.messages > r.bound for r in rs)
        rows.append(row)
    return rows


def summarize_thresholds(records: Sequence[GatheringRecord]) -> list[dict]:
    groups: dict[str, list[GatheringRecord]] = {}
    for r in records:
        groups.setdefault(r.threshold, []).append(r)
    rows = []
    for thr in sorted(groups, key=lambda x: float(x) if x else math.inf):
        rs = groups[thr]
        mean, std = _mean_std([r.discovered_pct for r in rs])
        draws, _ = _mean_std([r.draws for r in rs])
        rows.append({
            "threshold": thr,
            "runs": len(rs),
            "mean_pct": round(mean, 6),
            "std_pct": round(std, 6),
            "mean_draws": round(draws, 3),
        })
    return rows


def bound_report(records: Sequence[ExperimentRecord], config: ExperimentConfig) -> list[dict]:
    rows = []
    for t in config.tolerances:
        rs = [r for r in records if r.tolerance == t]
        ratio = progress_ratio(t, config.confidence)
        rows.append({
            "tolerance": t,
            "runs": len(rs),
            "min_population": ratio * t,
            "ratio": f"{float(ratio):.6f}",
            "bound": message_bound(t, config.threshold, config.confidence),
            "published_bound": PUBLISHED_BOUNDS.get(t, ""),
            "max_messages": max((r.messages for r in rs), default=0),
            "violations": sum(r.messages > r.bound for r in rs),
            "progressed": sum(r.outcome == "progressed" for r in rs),
        })
    return rows


def rows_to_csv(rows: Sequence[dict], columns: Optional[list[str]] = None) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    columns = columns or list(rows[0])
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else f"{float(value):.6f}"
    return value


def records_to_csv(records: Sequence) -> str:
    if not records:
        return ""
    cols = type(records[0]).columns()
    return rows_to_csv([{c: getattr(r, c) for c in cols} for r in records], cols)


def run_experiment(number: int, config: ExperimentConfig) -> dict:
    """Run one experiment; returns CSV texts plus a JSON-ready summary.

    ``summary["hard_violations"]`` is nonzero only when the message bound is broken.
    """
    n = config.topology.node_count
    files: dict[str, str] = {}
    aggregates: dict = {}
    violations = 0
    if number == 1:
        recs = experiment1(config)
        files["records.csv"] = records_to_csv(recs)
        aggregates["by_fraction"] = summarize_outcomes(recs)
    elif number == 2:
        recs = experiment2(config)
        files["records.csv"] = records_to_csv(recs)
        curve = discovery_curve(recs, n)
        files["curve.csv"] = rows_to_csv(curve)
        final = [r.discovered for r in recs]
        aggregates["final_mean_discovered"] = round(statistics.fmean(final), 6) if final else 0
        aggregates["mean_reachable"] = round(statistics.fmean(r.reachable for r in recs), 6) if recs else 0
        aggregates["steps"] = len(curve)
    elif number == 3:
        recs = experiment3(config)
        files["records.csv"] = records_to_csv(recs)
        aggregates["by_threshold"] = summarize_thresholds(recs)
    elif number == 4:
        recs = experiment4(config)
        files["records.csv"] = records_to_csv(recs)
        report = bound_report(recs, config)
        aggregates["by_tolerance"] = report
        violations = sum(row["violations"] for row in report)
    elif number == 5:
        recs = experiment5(config)
        files["records.csv"] = records_to_csv(recs)
        aggregates["by_fraction"] = summarize_outcomes(recs)
    else:
        raise ValueError(f"unknown experiment {number}")
    summary = {
        "experiment": number,
        "params": config.describe(),
        "aggregates": _jsonable(aggregates),
        "hard_violations": violations,
    }
    return {"files": files, "summary": summary}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    return obj
