"""Command-line front end.

Symbol mapping: ``--tolerance`` is t (assumed malicious nodes),
``--confidence`` is p, ``--threshold`` is the halting threshold on the
mean number of new nodes per draw (also the per-draw average in the
message bound), ``--u`` is the number of discovered nodes.

Exit codes: 0 ok, 1 usage error, 2 hard invariant violated,
3 topology generation failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import aurora, harness, netmodel, simcore, sizing
from .hypergeom import as_probability

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_GENERATION = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _probability(text: str) -> str:
    try:
        p = as_probability(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a probability: {text!r}")
    if not 0 < p < 1:
        raise argparse.ArgumentTypeError("probability must lie strictly between 0 and 1")
    return text


def _positive_fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _add_topology_args(p: argparse.ArgumentParser, nodes_default: Optional[int]) -> None:
    g = p.add_argument_group("topology")
    g.add_argument("--nodes", type=int, default=nodes_default, help="network size")
    g.add_argument("--core-fraction", type=float, default=0.2)
    g.add_argument("--outbound-core", type=int, default=125)
    g.add_argument("--outbound-edge", type=int, default=8)
    g.add_argument("--topology-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aurora-sim", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sizing", help="probabilistic vs deterministic set sizes")
    s.add_argument("--u", type=int, required=True, help="discovered nodes |U|")
    s.add_argument("--p", "--confidence", dest="confidence", type=_probability, default="0.999")
    s.add_argument("--kind", choices=[k.value for k in sizing.SetKind])
    s.add_argument("--bound", choices=[b.value for b in sizing.Bound])
    s.add_argument("--fig1", action="store_true", help="emit the per-tolerance size sweep instead")
    s.add_argument("--t-step", type=int, default=1, help="tolerance stride for --fig1")
    s.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    b = sub.add_parser("bound", help="closed-form message bound for a tolerance")
    b.add_argument("--tolerance", type=int, required=True)
    b.add_argument("--threshold", type=_positive_fraction, default=Fraction(15))
    b.add_argument("--confidence", type=_probability, default="0.999")

    r = sub.add_parser("run", help="one seeded run with a JSON decision trace")
    r.add_argument("--task", choices=["gather", "bootstrap", "verify-tx"], default="bootstrap")
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--malicious-pct", type=float, default=0.0)
    r.add_argument("--tolerance", type=int, help="t; defaults to the number of malicious nodes")
    r.add_argument("--confidence", type=_probability, default="0.999")
    r.add_argument("--threshold", type=_positive_fraction, help="halt on mean new nodes per draw below this")
    r.add_argument("--min-draws", type=int, default=10)
    r.add_argument("--max-draws", type=int, help="halt after this many draws")
    r.add_argument("--sqrt-constraint", action="store_true", help="cap the set size at floor(sqrt(t))")
    r.add_argument("--first-contact", type=int)
    r.add_argument("--tx-present", choices=["yes", "no", "random"], default="random")
    r.add_argument("--unresponsive", type=float, default=0.0, help="fraction of nodes that never answer")
    r.add_argument("--topology-in", type=Path, help="load topology and roles from JSON")
    r.add_argument("--topology-out", type=Path, help="save topology and roles as JSON")
    r.add_argument("--draw-trace", type=Path, help="write per-draw JSON lines here")
    r.add_argument("--out", type=Path, help="write the trace here instead of stdout")
    _add_topology_args(r, 6356)

    e = sub.add_parser("experiment", help="run an experiment suite")
    e.add_argument("number", type=int, choices=[1, 2, 3, 4, 5])
    e.add_argument("--runs", type=int, help="runs per point (default 200)")
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--fractions", type=_int_list, help="malicious percentages, e.g. 0,10,20")
    e.add_argument("--thresholds", type=_int_list, help="experiment 3 thresholds")
    e.add_argument("--tolerances", type=_int_list, help="experiment 4 tolerances")
    e.add_argument("--confidence", type=_probability, default="0.999")
    e.add_argument("--threshold", type=_positive_fraction, default=Fraction(15))
    e.add_argument("--min-draws", type=int, default=10)
    e.add_argument("--unresponsive", type=float, default=0.0)
    e.add_argument("--jobs", type=int, default=1, help="worker processes")
    e.add_argument("--full-scale", action="store_true", help="99%% confidence / 1%% margin run counts")
    e.add_argument("--out-dir", type=Path, default=Path("out"))
    e.add_argument("--label", help="output subdirectory (default: UTC timestamp)")
    _add_topology_args(e, None)
    return parser


def _topology_config(args) -> netmodel.TopologyConfig:
    try:
        return netmodel.TopologyConfig(
            node_count=args.nodes,
            core_fraction=args.core_fraction,
            outbound_core=min(args.outbound_core, max(args.nodes - 1, 0)),
            outbound_edge=min(args.outbound_edge, max(args.nodes - 1, 0)),
            seed=args.topology_seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_sizing(args) -> int:
    if args.u < 2:
        raise UsageError("--u must be >= 2")
    if args.t_step < 1:
        raise UsageError("--t-step must be >= 1")
    if args.fig1:
        text = sizing.to_csv(sizing.fig1_table([args.u], args.confidence, args.t_step), sizing.FIG1_COLUMNS)
    else:
        kinds = [sizing.SetKind(args.kind)] if args.kind else list(sizing.SetKind)
        bounds = [sizing.Bound(args.bound)] if args.bound else list(sizing.Bound)
        rows = []
        for kind in kinds:
            for bound in bounds:
                try:
                    rows.append(sizing.ratio_scan(args.u, kind, bound, args.confidence).as_dict())
                except sizing.NoSolution:
                    rows.append({"u": args.u, "kind": kind.value, "bound": bound.value})
        text = sizing.to_csv(rows, _RATIO_COLUMNS)
    _emit(text, args.out)
    return EXIT_OK


_RATIO_COLUMNS = [
    "u", "kind", "bound", "honest", "boundary_t", "ratio", "bound_value",
    "deterministic_size", "set_size", "size_reduction", "achieved_p",
]


def cmd_bound(args) -> int:
    if args.tolerance < 0:
        raise UsageError("--tolerance must be >= 0")
    ratio = harness.progress_ratio(args.tolerance, args.confidence) if args.tolerance else Fraction(1)
    doc = {
        "tolerance": args.tolerance,
        "threshold": str(args.threshold),
        "min_population": ratio * args.tolerance,
        "ratio": f"{float(ratio):.6f}",
        "bound": harness.message_bound(args.tolerance, args.threshold, args.confidence),
    }
    print(json.dumps(_plain(doc), indent=2))
    return EXIT_OK


def _plain(obj):
    return harness._jsonable(obj)


def _validate_run(args) -> None:
    if args.topology_in is None and (args.nodes is None or args.nodes < 1):
        raise UsageError("--nodes must be >= 1")
    if not 0 <= args.malicious_pct <= 100:
        raise UsageError("--malicious-pct must lie in [0, 100]")
    if args.tolerance is not None and args.tolerance < 0:
        raise UsageError("--tolerance must be >= 0")
    if args.min_draws < 1:
        raise UsageError("--min-draws must be >= 1")
    if args.max_draws is not None and args.max_draws < 0:
        raise UsageError("--max-draws must be >= 0")
    if args.threshold is not None and args.max_draws is not None:
        raise UsageError("--threshold and --max-draws are exclusive")
    if not 0 <= args.unresponsive < 1:
        raise UsageError("--unresponsive must lie in [0, 1)")


def cmd_run(args) -> int:
    _validate_run(args)
    rng = simcore.make_rng(args.seed)
    if args.topology_in:
        topo, roles = netmodel.import_json(args.topology_in.read_text(encoding="utf-8"))
        topo_desc: dict = {"source": str(args.topology_in)}
    else:
        config = _topology_config(args)
        topo = netmodel.generate_topology(config)
        count = round(Fraction(args.malicious_pct).limit_denominator(10**6) * topo.node_count / 100)
        roles = netmodel.plant_adversary(topo, count, rng)
        topo_desc = {
            "node_count": config.node_count,
            "core_fraction": config.core_fraction,
            "outbound_core": config.outbound_core,
            "outbound_edge": config.outbound_edge,
            "seed": config.seed,
        }
    if args.first_contact is not None and not 0 <= args.first_contact < topo.node_count:
        raise UsageError("--first-contact out of range")
    if args.topology_out:
        args.topology_out.write_text(netmodel.export_json(topo, roles), encoding="utf-8")

    world = simcore.World.build(topo, roles, rng, args.unresponsive)
    ledger = aurora.make_ledger(roles, rng)
    entry = args.first_contact if args.first_contact is not None else rng.randrange(topo.node_count)
    if args.threshold is not None:
        policy = simcore.AvgNewNodesThreshold(args.threshold, args.min_draws)
    elif args.max_draws is not None:
        policy = simcore.MaxDraws(args.max_draws)
    else:
        policy = simcore.DefaultHalting()
    t = len(roles.malicious) if args.tolerance is None else args.tolerance
    doc = {
        "seed": args.seed,
        "task": args.task,
        "topology": topo_desc,
        "malicious": len(roles.malicious),
        "first_contact": entry,
        "first_contact_role": "malicious" if roles.is_malicious(entry) else "honest",
    }

    if args.task == "gather":
        state = simcore.run_gathering(entry, policy, world, rng)
        doc["gathering"] = {
            "halt_reason": state.halt_reason.value,
            "draws": state.draws,
            "messages": state.messages,
            "discovered": state.size,
        }
        _finish_run(args, doc, state)
        return EXIT_OK

    kind = sizing.SetKind.SAFE if args.task == "bootstrap" else sizing.SetKind.PROGRESS
    try:
        params = aurora.AuroraParams(
            args.confidence, entry, t, kind, halting=policy, sqrt_constraint=args.sqrt_constraint
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    try:
        pset = aurora.construct_ps(params, world, rng)
    except aurora.Halted as h:
        doc.update(aurora.decision_trace(params, h.state, None, roles, {"outcome": "halt"}))
        _finish_run(args, doc, h.state)
        return EXIT_OK

    extra: dict = {"outcome": "progressed"}
    if args.task == "bootstrap":
        try:
            res = aurora.choose_bootstrap(pset, ledger)
            extra["bootstrap"] = {
                "chosen": res.node,
                "chosen_role": "malicious" if roles.is_malicious(res.node) else "honest",
                "attempts": res.attempts,
                "messages": res.messages,
            }
            extra["total_messages"] = pset.gathering.messages + res.messages
        except aurora.AllCandidatesFailed as exc:
            extra["bootstrap"] = {"chosen": None, "attempts": exc.attempts, "messages": exc.messages}
            extra["total_messages"] = pset.gathering.messages + exc.messages
    else:
        present = {"yes": True, "no": False}.get(args.tx_present)
        if present is None:
            present = rng.randrange(2) == 1
        txid = ledger.block.leaves[0] if present else aurora.absent_txid(ledger, rng)
        res = aurora.verify_inclusion(pset, txid, ledger.block_id, ledger.block.root, ledger, rng, world.offline)
        extra["inclusion"] = {
            "txid": txid.hex(),
            "block_id": ledger.block_id,
            "root": ledger.block.root.hex(),
            "truth": "included" if present else "not_included",
            "verdict": res.verdict.value,
            "included_votes": res.included,
            "not_included_votes": res.not_included,
            "votes": res.votes,
            "messages": res.messages,
        }
        extra["total_messages"] = pset.gathering.messages + res.messages
        if t > 0 or args.sqrt_constraint:
            extra["bound"] = harness.message_bound(t, args.threshold or Fraction(15), args.confidence)
    doc.update(aurora.decision_trace(params, pset.gathering, pset, roles, extra))
    _finish_run(args, doc, pset.gathering)
    return EXIT_OK


def _finish_run(args, doc: dict, state: simcore.GatheringState) -> None:
    if args.draw_trace:
        args.draw_trace.write_text(simcore.trace_jsonl(state), encoding="utf-8")
    _emit(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n", args.out)


def _validate_experiment(args) -> None:
    if args.runs is not None and args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if args.nodes is not None and args.nodes < 1:
        raise UsageError("--nodes must be >= 1")
    if args.fractions is not None and any(not 0 <= f <= 100 for f in args.fractions):
        raise UsageError("--fractions must be percentages in [0, 100]")
    if args.thresholds is not None and any(t < 1 for t in args.thresholds):
        raise UsageError("--thresholds must be >= 1")
    if args.tolerances is not None and any(t < 0 for t in args.tolerances):
        raise UsageError("--tolerances must be >= 0")
    if args.min_draws < 1:
        raise UsageError("--min-draws must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if not 0 <= args.unresponsive < 1:
        raise UsageError("--unresponsive must lie in [0, 1)")


def experiment_config(args) -> harness.ExperimentConfig:
    _validate_experiment(args)
    base = harness.default_config(args.number)
    nodes = args.nodes or base.topology.node_count
    args.nodes = nodes
    topo = _topology_config(args)
    overrides = {
        "topology": topo,
        "seed": args.seed,
        "confidence": args.confidence,
        "threshold": args.threshold,
        "min_draws": args.min_draws,
        "unresponsive_prob": args.unresponsive,
        "jobs": args.jobs,
    }
    if args.runs is not None:
        overrides["runs"] = args.runs
    elif args.full_scale:
        overrides["runs"] = harness.full_scale_run_count()
    for name in ("fractions", "thresholds", "tolerances"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    config = harness.ExperimentConfig(**{**base.__dict__, **overrides})
    if args.number == 4 and any(t > nodes for t in config.tolerances):
        raise UsageError("tolerances must not exceed --nodes")
    return config


def cmd_experiment(args) -> int:
    config = experiment_config(args)
    result = harness.run_experiment(args.number, config)
    label = args.label or _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    outdir = args.out_dir / f"experiment{args.number}" / label
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in result["files"].items():
        (outdir / name).write_text(text, encoding="utf-8", newline="\n")
    (outdir / "summary.json").write_text(
        json.dumps(result["summary"], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (outdir / "config.json").write_text(
        json.dumps({"experiment": args.number, **config.describe()}, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )
    _print_aggregates(args.number, result["summary"]["aggregates"])
    print(f"wrote {outdir}")
    if result["summary"]["hard_violations"]:
        print(f"bound violated in {result['summary']['hard_violations']} runs", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _print_aggregates(number: int, aggregates: dict) -> None:
    for key, value in aggregates.items():
        if isinstance(value, list) and value and isinstance(value[0], dict):
            print(harness.rows_to_csv(value), end="")
        else:
            print(f"{key},{value}")


def _emit(text: str, path: Optional[Path]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8", newline="\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"sizing": cmd_sizing, "bound": cmd_bound, "run": cmd_run, "experiment": cmd_experiment}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"aurora-sim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except netmodel.GenerationFailed as exc:
        print(f"aurora-sim: {exc}", file=sys.stderr)
        return EXIT_GENERATION


if __name__ == "__main__":
    sys.exit(main())
