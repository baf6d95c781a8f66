"""``onionsim`` command line.

Standard output is ``key=value`` lines.  Exit status: 0 success, 1 runtime or
config-file failure (a JSON error report goes to standard error), 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import figures
from .attacks import partition_onset
from .errors import ConfigError, SimError
from .metrics import snapshot
from .overlay import DegreeBounds, build_k_regular, read_edgelist, write_edgelist
from .runner import load_config, parse_config, run_experiment, write_experiment

OUT_ENV = "ONIONSIM_OUT"
DEFAULT_OUT = "onionsim-out"


class UsageError(Exception):
    pass


def _emit(pairs: dict, out=None) -> None:
    out = out or sys.stdout
    for k, v in pairs.items():
        if isinstance(v, float):
            v = "inf" if math.isinf(v) else f"{v:.6g}"
        out.write(f"{k}={v}\n")


def _global_flags(parser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="seed (overrides config seeds)")
    parser.add_argument("--config", default=d(None), help="YAML experiment config")
    parser.add_argument("--out", default=d(None),
                        help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    parser.add_argument("--format", choices=("csv", "json"), default=d(None), help="series file format")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="onionsim", description="Self-repairing overlay botnet simulator.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("generate", parents=[common], help="write a random k-regular overlay as an edge list")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--name", default="graph.edgelist", help="file name inside --out")

    c = sub.add_parser("campaign", parents=[common], help="deletion campaign on a k-regular overlay")
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--k", type=int, default=10)
    c.add_argument("--mode", choices=("gradual", "simultaneous"), default="gradual")
    c.add_argument("--fraction", type=float, default=0.9)
    c.add_argument("--no-repair", action="store_true")
    c.add_argument("--no-prune", action="store_true")
    c.add_argument("--record-every", type=int)
    c.add_argument("--seeds", type=int, default=1, help="number of seeds starting at --seed")
    c.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("soap", parents=[common], help="SOAP containment of a whole overlay")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--clone-budget", type=int, default=150, help="clones per target")
    s.add_argument("--pow", nargs=2, type=float, metavar=("BASE_WORK", "GROWTH"))
    s.add_argument("--rate-limit", nargs=2, type=int, metavar=("BASE_DELAY", "PER_PEER_DELAY"))

    so = sub.add_parser("superonion", parents=[common], help="SuperOnion under per-round soaping")
    so.add_argument("--n", type=int, default=20)
    so.add_argument("--m", type=int, default=3)
    so.add_argument("--i", type=int, default=2)
    so.add_argument("--rounds", type=int, default=50)
    so.add_argument("--targets-per-round", type=int, help="hosts attacked per round (default: all)")

    m = sub.add_parser("metrics", parents=[common], help="metrics of an edge list file")
    m.add_argument("graph", help="edge list written by 'generate'")

    r = sub.add_parser("reproduce", parents=[common], help="run a pinned figure preset")
    r.add_argument("figure", choices=figures.FIGURES)
    r.add_argument("--workers", type=int)
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _config(args, raw: dict):
    """Config from --config if given, else from flags; --seed/--format override either."""
    if args.config:
        config = load_config(args.config)
        raw = dict(config.raw)
    elif raw is None:
        raise UsageError("--config is required")
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    if args.format:
        raw["output"] = dict(raw.get("output", {}), format=args.format)
    try:
        return parse_config(raw, args.config or "flags")
    except ConfigError as exc:
        if args.config:
            raise
        raise UsageError("; ".join(exc.errors)) from None


def cmd_generate(args) -> int:
    bounds = DegreeBounds.around(args.k) if args.k >= 1 else None
    try:
        graph = build_k_regular(args.n, args.k, args.seed or 0, bounds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_edgelist(graph, fh)
    _emit({"nodes": len(graph), "edges": graph.edge_count(), "path": path})
    return 0


def cmd_campaign(args) -> int:
    start = args.seed or 0
    raw = {
        "name": "campaign",
        "topology": {"kind": "k-regular", "n": args.n, "k": args.k},
        "scenario": {"kind": "campaign", "mode": args.mode, "fraction": args.fraction,
                     "repair": not args.no_repair, "prune": not args.no_prune},
        "seeds": {"start": start, "count": args.seeds},
        "output": {"path": "campaign", "format": "csv"},
    }
    if args.record_every:
        raw["record_every"] = args.record_every
    if args.config:
        config = _config(args, None)
    else:
        args.seed = None  # already folded into the seed range
        config = _config(args, raw)
    series = run_experiment(config, args.workers)
    paths = write_experiment(config, series, _out_dir(args))
    for ser, path in zip(series, paths):
        last = ser.snapshots[-1]
        onset = partition_onset(ser.snapshots, ser.snapshots[0].alive)
        _emit({"seed": ser.seed, "alive": last.alive, "components": last.components,
               "diameter": float(last.diameter), "split_at": "none" if onset is None else onset,
               "path": path})
    _emit({"config_digest": config.digest})
    return 0


def cmd_soap(args) -> int:
    defense = {}
    if args.pow:
        defense["pow"] = {"base_work": args.pow[0], "growth": args.pow[1]}
    if args.rate_limit:
        defense["rate_limit"] = {"base_delay": args.rate_limit[0], "per_peer_delay": args.rate_limit[1]}
    raw = {
        "name": "soap",
        "topology": {"kind": "k-regular", "n": args.n, "k": args.k},
        "scenario": {"kind": "soap", "clone_budget": args.clone_budget},
        "seeds": [args.seed or 0],
        "output": {"path": "soap", "format": "json"},
    }
    if defense:
        raw["defense"] = defense
    config = _config(args, raw)
    series = run_experiment(config)
    paths = write_experiment(config, series, _out_dir(args))
    for ser, path in zip(series, paths):
        x = ser.extras
        _emit({"seed": ser.seed, "entry": x["entry"], "targets": x["targets"], "contained": x["contained"],
               "benign_nodes": x["benign_nodes"], "benign_edges": x["benign_edges"],
               "steps": x["steps"], "work": float(x["work"]), "requests": x["requests"],
               "accepted": x["accepted"], "path": path})
    return 0


def cmd_superonion(args) -> int:
    raw = {
        "name": "superonion",
        "topology": {"kind": "superonion", "n": args.n, "m": args.m, "i": args.i},
        "scenario": {"kind": "superonion", "rounds": args.rounds},
        "seeds": [args.seed or 0],
        "output": {"path": "superonion", "format": "csv"},
    }
    if args.targets_per_round is not None:
        raw["scenario"]["targets_per_round"] = args.targets_per_round
    config = _config(args, raw)
    series = run_experiment(config)
    paths = write_experiment(config, series, _out_dir(args))
    fields = ["round", "soaped", "suspected", "replaced", "impossible", "min_unsoaped"]
    for ser, path in zip(series, paths):
        rounds = ser.extras.get("rounds", [])
        rpath = path.with_name(f"{config.name}_seed{ser.seed}_rounds.csv")
        with open(rpath, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields + ["replacement_degrees"])
            for rec in rounds:
                w.writerow([rec[f] for f in fields] + [" ".join(map(str, rec["replacement_degrees"]))])
        _emit({"seed": ser.seed, "rounds": len(rounds),
               "min_unsoaped": min((r["min_unsoaped"] for r in rounds), default=0),
               "replaced": sum(r["replaced"] for r in rounds),
               "impossible": sum(r["impossible"] for r in rounds),
               "path": path, "rounds_path": rpath})
    return 0


def cmd_metrics(args) -> int:
    try:
        with open(args.graph, encoding="utf-8") as fh:
            graph = read_edgelist(fh)
    except OSError as exc:
        raise SimError(f"{args.graph}: {exc.strerror or exc}") from None
    snap = snapshot(graph)
    _emit({"path": args.graph, "alive": snap.alive, "edges": graph.edge_count(),
           "avg_closeness": snap.avg_closeness, "avg_degree_centrality": snap.avg_degree_centrality,
           "diameter": float(snap.diameter), "components": snap.components, "max_degree": snap.max_degree})
    return 0


def cmd_reproduce(args) -> int:
    summary, paths = figures.reproduce(args.figure, _out_dir(args), args.workers)
    for p in paths:
        _emit({"wrote": p})
    sys.stdout.write(" ".join(f"{k}={v}" for k, v in summary.items()) + "\n")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "campaign": cmd_campaign,
    "soap": cmd_soap,
    "superonion": cmd_superonion,
    "metrics": cmd_metrics,
    "reproduce": cmd_reproduce,
}


def _report(exc: Exception) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["errors"] = exc.errors
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _report(exc)
        return 2
    except (SimError, OSError, ValueError) as exc:
        _report(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
