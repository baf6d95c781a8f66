"""Experiment orchestration: YAML configs, seed fan-out, result files.

Config schema (YAML; every key optional unless marked):

    name: str                       label used in output file names
    topology:                       (required)
      kind: k-regular | superonion
      n: int                        nodes (k-regular) or physical hosts (superonion)
      k: int                        degree of the initial k-regular graph
      m: int                        superonion: virtual nodes per host
      i: int                        superonion: peers per virtual node
    bounds: {d_min: int, d_max: int}   peers; default [ceil(k/2), k + k//2]
    scenario:
      kind: none | campaign | soap | superonion
      mode: gradual | simultaneous  campaign only
      fraction: float in [0, 1]     share of initial nodes to delete
      repair: bool                  gradual only; false = no self-repair
      prune: bool                   gradual only; false = no d_max pruning
      clone_budget: int             soap/superonion: clones per target
      total_budget: int             soap: clones for the whole run
      declared_degree_range: [lo, hi]
      rounds: int                   superonion rounds
      targets_per_round: int        superonion: hosts attacked per round
      probe_period: int             superonion: rounds between probes
      probe_ttl: int                superonion: flood hop limit
    defense:
      pow: {base_work: float, growth: float}            work units
      rate_limit: {base_delay: int, per_peer_delay: int}  steps
    seeds: [int, ...] or {start: int, count: int}       (required, >= 1)
    record_every: int               deletions between snapshots; default 1% of n
    output: {path: str, format: csv | json}   path is relative to the output dir
    workers: int                    parallel seed processes (default 1)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attacks import (NO_DEFENSE, Campaign, DefensePolicy, PowPolicy, RateLimitPolicy, SoapAttacker,
                      benign_edges_among, run_deletion_campaign, soap_network)
from .errors import ConfigError, ParameterError
from .metrics import MetricsSnapshot, snapshot
from .overlay import DegreeBounds, build_k_regular
from .superonion import SuperOnionConfig, run_superonion

CSV_COLUMNS = ["step", "alive", "avg_closeness", "avg_degree_centrality", "diameter", "components"]
TOPOLOGIES = ("k-regular", "superonion")
SCENARIOS = ("none", "campaign", "soap", "superonion")


@dataclass
class ExperimentConfig:
    raw: dict
    name: str
    topology: dict
    bounds: DegreeBounds | None
    scenario: dict
    defense: DefensePolicy
    seeds: list
    record_every: int | None
    output_path: str
    output_format: str
    workers: int = 1

    @property
    def digest(self) -> str:
        return config_digest(self.raw)


@dataclass
class MetricsTimeSeries:
    snapshots: list
    config_digest: str
    seed: int
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        steps = [s.step for s in self.snapshots]
        if any(a >= b for a, b in zip(steps, steps[1:])):
            raise ValueError("snapshot steps must be strictly increasing")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_digest(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode("utf-8")).hexdigest()


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_config(raw, origin: str = "<config>") -> ExperimentConfig:
    """Validate a config mapping, collecting every problem before failing."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError([f"{origin}: top level must be a mapping"])

    def need(cond, msg):
        if not cond:
            errors.append(msg)
        return cond

    known = {"name", "topology", "bounds", "scenario", "defense", "seeds", "record_every", "output", "workers"}
    for key in sorted(set(raw) - known):
        errors.append(f"{key}: unknown field")

    topo = raw.get("topology")
    if need(isinstance(topo, dict), "topology: required mapping"):
        kind = topo.get("kind", "k-regular")
        if need(kind in TOPOLOGIES, f"topology.kind: must be one of {', '.join(TOPOLOGIES)}"):
            need(_is_int(topo.get("n")) and topo.get("n", 0) >= 2, "topology.n: integer >= 2 required")
            if kind == "k-regular":
                k, n = topo.get("k"), topo.get("n")
                if need(_is_int(k) and k >= 1, "topology.k: integer >= 1 required") and _is_int(n):
                    need(n > k and (n * k) % 2 == 0, "topology: need n > k and n*k even")
            else:
                need(_is_int(topo.get("m")) and topo.get("m", 0) >= 2, "topology.m: integer >= 2 required")
                need(_is_int(topo.get("i")) and topo.get("i", 0) >= 1, "topology.i: integer >= 1 required")
    else:
        topo = {}

    bounds = None
    b = raw.get("bounds")
    if b is not None:
        if need(isinstance(b, dict), "bounds: must be a mapping"):
            lo, hi = b.get("d_min"), b.get("d_max")
            if need(_is_int(lo) and _is_int(hi) and 1 <= lo <= hi, "bounds: need integers 1 <= d_min <= d_max"):
                bounds = DegreeBounds(lo, hi)

    scen = raw.get("scenario", {"kind": "none"})
    if need(isinstance(scen, dict), "scenario: must be a mapping"):
        skind = scen.get("kind", "none")
        need(skind in SCENARIOS, f"scenario.kind: must be one of {', '.join(SCENARIOS)}")
        if skind == "campaign":
            need(scen.get("mode", "gradual") in ("gradual", "simultaneous"),
                 "scenario.mode: gradual or simultaneous")
            f = scen.get("fraction", 0.9)
            need(_is_num(f) and 0 <= f <= 1, "scenario.fraction: number within [0, 1]")
            for flag in ("repair", "prune"):
                need(isinstance(scen.get(flag, True), bool), f"scenario.{flag}: boolean")
        if skind in ("soap", "superonion"):
            cb = scen.get("clone_budget")
            need(cb is None or (_is_int(cb) and cb >= 1), "scenario.clone_budget: positive integer")
            rng_ = scen.get("declared_degree_range")
            need(rng_ is None or (isinstance(rng_, list) and len(rng_) == 2 and all(_is_int(x) for x in rng_)
                                  and 1 <= rng_[0] <= rng_[1]),
                 "scenario.declared_degree_range: [lo, hi] with 1 <= lo <= hi")
        if skind == "soap":
            tb = scen.get("total_budget")
            need(tb is None or (_is_int(tb) and tb >= 1), "scenario.total_budget: positive integer")
        if skind == "superonion":
            need(topo.get("kind") == "superonion", "scenario.kind superonion needs topology.kind superonion")
            for key, lo in (("rounds", 1), ("probe_period", 1), ("probe_ttl", 1), ("targets_per_round", 0)):
                v = scen.get(key)
                need(v is None or (_is_int(v) and v >= lo), f"scenario.{key}: integer >= {lo}")
        if skind in ("campaign", "soap") and topo.get("kind") == "superonion":
            errors.append(f"scenario.kind {skind} needs a k-regular topology")
    else:
        scen = {"kind": "none"}

    defense = NO_DEFENSE
    d = raw.get("defense")
    if d is not None:
        if need(isinstance(d, dict), "defense: must be a mapping"):
            pow_ = rate = None
            p = d.get("pow")
            if p is not None:
                if need(isinstance(p, dict) and _is_num(p.get("base_work")) and _is_num(p.get("growth"))
                        and p["base_work"] > 0 and p["growth"] >= 1,
                        "defense.pow: need base_work > 0 and growth >= 1"):
                    pow_ = PowPolicy(p["base_work"], p["growth"])
            r = d.get("rate_limit")
            if r is not None:
                if need(isinstance(r, dict) and _is_int(r.get("base_delay")) and _is_int(r.get("per_peer_delay"))
                        and r["base_delay"] >= 0 and r["per_peer_delay"] >= 0,
                        "defense.rate_limit: need integer delays >= 0"):
                    rate = RateLimitPolicy(r["base_delay"], r["per_peer_delay"])
            defense = DefensePolicy(pow_, rate)

    seeds = []
    s = raw.get("seeds")
    if isinstance(s, list):
        if need(s and all(_is_int(x) for x in s), "seeds: non-empty list of integers"):
            need(len(set(s)) == len(s), "seeds: duplicates")
            seeds = list(s)
    elif isinstance(s, dict):
        if need(_is_int(s.get("count")) and s["count"] >= 1 and _is_int(s.get("start", 0)),
                "seeds: {start, count} with count >= 1"):
            seeds = list(range(s.get("start", 0), s.get("start", 0) + s["count"]))
    else:
        errors.append("seeds: required, a list or {start, count}")

    rec = raw.get("record_every")
    need(rec is None or (_is_int(rec) and rec >= 1), "record_every: positive integer")

    out = raw.get("output", {})
    fmt, path = "csv", raw.get("name", "experiment")
    if need(isinstance(out, dict), "output: must be a mapping"):
        fmt = out.get("format", "csv")
        need(fmt in ("csv", "json"), "output.format: csv or json")
        path = out.get("path", path)
        if need(isinstance(path, str) and path, "output.path: non-empty string"):
            need(not os.path.isabs(path) and ".." not in Path(path).parts,
                 "output.path: must stay inside the output directory")

    workers = raw.get("workers", 1)
    need(_is_int(workers) and workers >= 1, "workers: positive integer")

    name = raw.get("name", "experiment")
    need(isinstance(name, str) and name, "name: non-empty string")

    if errors:
        raise ConfigError([f"{origin}: {e}" for e in errors])
    return ExperimentConfig(raw, name, topo, bounds, scen, defense, seeds, rec, path, fmt, workers)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config ({exc.strerror or exc})"]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    return parse_config(raw, str(path))


# -- running ------------------------------------------------------------------

def _run_seed(config: ExperimentConfig, seed: int) -> MetricsTimeSeries:
    topo, scen = config.topology, config.scenario
    digest = config.digest
    kind = scen.get("kind", "none")

    if topo.get("kind", "k-regular") == "superonion":
        so_cfg = SuperOnionConfig(topo["n"], topo["m"], topo["i"],
                                  probe_period=scen.get("probe_period", 1),
                                  probe_ttl=scen.get("probe_ttl", 64),
                                  d_max=config.bounds.d_max if config.bounds else None)
        rounds = scen.get("rounds", 1) if kind == "superonion" else 0
        from .superonion import build_superonion
        if rounds == 0:
            graph, _ = build_superonion(so_cfg, seed)
            return MetricsTimeSeries([snapshot(graph, 0)], digest, seed)
        graph, hosts, records = run_superonion(
            so_cfg, seed, rounds, clone_budget=scen.get("clone_budget"),
            targets_per_round=scen.get("targets_per_round"), defense=config.defense)
        extras = {"rounds": [r.__dict__ for r in records]}
        return MetricsTimeSeries([snapshot(graph, rounds)], digest, seed, extras)

    graph = build_k_regular(topo["n"], topo["k"], seed, config.bounds)
    if kind == "campaign":
        campaign = Campaign(scen.get("mode", "gradual"), scen.get("fraction", 0.9), seed=seed,
                            record_every=config.record_every, repair=scen.get("repair", True),
                            prune=scen.get("prune", True))
        result = run_deletion_campaign(graph, campaign)
        return MetricsTimeSeries(result.snapshots, digest, seed)
    if kind == "soap":
        before = snapshot(graph, 0)
        entry = random.Random(f"entry:{seed}").choice(graph.ids())
        budget = scen.get("clone_budget", 10 * graph.bounds.d_max)
        rng_ = scen.get("declared_degree_range")
        attacker = SoapAttacker(entry, budget, tuple(rng_) if rng_ else None, seed=seed,
                                total_budget=scen.get("total_budget"))
        results = soap_network(graph, attacker, config.defense)
        benign = [u for u in graph.nodes if u not in graph.clones]
        extras = {
            "entry": str(entry),
            "targets": len(results),
            "contained": sum(1 for r in results.values() if r.contained),
            "benign_nodes": len(benign),
            "benign_edges": benign_edges_among(graph, benign),
            "steps": sum(r.steps for r in results.values()),
            "work": math.fsum(r.work for r in results.values()),
            "requests": sum(r.requests for r in results.values()),
            "accepted": sum(r.accepted for r in results.values()),
        }
        return MetricsTimeSeries([before, snapshot(graph, 1)], digest, seed, extras)
    return MetricsTimeSeries([snapshot(graph, 0)], digest, seed)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> list[MetricsTimeSeries]:
    """One series per seed, in seed order regardless of worker count."""
    workers = workers or config.workers
    if workers <= 1 or len(config.seeds) == 1:
        return [_run_seed(config, s) for s in config.seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_seed, [config] * len(config.seeds), config.seeds))


# -- serialisation --------------------------------------------------------------

def _fmt_float(x) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(x)


def series_to_csv(series: MetricsTimeSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in series.snapshots:
        w.writerow([s.step, s.alive, _fmt_float(s.avg_closeness), _fmt_float(s.avg_degree_centrality),
                    _fmt_float(s.diameter), s.components])
    return buf.getvalue()


def _snap_json(s: MetricsSnapshot) -> dict:
    d = s.as_dict()
    d["diameter"] = "inf" if math.isinf(s.diameter) else s.diameter
    return d


def series_to_json(series: MetricsTimeSeries) -> str:
    doc = {
        "config_digest": series.config_digest,
        "seed": series.seed,
        "extras": series.extras,
        "snapshots": [_snap_json(s) for s in series.snapshots],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_series(series: MetricsTimeSeries, fmt: str, path) -> None:
    if not series.snapshots:
        raise ParameterError("cannot write an empty series")
    if fmt == "csv":
        text = series_to_csv(series)
    elif fmt == "json":
        text = series_to_json(series)
    else:
        raise ParameterError(f"unknown format {fmt!r}")
    Path(path).write_text(text, encoding="utf-8", newline="")


def read_series(path) -> MetricsTimeSeries:
    """Read a JSON series written by ``write_series``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    snaps = []
    for d in doc["snapshots"]:
        d = dict(d)
        d["diameter"] = math.inf if d["diameter"] == "inf" else d["diameter"]
        snaps.append(MetricsSnapshot(**d))
    return MetricsTimeSeries(snaps, doc["config_digest"], doc["seed"], doc.get("extras", {}))


def read_csv_snapshots(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "step": int(r["step"]),
            "alive": int(r["alive"]),
            "avg_closeness": float(r["avg_closeness"]),
            "avg_degree_centrality": float(r["avg_degree_centrality"]),
            "diameter": math.inf if r["diameter"] == "inf" else int(float(r["diameter"])),
            "components": int(r["components"]),
        })
    return out


def series_filename(config: ExperimentConfig, seed: int) -> str:
    return f"{config.name}_seed{seed}.{config.output_format}"


def write_experiment(config: ExperimentConfig, series_list, out_dir) -> list[Path]:
    """Write every seed's series under ``out_dir/config.output_path``."""
    base = Path(out_dir) / config.output_path
    base.mkdir(parents=True, exist_ok=True)
    paths = []
    for series in series_list:
        p = base / series_filename(config, series.seed)
        write_series(series, config.output_format, p)
        paths.append(p)
    return paths
