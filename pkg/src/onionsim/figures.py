"""Figure presets: load the pinned YAML, run it, and grade the result."""

from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path

import yaml

from .attacks import partition_onset
from .errors import ConfigError
from .runner import ExperimentConfig, parse_config, run_experiment, write_experiment

FIGURES = ("fig4", "fig6", "fig8-small", "fig8-medium")
METRIC_COLUMNS = {
    "components": "components",
    "degree-centrality": "avg_degree_centrality",
    "diameter": "diameter",
}


def preset_text(name: str) -> str:
    return resources.files("onionsim").joinpath("presets", f"{name}.yaml").read_text(encoding="utf-8")


def preset_names() -> list[str]:
    root = resources.files("onionsim").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_figure(name: str) -> tuple[list[ExperimentConfig], dict]:
    if name not in FIGURES:
        raise ConfigError([f"unknown figure {name!r}"])
    doc = yaml.safe_load(preset_text(name))
    configs = [parse_config(raw, f"{name}.yaml:experiments[{i}]") for i, raw in enumerate(doc["experiments"])]
    return configs, doc.get("acceptance", {})


def _fmt(x) -> str:
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6g}"
    return str(x)


# -- graders ------------------------------------------------------------------

def grade_fig6(results, acceptance) -> dict:
    summary = {}
    ok = True
    for config, series in results:
        n0 = config.topology["n"]
        onsets = [partition_onset(s.snapshots, n0) for s in series]
        never = sum(1 for o in onsets if o is None)
        # a seed that never split within the sweep counts as splitting just past it
        limit = float(config.scenario.get("fraction", 0.9)) + 0.05
        mean = math.fsum(limit if o is None else o for o in onsets) / len(onsets)
        summary[f"mean_onset_n{n0}"] = round(mean, 6)
        if never:
            summary[f"unsplit_n{n0}"] = never
        ok = ok and acceptance["onset_min"] <= mean <= acceptance["onset_max"]
    summary["result"] = "PASS" if ok else "FAIL"
    return summary


def grade_fig4(results, acceptance) -> dict:
    summary = {}
    ok = True
    for config, series in results:
        k = config.topology["k"]
        worst = min(min(s.avg_closeness for s in ser.snapshots) / ser.snapshots[0].avg_closeness
                    for ser in series)
        summary[f"min_closeness_ratio_k{k}"] = round(worst, 6)
        ok = ok and worst >= acceptance["closeness_ratio_min"]
    summary["result"] = "PASS" if ok else "FAIL"
    return summary


def split_fraction(snapshots, n0: int) -> float | None:
    return partition_onset(snapshots, n0)


def grade_fig8(results, acceptance) -> dict:
    (ddsr_cfg, ddsr), (norm_cfg, norm) = results
    n0 = ddsr_cfg.topology["n"]
    through = acceptance["connected_through"]
    d_max = (ddsr_cfg.bounds.d_max if ddsr_cfg.bounds else ddsr_cfg.topology["k"] + ddsr_cfg.topology["k"] // 2)

    connected = sum(1 for s in ddsr if all(x.components == 1 for x in s.snapshots if x.step <= through * n0))
    share = connected / len(ddsr)
    violations = sum(1 for s in ddsr for x in s.snapshots if x.max_degree > d_max)
    slack = acceptance["diameter_slack"]
    diam_bad = 0
    for s in ddsr:
        diams = [x.diameter for x in s.snapshots if x.step <= through * n0]
        diam_bad += sum(1 for a, b in zip(diams, diams[1:]) if b > a + slack)
    splits = [split_fraction(s.snapshots, n0) for s in norm]
    baseline_ok = all(f is not None and f <= acceptance["baseline_split_by"] for f in splits)

    ok = share >= acceptance["connected_seed_share"] and violations == 0 and diam_bad == 0 and baseline_ok
    summary = {
        "ddsr_connected_share": round(share, 6),
        "degree_violations": violations,
        "diameter_rises": diam_bad,
        "normal_split_max": _fmt(max((f for f in splits if f is not None), default=math.inf)),
        "normal_unsplit": sum(1 for f in splits if f is None),
        "result": "PASS" if ok else "FAIL",
    }
    return summary


def write_metric_tables(name: str, results, out_dir: Path) -> list[Path]:
    """One CSV per (variant, metric): step then one column per seed."""
    paths = []
    for config, series in results:
        variant = config.name.rsplit("-", 1)[-1]
        for label, attr in METRIC_COLUMNS.items():
            path = out_dir / f"{name}_{variant}_{label}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step"] + [f"seed{s.seed}" for s in series])
                for rows in zip(*(s.snapshots for s in series)):
                    w.writerow([rows[0].step] + [_fmt(getattr(r, attr)) for r in rows])
            paths.append(path)
    return paths


GRADERS = {"fig4": grade_fig4, "fig6": grade_fig6, "fig8-small": grade_fig8, "fig8-medium": grade_fig8}


def reproduce(name: str, out_dir, workers: int | None = None) -> tuple[dict, list[Path]]:
    """Run a figure preset; returns (summary, written files)."""
    configs, acceptance = load_figure(name)
    out_dir = Path(out_dir)
    results, paths = [], []
    for config in configs:
        series = run_experiment(config, workers)
        paths += write_experiment(config, series, out_dir)
        results.append((config, series))
    if name.startswith("fig8"):
        base = out_dir / configs[0].output_path
        paths += write_metric_tables(name, results, base)
    summary = {"figure": name}
    summary.update(GRADERS[name](results, acceptance))
    return summary, paths
