import json
import math
import random

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from onionsim import figures
from onionsim.errors import ConfigError, ParameterError
from onionsim.metrics import MetricsSnapshot
from onionsim.runner import (CSV_COLUMNS, MetricsTimeSeries, config_digest, load_config, parse_config,
                             read_csv_snapshots, read_series, run_experiment, series_to_csv, write_experiment,
                             write_series)

BASE = {
    "name": "t",
    "topology": {"kind": "k-regular", "n": 200, "k": 6},
    "scenario": {"kind": "campaign", "mode": "gradual", "fraction": 0.3},
    "seeds": [0, 1],
    "record_every": 10,
}


def snap(step, comps=1):
    return MetricsSnapshot(step, 10, 0.5, 0.25, 3 if comps == 1 else math.inf, comps, 4)


class TestConfig:
    def test_valid(self):
        c = parse_config(BASE)
        assert c.seeds == [0, 1] and c.record_every == 10 and c.output_format == "csv"

    def test_every_error_listed(self):
        raw = {"topology": {"kind": "k-regular", "n": 5, "k": 3}, "scenario": {"kind": "campaign",
               "fraction": 2}, "seeds": [], "workers": 0, "colour": "red",
               "output": {"path": "/etc", "format": "xml"}}
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        text = " | ".join(info.value.errors)
        for fragment in ("colour", "n*k even", "scenario.fraction", "seeds", "workers", "output.format",
                         "output.path"):
            assert fragment in text
        assert len(info.value.errors) >= 7

    def test_seed_range_and_bounds(self):
        c = parse_config(dict(BASE, seeds={"start": 5, "count": 3}, bounds={"d_min": 2, "d_max": 8}))
        assert c.seeds == [5, 6, 7] and c.bounds.d_max == 8

    def test_superonion_needs_matching_topology(self):
        with pytest.raises(ConfigError, match="superonion"):
            parse_config(dict(BASE, scenario={"kind": "superonion"}))

    def test_load_missing_file(self, tmp_path):
        missing = tmp_path / "nope.yaml"
        with pytest.raises(ConfigError, match="nope.yaml"):
            load_config(missing)

    def test_load_bad_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("topology: [unclosed\n")
        with pytest.raises(ConfigError, match="bad.yaml"):
            load_config(p)

    @pytest.mark.parametrize("name", figures.preset_names())
    def test_presets_parse(self, name):
        doc = yaml.safe_load(figures.preset_text(name))
        for raw in doc.get("experiments", [doc]):
            parse_config(raw, name)

    @settings(max_examples=100)
    @given(st.randoms(use_true_random=False))
    def test_digest_ignores_key_order(self, rnd):
        def shuffled(obj):
            if isinstance(obj, dict):
                items = list(obj.items())
                rnd.shuffle(items)
                return {k: shuffled(v) for k, v in items}
            return obj
        assert config_digest(shuffled(BASE)) == config_digest(BASE)

    def test_digest_changes_with_content(self):
        assert config_digest(BASE) != config_digest(dict(BASE, seeds=[0]))


class TestSeries:
    def test_steps_strictly_increase(self):
        with pytest.raises(ValueError):
            MetricsTimeSeries([snap(0), snap(0)], "d", 0)

    def test_one_snapshot_csv(self, tmp_path):
        p = tmp_path / "s.csv"
        write_series(MetricsTimeSeries([snap(0)], "d", 0), "csv", p)
        lines = p.read_bytes().decode("utf-8").split("\n")
        assert lines[0] == ",".join(CSV_COLUMNS) and lines[2] == "" and len(lines) == 3

    def test_inf_diameter(self, tmp_path):
        p = tmp_path / "s.csv"
        write_series(MetricsTimeSeries([snap(0), snap(5, comps=2)], "d", 0), "csv", p)
        assert p.read_text().splitlines()[2].split(",")[4] == "inf"
        assert read_csv_snapshots(p)[1]["diameter"] == math.inf

    def test_json_round_trip(self, tmp_path):
        series = MetricsTimeSeries([snap(0), snap(7, comps=3)], "abc", 4, {"note": 1})
        p = tmp_path / "s.json"
        write_series(series, "json", p)
        assert p.read_text().endswith("\n")
        assert read_series(p) == series
        assert json.loads(p.read_text())["snapshots"][1]["diameter"] == "inf"

    def test_empty_and_bad_format(self, tmp_path):
        with pytest.raises(ParameterError):
            write_series(MetricsTimeSeries([], "d", 0), "csv", tmp_path / "x")
        with pytest.raises(ParameterError):
            write_series(MetricsTimeSeries([snap(0)], "d", 0), "xml", tmp_path / "x")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            write_series(MetricsTimeSeries([snap(0)], "d", 0), "csv", tmp_path / "missing" / "x.csv")


class TestRun:
    def test_zero_deletion_campaign(self):
        c = parse_config(dict(BASE, scenario={"kind": "campaign", "mode": "gradual", "fraction": 0.0}))
        for series in run_experiment(c):
            assert len(series.snapshots) == 1
            assert series.snapshots[0].step == 0 and series.snapshots[0].alive == 200

    def test_provenance(self):
        c = parse_config(BASE)
        out = run_experiment(c)
        assert [s.seed for s in out] == [0, 1]
        assert all(s.config_digest == config_digest(BASE) for s in out)

    def test_byte_identical_reruns(self, tmp_path):
        c = parse_config(BASE)
        a = write_experiment(c, run_experiment(c), tmp_path / "a")
        b = write_experiment(c, run_experiment(c), tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_parallel_matches_sequential(self):
        c = parse_config(dict(BASE, seeds=[3, 4, 5]))
        assert [series_to_csv(s) for s in run_experiment(c, workers=1)] == \
            [series_to_csv(s) for s in run_experiment(c, workers=2)]

    def test_soap_scenario(self):
        raw = yaml.safe_load(figures.preset_text("soap-n100"))
        (series,) = run_experiment(parse_config(raw))
        assert series.extras["benign_edges"] == 0
        assert series.extras["contained"] == series.extras["targets"] == 99
        assert [s.step for s in series.snapshots] == [0, 1]

    def test_superonion_scenario(self):
        raw = {"topology": {"kind": "superonion", "n": 8, "m": 3, "i": 2},
               "scenario": {"kind": "superonion", "rounds": 3, "targets_per_round": 2}, "seeds": [1]}
        (series,) = run_experiment(parse_config(raw))
        rounds = series.extras["rounds"]
        assert [r["round"] for r in rounds] == [0, 1, 2]
        assert {"suspected", "replaced", "min_unsoaped"} <= set(rounds[0])
