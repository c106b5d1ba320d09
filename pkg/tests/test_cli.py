import csv
import json
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pilotwave.cli import DEFAULT_OUTPUT_DIR, OUTPUT_ENV_VAR, main, resolve_output_dir
from pilotwave.config import SEED_STAGES, ConfigError, ExperimentConfig, config_from_dict, load_config

# keeps the ensemble-building commands at a few seconds
SMALL = ["ensembles.gibbs_size=400", "ensembles.time_size=400"]


def cli(*args):
    argv = []
    for a in args:
        argv.extend(a if isinstance(a, list) else [a])
    return main(argv)


def with_sets(overrides):
    return [item for o in overrides for item in ("--set", o)]


def artifact_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = load_config()
        assert config_from_dict(cfg.to_dict()) == cfg
        assert json.loads(cfg.to_json()) == cfg.to_dict()

    def test_overrides_parse_json(self):
        cfg = load_config(overrides=["geometry.screen_y=30", "statistics_mode=maxwell_boltzmann",
                                     "detectors.pairs=[[[1,2],[-2,-1]]]"])
        assert cfg.geometry.screen_y == 30.0 and cfg.slit_geometry().arrival_time == 6.0
        assert cfg.statistics_mode == "maxwell_boltzmann"
        assert cfg.detectors.pairs == [[[1, 2], [-2, -1]]]

    def test_type_error_names_field_and_line(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{\n  "geometry": {\n    "screen_y": "far"\n  }\n}\n')
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.field == "geometry.screen_y" and info.value.line == 3

    @pytest.mark.parametrize("override", [
        "geometry.aperture=1", "seed=-1", "ensembles.gibbs_size=0", "statistics_mode=fermionic",
        "detectors.pairs=[[[1,2],[1.5,3]]]", "ensembles.t_end=2", "integrator.rel_tol=0",
    ])
    def test_invalid_values_rejected(self, override):
        with pytest.raises(ConfigError):
            load_config(overrides=[override])

    @given(seed=st.integers(0, 2**63 - 1))
    def test_derived_seeds_distinct_and_stable(self, seed):
        a = ExperimentConfig(seed=seed).derived_seeds()
        assert a == ExperimentConfig(seed=seed).derived_seeds()
        assert list(a) == list(SEED_STAGES) and len(set(a.values())) == len(a)
        assert all(0 <= s < 2**63 for s in a.values())


class TestOutputDir:
    def test_precedence(self, monkeypatch, tmp_path):
        cfg = load_config()
        monkeypatch.delenv(OUTPUT_ENV_VAR, raising=False)
        assert str(resolve_output_dir(None, cfg)) == DEFAULT_OUTPUT_DIR
        monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "env"))
        assert resolve_output_dir(None, cfg) == tmp_path / "env"
        cfg.output_dir = str(tmp_path / "cfg")
        assert resolve_output_dir(None, cfg) == tmp_path / "cfg"
        assert resolve_output_dir(tmp_path / "cli", cfg) == tmp_path / "cli"

    def test_env_var_used_by_run(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "env"))
        assert cli("trajectories", with_sets(["trajectories.n_samples=5"])) == 0
        assert (tmp_path / "env" / "run.json").exists()


class TestSubcommands:
    def test_trajectories(self, tmp_path):
        assert cli("trajectories", "--out", str(tmp_path), with_sets(["trajectories.n_samples=11"])) == 0
        files = sorted(p.name for p in tmp_path.glob("trajectory_*.csv"))
        assert files == ["trajectory_000.csv", "trajectory_001.csv", "trajectory_002.csv"]
        with open(tmp_path / files[0]) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 12
        run = json.loads((tmp_path / "run.json").read_text())
        assert run["command"] == "trajectories" and run["exit_status"] == 0
        assert set(run["seeds"]) == set(SEED_STAGES)
        assert run["resolved"]["trajectory_t_end"] == 5.0

    def test_ensemble(self, tmp_path):
        assert cli("ensemble", "--out", str(tmp_path), with_sets(SMALL)) == 0
        for name in ("gibbs", "time"):
            for suffix in ("_initial.csv", "_manifest.json", "_final.csv"):
                assert (tmp_path / f"{name}{suffix}").exists()
        result = json.loads((tmp_path / "run.json").read_text())["result"]
        assert result["ensembles"]["time"]["stats"]["max_abs_x_sum_final"] <= 1e-6

    def test_detect_asymmetric_pair(self, tmp_path):
        sets = SMALL + ["detectors.pairs=[[[4,4.5],[-3,-2.5]]]"]
        assert cli("detect", "--out", str(tmp_path), with_sets(sets)) == 0
        with open(tmp_path / "detect.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["time_rate"]) == 0.0 and float(rows[0]["sqt"]) > 1e-3

    def test_detect_single_particle(self, tmp_path):
        sets = ["statistics_mode=single_particle", "ensembles.gibbs_size=300"]
        assert cli("detect", "--out", str(tmp_path), with_sets(sets)) == 0
        with open(tmp_path / "detect.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["coincidences"] == "0" for r in rows)

    def test_scan(self, tmp_path):
        sets = SMALL + ["scan.centers_p=[2.75]", "scan.centers_q=[-2.75,-1.25]"]
        assert cli("scan", "--out", str(tmp_path), with_sets(sets)) == 0
        payload = json.loads((tmp_path / "scan.json").read_text())
        assert len(payload["rows"]) == 2
        mirror = [r for r in payload["rows"] if r["mirror_symmetric"]]
        assert len(mirror) == 1 and mirror[0]["time_rate"] > 0

    def test_verify_default_passes(self, tmp_path):
        assert cli("verify", "--out", str(tmp_path)) == 0
        reports = [json.loads(line) for line in (tmp_path / "reports.jsonl").read_text().splitlines()]
        assert all(r["passed"] for r in reports)
        names = {r["name"] for r in reports}
        assert {"exchange_symmetry", "continuity_residual", "sum_conservation", "no_crossing",
                "newton_quantum_force"} <= names

    def test_verify_fails_for_maxwell_boltzmann(self, tmp_path):
        sets = ["statistics_mode=maxwell_boltzmann", "verify.equivariance_size=2000",
                "verify.slice_trajectories=20"]
        assert cli("verify", "--out", str(tmp_path), with_sets(sets)) == 1
        assert json.loads((tmp_path / "run.json").read_text())["exit_status"] == 1


class TestErrors:
    def test_bad_type_exits_2(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{\n  "geometry": {"screen_y": "far"}\n}\n')
        assert cli("detect", "--config", str(path), "--out", str(tmp_path / "o")) == 2
        err = capsys.readouterr().err
        assert "geometry.screen_y" in err and "line 2" in err
        assert not (tmp_path / "o").exists()

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        assert cli("scan", "--out", str(tmp_path), "--set", "scan.spacing=1") == 2
        assert "scan.spacing" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            cli("simulate")

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "pilotwave", "trajectories", "--out", str(tmp_path),
             "--set", "trajectories.n_samples=3"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr


def test_repeat_runs_are_byte_identical(tmp_path):
    sets = with_sets(SMALL)
    assert cli("detect", "--out", str(tmp_path), sets) == 0
    first = artifact_bytes(tmp_path)
    assert cli("detect", "--out", str(tmp_path), sets) == 0
    assert artifact_bytes(tmp_path) == first
