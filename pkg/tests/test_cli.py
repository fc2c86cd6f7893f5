from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from genhedge import config
from genhedge.cli import main, read_table, write_table
from genhedge.errors import ConfigurationError

SMALL = {"model": {"dt": 1 / 64}, "paths": 200, "hedge_paths": 2, "export_paths": 3}


def write_config(tmp_path: Path, data: dict, name: str = "cfg.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def artifacts(out: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix in (".csv", ".json", ".txt")}


# configuration --------------------------------------------------------------------------

def test_documented_defaults():
    cfg = config.validate({})
    m = cfg.model
    assert (m["a"], m["N"], m["T"], m["dt"], m["seed"]) == (0.5, 12, 1.0, 1 / 512, 42)
    assert cfg.paths == 10_000 and cfg.time_steps == 512


@pytest.mark.parametrize("raw", [
    {"modle": {}},
    {"model": {"N": 1}},
    {"model": {"dt": 0.3}},
    {"claim": {"utility": "exp"}},
    {"claim": {"n": 13}},
    {"scenario": {"C": "minus infinity"}},
    {"paths": 1},
])
def test_schema_violations(raw):
    with pytest.raises(ConfigurationError):
        config.validate(raw)


def test_digest_tracks_content():
    a, b = config.validate({}), config.validate({"paths": 10_000})
    assert a.digest() == b.digest()
    assert a.with_overrides(seed=7).digest() != a.digest()
    assert a.with_overrides(paths=50).paths == 50


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError, match="malformed"):
        config.load(bad)
    with pytest.raises(ConfigurationError, match="not found"):
        config.load(tmp_path / "missing.json")
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        config.load(tmp_path / "list.json")


def test_parse_limit():
    assert config.parse_limit("-inf") == -np.inf
    assert config.parse_limit(3) == 3.0


def test_table_round_trip(tmp_path):
    path = write_table(tmp_path / "t.csv", ["x", "ok", "note"], [(0.1, True, None), (1e-300, False, "a")])
    rows = read_table(path)
    assert rows[0] == {"x": "0.1", "ok": "true", "note": ""}
    assert float(rows[1]["x"]) == 1e-300


# exit codes ---------------------------------------------------------------------------------

def test_malformed_json_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert main(["build-model", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "malformed" in capsys.readouterr().err


def test_unit_decay_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"a": 1.0}})
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_artifact_exits_2(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "nothing")]) == 2
    (tmp_path / "empty").mkdir()
    assert main(["hedge", "--config", cfg, "--out", str(tmp_path / "empty")]) == 2
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2


def test_bad_path_override_exits_2(tmp_path):
    assert main(["build-model", "--paths", "1", "--out", str(tmp_path / "o")]) == 2


def test_failing_certificate_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "scenario": {"thresholds": [1e300]}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "divergence" in err
    status = {r["certificate"]: r["passed"] for r in read_table(tmp_path / "o" / "scenario_status.csv")}
    assert status["divergence"] == "false" and status["zero pairing"] == "true"


# pipeline ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root, SMALL)
    assert main(["run", "--config", cfg, "--out", str(root / "a")]) == 0
    return root, cfg


def test_run_writes_every_artifact(small_run):
    root, _ = small_run
    out = root / "a"
    for name in ("manifest.json", "model.json", "model.csv", "martingale.csv", "paths.csv",
                 "simulation_checks.csv", "hedge_summary.csv", "portfolio.csv", "divergence.csv",
                 "zero_pairing.csv", "bank_positions.csv", "trajectories.csv", "c1.csv", "c2.csv",
                 "alpha_stats.csv", "certificate.txt", "report.txt", "divergence.png"):
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 42
    assert set(manifest["stages"]) == {"build-model", "simulate", "hedge", "scenario", "report"}
    assert "overall: PASS" in (out / "certificate.txt").read_text()
    divergence = [float(r["partial_value"]) for r in read_table(out / "divergence.csv")]
    assert np.all(np.diff(divergence) > 0)


def test_same_config_and_seed_is_bit_identical(small_run):
    root, cfg = small_run
    assert main(["run", "--config", cfg, "--out", str(root / "b")]) == 0
    assert artifacts(root / "a") == artifacts(root / "b")


def test_build_model_twice_is_identical(small_run, tmp_path):
    _, cfg = small_run
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path)]) == 0
    first = (tmp_path / "model.json").read_bytes()
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.json").read_bytes() == first


def test_stages_resume_from_manifest(small_run, tmp_path):
    _, cfg = small_run
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path)]) == 0
    # later stages pick the configuration up from the manifest
    assert main(["simulate", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "simulation.json").read_text())["n_paths"] == 200


def test_seed_override_changes_paths(small_run, tmp_path):
    root, cfg = small_run
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "paths.csv").read_bytes() != (root / "a" / "paths.csv").read_bytes()


def test_standard_errors_shrink_with_paths(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    assert main(["build-model", "--config", cfg, "--out", str(tmp_path)]) == 0
    se = {}
    for n in (100, 10_000):
        assert main(["simulate", "--config", cfg, "--paths", str(n), "--out", str(tmp_path)]) == 0
        se[n] = np.array([float(r["se"]) for r in read_table(tmp_path / "martingale.csv")])
    ratio = se[100] / se[10_000]
    assert np.all((ratio > 7) & (ratio < 14))


@pytest.mark.parametrize("limit", ["-inf", 0.0, "+inf"])
def test_part_b_scenarios_pass(tmp_path, limit):
    cfg = write_config(tmp_path, {**SMALL, "scenario": {"theorem_part": "B", "C": limit}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    hedge = {r["check"]: r["passed"] for r in read_table(tmp_path / "o" / "hedge_summary.csv")}
    assert all(v == "true" for v in hedge.values())
