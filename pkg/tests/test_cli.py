import json
import subprocess
import sys
from pathlib import Path

import pytest

from movingsets.cli import (STUDY_KINDS, describe, list_studies, main,
                            validate_config)
from movingsets.errors import ConfigError
from movingsets.report import COLUMNS, parse_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_cfg(tmp_path, cfg, name="study.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def quick_vi_cfg(**overrides):
    cfg = {"study": "vi", "levels": [8, 16], "load": 8.0,
           "constraint": {"kind": "nodal", "bound": 0.1}}
    cfg.update(overrides)
    return cfg


def csv_body(path):
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# list / describe

def test_list_enumerates_eight_kinds(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert len(STUDY_KINDS) == 8
    for kind in STUDY_KINDS:
        assert kind in out


def test_describe_mosco_shows_required_keys(capsys):
    assert main(["describe", "mosco"]) == 0
    out = capsys.readouterr().out
    assert "required keys:" in out
    for key in ("mesh", "load", "constraint", "drift"):
        assert key in out


def test_describe_unknown_kind_names_the_valid_ones(capsys):
    assert main(["describe", "sudoku"]) == 2
    err = capsys.readouterr().err
    assert "valid kinds" in err
    for kind in STUDY_KINDS:
        assert kind in err


def test_no_subcommand_is_an_error(capsys):
    assert main([]) == 2


# ---------------------------------------------------------------------------
# config validation

def test_validate_config_accepts_bundled():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = json.loads(path.read_text())
        assert validate_config(cfg) == [], path.name


def test_validate_config_flags_fields_by_path():
    msgs = validate_config(quick_vi_cfg(tol=-1.0))
    assert any("tol" in m for m in msgs)
    msgs = validate_config({"study": "vi", "load": 8.0,
                            "constraint": {"kind": "nodal", "bound": 0.1}})
    assert any("levels" in m for m in msgs)
    msgs = validate_config(quick_vi_cfg(
        constraint={"kind": "nodal"}))
    assert any("constraint" in m and "bound" in m for m in msgs)
    msgs = validate_config({"study": "sudoku"})
    assert any("study" in m for m in msgs)


def test_malformed_config_exits_2_with_field_message(tmp_path, capsys):
    p = write_cfg(tmp_path, quick_vi_cfg(tol=-1.0))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "tol" in err
    assert not (tmp_path / "o").exists()


def test_missing_file_and_broken_json_exit_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["run", str(bad)]) == 2


# ---------------------------------------------------------------------------
# run lifecycle

def test_bundled_contact_config_runs_clean(tmp_path, capsys):
    cfg_path = CONFIGS / "vi_contact_1d.json"
    assert main(["run", str(cfg_path), "--out", str(tmp_path)]) == 0
    cfg = json.loads(cfg_path.read_text())
    out_csv = tmp_path / f"{cfg['name']}.csv"
    assert out_csv.exists()
    meta, header, rows = parse_csv(out_csv.read_text())
    assert header == list(COLUMNS)
    assert len(rows) == len(cfg["levels"])
    assert all(r[-1] == "1" for r in rows)
    assert meta["passed"] == "1"
    assert "config_hash" in meta and "seed" in meta


def test_dry_run_validates_and_writes_nothing(tmp_path, capsys):
    p = write_cfg(tmp_path, quick_vi_cfg())
    out = tmp_path / "results"
    assert main(["run", str(p), "--dry-run", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "dry run" in text
    assert "study.csv" in text
    assert not out.exists()
    # dry run still rejects malformed configs
    bad = write_cfg(tmp_path, quick_vi_cfg(levels=[8.5]), "bad.json")
    assert main(["run", str(bad), "--dry-run"]) == 2


def test_flag_failure_exits_1_but_writes_csv(tmp_path, capsys):
    # an unreachable agreement gate: both methods solve, flags fail
    p = write_cfg(tmp_path, quick_vi_cfg(agreement_tol=1e-30))
    assert main(["run", str(p), "--out", str(tmp_path)]) == 1
    captured = capsys.readouterr()
    assert "flag" in captured.err
    meta, _, rows = parse_csv((tmp_path / "study.csv").read_text())
    assert meta["passed"] == "0"
    assert any(r[-1] == "0" for r in rows)


def test_solver_failure_exits_3(tmp_path, capsys):
    cfg = {"study": "gamma",
           "mesh": {"kind": "interval", "n": 16},
           "load": 8.0,
           "constraint": {"kind": "nodal", "bound": 0.1},
           "scheme": {"kind": "moreau_yosida", "gamma": [100.0, 200.0]}}
    p = write_cfg(tmp_path, cfg)
    assert main(["run", str(p), "--out", str(tmp_path)]) == 3
    assert "solver failure" in capsys.readouterr().err
    assert not (tmp_path / "study.csv").exists()


def test_row_count_tracks_schedule_length(tmp_path, capsys):
    cfg = {"study": "mosco",
           "mesh": {"kind": "interval", "n": 32},
           "load": 8.0,
           "constraint": {"kind": "nodal", "bound": 0.1},
           "drift": {"deltas": {"kind": "dyadic", "count": 6}}}
    p = write_cfg(tmp_path, cfg)
    assert main(["run", str(p), "--out", str(tmp_path)]) == 0
    _, _, rows = parse_csv((tmp_path / "study.csv").read_text())
    assert len(rows) == 6


def test_plot_flag_writes_svg_and_never_gates(tmp_path, capsys):
    cfg = {"study": "fem", "levels": [8, 16, 32], "load": 8.0,
           "constraint": {"kind": "nodal", "bound": 0.1}}
    p = write_cfg(tmp_path, cfg)
    assert main(["run", str(p), "--out", str(tmp_path), "--plot"]) == 0
    svg = tmp_path / "study.svg"
    assert svg.exists()
    assert b"<svg" in svg.read_bytes()[:500]
    # a study with nothing plottable skips the figure without failing
    q = write_cfg(tmp_path, quick_vi_cfg(), "flat.json")
    assert main(["run", str(q), "--out", str(tmp_path), "--plot"]) == 0


# ---------------------------------------------------------------------------
# determinism

def test_reruns_are_byte_identical_in_body(tmp_path, capsys):
    p = write_cfg(tmp_path, quick_vi_cfg(seed=7))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(p), "--out", str(a)]) == 0
    assert main(["run", str(p), "--out", str(b)]) == 0
    assert csv_body(a / "study.csv") == csv_body(b / "study.csv")


def test_thread_count_env_does_not_change_output(tmp_path, capsys,
                                                 monkeypatch):
    cfg = {"study": "fem",
           "levels": [8, 16, 32],
           "load": {"kind": "poly", "terms": [[8.0, 0]]},
           "constraint": {"kind": "nodal", "bound": 0.1}}
    p = write_cfg(tmp_path, cfg)
    monkeypatch.setenv("MOVINGSETS_THREADS", "1")
    assert main(["run", str(p), "--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setenv("MOVINGSETS_THREADS", "3")
    assert main(["run", str(p), "--out", str(tmp_path / "pool")]) == 0
    assert (csv_body(tmp_path / "serial" / "study.csv")
            == csv_body(tmp_path / "pool" / "study.csv"))


def test_console_script_is_wired():
    proc = subprocess.run([sys.executable, "-m", "movingsets.cli", "list"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "qvi" in proc.stdout


# ---------------------------------------------------------------------------
# every bundled config stays green

@pytest.mark.parametrize("name", sorted(
    p.name for p in CONFIGS.glob("*.json")))
def test_bundled_config_exits_zero(name, tmp_path, capsys):
    assert main(["run", str(CONFIGS / name), "--out", str(tmp_path)]) == 0
