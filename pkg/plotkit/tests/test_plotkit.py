"""Tests for the figure-spec model, the records reader, and rendering."""

import numpy as np
import pytest
import yaml

from plotkit import (
    FIGURE_KINDS,
    PRESET_FIGURES,
    FigureSpec,
    RecordsError,
    load_records,
    load_spec,
    preset_spec,
    render,
)
from plotkit.cli import main as cli_main

HEADER = "# stefanest-records-v1 model={model} mode={mode}"


def write_records(path, model, mode, cols, rows):
    lines = [HEADER.format(model=model, mode=mode), ",".join(cols)]
    lines += [",".join(f"{v:.10g}" for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def seaice_observe_run(tmp_path):
    d = tmp_path / "ice"
    d.mkdir()
    cols = ["time", "day", "H", "H_hat", "err_l2"]
    cols += [f"Ti_{i}" for i in range(8)] + [f"Tihat_{i}" for i in range(8)]
    rows = []
    for k in range(6):
        t = 3600.0 * k
        profile = list(np.linspace(-20.0, -1.8, 8) + 0.1 * k)
        est = list(np.linspace(-18.0, -1.8, 8))
        rows.append([t, t / 86400.0, 2.8, 2.8 + 0.01 * k, 1.0 / (k + 1)]
                    + profile + est)
    write_records(d / "records.csv", "seaice", "observe-full", cols, rows)
    return d


@pytest.fixture
def seaice_annual_run(tmp_path):
    d = tmp_path / "annual"
    d.mkdir()
    cols = ["time", "day", "snow", "thickness", "surface_temp"]
    rows = [[86400.0 * k, float(k), 0.3, 2.8 + 0.1 * np.sin(k / 30.0), -20.0 + k * 0.05]
            for k in range(120)]
    write_records(d / "records.csv", "seaice", "simulate", cols, rows)
    return d


@pytest.fixture
def stefan_observe_run(tmp_path):
    d = tmp_path / "stefan"
    d.mkdir()
    cols = ["time", "s", "s_hat", "err_l2", "err_h1"]
    rows = [[0.1 * k, 1.0 + 0.01 * k, 1.25 + 0.005 * k, 0.2, 0.3]
            for k in range(20)]
    write_records(d / "records.csv", "stefan", "observe-joint", cols, rows)
    return d


@pytest.fixture
def battery_observe_run(tmp_path):
    d = tmp_path / "bat"
    d.mkdir()
    cols = ["time", "soc_neg", "soc_neg_hat", "soc_pos", "soc_pos_hat"]
    rows = [[k * 10.0, 0.66 - 1e-4 * k, 0.46 + 1e-3 * k, 0.3 + 1e-4 * k,
             0.32 + 1e-4 * k] for k in range(30)]
    write_records(d / "records.csv", "battery", "observe-full", cols, rows)
    return d


# --------------------------------------------------------------------------
# Spec model
# --------------------------------------------------------------------------

def test_spec_rejects_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        FigureSpec(kind="pie-chart")


def test_preset_specs_cover_all_kinds():
    kinds = {preset_spec(name).kind for name in PRESET_FIGURES}
    assert kinds == set(FIGURE_KINDS)


def test_load_spec_rejects_unknown_keys(tmp_path):
    p = tmp_path / "spec.yaml"
    p.write_text(yaml.safe_dump({"kind": "contour", "colour": "red"}))
    with pytest.raises(ValueError, match="colour"):
        load_spec(p)


def test_load_spec_round_trip(tmp_path):
    p = tmp_path / "spec.yaml"
    p.write_text(yaml.safe_dump({"kind": "profile-snapshots",
                                 "title": "demo", "options": {"snapshots": 3}}))
    spec = load_spec(p)
    assert spec.kind == "profile-snapshots"
    assert spec.options["snapshots"] == 3


# --------------------------------------------------------------------------
# Records reader
# --------------------------------------------------------------------------

def test_load_records_requires_versioned_header(tmp_path):
    d = tmp_path / "r"
    d.mkdir()
    (d / "records.csv").write_text("time,s\n0,1\n")
    with pytest.raises(RecordsError, match="header"):
        load_records(d)


def test_load_records_missing_file(tmp_path):
    with pytest.raises(RecordsError, match="records.csv"):
        load_records(tmp_path)


def test_load_records_empty_rows(tmp_path):
    d = tmp_path / "r"
    d.mkdir()
    write_records(d / "records.csv", "stefan", "simulate", ["time", "s"], [])
    with pytest.raises(RecordsError, match="no data rows"):
        load_records(d)


def test_load_records_parses_meta(seaice_observe_run):
    meta, cols, arr = load_records(seaice_observe_run)
    assert meta["model"] == "seaice"
    assert meta["mode"] == "observe-full"
    assert arr.shape[0] == 6 and len(cols) == arr.shape[1]


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def test_each_kind_renders_byte_identically(tmp_path, seaice_observe_run,
                                            seaice_annual_run,
                                            stefan_observe_run,
                                            battery_observe_run):
    cases = [
        ("annual-cycle", seaice_annual_run),
        ("contour", seaice_observe_run),
        ("profile-snapshots", seaice_observe_run),
        ("interface-trace", stefan_observe_run),
        ("soc-comparison", battery_observe_run),
    ]
    for kind, run_dir in cases:
        spec = FigureSpec(kind=kind, title=kind)
        a = render(spec, run_dir, tmp_path / f"{kind}-a.png")
        b = render(spec, run_dir, tmp_path / f"{kind}-b.png")
        assert a.exists() and a.stat().st_size > 0
        assert a.read_bytes() == b.read_bytes()


def test_render_never_mutates_records(tmp_path, stefan_observe_run):
    before = (stefan_observe_run / "records.csv").read_bytes()
    render(FigureSpec(kind="interface-trace"), stefan_observe_run,
           tmp_path / "x.png")
    assert (stefan_observe_run / "records.csv").read_bytes() == before


def test_render_empty_trace_errors_without_output(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    write_records(d / "records.csv", "stefan", "observe-joint",
                  ["time", "s", "s_hat"], [])
    out = tmp_path / "should-not-exist.png"
    with pytest.raises(RecordsError):
        render(FigureSpec(kind="interface-trace"), d, out)
    assert not out.exists()


def test_render_missing_columns_errors(tmp_path, seaice_annual_run):
    out = tmp_path / "no.png"
    with pytest.raises(RecordsError, match="interface"):
        render(FigureSpec(kind="interface-trace"), seaice_annual_run, out)
    assert not out.exists()


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def test_cli_list(capsys):
    assert cli_main(["--list"]) == 0
    out = capsys.readouterr().out
    for name in PRESET_FIGURES:
        assert name in out


def test_cli_requires_run_dir(capsys):
    assert cli_main(["--preset", "stefan-interface"]) == 1
    assert "--run" in capsys.readouterr().err


def test_cli_renders_preset(tmp_path, stefan_observe_run, capsys):
    out = tmp_path / "fig.png"
    assert cli_main(["--preset", "stefan-interface",
                     "--run", str(stefan_observe_run), "--out", str(out)]) == 0
    assert out.exists()
    assert "wrote" in capsys.readouterr().out


def test_cli_spec_file(tmp_path, battery_observe_run):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump({"kind": "soc-comparison", "title": "soc"}))
    out = tmp_path / "soc.png"
    assert cli_main(["--spec", str(spec), "--run", str(battery_observe_run),
                     "--out", str(out)]) == 0
    assert out.exists()


def test_cli_empty_records_exit_code(tmp_path, capsys):
    d = tmp_path / "empty"
    d.mkdir()
    write_records(d / "records.csv", "stefan", "observe-joint",
                  ["time", "s", "s_hat"], [])
    assert cli_main(["--preset", "stefan-interface", "--run", str(d),
                     "--out", str(tmp_path / "f.png")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_unknown_preset(capsys):
    assert cli_main(["--preset", "nope", "--run", "/tmp"]) == 1
    assert "error" in capsys.readouterr().err
