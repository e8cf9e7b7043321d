"""Acceptance check: every plot kind renders from real pipeline CSVs."""

import json

import pytest

qg2rom_cli = pytest.importorskip(
    "qg2rom.cli", reason="needs the core package to generate pipeline CSVs")

from qg2rom_plots.cli import main as plots_main
from qg2rom_plots.render import discover_jobs


def check(label, ok, detail):
    print(f"{label}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"{label}: {detail}"


@pytest.mark.filterwarnings("ignore:mesh size")
def test_a13_renders_every_kind_from_pipeline_output(tmp_path):
    out = tmp_path / "out"
    config = {
        "grid": {"nx": 8, "ny": 16},
        "physics": {"Ro": 0.5, "Re": 20.0, "Fr": 0.1, "sigma": 0.01,
                    "delta": 0.5},
        "time": {"dt": 0.01, "t0": 0.0, "t_end": 0.1},
        "pod": {"rank": 2},
        "lstm_q": {"layers": 1, "cells": 4, "batch_size": 4, "epochs": 5,
                   "lookback": 4},
        "lstm_psi": {"layers": 1, "cells": 4, "batch_size": 4, "epochs": 5,
                     "lookback": 4},
        "predict": {"steps": 5},
        "output_dir": str(out),
        "seed": 0,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert qg2rom_cli.main(["pipeline", "--config", str(cfg_path)]) == 0

    figs = tmp_path / "figs"
    kinds = {j.kind for j in discover_jobs(out, figs)}
    code = plots_main(["render-all", str(out), str(figs)])
    images = sorted(figs.glob("*.png"))
    nonempty = all(p.stat().st_size > 500 and
                   p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in images)
    ok = (code == 0 and kinds == {"contour", "series", "pmf", "spectrum",
                                  "energy", "diffmap"}
          and len(images) > 0 and nonempty)
    check("A13", ok,
          f"render-all exit {code}, kinds covered {sorted(kinds)}, "
          f"{len(images)} non-empty images")
