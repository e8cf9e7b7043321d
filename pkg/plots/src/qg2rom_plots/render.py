"""Render qg2rom CSV outputs as raster images.

Six plot kinds are supported, one per CSV family produced by the primary
pipeline:

``contour``
    A scalar field on the structured mesh (``x,y,value``).
``diffmap``
    Same layout as ``contour`` but plots the absolute value, for
    difference maps between predicted and reference fields.
``series``
    One curve per value column against the first column
    (modal-coefficient files ``t,mu_*,alpha_*`` and training histories
    ``epoch,train_mse,val_mse``).  ``mu_*`` columns label the parameter
    block and are not drawn as curves.
``pmf``
    A probability mass function as a bar chart (``bin_lo,bin_hi,mass``).
``spectrum``
    Singular-value decay and cumulative energy accumulation, one curve
    per field (``field,index,sigma``).
``energy``
    Scalar time series such as enstrophy or kinetic energy
    (``t,<name>``); with two inputs a second panel shows the pointwise
    absolute difference between them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("contour", "series", "pmf", "spectrum", "energy", "diffmap")

_DPI = 130


class PlotError(Exception):
    """A plot job could not be rendered from its input CSVs."""


@dataclass(frozen=True)
class PlotJob:
    """One figure: a kind, its input CSVs, and the image to write."""

    kind: str
    inputs: tuple[Path, ...]
    output: Path
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown plot kind {self.kind!r}; "
                            f"expected one of {', '.join(KINDS)}")
        if not self.inputs:
            raise PlotError("plot job has no input CSV files")

    @staticmethod
    def make(kind: str, inputs: Sequence[str | Path], output: str | Path,
             title: str = "") -> "PlotJob":
        return PlotJob(kind, tuple(Path(p) for p in inputs), Path(output), title)


def read_columns(path: Path, required: Sequence[str] = ()) -> dict[str, np.ndarray]:
    """Read a CSV into named columns, checking the required ones exist.

    String columns (e.g. the ``field`` label of spectrum files) are kept
    as object arrays; everything else is parsed as float64.
    """
    path = Path(path)
    if not path.exists():
        raise PlotError(f"input CSV not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise PlotError(f"{path}: empty CSV, no header row")
    header = [h.strip() for h in rows[0]]
    for name in required:
        if name not in header:
            raise PlotError(f"{path}: missing required column {name!r} "
                            f"(found: {', '.join(header)})")
    body = [r for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise PlotError(f"{path}: ragged rows do not match the header width")
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in body]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            cols[name] = np.array(raw, dtype=object)
    return cols


def _field_grid(cols: dict[str, np.ndarray], path: Path):
    x, y, v = cols["x"], cols["y"], cols["value"]
    xs, ys = np.unique(x), np.unique(y)
    if xs.size * ys.size != v.size:
        raise PlotError(f"{path}: x/y coordinates do not form a full grid")
    Z = np.full((ys.size, xs.size), np.nan)
    Z[np.searchsorted(ys, y), np.searchsorted(xs, x)] = v
    return xs, ys, Z


def _render_field(job: PlotJob, ax, absolute: bool):
    cols = read_columns(job.inputs[0], required=("x", "y", "value"))
    xs, ys, Z = _field_grid(cols, job.inputs[0])
    if absolute:
        Z = np.abs(Z)
    cmap = "magma" if absolute else "RdBu_r"
    mesh = ax.pcolormesh(xs, ys, Z, shading="nearest", cmap=cmap)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    plt.colorbar(mesh, ax=ax)


def _render_series(job: PlotJob, ax):
    cols = read_columns(job.inputs[0])
    names = list(cols)
    if len(names) < 2:
        raise PlotError(f"{job.inputs[0]}: series CSV needs an abscissa "
                        f"column plus at least one value column")
    xname = names[0]
    x = cols[xname]
    if x.dtype == object:
        raise PlotError(f"{job.inputs[0]}: abscissa column {xname!r} "
                        f"is not numeric")
    drawn = 0
    for name in names[1:]:
        if name.startswith("mu_") or cols[name].dtype == object:
            continue
        ax.plot(x, cols[name], label=name, linewidth=1.0)
        drawn += 1
    if drawn == 0:
        raise PlotError(f"{job.inputs[0]}: no numeric value columns to plot")
    ax.set_xlabel(xname)
    ax.legend(loc="best", fontsize="small", ncol=max(1, drawn // 8))


def _render_pmf(job: PlotJob, ax):
    cols = read_columns(job.inputs[0], required=("bin_lo", "bin_hi", "mass"))
    lo, hi, mass = cols["bin_lo"], cols["bin_hi"], cols["mass"]
    ax.bar((lo + hi) / 2.0, mass, width=hi - lo, align="center",
           edgecolor="black", linewidth=0.3)
    ax.set_xlabel("value")
    ax.set_ylabel("mass")


def _render_spectrum(job: PlotJob, axes):
    cols = read_columns(job.inputs[0], required=("field", "index", "sigma"))
    ax_decay, ax_energy = axes
    fields = cols["field"]
    order = [f for i, f in enumerate(fields) if f not in fields[:i]]
    for fid in order:
        sel = fields == fid
        idx, sigma = cols["index"][sel], cols["sigma"][sel]
        ax_decay.semilogy(idx, sigma, marker=".", label=str(fid))
        total = sigma.sum()
        frac = np.cumsum(sigma) / total if total > 0 else np.zeros_like(sigma)
        ax_energy.plot(idx, frac, marker=".", label=str(fid))
    ax_decay.set_xlabel("mode index")
    ax_decay.set_ylabel("singular value")
    ax_decay.legend(fontsize="small")
    ax_energy.set_xlabel("mode index")
    ax_energy.set_ylabel("cumulative energy fraction")
    ax_energy.set_ylim(0.0, 1.05)
    ax_energy.legend(fontsize="small")


def _energy_columns(path: Path):
    cols = read_columns(path, required=("t",))
    value_names = [n for n in cols if n != "t" and cols[n].dtype != object]
    if not value_names:
        raise PlotError(f"{path}: no numeric value column next to 't'")
    return cols["t"], cols[value_names[0]], value_names[0]


def _render_energy(job: PlotJob, fig):
    curves = [_energy_columns(p) for p in job.inputs]
    if len(curves) >= 2:
        ax_top, ax_bot = fig.subplots(2, 1, sharex=True)
    else:
        ax_top, ax_bot = fig.subplots(), None
    for (t, v, name), path in zip(curves, job.inputs):
        ax_top.plot(t, v, label=f"{path.stem}")
    ax_top.set_ylabel(curves[0][2])
    ax_top.legend(fontsize="small")
    if ax_bot is not None:
        t0, v0, _ = curves[0]
        t1, v1, _ = curves[1]
        if t0.shape != t1.shape or not np.allclose(t0, t1):
            raise PlotError("energy error panel needs inputs sampled on "
                            "the same 't' grid")
        ax_bot.plot(t0, np.abs(v0 - v1), color="tab:red")
        ax_bot.set_ylabel("absolute difference")
        ax_bot.set_xlabel("t")
    else:
        ax_top.set_xlabel("t")


def render(job: PlotJob) -> Path:
    """Render one job and return the path of the written image."""
    job.output.parent.mkdir(parents=True, exist_ok=True)
    if job.kind == "spectrum":
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    elif job.kind == "energy":
        fig = plt.figure(figsize=(6.4, 4.8))
    else:
        fig, ax = plt.subplots(figsize=(6.0, 4.2))
    try:
        if job.kind in ("contour", "diffmap"):
            _render_field(job, ax, absolute=(job.kind == "diffmap"))
        elif job.kind == "series":
            _render_series(job, ax)
        elif job.kind == "pmf":
            _render_pmf(job, ax)
        elif job.kind == "spectrum":
            _render_spectrum(job, axes)
        elif job.kind == "energy":
            _render_energy(job, fig)
        fig.suptitle(job.title or job.output.stem)
        fig.savefig(job.output, dpi=_DPI)
    finally:
        plt.close(fig)
    return job.output


def discover_jobs(artifact_dir: Path, out_dir: Path) -> list[PlotJob]:
    """Map the known CSV layout of a pipeline output directory to jobs."""
    artifact_dir, out_dir = Path(artifact_dir), Path(out_dir)
    jobs: list[PlotJob] = []

    def add(kind, inputs, stem):
        jobs.append(PlotJob.make(kind, inputs, out_dir / f"{stem}.png"))

    sv = artifact_dir / "bases" / "singular_values.csv"
    if sv.exists():
        add("spectrum", [sv], "singular_values")
    for p in sorted(artifact_dir.glob("bases/*_coeffs.csv")):
        add("series", [p], p.stem)
    for p in sorted(artifact_dir.glob("models/*_loss.csv")):
        add("series", [p], p.stem)
    pdir = artifact_dir / "predict"
    for p in sorted(pdir.glob("*_avg.csv")):
        add("contour", [p], p.stem)
    for p in sorted(pdir.glob("*_avg_absdiff.csv")):
        add("diffmap", [p], p.stem)
    for p in sorted(pdir.glob("*_pmf.csv")):
        add("pmf", [p], p.stem)
    for p in sorted(pdir.glob("*_coeffs.csv")):
        add("series", [p], f"predict_{p.stem}")
    for p in sorted(list(pdir.glob("*_enstrophy.csv")) +
                    list(pdir.glob("*_kinetic_energy.csv"))):
        add("energy", [p], p.stem)
    return jobs


def render_all(artifact_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render every recognized CSV under ``artifact_dir`` into ``out_dir``."""
    jobs = discover_jobs(Path(artifact_dir), Path(out_dir))
    if not jobs:
        raise PlotError(f"no recognized CSV files under {artifact_dir}")
    return [render(job) for job in jobs]
