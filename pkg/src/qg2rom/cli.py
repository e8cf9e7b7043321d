"""Command-line pipeline driver.

Subcommands cover the individual stages (fom-run, pod-build, lstm-train,
rom-predict, report) plus a pipeline command chaining all of them. All
configuration comes from a schema-validated JSON file; outputs are the
binary containers of the snapshots/pod/lstm modules plus CSV tables.

Exit codes: 0 success, 1 runtime/numerical failure, 2 configuration or
schema failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import lstm as lstm_mod
from . import metrics
from . import pod as pod_mod
from . import rom
from . import snapshots as snaps
from .errors import ConfigurationError, Qg2RomError, UsageError
from .fom import PhysParams, TimeConfig
from .grid import Field, GridSpec
from .snapshots import FIELD_IDS, TimeAverage

DEFAULT_PHYSICS = {"Ro": 0.001, "Re": 450.0, "Fr": 0.1, "sigma": 0.005, "delta": 0.5}

_NUM = {"type": "number"}
_POD_CHOICE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"rank": {"type": "integer", "minimum": 1},
                   "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
}
_LSTM_SECTION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "layers": {"type": "integer", "minimum": 1},
        "cells": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "validation_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "lookback": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "time", "output_dir"],
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nx", "ny"],
            "properties": {"nx": {"type": "integer"}, "ny": {"type": "integer"},
                           "x0": _NUM, "xf": _NUM, "y_lo": _NUM, "y_hi": _NUM},
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _NUM for k in DEFAULT_PHYSICS},
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt", "t0", "t_end"],
            "properties": {"dt": _NUM, "t0": _NUM, "t_end": _NUM},
        },
        "snapshots": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"stride": {"type": "integer", "minimum": 1}},
        },
        "pod": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rank": {"type": "integer", "minimum": 1},
                           "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                           **{f: _POD_CHOICE for f in FIELD_IDS}},
        },
        "lstm_q": _LSTM_SECTION,
        "lstm_psi": _LSTM_SECTION,
        "parametric": {
            "type": "object",
            "additionalProperties": False,
            "required": ["names", "samples"],
            "properties": {"names": {"type": "array", "items": {"type": "string"}},
                           "samples": {"type": "array",
                                       "items": {"type": "array", "items": _NUM}}},
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mu": {"type": "array", "items": _NUM},
                           "t_start": _NUM, "t_end": _NUM, "increment": _NUM,
                           "steps": {"type": "integer", "minimum": 1}},
        },
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
    },
}


class RunConfig:
    """Validated configuration document plus the derived solver objects."""

    def __init__(self, raw: dict, seed_override=None, output_override=None):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            raise ConfigurationError(f"invalid configuration: {err.message}") from err
        self.raw = raw
        self.seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
        out = output_override or os.environ.get("QG2ROM_OUTPUT") or raw["output_dir"]
        self.output_dir = Path(out)
        g = {"x0": 0.0, "xf": 1.0, "y_lo": -1.0, "y_hi": 1.0, **raw["grid"]}
        self.grid_spec = GridSpec.from_dict(g)
        self.grid_spec.validate()
        t = raw["time"]
        stride = raw.get("snapshots", {}).get("stride", 1)
        self.time_cfg = TimeConfig(dt=float(t["dt"]), t0=float(t["t0"]),
                                   t_end=float(t["t_end"]), snapshot_stride=stride)
        self.time_cfg.validate()
        self.physics = PhysParams(**{**DEFAULT_PHYSICS, **raw.get("physics", {})})
        self.physics.validate()
        self.param_names, self.samples = self._build_samples(raw)
        self.pod_spec = self._build_pod_spec(raw.get("pod", {}))
        self.lstm_q = self._build_lstm(raw.get("lstm_q", {}),
                                       lstm_mod.LstmConfig.q_defaults(), self.seed)
        self.lstm_psi = self._build_lstm(raw.get("lstm_psi", {}),
                                         lstm_mod.LstmConfig.psi_defaults(), self.seed + 1)
        self.predict = raw.get("predict", {})

    def _build_samples(self, raw):
        par = raw.get("parametric")
        if par is None:
            return [], [((), self.physics)]
        names = par["names"]
        base = self.physics.to_dict()
        unknown = [n for n in names if n not in base]
        if unknown:
            raise ConfigurationError(f"parametric names must be physics fields, got {unknown}")
        samples = []
        for vec in par["samples"]:
            if len(vec) != len(names):
                raise ConfigurationError(f"sample {vec} does not match names {names}")
            p = PhysParams(**{**base, **dict(zip(names, map(float, vec)))})
            p.validate()
            samples.append((tuple(map(float, vec)), p))
        if not samples:
            raise ConfigurationError("parametric section needs at least one sample")
        return list(names), samples

    def _build_pod_spec(self, section):
        default = {k: section[k] for k in ("rank", "threshold") if k in section}
        if not default:
            default = {"threshold": 0.9999}
        return {f: dict(section.get(f, default)) for f in FIELD_IDS}

    @staticmethod
    def _build_lstm(section, base, seed):
        fields = dict(base.__dict__)
        fields["seed"] = seed
        fields.update(section)
        cfg = lstm_mod.LstmConfig(**fields)
        cfg.validate()
        return cfg


def load_config(path, seed_override=None, output_override=None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"configuration is not valid JSON: {err}") from err
    return RunConfig(raw, seed_override, output_override)


# ---------------------------------------------------------------- stage commands


def cmd_fom_run(cfg: RunConfig) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for mu, params in cfg.samples:
        sets = rom.collect_snapshots(cfg.grid_spec, params, cfg.time_cfg, mu=mu,
                                     workdir=cfg.output_dir)
        written.append({"mu": list(mu),
                        "snapshots": sets["q1"].n_columns,
                        "times": [float(sets["q1"].times[0]), float(sets["q1"].times[-1])]})
    summary = {"samples": written, "grid": cfg.grid_spec.to_dict()}
    (cfg.output_dir / "fom_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"wrote snapshots for {len(written)} sample(s) under {cfg.output_dir / 'snapshots'}")
    return 0


def _build_bases(cfg: RunConfig):
    """Snapshot collection (cached) plus POD for every field."""
    per_sample = [rom.collect_snapshots(cfg.grid_spec, p, cfg.time_cfg, mu=mu,
                                        workdir=cfg.output_dir)
                  for mu, p in cfg.samples]
    bases, means, coeffs = {}, {}, {}
    times = per_sample[0]["q1"].times
    for fid in FIELD_IDS:
        stacked = snaps.concat_sets([s[fid] for s in per_sample])
        block_means, fluct = snaps.fluctuation_matrix(stacked)
        for k, m in enumerate(block_means):
            means[(fid, k)] = m
        spec = cfg.pod_spec[fid]
        bases[fid] = pod_mod.build_basis(fid, fluct, block_means[0],
                                         threshold=spec.get("threshold"),
                                         rank=spec.get("rank"))
        coeffs[fid] = pod_mod.modal_coefficients(bases[fid], fluct,
                                                 times=stacked.times, params=stacked.params)
    return bases, means, coeffs, times


def cmd_pod_build(cfg: RunConfig) -> int:
    bases, means, coeffs, _ = _build_bases(cfg)
    bdir = cfg.output_dir / "bases"
    mdir = cfg.output_dir / "means"
    bdir.mkdir(parents=True, exist_ok=True)
    mdir.mkdir(parents=True, exist_ok=True)
    for fid in FIELD_IDS:
        pod_mod.save_basis(bases[fid], bdir / f"{fid}.qgsnap")
        pod_mod.export_coefficients_csv(coeffs[fid], bdir / f"{fid}_coeffs.csv")
    for (fid, k), mean in means.items():
        ms = snaps.SnapshotSet(fid, cfg.grid_spec, np.array([0.0]),
                               mean.param.reshape(1, -1) if mean.param.size else np.empty((1, 0)),
                               mean.mean.values[:, None])
        snaps.save(ms, mdir / f"{fid}_block{k}.qgsnap")
    with open(bdir / "singular_values.csv", "w") as fh:
        fh.write("field,index,sigma\n")
        for fid in FIELD_IDS:
            for i, s in enumerate(bases[fid].singular_values):
                fh.write(f"{fid},{i + 1},{s:.17g}\n")
    retained = {f: bases[f].retained for f in FIELD_IDS}
    print(f"built bases {retained} under {bdir}")
    return 0


def _provenance(cfg: RunConfig) -> dict:
    return {
        "grid": cfg.grid_spec.to_dict(),
        "time": {"dt": cfg.time_cfg.dt, "t0": cfg.time_cfg.t0,
                 "t_end": cfg.time_cfg.t_end, "stride": cfg.time_cfg.snapshot_stride},
        "samples": [{"mu": list(mu), "params": p.to_dict()} for mu, p in cfg.samples],
        "lstm": {"q": cfg.lstm_q.__dict__, "psi": cfg.lstm_psi.__dict__},
        "pod": cfg.pod_spec,
    }


def cmd_lstm_train(cfg: RunConfig) -> int:
    bdir = cfg.output_dir / "bases"
    mdir = cfg.output_dir / "means"
    bases, means, coeffs = {}, {}, {}
    n_blocks = max(1, len(cfg.samples))
    for fid in FIELD_IDS:
        coeff_path = bdir / f"{fid}_coeffs.csv"
        if not coeff_path.exists():
            raise FileNotFoundError(f"missing coefficient file {coeff_path}; "
                                    f"run pod-build first")
        bases[fid] = pod_mod.load_basis(bdir / f"{fid}.qgsnap")
        coeffs[fid] = pod_mod.load_coefficients_csv(coeff_path, fid)
        for k in range(n_blocks):
            ms = snaps.load(mdir / f"{fid}_block{k}.qgsnap")
            param = ms.params[0] if ms.params.size else np.empty(0)
            means[(fid, k)] = TimeAverage(fid, param, Field(ms.grid(), ms.matrix[:, 0]))
    models = {}
    for fid in FIELD_IDS:
        lcfg = cfg.lstm_q if fid in rom.Q_FIELDS else cfg.lstm_psi
        windows = lstm_mod.build_windows(coeffs[fid], lcfg.lookback)
        models[fid] = lstm_mod.train(windows, lcfg)
    mus = np.array([mu for mu, _ in cfg.samples], dtype=float).reshape(len(cfg.samples), -1)
    sampling = rom.ParametricSampling(cfg.param_names, mus)
    art = rom.RomArtifacts(cfg.grid_spec, sampling, bases, models, means, coeffs,
                           snapshot_times=coeffs["q1"].times,
                           provenance=_provenance(cfg))
    rom.save_artifacts(art, cfg.output_dir)
    final = {f: f"{models[f].history[-1][1]:.3e}" for f in FIELD_IDS}
    print(f"trained 4 models (final train MSE {final}) under {cfg.output_dir / 'models'}")
    return 0


def _predict_window(cfg: RunConfig, art: rom.RomArtifacts):
    times = art.snapshot_times
    increment = cfg.predict.get("increment",
                                float(times[1] - times[0]) if len(times) > 1 else cfg.time_cfg.dt)
    t_start = cfg.predict.get("t_start", float(times[-1]))
    if "t_end" in cfg.predict:
        t_end = cfg.predict["t_end"]
    else:
        t_end = t_start + cfg.predict.get("steps", 10) * increment
    mu = tuple(cfg.predict.get("mu", art.sampling.samples[0]))
    return mu, float(t_start), float(t_end), float(increment)


def _warn_if_outside_hull(mu, sampling):
    if sampling.samples.shape[1] == 0:
        return
    lo = sampling.samples.min(axis=0)
    hi = sampling.samples.max(axis=0)
    m = np.atleast_1d(np.asarray(mu, dtype=float))
    if np.any(m < lo) or np.any(m > hi):
        warnings.warn(f"parameter {m.tolist()} lies outside the sampled range "
                      f"[{lo.tolist()}, {hi.tolist()}]; proceeding with the nearest sample")


def cmd_rom_predict(cfg: RunConfig) -> int:
    art = rom.load_artifacts(cfg.output_dir)
    mu, t_start, t_end, increment = _predict_window(cfg, art)
    _warn_if_outside_hull(mu, art.sampling)
    res = rom.online(art, mu, t_start, t_end, increment)
    pdir = cfg.output_dir / "predict"
    pdir.mkdir(parents=True, exist_ok=True)
    n_steps = res.coeffs["q1"].matrix.shape[1]
    for fid in FIELD_IDS:
        snaps.export_field_csv(res.time_avgs[fid], pdir / f"{fid}_avg.csv")
        pod_mod.export_coefficients_csv(res.coeffs[fid], pdir / f"{fid}_coeffs.csv")
        diff = Field(res.time_avgs[fid].grid,
                     np.abs(res.time_avgs[fid].values - res.means[fid].mean.values))
        snaps.export_field_csv(diff, pdir / f"{fid}_avg_absdiff.csv")
        edges, masses = metrics.pmf(res.reconstruct_step(art, fid, n_steps - 1).values)
        metrics.export_pmf_csv(edges, masses, pdir / f"{fid}_pmf.csv")
    for fid, fn, name in (("q1", metrics.enstrophy, "enstrophy"),
                          ("q2", metrics.enstrophy, "enstrophy"),
                          ("psi1", metrics.kinetic_energy, "kinetic_energy"),
                          ("psi2", metrics.kinetic_energy, "kinetic_energy")):
        values = [fn(res.reconstruct_step(art, fid, k)) for k in range(n_steps)]
        metrics.export_series_csv(metrics.ScalarSeries(res.times, np.asarray(values)),
                                  pdir / f"{fid}_{name}.csv", value_name=name)
    print(f"predicted {n_steps} steps at mu={list(mu)} into {pdir}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    manifest_path = cfg.output_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no artifacts in {cfg.output_dir}; run the pipeline first")
    art = rom.load_artifacts(cfg.output_dir)
    rows = []
    for fid in FIELD_IDS:
        basis = art.bases[fid]
        model = art.models[fid]
        rows.append({
            "field": fid,
            "modes_retained": basis.retained,
            "energy_fraction": basis.energy_fraction,
            "lookback": model.config.lookback,
            "final_train_mse": model.history[-1][1] if model.history else float("nan"),
            "final_val_mse": model.history[-1][2] if model.history else float("nan"),
        })
    keys = list(rows[0])
    with open(cfg.output_dir / "report.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(f"{r[k]:.17g}" if isinstance(r[k], float) else str(r[k])
                              for k in keys) + "\n")
    lines = [" | ".join(keys)]
    for r in rows:
        lines.append(" | ".join(f"{r[k]:.4g}" if isinstance(r[k], float) else str(r[k])
                                for k in keys))
    text = "\n".join(lines) + "\n"
    (cfg.output_dir / "report.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_pipeline(cfg: RunConfig) -> int:
    cmd_fom_run(cfg)
    cmd_pod_build(cfg)
    cmd_lstm_train(cfg)
    cmd_rom_predict(cfg)
    return cmd_report(cfg)


COMMANDS = {
    "fom-run": cmd_fom_run,
    "pod-build": cmd_pod_build,
    "lstm-train": cmd_lstm_train,
    "rom-predict": cmd_rom_predict,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qg2rom",
        description="Reduced-order modeling pipeline for the two-layer "
                    "quasi-geostrophic equations")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON configuration")
    parser.add_argument("--jobs", type=int, default=1,
                        help="upper bound on worker processes")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configuration seed")
    parser.add_argument("--output", default=None,
                        help="override output_dir (also via QG2ROM_OUTPUT)")
    args = parser.parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          output_override=args.output)
        return COMMANDS[args.command](cfg)
    except (ConfigurationError, UsageError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (Qg2RomError, OSError) as err:
        print(f"error [{args.command}]: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
