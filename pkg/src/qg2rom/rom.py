"""Offline/online orchestration of the POD-LSTM pipeline.

Offline: one FOM run per parameter sample (cached by configuration
digest), per-block mean subtraction, one POD basis and one LSTM model per
field. Online: pick the nearest training sample, seed each model with that
sample's coefficient history, predict recursively, reconstruct.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import lstm as lstm_mod
from . import pod as pod_mod
from . import snapshots as snaps
from .errors import DomainError, UsageError
from .fom import PhysParams, TimeConfig, run_fom
from .grid import Field, GridSpec, build_grid
from .pod import CoefficientSeries, PodBasis
from .snapshots import FIELD_IDS, SnapshotCollector, SnapshotSet, TimeAverage

Q_FIELDS = ("q1", "q2")
PSI_FIELDS = ("psi1", "psi2")


@dataclass
class ParametricSampling:
    names: list
    samples: np.ndarray      # (N_d, pdim)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if len({tuple(s) for s in self.samples}) != len(self.samples):
            raise DomainError("parameter samples must be distinct")


def nearest_sample(mu, sampling: ParametricSampling):
    """Index of the training sample closest to mu in the Euclidean norm.

    Ties break toward the lexicographically smaller sample.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    S = sampling.samples
    if S.shape[0] == 0:
        raise DomainError("empty sampling")
    if mu.shape != (S.shape[1],):
        raise DomainError(f"parameter dimension {mu.shape} does not match samples {S.shape}")
    d = np.linalg.norm(S - mu, axis=1)
    # distances equal up to rounding count as ties
    best = np.flatnonzero(np.isclose(d, d.min(), rtol=1e-9, atol=1e-12))
    if len(best) > 1:
        order = sorted(best, key=lambda k: tuple(S[k]))
        return order[0]
    return int(best[0])


@dataclass
class RomArtifacts:
    grid_spec: GridSpec
    sampling: ParametricSampling
    bases: dict                     # field -> PodBasis
    models: dict                    # field -> LstmModel
    means: dict                     # (field, block) -> TimeAverage
    coeffs: dict                    # field -> CoefficientSeries (training history)
    snapshot_times: np.ndarray
    provenance: dict = dc_field(default_factory=dict)


def _config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _file_digest(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def collect_snapshots(grid_spec: GridSpec, params: PhysParams, time_cfg: TimeConfig,
                      mu=(), workdir=None, progress=None) -> dict:
    """Run (or load from cache) one FOM simulation; returns field -> SnapshotSet."""
    key = _config_digest({"grid": grid_spec.to_dict(), "params": params.to_dict(),
                          "time": [time_cfg.dt, time_cfg.t0, time_cfg.t_end,
                                   time_cfg.snapshot_stride]})
    if workdir is not None:
        snapdir = Path(workdir) / "snapshots"
        snapdir.mkdir(parents=True, exist_ok=True)
        paths = {f: snapdir / f"{f}_{key}.qgsnap" for f in FIELD_IDS}
        if all(p.exists() for p in paths.values()):
            return {f: snaps.load(p) for f, p in paths.items()}
    grid = build_grid(grid_spec)
    collector = SnapshotCollector(grid)
    run_fom(grid, params, time_cfg, sink=collector, progress=progress)
    sets = collector.to_sets(param=mu)
    for s in sets.values():
        s.extra_meta = {"phys_params": params.to_dict()}
    if workdir is not None:
        for f, s in sets.items():
            snaps.save(s, paths[f])
    return sets


def offline(grid_spec: GridSpec, samples, time_cfg: TimeConfig, pod_spec: dict,
            lstm_q: lstm_mod.LstmConfig, lstm_psi: lstm_mod.LstmConfig,
            param_names=(), workdir=None, progress=None) -> RomArtifacts:
    """Full offline phase.

    samples is a list of (mu_vector, PhysParams) pairs; the time-only case
    is a single sample with an empty mu. pod_spec maps each field to
    {"rank": r} or {"threshold": delta}.
    """
    if not samples:
        raise DomainError("need at least one parameter sample")
    mus = [np.atleast_1d(np.asarray(mu, dtype=float)) for mu, _ in samples]
    sampling = ParametricSampling(list(param_names), np.vstack([m.reshape(1, -1) for m in mus]))
    per_sample = []
    for mu, params in samples:
        per_sample.append(collect_snapshots(grid_spec, params, time_cfg, mu=mu,
                                            workdir=workdir, progress=progress))
    bases, models, means, coeffs = {}, {}, {}, {}
    times = per_sample[0]["q1"].times
    for fid in FIELD_IDS:
        stacked = snaps.concat_sets([s[fid] for s in per_sample])
        block_means, fluct = snaps.fluctuation_matrix(stacked)
        for k, m in enumerate(block_means):
            means[(fid, k)] = m
        spec = pod_spec[fid]
        basis = pod_mod.build_basis(fid, fluct, block_means[0],
                                    threshold=spec.get("threshold"), rank=spec.get("rank"))
        bases[fid] = basis
        series = pod_mod.modal_coefficients(basis, fluct, times=stacked.times,
                                            params=stacked.params)
        coeffs[fid] = series
        cfg = lstm_q if fid in Q_FIELDS else lstm_psi
        windows = lstm_mod.build_windows(series, cfg.lookback)
        models[fid] = lstm_mod.train(windows, cfg)
    provenance = {
        "grid": grid_spec.to_dict(),
        "time": {"dt": time_cfg.dt, "t0": time_cfg.t0, "t_end": time_cfg.t_end,
                 "stride": time_cfg.snapshot_stride},
        "samples": [{"mu": list(map(float, mu)), "params": p.to_dict()} for mu, p in samples],
        "lstm": {"q": lstm_q.__dict__, "psi": lstm_psi.__dict__},
        "pod": pod_spec,
    }
    art = RomArtifacts(grid_spec, sampling, bases, models, means, coeffs,
                       snapshot_times=times, provenance=provenance)
    if workdir is not None:
        save_artifacts(art, workdir)
    return art


def save_artifacts(art: RomArtifacts, workdir) -> None:
    """Directory layout: snapshots/, bases/, models/, means/, manifest.json."""
    workdir = Path(workdir)
    for sub in ("bases", "models", "means"):
        (workdir / sub).mkdir(parents=True, exist_ok=True)
    digests = {}
    for fid, basis in art.bases.items():
        p = workdir / "bases" / f"{fid}.qgsnap"
        pod_mod.save_basis(basis, p)
        digests[f"basis/{fid}"] = _file_digest(p)
    for fid, model in art.models.items():
        p = workdir / "models" / f"{fid}.qglstm"
        lstm_mod.save_model(model, p)
        lstm_mod.export_history_csv(model, workdir / "models" / f"{fid}_loss.csv")
        digests[f"model/{fid}"] = _file_digest(p)
    for (fid, k), mean in art.means.items():
        p = workdir / "means" / f"{fid}_block{k}.qgsnap"
        ms = SnapshotSet(fid, art.grid_spec, np.array([0.0]),
                         mean.param.reshape(1, -1) if mean.param.size else np.empty((1, 0)),
                         mean.mean.values[:, None])
        snaps.save(ms, p)
    for fid, series in art.coeffs.items():
        pod_mod.export_coefficients_csv(series, workdir / "bases" / f"{fid}_coeffs.csv")
    manifest = {"provenance": art.provenance,
                "sampling": {"names": art.sampling.names,
                             "samples": art.sampling.samples.tolist()},
                "snapshot_times": art.snapshot_times.tolist(),
                "digests": digests}
    (workdir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_artifacts(workdir) -> RomArtifacts:
    workdir = Path(workdir)
    manifest = json.loads((workdir / "manifest.json").read_text())
    grid_spec = GridSpec.from_dict(manifest["provenance"]["grid"])
    sampling = ParametricSampling(manifest["sampling"]["names"],
                                  np.asarray(manifest["sampling"]["samples"]))
    bases, models, means, coeffs = {}, {}, {}, {}
    for fid in FIELD_IDS:
        bases[fid] = pod_mod.load_basis(workdir / "bases" / f"{fid}.qgsnap")
        models[fid] = lstm_mod.load_model(workdir / "models" / f"{fid}.qglstm")
        coeffs[fid] = pod_mod.load_coefficients_csv(workdir / "bases" / f"{fid}_coeffs.csv", fid)
        for k in range(sampling.samples.shape[0]):
            ms = snaps.load(workdir / "means" / f"{fid}_block{k}.qgsnap")
            param = ms.params[0] if ms.params.size else np.empty(0)
            means[(fid, k)] = TimeAverage(fid, param, Field(ms.grid(), ms.matrix[:, 0]))
    return RomArtifacts(grid_spec, sampling, bases, models, means, coeffs,
                        snapshot_times=np.asarray(manifest["snapshot_times"]),
                        provenance=manifest["provenance"])


@dataclass
class OnlineResult:
    mu: np.ndarray
    mu_index: int
    times: np.ndarray
    coeffs: dict                  # field -> CoefficientSeries over the prediction window
    time_avgs: dict               # field -> Field (predicted time-averaged field)
    means: dict                   # field -> TimeAverage used (mu_c block)

    def reconstruct_step(self, artifacts: RomArtifacts, fid: str, k: int) -> Field:
        return pod_mod.reconstruct(self.means[fid], artifacts.bases[fid],
                                   self.coeffs[fid].matrix[:, k])


def _seed_window(artifacts: RomArtifacts, fid: str, block: int, mu: np.ndarray,
                 t_start: float, lookback: int) -> np.ndarray:
    series = artifacts.coeffs[fid]
    times = series.times
    usable = np.flatnonzero(times <= t_start + 1e-12)
    if len(usable) < lookback:
        raise UsageError(f"not enough history before t={t_start} to seed {fid}")
    idx = usable[-lookback:][::-1]     # newest first
    block_mat = series.block(block)
    rows = [np.concatenate([mu, [times[p]], block_mat[:, p]]) for p in idx]
    return np.vstack(rows)


def online(artifacts: RomArtifacts, mu, t_start: float, t_end: float,
           increment: float, coefficients_override: dict | None = None) -> OnlineResult:
    """Predict all four fields from t_start to t_end at the snapshot spacing.

    The nearest training sample supplies the zero-th order mean fields and
    the coefficient history that seeds each model's lookback window.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    idx = nearest_sample(mu, artifacts.sampling)
    n_steps = int(round((t_end - t_start) / increment))
    if n_steps <= 0:
        raise DomainError(f"empty prediction window [{t_start}, {t_end}]")
    coeffs, time_avgs, means = {}, {}, {}
    times = None
    for fid in FIELD_IDS:
        if fid not in artifacts.models or fid not in artifacts.bases:
            raise UsageError(f"missing artifacts for field {fid}")
        mean = artifacts.means[(fid, idx)]
        means[fid] = mean
        if coefficients_override is not None and fid in coefficients_override:
            series = coefficients_override[fid]
        else:
            model = artifacts.models[fid]
            seed = _seed_window(artifacts, fid, idx, mu, t_start, model.config.lookback)
            series = lstm_mod.predict_recursive(model, seed, n_steps, increment, mu)
        coeffs[fid] = series
        times = series.times
        avg_alpha = series.matrix.mean(axis=1)
        time_avgs[fid] = pod_mod.reconstruct(mean, artifacts.bases[fid], avg_alpha)
    return OnlineResult(mu=mu, mu_index=idx, times=times, coeffs=coeffs,
                        time_avgs=time_avgs, means=means)


def poisson_stream_modes(artifacts: RomArtifacts) -> dict:
    """Stream-function modes from the vorticity bases via Poisson solves."""
    grid = build_grid(artifacts.grid_spec)
    return {layer: pod_mod.poisson_modes(artifacts.bases[q_fid], grid)
            for layer, q_fid in ((1, "q1"), (2, "q2"))}


def vorticity_route_online(artifacts: RomArtifacts, stream_modes: dict, mu,
                           t_start: float, t_end: float,
                           increment: float) -> dict:
    """Stream functions rebuilt from the vorticity models' coefficients.

    Returns field -> predicted time-averaged Field for psi1/psi2, using the
    Poisson-derived modes and the q-model coefficient predictions.
    """
    if not stream_modes:
        raise UsageError("Poisson stream modes are required for the alternative route")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    idx = nearest_sample(mu, artifacts.sampling)
    result = online(artifacts, mu, t_start, t_end, increment)
    out = {}
    for layer, q_fid, psi_fid in ((1, "q1", "psi1"), (2, "q2", "psi2")):
        xi = stream_modes[layer]
        alpha_avg = result.coeffs[q_fid].matrix.mean(axis=1)
        mean = artifacts.means[(psi_fid, idx)]
        out[psi_fid] = Field(mean.mean.grid, mean.mean.values + xi @ alpha_avg)
    return out
