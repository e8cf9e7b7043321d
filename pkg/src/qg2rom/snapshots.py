"""Snapshot collection, time averaging, fluctuations, and bit-exact persistence.

On-disk container: 8-byte magic "QGSNAP01", four little-endian u64 values
{N_h, N_t, N_d, param_dim}, the sample times as binary64, the parameter
vectors as binary64 (N_d * param_dim values, row by row), then the matrix
column-major so each snapshot is contiguous. A JSON sidecar with the same
basename plus ".meta.json" duplicates the dimensions for inspection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .grid import Field, Grid, GridSpec, build_grid

MAGIC = b"QGSNAP01"
FIELD_IDS = ("q1", "q2", "psi1", "psi2")


@dataclass
class SnapshotSet:
    """Raw field snapshots, one column per (parameter, time) sample.

    params has shape (n_blocks, param_dim); the time-only case is the
    single empty-vector block (1, 0). Columns are grouped by parameter
    block, times increasing within each block, so column count equals
    n_blocks * len(times).
    """

    field_id: str
    grid_spec: GridSpec
    times: np.ndarray
    params: np.ndarray
    matrix: np.ndarray
    extra_meta: dict | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.ndim != 2:
            raise DomainError("params must be a 2-D (n_blocks, param_dim) array")
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.field_id not in FIELD_IDS:
            raise DomainError(f"unknown field id {self.field_id!r}")
        if self.matrix.shape != (self.grid_spec.nx * self.grid_spec.ny, self.n_columns):
            raise DomainError(f"matrix shape {self.matrix.shape} inconsistent with "
                              f"{self.n_blocks} blocks of {len(self.times)} times")
        if not np.all(np.isfinite(self.matrix)):
            raise DomainError("snapshot matrix contains non-finite entries")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise DomainError("sample times must be strictly increasing")

    @property
    def n_blocks(self) -> int:
        return max(1, self.params.shape[0])

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_columns(self) -> int:
        return self.n_blocks * self.n_times

    def block(self, k: int) -> np.ndarray:
        """The columns of parameter block k."""
        if not 0 <= k < self.n_blocks:
            raise DomainError(f"parameter index {k} out of range [0, {self.n_blocks})")
        return self.matrix[:, k * self.n_times:(k + 1) * self.n_times]

    def grid(self) -> Grid:
        return build_grid(self.grid_spec)


@dataclass
class TimeAverage:
    field_id: str
    param: np.ndarray
    mean: Field


class SnapshotCollector:
    """run_fom sink accumulating one SnapshotSet per field."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.times: list[float] = []
        self.columns: dict[str, list[np.ndarray]] = {f: [] for f in FIELD_IDS}

    def __call__(self, t, state):
        self.times.append(t)
        for fid, field in state.fields().items():
            self.columns[fid].append(field.values.copy())

    def to_sets(self, param=()) -> dict[str, SnapshotSet]:
        param = np.atleast_1d(np.asarray(param, dtype=float))
        params = param.reshape(1, -1)
        out = {}
        for fid in FIELD_IDS:
            cols = self.columns[fid]
            if not cols:
                raise DomainError("no snapshots collected")
            out[fid] = SnapshotSet(fid, self.grid.spec, np.array(self.times),
                                   params, np.column_stack(cols))
        return out


def concat_sets(sets: list[SnapshotSet]) -> SnapshotSet:
    """Stack single-block sets over a parameter sampling, one block per set."""
    if not sets:
        raise DomainError("nothing to concatenate")
    first = sets[0]
    for s in sets[1:]:
        if s.field_id != first.field_id or s.grid_spec != first.grid_spec:
            raise DomainError("snapshot sets disagree on field or grid")
        if s.n_blocks != 1 or len(s.times) != len(first.times):
            raise DomainError("concat needs single-block sets with equal time sampling")
    params = np.vstack([s.params for s in sets])
    matrix = np.hstack([s.matrix for s in sets])
    return SnapshotSet(first.field_id, first.grid_spec, first.times, params, matrix)


def time_average(snap: SnapshotSet, param_index: int = 0) -> TimeAverage:
    """Arithmetic mean over the time columns of one parameter block."""
    if snap.n_times == 0:
        raise DomainError("empty snapshot set")
    block = snap.block(param_index)
    mean = Field(snap.grid(), block.mean(axis=1))
    param = snap.params[param_index] if snap.params.shape[0] else np.empty(0)
    return TimeAverage(snap.field_id, param, mean)


def fluctuations(snap: SnapshotSet, means) -> np.ndarray:
    """Mean-subtracted snapshot matrix, per parameter block.

    means is one TimeAverage (time-only) or a list with one entry per
    block, each computed from the corresponding columns.
    """
    if isinstance(means, TimeAverage):
        means = [means]
    if len(means) != snap.n_blocks:
        raise DomainError(f"need {snap.n_blocks} means, got {len(means)}")
    out = np.empty_like(snap.matrix)
    nt = snap.n_times
    for k, m in enumerate(means):
        if m.mean.grid.spec != snap.grid_spec:
            raise DomainError("mean computed on a different grid")
        out[:, k * nt:(k + 1) * nt] = snap.block(k) - m.mean.values[:, None]
    return out


def fluctuation_matrix(snap: SnapshotSet):
    """Per-block means and the centered matrix in one call."""
    means = [time_average(snap, k) for k in range(snap.n_blocks)]
    return means, fluctuations(snap, means)


def _meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def save(snap: SnapshotSet, path) -> None:
    path = Path(path)
    nh, _ = snap.matrix.shape
    nd, pdim = snap.n_blocks, snap.params.shape[1]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4Q", nh, snap.n_times, nd, pdim))
        fh.write(snap.times.astype("<f8").tobytes())
        fh.write(snap.params.astype("<f8").tobytes())
        fh.write(np.asfortranarray(snap.matrix).astype("<f8").tobytes(order="F"))
    meta = {
        "field_id": snap.field_id,
        "N_h": nh, "N_t": snap.n_times, "N_d": nd, "param_dim": pdim,
        "grid": snap.grid_spec.to_dict(),
    }
    if snap.extra_meta:
        meta.update(snap.extra_meta)
    _meta_path(path).write_text(json.dumps(meta, indent=2))


def _read_exact(fh, nbytes, what):
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated file while reading {what}", offset=fh.tell())
    return buf


def load(path) -> SnapshotSet:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", offset=0)
        nh, nt, nd, pdim = struct.unpack("<4Q", _read_exact(fh, 32, "header"))
        times = np.frombuffer(_read_exact(fh, 8 * nt, "times"), dtype="<f8")
        params = np.frombuffer(_read_exact(fh, 8 * nd * pdim, "parameter vectors"),
                               dtype="<f8").reshape(nd, pdim)
        matrix = np.frombuffer(_read_exact(fh, 8 * nh * nd * nt, "matrix payload"),
                               dtype="<f8").reshape((nh, nd * nt), order="F")
    try:
        meta = json.loads(_meta_path(path).read_text())
    except FileNotFoundError as err:
        raise FormatError(f"missing sidecar {_meta_path(path)}") from err
    spec = GridSpec.from_dict(meta["grid"])
    if spec.nx * spec.ny != nh:
        raise FormatError(f"sidecar grid has {spec.nx * spec.ny} cells, payload has {nh} rows")
    extra = {k: v for k, v in meta.items()
             if k not in ("field_id", "N_h", "N_t", "N_d", "param_dim", "grid")}
    return SnapshotSet(meta["field_id"], spec, times.copy(), params.copy(),
                       matrix.copy(), extra_meta=extra or None)


def export_column_csv(snap: SnapshotSet, column: int, path) -> None:
    """One snapshot (or any single column) as x,y,value rows."""
    _export_field_csv(snap.grid(), snap.matrix[:, column], path)


def export_field_csv(field: Field, path) -> None:
    _export_field_csv(field.grid, field.values, path)


def _export_field_csv(grid: Grid, values, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        X, Y = grid.X.ravel(), grid.Y.ravel()
        for x, y, v in zip(X, Y, values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
