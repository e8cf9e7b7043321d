"""Quantitative diagnostics: field errors, enstrophy, kinetic energy, PMFs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import Field, face_gradients, integrate


@dataclass
class FieldErrorReport:
    field_id: str
    rmse: float
    rel_l2: float


@dataclass
class ScalarSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise DomainError("times and values must have equal lengths")


def _check_pair(a: Field, b: Field):
    if a.grid.spec != b.grid.spec:
        raise DomainError("fields live on different grids")


def rmse(a: Field, b: Field) -> float:
    """Root mean square of the pointwise difference, unweighted over cells."""
    _check_pair(a, b)
    d = a.values - b.values
    return float(np.sqrt(np.mean(d * d)))


def rel_l2(a: Field, b: Field) -> float:
    """Relative L2 error ||a - b|| / ||a|| with area-weighted discrete norms."""
    _check_pair(a, b)
    ref = integrate(Field(a.grid, a.values**2))
    if ref == 0.0:
        raise DomainError("zero reference norm in relative L2 error")
    diff = integrate(Field(a.grid, (a.values - b.values)**2))
    return float(np.sqrt(diff / ref))


def enstrophy(q: Field) -> float:
    """Half the domain integral of q^2."""
    return 0.5 * integrate(Field(q.grid, q.values**2))


def kinetic_energy(psi: Field) -> float:
    """Half the domain integral of |grad psi|^2.

    Cell-centered central differences, one-sided at boundary cells so the
    gradient is exact on linear fields.
    """
    from .fom import _cell_dx, _cell_dy

    v = psi.as_2d()
    dpx = _cell_dx(v, psi.grid.hx, None)
    dpy = _cell_dy(v, psi.grid.hy, None)
    g2 = Field(psi.grid, (dpx**2 + dpy**2).ravel())
    return 0.5 * integrate(g2)


def series_rel_l2(true_series, approx_series) -> float:
    """Relative l2 error of a scalar time series."""
    t = np.asarray(true_series, dtype=float).ravel()
    a = np.asarray(approx_series, dtype=float).ravel()
    if t.shape != a.shape:
        raise DomainError("series lengths differ")
    ref = np.linalg.norm(t)
    if ref == 0.0:
        raise DomainError("zero reference series")
    return float(np.linalg.norm(t - a) / ref)


def pmf(values, n_bins: int = 30):
    """Probability mass function over uniform bins spanning [min, max].

    Returns (bin_edges, masses); masses sum to one. A constant input
    collapses to a single full-mass bin.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("empty input")
    if n_bins < 1:
        raise DomainError(f"need at least one bin, got {n_bins}")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        edges = np.array([lo, hi])
        return edges, np.array([1.0])
    counts, edges = np.histogram(v, bins=n_bins, range=(lo, hi))
    return edges, counts / v.size


def error_report(field_id: str, true_field: Field, approx: Field) -> FieldErrorReport:
    return FieldErrorReport(field_id, rmse(true_field, approx), rel_l2(true_field, approx))


def export_series_csv(series: ScalarSeries, path, value_name="value") -> None:
    with open(path, "w") as fh:
        fh.write(f"t,{value_name}\n")
        for t, v in zip(series.times, series.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def export_pmf_csv(edges, masses, path) -> None:
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,mass\n")
        for lo, hi, m in zip(edges[:-1], edges[1:], masses):
            fh.write(f"{lo:.17g},{hi:.17g},{m:.17g}\n")


def export_reports_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write("field,rmse,rel_l2\n")
        for r in reports:
            fh.write(f"{r.field_id},{r.rmse:.17g},{r.rel_l2:.17g}\n")
