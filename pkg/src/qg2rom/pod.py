"""POD basis construction by the method of snapshots.

The tall fluctuation matrix S (N_h x N_s, N_h >> N_s) is never decomposed
directly; the spectrum comes from the small Gram matrix S^T S, whose
eigenpairs are computed with a deterministic cyclic Jacobi rotation
sweep. Mode signs are fixed so the largest-magnitude entry of each mode
is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SolverError
from .grid import Field, Grid
from .linalg import SparseSystem, solve_linear
from .snapshots import TimeAverage

RANK_CUTOFF = 1e-12          # sigma_i below cutoff*sigma_1 treated as zero
JACOBI_TOL = 1e-14           # off-diagonal Frobenius norm, relative


def jacobi_eigh(A: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted descending; eigenvectors are
    the columns. Deterministic for a given input.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DomainError("jacobi_eigh needs a square matrix")
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    anorm = np.linalg.norm(A)
    if anorm == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        # measure the off-diagonal norm directly; the ||A||^2 - ||diag||^2
        # form cancels catastrophically once the residue is small
        off = np.linalg.norm(A - np.diag(A.diagonal()))
        if off <= tol * anorm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 0.1 * tol * anorm / n:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    lam = A.diagonal().copy()
    order = np.argsort(-lam, kind="stable")
    return lam[order], V[:, order]


def compute_pod(fluct: np.ndarray):
    """SVD factors (U, singular_values, V) of a tall fluctuation matrix.

    U carries one column per singular value above the rank cutoff;
    singular_values and V are full (length/size N_s).
    """
    S = np.asarray(fluct, dtype=float)
    if S.ndim != 2:
        raise DomainError("fluctuation matrix must be 2-D")
    gram = S.T @ S
    lam, V = jacobi_eigh(gram)
    sigma = np.sqrt(np.clip(lam, 0.0, None))
    if sigma[0] == 0.0:
        return np.empty((S.shape[0], 0)), sigma, V
    rank = int(np.sum(sigma > RANK_CUTOFF * sigma[0]))
    U = (S @ V[:, :rank]) / sigma[:rank]
    # sign convention: largest-magnitude entry of each mode positive
    for i in range(rank):
        j = int(np.argmax(np.abs(U[:, i])))
        if U[j, i] < 0:
            U[:, i] = -U[:, i]
            V[:, i] = -V[:, i]
    return U, sigma, V


def select_modes(singular_values, threshold: float, exponent: float = 1.0) -> int:
    """Smallest rank retaining the requested fraction of singular-value energy.

    The criterion sums first powers of the singular values by default; the
    exponent is configurable (2 gives the conventional squared-energy
    definition).
    """
    s = np.asarray(singular_values, dtype=float)
    if not 0 < threshold <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    if np.any(np.diff(s) > 0):
        raise DomainError("singular values must be sorted descending")
    total = np.sum(s**exponent)
    if total == 0.0:
        raise DomainError("all-zero singular spectrum")
    frac = np.cumsum(s**exponent) / total
    if threshold >= 1.0:
        return int(np.sum(s > 0))
    return int(np.searchsorted(frac, threshold - 1e-15) + 1)


@dataclass
class PodBasis:
    field_id: str
    modes: np.ndarray
    singular_values: np.ndarray
    retained: int
    energy_fraction: float
    mean: TimeAverage

    def __post_init__(self):
        if not 1 <= self.retained <= len(self.singular_values):
            raise DomainError(f"retained rank {self.retained} out of range")
        if self.modes.shape[1] != self.retained:
            raise DomainError("mode count does not match retained rank")


@dataclass
class CoefficientSeries:
    """Modal coefficients, columns indexed like the snapshot matrix."""

    field_id: str
    times: np.ndarray
    params: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        self.matrix = np.asarray(self.matrix, dtype=float)
        if not np.all(np.isfinite(self.matrix)):
            raise DomainError("coefficient matrix contains non-finite entries")
        if self.matrix.shape[1] != max(1, self.params.shape[0]) * len(self.times):
            raise DomainError("coefficient columns inconsistent with times/params")

    @property
    def n_blocks(self) -> int:
        return max(1, self.params.shape[0])

    def block(self, k: int) -> np.ndarray:
        nt = len(self.times)
        return self.matrix[:, k * nt:(k + 1) * nt]


def build_basis(field_id: str, fluct: np.ndarray, mean: TimeAverage,
                threshold: float | None = None, rank: int | None = None,
                energy_exponent: float = 1.0) -> PodBasis:
    """POD basis from a centered snapshot matrix, truncated by energy or rank."""
    U, sigma, _ = compute_pod(fluct)
    if rank is None:
        if threshold is None:
            raise DomainError("need either an energy threshold or a fixed rank")
        rank = select_modes(sigma, threshold, exponent=energy_exponent)
    if rank > U.shape[1]:
        raise DomainError(f"requested rank {rank} exceeds numerical rank {U.shape[1]}")
    total = np.sum(sigma**energy_exponent)
    frac = float(np.sum(sigma[:rank]**energy_exponent) / total) if total > 0 else 0.0
    return PodBasis(field_id, U[:, :rank].copy(), sigma, rank, frac, mean)


def modal_coefficients(basis: PodBasis, fluct: np.ndarray, times=None, params=None) -> CoefficientSeries:
    """Projection C = U_r^T S of centered snapshots onto the retained modes."""
    S = np.asarray(fluct, dtype=float)
    if S.shape[0] != basis.modes.shape[0]:
        raise DomainError(f"row count {S.shape[0]} does not match basis {basis.modes.shape[0]}")
    C = basis.modes.T @ S
    if times is None:
        times = np.arange(S.shape[1], dtype=float)
    if params is None:
        params = np.empty((1, 0))
    return CoefficientSeries(basis.field_id, times, params, C)


def reconstruct(mean: TimeAverage, basis: PodBasis, coeffs) -> Field:
    """mean + sum_i coeff_i * mode_i."""
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size != basis.retained:
        raise DomainError(f"expected {basis.retained} coefficients, got {coeffs.size}")
    return Field(mean.mean.grid, mean.mean.values + basis.modes @ coeffs)


def poisson_modes(basis: PodBasis, grid: Grid, tol: float = 1e-11) -> np.ndarray:
    """Stream-function modes xi_i solving Lap(xi_i) = -phi_i, homogeneous Dirichlet.

    Enables reusing the vorticity modal coefficients for the stream
    function reconstruction.
    """
    from .fom import laplacian_matrix

    L = laplacian_matrix(grid)
    A = -L  # SPD
    out = np.empty_like(basis.modes)
    for i in range(basis.retained):
        phi = basis.modes[:, i]
        try:
            system = SparseSystem(A.tocsr(), phi, symmetric=True)
            out[:, i] = solve_linear(system, tol=tol, max_iter=20 * grid.ncells)
        except SolverError as err:
            raise SolverError(f"Poisson solve failed for mode {i}: {err}",
                              residual=err.residual) from err
    return out


def save_basis(basis: PodBasis, path) -> None:
    """Persist a basis in the snapshot container, modes as columns.

    Singular values and truncation metadata go to the JSON sidecar; the
    centering mean is stored next to the basis as '<path>.mean'.
    """
    from . import snapshots as snaps

    grid_spec = basis.mean.mean.grid.spec
    meta = {
        "kind": "pod-basis",
        "singular_values": [float(s) for s in basis.singular_values],
        "retained": basis.retained,
        "energy_fraction": basis.energy_fraction,
        "mean_param": [float(v) for v in np.atleast_1d(basis.mean.param)],
    }
    modes_set = snaps.SnapshotSet(basis.field_id, grid_spec,
                                  np.arange(basis.retained, dtype=float),
                                  np.empty((1, 0)), basis.modes, extra_meta=meta)
    snaps.save(modes_set, path)
    mean_set = snaps.SnapshotSet(basis.field_id, grid_spec, np.array([0.0]),
                                 np.empty((1, 0)), basis.mean.mean.values[:, None])
    snaps.save(mean_set, str(path) + ".mean")


def load_basis(path) -> PodBasis:
    from . import snapshots as snaps

    modes_set = snaps.load(path)
    meta = modes_set.extra_meta or {}
    if meta.get("kind") != "pod-basis":
        raise DomainError(f"{path} is not a saved POD basis")
    mean_set = snaps.load(str(path) + ".mean")
    mean = TimeAverage(modes_set.field_id, np.asarray(meta.get("mean_param", []), dtype=float),
                       Field(mean_set.grid(), mean_set.matrix[:, 0]))
    return PodBasis(modes_set.field_id, modes_set.matrix,
                    np.asarray(meta["singular_values"], dtype=float),
                    int(meta["retained"]), float(meta["energy_fraction"]), mean)


def export_coefficients_csv(series: CoefficientSeries, path) -> None:
    """CSV with columns t, mu..., alpha_1..alpha_N."""
    n_modes = series.matrix.shape[0]
    pdim = series.params.shape[1] if series.params.ndim == 2 else 0
    header = ["t"] + [f"mu_{i+1}" for i in range(pdim)] + \
        [f"alpha_{i+1}" for i in range(n_modes)]
    nt = len(series.times)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(series.n_blocks):
            mu = series.params[k] if series.params.shape[0] else np.empty(0)
            for p in range(nt):
                row = [series.times[p], *mu, *series.matrix[:, k * nt + p]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_coefficients_csv(path, field_id="q1") -> CoefficientSeries:
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = list(data.dtype.names)
    pdim = sum(1 for n in names if n.startswith("mu_"))
    n_modes = sum(1 for n in names if n.startswith("alpha_"))
    rows = np.atleast_1d(data)
    t = rows["t"]
    # recover the block structure from repeated time stamps
    nt = len(t) if pdim == 0 else int(np.argmax(np.diff(t) < 0) + 1 if np.any(np.diff(t) < 0) else len(t))
    nblocks = len(t) // nt
    times = t[:nt]
    params = np.array([[rows[f"mu_{i+1}"][k * nt] for i in range(pdim)]
                       for k in range(nblocks)]).reshape(nblocks, pdim) if pdim else np.empty((1, 0))
    matrix = np.vstack([rows[f"alpha_{i+1}"] for i in range(n_modes)])
    return CoefficientSeries(field_id, times, params, matrix)
