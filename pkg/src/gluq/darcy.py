"""Finite-volume Darcy solver and dataset generation.

The n x n field values are treated as cell averages of n x n square cells of
width h = 1/n. Fluxes use two-point approximations with harmonic face
permeability; boundary faces carry no flux. The pure-Neumann system is
solved by conjugate gradients with the constant null space projected out.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, IncompatibleSource, NumericFailure
from .random_field import Grid2D, PermeabilityField, draw_z, sample_log_permeability

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceSpec:
    """Injection well in the lower-left corner, production in the upper-right."""

    rate: float = 10.0
    size: float = 0.125

    def __post_init__(self):
        if not 0 < self.size <= 0.5:
            raise ConfigError(f"well size must lie in (0, 0.5], got {self.size}")


@dataclass
class SolveInfo:
    iterations: int
    residual_history: list = field(default_factory=list)

    @property
    def relative_residual(self):
        return self.residual_history[-1] if self.residual_history else 0.0


@dataclass
class FieldSample:
    """Permeability and the (P, U, V) response on the same n x n grid."""

    K: np.ndarray
    P: np.ndarray
    U: np.ndarray
    V: np.ndarray
    z: np.ndarray = None
    info: SolveInfo = None

    def target(self):
        return np.stack([self.P, self.U, self.V])


def source_field(grid, spec=SourceSpec()):
    """Source term on the grid nodes: +rate on [0, w]^2, -rate on [1-w, 1]^2."""
    if not 0 < spec.size <= 0.5:
        raise ConfigError(f"well size must lie in (0, 0.5], got {spec.size}")
    w = spec.size
    ax = grid.axis
    inj = np.abs(ax - 0.5 * w) <= 0.5 * w
    prod = np.abs(ax - 1.0 + 0.5 * w) <= 0.5 * w
    f = np.zeros((grid.n, grid.n))
    f[np.ix_(inj, inj)] = spec.rate
    f[np.ix_(prod, prod)] = -spec.rate
    return f


def cell_centers(n):
    """x (or y) coordinates of the finite-volume cell centres."""
    return (np.arange(n) + 0.5) / n


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def face_transmissibilities(K):
    """Harmonic-mean transmissibilities on interior x-faces and y-faces.

    Returns (tx, ty) with shapes (n, n-1) and (n-1, n); ``tx[i, j]`` couples
    cells (i, j) and (i, j+1). Face length over centre distance is 1.
    """
    return _harmonic(K[:, :-1], K[:, 1:]), _harmonic(K[:-1, :], K[1:, :])


def assemble(K):
    """Sparse symmetric positive semi-definite TPFA matrix (n^2 x n^2)."""
    n = K.shape[0]
    tx, ty = face_transmissibilities(K)
    idx = np.arange(n * n).reshape(n, n)
    rows = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    cols = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    vals = np.concatenate([tx.ravel(), ty.ravel()])
    off = sp.coo_matrix((-vals, (rows, cols)), shape=(n * n, n * n))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _converged(r, b_norm, b_max, tol):
    return np.linalg.norm(r) <= tol * b_norm and np.abs(r).max() <= tol * b_max


def conjugate_gradient(A, b, tol=1e-10, maxiter=None, method="cr"):
    """Krylov solve of a singular SPD system whose null space is the constant vector.

    ``method="cr"`` is the conjugate-residual variant of CG: it minimises the
    residual 2-norm over the Krylov space, so the reported residuals never
    increase. ``method="pcg"`` is Jacobi-preconditioned CG (fewer
    iterations, residual norm may oscillate).

    The right-hand side must be orthogonal to constants. Residuals are kept
    mean-free and the returned solution has zero mean. Converged when both
    the 2-norm and max-norm of the true residual are below ``tol`` relative
    to the right-hand side.
    """
    if method not in ("cr", "pcg"):
        raise ValueError(f"unknown Krylov method {method!r}")
    n = b.size
    maxiter = maxiter or 10 * n
    b = b - b.mean()
    b_norm = np.linalg.norm(b)
    b_max = np.abs(b).max()
    x = np.zeros(n)
    if b_norm == 0:
        return x, SolveInfo(0, [0.0])
    dinv = 1.0 / A.diagonal() if method == "pcg" else None
    history = [1.0]
    it = 0
    r = b.copy()
    while it < maxiter:
        # (re)start from the current true residual
        if method == "cr":
            p = r.copy()
            Ar = A @ r
            Ap = Ar.copy()
            rAr = r @ Ar
        else:
            z = dinv * r
            z -= z.mean()
            p = z.copy()
            rz = r @ z
        while it < maxiter:
            it += 1
            if method == "cr":
                alpha = rAr / (Ap @ Ap)
                x += alpha * p
                r -= alpha * Ap
                r -= r.mean()
                Ar = A @ r
                rAr_new = r @ Ar
                beta = rAr_new / rAr
                rAr = rAr_new
                p = r + beta * p
                Ap = Ar + beta * Ap
            else:
                Ap = A @ p
                alpha = rz / (p @ Ap)
                x += alpha * p
                r -= alpha * Ap
                r -= r.mean()
                z = dinv * r
                z -= z.mean()
                rz_new = r @ z
                p = z + (rz_new / rz) * p
                rz = rz_new
            history.append(np.linalg.norm(r) / b_norm)
            if _converged(r, b_norm, b_max, tol):
                break
        true_r = b - A @ x
        true_r -= true_r.mean()
        if _converged(true_r, b_norm, b_max, tol):
            x -= x.mean()
            return x, SolveInfo(it, history)
        r = true_r
    raise NumericFailure(f"Krylov solver stagnated after {maxiter} iterations "
                         f"(relative residual {history[-1]:.3e})", log=history)


def solve_darcy(K, f, tol=1e-10, maxiter=None, method="cr"):
    """Pressure and cell-centred velocities for -div(K grad p) = f, no-flux walls."""
    if isinstance(K, PermeabilityField):
        z, K = K.z, K.values
    else:
        z = None
    K = np.asarray(K, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(K <= 0):
        raise ConfigError("permeability must be strictly positive")
    n = K.shape[0]
    h = 1.0 / n
    fnorm = np.linalg.norm(f)
    if abs(f.sum()) > 1e-8 * max(fnorm, 1e-300):
        raise IncompatibleSource(f"sum of source {f.sum():.3e} is not zero (|f| = {fnorm:.3e})")
    A = assemble(K)
    p, info = conjugate_gradient(A, (f * h * h).ravel(), tol=tol, maxiter=maxiter, method=method)
    P = p.reshape(n, n)
    U, V = cell_velocities(K, P)
    return FieldSample(K, P, U, V, z=z, info=info)


def face_velocities(K, P):
    """Darcy velocities on all faces: (n, n+1) x-faces and (n+1, n) y-faces."""
    n = K.shape[0]
    h = 1.0 / n
    tx, ty = face_transmissibilities(K)
    ux = np.zeros((n, n + 1))
    vy = np.zeros((n + 1, n))
    ux[:, 1:-1] = -tx * (P[:, 1:] - P[:, :-1]) / h
    vy[1:-1, :] = -ty * (P[1:, :] - P[:-1, :]) / h
    return ux, vy


def cell_velocities(K, P):
    ux, vy = face_velocities(K, P)
    return 0.5 * (ux[:, :-1] + ux[:, 1:]), 0.5 * (vy[:-1, :] + vy[1:, :])


def divergence(K, P):
    """Discrete divergence of the face velocity field, per cell."""
    n = K.shape[0]
    ux, vy = face_velocities(K, P)
    return ((ux[:, 1:] - ux[:, :-1]) + (vy[1:, :] - vy[:-1, :])) * n


def _worker_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("GLUQ_THREADS")
    return max(1, int(env)) if env else 1


def _solve_one(args):
    basis, f, seed, index, tol = args
    field_ = sample_log_permeability(basis, draw_z(seed, index, basis.q))
    try:
        return solve_darcy(field_, f, tol=tol)
    except Exception as exc:
        raise RuntimeError(f"sample {index}: {exc}") from exc


def generate_dataset(basis, n_samples, seed, source=SourceSpec(), tol=1e-10,
                     allow_empty=False, workers=None, start=0):
    """Solve ``n_samples`` i.i.d. KLE realisations; sample i uses stream (seed, start + i)."""
    if n_samples < 0 or (n_samples == 0 and not allow_empty):
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    f = source_field(basis.grid, source)
    jobs = [(basis, f, seed, start + i, tol) for i in range(n_samples)]
    nw = min(_worker_count(workers), max(n_samples, 1))
    if nw == 1:
        return [_solve_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(_solve_one, jobs, chunksize=max(1, n_samples // (4 * nw))))


def stack_samples(samples):
    """(K, Y, Z) arrays of shapes (N, n, n), (N, 3, n, n), (N, q)."""
    K = np.stack([s.K for s in samples])
    Y = np.stack([s.target() for s in samples])
    Z = np.stack([s.z for s in samples]) if samples and samples[0].z is not None else None
    return K, Y, Z


__all__ = [
    "FieldSample", "Grid2D", "SolveInfo", "SourceSpec", "assemble", "cell_centers",
    "cell_velocities", "conjugate_gradient", "divergence", "face_velocities",
    "generate_dataset", "solve_darcy", "source_field", "stack_samples",
]
