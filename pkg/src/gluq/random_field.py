"""Log-normal permeability fields from a truncated Karhunen-Loeve expansion.

Fields live on an ``n x n`` array indexed ``[row, col]`` with ``row`` along
y and ``col`` along x; flattening is row-major.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy.spatial.distance import cdist

from .errors import ConfigError, NumericFailure, ShapeError


@dataclass(frozen=True)
class Grid2D:
    """Uniform ``n x n`` grid over the unit square, endpoints included."""

    n: int = 65

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"grid needs n >= 2, got {self.n}")

    @property
    def n_s(self):
        return self.n * self.n

    @property
    def axis(self):
        return np.linspace(0.0, 1.0, self.n)

    def points(self):
        """(n_s, 2) array of (x, y) coordinates in row-major order."""
        yy, xx = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def nearest_index(self, x, y):
        """(row, col) of the grid node closest to the point (x, y)."""
        step = self.n - 1
        return int(round(y * step)), int(round(x * step))


@dataclass(frozen=True)
class ExpKernel:
    """Exponential covariance ``exp(-|s - s'| / l)`` with field mean ``m``."""

    length_scale: float = 0.1
    mean: float = 0.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ConfigError(f"length scale must be positive, got {self.length_scale}")

    def __call__(self, s, t):
        return exp_kernel_eval(self, s, t)

    def matrix(self, points_a, points_b=None):
        pts_b = points_a if points_b is None else points_b
        return np.exp(-cdist(points_a, pts_b) / self.length_scale)


def exp_kernel_eval(kernel, s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return float(np.exp(-np.linalg.norm(s - t) / kernel.length_scale))


@dataclass
class KLEBasis:
    """Leading eigenpairs of the grid covariance matrix.

    ``eigenvectors`` has shape (n_s, q), columns orthonormal in the plain
    Euclidean inner product.
    """

    grid: Grid2D
    kernel: ExpKernel
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def q(self):
        return len(self.eigenvalues)

    @property
    def mean(self):
        return self.kernel.mean

    @classmethod
    def constant(cls, grid, kernel=None):
        """Zero-term basis: every sample is the constant field exp(mean)."""
        return cls(grid, kernel or ExpKernel(), np.zeros(0), np.zeros((grid.n_s, 0)))

    def energy(self):
        """Cumulative captured variance sum_{i<=k} lambda_i for k = 1..q."""
        return np.cumsum(self.eigenvalues)


@dataclass
class PermeabilityField:
    values: np.ndarray
    z: np.ndarray

    @property
    def log_values(self):
        return np.log(self.values)


def _fix_signs(vecs):
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vecs


def kle_decompose(grid, kernel, q, method="auto", residual_tol=1e-8):
    """Top-``q`` eigenpairs of the ``n_s x n_s`` covariance matrix.

    ``method`` is "dense" (LAPACK symmetric solver on the requested index
    range), "iterative" (Lanczos via ARPACK) or "auto", which picks Lanczos
    only for large grids with ``q`` much smaller than ``n_s``.
    """
    n_s = grid.n_s
    if not 1 <= q <= n_s:
        raise ConfigError(f"KLE order q={q} must satisfy 1 <= q <= n_s={n_s}")
    cov = kernel.matrix(grid.points())
    if method == "auto":
        method = "iterative" if (n_s > 1000 and 4 * q < n_s) else "dense"
    if method == "dense":
        vals, vecs = scipy.linalg.eigh(cov, subset_by_index=[n_s - q, n_s - 1])
    elif method == "iterative":
        try:
            # fixed start vector: ARPACK's default is random, which would make
            # degenerate eigenspaces (and hence samples) irreproducible
            v0 = np.random.default_rng(0).standard_normal(n_s)
            vals, vecs = scipy.sparse.linalg.eigsh(cov, k=q, which="LA", tol=1e-12, v0=v0)
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise NumericFailure(f"Lanczos did not converge for q={q}: {exc}") from None
    else:
        raise ConfigError(f"unknown eigensolver {method!r}")
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = _fix_signs(np.ascontiguousarray(vecs[:, order]))
    resid = np.linalg.norm(cov @ vecs - vecs * vals, axis=0)
    worst = float(resid.max() / vals[0])
    if worst > residual_tol:
        raise NumericFailure(f"eigenpair residual {worst:.3e} exceeds {residual_tol:.1e}",
                             log=resid.tolist())
    if vals[-1] <= 0:
        raise NumericFailure(f"non-positive eigenvalue {vals[-1]:.3e} at index {q - 1}")
    return KLEBasis(grid, kernel, vals, vecs)


def log_permeability(basis, z):
    """log K for one z (shape (q,)) or a batch (shape (N, q)); returns (n, n) or (N, n, n)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.q:
        raise ShapeError("sample_log_permeability", f"z has length {z.shape[-1]}, basis has q={basis.q}")
    n = basis.grid.n
    field = basis.mean + (z * np.sqrt(basis.eigenvalues)) @ basis.eigenvectors.T
    return field.reshape(z.shape[:-1] + (n, n))


def sample_log_permeability(basis, z):
    """Permeability K = exp(mean + sum_i sqrt(lambda_i) z_i phi_i)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ShapeError("sample_log_permeability", f"expected a single z vector, got {z.shape}")
    return PermeabilityField(np.exp(log_permeability(basis, z)), z.copy())


def draw_z(seed, index, q):
    """Standard-normal KLE coefficients for sample ``index`` of stream ``seed``.

    Each sample has its own generator so results do not depend on how
    samples are split across workers.
    """
    return np.random.default_rng((int(seed), int(index))).standard_normal(q)


def draw_z_batch(seed, count, q, start=0):
    return np.stack([draw_z(seed, start + i, q) for i in range(count)]) if count else np.zeros((0, q))
