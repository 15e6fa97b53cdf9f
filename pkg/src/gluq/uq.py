"""Monte Carlo propagation of input uncertainty and pixel-level densities."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .darcy import SourceSpec, _worker_count, solve_darcy, source_field
from .errors import ConfigError, DegenerateSamples
from .random_field import draw_z, log_permeability

log = logging.getLogger(__name__)


class StreamingMoments:
    """Single-pass mean and variance with batch updates and pairwise merging."""

    def __init__(self, shape=None):
        self.n = 0
        self.mean = None if shape is None else np.zeros(shape)
        self.m2 = None if shape is None else np.zeros(shape)

    def update(self, batch):
        """Fold a (B, ...) batch in."""
        batch = np.asarray(batch, dtype=float)
        if len(batch) == 0:
            return self
        other = StreamingMoments()
        other.n = len(batch)
        other.mean = batch.mean(axis=0)
        other.m2 = ((batch - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other):
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / n)
        self.n = n
        return self

    def variance(self, ddof=1):
        if self.n <= ddof:
            raise ConfigError(f"variance needs more than {ddof} samples, have {self.n}")
        return self.m2 / (self.n - ddof)


@dataclass
class MomentFields:
    """Pixelwise mean and (unbiased) variance of (P, U, V)."""

    mean: np.ndarray
    var: np.ndarray
    n: int
    traces: dict = field(default_factory=dict)       # (row, col) -> (N, 3) values
    epistemic: dict = field(default_factory=dict)    # (row, col) -> (R, N, 3) values

    @classmethod
    def from_stream(cls, acc, **kw):
        return cls(acc.mean, np.maximum(acc.variance(), 0.0), acc.n, **kw)


def input_samples(basis, N, seed, start=0):
    """The z vectors consumed by both the surrogate and the solver runs."""
    return np.stack([draw_z(seed, start + i, basis.q) for i in range(N)]) if N else np.zeros((0, basis.q))


def propagate_aleatoric(model, basis, N_sim, seed, batch=32, probes=(), epistemic_replicates=0):
    """Moments of the surrogate's mean prediction over ``N_sim`` input draws.

    The model must carry its dataset standardisation (``model.norm``).
    ``probes`` lists (row, col) pixels whose full sample traces are kept;
    ``epistemic_replicates`` additionally draws that many GGLN samples per
    input at each probe.
    """
    from .training import Standardizer

    if N_sim < 2:
        raise ConfigError(f"N_sim must be >= 2, got {N_sim}")
    norm = Standardizer.from_dict(model.norm)
    acc = StreamingMoments()
    probes = [tuple(map(int, p)) for p in probes]
    traces = {p: [] for p in probes}
    epi = {p: [] for p in probes}
    rng = np.random.default_rng((int(seed), 1))
    for s in range(0, N_sim, batch):
        z = input_samples(basis, min(batch, N_sim - s), seed, start=s)
        X = (log_permeability(basis, z) - norm.k_mean) / norm.k_std
        try:
            res = model.forward(X[:, None], training=False)
        except Exception as exc:
            raise type(exc)(f"samples {s}..{s + len(z) - 1}: {exc}") from exc
        Y = norm.restore(res.Y.data)
        acc.update(Y)
        for p in probes:
            traces[p].append(Y[:, :, p[0], p[1]])
        if epistemic_replicates and probes:
            sd = np.sqrt(res.gln_var.data)
            draws = res.gln_mu.data[:, None] + sd[:, None] * rng.standard_normal(
                (len(z), epistemic_replicates, sd.shape[1]))
            for p in probes:
                vals = model.uq_to_pixel(res.features.data, draws, *p)
                epi[p].append(vals * norm.y_std + norm.y_mean)
    return MomentFields.from_stream(
        acc,
        traces={p: np.concatenate(v) for p, v in traces.items()},
        epistemic={p: np.concatenate(v, axis=0).transpose(1, 0, 2) for p, v in epi.items() if v},
    )


def _solve_chunk(args):
    basis, seed, start, count, f, tol, probes = args
    outs = []
    for i in range(start, start + count):
        K = np.exp(log_permeability(basis, draw_z(seed, i, basis.q)))
        try:
            outs.append(solve_darcy(K, f, tol=tol).target())
        except Exception as exc:
            raise RuntimeError(f"sample {i}: {exc}") from exc
    Y = np.stack(outs)
    return StreamingMoments().update(Y), {p: Y[:, :, p[0], p[1]] for p in probes}


def mcs_benchmark(basis, N, seed, source=SourceSpec(), tol=1e-10, probes=(), workers=None, chunk=64):
    """Solver-based moments with the same input draws as :func:`propagate_aleatoric`.

    Chunks are solved independently (optionally in worker processes) and
    their partial moments merged in chunk order.
    """
    if N < 2:
        raise ConfigError(f"N must be >= 2, got {N}")
    f = source_field(basis.grid, source)
    probes = [tuple(map(int, p)) for p in probes]
    jobs = [(basis, seed, s, min(chunk, N - s), f, tol, probes) for s in range(0, N, chunk)]
    nw = min(_worker_count(workers), len(jobs))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(_solve_chunk, jobs))
    else:
        parts = [_solve_chunk(j) for j in jobs]
    acc = StreamingMoments()
    for part, _ in parts:
        acc.merge(part)
    traces = {p: np.concatenate([t[p] for _, t in parts]) for p in probes}
    return MomentFields.from_stream(acc, traces=traces)


@dataclass
class PdfCurve:
    x: np.ndarray
    density: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None
    bandwidth: float = None


def silverman_bandwidth(samples):
    samples = np.asarray(samples, dtype=float)
    return 1.06 * samples.std(ddof=1) * len(samples) ** (-0.2)


def kde(samples, x, bandwidth=None, chunk=2048):
    """Gaussian kernel density estimate of ``samples`` evaluated at ``x``."""
    samples = np.asarray(samples, dtype=float)
    h = silverman_bandwidth(samples) if bandwidth is None else bandwidth
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for s in range(0, len(samples), chunk):
        u = (x[:, None] - samples[None, s:s + chunk]) / h
        out += np.exp(-0.5 * u * u).sum(axis=1)
    return out / (len(samples) * h * np.sqrt(2 * np.pi))


def pdf_at_pixel(samples, eval_points=None, epistemic_sets=None, band="percentile", n_points=512):
    """KDE with Silverman bandwidth plus an optional band from replicate sample sets.

    ``band="percentile"`` takes the pointwise 5th/95th percentiles of the
    replicate curves, ``band="minmax"`` their envelope. The band is widened
    to contain the central curve wherever it falls outside.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 30:
        raise ConfigError(f"need at least 30 samples for a density estimate, got {samples.size}")
    h = silverman_bandwidth(samples)
    if h == 0:
        spread = max(abs(samples[0]), 1.0) * 1e-3
        raise DegenerateSamples(f"all {samples.size} samples equal {samples[0]!r}; "
                                f"pass an explicit bandwidth floor such as {spread:.3g}")
    if eval_points is None:
        eval_points = np.linspace(samples.min() - 4 * h, samples.max() + 4 * h, n_points)
    x = np.asarray(eval_points, dtype=float)
    density = kde(samples, x, h)
    lo = hi = None
    if epistemic_sets is not None and len(epistemic_sets):
        curves = np.stack([kde(s, x) for s in epistemic_sets])
        if band == "percentile":
            lo, hi = np.percentile(curves, [5, 95], axis=0)
        elif band == "minmax":
            lo, hi = curves.min(axis=0), curves.max(axis=0)
        else:
            raise ConfigError(f"unknown band mode {band!r}")
        lo, hi = np.minimum(lo, density), np.maximum(hi, density)
    return PdfCurve(x, density, lo, hi, h)
