"""GLU-Net: a small U-Net with a Gaussian GLN module on one skip connection.

Tensors are NCHW. The mean path is

    encoder -> bottleneck -> decoder -> (+ UQ branch) -> 1x1 head

where the UQ branch maxpools the chosen skip, maps it through FC1 to the
GGLN inputs, mixes them with a single GGLN layer and lifts the GGLN means
back to the decoder's last feature map through FC2 and a bilinear resize.
"""

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff.ops import interp_matrix
from .errors import ConfigError, NumericFailure, ShapeError
from .ggln import BASE_VARIANCE, VAR_RANGE, WEIGHT_RANGE, GaussianPair, GGLNLayer, HalfSpaceGate

log = logging.getLogger(__name__)

GROUPS = ("encoder", "uq", "bottleneck", "decoder")

# projection box for the embedded GGLN's mixture means (inputs are O(1) activations)
GLN_MEAN_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class GLUNetConfig:
    """Architecture hyper-parameters.

    The default schedule reproduces the per-module parameter counts of the
    reference architecture for the encoder, bottleneck and decoder.
    """

    in_channels: int = 1
    out_channels: int = 3
    channels: tuple = (4, 8, 16, 32)
    bottleneck: int = 64
    grid: int = 65
    uq_level: int = 0
    gln_width: int = 4      # FC1 output = GGLN inputs = context dimension
    gln_neurons: int = 4
    gln_m: int = 4
    base_variance: float = BASE_VARIANCE
    var_range: tuple = VAR_RANGE
    weight_range: tuple = WEIGHT_RANGE
    mean_range: tuple = GLN_MEAN_RANGE

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.mean_range is not None:
            object.__setattr__(self, "mean_range", tuple(self.mean_range))
        object.__setattr__(self, "var_range", tuple(self.var_range))
        object.__setattr__(self, "weight_range", tuple(self.weight_range))
        if not self.channels or min(self.channels) < 1 or self.bottleneck < 1:
            raise ConfigError(f"channel counts must be positive: {self.channels}, {self.bottleneck}")
        if not 0 <= self.uq_level < self.depth:
            raise ConfigError(f"uq_level {self.uq_level} outside 0..{self.depth - 1}")
        if self.grid >> self.depth < 1:
            raise ConfigError(f"grid {self.grid} too small for {self.depth} pooling levels")
        if self.pooled_size < 1:
            raise ConfigError(f"UQ skip at level {self.uq_level} is too small to pool")
        if min(self.gln_width, self.gln_neurons, self.gln_m) < 1:
            raise ConfigError("GGLN width, neurons and m must be >= 1")

    @property
    def depth(self):
        return len(self.channels)

    def level_sizes(self):
        sizes = [self.grid]
        for _ in range(self.depth):
            sizes.append(sizes[-1] // 2)
        return sizes

    @property
    def pooled_size(self):
        return self.level_sizes()[self.uq_level] // 2

    @property
    def fc1_in(self):
        return self.channels[self.uq_level] * self.pooled_size ** 2

    @property
    def fc2_out(self):
        return self.channels[0] * self.pooled_size ** 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def desk(cls, grid=33):
        return cls(channels=(8, 16, 32, 64), bottleneck=128, grid=grid)


def parameter_specs(config):
    """Ordered {name: (group, shape, fan_in)} for every trainable tensor."""
    specs = {}

    def double_conv(prefix, group, cin, cout):
        specs[f"{prefix}.conv1.w"] = (group, (cout, cin, 3, 3), cin * 9)
        specs[f"{prefix}.bn1.g"] = (group, (cout,), None)
        specs[f"{prefix}.bn1.b"] = (group, (cout,), None)
        specs[f"{prefix}.conv2.w"] = (group, (cout, cout, 3, 3), cout * 9)
        specs[f"{prefix}.bn2.g"] = (group, (cout,), None)
        specs[f"{prefix}.bn2.b"] = (group, (cout,), None)

    cin = config.in_channels
    for i, c in enumerate(config.channels):
        double_conv(f"enc{i}", "encoder", cin, c)
        cin = c
    double_conv("bott", "bottleneck", cin, config.bottleneck)
    below = config.bottleneck
    for i in reversed(range(config.depth)):
        c = config.channels[i]
        specs[f"dec{i}.up.w"] = ("decoder", (below, c, 2, 2), below)
        specs[f"dec{i}.up.b"] = ("decoder", (c,), None)
        double_conv(f"dec{i}", "decoder", 2 * c, c)
        below = c
    specs["head.w"] = ("decoder", (config.out_channels, config.channels[0], 1, 1), config.channels[0])
    specs["head.b"] = ("decoder", (config.out_channels,), None)
    specs["uq.fc1.w"] = ("uq", (config.gln_width, config.fc1_in), config.fc1_in)
    specs["uq.fc1.b"] = ("uq", (config.gln_width,), None)
    specs["uq.ggln.w"] = ("uq", (config.gln_neurons, 2 ** config.gln_m, config.gln_width), None)
    specs["uq.fc2.w"] = ("uq", (config.fc2_out, config.gln_neurons), config.gln_neurons)
    specs["uq.fc2.b"] = ("uq", (config.fc2_out,), None)
    return specs


def count_parameters(config):
    """Per-group and total trainable parameter counts, from shapes alone."""
    counts = dict.fromkeys(GROUPS, 0)
    for group, shape, _ in parameter_specs(config).values():
        counts[group] += int(np.prod(shape))
    counts["total"] = sum(counts[g] for g in GROUPS)
    return counts


@contextmanager
def _layer(name):
    try:
        yield
    except NumericFailure as exc:
        raise type(exc)(f"layer {name}: {exc}", log=exc.log) from None


@dataclass
class ForwardResult:
    Y: Tensor
    gln_mu: Tensor
    gln_var: Tensor
    features: Tensor     # decoder output before the UQ contribution is added


@dataclass
class GLUNetModel:
    config: GLUNetConfig
    params: dict
    buffers: dict
    gates: list
    norm: dict = field(default_factory=dict)

    def __post_init__(self):
        self.groups = {g: [] for g in GROUPS}
        for name, (group, shape, _) in parameter_specs(self.config).items():
            if self.params[name].shape != shape:
                raise ShapeError("build_model", f"{name} has shape {self.params[name].shape}, expected {shape}")
            self.groups[group].append(name)
        cfg = self.config
        # shares memory with the parameter tensor so optimiser steps are seen
        self.gln = GGLNLayer(self.params["uq.ggln.w"].data, self.gates,
                             weight_range=cfg.weight_range, var_range=cfg.var_range,
                             mean_range=cfg.mean_range)

    def parameters(self):
        return [self.params[n] for n in parameter_specs(self.config)]

    def named_parameters(self):
        return [(n, self.params[n]) for n in parameter_specs(self.config)]

    def param_counts(self):
        counts = {g: sum(self.params[n].size for n in names) for g, names in self.groups.items()}
        counts["total"] = sum(counts.values())
        return counts

    def project(self):
        """Clip GGLN weights into their box after an optimiser step."""
        np.clip(self.gln.weights, *self.config.weight_range, out=self.gln.weights)

    def _double_conv(self, h, prefix, training, update_stats):
        p, b = self.params, self.buffers
        for j in (1, 2):
            with _layer(f"{prefix}.conv{j}"):
                h = ad.conv2d(h, p[f"{prefix}.conv{j}.w"])
                h = ad.batchnorm2d(h, p[f"{prefix}.bn{j}.g"], p[f"{prefix}.bn{j}.b"],
                                   b[f"{prefix}.bn{j}.mean"], b[f"{prefix}.bn{j}.var"],
                                   training=training, update_stats=update_stats)
                h = ad.relu(h)
        return h

    def context(self, a, training, update_stats, momentum=0.1, eps=1e-5):
        """Standardise the FC1 output with running statistics."""
        mean, var = self.buffers["uq.ctx.mean"], self.buffers["uq.ctx.var"]
        if training and update_stats and a.shape[0] > 1:
            mean *= 1.0 - momentum
            mean += momentum * a.mean(axis=0)
            var *= 1.0 - momentum
            var += momentum * a.var(axis=0, ddof=1)
        return (a - mean) / np.sqrt(var + eps)

    def forward(self, K, training=False, update_stats=True):
        """Graph forward pass on a (B, 1, n, n) batch."""
        cfg = self.config
        x = K if isinstance(K, Tensor) else Tensor(K)
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.grid, cfg.grid):
            raise ShapeError("forward_mean", f"expected (B, {cfg.in_channels}, {cfg.grid}, {cfg.grid}), got {x.shape}")
        p = self.params
        skips = []
        h = x
        for i in range(cfg.depth):
            h = self._double_conv(h, f"enc{i}", training, update_stats)
            skips.append(h)
            h = ad.maxpool2d(h)
        h = self._double_conv(h, "bott", training, update_stats)
        for i in reversed(range(cfg.depth)):
            with _layer(f"dec{i}.up"):
                h = ad.conv_transpose2d(h, p[f"dec{i}.up.w"], p[f"dec{i}.up.b"])
                if h.shape[2:] != skips[i].shape[2:]:
                    h = ad.upsample_bilinear(h, size=skips[i].shape[2:])
                h = ad.concat(skips[i], h, axis=1)
            h = self._double_conv(h, f"dec{i}", training, update_stats)
        features = h

        b = x.shape[0]
        with _layer("uq.fc1"):
            a = ad.linear(ad.flatten(ad.maxpool2d(skips[cfg.uq_level])), p["uq.fc1.w"], p["uq.fc1.b"])
        ctx = self.context(a.data, training, update_stats)
        with _layer("uq.ggln"):
            base_var = Tensor(np.full(a.shape, cfg.base_variance))
            mu, var = self.gln.forward_graph(a, base_var, ctx, p["uq.ggln.w"])
        with _layer("uq.fc2"):
            e = ad.linear(mu, p["uq.fc2.w"], p["uq.fc2.b"])
            e = ad.reshape(e, (b, cfg.channels[0], cfg.pooled_size, cfg.pooled_size))
            e = ad.upsample_bilinear(e, size=(cfg.grid, cfg.grid))
        with _layer("head"):
            Y = ad.conv2d(ad.add(features, e), p["head.w"], p["head.b"])
        return ForwardResult(Y, mu, var, features)

    def uq_to_output(self, features, gln_values):
        """Numpy tail: GGLN values (S, neurons) -> outputs (S, C, n, n) for one input's features."""
        cfg = self.config
        p = self.params
        e = gln_values @ p["uq.fc2.w"].data.T + p["uq.fc2.b"].data
        e = e.reshape(-1, cfg.channels[0], cfg.pooled_size, cfg.pooled_size)
        r = interp_matrix(cfg.pooled_size, cfg.grid)
        e = np.matmul(np.matmul(r, e), r.T)
        h = features + e
        w = p["head.w"].data[:, :, 0, 0]
        return np.einsum("oc,schw->sohw", w, h) + p["head.b"].data[None, :, None, None]


    def uq_to_pixel(self, features, gln_values, row, col):
        """Output (3 fields) at one pixel for GGLN values of shape (B, R, neurons)."""
        cfg = self.config
        p = self.params
        e = gln_values @ p["uq.fc2.w"].data.T + p["uq.fc2.b"].data
        e = e.reshape(e.shape[:2] + (cfg.channels[0], cfg.pooled_size, cfg.pooled_size))
        r = interp_matrix(cfg.pooled_size, cfg.grid)
        e = np.einsum("brcij,i,j->brc", e, r[row], r[col])
        h = features[:, None, :, row, col] + e
        return h @ p["head.w"].data[:, :, 0, 0].T + p["head.b"].data

def build_model(config=None, seed=0):
    """Initialise a GLU-Net: He-normal convs, N(0,1) GGLN tables clipped to the weight box."""
    config = config or GLUNetConfig()
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, (_, shape, fan_in) in parameter_specs(config).items():
        kind = name.rsplit(".", 1)[-1]
        if name == "uq.ggln.w":
            data = np.clip(rng.standard_normal(shape), *config.weight_range)
        elif kind == "g":
            data = np.ones(shape)
        elif kind == "b":
            data = np.zeros(shape)
        else:
            gain = 2.0 if len(shape) == 4 and name != "head.w" else 1.0
            data = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
        params[name] = Tensor(data, requires_grad=True, name=name)
        if kind == "g":
            stem = name[:-2]
            buffers[f"{stem}.mean"] = np.zeros(shape)
            buffers[f"{stem}.var"] = np.ones(shape)
    buffers["uq.ctx.mean"] = np.zeros(config.gln_width)
    buffers["uq.ctx.var"] = np.ones(config.gln_width)
    gates = [HalfSpaceGate.random(config.gln_width, config.gln_m, rng) for _ in range(config.gln_neurons)]
    model = GLUNetModel(config, params, buffers, gates)
    counts = model.param_counts()
    log.info("GLU-Net parameters: %s", ", ".join(f"{k} {v:,}" for k, v in counts.items()))
    return model


def _as_batch(model, K):
    K = np.asarray(K, dtype=float)
    n = model.config.grid
    single = K.ndim < 4
    if K.shape[-2:] != (n, n):
        raise ShapeError("forward_mean", f"input must be {n}x{n}, got {K.shape}")
    return K.reshape(-1, model.config.in_channels, n, n), single


def forward_mean(model, K, training=False):
    """Deterministic prediction.

    Returns ``(Y, gln_out)``: Y is (3, n, n) for a single image or
    (B, 3, n, n) for a batch, channels ordered (P, U, V); gln_out is the list
    of GGLN Gaussians (one list per sample for batches).
    """
    batch, single = _as_batch(model, K)
    res = model.forward(batch, training=training, update_stats=False)
    gln = [[GaussianPair(float(m), float(v)) for m, v in zip(mr, vr)]
           for mr, vr in zip(res.gln_mu.data, res.gln_var.data)]
    if single:
        return res.Y.data[0], gln[0]
    return res.Y.data, gln


def epistemic_samples(model, K, n, seed, chunk=256):
    """``n`` outputs (n, 3, grid, grid) from sampled GGLN values for one input.

    Encoder/decoder activations are computed once; each sample draws the
    GGLN outputs independently from their Gaussians and re-runs only the
    FC2 -> resize -> add -> head tail.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1 samples, got {n}")
    batch, _ = _as_batch(model, K)
    if batch.shape[0] != 1:
        raise ShapeError("epistemic_samples", "expects a single input image")
    res = model.forward(batch, training=False)
    mu, sd = res.gln_mu.data[0], np.sqrt(res.gln_var.data[0])
    feats = res.features.data
    rng = np.random.default_rng(seed)
    draws = mu + sd * rng.standard_normal((n, mu.size))
    out = np.empty((n, model.config.out_channels, model.config.grid, model.config.grid))
    for s in range(0, n, chunk):
        out[s:s + chunk] = model.uq_to_output(feats, draws[s:s + chunk])
    return out
