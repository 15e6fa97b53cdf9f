"""Command-line front end: generate, train, evaluate, propagate, plot.

Every command works on a run directory::

    run.json                resolved configuration
    basis/ train/ test/     KLE basis and datasets (tensor bundles)
    norm.json               standardisation fitted on the training set
    model/                  checkpoint
    loss_curve.csv
    uq/                     moment fields, PDF curves, R^2 table, figures
    manifest_<command>.json config, seeds and artefact digests per command
"""

import argparse
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .darcy import SourceSpec, generate_dataset, stack_samples
from .errors import ConfigError, GluqError, ShapeError
from .glu_net import GLUNetConfig, build_model
from .random_field import ExpKernel, Grid2D, kle_decompose
from .tensorio import (
    file_digest,
    load_basis,
    load_checkpoint,
    load_dataset,
    read_json,
    save_basis,
    save_checkpoint,
    save_dataset,
    write_json,
    write_tensor,
)
from .training import Standardizer, TrainSpec, evaluate, predict, r2_metric, train

log = logging.getLogger("gluq")

PDF_PIXEL = (0.77, 0.6)
MIN_PDF_SAMPLES = 30


@dataclass
class RunConfig:
    """Everything a run depends on; serialised verbatim into ``run.json``."""

    name: str = "desk"
    seed: int = 0
    grid: int = 33
    kernel: dict = field(default_factory=lambda: {"length_scale": 0.1, "mean": 0.0})
    q: int = 32
    dataset: dict = field(default_factory=lambda: {
        "n_train": 128, "n_test": 100, "rate": 10.0, "size": 0.125, "tol": 1e-10})
    model: dict = field(default_factory=lambda: GLUNetConfig.desk(33).to_dict())
    train: dict = field(default_factory=lambda: asdict(TrainSpec(epochs=60, lr_switch=40)))
    uq: dict = field(default_factory=lambda: {
        "n_sim": 2000, "mcs_n": 2000, "pixel": list(PDF_PIXEL), "replicates": 100,
        "band": "percentile"})

    @classmethod
    def preset(cls, scale):
        if scale == "desk":
            return cls()
        if scale == "full":
            return cls(
                name="full", grid=65, q=50,
                dataset={"n_train": 256, "n_test": 500, "rate": 10.0, "size": 0.125, "tol": 1e-10},
                model=GLUNetConfig().to_dict(), train=asdict(TrainSpec()),
                uq={"n_sim": 10000, "mcs_n": 10000, "pixel": list(PDF_PIXEL), "replicates": 100,
                    "band": "percentile"})
        raise ConfigError(f"unknown scale {scale!r}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def merged(self, overrides):
        base = asdict(self)
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        return RunConfig.from_dict(base)

    # typed views -----------------------------------------------------------
    def model_config(self):
        cfg = GLUNetConfig.from_dict(self.model)
        if cfg.grid != self.grid:
            raise ShapeError("cli", f"model grid {cfg.grid} differs from data grid {self.grid}")
        return cfg

    def train_spec(self):
        return TrainSpec(**{**self.train, "seed": self.seed})

    def source(self):
        return SourceSpec(rate=self.dataset["rate"], size=self.dataset["size"])

    def pixel(self):
        return Grid2D(self.grid).nearest_index(*self.uq["pixel"])


# --- helpers -------------------------------------------------------------------

def _manifest(run, command, cfg, artefacts):
    hashes = {}
    for rel in sorted(artefacts):
        path = run / rel
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for p in files:
            hashes[str(p.relative_to(run))] = file_digest(p)
    write_json(run / f"manifest_{command}.json",
               {"command": command, "config": asdict(cfg), "seed": cfg.seed, "artefacts": hashes})


def _load_config(run):
    return RunConfig.from_dict(read_json(run / "run.json"))


def _standardised(norm, K, Y):
    return norm.inputs(K), norm.targets(Y)


def _r2_fields(model, norm, K, Y):
    pred = norm.restore(predict(model, norm.inputs(K)))
    return r2_metric(pred, Y, per_field=True)


# --- commands ------------------------------------------------------------------

def cmd_generate(run, cfg, force=False):
    if run.exists() and any(run.iterdir()):
        if not force:
            raise ConfigError(f"{run} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(run)
    kernel = ExpKernel(**cfg.kernel)
    grid = Grid2D(cfg.grid)
    basis = kle_decompose(grid, kernel, cfg.q)
    ds = cfg.dataset
    train_s = stack_samples(generate_dataset(basis, ds["n_train"], cfg.seed, cfg.source(), tol=ds["tol"]))
    test_s = stack_samples(generate_dataset(basis, ds["n_test"], cfg.seed, cfg.source(), tol=ds["tol"],
                                            start=ds["n_train"]))
    run.mkdir(parents=True, exist_ok=True)
    write_json(run / "run.json", asdict(cfg))
    save_basis(run / "basis", basis)
    meta = {"length_scale": kernel.length_scale, "kernel_mean": kernel.mean, "rate": ds["rate"],
            "size": ds["size"], "n": cfg.grid, "q": cfg.q, "seed": cfg.seed, "tol": ds["tol"]}
    save_dataset(run / "train", *train_s, meta=dict(meta, first_index=0))
    save_dataset(run / "test", *test_s, meta=dict(meta, first_index=ds["n_train"]))
    norm = Standardizer.fit(train_s[0], train_s[1])
    write_json(run / "norm.json", norm.to_dict())
    _manifest(run, "generate", cfg, ["run.json", "basis", "train", "test", "norm.json"])
    energy = basis.energy()[-1] / grid.n_s
    print(f"KLE q={cfg.q} on {cfg.grid}x{cfg.grid}: largest eigenvalue {basis.eigenvalues[0]:.4g}, "
          f"captured variance fraction {energy:.4f}")
    print(f"wrote {ds['n_train']} train and {ds['n_test']} test samples to {run}")


def cmd_train(run, cfg, epochs=None):
    K, Y, _, _ = load_dataset(run / "train")
    Kt, Yt, _, _ = load_dataset(run / "test")
    mcfg = cfg.model_config()
    if K.shape[-1] != mcfg.grid:
        raise ShapeError("train", f"dataset grid {K.shape[-1]} vs model grid {mcfg.grid}")
    norm = Standardizer.from_dict(read_json(run / "norm.json"))
    spec = cfg.train_spec()
    if epochs is not None:
        spec = TrainSpec(**{**asdict(spec), "epochs": epochs, "lr_switch": min(spec.lr_switch, epochs)})
    model = build_model(mcfg, seed=cfg.seed)
    model.norm = norm.to_dict()
    test = _standardised(norm, Kt, Yt)
    result = train(model, _standardised(norm, K, Y), spec, test_data=test)
    test_mse = evaluate(model, *test)
    r2 = _r2_fields(model, norm, Kt, Yt)
    save_checkpoint(run / "model", model, meta={
        "seed": cfg.seed, "train_spec": asdict(spec), "train_mse": result.curve[-1][2],
        "test_mse": test_mse, "r2": r2.tolist(), "param_counts": model.param_counts()})
    from .reports import write_loss_curve
    write_loss_curve(run / "loss_curve.csv", result)
    _manifest(run, "train", cfg, ["model", "loss_curve.csv"])
    print(f"epochs {spec.epochs}  batch {spec.batch_size}  lr {spec.lr}->{spec.lr_after} after {spec.lr_switch}"
          f"  weight decay {spec.weight_decay}")
    print(f"final train MSE {result.curve[-1][2]:.6g}  test MSE {test_mse:.6g}")
    print("test R2  p {:.4f}  ux {:.4f}  uy {:.4f}".format(*r2))
    return model


def cmd_evaluate(run, cfg):
    model, meta = load_checkpoint(run / "model")
    Kt, Yt, _, _ = load_dataset(run / "test")
    norm = Standardizer.from_dict(model.norm)
    test_mse = evaluate(model, *_standardised(norm, Kt, Yt))
    r2 = _r2_fields(model, norm, Kt, Yt)
    print(f"test MSE {test_mse:.17g} (logged at save: {meta['test_mse']:.17g})")
    print("test R2  p {:.4f}  ux {:.4f}  uy {:.4f}".format(*r2))
    return test_mse, r2


def cmd_propagate(run, cfg, with_mcs=False, n_sim=None, plots=True):
    from . import reports
    from .uq import mcs_benchmark, propagate_aleatoric
    model, _ = load_checkpoint(run / "model")
    basis = load_basis(run / "basis")
    uq_cfg = cfg.uq
    n_sim = uq_cfg["n_sim"] if n_sim is None else n_sim
    seed = cfg.seed + 1   # separate stream from the training/test draws
    px = cfg.pixel()
    sur = propagate_aleatoric(model, basis, n_sim, seed, probes=[px],
                              epistemic_replicates=uq_cfg["replicates"])
    out = run / "uq"
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    write_tensor(out / "surrogate_mean.gluq", sur.mean)
    write_tensor(out / "surrogate_var.gluq", sur.var)
    mcs = None
    if with_mcs:
        mcs = mcs_benchmark(basis, uq_cfg["mcs_n"] if n_sim is None else n_sim, seed, cfg.source(),
                            tol=cfg.dataset["tol"], probes=[px])
        write_tensor(out / "mcs_mean.gluq", mcs.mean)
        write_tensor(out / "mcs_var.gluq", mcs.var)
        label = f"KLE{cfg.q}-{cfg.dataset['n_train']}"
        row = reports.moment_r2_row(sur, mcs)
        reports.write_r2_table(out / "r2_table.csv", {label: row})
        print("moment R2  " + "  ".join(f"{k} {v:.4f}" for k, v in row.items()))
    if n_sim < MIN_PDF_SAMPLES:
        log.warning("skipping pixel densities: %d samples, need %d", n_sim, MIN_PDF_SAMPLES)
    else:
        _write_pdfs(out, px, sur, mcs, uq_cfg["band"])
    if plots:
        reports.render_run(run)
    _manifest(run, "propagate", cfg, ["uq"])
    print(f"propagated {n_sim} samples; PDF probe at grid node {px}; outputs in {out}")
    return sur, mcs


def _write_pdfs(out, px, sur, mcs, band):
    from . import reports
    from .uq import pdf_at_pixel, silverman_bandwidth
    for f, name in enumerate(reports.FIELDS):
        sets = {"surrogate": sur.traces[px][:, f]}
        if mcs is not None:
            sets["mcs"] = mcs.traces[px][:, f]
        pool = np.concatenate(list(sets.values()))
        pad = 5 * max(silverman_bandwidth(v) for v in sets.values())
        x = np.linspace(pool.min() - pad, pool.max() + pad, 256)
        epi = sur.epistemic.get(px)
        for src, samples in sets.items():
            band_sets = epi[:, :, f] if src == "surrogate" and epi is not None else None
            reports.write_pdf_curve(out / f"pdf_{src}_{name}.csv",
                                    pdf_at_pixel(samples, x, band_sets, band=band))


def cmd_plot(run, cfg):
    from .reports import render_run
    for p in render_run(run):
        print(p)


# --- argument handling -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gluq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "evaluate", "propagate", "plot"):
        s = sub.add_parser(name)
        s.add_argument("--run", type=Path, default=None, help="run directory (default runs/<name>)")
        s.add_argument("--config", type=Path, help="JSON file overriding the preset")
        s.add_argument("--scale", choices=("full", "desk"), default="desk")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            s.add_argument("--force", action="store_true")
        if name == "train":
            s.add_argument("--epochs", type=int, default=None)
        if name == "propagate":
            s.add_argument("--with-mcs", action="store_true")
            s.add_argument("--n-sim", type=int, default=None)
            s.add_argument("--no-plots", action="store_true")
    return p


def resolve_config(args):
    """Generate builds the config from preset + overrides; later commands reuse run.json."""
    if args.command == "generate" or args.run is None or not (args.run / "run.json").exists():
        cfg = RunConfig.preset(args.scale)
        if args.config is not None:
            cfg = cfg.merged(read_json(args.config))
    else:
        cfg = _load_config(args.run)
        if args.config is not None:
            cfg = cfg.merged(read_json(args.config))
    if args.seed is not None:
        cfg = cfg.merged({"seed": args.seed})
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = args.run if args.run is not None else Path("runs") / cfg.name
        if args.command != "generate" and not (run / "run.json").exists():
            raise ConfigError(f"{run} has no run.json; run 'gluq generate' first")
        if args.command == "generate":
            cmd_generate(run, cfg, force=args.force)
        elif args.command == "train":
            cmd_train(run, cfg, epochs=args.epochs)
        elif args.command == "evaluate":
            cmd_evaluate(run, cfg)
        elif args.command == "propagate":
            cmd_propagate(run, cfg, with_mcs=args.with_mcs, n_sim=args.n_sim, plots=not args.no_plots)
        else:
            cmd_plot(run, cfg)
    except GluqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
