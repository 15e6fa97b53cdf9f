"""CSV artefacts and the figures rendered from them."""

import csv
from pathlib import Path

import numpy as np

FIELDS = ("p", "ux", "uy")
R2_COLUMNS = ("mu_p", "var_p", "mu_ux", "var_ux", "mu_uy", "var_uy")


def _fmt(v):
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    """(header, float array of rows)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def write_loss_curve(path, result):
    write_csv(path, ("epoch", "train_mse", "test_mse"),
              [(int(e), float(tr), float(te)) for e, _, tr, te in result.curve])


def moment_r2_row(surrogate, benchmark):
    """Table-style row: R^2 of each moment image against the benchmark's."""
    from .training import field_r2
    row = []
    for f in range(3):
        row.append(field_r2(surrogate.mean[f], benchmark.mean[f]))
        row.append(field_r2(surrogate.var[f], benchmark.var[f]))
    return dict(zip(R2_COLUMNS, row))


def write_r2_table(path, rows):
    """``rows`` maps a label (e.g. "KLE32-128") to a :func:`moment_r2_row` dict."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("case",) + R2_COLUMNS)
        for label, row in rows.items():
            w.writerow([label] + [_fmt(row[c]) for c in R2_COLUMNS])


def write_pdf_curve(path, curve):
    lo = curve.lo if curve.lo is not None else np.full_like(curve.x, np.nan)
    hi = curve.hi if curve.hi is not None else np.full_like(curve.x, np.nan)
    write_csv(path, ("value", "density", "lo", "hi"), zip(curve.x, curve.density, lo, hi))


# --- figures -------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    # no software/date stamps, so identical inputs give identical bytes
    fig.savefig(path, dpi=100, metadata={"Software": None})
    fig.clf()


def plot_loss_curve(csv_path, out_path):
    plt = _pyplot()
    _, data = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(data[:, 0], data[:, 1], label="train")
    if np.all(np.isfinite(data[:, 2])):
        ax.semilogy(data[:, 0], data[:, 2], label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (standardised)")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)
    plt.close(fig)


def plot_moments(fields, out_path, titles=None):
    """Contour grid: one row per entry of ``fields`` ({label: (3, n, n) image}), one column per field."""
    plt = _pyplot()
    labels = list(fields)
    fig, axes = plt.subplots(len(labels), 3, figsize=(10, 3.2 * len(labels)), squeeze=False)
    for r, label in enumerate(labels):
        img = fields[label]
        n = img.shape[-1]
        xs = np.linspace(0, 1, n)
        for c in range(3):
            ax = axes[r, c]
            cs = ax.contourf(xs, xs, img[c], levels=20, cmap="viridis")
            fig.colorbar(cs, ax=ax)
            ax.set_aspect("equal")
            ax.set_title(f"{label} {FIELDS[c]}" if titles is None else titles[r][c], fontsize=9)
    fig.tight_layout()
    _save(fig, out_path)
    plt.close(fig)


def plot_pdfs(curves, out_path):
    """``curves`` maps a field name to {label: csv path}; bands are drawn where present."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3.2), squeeze=False)
    for ax, (field_name, sources) in zip(axes[0], curves.items()):
        for label, path in sources.items():
            _, d = read_csv(path)
            line, = ax.plot(d[:, 0], d[:, 1], label=label)
            if np.all(np.isfinite(d[:, 2:])):
                ax.fill_between(d[:, 0], d[:, 2], d[:, 3], color=line.get_color(), alpha=0.25)
        ax.set_title(field_name)
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)
    plt.close(fig)


def render_run(run_dir):
    """(Re)draw every figure that has its inputs in ``run_dir``; returns the written paths."""
    from .tensorio import read_tensor
    run = Path(run_dir)
    out = []
    if (run / "loss_curve.csv").exists():
        plot_loss_curve(run / "loss_curve.csv", run / "loss_curve.png")
        out.append(run / "loss_curve.png")
    uq = run / "uq"
    for stat in ("mean", "var"):
        fields = {}
        for src in ("surrogate", "mcs"):
            p = uq / f"{src}_{stat}.gluq"
            if p.exists():
                fields[src] = read_tensor(p)
        if fields:
            plot_moments(fields, uq / f"{stat}_contours.png")
            out.append(uq / f"{stat}_contours.png")
    curves = {}
    for name in FIELDS:
        srcs = {s: uq / f"pdf_{s}_{name}.csv" for s in ("surrogate", "mcs")
                if (uq / f"pdf_{s}_{name}.csv").exists()}
        if srcs:
            curves[name] = srcs
    if curves:
        plot_pdfs(curves, uq / "pdf.png")
        out.append(uq / "pdf.png")
    return out
