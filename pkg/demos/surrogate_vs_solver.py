"""Train a small surrogate in-process and compare one test prediction with the solver.

Uses the desk configuration and schedule (60 epochs, about two minutes on one core).
Run: python demos/surrogate_vs_solver.py [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gluq.experiments import DESK_SPEC, fit, make_data, predict_fields
from gluq.glu_net import GLUNetConfig
from gluq.training import r2_metric

_, (K, Y, _), (Kt, Yt, _) = make_data(n=33, q=32, n_train=128, n_test=50, seed=3)
model, norm, result = fit(GLUNetConfig.desk(33), K, Y, DESK_SPEC, seed=3)
pred = predict_fields(model, norm, Kt)
print("held-out R2  p {:.3f}  ux {:.3f}  uy {:.3f}".format(*r2_metric(pred, Yt, per_field=True)))

fig, axes = plt.subplots(3, 3, figsize=(10, 9))
for row, name in enumerate(("pressure", "u_x", "u_y")):
    truth, guess = Yt[0, row], pred[0, row]
    lim = abs(truth).max()
    for ax, img, label in zip(axes[row], (truth, guess, guess - truth), ("solver", "surrogate", "error")):
        im = ax.imshow(img, origin="lower", extent=(0, 1, 0, 1), cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(f"{name}: {label}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[row].tolist(), shrink=0.8)
out = sys.argv[1] if len(sys.argv) > 1 else "surrogate_vs_solver.png"
fig.savefig(out, dpi=100)
print("wrote", out)
