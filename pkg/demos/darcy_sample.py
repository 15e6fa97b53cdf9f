"""Solve the two-well Darcy problem for one random permeability field.

Prints the solver diagnostics and draws pressure and both velocity fields.
Run: python demos/darcy_sample.py [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gluq.darcy import divergence, solve_darcy, source_field
from gluq.random_field import ExpKernel, Grid2D, draw_z, kle_decompose, sample_log_permeability

grid = Grid2D(65)
basis = kle_decompose(grid, ExpKernel(), 50)
field = sample_log_permeability(basis, draw_z(seed=1, index=0, q=50))
f = source_field(grid)

sol = solve_darcy(field, f)
print(f"Krylov iterations: {sol.info.iterations}, final relative residual {sol.info.relative_residual:.2e}")
print(f"mean pressure {sol.P.mean():.1e}, worst cell imbalance {np.abs(divergence(sol.K, sol.P) - f).max():.1e}")

fig, axes = plt.subplots(1, 4, figsize=(15, 3.4))
for ax, img, title in zip(axes, (np.log(sol.K), sol.P, sol.U, sol.V), ("log K", "pressure", "u_x", "u_y")):
    im = ax.imshow(img, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else "darcy_sample.png"
fig.savefig(out, dpi=100)
print("wrote", out)
