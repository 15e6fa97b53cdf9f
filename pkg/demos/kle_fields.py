"""Sample log-normal permeability fields and see how much variance q terms keep.

Run: python demos/kle_fields.py [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gluq.random_field import ExpKernel, Grid2D, KLEBasis, draw_z, kle_decompose, sample_log_permeability

grid = Grid2D(65)
basis = kle_decompose(grid, ExpKernel(length_scale=0.1), 500)

# the kernel has unit diagonal, so the full spectrum sums to n_s
energy = basis.energy() / grid.n_s
for q in (50, 200, 500):
    print(f"q={q:4d} keeps {energy[q - 1]:.1%} of the pointwise variance")

fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
for ax, q in zip(axes, (50, 200, 500)):
    truncated = KLEBasis(grid, basis.kernel, basis.eigenvalues[:q], basis.eigenvectors[:, :q])
    field = sample_log_permeability(truncated, draw_z(0, 0, q)).log_values
    im = ax.imshow(field, origin="lower", extent=(0, 1, 0, 1), cmap="cividis")
    ax.set_title(f"log K, KLE{q}")
    fig.colorbar(im, ax=ax)
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else "kle_fields.png"
fig.savefig(out, dpi=100)
print("wrote", out)
