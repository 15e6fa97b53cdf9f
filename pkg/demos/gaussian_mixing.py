"""How a gated Gaussian neuron combines its inputs.

A product of weighted Gaussians is again Gaussian; its precision is the
weighted sum of input precisions. Negative weights are allowed, which is
why the variance needs a clamp. The local loss is convex in the
precision weights, so one gradient step on the selected row is safe.
"""

import numpy as np

from gluq.errors import DegenerateMixture
from gluq.ggln import GaussianPair, GGLNLayer, HalfSpaceGate, hessian_eta, local_loss, loss_gradient, pog_mix

a, b = GaussianPair(0.0, 1.0), GaussianPair(2.0, 0.25)
for w in ([1, 1], [0.5, 2.0], [2.0, -0.25]):
    out = pog_mix([a, b], w)
    print(f"weights {w}: mean {out.mu:.3f}, variance {out.var:.3f}")

# precisions 2/1 and -0.5/0.25 cancel exactly
try:
    pog_mix([a, b], [2.0, -0.5])
except DegenerateMixture as exc:
    print("weights [2.0, -0.5]:", exc)

# Raising the variance to its floor also scales the mean: 0.5 * (1/0.01 + 1/0.01) = 100.
sharp = [GaussianPair(1.0, 0.01)] * 2
print("two sharp inputs, variance floor 0.5:", pog_mix(sharp, [1, 1], var_range=(0.5, 1e5)))
# The layer can instead take the mean from the unclipped ratio and project it into a box.
boxed = GGLNLayer(np.ones((1, 2, 2)), [HalfSpaceGate(np.ones((1, 1)), np.zeros(1))],
                  var_range=(0.5, 1e5), mean_range=(-1.0, 1.0))
m, v, _ = boxed.forward(np.ones((1, 2)), np.full(2, 0.01), np.zeros((1, 1)))
print(f"same inputs with a separate mean box: mean {m[0, 0]:.3f}, variance {v[0, 0]:.3f}")

y, inputs, w = 1.3, [a, b], np.array([0.8, 1.1])
print(f"loss {local_loss(y, inputs, w):.4f}, gradient {loss_gradient(y, inputs, w)}")
eig = np.linalg.eigvalsh(hessian_eta(y, inputs, w))
print(f"Hessian eigenvalues in eta {eig} (all >= 0: convex)")

# a layer picks one weight row per neuron from the sign pattern of its context
rng = np.random.default_rng(0)
layer = GGLNLayer.random(n_in=3, n_out=2, m=4, context_dim=3, rng=rng)
z = rng.standard_normal((5, 3))
mu, var, rows = layer.forward(z, np.full(3, 0.01), z)
print("rows selected per input:\n", rows)
