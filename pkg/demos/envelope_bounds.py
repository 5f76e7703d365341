"""How the Moreau-Yosida envelopes of a kinked field behave as kappa shrinks.

The field is a minimum of cones: Lipschitz, semiconcave, with corners. Its
lower envelope smooths the corners from below and the upper envelope from
above. The proximal shift b shrinks like kappa^(3/2), and the envelopes
approach the field linearly in kappa.

Run: python demos/envelope_bounds.py
"""

import numpy as np

from weakkam.envelope import (envelope_field, gap_constant, lower_envelope_many, shift_constant,
                              upper_envelope_many)
from weakkam.torus import GridScalarField, GridSpec

grid = GridSpec(1, 256)
x = grid.nodes()[:, 0]
dist = lambda c: np.abs((x - c + 0.5) % 1.0 - 0.5)
phi = GridScalarField(grid, np.minimum(0.1 + 2.0 * dist(0.2), 0.3 + 1.0 * dist(0.7)))
K, osc = phi.lipschitz(), phi.oscillation()
C1, C2 = shift_constant(K, osc, 0.2), gap_constant(K, osc, 0.2)
print(f"field: Lipschitz {K:.3f}, oscillation {osc:.3f}; C1 = {C1:.3f}, C2 = {C2:.3f}\n")

print(" kappa   max|b| lower   max|b| upper   C1 kappa^1.5   max gap   C2 kappa")
nodes = grid.nodes()
for kappa in (0.2, 0.1, 0.05, 0.025):
    lo, bl = lower_envelope_many(phi, kappa, nodes)
    up, bu = upper_envelope_many(phi, kappa, nodes)
    gap = max(np.max(phi.flat - lo), np.max(up - phi.flat))
    print(f"{kappa:6.3f}   {np.abs(bl).max():12.5f}   {np.abs(bu).max():12.5f}   {C1 * kappa**1.5:12.5f}"
          f"   {gap:7.5f}   {C2 * kappa:8.5f}")

# The lower envelope is flat near the upward corner at x = 0.2 only if the
# corner is a minimum; here it is, so the envelope rounds it off.
env = envelope_field(phi, 0.05, "lower")
i = int(0.2 * grid.n)
print(f"\nat the corner x = 0.2: phi = {phi.flat[i]:.4f}, lower envelope = {env.flat[i]:.4f}")
