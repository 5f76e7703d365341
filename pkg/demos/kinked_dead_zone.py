"""The kink lambda |v| creates a dead zone in the optimal feedback.

For L = |v|^2/2 + lambda |v| - V(x) the Hamiltonian is ((|p| - lambda)_+)^2/2 + V,
flat for |p| <= lambda. Any covector in that band is answered with v = 0, so
aiming trajectories stop wherever the weak KAM solution is shallow enough,
not only at the Mather set. The critical value stays max V = 1.

Run: python demos/kinked_dead_zone.py
"""

import numpy as np

from weakkam.aiming import AimingSchedule, feedback_direction, simulate
from weakkam.cell import solve_cell
from weakkam.lagrangian import VelocityBox, argmax_velocity, kinked, pendulum_potential, velocity_bound
from weakkam.torus import GridSpec

momenta = (0.25, 0.75, 1.5, 3.0)
for lam in (0.0, 0.5, 1.0):
    spec = kinked(lam, pendulum_potential())
    box = VelocityBox(1, velocity_bound(spec, max(momenta)), 64)
    vs = [float(argmax_velocity(spec, [0.0], [p], box)[0]) for p in momenta]
    print(f"lambda = {lam:3.1f}: argmax velocity at p = 0.25, 0.75, 1.5, 3.0 -> "
          + ", ".join(f"{v:5.2f}" for v in vs))

spec = kinked(1.0, pendulum_potential())
sol = solve_cell(spec, GridSpec(1, 256))
print(f"\nkinked pendulum, lambda = 1: hbar = {sol.hbar:.5f}")
sched = AimingSchedule.build(0.1, sol.phi, spec)
for x in np.linspace(0.0, 0.5, 6):
    v = feedback_direction(sol.phi, sched.kappa, spec, [x])
    print(f"  feedback at x = {x:.1f}: v = {v[0]:+.4f}")

proc = simulate([0.35], sol.phi, sched.kappa, sched.partition(3.0), spec, sched)
print(f"\nfrom x = 0.35 the trajectory settles at x = {proc.end[0]:.4f}; "
      f"average cost {proc.running_cost / proc.r:.4f}")
