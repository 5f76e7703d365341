"""The effective Hamiltonian of the pendulum, computed three independent ways.

For L(x, v) = |v|^2/2 - cos(2 pi x) the critical value is max V = 1. We
recover it from

1. the fixed point of the discrete Lax-Oleinik semigroup (cell problem),
2. the average running cost of a proximal-aiming trajectory, and
3. a linear program over holonomic measures on a (x, v) lattice.

Run: python demos/pendulum_three_ways.py
"""

import time

from weakkam.aiming import AimingSchedule, simulate
from weakkam.cell import solve_cell
from weakkam.lagrangian import mechanical, pendulum_potential
from weakkam.mather import HolonomyBasis, build_lp, lp_velocity_box, solve_lp
from weakkam.torus import GridSpec

spec = mechanical(pendulum_potential())

# 1. Cell problem. phi is a weak KAM solution, hbar the critical value.
t0 = time.perf_counter()
sol = solve_cell(spec, GridSpec(1, 256))
print(f"cell solver      hbar = {sol.hbar:.5f}   ({sol.iterations} steps, {time.perf_counter() - t0:.1f} s)")

# 2. Proximal aiming. The schedule picks kappa and the partition fineness
# so that the trajectory's average cost is within epsilon of -hbar.
sched = AimingSchedule.build(0.1, sol.phi, spec)
r = 20.0
t0 = time.perf_counter()
proc = simulate([0.5], sol.phi, sched.kappa, sched.partition(r), spec, sched)
print(f"aiming average   hbar = {-proc.running_cost / r:.5f}   "
      f"(r = {r:g}, {len(proc.velocities)} steps, {time.perf_counter() - t0:.1f} s)")
print(f"  trajectory starts at the bottom of the well and ends at x = {proc.end[0]:.4f}")

# 3. Holonomic LP. The minimizer is a discrete Mather measure.
t0 = time.perf_counter()
lp = build_lp(spec, GridSpec(1, 64), lp_velocity_box(spec), HolonomyBasis(1, 8))
value, measure = solve_lp(lp)
print(f"holonomic LP     hbar = {-value:.5f}   ({lp.c.size} columns, {time.perf_counter() - t0:.1f} s)")
print(f"  Mather measure mass within 0.1 of (x, v) = (0, 0): {measure.mass_near([0.0], [0.0], 0.1):.3f}")
