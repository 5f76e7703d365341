"""Occupation measures of aiming trajectories become holonomic at rate 1/r.

For a trajectory on [0, r] the time-averaged measure mu_r satisfies
int grad f . v dmu_r = (f(x(r)) - f(x(0))) / r, so every holonomy defect
decays like 1/r. Its action int L dmu_r is the average running cost.

Run: python demos/occupation_measures.py
"""

from weakkam.aiming import AimingSchedule, simulate
from weakkam.cell import solve_cell
from weakkam.lagrangian import mechanical, pendulum_potential
from weakkam.mather import HolonomyBasis, lp_velocity_box, occupation_measure
from weakkam.torus import GridSpec

spec = mechanical(pendulum_potential())
sol = solve_cell(spec, GridSpec(1, 256))
sched = AimingSchedule.build(0.1, sol.phi, spec)
basis = HolonomyBasis(1, 4)

print("     r   max holonomy defect   defect * r   action")
for r in (2.5, 5.0, 10.0, 20.0):
    proc = simulate([0.5], sol.phi, sched.kappa, sched.partition(r), spec, sched)
    mu = occupation_measure(proc, GridSpec(1, 256), lp_velocity_box(spec))
    defect = mu.holonomy_residuals(basis).max()
    print(f"{r:6.1f}   {defect:19.5f}   {defect * r:10.4f}   {mu.action(spec):7.4f}")
