"""Trying to break the lower estimate phi(x(r)) + int L >= phi(x(0)) - hbar r.

No controlled process should beat the weak KAM solution by more than the
numerical slack. We throw random processes at it, then a simulated-annealing
adversary that perturbs velocities to minimize the margin. The best it finds
is to park at the hilltop x = 0, where L(0, 0) = -1 = -hbar.

Run: python demos/hunting_for_counterexamples.py
"""

from weakkam.cell import solve_cell
from weakkam.lagrangian import mechanical, pendulum_potential
from weakkam.lower_bound import anneal_adversary, fuzz
from weakkam.torus import GridSpec

spec = mechanical(pendulum_potential())
sol = solve_cell(spec, GridSpec(1, 256))
r = 10.0
budget = sol.residual_sup * r + 1e-3 * r
print(f"hbar = {sol.hbar:.5f}; a violation needs margin < -{budget:.4f}\n")

report = fuzz(sol.phi, sol.hbar, spec, seeds=range(30), r=r, residual_sup=sol.residual_sup)
for kind, entry in report.items():
    print(f"{kind:28s} min margin {entry['min_margin']:9.5f}  (seed {entry['argmin_seed']})")

proc, margin, stats = anneal_adversary(sol.phi, sol.hbar, spec, r=r, proposals=5000, seed=0)
print(f"{'annealed adversary':28s} min margin {margin:9.5f}")
hilltop_gap = min(proc.end[0] % 1.0, -proc.end[0] % 1.0)
print(f"\nthe adversary's best process ends {hilltop_gap:.4f} from the hilltop "
      f"with mean |v| = {abs(proc.velocities).mean():.4f}")
