"""Falsification harness for the lower estimate.

For a cell solution ``(phi, hbar)`` every controlled process satisfies

    int_0^r L(x, x') dt + phi(x(r)) >= phi(x(0)) - hbar r.

The inequality cannot be proven by sampling, so this module searches for
violations: random and structured processes, plus a simulated-annealing
adversary over piecewise-constant velocities. Any margin below the numerical
slack (cell-solver residual times ``r`` plus a quadrature budget) is reported
as a counterexample.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aiming import ControlledProcess, quadrature_budget, segment_costs
from .cell import centered_gradient
from .errors import InvalidArgument, PropertyViolation
from .lagrangian import LagrangianSpec, VelocityBox, argmax_velocity, velocity_bound
from .torus import GridScalarField, interpolate, wrap

__all__ = [
    "GENERATOR_KINDS",
    "ProcessGenerator",
    "LowerBoundViolation",
    "total_functional",
    "lower_margin",
    "verify_lower",
    "anneal_adversary",
    "fuzz",
    "field_hash",
]

GENERATOR_KINDS = ("random-piecewise-constant", "bang-bang", "gradient-descent-heuristic", "adversarial-annealed")


class LowerBoundViolation(PropertyViolation):
    """A process beat the lower bound by more than the numerical slack."""


def field_hash(phi: GridScalarField) -> str:
    return hashlib.sha256(np.ascontiguousarray(phi.values, dtype="<f8").tobytes()).hexdigest()


def total_functional(proc: ControlledProcess, phi: GridScalarField, spec: LagrangianSpec | None = None) -> float:
    """``phi(x(r))`` plus the running cost.

    The stored cumulative cost is used unless ``spec`` is given, in which case
    the segments are re-integrated with the default quadrature.
    """
    cost = proc.running_cost if spec is None else float(proc.requadrature(spec).sum())
    return float(interpolate(phi, proc.end)) + cost


def lower_margin(proc: ControlledProcess, phi: GridScalarField, hbar: float) -> float:
    """``total_functional - (phi(x(0)) - hbar r)``."""
    return total_functional(proc, phi) - (float(interpolate(phi, proc.start)) - hbar * proc.r)


def verify_lower(proc: ControlledProcess, phi: GridScalarField, hbar: float, spec: LagrangianSpec,
                 residual_sup: float = 0.0, dump_dir=None) -> float:
    """Margin of the lower estimate for ``proc``.

    Raises
    ------
    LowerBoundViolation
        If the margin is below ``-(residual_sup * r + quadrature budget)``.
        The report holds the slack breakdown and, when ``dump_dir`` is set,
        the paths of the dumped process CSV and context JSON.
    """
    margin = lower_margin(proc, phi, hbar)
    quad = quadrature_budget(proc, spec) if len(proc.times) > 1 else 0.0
    slack = residual_sup * proc.r + quad
    if margin >= -slack:
        return margin
    report = {
        "margin": margin,
        "slack": {"cell_defect": residual_sup * proc.r, "quadrature": quad, "total": slack},
        "hbar": hbar,
        "phi_sha256": field_hash(phi),
        "r": proc.r,
    }
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        proc.to_csv(dump_dir / "counterexample.csv")
        (dump_dir / "counterexample.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        report["files"] = ["counterexample.csv", "counterexample.json"]
    raise LowerBoundViolation(f"lower estimate violated: margin {margin:.6g} < -{slack:.6g}", report)


def _ball_sample(rng, n, d, radius):
    if d == 1:
        return rng.uniform(-radius, radius, size=(n, 1))
    ang = rng.uniform(0, 2 * np.pi, size=n)
    rad = radius * np.sqrt(rng.uniform(0, 1, size=n))
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _clip_ball(v, radius):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > radius, v * (radius / np.maximum(norm, 1e-300)), v)


@dataclass(frozen=True)
class ProcessGenerator:
    """Seeded source of controlled processes on ``[0, r]``.

    ``cap`` bounds every velocity and ``segments`` the number of
    constant-velocity pieces.
    """

    kind: str
    seed: int
    cap: float
    segments: int = 64
    r: float = 10.0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise InvalidArgument(f"unknown generator kind {self.kind!r}")
        if not (math.isfinite(self.cap) and self.cap >= 0):
            raise InvalidArgument("velocity cap must be finite and nonnegative")
        if not 1 <= self.segments <= 64:
            raise InvalidArgument("segment count must lie in [1, 64]")
        if not self.r > 0:
            raise InvalidArgument("horizon must be positive")

    @classmethod
    def for_solution(cls, kind: str, seed: int, spec: LagrangianSpec, phi: GridScalarField,
                     segments: int = 64, r: float = 10.0) -> ProcessGenerator:
        """Generator with the default cap ``2 C_3``."""
        return cls(kind, seed, 2.0 * velocity_bound(spec, phi.lipschitz()), segments, r)

    def generate(self, spec: LagrangianSpec, phi: GridScalarField | None = None,
                 hbar: float = 0.0, y=None) -> ControlledProcess:
        rng = np.random.default_rng(self.seed)
        d = spec.d
        y = rng.uniform(0, 1, size=d) if y is None else wrap(np.asarray(y, dtype=float).reshape(d))
        if self.kind == "adversarial-annealed":
            if phi is None:
                raise InvalidArgument("the annealed adversary needs phi")
            return anneal_adversary(phi, hbar, spec, self.r, proposals=2_000, seed=self.seed,
                                    segments=self.segments, cap=self.cap, y=y)[0]
        m = int(rng.integers(1, self.segments + 1))
        cuts = np.sort(rng.uniform(0, self.r, size=m - 1))
        times = np.concatenate([[0.0], cuts, [self.r]])
        times = np.unique(times)
        m = times.size - 1
        if self.kind == "random-piecewise-constant":
            vel = _ball_sample(rng, m, d, self.cap)
        elif self.kind == "bang-bang":
            axes = rng.integers(0, d, size=m)
            signs = rng.choice([-1.0, 1.0], size=m)
            vel = np.zeros((m, d))
            vel[np.arange(m), axes] = signs * self.cap
        else:
            if phi is None:
                raise InvalidArgument("the gradient heuristic needs phi")
            return self._descend(spec, phi, y, times, rng)
        return ControlledProcess.from_velocities(y, times, vel, spec)

    def _descend(self, spec, phi, y, times, rng):
        # follow the feedback built from finite-difference slopes of phi, with noise
        grad = centered_gradient(phi)
        kmax = float(np.max(np.linalg.norm(grad, axis=1)))
        box = VelocityBox(spec.d, velocity_bound(spec, kmax), 64)
        gfield = [GridScalarField(phi.grid, grad[:, j].reshape(phi.grid.shape)) for j in range(spec.d)]
        x = np.array(y, dtype=float)
        vel = np.empty((times.size - 1, spec.d))
        for i, dt in enumerate(np.diff(times)):
            p = np.array([float(interpolate(g, x)) for g in gfield])
            v = argmax_velocity(spec, x, -p, box)
            v = _clip_ball(v + rng.normal(scale=0.1 * (1 + self.cap / 10), size=spec.d), self.cap)
            vel[i] = v
            x = wrap(x + dt * v)
        return ControlledProcess.from_velocities(y, times, vel, spec)


def _margin_fast(y, vel, dt, phi, hbar, spec):
    # margin of a uniform-partition process without building a ControlledProcess
    disp = np.cumsum(dt * vel, axis=0)
    starts = y[None, :] + np.vstack([np.zeros((1, y.size)), disp[:-1]])
    cost = float(segment_costs(spec, starts, vel, np.full(vel.shape[0], dt)).sum())
    end = wrap(y + disp[-1])
    return cost + float(interpolate(phi, end)) - float(interpolate(phi, wrap(y))) + hbar * dt * vel.shape[0]


def anneal_adversary(phi: GridScalarField, hbar: float, spec: LagrangianSpec, r: float = 10.0,
                     proposals: int = 10_000, seed: int = 0, segments: int = 64, cap: float | None = None,
                     y=None, t_start: float = 0.01, t_end: float = 1e-6) -> tuple[ControlledProcess, float, dict]:
    """Simulated annealing over piecewise-constant velocities minimizing the lower margin.

    The partition is uniform with ``segments`` pieces. Proposals perturb or
    redraw one velocity, shrink all velocities, zero a block of them, or move
    the start point. Acceptance is Metropolis with a geometric temperature
    schedule from ``t_start`` to ``t_end``. Returns the best process, its margin and search statistics.
    """
    if proposals < 1:
        raise InvalidArgument("need at least one proposal")
    rng = np.random.default_rng(seed)
    d = spec.d
    cap = 2.0 * velocity_bound(spec, phi.lipschitz()) if cap is None else cap
    dt = r / segments
    y = rng.uniform(0, 1, size=d) if y is None else wrap(np.asarray(y, dtype=float).reshape(d))
    vel = np.zeros((segments, d))
    cur = _margin_fast(y, vel, dt, phi, hbar, spec)
    best, best_y, best_vel = cur, y.copy(), vel.copy()
    accepted = 0
    ratio = (t_end / t_start) ** (1.0 / max(1, proposals - 1))
    temp = t_start
    for _ in range(proposals):
        ny, nvel = y, vel
        move = rng.uniform()
        scale = 10.0 ** rng.uniform(-4, 0)
        if move < 0.15:
            ny = wrap(y + rng.normal(scale=0.5 * scale, size=d))
        elif move < 0.25:
            # global moves: shrink every velocity, or zero a contiguous block
            if rng.uniform() < 0.5:
                nvel = vel * (1.0 - scale)
            else:
                lo = int(rng.integers(segments))
                nvel = vel.copy()
                nvel[lo:lo + int(rng.integers(1, segments + 1))] = 0.0
        else:
            nvel = vel.copy()
            i = int(rng.integers(segments))
            if move < 0.3:
                nvel[i] = _ball_sample(rng, 1, d, cap)[0]
            else:
                nvel[i] = _clip_ball(vel[i] + rng.normal(scale=scale * cap, size=d), cap)
        cand = _margin_fast(ny, nvel, dt, phi, hbar, spec)
        if cand <= cur or rng.uniform() < math.exp(-(cand - cur) / temp):
            y, vel, cur = ny, nvel, cand
            accepted += 1
            if cur < best:
                best, best_y, best_vel = cur, y.copy(), vel.copy()
        temp *= ratio
    proc = ControlledProcess.from_velocities(best_y, np.linspace(0.0, r, segments + 1), best_vel, spec)
    stats = {"proposals": proposals, "accepted": accepted, "best_margin": best, "cap": cap}
    return proc, lower_margin(proc, phi, hbar), stats


def _fuzz_one(args):
    kind, seed, spec_cfg, grid_d, grid_n, values, hbar, residual_sup, r, segments = args
    from .torus import GridSpec

    spec = LagrangianSpec.from_config(spec_cfg)
    phi = GridScalarField(GridSpec(grid_d, grid_n), np.asarray(values))
    gen = ProcessGenerator.for_solution(kind, seed, spec, phi, segments, r)
    proc = gen.generate(spec, phi, hbar)
    return seed, lower_margin(proc, phi, hbar), residual_sup * r + quadrature_budget(proc, spec)


def fuzz(phi: GridScalarField, hbar: float, spec: LagrangianSpec, kinds=GENERATOR_KINDS[:3], seeds=range(100),
         r: float = 10.0, segments: int = 64, residual_sup: float = 0.0, workers: int | None = None) -> dict:
    """Evaluate the lower margin on many generated processes.

    With ``workers`` the proposals run in a process pool; results are reduced
    in seed order so the report does not depend on scheduling.
    """
    values = np.asarray(phi.values).tolist()
    jobs = [(k, int(s), spec.to_config(), phi.grid.d, phi.grid.n, values, hbar, residual_sup, r, segments)
            for k in kinds for s in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fuzz_one, jobs))
    else:
        results = [_fuzz_one(j) for j in jobs]
    report = {}
    for (kind, *_), (seed, margin, slack) in zip(jobs, results):
        entry = report.setdefault(kind, {"min_margin": math.inf, "argmin_seed": None, "violations": []})
        if margin < entry["min_margin"]:
            entry["min_margin"], entry["argmin_seed"] = margin, seed
        if margin < -slack:
            entry["violations"].append({"seed": seed, "margin": margin, "slack": slack})
    return report
