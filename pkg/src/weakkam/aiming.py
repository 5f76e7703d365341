"""Proximal-aiming feedback and its step-by-step (Krasovskii-Subbotin) rollout.

At a state ``x`` the feedback computes the lower envelope of ``phi`` to get
the shift ``b`` and covector ``p = -b / kappa^2`` and then picks

    v = argmax_v [ -p.v - L(x + b, v) ].

The rollout freezes ``v`` on each partition interval. :class:`AimingSchedule`
makes the choice of ``kappa`` and of the partition fineness constructive and
:func:`upper_estimate_check` evaluates the resulting upper bound term by term.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .envelope import gap_constant, lower_envelope, search_radius, shift_constant
from .errors import InvalidArgument, PropertyViolation
from .lagrangian import LagrangianSpec, VelocityBox, argmax_velocity, modulus, velocity_bound
from .torus import GridScalarField, interpolate, wrap

__all__ = [
    "Partition",
    "ControlledProcess",
    "AimingSchedule",
    "segment_costs",
    "feedback_direction",
    "simulate",
    "upper_estimate_check",
]

QUAD_POINTS = 10
_CHUNK = 200_000


@dataclass(frozen=True)
class Partition:
    """Times ``0 = t_0 < t_1 < ... < t_n = r``."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1 or t[0] != 0.0:
            raise InvalidArgument("partition must be a 1-D array starting at 0")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidArgument("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, r: float, fineness: float) -> Partition:
        """Uniform partition of ``[0, r]`` with step at most ``fineness``."""
        if r < 0 or fineness <= 0:
            raise InvalidArgument("need r >= 0 and fineness > 0")
        n = max(1, math.ceil(r / fineness - 1e-9)) if r > 0 else 0
        return cls(np.linspace(0.0, r, n + 1))

    @property
    def r(self) -> float:
        return float(self.times[-1])

    @property
    def fineness(self) -> float:
        return float(np.max(np.diff(self.times))) if self.times.size > 1 else 0.0

    def __len__(self):
        return self.times.size - 1


def segment_costs(spec: LagrangianSpec, positions, velocities, durations, points: int = QUAD_POINTS) -> np.ndarray:
    """``int_0^dt L(x_i + s v_i, v_i) ds`` per segment.

    Composite Gauss-Legendre: each segment is split so that every piece
    covers at most a quarter period of the fastest cosine mode.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, spec.d)
    velocities = np.asarray(velocities, dtype=float).reshape(-1, spec.d)
    durations = np.asarray(durations, dtype=float).reshape(-1)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    speed = np.linalg.norm(velocities, axis=1)
    pieces = np.maximum(1, np.ceil(4.0 * spec.potential.max_frequency * speed * durations)).astype(np.int64)
    # expand to one row per piece
    owner = np.repeat(np.arange(durations.size), pieces)
    first = np.repeat(np.cumsum(pieces) - pieces, pieces)
    local = np.arange(owner.size) - first
    h = durations[owner] / pieces[owner]
    x = positions[owner] + (local * h)[:, None] * velocities[owner]
    v = velocities[owner]
    pot = np.empty(owner.size)
    for lo in range(0, owner.size, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        s = 0.5 * h[sl, None] * (nodes[None, :] + 1.0)
        pos = x[sl, None, :] + s[..., None] * v[sl, None, :]
        pot[sl] = 0.5 * h[sl] * (spec.potential(pos) @ weights)
    return durations * spec.kinetic(velocities) - np.bincount(owner, weights=pot, minlength=durations.size)


@dataclass
class ControlledProcess:
    """Piecewise-constant-velocity trajectory on T^d.

    ``positions[i]`` is ``x(t_i)``, ``velocities[i]`` the velocity on
    ``[t_i, t_{i+1})`` and ``cost[i]`` the running cost accumulated up to
    ``t_i``.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    cost: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_velocities(cls, y, times, velocities, spec: LagrangianSpec) -> ControlledProcess:
        """Integrate ``x' = v`` from ``y`` and accumulate the running cost."""
        times = np.asarray(times, dtype=float)
        vel = np.asarray(velocities, dtype=float).reshape(-1, spec.d)
        if vel.shape[0] != times.size - 1:
            raise InvalidArgument("need one velocity per partition interval")
        dt = np.diff(times)
        raw = np.asarray(y, dtype=float).reshape(1, spec.d) + np.concatenate(
            [np.zeros((1, spec.d)), np.cumsum(dt[:, None] * vel, axis=0)]
        )
        pos = wrap(raw)
        costs = segment_costs(spec, pos[:-1], vel, dt)
        return cls(times, pos, vel, np.concatenate([[0.0], np.cumsum(costs)]))

    @property
    def r(self) -> float:
        return float(self.times[-1])

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def running_cost(self) -> float:
        return float(self.cost[-1])

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times)

    def requadrature(self, spec: LagrangianSpec, points: int = QUAD_POINTS) -> np.ndarray:
        return segment_costs(spec, self.positions[:-1], self.velocities, self.durations, points)

    def to_csv(self, path=None, stride: int = 1) -> str:
        """Columns ``t, x_1..x_d, v_1..v_d, running_cost``; the final row has ``nan`` velocity.

        ``stride`` keeps every ``stride``-th sample (the final sample is always kept).
        """
        n = self.times.size
        rows = np.arange(0, n, stride)
        if rows[-1] != n - 1:
            rows = np.append(rows, n - 1)
        vel = np.vstack([self.velocities, np.full((1, self.d), np.nan)])
        table = np.column_stack([self.times[rows], self.positions[rows], vel[rows], self.cost[rows]])
        head = ["t"] + [f"x{j}" for j in range(self.d)] + [f"v{j}" for j in range(self.d)] + ["running_cost"]
        buf = io.StringIO()
        buf.write(",".join(head) + "\n")
        np.savetxt(buf, table, delimiter=",", fmt="%.17g")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class AimingSchedule:
    """Constructive parameter choice that certifies the upper estimate.

    Constants: ``C1`` bounds proximal shifts (``|b| <= C1 kappa^1.5``),
    ``C2`` bounds ``phi - phi_kappa <= C2 kappa`` and ``C3`` bounds feedback
    speeds. Construction enforces::

        C2 kappa0 <= eps,   omega(C1 kappa0^1.5) <= eps/2,
        delta <= eps kappa^2 / (2 C3^2),   omega(delta C3) <= eps/4.

    These alone make the four ledger terms sum to exactly ``(r + 1) eps``.
    With ``strict=True`` the partition bound is halved, which leaves
    ``r eps / 8`` of headroom for numerical error.
    """

    epsilon: float
    kappa0: float
    kappa: float
    delta: float
    C1: float
    C2: float
    C3: float
    lipschitz: float
    lip_potential: float
    cap_potential: float
    strict: bool = True

    def omega(self, delta: float) -> float:
        return min(self.lip_potential * delta, self.cap_potential)

    @classmethod
    def build(cls, epsilon: float, phi: GridScalarField, spec: LagrangianSpec,
              kappa: float | None = None, strict: bool = True) -> AimingSchedule:
        if not epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        Kphi = phi.lipschitz()
        osc = phi.oscillation()
        c3 = spec.speed_bound(Kphi * (1 + 1e-9))
        lip, cap = spec.potential.lipschitz, 2.0 * spec.potential.sup_abs

        def omega(s):
            return min(lip * s, cap)

        def admissible(k0):
            c1 = shift_constant(Kphi, osc, k0)
            c2 = gap_constant(Kphi, osc, k0)
            return c2 * k0 <= epsilon and omega(c1 * k0**1.5) <= epsilon / 2

        hi = 1.0
        if admissible(hi):
            k0 = hi
        else:
            lo = 0.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if admissible(mid) else (lo, mid)
            k0 = lo
        if k0 <= 0:
            raise InvalidArgument("no admissible kappa0")
        if kappa is None:
            kappa = k0
        elif not 0 < kappa <= k0:
            raise InvalidArgument(f"kappa must lie in (0, kappa0={k0:.6g}]")
        delta = cls._max_fineness(epsilon, kappa, c3, lip, cap, strict)
        sched = cls(epsilon, k0, kappa, delta, shift_constant(Kphi, osc, k0),
                    gap_constant(Kphi, osc, k0), c3, Kphi, lip, cap, strict)
        bad = sched.violations(delta)
        if bad:
            raise InvalidArgument(f"schedule construction failed: {bad}")
        return sched

    @staticmethod
    def _max_fineness(epsilon, kappa, c3, lip, cap, strict):
        if c3 == 0:
            return 0.1
        delta = epsilon * kappa**2 / ((4.0 if strict else 2.0) * c3**2)
        if lip > 0 and cap > epsilon / 4:
            delta = min(delta, epsilon / (4 * lip * c3))
        return min(delta, 0.1)

    def violations(self, fineness: float, kappa: float | None = None) -> list[str]:
        """Names of the schedule inequalities that fail for this fineness / kappa."""
        kappa = self.kappa if kappa is None else kappa
        eps, c3 = self.epsilon, self.C3
        tol = 1 + 1e-12
        bad = []
        if self.C2 * self.kappa0 > eps * tol:
            bad.append("C2*kappa0 <= eps")
        if self.omega(self.C1 * self.kappa0**1.5) > eps / 2 * tol:
            bad.append("omega(C1*kappa0^1.5) <= eps/2")
        if not 0 < kappa <= self.kappa0 * tol:
            bad.append("kappa <= kappa0")
        if fineness > eps * kappa**2 / (2 * c3**2) * tol if c3 > 0 else False:
            bad.append("delta <= eps*kappa^2/(2*C3^2)")
        if self.omega(fineness * c3) > eps / 4 * tol:
            bad.append("omega(delta*C3) <= eps/4")
        if self.strict and c3 > 0 and fineness * c3**2 / (2 * kappa**2) > eps / 8 * tol:
            bad.append("strict: delta*C3^2/(2*kappa^2) <= eps/8")
        return bad

    def certifies(self, fineness: float, kappa: float | None = None) -> bool:
        return not self.violations(fineness, kappa)

    def partition(self, r: float) -> Partition:
        return Partition.uniform(r, self.delta)

    def ledger(self, r: float, fineness: float, kappa: float | None = None) -> dict:
        """A priori value of each term of the upper-estimate error bound."""
        kappa = self.kappa if kappa is None else kappa
        c3 = self.C3
        terms = {
            "partition_term": r * fineness * c3**2 / (2 * kappa**2),
            "modulus_path_term": r * self.omega(fineness * c3),
            "modulus_shift_term": r * self.omega(self.C1 * kappa**1.5),
            "envelope_gap_term": self.C2 * kappa,
        }
        terms["total"] = sum(terms.values())
        terms["budget"] = (r + 1) * self.epsilon
        return terms

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _feedback_box(spec: LagrangianSpec, phi: GridScalarField, box: VelocityBox | None) -> VelocityBox:
    if box is not None:
        return box
    return VelocityBox(spec.d, velocity_bound(spec, phi.lipschitz() * (1 + 1e-9)), 64)


def feedback_direction(phi: GridScalarField, kappa: float, spec: LagrangianSpec, x,
                       box: VelocityBox | None = None) -> np.ndarray:
    """Proximal-aiming velocity at ``x``; its norm never exceeds ``velocity_bound(spec, Lip phi)``."""
    env = lower_envelope(phi, kappa, x)
    box = _feedback_box(spec, phi, box)
    v = argmax_velocity(spec, wrap(np.asarray(x, dtype=float) + env.b), -env.p, box)
    if np.linalg.norm(v) > box.radius * (1 + 1e-12):
        raise PropertyViolation(f"feedback speed {np.linalg.norm(v):.6g} exceeds C3={box.radius:.6g}")
    return v


def simulate(y, phi: GridScalarField, kappa: float, partition: Partition, spec: LagrangianSpec,
             schedule: AimingSchedule | None = None, box: VelocityBox | None = None) -> ControlledProcess:
    """Roll out the proximal-aiming feedback along ``partition`` from ``y``.

    ``meta`` of the returned process records ``kappa``, the fineness, the
    largest realized shift ``|b|`` and whether ``schedule`` certifies the run.
    """
    if not kappa > 0:
        raise InvalidArgument("kappa must be positive")
    y = wrap(np.asarray(y, dtype=float).reshape(spec.d))
    box = _feedback_box(spec, phi, box)
    d = spec.d
    vals1 = np.ascontiguousarray(phi.values, dtype=float) if d == 1 else np.zeros(1)
    vals2 = np.ascontiguousarray(phi.values, dtype=float) if d == 2 else np.zeros((1, 1))
    nodes, weights = np.polynomial.legendre.leggauss(QUAD_POINTS)
    xs, vs, cost, shifts = K.rollout(
        vals1, vals2, d, y, np.asarray(partition.times), float(kappa), search_radius(phi, kappa),
        spec.code, spec.lam_array, spec.potential.mode_array, spec.potential.coeff_array,
        float(box.radius), int(box.m_v), nodes, weights,
    )
    speeds = np.linalg.norm(vs, axis=1) if vs.size else np.zeros(0)
    if speeds.size and speeds.max() > box.radius * (1 + 1e-12):
        raise PropertyViolation(f"feedback speed {speeds.max():.6g} exceeds C3={box.radius:.6g}")
    meta = {
        "kappa": float(kappa),
        "fineness": partition.fineness,
        "max_shift": float(shifts.max()) if shifts.size else 0.0,
        "max_speed": float(speeds.max()) if speeds.size else 0.0,
        "certified": bool(schedule is not None and schedule.certifies(partition.fineness, kappa)),
    }
    if schedule is not None:
        meta["schedule_violations"] = schedule.violations(partition.fineness, kappa)
    return ControlledProcess(np.asarray(partition.times), xs, vs, cost, meta)


def quadrature_budget(proc: ControlledProcess, spec: LagrangianSpec) -> float:
    """``|Q_10 - Q_20|`` summed over segments plus a rounding allowance."""
    q20 = proc.requadrature(spec, 2 * QUAD_POINTS).sum()
    q10 = proc.requadrature(spec, QUAD_POINTS).sum()
    return float(abs(q20 - q10) + abs(q10 - proc.running_cost) + 1e-12 * (1 + proc.r) * max(1, len(proc.times)) ** 0.5)


def upper_estimate_check(proc: ControlledProcess, phi: GridScalarField, hbar: float, epsilon: float,
                         spec: LagrangianSpec | None = None, schedule: AimingSchedule | None = None,
                         residual_sup: float = 0.0) -> dict:
    """Evaluate ``phi(x(r)) + cost <= phi(y) - hbar r + (r+1) eps + slack``.

    ``slack`` is the quadrature budget (needs ``spec``) plus
    ``residual_sup * r`` for the cell-solver defect. The report carries the
    a priori ledger when a schedule is given.

    Raises
    ------
    PropertyViolation
        When a certified run violates the inequality beyond the slack.
    """
    r = proc.r
    fineness = proc.meta.get("fineness", float(proc.durations.max(initial=0.0)))
    kappa = proc.meta.get("kappa", schedule.kappa if schedule is not None else None)
    lhs = interpolate(phi, proc.end) + proc.running_cost
    rhs = interpolate(phi, proc.start) - hbar * r + (r + 1) * epsilon
    quad = quadrature_budget(proc, spec) if spec is not None else 0.0
    slack = quad + residual_sup * r
    certified = bool(schedule is not None and schedule.certifies(fineness, kappa))
    report = {
        "lhs": float(lhs),
        "rhs": float(rhs),
        "margin": float(rhs + slack - lhs),
        "slack": {"quadrature": quad, "cell_defect": residual_sup * r, "total": slack},
        "r": r,
        "epsilon": epsilon,
        "fineness": fineness,
        "kappa": kappa,
        "certified": certified,
        "passed": bool(lhs <= rhs + slack),
    }
    if schedule is not None:
        report["ledger"] = schedule.ledger(r, fineness, kappa)
        report["schedule_violations"] = schedule.violations(fineness, kappa)
        speeds2 = np.sum(proc.velocities**2, axis=1)
        report["realized"] = {
            "partition_term": float(np.sum(proc.durations**2 * speeds2) / (2 * kappa**2)),
            "max_shift": proc.meta.get("max_shift"),
            "max_speed": proc.meta.get("max_speed"),
        }
    if certified:
        report["status"] = "pass" if report["passed"] else "fail"
    else:
        report["status"] = "uncertified"
    if certified and not report["passed"]:
        raise PropertyViolation("upper estimate violated on a certified run", report)
    return report


def dump_run(proc: ControlledProcess, directory, seed=None, schedule: AimingSchedule | None = None,
             stride: int = 1, stem: str = "trajectory") -> tuple[Path, Path]:
    """Write the trajectory CSV and a JSON header echoing seed, schedule and run metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    proc.to_csv(csv_path, stride=stride)
    header = {"seed": seed, "schedule": schedule.to_json() if schedule else None, "meta": proc.meta,
              "stride": stride}
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True, default=float) + "\n")
    return csv_path, json_path
