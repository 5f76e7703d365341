"""Discrete viscosity solutions of the cell problem ``H(x, -grad phi) = Hbar``.

The solver iterates the one-step Lax-Oleinik operator

    (T_dt psi)(x) = min_v  psi(x + dt v) + dt L(x, v)

over a velocity lattice. Increments ``psi_{k+1} - psi_k`` converge to the
constant ``-Hbar dt``; iteration stops once their oscillation drops below
``tol * dt``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import ConvergenceFailure, InvalidArgument
from .lagrangian import LagrangianSpec, VelocityBox, hamiltonian, velocity_bound
from .torus import GridScalarField, GridSpec, read_field_csv

__all__ = [
    "CellSolution",
    "LaxOleinik",
    "lax_oleinik_step",
    "solve_cell",
    "viscosity_residual",
    "semigroup_defect",
    "apriori_slope_bound",
    "kink_mask",
    "default_box",
    "centered_gradient",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellSolution:
    """Normalized (``min phi = 0``) grid solution with its constant ``hbar``."""

    phi: GridScalarField
    hbar: float
    residual_sup: float
    iterations: int
    dt: float
    box: VelocityBox | None = None

    def to_json(self) -> dict:
        return {
            "hbar": self.hbar,
            "residual_sup": self.residual_sup,
            "iterations": self.iterations,
            "dt": self.dt,
        }

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and the ``<stem>.csv`` sidecar holding ``phi``."""
        stem = Path(stem)
        jpath, cpath = stem.with_suffix(".json"), stem.with_suffix(".csv")
        meta = self.to_json() | {"phi_csv": cpath.name}
        jpath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        self.phi.to_csv(cpath)
        return jpath, cpath

    @classmethod
    def load(cls, stem) -> CellSolution:
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        phi = read_field_csv(stem.with_suffix(".csv"))
        return cls(phi, meta["hbar"], meta["residual_sup"], meta["iterations"], meta["dt"])


def apriori_slope_bound(spec: LagrangianSpec) -> float:
    """Lipschitz bound for any viscosity solution of the cell problem.

    Viscosity solutions satisfy ``kinetic*(-grad phi) = Hbar - V(x) <= osc V``
    almost everywhere, so ``|grad phi|`` is bounded by the largest ``s`` with
    ``kinetic*(s e) <= osc V`` over unit directions ``e``. Only the
    anisotropic family in d=2 depends on ``e``; its directions are sampled
    and the result padded by 5%.
    """
    osc = spec.potential.oscillation
    if osc <= 0:
        return 0.0
    # only the anisotropic conjugate depends on the direction of p
    sampled = spec.d == 2 and spec.family == "anisotropic"
    if spec.d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif sampled:
        th = np.linspace(0, 2 * np.pi, 128, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        dirs = np.array([[1.0, 0.0]])
    m_v = 256 if spec.d == 1 else 32

    def conj(s, e):
        radius = velocity_bound(spec, s)
        q = np.ascontiguousarray(s * e)
        return K.conjugate_argmax(q, spec.code, spec.lam_array, radius, m_v, np.empty(spec.d))

    best = 0.0
    for e in dirs:
        hi = 1.0
        while conj(hi, e) <= osc:
            hi *= 2.0
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if conj(mid, e) <= osc:
                lo = mid
            else:
                hi = mid
        best = max(best, hi)
    return 1.05 * best if sampled else best


class LaxOleinik:
    """Precomputed one-step operator ``T_dt`` for a fixed grid, spec and lattice.

    Displacements ``dt v`` are node-independent on a uniform grid, so the
    interpolation stencil is gathered once.
    """

    def __init__(self, grid: GridSpec, dt: float, spec: LagrangianSpec, box: VelocityBox):
        if not dt > 0:
            raise InvalidArgument(f"time step must be positive, got {dt}")
        if dt * box.radius > 0.25:
            raise InvalidArgument(f"dt * radius = {dt * box.radius:.4g} exceeds 1/4")
        if box.d != grid.d or spec.d != grid.d:
            raise InvalidArgument("grid, Lagrangian and velocity box dimensions differ")
        self.grid, self.dt, self.spec, self.box = grid, dt, spec, box
        vel = box.lattice()
        n = grid.n
        disp = dt * vel * n
        base = np.floor(disp).astype(np.int64)
        frac = disp - base
        nodes = np.indices(grid.shape).reshape(grid.d, -1).T
        idx, wts = [], []
        for corner in np.ndindex(*(2,) * grid.d):
            off = base + np.array(corner)
            pos = np.mod(nodes[:, None, :] + off[None, :, :], n)
            flat = np.ravel_multi_index(tuple(np.moveaxis(pos, -1, 0)), grid.shape)
            w = np.prod(np.where(np.array(corner) == 1, frac, 1.0 - frac), axis=1)
            idx.append(flat.astype(np.int32))
            wts.append(w)
        self._idx = idx
        self._wts = wts
        self._kin = dt * spec.kinetic(vel)
        self._pot = dt * spec.potential(grid.nodes())
        self.velocities = vel

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Apply ``T_dt`` to flat node values; returns flat node values."""
        cand = self._kin[None, :] + sum(w[None, :] * values[i] for i, w in zip(self._idx, self._wts))
        return cand.min(axis=1) - self._pot

    def argmin_velocity(self, values: np.ndarray) -> np.ndarray:
        """Optimal lattice velocity at every node (first minimizer in lattice order)."""
        cand = self._kin[None, :] + sum(w[None, :] * values[i] for i, w in zip(self._idx, self._wts))
        return self.velocities[np.argmin(cand, axis=1)]


def lax_oleinik_step(phi: GridScalarField, dt: float, spec: LagrangianSpec, box: VelocityBox) -> GridScalarField:
    """One discrete Lax-Oleinik step at every node.

    Raises
    ------
    InvalidArgument
        If ``dt <= 0`` or ``dt * box.radius > 1/4``.
    """
    op = LaxOleinik(phi.grid, dt, spec, box)
    return GridScalarField(phi.grid, op(phi.flat))


def default_box(spec: LagrangianSpec, v_spacing: float = 0.1) -> VelocityBox:
    """Velocity lattice of radius ``C_3`` for the a priori slope bound."""
    c3 = velocity_bound(spec, apriori_slope_bound(spec))
    m_v = max(2, 2 * math.ceil(c3 / v_spacing))
    return VelocityBox(spec.d, c3, m_v)


def solve_cell(
    spec: LagrangianSpec,
    grid: GridSpec,
    dt: float | None = None,
    tol: float = 1e-3,
    max_iter: int = 200_000,
    box: VelocityBox | None = None,
    initial: GridScalarField | None = None,
) -> CellSolution:
    """Iterate ``T_dt`` until the increment oscillation falls below ``tol * dt``.

    With ``dt=None`` the step is ``h / C_3`` so that one step moves at most
    one cell.

    Raises
    ------
    ConvergenceFailure
        After ``max_iter`` steps, carrying the last residual.
    """
    if not tol > 0:
        raise InvalidArgument("tol must be positive")
    box = box or default_box(spec)
    if dt is None:
        dt = grid.h / box.radius
    op = LaxOleinik(grid, dt, spec, box)
    psi = np.zeros(grid.size) if initial is None else np.array(initial.flat)
    residual = math.inf
    for it in range(1, max_iter + 1):
        new = op(psi)
        inc = new - psi
        s, i = float(inc.max()), float(inc.min())
        residual = (s - i) / dt
        if s - i < tol * dt:
            phi = GridScalarField(grid, new - new.min())
            logger.debug("cell solver converged after %d steps", it)
            return CellSolution(phi, -(s + i) / (2 * dt) + 0.0, residual, it, dt, box)
        psi = new - new.min()
    raise ConvergenceFailure(
        f"no convergence after {max_iter} Lax-Oleinik steps (residual {residual:.3g})",
        residual=residual,
        iterations=max_iter,
    )


def semigroup_defect(sol: CellSolution, spec: LagrangianSpec) -> float:
    """``max |T_dt phi - (phi - dt hbar)|`` over the nodes."""
    op = LaxOleinik(sol.phi.grid, sol.dt, spec, sol.box or default_box(spec))
    return float(np.max(np.abs(op(sol.phi.flat) - sol.phi.flat + sol.dt * sol.hbar)))


def kink_mask(phi: GridScalarField, factor: float = 3.0) -> np.ndarray:
    """Boolean mask of nodes whose one-sided slope jump exceeds ``factor`` times the median."""
    h = phi.grid.h
    jump = np.zeros(phi.grid.shape)
    for a in range(phi.grid.d):
        fwd = (np.roll(phi.values, -1, axis=a) - phi.values) / h
        bwd = (phi.values - np.roll(phi.values, 1, axis=a)) / h
        jump = np.maximum(jump, np.abs(fwd - bwd))
    return jump > factor * np.median(jump) + 1e-12


def centered_gradient(phi: GridScalarField) -> np.ndarray:
    """Centered differences, shape ``(n**d, d)``."""
    h = phi.grid.h
    grads = [(np.roll(phi.values, -1, axis=a) - np.roll(phi.values, 1, axis=a)) / (2 * h) for a in range(phi.grid.d)]
    return np.stack([g.ravel() for g in grads], axis=-1)


def viscosity_residual(sol: CellSolution, spec: LagrangianSpec, box: VelocityBox | None = None) -> float:
    """``sup |H(x, -D_h phi(x)) - hbar|`` over nodes outside the kink set."""
    phi = sol.phi
    grad = centered_gradient(phi)
    if box is None:
        kmax = float(np.max(np.linalg.norm(grad, axis=1)))
        box = VelocityBox(spec.d, velocity_bound(spec, kmax), 64)
    keep = ~kink_mask(phi).ravel()
    if not keep.any():
        return 0.0
    ham = hamiltonian(spec, phi.grid.nodes()[keep], -grad[keep], box)
    return float(np.max(np.abs(ham - sol.hbar)))
