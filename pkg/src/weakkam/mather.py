"""Holonomic probability measures on T^d x R^d.

A measure ``nu`` is holonomic when ``int grad f(x).v dnu = 0`` for every
smooth periodic ``f``. Minimizing ``int L dnu`` over holonomic probability
measures gives ``-hbar``; a minimizer is a Mather measure. Here the test
functions are truncated to a Fourier basis, the measure lives on a product
of grid nodes and velocity lattice points, and the resulting LP is solved by
the dense simplex in :mod:`weakkam.simplex`.
"""

from __future__ import annotations

import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .aiming import ControlledProcess
from .cell import apriori_slope_bound, centered_gradient
from .envelope import mollify
from .errors import InvalidArgument, PreconditionError
from .lagrangian import LagrangianSpec, VelocityBox, eval_L, hamiltonian, modulus, velocity_bound
from .simplex import simplex
from .torus import GridScalarField, GridSpec, min_displacement

__all__ = [
    "DiscreteMeasure",
    "HolonomyBasis",
    "HolonomicLP",
    "lp_velocity_box",
    "build_lp",
    "solve_lp",
    "occupation_measure",
    "subsolution_residual_mollified",
    "mollified_residual_sweep",
    "lp_report_json",
]


@dataclass(frozen=True)
class HolonomyBasis:
    """Fourier modes ``k`` with ``|k|_inf <= M``, one representative per pair ``+-k``.

    Each mode contributes the test functions ``cos(2 pi k.x)`` and
    ``sin(2 pi k.x)``.
    """

    d: int
    M: int

    def __post_init__(self):
        if self.d not in (1, 2) or self.M < 0:
            raise InvalidArgument("need d in {1, 2} and M >= 0")

    @property
    def modes(self) -> np.ndarray:
        ks = [k for k in itertools.product(range(-self.M, self.M + 1), repeat=self.d)
              if any(k) and next(c for c in k if c) > 0]
        return np.array(ks, dtype=float).reshape(-1, self.d)

    def __len__(self):
        return 2 * self.modes.shape[0]

    def rows(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``grad f(x).v`` for every test function ``f``; shape ``(len(self), N)``.

        Uses ``grad cos(2 pi k.x) = -2 pi k sin(2 pi k.x)`` and
        ``grad sin(2 pi k.x) = 2 pi k cos(2 pi k.x)``.
        """
        ks = self.modes
        phase = 2 * np.pi * (ks @ x.T)
        kv = 2 * np.pi * (ks @ v.T)
        return np.concatenate([-np.sin(phase) * kv, np.cos(phase) * kv])


@dataclass
class DiscreteMeasure:
    """Weights on the product of x-nodes and velocity nodes; ``weights[i, j]`` sits at ``(x_i, v_j)``."""

    x_nodes: np.ndarray
    v_nodes: np.ndarray
    weights: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.x_nodes.shape[0], self.v_nodes.shape[0]):
            raise InvalidArgument("weights must have shape (n_x, n_v)")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgument(f"weights must be nonnegative and sum to 1 (sum {w.sum():.12g})")
        self.weights = np.maximum(w, 0.0)

    @property
    def d(self) -> int:
        return self.x_nodes.shape[1]

    def support(self, threshold: float = 1e-12):
        """Atoms ``(x, v, weight)`` with weight above ``threshold``."""
        i, j = np.nonzero(self.weights > threshold)
        return self.x_nodes[i], self.v_nodes[j], self.weights[i, j]

    def integrate(self, f) -> float:
        """``int f(x, v) dnu`` for ``f`` vectorized over ``(N, d)`` arrays."""
        x, v, w = self.support(0.0)
        return float(np.dot(np.asarray(f(x, v), dtype=float).reshape(-1), w))

    def action(self, spec: LagrangianSpec) -> float:
        return self.integrate(lambda x, v: eval_L(spec, x, v))

    def holonomy_residuals(self, basis: HolonomyBasis) -> np.ndarray:
        """``|int grad f.v dnu|`` for each test function of ``basis``."""
        x, v, w = self.support(0.0)
        if len(basis) == 0:
            return np.zeros(0)
        return np.abs(basis.rows(x, v) @ w)

    def mass_near(self, x0, v0, radius: float) -> float:
        """Mass within product distance ``radius`` of ``(x0, v0)`` (torus metric in x)."""
        x, v, w = self.support(0.0)
        dx = min_displacement(np.broadcast_to(np.asarray(x0, dtype=float), x.shape), x)
        dist = np.sqrt(np.sum(dx**2, axis=1) + np.sum((v - np.asarray(v0, dtype=float)) ** 2, axis=1))
        return float(w[dist <= radius].sum())

    def to_csv(self, path=None, threshold: float = 1e-12) -> str:
        """Columns ``x0.., v0.., weight``; weights below ``threshold`` are omitted."""
        x, v, w = self.support(threshold)
        head = [f"x{j}" for j in range(self.d)] + [f"v{j}" for j in range(self.d)] + ["weight"]
        buf = io.StringIO()
        buf.write(",".join(head) + "\n")
        if w.size:
            np.savetxt(buf, np.column_stack([x, v, w]), delimiter=",", fmt="%.17g")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class HolonomicLP:
    """``min c.w  s.t.  holonomy rows . w = 0,  sum w = 1,  w >= 0``; column ``i*n_v + j`` is ``(x_i, v_j)``."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    x_nodes: np.ndarray
    v_nodes: np.ndarray
    basis: HolonomyBasis


def lp_velocity_box(spec: LagrangianSpec, nodes_per_axis: int = 129, radius: float | None = None) -> VelocityBox:
    """Velocity lattice with ``nodes_per_axis`` ticks per axis (odd, so ``v = 0`` is a node).

    The default radius is ``max(4, C_3)`` with ``C_3`` the sharp speed bound
    at the a priori slope bound.
    """
    if nodes_per_axis < 3 or nodes_per_axis % 2 == 0:
        raise InvalidArgument("nodes_per_axis must be odd and >= 3")
    if radius is None:
        radius = max(4.0, spec.speed_bound(apriori_slope_bound(spec)))
    return VelocityBox(spec.d, radius, nodes_per_axis - 1)


def build_lp(spec: LagrangianSpec, xgrid: GridSpec, vlattice: VelocityBox, basis: HolonomyBasis) -> HolonomicLP:
    """Assemble the holonomic LP on ``xgrid`` nodes times ``vlattice`` points.

    Holonomy rows are scaled by ``1 / (2 pi |k|)``, which leaves the feasible
    set unchanged and balances the rows.

    Raises
    ------
    InvalidArgument
        If the velocity lattice is empty or dimensions disagree.
    PreconditionError
        If the lattice radius is below the speed bound of Mather measures.
    """
    if spec.d != xgrid.d or vlattice.d != spec.d or basis.d != spec.d:
        raise InvalidArgument("dimension mismatch between spec, grid, lattice and basis")
    vs = vlattice.lattice()
    if vs.shape[0] == 0:
        raise InvalidArgument("empty velocity lattice")
    need = spec.speed_bound(apriori_slope_bound(spec))
    if vlattice.radius < need * (1 - 1e-9):
        raise PreconditionError(f"velocity lattice radius {vlattice.radius:.6g} below speed bound {need:.6g}")
    xs = xgrid.nodes()
    nx, nv = xs.shape[0], vs.shape[0]
    X = np.repeat(xs, nv, axis=0)
    V = np.tile(vs, (nx, 1))
    c = eval_L(spec, X, V)
    if len(basis):
        scale = 2 * np.pi * np.linalg.norm(basis.modes, axis=1)
        rows = basis.rows(X, V) / np.concatenate([scale, scale])[:, None]
        A = np.vstack([rows, np.ones((1, nx * nv))])
    else:
        A = np.ones((1, nx * nv))
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    return HolonomicLP(c, A, b, xs, vs, basis)


def solve_lp(lp: HolonomicLP, max_iter: int = 200_000) -> tuple[float, DiscreteMeasure]:
    """Optimal value and minimizing measure; ``measure.info`` carries the LP report.

    The report holds the iteration count, primal residual, dual residual and
    complementary-slackness residual.
    """
    res = simplex(lp.c, lp.A_eq, lp.b_eq, max_iter=max_iter)
    w = res.x.reshape(lp.x_nodes.shape[0], lp.v_nodes.shape[0])
    w = w / w.sum()
    report = res.to_json() | {"modes": int(lp.basis.modes.shape[0]), "M": lp.basis.M,
                              "columns": int(lp.c.size), "rows": int(lp.b_eq.size)}
    return res.value, DiscreteMeasure(lp.x_nodes, lp.v_nodes, w, report)


def occupation_measure(proc: ControlledProcess, xgrid: GridSpec, vlattice: VelocityBox) -> DiscreteMeasure:
    """Time-average measure of ``(x(t), v(t))`` binned to nearest nodes.

    Segments are split so that each piece moves at most ``h/4``; piece
    midpoints are binned to the nearest x-node and velocities to the nearest
    lattice point.

    Raises
    ------
    InvalidArgument
        If the process has zero duration.
    """
    dts = proc.durations
    if dts.size == 0 or proc.r <= 0:
        raise InvalidArgument("occupation measure needs a process with positive duration")
    vel = proc.velocities
    travel = np.linalg.norm(vel, axis=1) * dts
    pieces = np.maximum(1, np.ceil(travel / (xgrid.h / 4)).astype(np.int64))
    seg = np.repeat(np.arange(dts.size), pieces)
    first = np.repeat(np.cumsum(pieces) - pieces, pieces)
    frac = (np.arange(seg.size) - first + 0.5) / pieces[seg]
    mids = proc.positions[seg] + (frac * dts[seg])[:, None] * vel[seg]
    weights = dts[seg] / pieces[seg] / proc.r

    n = xgrid.n
    idx = np.mod(np.rint(mids * n).astype(np.int64), n)
    xi = np.ravel_multi_index(tuple(idx.T), xgrid.shape)
    vs = vlattice.lattice()
    _, vi = cKDTree(vs).query(vel[seg])
    w = np.zeros((xgrid.size, vs.shape[0]))
    np.add.at(w, (xi, vi), weights)
    return DiscreteMeasure(xgrid.nodes(), vs, w / w.sum(), {"r": proc.r, "segments": int(dts.size)})


def _mollified_excess(phi, delta, hbar, spec, box):
    smooth = mollify(phi, delta)
    grad = centered_gradient(smooth)
    if box is None:
        box = VelocityBox(spec.d, velocity_bound(spec, float(np.max(np.linalg.norm(grad, axis=1)))), 64)
    ham = hamiltonian(spec, phi.grid.nodes(), -grad, box)
    return float(np.max(ham - hbar)), modulus(spec, box.radius, delta)


def subsolution_residual_mollified(phi: GridScalarField, delta: float, hbar: float, spec: LagrangianSpec,
                                   box: VelocityBox | None = None) -> float:
    """``sup_x [H(x, -grad phi_delta) - hbar - omega(delta)]_+`` over grid nodes.

    ``phi_delta`` is the bump-kernel mollification and the gradient uses
    centered differences.
    """
    excess, omega = _mollified_excess(phi, delta, hbar, spec, box)
    return max(0.0, excess - omega)


def mollified_residual_sweep(phi: GridScalarField, deltas, hbar: float, spec: LagrangianSpec,
                             box: VelocityBox | None = None) -> list[dict]:
    """Per-``delta`` rows with the raw excess ``sup (H - hbar)``, the modulus term and the residual."""
    rows = []
    for delta in deltas:
        excess, omega = _mollified_excess(phi, delta, hbar, spec, box)
        rows.append({"delta": float(delta), "raw_excess": excess, "omega": omega,
                     "residual": max(0.0, excess - omega)})
    return rows


def lp_report_json(value: float, measure: DiscreteMeasure, path=None) -> str:
    text = json.dumps({"value": value} | measure.info, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
