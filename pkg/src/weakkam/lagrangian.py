"""Lagrangian families, numeric Legendre transform and growth certificates.

Every built-in family separates as ``L(x, v) = kinetic(v) - V(x)`` where
``V(x) = sum_k a_k cos(2 pi k.x)`` is a finite cosine sum:

* ``mechanical``       kinetic(v) = |v|^2 / 2
* ``kinked``           kinetic(v) = |v|^2 / 2 + lam |v|
* ``anisotropic``      kinetic(v) = |v|^2 / 2 + sum_j lam_j |v_j|
* ``piecewise-power``  kinetic(v) = max(|v|^(3/2), |v|^2 / 2)

All kinetic terms are convex, vanish only at ``v = 0`` and grow at least like
``|v|^2 / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize

from . import _kernels as K
from .errors import InvalidArgument, PreconditionError
from .torus import as_points

__all__ = [
    "CosinePotential",
    "LagrangianSpec",
    "VelocityBox",
    "FAMILIES",
    "eval_L",
    "hamiltonian",
    "argmax_velocity",
    "velocity_bound",
    "modulus",
    "mechanical",
    "kinked",
    "anisotropic",
    "piecewise_power",
    "pendulum_potential",
]

FAMILIES = {
    "mechanical": K.MECHANICAL,
    "kinked": K.KINKED,
    "anisotropic": K.ANISOTROPIC,
    "piecewise-power": K.PIECEWISE_POWER,
}


@dataclass(frozen=True)
class CosinePotential:
    """``V(x) = sum_k a_k cos(2 pi k.x)`` on T^d."""

    d: int
    modes: tuple = ()
    coeffs: tuple = ()

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidArgument(f"unsupported dimension {self.d}")
        modes = tuple(tuple(int(c) for c in np.atleast_1d(k)) for k in self.modes)
        if any(len(k) != self.d for k in modes):
            raise InvalidArgument("every cosine mode needs d integer components")
        if len(modes) != len(self.coeffs):
            raise InvalidArgument("modes and coeffs differ in length")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", tuple(float(a) for a in self.coeffs))

    @property
    def mode_array(self) -> np.ndarray:
        return np.array(self.modes, dtype=float).reshape(len(self.modes), self.d)

    @property
    def coeff_array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=float)

    def __call__(self, x) -> np.ndarray | float:
        pts, shape, single = as_points(x, self.d)
        if not self.modes:
            out = np.zeros(pts.shape[0])
        else:
            out = np.cos(2 * np.pi * pts @ self.mode_array.T) @ self.coeff_array
        return float(out[0]) if single else out.reshape(shape)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.d)
        if not self.modes:
            return np.zeros_like(pts).reshape(x.shape)
        k = self.mode_array
        s = np.sin(2 * np.pi * pts @ k.T) * self.coeff_array
        return (-2 * np.pi * s @ k).reshape(x.shape)

    @property
    def max_frequency(self) -> float:
        """Largest ``|k|`` among the modes (0 for ``V = 0``)."""
        if not self.modes:
            return 0.0
        return float(np.max(np.linalg.norm(self.mode_array, axis=1)))

    @property
    def lipschitz(self) -> float:
        """``sum_k |a_k| 2 pi |k|``, an upper bound on ``|grad V|``."""
        if not self.modes:
            return 0.0
        return float(2 * np.pi * np.sum(np.abs(self.coeff_array) * np.linalg.norm(self.mode_array, axis=1)))

    @cached_property
    def _extrema(self) -> tuple[float, float]:
        if not self.modes:
            return 0.0, 0.0
        m = 8192 if self.d == 1 else 512
        axes = np.meshgrid(*[np.arange(m) / m] * self.d, indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=-1)
        vals = self(pts)
        hi = float(vals.max())
        lo = float(vals.min())
        opts = {"xatol": 1e-12, "fatol": 1e-15}
        res = optimize.minimize(lambda z: -self(z), pts[np.argmax(vals)], method="Nelder-Mead", options=opts)
        hi = max(hi, -float(res.fun))
        res = optimize.minimize(lambda z: self(z), pts[np.argmin(vals)], method="Nelder-Mead", options=opts)
        lo = min(lo, float(res.fun))
        return hi, lo

    @property
    def max_value(self) -> float:
        return self._extrema[0]

    @property
    def min_value(self) -> float:
        return self._extrema[1]

    @property
    def sup_abs(self) -> float:
        return max(abs(self.max_value), abs(self.min_value))

    @property
    def oscillation(self) -> float:
        return self.max_value - self.min_value


def pendulum_potential(d: int = 1, amplitude: float = 1.0) -> CosinePotential:
    """``V(x) = amplitude * cos(2 pi x_1)``."""
    mode = (1,) + (0,) * (d - 1)
    return CosinePotential(d, (mode,), (amplitude,))


@dataclass(frozen=True)
class LagrangianSpec:
    """A member of one of the built-in Lagrangian families.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    potential : CosinePotential
    lam : tuple of float
        Kink weights: one value for ``kinked``, ``d`` values for
        ``anisotropic``; ignored otherwise.
    """

    family: str
    potential: CosinePotential
    lam: tuple = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")
        lam = tuple(float(a) for a in np.atleast_1d(self.lam)) if self.lam != () else ()
        if self.family == "kinked" and len(lam) != 1:
            raise InvalidArgument("kinked family takes a single lambda")
        if self.family == "anisotropic" and len(lam) != self.d:
            raise InvalidArgument("anisotropic family takes one lambda per axis")
        if any(a < 0 or not math.isfinite(a) for a in lam):
            raise InvalidArgument("kink weights must be finite and nonnegative")
        object.__setattr__(self, "lam", lam)

    @property
    def d(self) -> int:
        return self.potential.d

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    @property
    def lam_array(self) -> np.ndarray:
        return np.array(self.lam if self.lam else (0.0,) * self.d, dtype=float)

    # -- evaluation ---------------------------------------------------------

    def kinetic(self, v) -> np.ndarray | float:
        pts, shape, single = as_points(v, self.d)
        out = K.kinetic_many(np.ascontiguousarray(pts), self.code, self.lam_array)
        return float(out[0]) if single else out.reshape(shape)

    def __call__(self, x, v):
        return eval_L(self, x, v)

    # -- certificates ---------------------------------------------------------

    @property
    def c1_prime(self) -> float:
        """``sup_y |L(y, 0)| = sup |V|``."""
        return self.potential.sup_abs

    @property
    def c2_prime(self) -> float:
        """Lower bound on ``L``: the kinetic minimum 0 minus ``max V``."""
        return -self.potential.max_value

    @property
    def min_kink(self) -> float:
        if self.family == "kinked":
            return self.lam[0]
        if self.family == "anisotropic":
            return min(self.lam)
        return 0.0

    def growth_witness(self, slope: float) -> float:
        """Radius ``c`` with ``L(x, v) >= slope |v|`` whenever ``|v| >= c``.

        Uses ``kinetic(v) >= |v|^2/2 + min_kink |v|`` and ``V <= max V``; the
        radius is the positive root of ``s^2/2 - (slope - min_kink) s - max V``.
        """
        m = slope - self.min_kink
        vmax = self.potential.max_value
        disc = m * m + 2.0 * vmax
        if disc < 0:
            return 0.0
        return max(0.0, m + math.sqrt(disc))

    def speed_bound(self, K: float) -> float:
        """Sharp bound on ``|argmax_v [p.v - L(x, v)]|`` over ``|p| <= K``."""
        K = float(K)
        if self.family == "mechanical":
            return K
        if self.family == "kinked":
            return max(K - self.lam[0], 0.0)
        if self.family == "anisotropic":
            return max(K - self.lam[0], 0.0) if self.d == 1 else K
        # kinetic is s^(3/2) below s=4 and s^2/2 above; its slope jumps 3 -> 4 at s=4
        if K <= 3.0:
            return (K / 1.5) ** 2
        if K <= 4.0:
            return 4.0
        return K

    # -- serialization -------------------------------------------------------

    def to_config(self) -> dict:
        modes = [list(k) if self.d > 1 else k[0] for k in self.potential.modes]
        cfg = {
            "family": self.family,
            "potential": {"cos_coeffs": [[k, a] for k, a in zip(modes, self.potential.coeffs)]},
            "d": self.d,
        }
        if self.family == "kinked":
            cfg["lambda"] = self.lam[0]
        elif self.family == "anisotropic":
            cfg["lambda"] = list(self.lam)
        return cfg

    @classmethod
    def from_config(cls, cfg) -> LagrangianSpec:
        """Build from a JSON object or string.

        Example: ``{"family": "kinked", "lambda": 1.0,
        "potential": {"cos_coeffs": [[1, 1.0]]}}``. Modes may be integers
        (d=1) or integer lists; ``d`` is inferred unless given.
        """
        if isinstance(cfg, str):
            cfg = json.loads(cfg)
        if not isinstance(cfg, dict) or "family" not in cfg:
            raise InvalidArgument("lagrangian config must be an object with a 'family' key")
        pairs = cfg.get("potential", {}).get("cos_coeffs", [])
        modes = [np.atleast_1d(k).astype(int) for k, _ in pairs]
        d = int(cfg.get("d", len(modes[0]) if modes else 1))
        potential = CosinePotential(d, tuple(tuple(k) for k in modes), tuple(float(a) for _, a in pairs))
        lam = cfg.get("lambda", ())
        return cls(cfg["family"], potential, tuple(np.atleast_1d(lam)) if lam != () else ())


def mechanical(potential: CosinePotential | None = None, d: int = 1) -> LagrangianSpec:
    return LagrangianSpec("mechanical", potential or CosinePotential(d))


def kinked(lam: float, potential: CosinePotential | None = None, d: int = 1) -> LagrangianSpec:
    return LagrangianSpec("kinked", potential or CosinePotential(d), (lam,))


def anisotropic(lams, potential: CosinePotential | None = None) -> LagrangianSpec:
    lams = tuple(np.atleast_1d(lams).astype(float))
    return LagrangianSpec("anisotropic", potential or CosinePotential(len(lams)), lams)


def piecewise_power(potential: CosinePotential | None = None, d: int = 1) -> LagrangianSpec:
    return LagrangianSpec("piecewise-power", potential or CosinePotential(d))


@dataclass(frozen=True)
class VelocityBox:
    """Velocity ball ``B_radius`` sampled by a lattice of spacing ``2 radius / m_v``.

    ``m_v`` is even so that ``v = 0`` is a lattice node.
    """

    d: int
    radius: float
    m_v: int = 64

    def __post_init__(self):
        if self.radius < 0 or not math.isfinite(self.radius):
            raise InvalidArgument("velocity box radius must be finite and >= 0")
        if self.m_v < 2 or self.m_v % 2:
            raise InvalidArgument("m_v must be an even integer >= 2")

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / self.m_v

    def lattice(self) -> np.ndarray:
        """Lattice velocities inside the ball, shape ``(N, d)``, lexicographic."""
        ticks = (np.arange(self.m_v + 1) - self.m_v // 2) * self.spacing
        mesh = np.meshgrid(*[ticks] * self.d, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        keep = np.sum(pts**2, axis=1) <= self.radius**2 * (1 + 1e-12)
        return pts[keep]

    @classmethod
    def for_slope(cls, spec: LagrangianSpec, K: float, spacing: float | None = None, m_v: int = 64):
        """Box of radius ``velocity_bound(spec, K)``; ``spacing`` overrides ``m_v``."""
        radius = velocity_bound(spec, K)
        if spacing is not None:
            m_v = max(2, 2 * math.ceil(radius / spacing))
        return cls(spec.d, radius, m_v)


def eval_L(spec: LagrangianSpec, x, v):
    """``L(x, v)``, batched over matching leading axes of ``x`` and ``v``."""
    return spec.kinetic(v) - spec.potential(x)


def velocity_bound(spec: LagrangianSpec, K: float) -> float:
    """``C_3 = max(c(K + C_1' + 1), 1)`` with ``c`` the growth witness.

    Every maximizer of ``p.v - L(x, v)`` with ``|p| <= K`` lies in ``B_{C_3}``.
    """
    if K < 0:
        raise InvalidArgument("slope bound K must be nonnegative")
    return max(spec.growth_witness(K + spec.c1_prime + 1.0), 1.0)


def _prepare(spec, x, p, box):
    ps, shape, single = as_points(p, spec.d)
    ps = np.ascontiguousarray(ps)
    xs, _, _ = as_points(x, spec.d)
    if box.d != spec.d:
        raise InvalidArgument("velocity box dimension does not match the Lagrangian")
    kmax = float(np.max(np.linalg.norm(ps, axis=1))) if ps.size else 0.0
    need = velocity_bound(spec, kmax)
    if box.radius < need * (1 - 1e-12):
        raise PreconditionError(
            f"velocity box radius {box.radius:.6g} too small for |p| <= {kmax:.6g}; "
            f"requires radius >= {need:.6g}"
        )
    return xs, ps, single, shape


def _conjugate(spec, ps, box):
    return K.conjugate_many(ps, spec.code, spec.lam_array, float(box.radius), int(box.m_v))


def hamiltonian(spec: LagrangianSpec, x, p, box: VelocityBox):
    """``H(x, p) = max_v [p.v - L(x, v)]`` by lattice scan plus golden-section refinement.

    Raises
    ------
    PreconditionError
        If ``box.radius < velocity_bound(spec, |p|)``.
    """
    xs, ps, single, shape = _prepare(spec, x, p, box)
    vals, _ = _conjugate(spec, ps, box)
    h = vals + spec.potential(xs)
    return float(h[0]) if single else h.reshape(shape)


def argmax_velocity(spec: LagrangianSpec, x, p, box: VelocityBox) -> np.ndarray:
    """A maximizer of ``p.v - L(x, v)``; ties go to the smallest norm, then lexicographic."""
    _, ps, single, shape = _prepare(spec, x, p, box)
    _, vs = _conjugate(spec, ps, box)
    return vs[0] if single else vs.reshape(shape + (spec.d,))


def modulus(spec: LagrangianSpec, A: float, delta: float) -> float:
    """Upper estimate of ``omega_A(delta) = sup |L(x,v) - L(y,v)|``.

    The velocity part cancels, leaving ``min(Lip(V) delta, 2 sup|V|)``
    independently of ``A``.
    """
    if A < 0 or delta < 0:
        raise InvalidArgument("modulus arguments must be nonnegative")
    return min(spec.potential.lipschitz * delta, 2.0 * spec.potential.sup_abs)
