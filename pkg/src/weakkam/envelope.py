"""Lower/upper Moreau-Yosida envelopes on T^d and periodic mollification.

For a grid field ``phi`` (evaluated through its multilinear interpolant) and
``kappa > 0``::

    lower:  phi_kappa(x) = min_w  phi(x + w) + |w|^2 / (2 kappa^2)
    upper:  phi^kappa(x) = max_w  phi(x + w) - |w|^2 / (2 kappa^2)

The minimizing shift ``b`` and the proximal covector ``p = -b / kappa^2``
(lower) or ``p = +b / kappa^2`` (upper) are returned alongside the value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels as K
from .errors import InvalidArgument
from .torus import GridScalarField

__all__ = [
    "EnvelopeResult",
    "lower_envelope",
    "upper_envelope",
    "lower_envelope_many",
    "upper_envelope_many",
    "envelope_field",
    "search_radius",
    "shift_bound",
    "shift_constant",
    "gap_constant",
    "mollify",
    "bump_weights",
]


@dataclass(frozen=True)
class EnvelopeResult:
    value: float
    b: np.ndarray
    p: np.ndarray
    kappa: float


def shift_bound(K: float, osc: float, kappa: float) -> float:
    """Bound on the proximal shift: ``|b| <= min(sqrt(2 osc) kappa, 2 K kappa^2)``.

    Both follow from ``phi(x+b) + |b|^2/(2 kappa^2) <= phi(x)``: the first
    with ``phi(x) - phi(x+b) <= osc``, the second with ``<= K |b|``.
    """
    return min(math.sqrt(2.0 * osc) * kappa, 2.0 * K * kappa * kappa)


def shift_constant(K: float, osc: float, kappa_max: float = math.inf) -> float:
    """``C_1`` with ``|b| <= C_1 kappa^(3/2)`` for every ``kappa <= kappa_max``.

    ``shift_bound / kappa^(3/2)`` increases up to the crossover
    ``sqrt(2 osc) / (2 K)`` and decreases afterwards.
    """
    if K <= 0 or osc <= 0:
        return 0.0
    cross = math.sqrt(2.0 * osc) / (2.0 * K)
    return 2.0 * K * math.sqrt(min(kappa_max, cross))


def gap_constant(K: float, osc: float, kappa_max: float = math.inf) -> float:
    """``C_2`` with ``0 <= phi - phi_kappa <= C_2 kappa`` for every ``kappa <= kappa_max``.

    ``phi(x) - phi_kappa(x) <= K|b| - |b|^2/(2 kappa^2)``, bounded both by
    ``K^2 kappa^2 / 2`` and by ``K sqrt(2 osc) kappa``.
    """
    return min(0.5 * K * K * kappa_max, K * math.sqrt(2.0 * osc))


def search_radius(phi: GridScalarField, kappa: float) -> float:
    """Radius of the ball that provably contains every minimizing shift."""
    return shift_bound(phi.lipschitz(), phi.oscillation(), kappa) * (1 + 1e-9) + 1e-15


def _check_kappa(kappa):
    if not (kappa > 0 and math.isfinite(kappa)):
        raise InvalidArgument(f"kappa must be positive and finite, got {kappa}")


def lower_envelope_many(phi: GridScalarField, kappa: float, xs, radius: float | None = None):
    """Envelope values and shifts at many points; returns ``(values (N,), b (N, d))``."""
    _check_kappa(kappa)
    xs = np.ascontiguousarray(np.asarray(xs, dtype=float).reshape(-1, phi.grid.d))
    if radius is None:
        radius = search_radius(phi, kappa)
    if phi.grid.d == 1:
        vals, b = K.lower_env_1d_many(np.ascontiguousarray(phi.values), xs[:, 0].copy(), kappa, radius)
        return vals, b[:, None]
    return K.lower_env_2d_many(np.ascontiguousarray(phi.values), xs, kappa, radius)


def upper_envelope_many(phi: GridScalarField, kappa: float, xs, radius: float | None = None):
    """Mirror of :func:`lower_envelope_many` via ``phi^kappa = -(-phi)_kappa``."""
    vals, b = lower_envelope_many(-phi, kappa, xs, radius)
    return -vals, b


def lower_envelope(phi: GridScalarField, kappa: float, x) -> EnvelopeResult:
    """Lower Moreau-Yosida envelope at a single point.

    The interpolant is affine (d=1) or bilinear (d=2) on each grid cell,
    and the minimum is computed exactly cell by cell.
    Ties go to the smallest ``|b|``, then lexicographic order.
    """
    vals, b = lower_envelope_many(phi, kappa, np.asarray(x, dtype=float).reshape(1, -1))
    b = b[0]
    return EnvelopeResult(float(vals[0]), b, -b / kappa**2, kappa)


def upper_envelope(phi: GridScalarField, kappa: float, x) -> EnvelopeResult:
    """Upper Moreau-Yosida envelope at a single point; ``p = +b / kappa^2``."""
    vals, b = upper_envelope_many(phi, kappa, np.asarray(x, dtype=float).reshape(1, -1))
    b = b[0]
    return EnvelopeResult(float(vals[0]), b, b / kappa**2, kappa)


def envelope_field(phi: GridScalarField, kappa: float, kind: str = "lower") -> GridScalarField:
    """Envelope evaluated at every grid node."""
    nodes = phi.grid.nodes()
    if kind == "lower":
        vals, _ = lower_envelope_many(phi, kappa, nodes)
    elif kind == "upper":
        vals, _ = upper_envelope_many(phi, kappa, nodes)
    else:
        raise InvalidArgument(f"kind must be 'lower' or 'upper', got {kind!r}")
    return GridScalarField(phi.grid, vals)


def bump_weights(h: float, delta: float, d: int) -> np.ndarray:
    """Discrete bump kernel ``exp(-1/(1-|w/delta|^2))`` on the grid, normalized to sum 1."""
    m = int(math.ceil(delta / h))
    ticks = np.arange(-m, m + 1) * h
    mesh = np.meshgrid(*[ticks] * d, indexing="ij")
    rho2 = sum(g**2 for g in mesh) / delta**2
    w = np.zeros_like(rho2)
    inside = rho2 < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - rho2[inside]))
    return w / w.sum()


def mollify(phi: GridScalarField, delta: float) -> GridScalarField:
    """Periodic convolution with the bump kernel of radius ``delta``.

    Raises
    ------
    InvalidArgument
        Unless ``0 < delta < 1/4``.
    """
    if not (0 < delta < 0.25):
        raise InvalidArgument(f"mollifier radius must lie in (0, 1/4), got {delta}")
    w = bump_weights(phi.grid.h, delta, phi.grid.d)
    out = ndimage.correlate(np.asarray(phi.values), w, mode="wrap")
    return GridScalarField(phi.grid, out)
