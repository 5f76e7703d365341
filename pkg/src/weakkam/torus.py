"""Geometry of the flat torus T^d = R^d / Z^d and periodic grid fields.

Points are plain float arrays whose last axis has length ``d`` and whose
coordinates are stored canonically in ``[0, 1)``. Batched inputs of shape
``(..., d)`` are accepted everywhere.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "GridSpec",
    "GridScalarField",
    "wrap",
    "torus_dist",
    "min_displacement",
    "interpolate",
    "read_field_csv",
    "as_points",
]

SUPPORTED_DIMS = (1, 2)


def as_points(x, d: int):
    """Normalize ``x`` to ``(N, d)`` points.

    Returns ``(points, batch_shape, single)``. In d=1 scalars and flat arrays
    are read as lists of points.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or (d == 1 and x.shape[-1] != 1):
        x = x[..., None]
    return x.reshape(-1, d), x.shape[:-1], x.shape == (d,)


def wrap(raw) -> np.ndarray:
    """Canonical representative of ``raw`` in ``[0, 1)^d``.

    Raises
    ------
    InvalidArgument
        If any coordinate is not finite.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"cannot wrap non-finite coordinates {raw!r}")
    out = np.mod(arr, 1.0)
    # np.mod(-1e-20, 1.0) rounds to 1.0
    out[out >= 1.0] = 0.0
    return out


def min_displacement(x, y) -> np.ndarray:
    """Shortest vector ``v`` with ``wrap(x + v) == y``.

    Each component lies in ``(-1/2, 1/2]``; an exact half-period offset is
    resolved to ``+1/2``.
    """
    delta = np.mod(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), 1.0)
    delta = np.where(delta >= 1.0, 0.0, delta)
    return np.where(delta > 0.5, delta - 1.0, delta)


def torus_dist(x, y) -> np.ndarray | float:
    """Flat-torus distance between ``x`` and ``y`` (batched over leading axes)."""
    dist = np.linalg.norm(min_displacement(x, y), axis=-1)
    return float(dist) if np.ndim(dist) == 0 else dist


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``n`` nodes per axis on T^d.

    Node ``(i_0, ..., i_{d-1})`` sits at ``(i_0 h, ..., i_{d-1} h)`` with
    ``h = 1/n``; flattened storage is lexicographic (C order).
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in SUPPORTED_DIMS:
            raise InvalidArgument(f"dimension must be one of {SUPPORTED_DIMS}, got {self.d}")
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 4 or n & (n - 1):
            raise InvalidArgument(f"points per axis must be a power of two >= 4, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n**d, d)`` in lexicographic order."""
        axes = [np.arange(self.n) * self.h] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def nearest_node(self, x) -> np.ndarray:
        """Flat index of the node nearest to each point of ``x``."""
        x = np.asarray(x, dtype=float)
        idx = np.mod(np.floor(x * self.n + 0.5).astype(np.int64), self.n)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)


class GridScalarField:
    """Immutable samples of a function T^d -> R on a :class:`GridSpec`.

    Parameters
    ----------
    grid : GridSpec
    values : array_like
        Either ``n**d`` values in lexicographic order or an array of shape
        ``grid.shape``.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.size:
            raise InvalidArgument(f"expected {grid.size} values for {grid}, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("grid field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GridScalarField is immutable")

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> GridScalarField:
        """Sample ``func`` (mapping ``(N, d)`` points to ``(N,)``) at the nodes."""
        return cls(grid, np.asarray(func(grid.nodes()), dtype=float))

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> GridScalarField:
        return cls(grid, np.full(grid.shape, float(c)))

    def __call__(self, x):
        return interpolate(self, x)

    def __add__(self, c):
        return GridScalarField(self.grid, self.values + c)

    def __neg__(self):
        return GridScalarField(self.grid, -self.values)

    def __sub__(self, c):
        return GridScalarField(self.grid, self.values - c)

    def __repr__(self):
        return f"GridScalarField(d={self.grid.d}, n={self.grid.n})"

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def oscillation(self) -> float:
        return float(self.values.max() - self.values.min())

    def axis_slopes(self) -> list[np.ndarray]:
        """Forward differences ``(phi[i+1] - phi[i]) / h`` along each axis."""
        h = self.grid.h
        return [(np.roll(self.values, -1, axis=a) - self.values) / h for a in range(self.grid.d)]

    def lipschitz(self) -> float:
        """Euclidean Lipschitz constant of the multilinear interpolant.

        Exact in d=1; in d=2 the bound ``sqrt(K_0**2 + K_1**2)`` built from
        the per-axis maximal slopes.
        """
        per_axis = [float(np.max(np.abs(s))) for s in self.axis_slopes()]
        return float(np.sqrt(np.sum(np.square(per_axis))))

    def to_csv(self, path=None) -> str:
        """Serialize as ``# d=<d> n=<n>`` followed by one value per line."""
        buf = io.StringIO()
        buf.write(f"# d={self.grid.d} n={self.grid.n}\n")
        for val in self.flat:
            buf.write(repr(float(val)) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_field_csv(source) -> GridScalarField:
    """Parse a field written by :meth:`GridScalarField.to_csv`.

    ``source`` is a path or the CSV text itself.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source
    lines = [ln.strip() for ln in text.strip().splitlines()]
    header = lines[0]
    if not header.startswith("#"):
        raise InvalidArgument("missing '# d=<d> n=<n>' header")
    fields = dict(tok.split("=") for tok in header[1:].split())
    grid = GridSpec(int(fields["d"]), int(fields["n"]))
    return GridScalarField(grid, [float(v) for v in lines[1:]])


def interpolate(field: GridScalarField, x) -> np.ndarray | float:
    """Periodic multilinear interpolation of ``field`` at ``x``.

    ``x`` has shape ``(d,)`` or ``(..., d)``; a scalar is returned for a
    single point. In d=1 a scalar or a flat array of points is also accepted.
    """
    grid = field.grid
    pts, shape, single = as_points(x, grid.d)
    u = np.mod(pts, 1.0) * grid.n
    base = np.floor(u)
    frac = u - base
    base = base.astype(np.int64) % grid.n
    vals = field.values
    n = grid.n
    if grid.d == 1:
        i0 = base[:, 0]
        f0 = frac[:, 0]
        out = (1.0 - f0) * vals[i0] + f0 * vals[(i0 + 1) % n]
    else:
        i0, i1 = base[:, 0], base[:, 1]
        j0, j1 = (i0 + 1) % n, (i1 + 1) % n
        f0, f1 = frac[:, 0], frac[:, 1]
        out = (
            (1 - f0) * (1 - f1) * vals[i0, i1]
            + f0 * (1 - f1) * vals[j0, i1]
            + (1 - f0) * f1 * vals[i0, j1]
            + f0 * f1 * vals[j0, j1]
        )
    if single:
        return float(out[0])
    return out.reshape(shape)
