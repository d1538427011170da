"""Uniform tensor grids on truncated boxes, finite-difference stencils,
quadrature and the Dirichlet Helmholtz inverse.

Fields are zero-extended outside the box: the stencil treats every
neighbour beyond the last grid point as 0.  With that convention the
trapezoidal rule on the extended box reduces to ``h**dim * sum(u)``, and
``-Laplacian`` is a symmetric positive semi-definite matrix, so the
discrete H^1 / H^-1 pairings below are exact duals of each other.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

FIELD_FORMAT = "logsob-field-v1"

_STENCILS = {
    2: np.array([1.0, -2.0, 1.0]),
    4: np.array([-1.0 / 12, 4.0 / 3, -5.0 / 2, 4.0 / 3, -1.0 / 12]),
}


class SolverError(RuntimeError):
    """A linear or eigen solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Grid:
    dim: int
    radius: float
    points_per_axis: int
    stencil_order: int = 4

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.points_per_axis - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self) -> np.ndarray:
        k = np.arange(self.points_per_axis)
        return -self.radius + k * self.spacing

    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(size, dim)``, row-major order."""
        return _coords(self)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return p.shape == (self.dim,) and bool(np.all(np.abs(p) <= self.radius - margin))


@lru_cache(maxsize=32)
def _coords(grid: Grid) -> np.ndarray:
    x = grid.axis()
    mesh = np.meshgrid(*([x] * grid.dim), indexing="ij")
    out = np.stack([m.ravel() for m in mesh], axis=1)
    out.setflags(write=False)
    return out


def make_grid(dim: int, radius: float, points_per_axis: int, stencil_order: int = 4) -> Grid:
    if dim not in (1, 2):
        raise ValueError(f"unsupported dim {dim!r}; only 1 and 2 are available")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius!r}")
    if radius < 4:
        raise ValueError(f"radius must be at least 4, got {radius!r}")
    if int(points_per_axis) != points_per_axis or points_per_axis < 16:
        raise ValueError(f"points_per_axis must be an integer >= 16, got {points_per_axis!r}")
    if stencil_order not in _STENCILS:
        raise ValueError(f"stencil_order must be 2 or 4, got {stencil_order!r}")
    return Grid(int(dim), float(radius), int(points_per_axis), int(stencil_order))


class Field:
    """Real samples of a function on a :class:`Grid` (flat, row-major)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=np.float64).reshape(-1)
        if v.size != grid.size:
            raise ValueError(f"expected {grid.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        return cls(grid, fn(grid.coords()))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __abs__(self):
        return Field(self.grid, np.abs(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"Field(dim={self.grid.dim}, n={self.grid.points_per_axis}, max|u|={self.max_abs():.3e})"


# ---------------------------------------------------------------- operators


@lru_cache(maxsize=32)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of the central-difference Laplacian with zero extension."""
    n = grid.points_per_axis
    stencil = _STENCILS[grid.stencil_order] / grid.spacing**2
    half = len(stencil) // 2
    d1 = sp.diags(
        [np.full(n - abs(k), c) for k, c in zip(range(-half, half + 1), stencil)],
        list(range(-half, half + 1)),
        shape=(n, n),
        format="csr",
    )
    if grid.dim == 1:
        return d1
    eye = sp.identity(n, format="csr")
    return (sp.kron(d1, eye) + sp.kron(eye, d1)).tocsr()


@lru_cache(maxsize=32)
def helmholtz_matrix(grid: Grid) -> sp.csc_matrix:
    """``-Laplacian + 1``; also the Gram operator of the discrete H^1 pairing."""
    return (sp.identity(grid.size, format="csr") - laplacian_matrix(grid)).tocsc()


@lru_cache(maxsize=16)
def _helmholtz_lu(grid: Grid):
    return spla.splu(helmholtz_matrix(grid))


def apply_laplacian(u: Field) -> Field:
    return Field(u.grid, laplacian_matrix(u.grid) @ u.values)


def apply_helmholtz(u: Field) -> Field:
    """``(-Laplacian + 1) u``."""
    return Field(u.grid, helmholtz_matrix(u.grid) @ u.values)


def integrate(u: Field) -> float:
    # np.sum is pairwise on contiguous data, so the result is order-deterministic
    return float(np.sum(u.values) * u.grid.cell_volume)


def inner(u: Field, v: Field) -> float:
    """Discrete L^2 pairing."""
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return float(np.dot(u.values, v.values) * u.grid.cell_volume)


def h1_inner(u: Field, v: Field) -> float:
    """Discrete H^1 pairing ``<u, (-Laplacian + 1) v>``."""
    return inner(u, apply_helmholtz(v))


def helmholtz_solve(f: Field, rtol: float = 1e-12) -> Field:
    """Solve ``(-Laplacian + 1) w = f`` with homogeneous Dirichlet data."""
    a = helmholtz_matrix(f.grid)
    b = f.values
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return Field.zeros(f.grid)
    lu = _helmholtz_lu(f.grid)
    w = lu.solve(b)
    res = np.linalg.norm(a @ w - b) / bnorm
    if res > rtol:
        # one step of iterative refinement before giving up
        w = w + lu.solve(b - a @ w)
        res = np.linalg.norm(a @ w - b) / bnorm
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"Helmholtz solve reached relative residual {res:.3e} > {rtol:.1e}", res)
    return Field(f.grid, w)


# ---------------------------------------------------------------- field files


def field_to_json(u: Field) -> dict:
    g = u.grid
    raw = u.values.astype("<f8").tobytes()
    return {
        "format": FIELD_FORMAT,
        "dim": g.dim,
        "radius": g.radius,
        "points_per_axis": g.points_per_axis,
        "stencil_order": g.stencil_order,
        "dtype": "f64le",
        "order": "row-major",
        "encoding": "base64",
        "data": base64.b64encode(raw).decode("ascii"),
    }


def field_from_json(doc: dict) -> Field:
    if doc.get("format") != FIELD_FORMAT:
        raise ValueError(f"unknown field format {doc.get('format')!r}")
    if doc.get("dtype") != "f64le" or doc.get("order") != "row-major" or doc.get("encoding") != "base64":
        raise ValueError("unsupported dtype/order/encoding in field document")
    grid = make_grid(doc["dim"], doc["radius"], doc["points_per_axis"], doc["stencil_order"])
    values = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8")
    return Field(grid, values)


def save_field(u: Field, path) -> None:
    Path(path).write_text(json.dumps(field_to_json(u), sort_keys=True))


def load_field(path) -> Field:
    return field_from_json(json.loads(Path(path).read_text()))
