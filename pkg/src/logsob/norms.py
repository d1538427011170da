"""Sobolev norms, bubble separation statistics, the Voronoi/slab partition
around a bubble configuration, and the weighted sup-norms built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_centers, log_bubble
from .discretization import Field, Grid, apply_helmholtz, helmholtz_solve, inner

_TIE_TOL = 1e-10
_SLAB_TOL = 1e-9


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1: float
    grad_l2: float


def norms(u: Field) -> NormReport:
    l2_sq = inner(u, u)
    h1_sq = inner(u, apply_helmholtz(u))
    grad_sq = max(h1_sq - l2_sq, 0.0)
    return NormReport(float(np.sqrt(l2_sq)), float(np.sqrt(l2_sq + grad_sq)), float(np.sqrt(grad_sq)))


def norm_h1(u: Field) -> float:
    return norms(u).h1


def norm_hminus1(f: Field) -> float:
    """Dual norm ``sup <f, v> / ‖v‖_{H^1}`` on the truncated box."""
    if not np.any(f.values):
        return 0.0
    w = helmholtz_solve(f)
    return float(np.sqrt(max(inner(f, w), 0.0)))


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class SeparationStats:
    eta_pair: np.ndarray
    eta_per_center: np.ndarray
    eta: float


def separation_stats(centers) -> SeparationStats:
    c = np.asarray(centers, dtype=float)
    diff = c[:, None, :] - c[None, :, :]
    pair = np.sqrt(np.sum(diff**2, axis=-1))
    off = pair + np.diag(np.full(len(c), np.inf))
    per = off.min(axis=1)
    return SeparationStats(pair, per, float(per.min()))


@dataclass
class PartitionGeometry:
    grid: Grid
    centers: np.ndarray
    log_bubbles: np.ndarray  # (nu, size)
    voronoi_label: np.ndarray
    pair_label: np.ndarray
    axial: dict  # (i, j) -> t_ij(x)
    transverse_sq: dict  # (i, j) -> |P_perp (x - y_i)|^2
    pair_cells: dict  # (i, j) -> bool mask of Omega_{i,j,d-1}
    stats: SeparationStats

    @property
    def nu(self) -> int:
        return len(self.centers)

    def to_json(self) -> dict:
        s = self.stats
        return {
            "centers": self.centers.tolist(),
            "eta": None if np.isinf(s.eta) else s.eta,
            "eta_per_center": [None if np.isinf(e) else float(e) for e in s.eta_per_center],
            "eta_pair": s.eta_pair.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, grid: Grid) -> "PartitionGeometry":
        return partition_geometry(grid, doc["centers"])


def _first_max(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax over axis 0 with near-ties sent to the lowest index."""
    top = values.max(axis=0)
    close = values >= top - _TIE_TOL * (1.0 + np.abs(top))
    return np.argmax(close, axis=0)


def partition_geometry(grid: Grid, centers, margin: float = 2.0) -> PartitionGeometry:
    c = as_centers(centers, grid.dim)
    for y in c:
        if not grid.contains(y, margin=margin):
            raise ValueError(f"center {y.tolist()} is not inside the box with margin {margin}")
    x = grid.coords()
    logs = np.stack([log_bubble(grid, y) for y in c])
    label = _first_max(logs)
    nu = len(c)
    axial, trans = {}, {}
    for i in range(nu):
        for j in range(nu):
            if i == j:
                continue
            e = (c[j] - c[i]) / np.linalg.norm(c[j] - c[i])
            axial[(i, j)] = (x - 0.5 * (c[i] + c[j])) @ e
            rel = x - c[i]
            along = rel @ e
            trans[(i, j)] = np.maximum(np.sum(rel**2, axis=1) - along**2, 0.0)

    pair_label = np.full(grid.size, -1, dtype=int)
    cells = {}
    for i in range(nu):
        others = [j for j in range(nu) if j != i]
        if not others:
            continue
        # Ω_i is defined with >=, so points on a Voronoi boundary belong to every tied cell
        top = logs.max(axis=0)
        in_i = logs[i] >= top - _TIE_TOL * (1.0 + np.abs(top))
        tr = np.stack([trans[(i, j)] for j in others])
        best = tr.min(axis=0)
        tied = tr <= best + _TIE_TOL * (1.0 + best)
        own = label == i
        pair_label[own] = np.asarray(others)[np.argmax(tied, axis=0)][own]
        for k, j in enumerate(others):
            # membership follows the >= in the definition, so ties sit in every tied cell
            cells[(i, j)] = in_i & tied[k]
    return PartitionGeometry(grid, c, logs, label, pair_label, axial, trans, cells, separation_stats(c))


def _sup(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].max()) if np.any(mask) else 0.0


def weighted_norms(u: Field, geom: PartitionGeometry, sigma: float = 0.1) -> tuple[float, float]:
    """The natural and sharp weighted sup-norms of ``u``.

    Away from the mid-plane slab ``|t_ij| <= R`` the weight is
    ``g_i^(1-sigma)``; inside the slab it is the transverse Gaussian scaled
    by ``exp(-(eta_ij^2 - eta^2)/8)``.  The natural norm uses
    ``R = sigma*eta``; the sharp norm uses ``R = sigma*eta - 1`` and an
    extra ``eta^2`` on the slab term.
    """
    if geom.nu < 2:
        raise ValueError("weighted norms need at least two centers")
    if not 0 < sigma <= 0.25:
        raise ValueError(f"sigma must lie in (0, 0.25], got {sigma}")
    if u.grid != geom.grid:
        raise ValueError("field and geometry live on different grids")
    d = geom.grid.dim
    eta = geom.stats.eta
    absu = np.abs(u.values)
    natural = sharp = 0.0
    for (i, j), cell in geom.pair_cells.items():
        if not np.any(cell):
            continue
        t = np.abs(geom.axial[(i, j)])
        core = absu * np.exp(-(1.0 - sigma) * geom.log_bubbles[i])
        eta_ij = geom.stats.eta_pair[i, j]
        slab_weight = np.exp(-(eta_ij**2 - eta**2) / 8.0 + 0.5 * (1 + d) - 0.5 * geom.transverse_sq[(i, j)])
        slab = absu / slab_weight
        # thresholds often land on grid points; the tolerance keeps mirror points on the same side
        in_nat = t <= sigma * eta + _SLAB_TOL
        in_sh = t <= sigma * eta - 1.0 + _SLAB_TOL
        natural += _sup(core, cell & ~in_nat) + _sup(slab, cell & in_nat)
        sharp += _sup(core, cell & ~in_sh) + eta**2 * _sup(slab, cell & in_sh)
    return natural, sharp
