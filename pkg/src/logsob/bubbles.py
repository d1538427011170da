"""Two-bubble construction: a projected fixed point for the remainder
``ρ_L`` around ``g(· + L/2 e1) + g(· - L/2 e1)``, the resulting near-solution
``u_L`` whose residual lies exactly in the translation span, and a
cut-off test function giving a duality lower bound on ``‖f_L‖_{H^-1}``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    as_centers,
    bubble,
    bubble_gradient,
    bubble_sum,
    error_term,
    nonlinear_term,
    residual,
)
from .discretization import Field, Grid, SolverError, apply_helmholtz, h1_inner, inner, make_grid
from .linearized import AROUND_BUBBLES, operator_matrix
from .norms import norm_h1, norm_hminus1, partition_geometry, separation_stats, weighted_norms


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class PositivityLoss(RuntimeError):
    def __init__(self, message: str, minimum: float):
        super().__init__(message)
        self.minimum = minimum


@dataclass
class MultiplierSet:
    """Multipliers of the translation modes, center-major: ``a[i*d + l]``."""

    a: np.ndarray

    def per_center(self, dim: int) -> np.ndarray:
        return self.a.reshape(-1, dim)


class BorderedSolver:
    """Factorized saddle system for the operator around ``centers``::

        [ A      T ] [psi]   [h]
        [ (HT)^T 0 ] [ b ] = [0]

    ``A`` is the linearized operator, ``T`` holds the translation modes
    (entering the equation with the L2 pairing) and ``H = -Δ + 1`` turns
    the constraint rows into H^1 orthogonality.  The radial directions are
    left free, so the system is indefinite; a sparse LU handles it.
    """

    def __init__(self, grid: Grid, centers, rtol: float = 1e-11, min_separation: float = 3.0):
        c = as_centers(centers, grid.dim)
        if len(c) > 1 and separation_stats(c).eta < min_separation:
            raise ValueError(f"centers closer than {min_separation}")
        self.grid, self.centers, self.rtol = grid, c, rtol
        self.modes = [bubble_gradient(grid, y, l) for y in c for l in range(grid.dim)]
        t = np.stack([m.values for m in self.modes], axis=1)
        ht = np.stack([apply_helmholtz(m).values for m in self.modes], axis=1)
        # rows scaled to unit max so the border is balanced against A
        ht = ht / np.max(np.abs(ht), axis=0)
        a = operator_matrix(AROUND_BUBBLES, c, grid)
        k = t.shape[1]
        self.matrix = sp.bmat(
            [[a, sp.csr_matrix(t)], [sp.csr_matrix(ht.T), sp.csr_matrix((k, k))]], format="csc"
        )
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise ValueError(f"bordered system is singular: {exc}") from exc
        self.k = k

    def solve(self, rhs: Field) -> tuple[Field, MultiplierSet]:
        n = self.grid.size
        b = np.concatenate([rhs.values, np.zeros(self.k)])
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return Field.zeros(self.grid), MultiplierSet(np.zeros(self.k))
        x = self._lu.solve(b)
        res = np.linalg.norm(self.matrix @ x - b) / bnorm
        for _ in range(3):
            if res <= self.rtol:
                break
            x = x + self._lu.solve(b - self.matrix @ x)
            res = np.linalg.norm(self.matrix @ x - b) / bnorm
        if not np.all(np.isfinite(x)) or res > self.rtol:
            raise SolverError(f"bordered solve reached relative residual {res:.3e}", res)
        return Field(self.grid, x[:n]), MultiplierSet(x[n:].copy())


def projected_linear_solve(centers, rhs: Field) -> tuple[Field, MultiplierSet]:
    """Solve ``L ψ + Σ b_{l,i} ∂_l g_i = rhs`` with ``<ψ, ∂_l g_i>_{H^1} = 0``."""
    return BorderedSolver(rhs.grid, centers).solve(rhs)


# ---------------------------------------------------------------- pair


@dataclass
class BubblePair:
    L: float
    grid: Grid
    centers: np.ndarray
    rho: Field = field(repr=False)
    u: Field = field(repr=False)
    f: Field = field(repr=False)
    multipliers: MultiplierSet
    iterations: int
    sharp_norm_rho: float
    min_u: float
    increments: list = field(default_factory=list, repr=False)
    damped: bool = False

    @property
    def contraction_ratios(self) -> np.ndarray:
        inc = np.asarray(self.increments)
        # the last increments sit at rounding level and say nothing about the map
        keep = inc[:-1] > 1e-13 * (1.0 + norm_h1(self.rho))
        inc = inc[:-1][keep]
        return inc[1:] / inc[:-1] if len(inc) > 1 else np.zeros(0)

    def span_defect(self) -> float:
        """``max |f + Σ a ∂g|``: zero when ``f`` lies in the translation span."""
        modes = np.stack(
            [bubble_gradient(self.grid, y, l).values for y in self.centers for l in range(self.grid.dim)], axis=1
        )
        return float(np.max(np.abs(self.f.values + modes @ self.multipliers.a)))

    def ortho_residuals(self) -> np.ndarray:
        return np.array(
            [h1_inner(self.rho, bubble_gradient(self.grid, y, l)) for y in self.centers for l in range(self.grid.dim)]
        )

    def summary(self) -> dict:
        return {
            "L": self.L,
            "dim": self.grid.dim,
            "radius": self.grid.radius,
            "points_per_axis": self.grid.points_per_axis,
            "centers": self.centers.tolist(),
            "iterations": self.iterations,
            "damped": self.damped,
            "multipliers": self.multipliers.a.tolist(),
            "rho_h1": norm_h1(self.rho),
            "sharp_norm_rho": self.sharp_norm_rho,
            "f_hminus1": norm_hminus1(self.f),
            "min_u": self.min_u,
            "span_defect": self.span_defect(),
            "ortho_residuals": self.ortho_residuals().tolist(),
            "increments": list(self.increments),
        }


def auto_grid(L: float, dim: int = 1, spacing: float | None = None) -> Grid:
    """``radius = L/2 + 7``; spacing at most 0.05 (1-d) or 0.1 (2-d) by default."""
    radius = 0.5 * L + 7.0
    h = spacing if spacing is not None else (0.05 if dim == 1 else 0.1)
    n = int(math.ceil(round(2 * radius / h, 9))) + 1
    return make_grid(dim, radius, n, 4)


def pair_centers(L: float, dim: int) -> np.ndarray:
    c = np.zeros((2, dim))
    c[0, 0], c[1, 0] = -0.5 * L, 0.5 * L
    return c


def build_pair(
    L: float,
    grid: Grid | None = None,
    dim: int = 1,
    tol: float = 1e-12,
    max_iter: int = 50,
    sigma: float = 0.1,
) -> BubblePair:
    """Picard iteration ``ρ^{k+1} = P(E + N(ρ^k))`` from ``ρ^0 = 0``.

    ``P`` is the bordered solve.  The source is the interaction error minus
    the grid residual of each single bubble, so that the assembled residual
    of ``u_L`` lies in the translation span to solver precision (the
    single-bubble term is zero in the continuum).
    """
    if grid is None:
        grid = auto_grid(L, dim)
    if not 3.0 <= L <= 2.0 * grid.radius - 12.0:
        raise ValueError(f"L = {L} outside [3, 2*radius - 12] for radius {grid.radius}")
    centers = pair_centers(L, grid.dim)
    solver = BorderedSolver(grid, centers)
    source = error_term(centers, grid)
    for y in centers:
        source = source - residual(bubble(grid, y))

    rho = Field.zeros(grid)
    mult = MultiplierSet(np.zeros(solver.k))
    increments = []
    damped = False
    converged = False
    for it in range(1, max_iter + 1):
        try:
            nl = nonlinear_term(centers, rho)
        except ValueError as exc:
            g = bubble_sum(grid, centers)
            raise PositivityLoss(f"positivity lost at iteration {it}: {exc}", float(np.min((g + rho).values))) from exc
        new, mult = solver.solve(source + nl)
        if damped:
            new = rho + 0.5 * (new - rho)
        inc = norm_h1(new - rho)
        increments.append(inc)
        if len(increments) >= 3 and not damped and increments[-1] > 0.9 * increments[-2]:
            damped = True
        scale = norm_h1(rho)
        rho = new
        if inc <= tol * (1.0 + scale):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Picard iteration did not converge in {max_iter} steps", increments)

    g = bubble_sum(grid, centers)
    u = g + rho
    f = residual(u)
    _, sharp = weighted_norms(rho, partition_geometry(grid, centers), sigma)
    return BubblePair(
        float(L), grid, centers, rho, u, f, mult, it, sharp, float(np.min(u.values)), increments, damped
    )


# ---------------------------------------------------------------- witness


@dataclass(frozen=True)
class WitnessReport:
    point: tuple
    pairing_f: float
    pairing_e: float
    psi_h1: float
    lower_bound: float
    f_hminus1: float


def smooth_bump(r: np.ndarray, inner_radius: float = 1.0, outer_radius: float = 2.0) -> np.ndarray:
    """1 on ``r <= inner``, 0 on ``r >= outer``, quintic (C^2) in between."""
    s = np.clip((r - inner_radius) / (outer_radius - inner_radius), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def lower_bound_witness(pair: BubblePair, shift: float = 5.0) -> WitnessReport:
    """Test ``f_L`` against ``g_1 · bump`` centred at
    ``(y1 + y2)/2 + (2 log η / η²)(y2 - y1) + shift e1``.

    By duality ``|<f, ψ>| / ‖ψ‖_{H^1} <= ‖f‖_{H^-1}``.
    """
    grid = pair.grid
    y1, y2 = pair.centers[0], pair.centers[1]
    eta = float(np.linalg.norm(y2 - y1))
    p = 0.5 * (y1 + y2) + (2.0 * np.log(eta) / eta**2) * (y2 - y1)
    p = p.copy()
    p[0] += shift
    if not grid.contains(p, margin=2.0):
        raise ValueError(f"witness point {p.tolist()} is outside the box")
    r = np.linalg.norm(grid.coords() - p, axis=1)
    psi = bubble(grid, y1) * smooth_bump(r)
    psi_h1 = norm_h1(psi)
    pf = inner(pair.f, psi)
    pe = inner(error_term(pair.centers, grid), psi)
    return WitnessReport(tuple(p.tolist()), pf, pe, psi_h1, abs(pf) / psi_h1, norm_hminus1(pair.f))
