"""H^1 distance to the manifold of ``nu`` translated bubbles, with bubble
count detection from the energy windows ``(nu ± 1/2) c0``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import as_centers, bubble, bubble_gradient, bubble_sum
from .discretization import Field, Grid, apply_helmholtz, inner
from .norms import norms, separation_stats


class CenterCollision(RuntimeError):
    pass


@dataclass
class FitResult:
    centers: np.ndarray
    rho: Field = field(repr=False)
    dist_h1: float
    ortho_residuals: np.ndarray
    iterations: int
    converged: bool
    objective_history: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "dist_h1": self.dist_h1,
            "ortho_residuals": self.ortho_residuals.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _translation_block(grid: Grid, centers: np.ndarray):
    cols = [bubble_gradient(grid, y, l).values for y in centers for l in range(grid.dim)]
    t = np.stack(cols, axis=1)
    ht = np.stack([apply_helmholtz(Field(grid, c)).values for c in cols], axis=1)
    return t, ht


def _residual_and_objective(u: Field, centers: np.ndarray):
    rho = u - bubble_sum(u.grid, centers)
    hrho = apply_helmholtz(rho)
    return rho, hrho, inner(rho, hrho)


def fit_distance(
    u: Field,
    nu: int,
    init_centers,
    step_tol: float = 1e-10,
    max_iter: int = 100,
    min_separation: float = 0.5,
) -> FitResult:
    """Gauss-Newton on ``‖u - Σ g(· - z_i)‖²_{H^1}`` over the centers.

    The gradient with respect to ``z_{i,l}`` is ``2 <ρ, ∂_l g_i>_{H^1}``, so
    stationarity is exactly the H^1 orthogonality of the remainder to the
    translation modes.
    """
    grid = u.grid
    z = as_centers(init_centers, grid.dim).copy()
    if nu < 1 or len(z) != nu:
        raise ValueError(f"need {nu} initial centers, got {len(z)}")
    h = grid.cell_volume
    rho, hrho, obj = _residual_and_objective(u, z)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        t, ht = _translation_block(grid, z)
        gram = t.T @ ht * h
        grad = t.T @ hrho.values * h  # = <rho, ∂g>_{H^1}
        # r(z) = u - Σg(.-z); dr/dz = +∂g, so the GN step solves gram δ = -grad
        step = -np.linalg.solve(0.5 * (gram + gram.T), grad)
        alpha = 1.0
        accepted = False
        for _ in range(40):
            trial = z + alpha * step.reshape(z.shape)
            t_rho, t_hrho, t_obj = _residual_and_objective(u, trial)
            if t_obj <= obj:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no decrease possible along the GN direction: at a stationary point to rounding
            converged = np.max(np.abs(step)) < 1e3 * step_tol
            break
        z, rho, hrho, obj = trial, t_rho, t_hrho, t_obj
        history.append(obj)
        if nu > 1 and separation_stats(z).eta < min_separation:
            raise CenterCollision(f"centers collided (separation {separation_stats(z).eta:.3g})")
        if np.max(np.abs(alpha * step)) < step_tol:
            converged = True
            break
    t, _ = _translation_block(grid, z)
    ortho = t.T @ hrho.values * h
    return FitResult(z, rho, float(np.sqrt(max(obj, 0.0))), ortho, it, bool(converged), history)


# ---------------------------------------------------------------- Struwe


@dataclass
class Decomposition:
    nu: int
    fit: FitResult
    energy: float
    c0: float
    peak_count: int
    poor_fit: bool


def energy_window(energy: float, c0: float) -> int:
    """The ``nu`` with ``(nu - 1/2) c0 < energy < (nu + 1/2) c0``."""
    ratio = energy / c0
    nu = int(np.floor(ratio + 0.5))
    if nu < 1 or not (nu - 0.5 < ratio < nu + 0.5):
        nearest = max(1, int(round(ratio)))
        raise ValueError(
            f"‖u‖²_H1 = {energy:.6g} = {ratio:.4f} c0 is outside every window; nearest nu = {nearest}"
        )
    return nu


def find_peaks(u: Field, rel_threshold: float = 0.5, min_separation: float = 2.0) -> np.ndarray:
    """Local maxima above ``rel_threshold * max(u)``, greedily separated.

    Equal heights are ordered lexicographically by coordinate.
    """
    arr = u.array()
    size = (3,) * u.grid.dim
    is_max = (arr == ndimage.maximum_filter(arr, size=size, mode="constant", cval=-np.inf))
    is_max &= arr >= rel_threshold * arr.max()
    flat = np.flatnonzero(is_max.ravel())
    pts = u.grid.coords()[flat]
    vals = u.values[flat]
    keys = [-vals] + [pts[:, k] for k in range(u.grid.dim - 1, -1, -1)]
    order = np.lexsort(keys)
    chosen = []
    for k in order:
        p = pts[k]
        if all(np.linalg.norm(p - q) >= min_separation for q in chosen):
            chosen.append(p)
    return np.array(chosen).reshape(-1, u.grid.dim)


def struwe_decompose(
    u: Field,
    rel_threshold: float = 0.5,
    min_separation: float = 2.0,
    poor_fit_tol: float = 0.1,
) -> Decomposition:
    """Detect the bubble count from the energy window and fit the centers.

    When there are fewer peaks than ``nu`` the missing initial centers are
    placed at distance ``min_separation`` along the first axis from the
    highest peak.  ``poor_fit`` flags ``dist > poor_fit_tol * sqrt(c0)``.
    """
    if np.min(u.values) < -1e-10:
        raise ValueError("struwe_decompose expects a nonnegative field")
    grid = u.grid
    c0 = norms(bubble(grid, np.zeros(grid.dim))).h1 ** 2
    energy = norms(u).h1 ** 2
    nu = energy_window(energy, c0)
    peaks = find_peaks(u, rel_threshold, min_separation)
    init = list(peaks[:nu])
    offset = np.zeros(grid.dim)
    offset[0] = min_separation
    for k in range(nu - len(init)):
        sign = 1.0 if k % 2 == 0 else -1.0
        init.append(peaks[0] + sign * (k // 2 + 1) * offset)
    try:
        fit = fit_distance(u, nu, np.array(init))
    except CenterCollision:
        fit = None
    if fit is None:
        rho = u - bubble_sum(grid, np.array(init))
        fit = FitResult(np.array(init), rho, norms(rho).h1, np.full(nu * grid.dim, np.nan), 0, False)
    poor = (not fit.converged) or fit.dist_h1 > poor_fit_tol * np.sqrt(c0)
    return Decomposition(nu, fit, energy, c0, len(peaks), bool(poor))
