"""Gaussian extremals, the log-Sobolev deficit, the Euler-Lagrange residual
of ``-Δu + u = 2u log|u|``, and the bubble-interaction error/nonlinearity.

A "bubble" is the positive solution ``g(x) = exp((1+d)/2 - |x|^2/2)`` and
its translates.  Everything that needs ``log g`` uses the analytic log so
that far tails never underflow into ``log(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp, xlogy

from .discretization import Field, Grid, apply_laplacian, integrate, inner

UNIT_L2 = "unit_l2"
SOLUTION = "solution"

# N(rho) = 2 G phi(rho/G) with phi(t) = (1+t) log(1+t) - t; series below |t| < 0.1
_PHI_SERIES = np.array([(-1.0) ** k / (k * (k - 1)) for k in range(2, 20)])


def as_centers(centers, dim: int) -> np.ndarray:
    c = np.asarray(centers, dtype=float)
    if c.ndim == 0:
        c = c.reshape(1, 1)
    elif c.ndim == 1:
        c = c.reshape(-1, 1) if dim == 1 else c.reshape(1, -1)
    if c.ndim != 2 or c.shape[1] != dim or c.shape[0] < 1:
        raise ValueError(f"centers must be a non-empty list of {dim}-d points")
    return c


def log_bubble(grid: Grid, center) -> np.ndarray:
    """``log g(x - center)`` sampled on the grid (plain array)."""
    y = as_centers(center, grid.dim)[0]
    r2 = np.sum((grid.coords() - y) ** 2, axis=1)
    return 0.5 * (1 + grid.dim) - 0.5 * r2


def bubble(grid: Grid, center) -> Field:
    return Field(grid, np.exp(log_bubble(grid, center)))


def bubble_gradient(grid: Grid, center, axis: int) -> Field:
    """``∂_{x_axis} g(x - center)``, analytic."""
    y = as_centers(center, grid.dim)[0]
    lg = log_bubble(grid, y)
    return Field(grid, -(grid.coords()[:, axis] - y[axis]) * np.exp(lg))


def bubble_sum(grid: Grid, centers) -> Field:
    c = as_centers(centers, grid.dim)
    return Field(grid, np.exp(log_bubble_sum(grid, c)))


def log_bubble_sum(grid: Grid, centers) -> np.ndarray:
    c = as_centers(centers, grid.dim)
    logs = np.stack([log_bubble(grid, y) for y in c])
    return logsumexp(logs, axis=0)


# ---------------------------------------------------------------- extremals


@dataclass(frozen=True)
class GaussianParams:
    a: float = 1.0
    center: tuple = (0.0,)
    gauge: str = UNIT_L2


def gaussian_extremal(params: GaussianParams, grid: Grid, boundary_tol: float = 1e-14) -> Field:
    """Sample ``A exp(-a |x - z|^2 / 2)`` in the requested gauge.

    ``unit_l2``: ``A = (a/pi)^(d/4)``; ``solution``: ``a = 1`` and
    ``A = e^((1+d)/2)``.
    """
    d = grid.dim
    z = np.atleast_1d(np.asarray(params.center, dtype=float))
    if z.shape != (d,):
        raise ValueError(f"center must be a {d}-d point")
    if not grid.contains(z, margin=2.0):
        raise ValueError(f"center {z.tolist()} is not inside the box with margin 2")
    if params.gauge == UNIT_L2:
        a = float(params.a)
        if not a > 0:
            raise ValueError("inverse variance must be positive")
        amp = (a / np.pi) ** (d / 4)
    elif params.gauge == SOLUTION:
        if params.a != 1.0:
            raise ValueError("the solution gauge fixes a = 1")
        a = 1.0
        amp = np.exp(0.5 * (1 + d))
    else:
        raise ValueError(f"unknown gauge {params.gauge!r}")
    gap = grid.radius - np.max(np.abs(z))
    if amp * np.exp(-0.5 * a * gap**2) >= boundary_tol:
        raise ValueError(
            f"boundary value {amp * np.exp(-0.5 * a * gap**2):.2e} exceeds {boundary_tol:.0e}; enlarge the box"
        )
    r2 = np.sum((grid.coords() - z) ** 2, axis=1)
    return Field(grid, amp * np.exp(-0.5 * a * r2))


# ---------------------------------------------------------------- deficit


@dataclass(frozen=True)
class DeficitReport:
    deficit: float
    grad_l2_sq: float
    entropy: float
    l2: float


def grad_l2_sq(u: Field) -> float:
    """``∫|∇u|^2`` in the energy form ``<u, -Δ_h u>`` of the stencil."""
    return -inner(u, apply_laplacian(u))


def entropy(u: Field) -> float:
    """``∫ u^2 log|u|`` with ``0 log 0 = 0``."""
    u2 = u.values**2
    return integrate(Field(u.grid, 0.5 * xlogy(u2, u2)))


def deficit(u: Field, normalize: bool = False, tol: float = 1e-8) -> DeficitReport:
    l2 = float(np.sqrt(inner(u, u)))
    if l2 == 0.0:
        raise ValueError("deficit of the zero field is undefined")
    if normalize:
        u = u / l2
        l2 = 1.0
    elif abs(l2 - 1.0) > tol:
        raise ValueError(f"field has L2 norm {l2:.10g}; pass normalize=True to rescale")
    d = u.grid.dim
    g2 = grad_l2_sq(u)
    ent = entropy(u)
    value = 0.25 * d * np.log(2.0 / (np.pi * d * np.e) * g2) - ent
    return DeficitReport(float(value), float(g2), float(ent), l2)


# ---------------------------------------------------------------- residual, E, N


def residual(u: Field) -> Field:
    """``-Δu + u - 2u log|u|`` pointwise."""
    v = u.values
    return Field(u.grid, -(apply_laplacian(u).values) + v - 2.0 * xlogy(v, np.abs(v)))


def error_term(centers, grid: Grid) -> Field:
    """``E = 2 G log G - 2 Σ g_i log g_i`` with ``G = Σ g_i``.

    Evaluated as ``2 Σ g_i log(1 + Σ_{j≠i} g_j / g_i)`` with the ratio kept
    in log form, so every term is nonnegative and keeps full relative
    precision in the tails.
    """
    c = as_centers(centers, grid.dim)
    logs = np.stack([log_bubble(grid, y) for y in c])
    out = np.zeros(grid.size)
    for i in range(len(c)):
        if len(c) == 1:
            break
        others = logsumexp(np.delete(logs, i, axis=0), axis=0)
        out += np.exp(logs[i]) * np.logaddexp(0.0, others - logs[i])
    return Field(grid, 2.0 * out)


def _phi(t: np.ndarray) -> np.ndarray:
    small = np.abs(t) < 0.1
    out = np.empty_like(t)
    ts = t[small]
    # Horner on t^2 (c0 + c1 t + ...)
    acc = np.zeros_like(ts)
    for c in _PHI_SERIES[::-1]:
        acc = acc * ts + c
    out[small] = acc * ts**2
    tl = t[~small]
    out[~small] = xlogy(1.0 + tl, 1.0 + tl) - tl
    return out


def nonlinear_term(centers, rho: Field, tol: float = 1e-12) -> Field:
    """``N(ρ) = 2(G+ρ)log(G+ρ) - 2G log G - 2(1 + log G)ρ``.

    Computed as ``2 G φ(ρ/G)``; ``G + ρ`` down to ``-tol`` is clamped to 0.
    """
    grid = rho.grid
    log_g = log_bubble_sum(grid, centers)
    g = np.exp(log_g)
    total = g + rho.values
    if np.min(total) < -tol:
        k = int(np.argmin(total))
        raise ValueError(f"G + rho = {total[k]:.3e} < 0 at point {grid.coords()[k].tolist()}")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        t = rho.values / g
    t = np.maximum(t, -1.0)
    t = np.where(np.isfinite(t), t, -1.0)
    return Field(grid, 2.0 * g * _phi(t))


# ---------------------------------------------------------------- gauge chain


@dataclass(frozen=True)
class ScalingGauge:
    lam: float
    sigma_u: float
    alpha_u: float
    residual_hminus1: float = field(default=float("nan"))


def gauge_chain(u: Field, tol: float = 1e-8, tail_tol: float = 1e-12) -> tuple[ScalingGauge, Field]:
    """Map a unit-L2 critical point of the deficit to a solution of
    ``-Δu + u = 2u log|u|``.

    ``u_λ(x) = λ^(d/2) u(λx)`` with ``λ = (d / (2‖∇u‖²))^(1/2)``, then
    ``u* = α u_λ``.  ``σ_u`` comes from the integrated identity
    ``d/2 - 1 - 2σ_u = 2∫u² log|u|``.  Substituting ``u*`` into the
    equation forces ``log α = 1 + σ_u - (d/2) log λ``.
    """
    from .norms import norm_hminus1

    d = u.grid.dim
    l2 = float(np.sqrt(inner(u, u)))
    if abs(l2 - 1.0) > tol:
        raise ValueError(f"gauge chain needs a unit-L2 field, got norm {l2:.10g}")
    g2 = grad_l2_sq(u)
    if not g2 > 0:
        raise ValueError("gradient vanishes")
    lam = float(np.sqrt(d / (2.0 * g2)))
    sigma_u = 0.5 * (0.5 * d - 1.0 - 2.0 * entropy(u))
    alpha = float(np.exp(1.0 + sigma_u - 0.5 * d * np.log(lam)))

    grid = u.grid
    h = grid.spacing
    pts = lam * grid.coords()
    idx = ((pts + grid.radius) / h).T
    outside = np.any(np.abs(pts) > grid.radius, axis=1)
    if np.any(outside):
        arr = np.abs(u.array())
        edge = max(
            float(np.max(np.take(arr, [0, 1, -2, -1], axis=ax))) for ax in range(d)
        )
        if alpha * lam ** (0.5 * d) * edge > tail_tol * alpha * lam ** (0.5 * d) * np.max(arr):
            raise ValueError("rescaling pulls in points outside the box where the field is not negligible")
    vals = ndimage.map_coordinates(u.array(), idx, order=3, mode="constant", cval=0.0, prefilter=True)
    out = Field(grid, alpha * lam ** (0.5 * d) * vals)
    gauge = ScalingGauge(lam, float(sigma_u), alpha, norm_hminus1(residual(out)))
    return gauge, out
