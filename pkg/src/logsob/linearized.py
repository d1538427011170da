"""Linearized operators around one bubble (the shifted harmonic oscillator)
and around a bubble configuration, with spectra, kernel projections and
the coercivity gap on the complement of the near-kernel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import as_centers, bubble, bubble_gradient, log_bubble_sum
from .discretization import Field, Grid, SolverError, apply_helmholtz, laplacian_matrix

OSCILLATOR = "oscillator"
AROUND_BUBBLES = "around_bubbles"


def potential(kind: str, centers, grid: Grid) -> np.ndarray:
    """Multiplicative part of the operator, ``A = -Δ + V``."""
    d = grid.dim
    if kind == OSCILLATOR:
        y = np.zeros(d) if centers is None else as_centers(centers, d)[0]
        r2 = np.sum((grid.coords() - y) ** 2, axis=1)
        return r2 - (d + 2)
    if kind == AROUND_BUBBLES:
        return -1.0 - 2.0 * log_bubble_sum(grid, centers)
    raise ValueError(f"unknown operator kind {kind!r}")


def operator_matrix(kind: str, centers, grid: Grid) -> sp.csr_matrix:
    return (-laplacian_matrix(grid) + sp.diags(potential(kind, centers, grid))).tocsr()


def apply_linearized(kind: str, centers, u: Field) -> Field:
    return Field(u.grid, operator_matrix(kind, centers, u.grid) @ u.values)


# ---------------------------------------------------------------- spectra


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenfields: list
    residuals: np.ndarray

    def to_json(self) -> dict:
        return {"eigenvalues": self.eigenvalues.tolist(), "residuals": self.residuals.tolist()}


def _normalize_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


def _banded_lowest(a: sp.spmatrix, count: int):
    half = max(abs(k) for k in a.todia().offsets)
    n = a.shape[0]
    band = np.zeros((half + 1, n))
    dense_diag = a.diagonal
    for k in range(half + 1):
        band[k, : n - k] = dense_diag(-k)
    return sla.eig_banded(band, lower=True, select="i", select_range=(0, count - 1))


def spectrum(kind: str, centers, count: int, grid: Grid) -> SpectralReport:
    """The ``count`` lowest eigenpairs of the discretized operator."""
    if not 1 <= count <= 20:
        raise ValueError("count must be between 1 and 20")
    a = operator_matrix(kind, centers, grid)
    if grid.dim == 1:
        vals, vecs = _banded_lowest(a, count)
    else:
        v = potential(kind, centers, grid)
        shift = float(v.min()) - 1.0
        v0 = np.random.default_rng(0).standard_normal(grid.size)
        try:
            vals, vecs = spla.eigsh(a.tocsc(), k=count, sigma=shift, which="LM", v0=v0)
        except spla.ArpackError as exc:
            raise SolverError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    scale = np.sqrt(grid.cell_volume)
    fields, res = [], []
    for lam, vec in zip(vals, vecs.T):
        vec = _normalize_sign(vec / np.linalg.norm(vec))
        res.append(np.linalg.norm(a @ vec - lam * vec))
        fields.append(Field(grid, vec / scale))
    res = np.asarray(res)
    bad = res > 1e-8 * (1.0 + np.abs(vals))
    if np.any(bad):
        raise SolverError(f"eigenpair residuals too large: {res[bad]}", float(res.max()))
    return SpectralReport(np.asarray(vals), fields, res)


# ---------------------------------------------------------------- projections


@dataclass
class ProjectionBasis:
    centers: np.ndarray
    translation_fields: list
    radial_fields: list
    gram_h1: np.ndarray = field(repr=False)
    gram_l2: np.ndarray = field(repr=False)


def projection_basis(grid: Grid, centers) -> ProjectionBasis:
    c = as_centers(centers, grid.dim)
    trans = [bubble_gradient(grid, y, l) for y in c for l in range(grid.dim)]
    radial = [bubble(grid, y) for y in c]
    t_mat = np.stack([f.values for f in trans], axis=1)
    ht = np.stack([apply_helmholtz(f).values for f in trans], axis=1)
    gram_h1 = t_mat.T @ ht * grid.cell_volume
    allf = np.stack([f.values for f in trans + radial], axis=1)
    gram_l2 = allf.T @ allf * grid.cell_volume
    return ProjectionBasis(c, trans, radial, 0.5 * (gram_h1 + gram_h1.T), 0.5 * (gram_l2 + gram_l2.T))


def _span(basis: ProjectionBasis, span: str) -> list:
    if span == "translations":
        return list(basis.translation_fields)
    if span == "translations_and_radial":
        return list(basis.translation_fields) + list(basis.radial_fields)
    raise ValueError(f"unknown span {span!r}")


def projection(u: Field, basis: ProjectionBasis, pairing: str = "h1", span: str = "translations") -> Field:
    """``u`` minus its ``pairing``-orthogonal projection onto ``span``."""
    fields = _span(basis, span)
    b = np.stack([f.values for f in fields], axis=1)
    if pairing == "h1":
        mb = np.stack([apply_helmholtz(f).values for f in fields], axis=1)
    elif pairing == "l2":
        mb = b
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    gram = b.T @ mb
    gram = 0.5 * (gram + gram.T)
    cond = np.linalg.cond(gram)
    if not cond < 1e12:
        raise ValueError(f"basis Gram matrix is ill-conditioned (cond {cond:.2e}); centers too close")
    coef = np.linalg.solve(gram, mb.T @ u.values)
    return Field(u.grid, u.values - b @ coef)


def coercivity_gap(centers, grid: Grid, include_radial: bool = True) -> float:
    """Minimum L2 Rayleigh quotient of the operator around ``centers`` on the
    L2-orthogonal complement of ``span{∂g_i}`` (and ``g_i`` when
    ``include_radial``).

    Shift-invert on the complement: with ``Q`` an orthonormal basis of the
    span and ``s`` below the spectrum, the map ``b -> x`` solving
    ``[[A - s, Q], [Q^T, 0]] [x, μ] = [b, 0]`` is symmetric positive on the
    complement with eigenvalues ``1 / (λ - s)``.
    """
    basis = projection_basis(grid, centers)
    fields = _span(basis, "translations_and_radial" if include_radial else "translations")
    q, _ = np.linalg.qr(np.stack([f.values for f in fields], axis=1))
    k, n = q.shape[1], grid.size
    a = operator_matrix(AROUND_BUBBLES, centers, grid)
    shift = float(potential(AROUND_BUBBLES, centers, grid).min()) - 1.0
    bordered = sp.bmat(
        [[a - shift * sp.identity(n), sp.csr_matrix(q)], [sp.csr_matrix(q.T), None]], format="csc"
    )
    lu = spla.splu(bordered)
    pad = np.zeros(k)
    op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(np.concatenate([np.ravel(x), pad]))[:n], dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    v0 -= q @ (q.T @ v0)
    try:
        theta, _ = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-12)
    except spla.ArpackError as exc:
        raise SolverError(f"eigensolver failed: {exc}") from exc
    return float(shift + 1.0 / theta[0])
