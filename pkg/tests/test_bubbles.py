import json

import numpy as np
import pytest

from logsob.bubbles import (
    BorderedSolver,
    ConvergenceError,
    auto_grid,
    build_pair,
    lower_bound_witness,
    pair_centers,
    projected_linear_solve,
)
from logsob.core import bubble_gradient, error_term, residual
from logsob.discretization import Field, apply_helmholtz, h1_inner, inner, load_field, save_field
from logsob.linearized import AROUND_BUBBLES, operator_matrix
from logsob.norms import norm_h1, norm_hminus1


@pytest.fixture(scope="module")
def sweep_pairs():
    return {L: build_pair(L) for L in (4.0, 5.0, 6.0, 7.0, 8.0)}


def test_solve_zero_rhs():
    g = auto_grid(6.0)
    psi, m = projected_linear_solve(pair_centers(6.0, 1), Field.zeros(g))
    assert np.all(psi.values == 0) and np.all(m.a == 0)


def test_solve_translation_mode_goes_to_multiplier():
    g = auto_grid(6.0)
    c = pair_centers(6.0, 1)
    psi, m = projected_linear_solve(c, bubble_gradient(g, c[0], 0))
    assert np.max(np.abs(psi.values)) <= 1e-10
    assert np.allclose(m.a, [1.0, 0.0], atol=1e-10)


@pytest.mark.parametrize("L", [5.0, 6.0, 8.0])
def test_solve_multipliers_follow_pairings(L):
    g = auto_grid(L)
    c = pair_centers(L, 1)
    E = error_term(c, g)
    _, m = projected_linear_solve(c, E)
    modes = [bubble_gradient(g, y, 0) for y in c]
    pairing = np.array([inner(E, d) / inner(d, d) for d in modes])
    assert np.all(np.sign(m.a) == np.sign(pairing))
    assert np.all((0.5 <= m.a / pairing) & (m.a / pairing <= 2.0))


def test_solve_satisfies_saddle_system(rng):
    L = 6.0
    g = auto_grid(L)
    c = pair_centers(L, 1)
    rhs = error_term(c, g) + Field(g, 1e-3 * rng.standard_normal(g.size))
    psi, m = projected_linear_solve(c, rhs)
    modes = [bubble_gradient(g, y, 0) for y in c]
    a = operator_matrix(AROUND_BUBBLES, c, g)
    lhs = a @ psi.values + sum(b * d.values for b, d in zip(m.a, modes))
    assert np.linalg.norm(lhs - rhs.values) <= 1e-10 * np.linalg.norm(rhs.values)
    assert max(abs(h1_inner(psi, d)) for d in modes) <= 1e-10 * (1 + norm_h1(psi))


def test_solve_rejects_close_centers():
    g = auto_grid(6.0)
    with pytest.raises(ValueError):
        projected_linear_solve([[-1.0], [1.0]], Field.zeros(g))


def test_pair_at_six(pair6):
    assert pair6.iterations <= 30
    assert norm_h1(pair6.rho) <= 0.1
    assert pair6.min_u > 0
    assert norm_hminus1(pair6.f) > 0
    assert pair6.span_defect() <= 1e-10
    assert np.max(np.abs(pair6.ortho_residuals())) <= 1e-9


def test_pair_residual_from_scratch(pair6):
    f = residual(pair6.u).values
    modes = [bubble_gradient(pair6.grid, y, 0).values for y in pair6.centers]
    assert np.max(np.abs(f + sum(a * d for a, d in zip(pair6.multipliers.a, modes)))) <= 1e-9


def test_pair_symmetry(pair6):
    # u_L is even, so its residual is even; the odd multipliers pair with mirrored modes
    rho, f = pair6.rho.values, pair6.f.values
    assert np.max(np.abs(rho - rho[::-1])) <= 1e-9
    assert np.max(np.abs(f - f[::-1])) <= 1e-9
    a = pair6.multipliers.a
    assert abs(a[0] + a[1]) <= 1e-9


def test_pair_fixed_point_identity(pair6):
    # L ρ - E - N(ρ) + Σ a ∂g = -Σ residual_h(g_i) at the fixed point (grid consistency term)
    from logsob.core import bubble, nonlinear_term

    g, c = pair6.grid, pair6.centers
    a = operator_matrix(AROUND_BUBBLES, c, g)
    modes = [bubble_gradient(g, y, 0).values for y in c]
    lhs = (a @ pair6.rho.values - error_term(c, g).values - nonlinear_term(c, pair6.rho).values
           + sum(m * d for m, d in zip(pair6.multipliers.a, modes)))
    rhs = -sum(residual(bubble(g, y)).values for y in c)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


def test_contraction(sweep_pairs):
    for L in (4.0, 5.0, 6.0):
        ratios = sweep_pairs[L].contraction_ratios
        assert ratios.size > 0 and ratios.max() <= 0.5
        assert not sweep_pairs[L].damped


def test_sharp_norm_decreases(sweep_pairs):
    vals = [sweep_pairs[L].sharp_norm_rho for L in sorted(sweep_pairs)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_pair_rejects_L():
    with pytest.raises(ValueError):
        build_pair(2.0)
    with pytest.raises(ValueError):
        build_pair(8.0, grid=auto_grid(4.0))


def test_pair_reports_non_convergence():
    with pytest.raises(ConvergenceError) as info:
        build_pair(5.0, max_iter=3)
    assert len(info.value.history) == 3


def test_pair_two_dimensions():
    p = build_pair(5.0, dim=2)
    assert p.min_u > 0 and p.span_defect() <= 1e-10
    a = p.multipliers.per_center(2)
    assert abs(a[0, 0] + a[1, 0]) <= 1e-9 and np.max(np.abs(a[:, 1])) <= 1e-9


def test_pair_serialization(pair6, tmp_path):
    doc = json.loads(json.dumps(pair6.summary()))
    assert doc["iterations"] == pair6.iterations
    save_field(pair6.rho, tmp_path / "rho.json")
    assert np.array_equal(load_field(tmp_path / "rho.json").values, pair6.rho.values)


@pytest.mark.parametrize("shift", [0.0, 2.0, 5.0])
def test_witness_below_dual_norm(sweep_pairs, shift):
    for pair in sweep_pairs.values():
        w = lower_bound_witness(pair, shift)
        assert 0 < w.lower_bound <= w.f_hminus1 * (1 + 1e-12)
        assert w.psi_h1 > 0


def test_witness_rejects_point_outside(pair6):
    with pytest.raises(ValueError):
        lower_bound_witness(pair6, shift=20.0)


def _witness_slopes(pairs, shift):
    Ls = sorted(pairs)[1:]
    rep = [lower_bound_witness(pairs[L], shift) for L in Ls]
    x = np.square(Ls)
    return (np.polyfit(x, [np.log(abs(r.pairing_e)) for r in rep], 1)[0],
            np.polyfit(x, [np.log(r.psi_h1) for r in rep], 1)[0])


def test_witness_interaction_rate_near_midpoint(sweep_pairs):
    e_slope, _ = _witness_slopes(sweep_pairs, 0.0)
    assert e_slope == pytest.approx(-0.25, rel=0.15)


@pytest.mark.xfail(strict=True, reason="with the +5 offset the pairing decays like exp(-0.49 L²)")
def test_witness_interaction_rate_default_offset(sweep_pairs):
    e_slope, _ = _witness_slopes(sweep_pairs, 5.0)
    assert e_slope == pytest.approx(-0.25, rel=0.15)


@pytest.mark.xfail(strict=True, reason="‖ψ‖_H1 carries an O(L) correction to the exponent at L ≤ 8")
def test_witness_norm_rate(sweep_pairs):
    _, n_slope = _witness_slopes(sweep_pairs, 0.0)
    assert n_slope == pytest.approx(-0.125, rel=0.15)
