import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as quad_int
from scipy.special import erfc

from logsob.core import bubble, bubble_sum, error_term
from logsob.discretization import Field, apply_helmholtz, inner, make_grid
from logsob.norms import (
    PartitionGeometry,
    norm_hminus1,
    norms,
    partition_geometry,
    separation_stats,
    weighted_norms,
)


def test_norms_zero(grid1):
    r = norms(Field.zeros(grid1))
    assert (r.l2, r.h1, r.grad_l2) == (0.0, 0.0, 0.0)


def test_norms_identity(grid1, rng):
    r = norms(Field(grid1, rng.standard_normal(grid1.size)))
    assert r.h1**2 == pytest.approx(r.l2**2 + r.grad_l2**2, rel=1e-12)


def test_c0_one_dimension(grid1):
    c0 = 1.5 * np.sqrt(np.pi) * np.e**2
    assert norms(bubble(grid1, 0.0)).h1 ** 2 == pytest.approx(c0, rel=1e-6)


def test_c0_two_dimensions():
    g = make_grid(2, 8, 321, 4)
    assert norms(bubble(g, [0.0, 0.0])).h1 ** 2 == pytest.approx(2 * np.pi * np.e**3, rel=1e-6)


def test_hminus1_zero(grid1):
    assert norm_hminus1(Field.zeros(grid1)) == 0.0


def test_hminus1_duality(grid1):
    g = bubble(grid1, 0.0)
    assert norm_hminus1(apply_helmholtz(g)) == pytest.approx(norms(g).h1, rel=1e-8)


def test_hminus1_fourier_oracle(grid1):
    # |ĝ(ξ)|² = 2π e² e^{-ξ²}; ∫ e^{-ξ²}/(1+ξ²) dξ = π e erfc(1)
    val, _ = quad_int.quad(lambda s: np.exp(-s * s) / (1 + s * s), -np.inf, np.inf, epsabs=1e-14)
    assert val == pytest.approx(np.pi * np.e * erfc(1.0), rel=1e-10)
    oracle = np.sqrt(np.e**2 * val)
    assert norm_hminus1(bubble(grid1, 0.0)) == pytest.approx(oracle, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_hminus1_below_l2(seed):
    g = make_grid(1, 5, 64, 4)
    f = Field(g, np.random.default_rng(seed).standard_normal(g.size))
    assert norm_hminus1(f) <= norms(f).l2 * (1 + 1e-12)


def test_separation_stats():
    s = separation_stats([[-5.0], [0.0], [5.0]])
    assert s.eta == 5.0
    assert np.allclose(s.eta_pair, s.eta_pair.T) and np.all(np.diag(s.eta_pair) == 0)
    assert list(s.eta_per_center) == [5.0, 5.0, 5.0]


def test_partition_single_center(grid1):
    geo = partition_geometry(grid1, [0.0])
    assert np.all(geo.voronoi_label == 0)
    assert geo.stats.eta == np.inf and geo.pair_cells == {}


def test_partition_pair(grid1):
    L = 6.0
    geo = partition_geometry(grid1, [[-L / 2], [L / 2]])
    x = grid1.axis()
    assert np.all(geo.voronoi_label[x < 0] == 0) and np.all(geo.voronoi_label[x > 0] == 1)
    # the tie at x = 0 goes to the lowest index
    assert geo.voronoi_label[np.argmin(np.abs(x))] == 0
    assert np.allclose(geo.axial[(0, 1)], x)
    assert geo.stats.eta == L
    assert np.all(geo.transverse_sq[(0, 1)] == 0)


def test_partition_three_collinear(grid1):
    geo = partition_geometry(grid1, [[-5.0], [0.0], [5.0]])
    x = grid1.axis()
    middle = x[geo.voronoi_label == 1]
    assert middle.min() == pytest.approx(-2.5 + grid1.spacing) or middle.min() == pytest.approx(-2.5)
    assert middle.max() == pytest.approx(2.5, abs=grid1.spacing)
    assert geo.stats.eta == 5.0


def test_partition_rejects_center_near_boundary(grid1):
    with pytest.raises(ValueError):
        partition_geometry(grid1, [9.5])


def test_partition_json_roundtrip(grid1):
    geo = partition_geometry(grid1, [[-3.0], [3.0]])
    doc = json.loads(json.dumps(geo.to_json()))
    back = PartitionGeometry.from_json(doc, grid1)
    assert np.array_equal(back.voronoi_label, geo.voronoi_label)


def _pair_geo(L=8.0):
    g = make_grid(1, 12, 481, 4)
    return g, partition_geometry(g, [[-L / 2], [L / 2]])


def test_weighted_zero():
    g, geo = _pair_geo()
    assert weighted_norms(Field.zeros(g), geo, 0.1) == (0.0, 0.0)


def test_weighted_rejects_sigma():
    g, geo = _pair_geo()
    with pytest.raises(ValueError):
        weighted_norms(Field.zeros(g), geo, 0.3)
    with pytest.raises(ValueError):
        weighted_norms(Field.zeros(g), geo, 0.0)


def test_weighted_rejects_single_center(grid1):
    with pytest.raises(ValueError):
        weighted_norms(Field.zeros(grid1), partition_geometry(grid1, [0.0]), 0.1)


def test_weighted_single_bubble_outer_term():
    g, geo = _pair_geo()
    sigma = 0.1
    nat, _ = weighted_norms(bubble(g, [-4.0]), geo, sigma)
    assert nat >= np.exp(sigma * (1 + 1) / 2)


def test_weighted_homogeneous(rng):
    g, geo = _pair_geo()
    u = Field(g, rng.standard_normal(g.size))
    n1, s1 = weighted_norms(u, geo, 0.1)
    n2, s2 = weighted_norms(u * -2.5, geo, 0.1)
    assert n2 == pytest.approx(2.5 * n1, rel=1e-12) and s2 == pytest.approx(2.5 * s1, rel=1e-12)


def test_weighted_symmetric_pair_contributions():
    g, geo = _pair_geo()
    u = error_term(geo.centers, g)
    parts = {}
    for key in [(0, 1), (1, 0)]:
        sub = partition_geometry(g, geo.centers)
        sub.pair_cells = {key: geo.pair_cells[key]}
        parts[key] = weighted_norms(u, sub, 0.1)
    assert parts[(0, 1)][0] == pytest.approx(parts[(1, 0)][0], rel=1e-9)
    assert parts[(0, 1)][1] == pytest.approx(parts[(1, 0)][1], rel=1e-9)


def test_weighted_translation_invariant():
    g = make_grid(1, 12, 481, 4)
    h = g.spacing
    c = np.array([[-4.0], [4.0]])
    u = bubble_sum(g, c) * 0.3 + error_term(c, g)
    shifted = error_term(c + h, g) + bubble_sum(g, c + h) * 0.3
    a = weighted_norms(u, partition_geometry(g, c), 0.1)
    b = weighted_norms(shifted, partition_geometry(g, c + h), 0.1)
    assert np.allclose(a, b, rtol=1e-9)
    assert norms(u).h1 == pytest.approx(norms(shifted).h1, rel=1e-9)


def _natural_error_slope():
    Ls = [6.0, 8.0, 10.0]
    logs = []
    for L in Ls:
        g = make_grid(1, L / 2 + 7, int(round((L + 14) / 0.05)) + 1, 4)
        c = [[-L / 2], [L / 2]]
        logs.append(np.log(weighted_norms(error_term(c, g), partition_geometry(g, c), 0.1)[0]))
    return np.polyfit(np.square(Ls), logs, 1)[0]


def test_natural_norm_of_error_matches_slab_edge_exponent():
    # the outer term peaks at the slab edge |t| = σL:
    # 2 g_j / g_i^(1-σ) ~ exp(-[(1/2+σ)² - (1-σ)(1/2-σ)²] L²/2)
    sigma = 0.1
    oracle = -((0.5 + sigma) ** 2 - (1 - sigma) * (0.5 - sigma) ** 2) / 2
    assert _natural_error_slope() == pytest.approx(oracle, rel=0.15)


@pytest.mark.xfail(strict=True, reason="measured -0.102 vs -1/8 ± 15%; outer term decays like exp(-0.108 L²)")
def test_natural_norm_of_error_eighth_rate():
    assert _natural_error_slope() == pytest.approx(-0.125, rel=0.15)
