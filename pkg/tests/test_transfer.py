import math

import numpy as np
import pytest

from oracles import dense_principal, dense_stationary, hard_rod_alpha, hard_rod_free_energy, hard_rod_lambda0
from spacingchains.errors import ConvergenceError, DomainError, InfeasibleDensityError
from spacingchains.models import make_hard_rod, make_square_well
from spacingchains.transfer import (GridSpec, QuadratureGrid, assemble_kernel, build_transition,
                                    exp_moment_growth_bound, gauss_legendre_grid, gibbs_free_energy,
                                    gibbs_model, harmonic_model, mean_spacing, model_from_matrix,
                                    principal_eigen, solve_pressure, tv_distance_profile)
from spacingchains.models import harmonic_derive

HR = make_hard_rod(1.0)
SW = make_square_well(1.0, 2.5, -0.5)
SW2 = make_square_well(1.0, 3.5, -0.4)  # k = 2


@pytest.fixture(scope="module")
def sw_model():
    return gibbs_model(SW, 1.0, 1.0, GridSpec(n_nodes=256))


@pytest.fixture(scope="module")
def sw2_model():
    return gibbs_model(SW2, 1.0, 1.0, GridSpec(n_nodes=32, order=8))


def test_grid_invariants():
    g = gauss_legendre_grid(1.0, 41.0, 256, 16, breakpoints=(2.5,))
    assert np.all(np.diff(g.nodes) > 0) and np.all(g.nodes > 1.0)
    assert g.weights.sum() == pytest.approx(40.0, rel=1e-10)
    # every node sits inside its own cell
    assert np.all((g.edges[:-1] < g.nodes) & (g.nodes < g.edges[1:]))
    assert np.any(np.isclose(g.edges, 2.5))


def test_tensor_grid_index_maps():
    g = gauss_legendre_grid(1.0, 3.0, 16, 8, k=2)
    idx = np.arange(g.n_states)
    assert np.array_equal(g.flat_index(g.multi_index(idx)), idx)
    Z = g.state_nodes()
    rev = g.reversal()
    assert np.array_equal(Z[rev], Z[:, ::-1])
    assert g.state_weights().sum() == pytest.approx(4.0, rel=1e-12)


def test_hard_rod_kernel_is_rank_one():
    g = gauss_legendre_grid(1.0, 41.0, 64, 16)
    K = assemble_kernel(HR, 1.0, 1.0, g)
    u = np.exp(-g.nodes / 2)
    assert np.allclose(K, np.outer(u, u), rtol=1e-14, atol=0)


def test_square_well_kernel_entry():
    g = QuadratureGrid(np.array([1.2, 2.0]), np.array([0.5, 0.5]), 1.0, 2.0)
    K = assemble_kernel(SW, 1.0, 1.0, g)
    assert K[0, 0] == pytest.approx(math.exp(-0.2), rel=1e-14)


def test_kernel_inversion_symmetry_k2(sw2_model):
    g = sw2_model.grid
    K = assemble_kernel(SW2, 1.0, 1.0, g)
    rev = g.reversal()
    assert np.allclose(K, K[np.ix_(rev, rev)].T, rtol=1e-13, atol=0)
    assert np.all(K > 0)


def test_kernel_dimension_mismatch():
    with pytest.raises(DomainError):
        assemble_kernel(SW2, 1.0, 1.0, gauss_legendre_grid(1.0, 3.0, 16, 8))


def test_hard_rod_eigenpair():
    g = GridSpec(n_nodes=256).build(HR, 1.0, 1.0)
    eig = principal_eigen(assemble_kernel(HR, 1.0, 1.0, g), g)
    assert eig.lambda0 == pytest.approx(hard_rod_lambda0(1.0, 1.0, 1.0, g.z_max), rel=1e-12)
    assert eig.lambda0 == pytest.approx(math.exp(-1.0), abs=1e-10)
    ratio = eig.phi0 / np.exp(-g.nodes / 2)
    assert np.max(np.abs(ratio / ratio[0] - 1)) < 1e-10
    assert eig.normalization == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(eig.psi0, eig.phi0)
    assert eig.gap_ratio < 1e-8


def test_identity_kernel():
    n = 8
    g = QuadratureGrid(np.arange(n) + 1.5, np.ones(n), 1.0, n + 1.0)
    eig = principal_eigen(np.eye(n), g)
    assert eig.lambda0 == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(eig.phi0, eig.phi0[0])


def test_square_well_matches_dense(sw_model):
    g = sw_model.grid
    K = assemble_kernel(SW, 1.0, 1.0, g)
    assert sw_model.eigen.lambda0 == pytest.approx(dense_principal(K, g.weights), rel=1e-10)
    assert sw_model.eigen.residual <= 1e-12
    assert 0 < sw_model.eigen.gap_ratio < 1
    assert np.all(sw_model.eigen.phi0 > 0)


def test_nonconvergence_reports_residual():
    g = GridSpec(n_nodes=128).build(SW, 1.0, 1.0)
    K = assemble_kernel(SW, 1.0, 1.0, g)
    with pytest.raises(ConvergenceError) as info:
        principal_eigen(K, g, max_iter=1)
    assert info.value.residual > 0


def test_hard_rod_transition_rows_are_the_spacing_law():
    m = gibbs_model(HR, 1.0, 1.0, GridSpec(n_nodes=128))
    w = m.grid.weights
    law = np.exp(-m.grid.nodes) * w
    law /= law.sum()
    assert np.allclose(m.matrix, law[None, :], rtol=1e-12, atol=1e-300)


def test_transition_invariants(sw_model, sw2_model):
    for m in (sw_model, sw2_model):
        assert np.max(np.abs(m.matrix.sum(axis=1) - 1)) <= 1e-12
        assert m.stationarity_error() <= 1e-10
        assert np.all(m.pi >= 0) and m.pi.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(m.pi, dense_stationary(m.matrix), atol=1e-10)
    flux = sw_model.pi[:, None] * sw_model.matrix
    assert np.max(np.abs(flux - flux.T)) <= 1e-10


def test_reversed_kernel_has_same_stationary_law(sw2_model):
    g = sw2_model.grid
    K = assemble_kernel(SW2, 1.0, 1.0, g)
    rev = g.reversal()
    Kr = K[np.ix_(rev, rev)].T
    mr = build_transition(principal_eigen(Kr, g), Kr, g)
    assert np.max(np.abs(mr.pi - sw2_model.pi)) <= 1e-10


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_hard_rod_free_energy(p):
    assert gibbs_free_energy(HR, 1.0, p) == pytest.approx(hard_rod_free_energy(p, 1.0), abs=1e-12)


def test_free_energy_slope_brackets_mean_spacing():
    p, dp = 1.0, 0.05
    g0, g1 = gibbs_free_energy(SW, 1.0, p), gibbs_free_energy(SW, 1.0, p + dp)
    slope = (g1 - g0) / dp
    ell0 = mean_spacing(SW, 1.0, p).stationary
    ell1 = mean_spacing(SW, 1.0, p + dp).stationary
    assert -ell0 <= slope <= -ell1


def test_square_well_free_energy_decreasing():
    gs = [gibbs_free_energy(SW, 1.0, p) for p in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(gs, gs[1:]))


def test_hard_rod_mean_spacing():
    ell = mean_spacing(HR, 1.0, 1.0)
    assert ell.stationary == pytest.approx(2.0, abs=1e-8)
    assert ell.finite_difference == pytest.approx(2.0, abs=1e-6)
    vals = [mean_spacing(HR, 1.0, p).stationary for p in (4.0, 8.0, 16.0)]
    assert vals[0] > vals[1] > vals[2] > 1.0


def test_mean_spacing_routes_agree_k2():
    ell = mean_spacing(SW2, 1.0, 1.0, GridSpec(n_nodes=32, order=8))
    assert abs(ell.finite_difference - ell.stationary) <= 1e-6


def test_solve_pressure_hard_rod():
    assert solve_pressure(HR, 1.0, 0.5) == pytest.approx(1.0, abs=1e-6)


def test_solve_pressure_square_well_self_consistent():
    p = solve_pressure(SW, 1.0, 0.4)
    assert mean_spacing(SW, 1.0, p).stationary * 0.4 == pytest.approx(1.0, abs=1e-5)


def test_solve_pressure_close_packing():
    with pytest.raises(InfeasibleDensityError):
        solve_pressure(HR, 1.0, 1.0)
    with pytest.raises(InfeasibleDensityError):
        solve_pressure(HR, 1.0, 1.0 - 1e-9)


def test_growth_bound_hard_rod_closed_form():
    # tilting lowers the pressure: log(lambda0(1 - 2 theta) / lambda0(1)) = 2 theta - log(1 - 2 theta)
    assert exp_moment_growth_bound(HR, 1.0, 1.0, 0.25) == pytest.approx(0.5 + math.log(2.0), abs=1e-9)
    for theta in (0.05, 0.1, 0.2):
        assert exp_moment_growth_bound(HR, 1.0, 1.0, theta) == pytest.approx(
            hard_rod_alpha(2 * theta, 1.0, 1.0, 1.0), abs=1e-9)


def test_growth_bound_limits_and_monotonicity():
    assert abs(exp_moment_growth_bound(SW, 1.0, 1.0, 1e-7)) < 1e-5
    vals = [exp_moment_growth_bound(SW, 1.0, 1.0, th) for th in (0.05, 0.1, 0.2, 0.3, 0.4)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        exp_moment_growth_bound(SW, 1.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        exp_moment_growth_bound(SW, 1.0, 1.0, 0.0)


def test_grid_refinement_hard_rod():
    e1 = principal_eigen(*_kg(HR, 256))
    e2 = principal_eigen(*_kg(HR, 512))
    assert abs(e1.lambda0 - e2.lambda0) <= 10 * max(e1.residual, e2.residual) * e1.lambda0 + 1e-16


def test_grid_refinement_square_well_is_small():
    # the kernel jumps along z + z' = R, so refinement converges slowly
    e1 = principal_eigen(*_kg(SW, 256))
    e2 = principal_eigen(*_kg(SW, 512))
    assert abs(e1.lambda0 / e2.lambda0 - 1) < 1e-3


def _kg(pot, n, z_max=None):
    g = GridSpec(n_nodes=n, z_max=z_max).build(pot, 1.0, 1.0)
    return assemble_kernel(pot, 1.0, 1.0, g), g


@pytest.mark.parametrize("pot", [HR, SW], ids=["hard_rod", "square_well"])
def test_truncation_invariant(pot):
    base = principal_eigen(*_kg(pot, 256)).lambda0
    wider = principal_eigen(*_kg(pot, 256, z_max=1.0 + 60.0)).lambda0
    assert abs(base - wider) < 1e-10


def test_tv_decay_matches_spectral_gap(sw_model):
    d = tv_distance_profile(sw_model, 12)
    n = np.arange(1, 13)
    keep = d > 1e-12
    slope = np.polyfit(n[keep], np.log(d[keep]), 1)[0]
    assert math.exp(slope) <= sw_model.eigen.gap_ratio + 0.05


def test_harmonic_discretisation():
    h = harmonic_derive(1.0, 0.3, 1.0, 1.0)
    m = harmonic_model(h, n_nodes=256)
    z = m.grid.nodes
    assert m.stationarity_error() <= 1e-10
    assert float(m.pi @ z) == pytest.approx(1.0, abs=1e-10)
    assert float(m.pi @ (z - 1.0) ** 2) == pytest.approx(h.stat_var, rel=1e-8)


def test_model_from_matrix_rejects_non_stochastic():
    g = gauss_legendre_grid(1.0, 2.0, 4, 4)
    with pytest.raises(DomainError):
        model_from_matrix(np.full((4, 4), 0.3), g)
