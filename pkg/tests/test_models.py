import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_block_energies, harmonic_constants_exact
from spacingchains.errors import DomainError
from spacingchains.models import (harmonic_derive, make_hard_rod, make_potential,
                                  make_square_well, make_tabulated, minimal_block_m,
                                  potential_from_config, v_total)


@pytest.mark.parametrize("R, depth, m, k", [(1.0001, -0.5, 1, 1), (2.5, -0.5, 2, 1),
                                             (3.5, 1.0, 3, 2)])
def test_square_well_block_size(R, depth, m, k):
    pot = make_square_well(1.0, R, depth)
    assert (pot.block_m, pot.k) == (m, k)
    assert R < (pot.block_m + 1) * pot.r_hc
    assert (pot.k + 2) * pot.r_hc >= R


@given(st.floats(0.1, 3.0), st.floats(1.001, 4.9))
def test_minimal_block_m_is_minimal(r_hc, ratio):
    R = r_hc * ratio
    m = minimal_block_m(r_hc, R)
    assert R < (m + 1) * r_hc
    assert m == 1 or not R < m * r_hc


def test_square_well_rejects_bad_input():
    with pytest.raises(DomainError):
        make_square_well(1.0, 1.0, -0.5)
    with pytest.raises(DomainError):
        make_square_well(1.0, 2.0, math.inf)
    with pytest.raises(DomainError):
        make_square_well(1.0, 2.5, -0.5, block_m=1)


def test_eval_core_range_and_bound():
    pot = make_square_well(1.0, 2.5, -0.5)
    with pytest.raises(DomainError):
        pot.eval(1.0)
    assert pot.eval(2.5) == -0.5
    assert pot.eval(2.5000001) == 0.0
    r = np.linspace(1.0001, 2.5, 50)
    assert np.all(pot.eval(r) >= pot.lower_bound)


def test_v_total_examples():
    pot = make_square_well(1.0, 2.5, -0.5)
    assert v_total(pot, [2.0], [2.0]) == (-0.5, 0.0)
    assert v_total(pot, [1.2], [1.2])[1] == -0.5
    with pytest.raises(DomainError):
        v_total(pot, [0.9], [1.2])


def _soft(r):
    return np.cos(3.0 * r) - 0.2 * r


blocks = st.lists(st.floats(1.001, 2.4), min_size=2, max_size=2)


@given(blocks, blocks)
def test_v_total_matches_pair_enumeration(z, zp):
    pot = make_potential(1.0, 3.5, _soft)
    assert pot.k == 2
    V, W = v_total(pot, z, zp)
    Vb, Wb = brute_force_block_energies(lambda d: float(_soft(np.array(d))), 1.0, 3.5, z, zp)
    assert V == pytest.approx(Vb, abs=1e-12)
    assert W == pytest.approx(Wb, abs=1e-12)


@given(blocks, blocks)
def test_w_inversion_symmetry(z, zp):
    pot = make_square_well(1.0, 3.5, 0.7)
    assert v_total(pot, z, zp)[1] == pytest.approx(v_total(pot, zp[::-1], z[::-1])[1], abs=1e-14)


@given(blocks, blocks)
def test_tabulated_matches_closed_form_for_piecewise_linear(z, zp):
    lin = lambda r: 2.0 - 0.5 * r
    closed = make_potential(1.0, 3.5, lin)
    table = closed.tabulate(513)
    a = v_total(closed, z, zp)
    b = v_total(table, z, zp)
    assert a[0] == pytest.approx(b[0], abs=1e-12) and a[1] == pytest.approx(b[1], abs=1e-12)


def test_config_round_trip():
    for pot in (make_square_well(1.0, 2.5, -0.5), make_hard_rod(0.7),
                make_tabulated(1.0, [1.0, 1.5, 2.0], [1.0, -1.0, -0.2])):
        back = potential_from_config(pot.to_config())
        r = np.linspace(pot.r_hc + 1e-6, pot.range_R * 1.2, 40)
        assert np.array_equal(back.eval(r), pot.eval(r))
        assert back.block_m == pot.block_m


def test_config_rejects_unknown_fields():
    with pytest.raises(DomainError):
        potential_from_config({"kind": "square_well", "r_hc": 1, "range_R": 2, "depth": 0, "x": 1})
    with pytest.raises(DomainError):
        potential_from_config({"kind": "lennard_jones"})


def test_harmonic_reference_values():
    h = harmonic_derive(1.0, 0.3, 1.0, 1.0)
    ref = harmonic_constants_exact(1.0, 0.3, 1.0)
    assert h.c == pytest.approx(ref["c"], rel=1e-14)
    assert h.gamma == pytest.approx(ref["gamma"], rel=1e-14)
    assert h.rho_ar == pytest.approx(ref["rho"], rel=1e-14)
    assert h.stat_var == pytest.approx(ref["stat_var"], rel=1e-14)
    for got, quoted in [(h.c, 0.741620), (h.gamma, 1.541620), (h.rho_ar, -0.194601),
                        (h.stat_var, 0.674199)]:
        # quoted figures are truncated to six decimals
        assert got == pytest.approx(quoted, abs=1e-6)


@given(st.floats(0.01, 10), st.floats(1e-6, 10), st.floats(0.1, 5), st.floats(0.1, 10))
def test_harmonic_identities(k1, k2, a, beta):
    h = harmonic_derive(k1, k2, a, beta)
    assert h.c > 0 and h.gamma > h.c and abs(h.rho_ar) < 1
    assert h.stat_sd ** 2 * (1 - h.rho_ar ** 2) == pytest.approx(h.noise_sd ** 2, rel=1e-12)
    assert h.gamma ** 2 - k2 ** 2 == pytest.approx(2 * h.c * h.gamma, rel=1e-12)


def test_harmonic_decoupled_limit():
    h = harmonic_derive(1.0, 1e-12, 2.0, 3.0)
    assert h.c == pytest.approx(0.5, rel=1e-9)
    assert abs(h.rho_ar) < 1e-11
    assert h.stat_var == pytest.approx(1.0 / 3.0, rel=1e-9)


def test_harmonic_rejects_nonpositive():
    with pytest.raises(DomainError):
        harmonic_derive(1.0, 0.0, 1.0, 1.0)
