import math

import numpy as np
import pytest

from stwobs import pemfc
from stwobs.pemfc import (DEFAULT_CURRENT, PhysicalParams, Schedule, as_system_description,
                          current_profile, derive_constants, equilibrium, fault_profile,
                          fault_weight, plant_deriv, psi, rk4_step)

C = derive_constants(PhysicalParams())

# constants from an independent 40-digit evaluation of the same formulas
FROZEN = {
    "c1": 51.055531022854167, "c3": 1957392.7333333333, "c4": 456.45785873451832,
    "c8": 195.34290130483333, "c9": 45.215061765143623, "c10": 55689574.341419854,
    "c12": 0.28571428571428571, "c13": 45.215061765143623, "c14": 39938070.412874655,
    "c17": 2.5605136043823194e-7, "c19": 0.52828178771717411, "c20": 6.6267158295276267e-8,
    "A": 9.7880290001515631e-5,
}


@pytest.mark.parametrize("name", sorted(FROZEN))
def test_constants_against_high_precision(name):
    assert getattr(C, name) == pytest.approx(FROZEN[name], rel=1e-14)


def test_table_constants():
    assert C.c11 == 1.01325e5
    assert C.c2 == 3.14e3
    assert C.c15 == 1.25
    assert C.c16 == 0.3629e-5
    assert C.c18 == pytest.approx(1 / 1.4, rel=1e-15)


def test_c19_by_logarithms():
    g = 1.4
    assert C.c19 == pytest.approx(math.exp(g / (g - 1) * math.log(2 / (g + 1))), rel=1e-14)


def test_constants_invariants_and_determinism():
    for name in ("c1", "c3", "c4", "c8", "c9", "c10", "c12", "c13", "c14", "c15", "c16",
                 "c17", "c18", "c20", "A"):
        assert getattr(C, name) > 0, name
    assert 0 < C.c19 < 1
    assert derive_constants(PhysicalParams()) == C


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"eta_cp": 1.5}, {"V_ca": 0.0},
                                {"omega_atm": -0.1}, {"x_O2": 0.0}])
def test_physical_params_validation(kw):
    with pytest.raises(ValueError):
        PhysicalParams(**kw)


# --- flow map -----------------------------------------------------------------------

def _psi_log_domain(x1, c):
    """Independent evaluation of the exit flow with logarithms."""
    lr = math.log(c.c11) - math.log(x1)
    if lr > math.log(c.c19):
        return math.exp(math.log(c.c17) + math.log(x1) + c.c18 * lr
                        + 0.5 * math.log(-math.expm1(c.c12 * lr)))
    return math.exp(math.log(c.c20) + math.log(x1))


def test_psi_zero_at_atmospheric():
    assert psi(C.c11, C) == 0.0


@pytest.mark.parametrize("x1", [1.2e5, 1.5e5, 1.9e5, 2e5, 3e5])
def test_psi_dual_path(x1):
    assert psi(x1, C) == pytest.approx(_psi_log_domain(x1, C), rel=1e-13)


def test_psi_frozen_values():
    assert psi(2e5, C) == pytest.approx(0.013253431659055253, rel=1e-14)   # choked branch
    assert psi(1.5e5, C) == pytest.approx(0.0094502330327496276, rel=1e-14)  # subsonic


def test_psi_branch_gap_is_small():
    # continuity is not claimed; the gap at the switch point is only recorded
    xb = C.c11 / C.c19
    sub = C.c17 * xb * (C.c11 / xb) ** C.c18 * math.sqrt(1 - (C.c11 / xb) ** C.c12)
    choked = C.c20 * xb
    assert abs(sub - choked) / choked < 1e-12


def test_psi_choked_branch_linear():
    xs = np.linspace(2e5, 4e5, 7)
    vals = np.array([psi(x, C) for x in xs])
    np.testing.assert_allclose(vals / xs, C.c20, rtol=1e-15)


def test_psi_domain_error_names_pressure():
    with pytest.raises(ValueError, match="x1=90000"):
        psi(9e4, C)


# --- dynamics -------------------------------------------------------------------------

def _random_states(n, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(1.2e5, 3e5, n)
    return np.column_stack([x1, x1 * rng.uniform(0.5, 0.95, n), rng.uniform(100, 1257, n),
                            x1 * rng.uniform(1.0, 1.2, n)])


def test_fault_and_current_channels_are_additive():
    for x in _random_states(200):
        d0 = plant_deriv(x, 200.0, 150.0, 0.0, C)
        df = plant_deriv(x, 200.0, 150.0, 2e-3, C) - d0
        assert np.array_equal(df[:3], np.zeros(3))
        assert df[3] == pytest.approx(fault_weight(x[3], C) * 2e-3, rel=1e-9)
        dxi = d0 - plant_deriv(x, 200.0, 0.0, 0.0, C)
        assert np.array_equal(dxi[1:], np.zeros(3))
        assert dxi[0] == pytest.approx(-C.c4 * 150.0, rel=1e-9)


def test_fault_weight_at_atmospheric():
    assert fault_weight(C.c11, C) == -C.c14


def test_equilibrium_probe():
    x, u = equilibrium(C, 100.0, x1=2.5e5)
    assert np.linalg.norm(plant_deriv(x, u, 100.0, 0.0, C) / np.array([1e5, 1e5, 1e3, 1e6])) < 1e-9
    x2, _ = equilibrium(C, 100.0, u=u)
    np.testing.assert_allclose(x2, x, rtol=1e-8)
    assert 0 < x[1] < x[0] and x[2] > 0


def test_equilibrium_argument_check():
    with pytest.raises(ValueError):
        equilibrium(C, 100.0)


def test_rk4_positivity_over_operating_box():
    rng = np.random.default_rng(3)
    for x in _random_states(10_000, seed=1):
        xn = rk4_step(x, rng.uniform(0, 400), rng.uniform(0, 500), rng.uniform(0, 5e-3), C, 1e-4)
        assert xn[0] > 0 and xn[1] > 0 and xn[3] > 0


# --- profiles ---------------------------------------------------------------------------

def test_fault_profile():
    assert fault_profile(49.999) == 0.0
    assert fault_profile(50.0) == 3e-3
    assert fault_profile(120.0) == 3e-3


def test_current_profile_lookup():
    assert current_profile(10.0) == 100.0
    assert current_profile(75.0) == 450.0
    assert current_profile(30.0) == 250.0
    assert current_profile(200.0) == 180.0
    assert DEFAULT_CURRENT.times == (0.0, 30.0, 70.0, 110.0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule((), ())
    with pytest.raises(ValueError):
        Schedule((0.0, 2.0, 1.0), (1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        Schedule((1.0,), (1.0,))
    with pytest.raises(ValueError):
        pemfc.check_current_schedule(Schedule((0.0,), (600.0,)))


# --- observer form -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fc_sys():
    return as_system_description(C, 4.0)


def test_system_description_shape(fc_sys):
    assert (fc_sys.n, fc_sys.p, fc_sys.q, fc_sys.r) == (4, 2, 1, 1)
    assert np.array_equal(fc_sys.A22, np.diag([-4.0, -C.c9]))
    assert np.array_equal(fc_sys.Tbar, np.eye(2))
    assert fc_sys.gamma_g1 == 0.0
    assert np.array_equal(fc_sys.phi2(np.ones(2), np.ones(1), fc_sys.params), np.zeros((2, 1)))


def test_split_matches_outputs(fc_sys):
    x = np.array([2.5e5, 2e5, 170.0, 2.55e5])
    assert np.array_equal(fc_sys.output(x), [x[0], x[3]])


def test_observer_form_reproduces_plant(fc_sys):
    """The partitioned right-hand side equals the plant vector field."""
    sysd = fc_sys
    par = sysd.params
    for x in _random_states(100, seed=5):
        u, xi, f = np.array([210.0]), 180.0, 1e-3
        y = sysd.output(x)
        z2 = sysd.to_z(x)[2:]
        d1 = sysd.A11b @ y + sysd.A21b @ z2 + sysd.W_g1(y, z2, u, par) \
            + sysd.Phi1(y, u, par) @ [xi]
        d2 = sysd.A12b @ y + sysd.A22b @ z2 + sysd.W_g2(y, z2, u, par) \
            + sysd.Phi2(y, u, par) @ [f]
        d3 = sysd.A21 @ y + sysd.A22 @ z2 + sysd.g2(y, z2, u, par)
        dz = np.concatenate([d1, d2, d3])
        ref = sysd.to_z(plant_deriv(x, u[0], xi, f, C))
        np.testing.assert_allclose(dz, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_h_below_bound_infeasible():
    from stwobs.design import InfeasibleDesign, certify
    with pytest.raises(InfeasibleDesign):
        certify(as_system_description(C, 2.0), 0.1, 10.0)
