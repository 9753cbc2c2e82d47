import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omcool.errors import InstabilityError
from omcool.model import (
    HBAR, K_B, TWO_PI, DriveConfig, HeatingModel, SystemParams, chi_c, chi_m, dressed_state,
    dressed_zpf, exact_effective_susceptibility, final_occupancy, intracavity_photons,
    min_occupancy, occupancy_with_heating, raman_damping, raman_rates, scattering_rates,
    spring_shift, thermal_occupancy,
)


def single_tone(params, n_c, offset=0.0, **kw):
    """Cooling tone ``offset`` rad/s away from the red sideband."""
    return DriveConfig.from_cooling_detuning(-params.omega_m + offset, params.omega_m, n_c, **kw)


# -- parameters and conventions --------------------------------------------

def test_derived_fields(device):
    assert device.kappa_0 == pytest.approx(TWO_PI * 184e6)
    assert device.gamma_m == pytest.approx(TWO_PI * 115e3)
    assert device.n_th == pytest.approx(K_B * 2.0 / (HBAR * TWO_PI * 5.17e9))
    assert device.n_th == pytest.approx(8.0606, abs=1e-4)


def test_bose_convention_is_opt_in(device):
    bose = SystemParams.reference_device(occupancy="bose")
    x = HBAR * device.omega_m / (K_B * 2.0)
    assert bose.n_th == pytest.approx(1 / np.expm1(x), rel=1e-14)
    assert bose.n_th < device.n_th
    with pytest.raises(ValueError):
        thermal_occupancy(1.0, 1.0, "boltzmann")


@pytest.mark.parametrize("field,value", [("kappa", -1.0), ("g0", -1.0), ("omega_m", 0.0)])
def test_invalid_params_rejected(device, field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(device, **{field: value})


def test_kappa_ex_cannot_exceed_kappa():
    with pytest.raises(ValueError):
        SystemParams(kappa=1.0, kappa_ex=2.0, omega_m=1.0, gamma_int=0.0, gamma_gas=0.0, g0=0.0)


def test_cooling_detuning_conversion_is_exact(device):
    d = DriveConfig.from_hz(n_c=1, delta_c_hz=-5.0e9, omega_m_hz=5.17e9, delta_hz=-10e6)
    assert d.cooling_detuning(device.omega_m) / TWO_PI == pytest.approx(-5.0e9, rel=1e-15)
    assert d.delta_mean == pytest.approx(TWO_PI * (-5.0e9 + 5.17e9 - 10e6))


def test_drive_roundtrip_through_hz():
    d = DriveConfig(n_c=3.0, n_b=1.0, delta_mean=1.5e8, delta=-6e7, delta_lo=2.4e8)
    back = DriveConfig.from_dict(d.to_hz())
    assert back.delta_mean == pytest.approx(d.delta_mean, rel=1e-15)
    assert back.delta_lo == pytest.approx(d.delta_lo, rel=1e-15)


def test_heterodyne_ordering():
    DriveConfig(n_c=1, delta=-1.0, delta_lo=2.0).check_heterodyne_ordering()
    for delta, lo in [(1.0, 2.0), (-3.0, 2.0), (0.0, 1.0)]:
        with pytest.raises(ValueError):
            DriveConfig(n_c=1, delta=delta, delta_lo=lo).check_heterodyne_ordering()


# -- susceptibilities ------------------------------------------------------

def test_chi_c_values(device):
    drive = DriveConfig(n_c=0, delta_mean=0.0)
    val = chi_c(device, drive, 0.0).value
    assert val == pytest.approx(2 / device.kappa)
    assert abs(val) == pytest.approx(1.249e-9, rel=1e-3)
    d = DriveConfig(n_c=0, delta_mean=3e8)
    assert chi_c(device, d, -3e8).value == pytest.approx(2 / device.kappa)
    edge = chi_c(device, d, np.array([-3e8 - device.kappa / 2, -3e8 + device.kappa / 2])).value
    np.testing.assert_allclose(np.abs(edge) ** 2, 0.5 * (2 / device.kappa) ** 2, rtol=1e-12)


def test_chi_m_values(device):
    d = DriveConfig(n_c=0, delta=-2e6)
    assert chi_m(device, d, 2e6).value == pytest.approx(2 / device.gamma_m)
    half = chi_m(device, d, 2e6 + device.gamma_m / 2).value
    assert abs(half) == pytest.approx(2 / device.gamma_m / np.sqrt(2))


def test_chi_m_pole_is_tagged(device):
    p = dataclasses.replace(device, gamma_int=0.0, gamma_gas=0.0)
    d = DriveConfig(n_c=0, delta=-2e6)
    r = chi_m(p, d, np.array([2e6, 3e6]))
    assert r.finite.tolist() == [False, True]
    assert np.isnan(r.value[0])
    with pytest.raises(ValueError):
        complex(chi_m(p, d, 2e6))


@given(st.floats(-1e10, 1e10), st.floats(-1e10, 1e10))
def test_inverse_susceptibilities_are_passive(omega, delta):
    p = SystemParams.reference_device()
    d = DriveConfig(n_c=0, delta_mean=delta, delta=delta / 3)
    assert (1 / chi_c(p, d, omega).value).real > 0
    assert (1 / chi_m(p, d, omega).value).real > 0


# -- rates -----------------------------------------------------------------

def test_scattering_rate_arithmetic(device):
    n_c = 5
    d = single_tone(device, n_c)
    gamma_b, gamma_c = scattering_rates(device, d)
    g0, kappa = TWO_PI * 1.08e6, TWO_PI * 255e6
    assert gamma_b == 0.0
    assert gamma_c == pytest.approx(4 * g0**2 * n_c / kappa, rel=1e-14)
    assert gamma_c / TWO_PI == pytest.approx(91482, rel=1e-4)
    gc776 = scattering_rates(device, single_tone(device, 776))[1]
    assert gc776 / TWO_PI == pytest.approx(14.2e6, rel=5e-3)


def test_raman_ratio_at_resolved_sideband():
    p = SystemParams(kappa=1.0, kappa_ex=0.5, omega_m=20.0, gamma_int=1e-4, gamma_gas=0.0, g0=0.01)
    d = single_tone(p, 100.0)
    _, gamma_c = scattering_rates(p, d)
    gamma_as_b, gamma_s_c = raman_rates(p, d)
    assert gamma_as_b == 0.0
    assert gamma_s_c / gamma_c == pytest.approx(0.25 / (0.25 + 40.0**2), rel=1e-13)
    assert gamma_s_c / gamma_c == pytest.approx(1.56e-4, rel=2e-3)


def test_raman_stokes_resonant_limit(device):
    # cooling tone sitting on the blue sideband: delta - delta_t - 2 omega_m = 0
    d = DriveConfig(n_c=7.0, delta_mean=2 * device.omega_m, delta=0.0)
    _, gamma_s_c = raman_rates(device, d)
    assert gamma_s_c == pytest.approx(4 * device.g0**2 * 7.0 / device.kappa)


def test_spring_shift_trivial_cases(device):
    assert spring_shift(device, single_tone(device, 500)) == 0.0
    d = DriveConfig(n_c=300, n_b=300, delta_mean=0.0, delta=-TWO_PI * 7e6)
    assert spring_shift(device, d) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(-5e10, 5e10), st.floats(-5e8, 5e8))
def test_spring_shift_antisymmetry(n_b, n_c, delta_mean, delta):
    p = SystemParams.reference_device()
    a = spring_shift(p, DriveConfig(n_c=n_c, n_b=n_b, delta_mean=delta_mean, delta=delta))
    # mirroring both tones about the cavity swaps their roles and keeps delta
    b = spring_shift(p, DriveConfig(n_c=n_b, n_b=n_c, delta_mean=-delta_mean, delta=delta))
    assert a == pytest.approx(-b, rel=1e-12, abs=1e-12)


def test_spring_shift_changes_sign_at_sideband(device):
    below = spring_shift(device, single_tone(device, 300, offset=-TWO_PI * 50e6))
    above = spring_shift(device, single_tone(device, 300, offset=TWO_PI * 50e6))
    assert below < 0 < above


# -- occupancies -----------------------------------------------------------

def test_final_occupancy_zero_bath(device):
    p = dataclasses.replace(device, temperature=0.0, n_th=0.0)
    assert final_occupancy(p, single_tone(p, 100)) == 0.0


def test_final_occupancy_inverse_relation(device):
    for x in (0.05, 0.5, 2.0):
        gamma_c = device.gamma_m * device.n_th / x - device.gamma_m
        n_c = gamma_c * device.kappa / (4 * device.g0**2)
        assert final_occupancy(device, single_tone(device, n_c)) == pytest.approx(x, rel=1e-12)


def test_final_occupancy_high_power_oracle(device):
    gamma_m, n_th = TWO_PI * 115e3, 8.0606
    gamma_c = 4 * (TWO_PI * 1.08e6) ** 2 * 776 / (TWO_PI * 255e6)
    oracle = gamma_m * n_th / (gamma_m + gamma_c)
    n_f = final_occupancy(device, single_tone(device, 776))
    assert n_f == pytest.approx(oracle, rel=1e-4)
    assert n_f == pytest.approx(0.065, abs=1e-3)


def test_instability_reported(device):
    d = DriveConfig(n_c=0.0, n_b=1000.0, delta_mean=0.0, delta=0.0)
    with pytest.raises(InstabilityError):
        final_occupancy(device, d)


@settings(max_examples=50)
@given(st.floats(1, 1e3), st.floats(1, 1e3))
def test_final_occupancy_decreases_with_power(n1, n2):
    p = SystemParams.reference_device()
    lo, hi = sorted((n1, n2))
    if hi == lo:
        return
    assert final_occupancy(p, single_tone(p, hi)) < final_occupancy(p, single_tone(p, lo))


def test_min_occupancy_resolved_sideband():
    p = SystemParams(kappa=1.0, kappa_ex=0.5, omega_m=20.0, gamma_int=1e-4, gamma_gas=0.0, g0=0.01)
    d = single_tone(p, 100.0)
    assert min_occupancy(p, d) == pytest.approx((1.0 / 80.0) ** 2, rel=1e-12)
    assert min_occupancy(p, d) == pytest.approx(1.56e-4, rel=2e-3)


def test_min_occupancy_zero_and_unstable(device):
    # unresolved limit is not needed: both heating channels vanish when kappa -> tiny
    p = SystemParams(kappa=1e-12, kappa_ex=0.0, omega_m=1.0, gamma_int=1.0, gamma_gas=0.0, g0=1.0)
    assert min_occupancy(p, single_tone(p, 1.0)) == pytest.approx(0.0, abs=1e-20)
    blue = DriveConfig(n_c=0.0, n_b=10.0, delta_mean=-device.omega_m)
    with pytest.raises(InstabilityError):
        min_occupancy(device, blue)
    assert np.isnan(dressed_state(device, DriveConfig(n_c=0.0, n_b=0.0)).n_min)


@settings(max_examples=200)
@given(st.floats(0.5, 50), st.floats(0, 1e4), st.floats(0, 1e4), st.floats(-2, 2), st.floats(-0.5, 0.5))
def test_detailed_balance_identity(ratio, n_c, n_b, offset, delta):
    p = SystemParams(kappa=1.0, kappa_ex=0.3, omega_m=ratio, gamma_int=1e-3, gamma_gas=0.0,
                     g0=1e-3)
    d = DriveConfig.from_cooling_detuning(-ratio + offset, ratio, n_c, n_b, delta)
    if raman_damping(p, d) <= 0 or n_c == 0:
        return
    n = min_occupancy(p, d)
    gamma_b, gamma_c = scattering_rates(p, d)
    gamma_as_b, gamma_s_c = raman_rates(p, d)
    if n == 0:
        return
    lhs = (n + 1) / n
    rhs = (gamma_as_b + gamma_c) / (gamma_b + gamma_s_c)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gamma_opt_vs_raman_at_sidebands(device):
    r = (device.kappa / 4 / device.omega_m) ** 2
    for n_c, n_b in [(100, 0), (300, 50), (10, 5)]:
        d = DriveConfig(n_c=n_c, n_b=n_b, delta_mean=0.0, delta=0.0)
        gamma_b, gamma_c = scattering_rates(device, d)
        opt = gamma_c - gamma_b
        assert abs(raman_damping(device, d) - opt) <= r * abs(opt)


def test_dressed_zpf_cases(device):
    d = single_tone(device, 200)
    assert dressed_zpf(device, d) == 1.0
    p = dataclasses.replace(device, alpha_opt=1.7, beta_mech=0.6)
    balanced = DriveConfig(n_c=50, n_b=50, delta_mean=0.0, delta=0.0)
    assert dressed_zpf(p, balanced) == pytest.approx(0.6, rel=1e-12)
    q = dataclasses.replace(device, alpha_opt=1.5, gamma_gas=0.0, gamma_int=TWO_PI * 1.0)
    assert dressed_zpf(q, single_tone(q, 1e4)) == pytest.approx(1.5, rel=1e-6)


def test_heating_nesting_and_arithmetic(device):
    d = single_tone(device, 330)
    assert occupancy_with_heating(device, d, HeatingModel()) == final_occupancy(device, d)
    assert HeatingModel(alpha2=1.2e-6).excess(330) == pytest.approx(0.13068, rel=1e-12)
    d1000 = single_tone(device, 1000)
    heated = occupancy_with_heating(device, d1000, HeatingModel(alpha1=1e-3))
    bath = dataclasses.replace(device, n_th=device.n_th + 1.0)
    assert heated == pytest.approx(final_occupancy(bath, d1000), rel=1e-14)
    with pytest.raises(ValueError):
        HeatingModel(alpha1=-1e-3)


def test_dressed_state_fields(device):
    d = single_tone(device, 776, offset=TWO_PI * 20e6)
    s = dressed_state(device, d)
    assert s.gamma_eff == pytest.approx(device.gamma_m + s.gamma_opt, rel=1e-15)
    assert s.gamma_opt == s.gamma_c - s.gamma_b
    assert s.omega_eff == device.omega_m + s.spring_shift
    assert s.weak_coupling is False
    assert dressed_state(device, single_tone(device, 5)).weak_coupling is True
    hz = s.to_hz()
    assert hz["gamma_eff_hz"] == pytest.approx(s.gamma_eff / TWO_PI)
    assert hz["n_f"] == s.n_f


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3))
def test_energy_scale_independence(scale):
    p = dataclasses.replace(SystemParams.reference_device(), n_th=8.0)
    d = DriveConfig(n_c=200, n_b=30, delta_mean=TWO_PI * 3e6, delta=-TWO_PI * 11e6,
                    delta_lo=TWO_PI * 40e6)
    ps = dataclasses.replace(p, **{k: getattr(p, k) * scale for k in
                                   ("kappa", "kappa_ex", "omega_m", "gamma_int", "gamma_gas", "g0")})
    ds = dataclasses.replace(d, delta_mean=d.delta_mean * scale, delta=d.delta * scale,
                             delta_lo=d.delta_lo * scale)
    a, b = dressed_state(p, d), dressed_state(ps, ds)
    for f in dataclasses.fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, bool):
            assert va == vb
        elif f.name.startswith(("gamma", "spring", "omega")):
            assert vb == pytest.approx(va * scale, rel=1e-10)
        else:
            assert vb == pytest.approx(va, rel=1e-10)


# -- exact susceptibility --------------------------------------------------

def test_exact_reduces_to_bare(device):
    d = DriveConfig(n_c=0.0, n_b=0.0, delta_mean=1e8, delta=-3e7)
    w = np.linspace(2e7, 4e7, 101)
    np.testing.assert_allclose(exact_effective_susceptibility(device, d, w).value,
                               chi_m(device, d, w).value, rtol=1e-15)


def test_pi_vanishes_with_one_tone(device):
    w = np.linspace(-1e8, 1e8, 11)
    for d in (DriveConfig(n_c=10.0, delta_mean=0.1), DriveConfig(n_c=0.0, n_b=10.0)):
        assert np.all(exact_effective_susceptibility(device, d, w).components["Pi"] == 0)


def test_exact_matches_matrix_solution(device):
    """chi_meff and M against a direct 2x2 solve of the linearized equations."""
    d = DriveConfig(n_c=400.0, n_b=150.0, delta_mean=TWO_PI * 30e6, delta=-TWO_PI * 9e6)
    gc, gb = device.g0 * np.sqrt(d.n_c), device.g0 * np.sqrt(d.n_b)
    k2, m2 = device.kappa / 2, device.gamma_m / 2
    res = exact_effective_susceptibility(device, d, np.linspace(-2e7, 5e7, 9))
    for i, w in enumerate(np.linspace(-2e7, 5e7, 9)):
        cav = 1 / (k2 - 1j * (w + d.delta_mean))
        cav_t = np.conj(1 / (k2 - 1j * (-w + d.delta_mean)))
        sig = -1j * (gc**2 * cav - gb**2 * cav_t)
        sig_mw = -1j * (gc**2 * (1 / (k2 - 1j * (-w + d.delta_mean)))
                        - gb**2 * np.conj(1 / (k2 - 1j * (w + d.delta_mean))))
        pi = -1j * gc * gb * (cav - cav_t)
        A = np.array([[m2 - 1j * (w + d.delta) + 1j * sig, 1j * pi],
                      [-1j * pi, np.conj(m2 - 1j * (-w + d.delta)) - 1j * np.conj(sig_mw)]])
        assert res.components["N"][i] == pytest.approx(np.linalg.det(A), rel=1e-10)
        assert res.value[i] == pytest.approx(A[1, 1] / np.linalg.det(A), rel=1e-10)
        M = 1j * res.components["M"][:, :, i] / res.components["N"][i]
        col0 = np.linalg.solve(A, 1j * cav * np.array([gc, -gb]))
        col1 = np.linalg.solve(A, 1j * cav_t * np.array([gb, -gc]))
        np.testing.assert_allclose(M[:, 0], col0, rtol=1e-9)
        np.testing.assert_allclose(M[:, 1], col1, rtol=1e-9)


def test_intracavity_photons(device):
    n = intracavity_photons(500e-6, -device.omega_m, device, coupling_efficiency=0.4)
    assert n == pytest.approx(655.1, rel=1e-3)
    with pytest.raises(ValueError):
        intracavity_photons(1e-3, 0.0, device, coupling_efficiency=0.0)
