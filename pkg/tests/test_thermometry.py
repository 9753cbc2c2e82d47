import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omcool import fileio
from omcool.errors import AnchorInconsistent, MixedConfigurations, NegativeOccupancy
from omcool.fitting import fit_lorentzians
from omcool.model import TWO_PI, scattering_rates
from omcool.spectra import frequency_grid, heterodyne_psd, synthesize
from omcool.thermometry import (
    Anchor, Calibration, OccupancyEstimate, infer_gamma_m, occupancy_from_asymmetry,
    occupancy_from_calibration, occupancy_noise_anchored, pool_calibration,
)
from tests.conftest import fake_fit, two_tone_drive


@pytest.fixture
def drive(device):
    return two_tone_drive(device, 3.8e6, 1.9e6)


def fitted(params, drive, n_f, eta, averages=None, seed=0, mode="double"):
    spec = heterodyne_psd(params, drive, n_f, eta, frequency_grid(params, drive))
    if averages is not None:
        spec = synthesize(spec, averages, seed)
    return fit_lorentzians(spec, mode=mode, weights="model" if averages else "uniform")


def test_unit_occupancy(device, drive):
    gb, gc = scattering_rates(device, drive)
    fit = fake_fit(0.5 * gc, TWO_PI * 2e6, area2=gb)
    est, cal = occupancy_from_asymmetry(fit, device, drive)
    assert est.n_f == pytest.approx(1.0, rel=1e-12)
    assert cal.c_cal == pytest.approx(0.5, rel=1e-12)


def test_ground_state(device, drive):
    gb, _ = scattering_rates(device, drive)
    est, cal = occupancy_from_asymmetry(fake_fit(0.0, TWO_PI * 2e6, area2=0.3 * gb), device, drive)
    assert est.n_f == 0.0
    assert cal.c_cal == pytest.approx(0.3, rel=1e-12)


def test_negative_occupancy_reported(device, drive):
    gb, gc = scattering_rates(device, drive)
    with pytest.raises(NegativeOccupancy):
        occupancy_from_asymmetry(fake_fit(gc, TWO_PI * 2e6, area2=0.9 * gb), device, drive)


def test_asymmetry_needs_two_tones(device, drive):
    with pytest.raises(ValueError):
        occupancy_from_asymmetry(fake_fit(1e5, TWO_PI * 2e6), device, drive)


def test_detuning_uncertainty_enters(device, drive):
    gb, gc = scattering_rates(device, drive)
    fit = fake_fit(0.3 * gc, TWO_PI * 2e6, area2=1.3 * gb)
    est, _ = occupancy_from_asymmetry(fit, device, drive)
    none, _ = occupancy_from_asymmetry(fit, device, drive, detuning_sigma=0.0)
    assert none.sigma == 0.0
    assert est.sigma > 0
    assert est.contributions["detuning_lo"] != est.contributions["detuning_hi"]


def test_noiseless_round_trip(device, drive):
    for n_f in (0.05, 0.3, 2.0):
        est, cal = occupancy_from_asymmetry(fitted(device, drive, n_f, 0.2), device, drive)
        assert est.n_f == pytest.approx(n_f, rel=1e-6)
        assert cal.c_cal == pytest.approx(0.2, rel=1e-6)


@settings(max_examples=8, deadline=None)
@given(gc=st.floats(1e6, 6e6), ratio=st.floats(0.2, 0.6), n_f=st.floats(0.1, 3.0),
       eta=st.floats(0.05, 1.0), seed=st.integers(0, 2**16))
def test_round_trip_bias(gc, ratio, n_f, eta, seed):
    from omcool.model import SystemParams

    p = SystemParams.reference_device()
    d = two_tone_drive(p, gc, ratio * gc)
    ests = np.array([occupancy_from_asymmetry(fitted(p, d, n_f, eta, 1e4, seed + k), p, d)[0].n_f
                     for k in range(8)])
    # bias below 2%, resolved against the scatter of the realizations
    stderr = ests.std(ddof=1) / np.sqrt(ests.size)
    assert abs(ests.mean() - n_f) <= 0.02 * n_f + 3 * stderr


def test_calibration_independent_of_occupancy(device, drive):
    cals = [occupancy_from_asymmetry(fitted(device, drive, n, 0.3), device, drive)[1].c_cal
            for n in (0.1, 0.5, 2.0)]
    np.testing.assert_allclose(cals, 0.3, rtol=1e-6)


def test_rescaling_equivariance(device, drive):
    spec = synthesize(heterodyne_psd(device, drive, 0.4, 0.3, frequency_grid(device, drive)), 1e4, 3)
    one = fit_lorentzians(spec)
    two = fit_lorentzians(spec.replace(psd=2.5 * spec.psd))
    e1, c1 = occupancy_from_asymmetry(one, device, drive)
    e2, c2 = occupancy_from_asymmetry(two, device, drive)
    assert e2.n_f == pytest.approx(e1.n_f, rel=1e-6)
    assert c2.c_cal == pytest.approx(2.5 * c1.c_cal, rel=1e-6)
    single = dataclasses.replace(drive, n_b=0.0)
    s_spec = heterodyne_psd(device, single, 0.4, 0.3, frequency_grid(device, single))
    n1 = occupancy_from_calibration(fit_lorentzians(s_spec, mode="single"), device, single, c1).n_f
    n2 = occupancy_from_calibration(
        fit_lorentzians(s_spec.replace(psd=2.5 * s_spec.psd), mode="single"), device, single, c2).n_f
    assert n2 == pytest.approx(n1, rel=1e-6)


def test_calibrated_matches_asymmetry_on_noiseless_data(device, drive):
    est, cal = occupancy_from_asymmetry(fitted(device, drive, 0.25, 0.1), device, drive)
    single = dataclasses.replace(drive, n_b=0.0)
    s_fit = fitted(device, single, 0.25, 0.1, mode="single")
    n = occupancy_from_calibration(s_fit, device, single, cal)
    assert n.n_f == pytest.approx(est.n_f, rel=1e-6)


def test_calibration_linearity(device, drive):
    fit = fake_fit(2e5, TWO_PI * 2e6, sigma={"area1": 1e4})
    one = occupancy_from_calibration(fit, device, drive, Calibration(0.1, 0.01))
    two = occupancy_from_calibration(fit, device, drive, Calibration(0.2, 0.02))
    assert two.n_f == one.n_f / 2
    zero = occupancy_from_calibration(fake_fit(0.0, TWO_PI * 2e6), device, drive, Calibration(0.1))
    assert zero.n_f == 0.0
    with pytest.raises(ValueError):
        occupancy_from_calibration(fit, device, drive, Calibration(0.1, method="noise-anchored"))


def test_pooling():
    same = pool_calibration([Calibration(0.07, session="a"), Calibration(0.07, session="a")])
    assert same.c_cal == 0.07 and same.c_cal_sigma == 0.0
    two = pool_calibration([Calibration(0.05, source_runs=["r1"]), Calibration(0.15, source_runs=["r2"])])
    assert two.c_cal == pytest.approx(0.1)
    assert two.c_cal_sigma == pytest.approx(0.05)
    assert two.source_runs == ("r1", "r2")
    with pytest.raises(MixedConfigurations):
        pool_calibration([Calibration(0.1, session="a"), Calibration(0.1, session="b")])
    with pytest.raises(MixedConfigurations):
        pool_calibration([Calibration(0.1), Calibration(0.1, method="noise-anchored")])
    with pytest.raises(ValueError):
        pool_calibration([Calibration(0.1)])
    with pytest.raises(ValueError):
        Calibration(0.0)


def test_pooled_calibration_recovers_eta(device, drive):
    eta = 0.064
    cals = [occupancy_from_asymmetry(fitted(device, drive, 0.5, eta, 1e4, seed), device, drive,
                                     run_id=f"r{seed}", session="s")[1]
            for seed in range(5)]
    pooled = pool_calibration(cals)
    assert pooled.c_cal == pytest.approx(eta, rel=0.03)
    assert pooled.source_runs == tuple(f"r{k}" for k in range(5))


def test_infer_gamma_m(device, drive):
    _, gc = scattering_rates(device, drive)
    assert infer_gamma_m(fake_fit(1e5, gc), device, drive).value == 0.0
    r = infer_gamma_m(fake_fit(1e5, TWO_PI * 453e3, sigma={"gamma_eff": TWO_PI * 20e3}),
                      device, drive, gamma_c=TWO_PI * 93e3)
    assert r.value / TWO_PI == pytest.approx(360e3, rel=1e-12)
    assert r.sigma == TWO_PI * 20e3
    neg = infer_gamma_m(fake_fit(1e5, 0.5 * gc), device, drive)
    assert neg.value < 0 and not neg.physical


def test_anchor_self_consistency(device):
    d = two_tone_drive(device, 93e3, 0.0)
    d = dataclasses.replace(d, n_b=0.0)
    _, gc = scattering_rates(device, d)
    gm = TWO_PI * 360e3
    fit = fake_fit(0.064 * gc * 3.0, gm + gc, sigma={"area1": 1e3, "gamma_eff": TWO_PI * 5e3})
    anchor = Anchor.from_fit(fit, device, d)
    assert anchor.gamma_m == pytest.approx(gm, rel=1e-12)
    est = occupancy_noise_anchored(fit, device, d, anchor)
    assert est.n_f == pytest.approx(device.n_th * gm / (gc + gm), rel=1e-12)
    assert est.method == "noise-anchored"
    # a run with twice the area per unit rate is twice as hot
    hot = occupancy_noise_anchored(dataclasses.replace(fit, area1=2 * fit.area1), device, d, anchor)
    assert hot.n_f == pytest.approx(2 * est.n_f, rel=1e-12)


def test_anchor_inconsistent(device):
    d = dataclasses.replace(two_tone_drive(device, 93e3, 0.0), n_b=0.0)
    _, gc = scattering_rates(device, d)
    with pytest.raises(AnchorInconsistent):
        Anchor.from_fit(fake_fit(1e4, 0.9 * gc), device, d)
    bad = Anchor(area=1.0, gamma_s=gc, temperature=2.0, gamma_m=-1.0)
    with pytest.raises(AnchorInconsistent):
        occupancy_noise_anchored(fake_fit(1e4, gc), device, d, bad)


def test_records_serialize(tmp_path, device, drive):
    est, cal = occupancy_from_asymmetry(fitted(device, drive, 0.3, 0.5, 1e4, 1), device, drive,
                                        run_id="run-1", session="s1")
    assert OccupancyEstimate.from_dict(est.to_dict()) == est
    assert Calibration.from_dict(cal.to_dict()) == cal
    ledger = tmp_path / "ledger.jsonl"
    fileio.append_jsonl(ledger, est.to_dict())
    fileio.append_jsonl(ledger, dataclasses.replace(est, run_id="run-2").to_dict())
    rows = fileio.read_jsonl(ledger)
    assert [r["run_id"] for r in rows] == ["run-1", "run-2"]
    assert OccupancyEstimate.from_dict(rows[0]) == est
