import numpy as np
import pytest

from omcool.model import TWO_PI, DriveConfig, SystemParams


@pytest.fixture
def device():
    return SystemParams.reference_device()


def photons_for_rate(params, rate, detuning):
    """Intracavity photons giving scattering ``rate`` at cavity ``detuning`` (rad/s)."""
    return rate * (params.kappa**2 / 4 + detuning**2) / (params.g0**2 * params.kappa)


def two_tone_drive(params, gamma_c_hz, gamma_b_hz, delta_hz=-10e6, delta_lo_hz=40e6):
    """Cooling tone on the red sideband plus a blue probe, scaled to given rates."""
    delta = TWO_PI * delta_hz
    n_c = photons_for_rate(params, TWO_PI * gamma_c_hz, 0.0)
    n_b = photons_for_rate(params, TWO_PI * gamma_b_hz, 2 * delta)
    return DriveConfig.from_cooling_detuning(-params.omega_m, params.omega_m, n_c, n_b, delta,
                                             TWO_PI * delta_lo_hz)


def fake_fit(area1, gamma_eff, area2=None, sigma=None):
    """Fit result with given values and a diagonal covariance (angular units)."""
    from omcool.fitting import DOUBLE_NAMES, SINGLE_NAMES, LorentzianFitResult

    names = DOUBLE_NAMES if area2 is not None else SINGLE_NAMES
    sigma = sigma or {}
    cov = np.diag([sigma.get(n, 0.0) ** 2 for n in names])
    return LorentzianFitResult(
        mode="double" if area2 is not None else "single", background=1.0, area1=area1,
        center1=TWO_PI * 30e6, gamma_eff=gamma_eff, area2=area2,
        center2=TWO_PI * 50e6 if area2 is not None else None, covariance=cov,
        free_names=names, residual_norm=0.0)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
