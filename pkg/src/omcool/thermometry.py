"""Phonon occupancy from fitted sideband areas.

Two calibration routes:

* sideband asymmetry of a two-tone spectrum, which is self-calibrating and
  also yields the detection coefficient ``C = A2/gamma_b - A1/gamma_c``;
* noise anchoring against a low-power run assumed to sit at the cryostat
  temperature.

Uncertainties combine the fit covariance, the calibration spread and the
sensitivity to a cooling-tone detuning error in quadrature. The detuning
term is evaluated by finite differences at +-sigma and can be asymmetric,
so every estimate carries separate lower and upper bounds.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import AnchorInconsistent, MixedConfigurations, NegativeOccupancy
from .fitting import DETUNING_UNCERTAINTY, LorentzianFitResult
from .model import TWO_PI, DriveConfig, SystemParams, scattering_rates, thermal_occupancy

CALIBRATION_METHODS = ("ancillary-quantum", "noise-anchored")


@dataclass(frozen=True)
class Calibration:
    c_cal: float
    c_cal_sigma: float = 0.0
    source_runs: tuple = ()
    method: str = "ancillary-quantum"
    session: Optional[str] = None

    def __post_init__(self):
        if not self.c_cal > 0:
            raise ValueError("c_cal must be > 0")
        if self.c_cal_sigma < 0:
            raise ValueError("c_cal_sigma must be >= 0")
        if self.method not in CALIBRATION_METHODS:
            raise ValueError(f"unknown calibration method {self.method!r}")
        object.__setattr__(self, "source_runs", tuple(self.source_runs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["source_runs"] = list(self.source_runs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        return cls(**d)


@dataclass(frozen=True)
class OccupancyEstimate:
    n_f: float
    sigma_lo: float
    sigma_hi: float
    method: str
    run_id: Optional[str] = None
    inputs: dict = field(default_factory=dict)
    contributions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sigma_lo < 0 or self.sigma_hi < 0:
            raise ValueError("error bounds must be >= 0")

    @property
    def sigma(self) -> float:
        """Larger of the two bounds."""
        return max(self.sigma_lo, self.sigma_hi)

    def interval(self, k=1.0):
        return self.n_f - k * self.sigma_lo, self.n_f + k * self.sigma_hi

    def contains(self, value, k=1.0) -> bool:
        lo, hi = self.interval(k)
        return lo <= value <= hi

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancyEstimate":
        return cls(**d)


class RateEstimate(NamedTuple):
    value: float
    sigma: float

    @property
    def physical(self) -> bool:
        return self.value > 0


def _shifted(drive: DriveConfig, shift: float) -> DriveConfig:
    return dataclasses.replace(drive, delta_mean=drive.delta_mean + shift)


def _detuning_bounds(func, drive, detuning_sigma):
    """Downward and upward excursions of ``func(drive)`` over +-sigma."""
    centre = func(drive)
    if detuning_sigma == 0:
        return 0.0, 0.0
    vals = [func(_shifted(drive, s)) for s in (-detuning_sigma, detuning_sigma)]
    lo = max(0.0, *(centre - v for v in vals))
    hi = max(0.0, *(v - centre for v in vals))
    return lo, hi


def _quad(*xs):
    return float(np.sqrt(sum(x * x for x in xs)))


def _inputs(fit, params, drive, detuning_sigma, **extra):
    d = {
        "area1_hz": fit.area1 / TWO_PI,
        "area1_sigma_hz": fit.sigma("area1") / TWO_PI,
        "gamma_eff_hz": fit.gamma_eff / TWO_PI,
        "delta_c_hz": drive.cooling_detuning(params.omega_m) / TWO_PI,
        "delta_c_sigma_hz": detuning_sigma / TWO_PI,
    }
    d.update(extra)
    return d


def occupancy_from_asymmetry(fit: LorentzianFitResult, params: SystemParams, drive: DriveConfig,
                             run_id=None, session=None,
                             detuning_sigma=DETUNING_UNCERTAINTY):
    """Occupancy and detection coefficient from a two-tone fit.

    With x = A1/gamma_c and y = A2/gamma_b the occupancy is x / (y - x) and
    the calibration coefficient is y - x. Rates come from the run's drive.
    Returns ``(OccupancyEstimate, Calibration)``.
    """
    if fit.mode != "double":
        raise ValueError("sideband asymmetry needs a two-tone (double) fit")
    if drive.n_b <= 0:
        raise ValueError("sideband asymmetry needs a blue probe (n_b > 0)")

    def ratio(d):
        gb, gc = scattering_rates(params, d)
        return fit.area1 / gc, fit.area2 / gb

    x, y = ratio(drive)
    if y <= x:
        raise NegativeOccupancy(
            f"blue sideband ({y:.6g}) does not exceed cooling sideband ({x:.6g}) per unit rate")
    n_f = x / (y - x)
    c_cal = y - x

    gb, gc = scattering_rates(params, drive)
    cov = fit.cov(["area1", "area2"])
    g_n = np.array([y / (y - x) ** 2 / gc, -x / (y - x) ** 2 / gb])
    g_c = np.array([-1.0 / gc, 1.0 / gb])
    s_n = float(np.sqrt(max(g_n @ cov @ g_n, 0.0)))
    s_c = float(np.sqrt(max(g_c @ cov @ g_c, 0.0)))

    def n_of(d):
        xx, yy = ratio(d)
        return xx / (yy - xx)

    def c_of(d):
        xx, yy = ratio(d)
        return yy - xx

    dn_lo, dn_hi = _detuning_bounds(n_of, drive, detuning_sigma)
    dc_lo, dc_hi = _detuning_bounds(c_of, drive, detuning_sigma)
    est = OccupancyEstimate(
        n_f=float(n_f), sigma_lo=_quad(s_n, dn_lo), sigma_hi=_quad(s_n, dn_hi),
        method="sideband-asymmetry", run_id=run_id,
        inputs=_inputs(fit, params, drive, detuning_sigma,
                       area2_hz=fit.area2 / TWO_PI, area2_sigma_hz=fit.sigma("area2") / TWO_PI,
                       gamma_b_hz=gb / TWO_PI, gamma_c_hz=gc / TWO_PI),
        contributions={"fit": s_n, "detuning_lo": dn_lo, "detuning_hi": dn_hi},
    )
    cal = Calibration(c_cal=float(c_cal), c_cal_sigma=_quad(s_c, max(dc_lo, dc_hi)),
                      source_runs=() if run_id is None else (run_id,),
                      method="ancillary-quantum", session=session)
    return est, cal


def pool_calibration(calibrations: Sequence[Calibration]) -> Calibration:
    """Mean coefficient over runs; the spread is the population standard deviation."""
    cals = list(calibrations)
    if len(cals) < 2:
        raise ValueError("pooling needs at least two calibrations")
    sessions = {c.session for c in cals}
    if len(sessions) > 1:
        raise MixedConfigurations(
            f"calibrations come from different coupling sessions: {sorted(map(str, sessions))}")
    methods = {c.method for c in cals}
    if len(methods) > 1:
        raise MixedConfigurations(f"calibrations use different methods: {sorted(methods)}")
    vals = np.array([c.c_cal for c in cals])
    runs = tuple(r for c in cals for r in c.source_runs)
    return Calibration(c_cal=float(np.mean(vals)), c_cal_sigma=float(np.std(vals)),
                       source_runs=runs, method=cals[0].method, session=cals[0].session)


def occupancy_from_calibration(fit: LorentzianFitResult, params: SystemParams, drive: DriveConfig,
                               cal: Calibration, run_id=None,
                               detuning_sigma=DETUNING_UNCERTAINTY) -> OccupancyEstimate:
    """Occupancy A_s / (gamma_c C) from the cooling sideband of ``fit``."""
    if cal.method != "ancillary-quantum":
        raise ValueError("occupancy_from_calibration needs an ancillary-quantum calibration")
    area = fit.area1

    def n_of(d):
        return area / (scattering_rates(params, d)[1] * cal.c_cal)

    n_f = n_of(drive)
    s_fit = fit.sigma("area1") / (scattering_rates(params, drive)[1] * cal.c_cal)
    s_cal = n_f * cal.c_cal_sigma / cal.c_cal
    d_lo, d_hi = _detuning_bounds(n_of, drive, detuning_sigma)
    return OccupancyEstimate(
        n_f=float(n_f), sigma_lo=_quad(s_fit, s_cal, d_lo), sigma_hi=_quad(s_fit, s_cal, d_hi),
        method="calibrated", run_id=run_id,
        inputs=_inputs(fit, params, drive, detuning_sigma, c_cal=cal.c_cal,
                       c_cal_sigma=cal.c_cal_sigma,
                       gamma_c_hz=scattering_rates(params, drive)[1] / TWO_PI),
        contributions={"fit": s_fit, "calibration": s_cal, "detuning_lo": d_lo,
                       "detuning_hi": d_hi},
    )


def infer_gamma_m(fit: LorentzianFitResult, params: SystemParams, drive: DriveConfig,
                  gamma_c=None) -> RateEstimate:
    """Intrinsic damping gamma_eff - gamma_c from a single-tone fit.

    ``gamma_c`` overrides the rate computed from the drive (angular units).
    A non-positive result is returned as is; check ``.physical``.
    """
    if gamma_c is None:
        gamma_c = scattering_rates(params, drive)[1]
    return RateEstimate(float(fit.gamma_eff - gamma_c), fit.sigma("gamma_eff"))


@dataclass(frozen=True)
class Anchor:
    """Reference run assumed thermalized at ``temperature``.

    ``area`` is the fitted cooling-sideband area and ``gamma_s`` the
    computed cooling scattering rate of that run; ``gamma_m`` is the
    intrinsic damping at the anchor power.
    """

    area: float
    gamma_s: float
    temperature: float
    gamma_m: float
    area_sigma: float = 0.0
    gamma_m_sigma: float = 0.0

    @classmethod
    def from_fit(cls, fit: LorentzianFitResult, params: SystemParams, drive: DriveConfig,
                 temperature=None, gamma_c=None) -> "Anchor":
        gamma_s = scattering_rates(params, drive)[1] if gamma_c is None else gamma_c
        gm = infer_gamma_m(fit, params, drive, gamma_c=gamma_s)
        if not gm.physical:
            raise AnchorInconsistent(
                f"inferred anchor damping {gm.value / TWO_PI:.6g} Hz is not positive")
        return cls(area=fit.area1, gamma_s=float(gamma_s),
                   temperature=params.temperature if temperature is None else temperature,
                   gamma_m=gm.value, area_sigma=fit.sigma("area1"), gamma_m_sigma=gm.sigma)

    def n_anchor(self, params: SystemParams) -> float:
        """Anchor-run occupancy n_th gamma_m / (gamma_s + gamma_m)."""
        n_th = thermal_occupancy(self.temperature, params.omega_m, params.occupancy)
        return n_th * self.gamma_m / (self.gamma_s + self.gamma_m)

    def to_dict(self) -> dict:
        return {"area_hz": self.area / TWO_PI, "gamma_s_hz": self.gamma_s / TWO_PI,
                "temperature_k": self.temperature, "gamma_m_hz": self.gamma_m / TWO_PI,
                "area_sigma_hz": self.area_sigma / TWO_PI,
                "gamma_m_sigma_hz": self.gamma_m_sigma / TWO_PI}


def occupancy_noise_anchored(fit: LorentzianFitResult, params: SystemParams, drive: DriveConfig,
                             anchor: Anchor, run_id=None,
                             detuning_sigma=DETUNING_UNCERTAINTY) -> OccupancyEstimate:
    """Occupancy from the sideband area relative to a thermalized anchor run."""
    if anchor.gamma_m <= 0:
        raise AnchorInconsistent("anchor damping must be positive")
    n0 = anchor.n_anchor(params)
    ref = anchor.area / anchor.gamma_s

    def n_of(d):
        return fit.area1 / scattering_rates(params, d)[1] / ref * n0

    n_f = n_of(drive)
    s_fit = fit.sigma("area1") / scattering_rates(params, drive)[1] / ref * n0
    s_anchor = n_f * anchor.area_sigma / anchor.area
    # d ln(n0) / d gamma_m = gamma_s / (gamma_m (gamma_s + gamma_m))
    s_gm = n_f * anchor.gamma_m_sigma * anchor.gamma_s / (
        anchor.gamma_m * (anchor.gamma_s + anchor.gamma_m))
    d_lo, d_hi = _detuning_bounds(n_of, drive, detuning_sigma)
    return OccupancyEstimate(
        n_f=float(n_f), sigma_lo=_quad(s_fit, s_anchor, s_gm, d_lo),
        sigma_hi=_quad(s_fit, s_anchor, s_gm, d_hi), method="noise-anchored", run_id=run_id,
        inputs=_inputs(fit, params, drive, detuning_sigma, anchor=anchor.to_dict(),
                       gamma_c_hz=scattering_rates(params, drive)[1] / TWO_PI),
        contributions={"fit": s_fit, "anchor_area": s_anchor, "anchor_gamma_m": s_gm,
                       "detuning_lo": d_lo, "detuning_hi": d_hi},
    )
