"""Analytic heterodyne and displacement spectra, and measured-like synthesis.

Spectra are single-sided in detection frequency (Hz) around the LO offset
and normalized to shot noise, so a detector with no signal reads 1.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import fileio
from .model import (
    TWO_PI, DriveConfig, SystemParams, scattering_rates, spring_shift, _require_stable,
)

# Sideband centers must sit this many linewidths inside the grid.
COVERAGE_LINEWIDTHS = 5.0


@dataclass(frozen=True)
class SpectrumMeta:
    rbw_hz: Optional[float] = None
    averages: Optional[int] = None
    delta_lo_hz: Optional[float] = None
    drive: Optional[dict] = None
    shot_noise_reference: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumMeta":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spectrum metadata keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    psd: np.ndarray
    meta: SpectrumMeta = field(default_factory=SpectrumMeta)

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        if f.ndim != 1 or f.shape != p.shape:
            raise ValueError("freqs and psd must be 1-D arrays of equal length")
        if f.size < 3:
            raise ValueError("spectrum needs at least 3 bins")
        step = np.diff(f)
        if np.any(step <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        mean_step = (f[-1] - f[0]) / (f.size - 1)
        if np.max(np.abs(step - mean_step)) > 1e-9 * abs(mean_step) + 4 * np.spacing(np.max(np.abs(f))):
            raise ValueError("frequency grid must be uniform")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("psd values must be finite and >= 0")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "psd", p)

    @property
    def omega(self) -> np.ndarray:
        return TWO_PI * self.freqs

    @property
    def df(self) -> float:
        return (self.freqs[-1] - self.freqs[0]) / (self.freqs.size - 1)

    def replace(self, **changes) -> "Spectrum":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class NoiseFloorModel:
    """Shot-noise-normalized floor ``intercept + slope * reflected_power``."""

    intercept: float = 1.0
    slope: float = 0.0
    intercept_sigma: float = 0.0
    slope_sigma: float = 0.0

    def __post_init__(self):
        if self.intercept <= 0:
            raise ValueError("intercept must be > 0")
        if self.slope < 0:
            raise ValueError("slope must be >= 0")

    def floor(self, reflected_power):
        return self.intercept + self.slope * np.asarray(reflected_power)


def sideband_centers(drive: DriveConfig):
    """Detection angular frequencies of the cooling-tone and blue-probe
    sidebands, ``(cooling, blue)``. The cooling sideband is the lower one."""
    return drive.delta_lo + drive.delta, drive.delta_lo - drive.delta


def frequency_grid(params: SystemParams, drive: DriveConfig, rbw_hz=None,
                   margin_linewidths=25.0) -> np.ndarray:
    """Uniform detection grid (Hz) covering both sidebands.

    Default resolution is a twentieth of the effective linewidth.
    """
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + gamma_c - gamma_b
    _require_stable(gamma_eff)
    lw_hz = gamma_eff / TWO_PI
    if rbw_hz is None:
        rbw_hz = lw_hz / 20
    lo, hi = sorted(c / TWO_PI for c in sideband_centers(drive))
    f0 = max(lo - margin_linewidths * lw_hz, 0.0)
    f1 = hi + margin_linewidths * lw_hz
    n = int(np.ceil((f1 - f0) / rbw_hz)) + 1
    return np.linspace(f0, f0 + (n - 1) * rbw_hz, n)


def heterodyne_psd(params: SystemParams, drive: DriveConfig, n_f, eta, freqs,
                   rbw_hz=None) -> Spectrum:
    """Shot-noise-normalized heterodyne spectrum of the two scattered sidebands.

    The blue-probe Stokes sideband carries weight (n_f + 1) gamma_b and
    sits at delta_lo - delta; the cooling-tone anti-Stokes sideband carries
    n_f gamma_c at delta_lo + delta. Integrated over ordinary frequency the
    sidebands have areas eta gamma_b (n_f + 1) and eta gamma_c n_f.
    """
    if not 0 <= eta <= 1:
        raise ValueError("detection efficiency must lie in [0, 1]")
    if n_f < 0:
        raise ValueError("n_f must be >= 0")
    drive.check_heterodyne_ordering()
    freqs = np.asarray(freqs, dtype=float)
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + gamma_c - gamma_b
    _require_stable(gamma_eff)

    w = TWO_PI * freqs
    c_cool, c_blue = sideband_centers(drive)
    needed = [c_cool] + ([c_blue] if drive.n_b > 0 else [])
    pad = COVERAGE_LINEWIDTHS * gamma_eff
    for c in needed:
        if c - pad < w[0] or c + pad > w[-1]:
            raise ValueError(
                f"grid {freqs[0]:.6g}..{freqs[-1]:.6g} Hz does not cover the sideband at "
                f"{c / TWO_PI:.6g} Hz +- {COVERAGE_LINEWIDTHS:g} linewidths")

    hw2 = gamma_eff**2 / 4
    psd = 1.0 + eta * gamma_eff * (
        (n_f + 1) * gamma_b / (hw2 + (w - c_blue) ** 2)
        + n_f * gamma_c / (hw2 + (w - c_cool) ** 2)
    )
    if rbw_hz is None:
        rbw_hz = float(freqs[1] - freqs[0])
    meta = SpectrumMeta(rbw_hz=rbw_hz, delta_lo_hz=drive.delta_lo / TWO_PI,
                        drive=drive.to_hz(), extra={"n_f": float(n_f), "eta": float(eta)})
    return Spectrum(freqs, psd, meta)


def displacement_psd(params: SystemParams, drive: DriveConfig, omega):
    """Two-sided lab-frame displacement spectrum in units of x_zpf^2 per (rad/s).

    Integrating over omega / 2 pi gives 2 n_f + 1 for a quantum-limited drive.
    """
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + gamma_c - gamma_b
    _require_stable(gamma_eff)
    omega_eff = params.omega_m + spring_shift(params, drive)
    w = np.asarray(omega, dtype=float)
    hw2 = gamma_eff**2 / 4
    gm, nth = params.gamma_m, params.n_th
    pos = (gm * (nth + 1) + gamma_c) / ((w - omega_eff) ** 2 + hw2)
    neg = (gm * nth + gamma_b) / ((w + omega_eff) ** 2 + hw2)
    return pos + neg


def displacement_quanta(params: SystemParams, drive: DriveConfig, span_linewidths=50.0,
                        points_per_linewidth=200):
    """Integral of the displacement spectrum over omega / 2 pi, in quanta.

    Each lobe is integrated numerically on a window of +-``span_linewidths``
    effective linewidths; the Lorentzian tails outside both windows are added
    in closed form. Returns ``(total, in_window_quadrature, tail)``.
    """
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + gamma_c - gamma_b
    _require_stable(gamma_eff)
    omega_eff = params.omega_m + spring_shift(params, drive)
    half = gamma_eff / 2
    gm, nth = params.gamma_m, params.n_th
    lobes = [(omega_eff, gm * (nth + 1) + gamma_c), (-omega_eff, gm * nth + gamma_b)]
    span = span_linewidths * gamma_eff
    n = int(2 * span_linewidths * points_per_linewidth) + 1

    def primitive(c, weight, w):
        return weight / (TWO_PI * half) * np.arctan((w - c) / half)

    quad = 0.0
    inside = 0.0
    for c, _ in lobes:
        w = np.linspace(c - span, c + span, n)
        quad += float(np.trapezoid(displacement_psd(params, drive, w), w / TWO_PI))
        inside += sum(primitive(cc, a, c + span) - primitive(cc, a, c - span) for cc, a in lobes)
    total_analytic = sum(a / (2 * half) for _, a in lobes)
    tail = total_analytic - inside
    return quad + tail, quad, tail


def synthesize(spectrum: Spectrum, averages, rng) -> Spectrum:
    """Draw a measured-like spectrum around an analytic one.

    Each bin is Gaussian with mean equal to the analytic value and relative
    standard deviation 1/sqrt(averages), the large-average limit of an
    averaged periodogram. Draws below zero (possible only for very few
    averages) are clipped to zero. ``rng`` is a seed or ``numpy.random.Generator``.
    """
    if averages < 1:
        raise ValueError("averages must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    z = gen.standard_normal(spectrum.psd.shape)
    noisy = spectrum.psd * (1.0 + z / np.sqrt(averages))
    meta = dataclasses.replace(spectrum.meta, averages=int(averages))
    return Spectrum(spectrum.freqs, np.clip(noisy, 0.0, None), meta)


def apply_noise_floor(spectrum: Spectrum, model: NoiseFloorModel, reflected_power) -> Spectrum:
    """Raise every bin by ``slope * reflected_power`` (LO excess-noise beating)."""
    if reflected_power < 0:
        raise ValueError("reflected power must be >= 0")
    extra = dict(spectrum.meta.extra, reflected_power_w=float(reflected_power))
    meta = dataclasses.replace(spectrum.meta, extra=extra)
    return Spectrum(spectrum.freqs, spectrum.psd + model.slope * reflected_power, meta)


def fit_noise_floor(reflected_power, floor) -> NoiseFloorModel:
    """Straight-line fit of fitted spectral backgrounds against reflected power."""
    x = np.asarray(reflected_power, dtype=float)
    y = np.asarray(floor, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("need at least two distinct reflected powers")
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = x.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    slope = max(float(coef[1]), 0.0)
    return NoiseFloorModel(float(coef[0]), slope, float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])))


def normalize_to_shot_noise(raw: Spectrum, shot: Spectrum) -> Spectrum:
    """Divide a raw spectrum by a shot-noise reference taken on the same grid.

    This removes the frequency-dependent detector gain.
    """
    if raw.freqs.shape != shot.freqs.shape or not np.allclose(raw.freqs, shot.freqs, rtol=1e-12, atol=0):
        raise ValueError("raw and shot-noise spectra must share a frequency grid")
    if np.any(shot.psd <= 0):
        raise ValueError("shot-noise reference must be strictly positive")
    meta = dataclasses.replace(raw.meta, shot_noise_reference=False)
    return Spectrum(raw.freqs, raw.psd / shot.psd, meta)


def sideband_area(spectrum: Spectrum, f_lo, f_hi, background=1.0) -> float:
    """Trapezoid integral of ``psd - background`` over [f_lo, f_hi] Hz."""
    m = (spectrum.freqs >= f_lo) & (spectrum.freqs <= f_hi)
    return float(np.trapezoid(spectrum.psd[m] - background, spectrum.freqs[m]))


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_spectrum(path, spectrum: Spectrum):
    """CSV ``freq_hz,psd_sn`` plus a ``<stem>.meta.json`` sidecar."""
    path = Path(path)
    fileio.write_csv(path, {"freq_hz": spectrum.freqs, "psd_sn": spectrum.psd})
    fileio.write_json(_meta_path(path), spectrum.meta.to_dict())


def read_spectrum(path) -> Spectrum:
    path = Path(path)
    cols = fileio.read_csv(path)
    if list(cols) != ["freq_hz", "psd_sn"]:
        raise ValueError(f"{path}: expected header 'freq_hz,psd_sn'")
    meta_path = _meta_path(path)
    meta = SpectrumMeta.from_dict(fileio.read_json(meta_path)) if meta_path.exists() else SpectrumMeta()
    return Spectrum(cols["freq_hz"], cols["psd_sn"], meta)
