"""Closed-form model of a two-tone driven optomechanical system.

Everything in here works in angular units (rad/s). Build parameters from
ordinary frequencies with :meth:`SystemParams.from_hz` and
:meth:`DriveConfig.from_hz`; the conversion happens once, there.

Frame conventions
-----------------
The two tones sit at ``mean ± (omega_m + delta)`` and their mean is detuned
by ``delta_mean`` from the cavity resonance. The cooling-tone detuning is
``delta_c = delta_mean - omega_m - delta`` (negative when red detuned).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import constants

from .errors import InstabilityError

TWO_PI = 2.0 * np.pi
HBAR = constants.hbar
K_B = constants.k

# Weak-coupling flag threshold on |gamma_opt| / kappa.
WEAK_COUPLING_LIMIT = 0.01

OCCUPANCY_CONVENTIONS = ("rayleigh-jeans", "bose")


def thermal_occupancy(temperature, omega_m, convention="rayleigh-jeans"):
    """Mean bath phonon number at ``temperature`` (K) for mode ``omega_m`` (rad/s).

    ``"rayleigh-jeans"`` gives k_B T / (hbar omega_m); ``"bose"`` gives the
    exact 1 / (exp(hbar omega_m / k_B T) - 1).
    """
    if convention not in OCCUPANCY_CONVENTIONS:
        raise ValueError(f"unknown occupancy convention {convention!r}")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        return 0.0
    x = HBAR * omega_m / (K_B * temperature)
    if convention == "rayleigh-jeans":
        return 1.0 / x
    return 1.0 / np.expm1(x)


@dataclass(frozen=True)
class SystemParams:
    """Static cavity, mechanical and coupling parameters (angular units).

    ``kappa_0`` and ``gamma_m`` are derived so the decompositions
    kappa = kappa_ex + kappa_0 and gamma_m = gamma_int + gamma_gas hold
    by construction. ``n_th`` is computed from ``temperature`` unless given.
    """

    kappa: float
    kappa_ex: float
    omega_m: float
    gamma_int: float
    gamma_gas: float
    g0: float
    temperature: float = 0.0
    n_th: Optional[float] = None
    occupancy: str = "rayleigh-jeans"
    alpha_opt: float = 1.0
    beta_mech: float = 1.0
    x_zpf: float = 1.0

    def __post_init__(self):
        for name in ("kappa", "kappa_ex", "gamma_int", "gamma_gas", "g0", "temperature"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.omega_m <= 0:
            raise ValueError("omega_m must be > 0")
        if self.kappa_ex > self.kappa:
            raise ValueError("kappa_ex cannot exceed kappa")
        if self.n_th is None:
            n_th = thermal_occupancy(self.temperature, self.omega_m, self.occupancy)
            object.__setattr__(self, "n_th", float(n_th))
        elif self.n_th < 0:
            raise ValueError("n_th must be >= 0")

    @property
    def kappa_0(self) -> float:
        return self.kappa - self.kappa_ex

    @property
    def gamma_m(self) -> float:
        return self.gamma_int + self.gamma_gas

    @property
    def cooperativity0(self) -> float:
        """Vacuum cooperativity 4 g0^2 / (kappa gamma_m)."""
        return 4.0 * self.g0**2 / (self.kappa * self.gamma_m)

    @classmethod
    def from_hz(cls, kappa_hz, kappa_ex_hz, omega_m_hz, g0_hz, gamma_int_hz,
                gamma_gas_hz=0.0, temperature=0.0, **kwargs) -> "SystemParams":
        return cls(
            kappa=TWO_PI * kappa_hz,
            kappa_ex=TWO_PI * kappa_ex_hz,
            omega_m=TWO_PI * omega_m_hz,
            gamma_int=TWO_PI * gamma_int_hz,
            gamma_gas=TWO_PI * gamma_gas_hz,
            g0=TWO_PI * g0_hz,
            temperature=temperature,
            **kwargs,
        )

    @classmethod
    def reference_device(cls, temperature=2.0, **kwargs) -> "SystemParams":
        """Silicon optomechanical crystal at 2 K in 40 mbar of 3He buffer gas."""
        return cls.from_hz(
            kappa_hz=255e6, kappa_ex_hz=71e6, omega_m_hz=5.17e9, g0_hz=1.08e6,
            gamma_int_hz=65e3, gamma_gas_hz=50e3, temperature=temperature, **kwargs,
        )

    def with_gamma_m(self, gamma_m: float) -> "SystemParams":
        """Copy with total damping ``gamma_m``, attributing the change to gas damping."""
        if gamma_m <= 0:
            raise ValueError("gamma_m must be > 0")
        if gamma_m >= self.gamma_int:
            return dataclasses.replace(self, gamma_gas=gamma_m - self.gamma_int)
        return dataclasses.replace(self, gamma_int=gamma_m, gamma_gas=0.0)

    def to_hz(self) -> dict:
        return {
            "kappa_hz": self.kappa / TWO_PI,
            "kappa_ex_hz": self.kappa_ex / TWO_PI,
            "omega_m_hz": self.omega_m / TWO_PI,
            "gamma_int_hz": self.gamma_int / TWO_PI,
            "gamma_gas_hz": self.gamma_gas / TWO_PI,
            "g0_hz": self.g0 / TWO_PI,
            "temperature_k": self.temperature,
            "n_th": self.n_th,
            "occupancy": self.occupancy,
            "alpha_opt": self.alpha_opt,
            "beta_mech": self.beta_mech,
            "x_zpf_m": self.x_zpf,
        }


@dataclass(frozen=True)
class DriveConfig:
    """Two-tone pump and local-oscillator configuration (angular units)."""

    n_c: float
    n_b: float = 0.0
    delta_mean: float = 0.0
    delta: float = 0.0
    delta_lo: float = 0.0

    def __post_init__(self):
        if self.n_c < 0 or self.n_b < 0:
            raise ValueError("intracavity photon numbers must be >= 0")

    @classmethod
    def from_cooling_detuning(cls, delta_c, omega_m, n_c, n_b=0.0, delta=0.0,
                              delta_lo=0.0) -> "DriveConfig":
        """Build from the cooling-tone detuning ``delta_c`` (rad/s)."""
        return cls(n_c=n_c, n_b=n_b, delta_mean=delta_c + omega_m + delta,
                   delta=delta, delta_lo=delta_lo)

    @classmethod
    def from_hz(cls, n_c, n_b=0.0, delta_mean_hz=None, delta_hz=0.0, delta_lo_hz=0.0,
                delta_c_hz=None, omega_m_hz=None) -> "DriveConfig":
        """Build from ordinary frequencies; give either ``delta_mean_hz`` or
        ``delta_c_hz`` together with ``omega_m_hz``."""
        if (delta_mean_hz is None) == (delta_c_hz is None):
            raise ValueError("give exactly one of delta_mean_hz and delta_c_hz")
        if delta_c_hz is not None:
            if omega_m_hz is None:
                raise ValueError("delta_c_hz needs omega_m_hz")
            return cls.from_cooling_detuning(
                TWO_PI * delta_c_hz, TWO_PI * omega_m_hz, n_c, n_b,
                TWO_PI * delta_hz, TWO_PI * delta_lo_hz)
        return cls(n_c=n_c, n_b=n_b, delta_mean=TWO_PI * delta_mean_hz,
                   delta=TWO_PI * delta_hz, delta_lo=TWO_PI * delta_lo_hz)

    def cooling_detuning(self, omega_m: float) -> float:
        return self.delta_mean - omega_m - self.delta

    def blue_detuning(self, omega_m: float) -> float:
        return self.delta_mean + omega_m + self.delta

    def with_cooling_detuning(self, delta_c: float, omega_m: float) -> "DriveConfig":
        return dataclasses.replace(self, delta_mean=delta_c + omega_m + self.delta)

    def check_heterodyne_ordering(self):
        """Raise unless 0 < -delta < delta_lo, needed to separate the sidebands."""
        if not (0.0 < -self.delta < self.delta_lo):
            raise ValueError(
                "heterodyne geometry requires 0 < -delta < delta_lo "
                f"(delta={self.delta:.6g}, delta_lo={self.delta_lo:.6g} rad/s)")

    def to_hz(self) -> dict:
        return {
            "n_c": self.n_c,
            "n_b": self.n_b,
            "delta_mean_hz": self.delta_mean / TWO_PI,
            "delta_hz": self.delta / TWO_PI,
            "delta_lo_hz": self.delta_lo / TWO_PI,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriveConfig":
        return cls.from_hz(n_c=d["n_c"], n_b=d.get("n_b", 0.0),
                           delta_mean_hz=d["delta_mean_hz"], delta_hz=d.get("delta_hz", 0.0),
                           delta_lo_hz=d.get("delta_lo_hz", 0.0))


@dataclass(frozen=True)
class HeatingModel:
    """Absorption heating: bath grows by alpha1 n_c + alpha2 n_c^2 phonons."""

    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha1_sigma: float = 0.0
    alpha2_sigma: float = 0.0
    covariance: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    unconstrained: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("heating coefficients must be >= 0")

    def excess(self, n_c):
        return self.alpha1 * n_c + self.alpha2 * np.square(n_c)

    def to_dict(self) -> dict:
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "alpha1_sigma": self.alpha1_sigma,
            "alpha2_sigma": self.alpha2_sigma,
            "unconstrained": list(self.unconstrained) if self.unconstrained else None,
        }


@dataclass(frozen=True)
class ComplexResponse:
    """Complex susceptibility values with an explicit finiteness mask.

    Entries where the response diverges (a pole on the real axis, e.g.
    gamma_m = 0 on resonance) are NaN in ``value`` and False in ``finite``.
    """

    value: np.ndarray
    finite: np.ndarray
    components: dict = field(default_factory=dict)

    @property
    def all_finite(self) -> bool:
        return bool(np.all(self.finite))

    def __complex__(self):
        if not self.all_finite:
            raise ValueError("response is non-finite at this frequency")
        return complex(self.value)


def _invert(den) -> ComplexResponse:
    den = np.asarray(den, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = 1.0 / den
    finite = np.isfinite(val) & (den != 0)
    val = np.where(finite, val, complex(np.nan, np.nan))
    return ComplexResponse(val, finite)


def chi_c(params: SystemParams, drive: DriveConfig, omega) -> ComplexResponse:
    """Optical susceptibility 1 / (kappa/2 - i(omega + delta_mean))."""
    return _invert(params.kappa / 2 - 1j * (np.asarray(omega) + drive.delta_mean))


def chi_m(params: SystemParams, drive: DriveConfig, omega) -> ComplexResponse:
    """Mechanical susceptibility 1 / (gamma_m/2 - i(omega + delta))."""
    return _invert(params.gamma_m / 2 - 1j * (np.asarray(omega) + drive.delta))


def _lorentz(kappa, detuning):
    return kappa / (kappa**2 / 4 + np.square(detuning))


def scattering_rates(params: SystemParams, drive: DriveConfig):
    """Resonant Stokes rate of the blue probe and anti-Stokes rate of the
    cooling tone, ``(gamma_b, gamma_c)``."""
    g2 = params.g0**2
    gamma_b = drive.n_b * g2 * _lorentz(params.kappa, drive.delta_mean + drive.delta)
    gamma_c = drive.n_c * g2 * _lorentz(params.kappa, drive.delta_mean - drive.delta)
    return gamma_b, gamma_c


def raman_rates(params: SystemParams, drive: DriveConfig):
    """Off-resonant anti-Stokes rate of the probe and Stokes rate of the
    cooling tone, ``(gamma_as_b, gamma_s_c)``."""
    g2 = params.g0**2
    w2 = 2 * params.omega_m
    gamma_as_b = drive.n_b * g2 * _lorentz(params.kappa, drive.delta_mean + drive.delta + w2)
    gamma_s_c = drive.n_c * g2 * _lorentz(params.kappa, drive.delta_mean - drive.delta - w2)
    return gamma_as_b, gamma_s_c


def spring_shift(params: SystemParams, drive: DriveConfig):
    """Optical spring shift of the mechanical frequency (weak coupling)."""
    k2 = params.kappa**2 / 4
    db = drive.delta_mean + drive.delta
    dc = drive.delta_mean - drive.delta
    return params.g0**2 * (drive.n_b * db / (k2 + db**2) + drive.n_c * dc / (k2 + dc**2))


def effective_linewidth(params: SystemParams, drive: DriveConfig):
    gamma_b, gamma_c = scattering_rates(params, drive)
    return params.gamma_m + (gamma_c - gamma_b)


def _require_stable(gamma_eff):
    if np.any(np.asarray(gamma_eff) <= 0):
        raise InstabilityError(
            "effective mechanical damping is not positive; the drive does not cool")


def final_occupancy(params: SystemParams, drive: DriveConfig):
    """Mean phonon number (gamma_m n_th + gamma_b) / gamma_eff."""
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + (gamma_c - gamma_b)
    _require_stable(gamma_eff)
    return (params.gamma_m * params.n_th + gamma_b) / gamma_eff


def occupancy_with_heating(params: SystemParams, drive: DriveConfig, heating: HeatingModel):
    """Final occupancy with the bath raised by absorption heating."""
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_eff = params.gamma_m + (gamma_c - gamma_b)
    _require_stable(gamma_eff)
    bath = params.n_th + heating.alpha1 * drive.n_c + heating.alpha2 * drive.n_c**2
    return (params.gamma_m * bath + gamma_b) / gamma_eff


def raman_damping(params: SystemParams, drive: DriveConfig):
    """Net damping from all four Raman processes (no resolved-sideband cut)."""
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_as_b, gamma_s_c = raman_rates(params, drive)
    return (gamma_as_b + gamma_c) - (gamma_b + gamma_s_c)


def min_occupancy(params: SystemParams, drive: DriveConfig):
    """Backaction-limited occupancy without intrinsic damping.

    Uses the full Raman net damping in the denominator so that
    (n+1)/n = (gamma_as_b + gamma_c) / (gamma_b + gamma_s_c) holds exactly.
    """
    gamma_b, _ = scattering_rates(params, drive)
    _, gamma_s_c = raman_rates(params, drive)
    gamma_opt = raman_damping(params, drive)
    if np.any(np.asarray(gamma_opt) <= 0):
        raise InstabilityError("net optomechanical damping is not positive")
    return (gamma_s_c + gamma_b) / gamma_opt


def dressed_zpf(params: SystemParams, drive: DriveConfig):
    """Zero-point quanta of the optically dressed mode."""
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_opt = gamma_c - gamma_b
    gamma_eff = params.gamma_m + gamma_opt
    _require_stable(gamma_eff)
    return (params.alpha_opt * gamma_opt + params.beta_mech * params.gamma_m) / gamma_eff


@dataclass(frozen=True)
class DressedState:
    gamma_b: float
    gamma_c: float
    gamma_opt: float
    gamma_eff: float
    spring_shift: float
    omega_eff: float
    n_f: float
    n_min: float
    beta_dressed: float
    gamma_as_b: float
    gamma_s_c: float
    weak_coupling: bool

    def to_hz(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name.startswith(("gamma", "spring", "omega")):
                out[f.name + "_hz"] = v / TWO_PI
            else:
                out[f.name] = v
        return out


def dressed_state(params: SystemParams, drive: DriveConfig,
                  heating: Optional[HeatingModel] = None) -> DressedState:
    """All derived dynamical quantities for one drive configuration.

    ``n_min`` is NaN when the net Raman damping is not positive. The
    ``weak_coupling`` flag is False when |gamma_opt| / kappa exceeds 1 %,
    where the Lorentzian and spring-shift forms lose accuracy.
    """
    gamma_b, gamma_c = scattering_rates(params, drive)
    gamma_as_b, gamma_s_c = raman_rates(params, drive)
    gamma_opt = gamma_c - gamma_b
    gamma_eff = params.gamma_m + gamma_opt
    _require_stable(gamma_eff)
    shift = spring_shift(params, drive)
    if heating is None:
        n_f = final_occupancy(params, drive)
    else:
        n_f = occupancy_with_heating(params, drive, heating)
    try:
        n_min = min_occupancy(params, drive)
    except InstabilityError:
        n_min = float("nan")
    return DressedState(
        gamma_b=float(gamma_b), gamma_c=float(gamma_c), gamma_opt=float(gamma_opt),
        gamma_eff=float(gamma_eff), spring_shift=float(shift),
        omega_eff=float(params.omega_m + shift), n_f=float(n_f), n_min=float(n_min),
        beta_dressed=float(dressed_zpf(params, drive)),
        gamma_as_b=float(gamma_as_b), gamma_s_c=float(gamma_s_c),
        weak_coupling=bool(abs(gamma_opt) / params.kappa <= WEAK_COUPLING_LIMIT),
    )


def exact_effective_susceptibility(params: SystemParams, drive: DriveConfig, omega) -> ComplexResponse:
    """Radiation-pressure-modified mechanical susceptibility from the full
    linearized two-tone solution (no Lorentzian approximation).

    The returned ``components`` hold M (shape (2, 2, ...)), N, Pi, Sigma and
    G2 evaluated on ``omega``.
    """
    w = np.asarray(omega, dtype=float)
    gc = np.sqrt(drive.n_c) * params.g0
    gb = np.sqrt(drive.n_b) * params.g0
    k2 = params.kappa / 2
    m2 = params.gamma_m / 2

    def cav(x):
        return 1.0 / (k2 - 1j * (x + drive.delta_mean))

    def sigma(x):
        return -1j * (gc**2 * cav(x) - gb**2 * np.conj(cav(-x)))

    chic = cav(w)
    chic_t = np.conj(cav(-w))
    inv_m = m2 - 1j * (w + drive.delta)
    inv_m_t = np.conj(m2 - 1j * (-w + drive.delta))
    sig = sigma(w)
    sig_t = np.conj(sigma(-w))
    pi = -1j * gc * gb * (chic - chic_t)
    g2 = gc**2 - gb**2

    n = inv_m * inv_m_t + 1j * inv_m_t * sig - 1j * inv_m * sig_t + g2**2 * chic * chic_t
    # (b, b^dagger) = (i / N) M (a_in, a_in^dagger); the lower row carries the
    # minus sign from the conjugated coupling term
    m = np.array([
        [chic * gc * (inv_m_t + g2 * chic_t), chic_t * gb * (inv_m_t + g2 * chic)],
        [-chic * gb * (inv_m + g2 * chic_t), -chic_t * gc * (inv_m + g2 * chic)],
    ])
    num = inv_m_t - 1j * sig_t
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = num / n
    finite = np.isfinite(val) & (n != 0)
    val = np.where(finite, val, complex(np.nan, np.nan))
    return ComplexResponse(val, finite, {"M": m, "N": n, "Pi": pi, "Sigma": sig, "G2": g2})


def intracavity_photons(power_w, detuning, params: SystemParams, coupling_efficiency=1.0,
                        wavelength=1540e-9):
    """Intracavity photon number for ``power_w`` delivered at the fiber with
    single-pass ``coupling_efficiency`` and laser detuning ``detuning`` (rad/s)."""
    if not 0 < coupling_efficiency <= 1:
        raise ValueError("coupling_efficiency must be in (0, 1]")
    omega_l = TWO_PI * constants.c / wavelength
    p = coupling_efficiency * np.asarray(power_w)
    return params.kappa_ex * p / (HBAR * omega_l * (params.kappa**2 / 4 + np.square(detuning)))
