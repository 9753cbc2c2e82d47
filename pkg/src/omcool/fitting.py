"""Least-squares fits of sideband spectra and coherent cavity response traces.

Sideband model (angular detection frequency w)::

    S(w) = c + G A1 / (G^2/4 + (w - w1)^2) + G A2 / (G^2/4 + (w - w2)^2)

with one shared linewidth G. A1 and w1 always belong to the lower-frequency
peak, which in the heterodyne geometry is the cooling-tone sideband.

Coherent response model: weak-probe reflection of a one-port cavity with a
single red-detuned pump, including the optomechanically induced
transparency window,

    r(w) = 1 - kappa_ex / (kappa/2 - i(delta_c + w) + G^2 / (gamma_m/2 - i(w - omega_m)))

where w is the probe offset from the pump. This is the standard lineshape for
this measurement; dropping the G^2 term gives the bare cavity dip.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_widths
from scipy.stats import median_abs_deviation

from . import fileio
from .errors import AmbiguousDetuningSign, NoConvergence, OverlappingSidebands, PeakNotFound
from .lm import levenberg_marquardt
from .model import TWO_PI
from .spectra import Spectrum

DOUBLE_NAMES = ("background", "area1", "center1", "gamma_eff", "area2", "center2")
SINGLE_NAMES = DOUBLE_NAMES[:4]
_DIMENSIONLESS = {"background"}

# Stated systematic floor on the cooling-tone detuning, rad/s.
DETUNING_UNCERTAINTY = TWO_PI * 10e6

# Reweighting passes for weights="model"; the weights settle after about three.
MODEL_WEIGHT_PASSES = 3


@dataclass(frozen=True)
class LorentzianFitResult:
    """Fitted sideband parameters, angular units.

    ``covariance`` is over ``free_names`` only; parameters held fixed have
    zero uncertainty. ``area2``/``center2`` are None in single mode.
    """

    mode: str
    background: float
    area1: float
    center1: float
    gamma_eff: float
    area2: Optional[float]
    center2: Optional[float]
    covariance: np.ndarray
    free_names: tuple
    residual_norm: float
    n_iter: int = 0
    reason: str = ""
    n_points: int = 0

    def value(self, name):
        return getattr(self, name)

    def cov(self, names):
        """Covariance sub-matrix for ``names`` (zeros for fixed parameters)."""
        out = np.zeros((len(names), len(names)))
        idx = [self.free_names.index(n) if n in self.free_names else None for n in names]
        for i, a in enumerate(idx):
            for j, b in enumerate(idx):
                if a is not None and b is not None:
                    out[i, j] = self.covariance[a, b]
        return out

    def sigma(self, name) -> float:
        return float(np.sqrt(max(self.cov([name])[0, 0], 0.0)))

    def peak_height(self, which=1) -> float:
        """Lorentzian peak value above the background, 4 A / G."""
        area = self.area1 if which == 1 else self.area2
        return 4.0 * area / self.gamma_eff

    def snr(self, which=1) -> float:
        """Peak height relative to the fitted background level."""
        return self.peak_height(which) / self.background

    def snr_sigma(self, which=1) -> float:
        names = ["area1" if which == 1 else "area2", "gamma_eff", "background"]
        area, g, c = self.area1 if which == 1 else self.area2, self.gamma_eff, self.background
        s = 4 * area / (g * c)
        grad = np.array([s / area if area else 4 / (g * c), -s / g, -s / c])
        return float(np.sqrt(max(grad @ self.cov(names) @ grad, 0.0)))

    def model(self, freqs_hz):
        w = TWO_PI * np.asarray(freqs_hz, dtype=float)
        out = self.background + _term(w, self.gamma_eff, self.area1, self.center1)
        if self.mode == "double" and self.area2:
            out = out + _term(w, self.gamma_eff, self.area2, self.center2)
        return out

    def to_dict(self) -> dict:
        """JSON-ready record with dimensional values in Hz."""
        names = DOUBLE_NAMES if self.mode == "double" else SINGLE_NAMES
        params = {}
        for n in names:
            k = 1.0 if n in _DIMENSIONLESS else 1.0 / TWO_PI
            params[n] = {"value": self.value(n) * k, "sigma": self.sigma(n) * k,
                         "unit": "1" if n in _DIMENSIONLESS else "Hz",
                         "free": n in self.free_names}
        k = np.array([1.0 if n in _DIMENSIONLESS else 1.0 / TWO_PI for n in self.free_names])
        cov = self.covariance * np.outer(k, k)
        return {
            "kind": "lorentzian_fit",
            "mode": self.mode,
            "parameters": params,
            "covariance": {"names": list(self.free_names), "row_major": cov.ravel().tolist()},
            "diagnostics": {"residual_norm": self.residual_norm, "n_iter": self.n_iter,
                            "reason": self.reason, "n_points": self.n_points},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LorentzianFitResult":
        mode = d["mode"]
        p = d["parameters"]

        def val(n):
            if n not in p:
                return None
            return p[n]["value"] * (1.0 if n in _DIMENSIONLESS else TWO_PI)

        names = tuple(d["covariance"]["names"])
        k = np.array([1.0 if n in _DIMENSIONLESS else TWO_PI for n in names])
        cov = np.array(d["covariance"]["row_major"], dtype=float).reshape(len(names), len(names))
        diag = d.get("diagnostics", {})
        return cls(mode=mode, background=val("background"), area1=val("area1"),
                   center1=val("center1"), gamma_eff=val("gamma_eff"), area2=val("area2"),
                   center2=val("center2"), covariance=cov * np.outer(k, k), free_names=names,
                   residual_norm=diag.get("residual_norm", float("nan")),
                   n_iter=diag.get("n_iter", 0), reason=diag.get("reason", ""),
                   n_points=diag.get("n_points", 0))


def _term(w, g, a, c):
    return g * a / (g * g / 4 + (w - c) ** 2)


def _term_and_grad(u, w, a, uc):
    d = u - uc
    D = w * w / 4 + d * d
    val = w * a / D
    return val, w / D, 2 * w * a * d / D**2, a * (d * d - w * w / 4) / D**2


def _initial_guess(spectrum: Spectrum, mode: str) -> dict:
    f, y = spectrum.freqs, spectrum.psd
    base = float(np.median(y))
    mad = float(median_abs_deviation(y, scale="normal"))
    if not np.any(y > base + 5 * mad):
        raise PeakNotFound("no bin rises above median + 5 MAD")
    ys = y - base
    if y.size >= 50:
        ys = uniform_filter1d(ys, 5, mode="nearest")
    peaks, _ = find_peaks(ys, distance=6)
    if peaks.size == 0:
        raise PeakNotFound("no local maximum in the spectrum")
    peaks = peaks[np.argsort(ys[peaks])[::-1]]
    p1 = peaks[0]
    width_bins = max(float(peak_widths(ys, [p1], rel_height=0.5)[0][0]), 2.0)
    df = spectrum.df
    fwhm = width_bins * df
    guess = {"background": base, "gamma_eff": TWO_PI * fwhm,
             "center1": TWO_PI * f[p1], "area1": ys[p1] * TWO_PI * fwhm / 4}
    if mode == "single":
        return guess

    far = [p for p in peaks[1:] if abs(p - p1) > max(5, width_bins)]
    p2 = far[0] if far else None
    drive = spectrum.meta.drive
    if (p2 is None or ys[p2] <= 5 * mad) and drive is not None:
        lo = drive["delta_lo_hz"]
        expected = [lo + drive["delta_hz"], lo - drive["delta_hz"]]
        f2 = max(expected, key=lambda c: abs(c - f[p1]))
        if f[0] <= f2 <= f[-1]:
            p2 = int(np.argmin(np.abs(f - f2)))
    if p2 is None:
        raise PeakNotFound("double mode needs a second sideband")
    guess["center2"] = TWO_PI * f[p2]
    guess["area2"] = max(ys[p2], mad) * TWO_PI * fwhm / 4
    return guess


def fit_lorentzians(spectrum: Spectrum, mode="double", init=None, weights="uniform",
                    fixed=None, max_iter=200) -> LorentzianFitResult:
    """Fit one or two Lorentzian sidebands sharing a linewidth.

    ``init`` overrides any automatic initial values (angular units, keys as
    in ``DOUBLE_NAMES``). ``fixed`` holds parameters at given values; fixing
    an area at zero also freezes that peak's center. ``weights`` is
    ``"uniform"`` or ``"model"``; the latter refits with per-bin errors
    proportional to the fitted model, as for averaged periodograms.
    """
    if mode not in ("single", "double"):
        raise ValueError("mode must be 'single' or 'double'")
    if weights not in ("uniform", "model"):
        raise ValueError("weights must be 'uniform' or 'model'")
    names = DOUBLE_NAMES if mode == "double" else SINGLE_NAMES
    fixed = dict(fixed or {})
    unknown = (set(fixed) | set(init or {})) - set(names)
    if unknown:
        raise ValueError(f"unknown parameters {sorted(unknown)} for mode {mode!r}")

    init = dict(init or {})
    if mode == "double" and "center2" in init:
        # a given second center needs no automatic detection
        guess = _initial_guess(spectrum, "single")
        i2 = int(np.argmin(np.abs(spectrum.omega - init["center2"])))
        height = max(spectrum.psd[i2] - guess["background"], 0.0)
        guess["center2"] = init["center2"]
        guess["area2"] = height * guess["gamma_eff"] / 4
    else:
        guess = _initial_guess(spectrum, mode)
    guess.update(init)
    guess.update(fixed)
    for k in ("area1", "area2"):
        c = "center" + k[-1]
        if fixed.get(k) == 0.0 and c not in fixed and c in names:
            fixed[c] = guess[c]

    f = spectrum.freqs
    f_mid = 0.5 * (f[0] + f[-1])
    ref = TWO_PI * f_mid
    s = float(guess["gamma_eff"])
    u = (f - f_mid) * (TWO_PI / s)
    y = spectrum.psd

    # scaled parameter vector: c, a1, u1, w, a2, u2
    scale = np.array([1.0 if n == "background" else s for n in names])
    offset = np.array([ref if n.startswith("center") else 0.0 for n in names])
    p_full = (np.array([guess[n] for n in names], dtype=float) - offset) / scale
    free = np.array([n not in fixed for n in names])

    def full(p_free):
        p = p_full.copy()
        p[free] = p_free
        return p

    def model_and_jac(p):
        out = np.full_like(u, p[0])
        J = np.zeros((u.size, len(names)))
        J[:, 0] = 1.0
        v, da, du, dw = _term_and_grad(u, p[3], p[1], p[2])
        out += v
        J[:, 1], J[:, 2], J[:, 3] = da, du, dw
        if mode == "double":
            v, da, du, dw = _term_and_grad(u, p[3], p[4], p[5])
            out += v
            J[:, 4], J[:, 5] = da, du
            J[:, 3] += dw
        return out, J

    def solve(sigma, start):
        def fun(pf):
            return (model_and_jac(full(pf))[0] - y) / sigma

        def jac(pf):
            return model_and_jac(full(pf))[1][:, free] / sigma[:, None]

        return levenberg_marquardt(fun, jac, start, max_iter=max_iter)

    res = solve(np.ones_like(y), p_full[free])
    passes = MODEL_WEIGHT_PASSES if weights == "model" else 0
    for _ in range(passes):
        if not res.converged:
            break
        m = model_and_jac(full(res.x))[0]
        sigma = np.abs(m) / np.mean(np.abs(m))
        res = solve(sigma, res.x)
    if not res.converged:
        raise NoConvergence(f"Lorentzian fit did not converge in {max_iter} iterations")

    p = full(res.x)
    cov = res.covariance()
    free_names = [n for n, fr in zip(names, free) if fr]
    sc = scale[free]
    cov = cov * np.outer(sc, sc)
    phys = p * scale + offset

    # (G, A) -> (-G, -A) leaves the model unchanged
    if phys[3] < 0:
        sign = np.array([-1.0 if n.startswith(("area", "gamma")) else 1.0 for n in free_names])
        cov = cov * np.outer(sign, sign)
        for i, n in enumerate(names):
            if n.startswith(("area", "gamma")):
                phys[i] = -phys[i]

    vals = dict(zip(names, phys))
    if mode == "double" and vals["center1"] > vals["center2"]:
        swap = {"area1": "area2", "area2": "area1", "center1": "center2", "center2": "center1"}
        vals = {swap.get(k, k): v for k, v in vals.items()}
        old = list(free_names)
        free_names = [swap.get(n, n) for n in old]
        order = sorted(range(len(free_names)), key=lambda i: names.index(free_names[i]))
        free_names = [free_names[i] for i in order]
        cov = cov[np.ix_(order, order)]

    if (mode == "double" and "area2" not in fixed and "area1" not in fixed
            and abs(vals["center1"] - vals["center2"]) < vals["gamma_eff"]):
        raise OverlappingSidebands("fitted sideband centers are closer than one linewidth")

    return LorentzianFitResult(
        mode=mode, background=float(vals["background"]), area1=float(vals["area1"]),
        center1=float(vals["center1"]), gamma_eff=float(vals["gamma_eff"]),
        area2=float(vals["area2"]) if mode == "double" else None,
        center2=float(vals["center2"]) if mode == "double" else None,
        covariance=cov, free_names=tuple(free_names),
        residual_norm=float(np.sqrt(2 * res.cost)), n_iter=res.n_iter, reason=res.reason,
        n_points=int(y.size),
    )


# -- coherent response ------------------------------------------------------

# Bare-cavity rms residuals below this are round-off; no window is looked for.
RESIDUAL_FLOOR = 1e-9

OMIT_NAMES = ("kappa", "kappa_ex", "delta_c", "coupling", "omega_m", "gamma_m")


def omit_reflection(omega, kappa, kappa_ex, delta_c, coupling=0.0, omega_m=0.0, gamma_m=1.0):
    """Complex reflection coefficient seen by a weak probe at offset ``omega``."""
    w = np.asarray(omega, dtype=float)
    cav = kappa / 2 - 1j * (delta_c + w)
    if coupling:
        cav = cav + coupling**2 / (gamma_m / 2 - 1j * (w - omega_m))
    return 1.0 - kappa_ex / cav


@dataclass(frozen=True)
class CoherentResponseFit:
    kappa: float
    kappa_ex: float
    delta_c: float
    coupling: float
    omega_m: Optional[float]
    gamma_m: Optional[float]
    sigmas: dict
    covariance: np.ndarray = field(repr=False)
    free_names: tuple = ()
    residual_norm: float = 0.0
    omit_resolved: bool = False

    def to_dict(self) -> dict:
        def hz(v):
            return None if v is None else v / TWO_PI
        return {
            "kind": "coherent_response_fit",
            "parameters": {n: {"value": hz(getattr(self, n)), "sigma": hz(self.sigmas.get(n)),
                               "unit": "Hz"} for n in OMIT_NAMES},
            "covariance": {"names": list(self.free_names),
                           "row_major": (self.covariance / TWO_PI**2).ravel().tolist()},
            "diagnostics": {"residual_norm": self.residual_norm, "omit_resolved": self.omit_resolved},
        }


def _omit_residuals(omega, data, is_complex, names, scale):
    def model(p):
        kw = dict(zip(names, p * scale))
        return omit_reflection(omega, **kw)

    def fun(p):
        m = model(p)
        if is_complex:
            d = m - data
            return np.concatenate([d.real, d.imag])
        return np.abs(m) - data

    def jac(p, h=1e-7):
        f0 = fun(p)
        J = np.empty((f0.size, p.size))
        for i in range(p.size):
            step = h * max(abs(p[i]), 1.0)
            dp = p.copy()
            dp[i] += step
            J[:, i] = (fun(dp) - f0) / step
        return J

    return fun, jac


def _bare_guess(omega, data, is_complex):
    depth = np.abs(1 - data) ** 2 if is_complex else 1 - np.abs(data) ** 2
    i0 = int(np.argmax(depth))
    width = float(peak_widths(depth, [i0], rel_height=0.5)[0][0])
    dw = float(np.median(np.diff(omega)))
    kappa = max(width * dw, 2 * dw)
    peak = float(depth[i0])
    if is_complex:
        kappa_ex = np.sqrt(peak) * kappa / 2
    else:
        kappa_ex = kappa * (1 - np.sqrt(max(1 - min(peak, 1.0), 0.0))) / 2
    return {"kappa": kappa, "kappa_ex": max(kappa_ex, 1e-3 * kappa), "delta_c": -omega[i0]}


def _run(omega, data, is_complex, names, start, scale, max_iter):
    fun, jac = _omit_residuals(omega, data, is_complex, names, scale)
    res = levenberg_marquardt(fun, jac, np.array([start[n] for n in names]) / scale,
                              max_iter=max_iter)
    return res


def fit_coherent_response(omega, response, init=None, detuning_floor=DETUNING_UNCERTAINTY,
                          max_iter=200) -> CoherentResponseFit:
    """Fit kappa, kappa_ex and the cooling-tone detuning from a probe trace.

    ``omega`` is the signed probe offset from the pump (rad/s); ``response``
    is the complex reflection coefficient or its magnitude. ``init`` may give
    any of ``OMIT_NAMES``; ``omega_m``, ``gamma_m`` and ``coupling`` seed the
    transparency window. When no window is resolved the bare-cavity fit is
    returned with ``coupling = 0``. The reported detuning uncertainty never
    falls below ``detuning_floor``.

    Raises AmbiguousDetuningSign when a fit started from the mirrored
    detuning explains the trace equally well.
    """
    omega = np.asarray(omega, dtype=float)
    data = np.asarray(response)
    is_complex = np.iscomplexobj(data)
    if not is_complex:
        data = data.astype(float)
    order = np.argsort(omega)
    omega, data = omega[order], data[order]
    init = dict(init or {})

    guess = _bare_guess(omega, data, is_complex)
    guess.update({k: v for k, v in init.items() if k in ("kappa", "kappa_ex", "delta_c")})
    s = guess["kappa"]
    bare = ("kappa", "kappa_ex", "delta_c")
    bscale = np.full(3, s)
    res_b = _run(omega, data, is_complex, bare, guess, bscale, max_iter)
    if not res_b.converged:
        raise NoConvergence("bare cavity fit did not converge")
    fitted = dict(zip(bare, res_b.x * bscale))

    mirror = -fitted["delta_c"]
    if omega[0] <= -mirror <= omega[-1] and abs(fitted["delta_c"]) > fitted["kappa"]:
        res_m = _run(omega, data, is_complex, bare, dict(fitted, delta_c=mirror), bscale, max_iter)
        rel = abs(res_m.cost - res_b.cost) / max(res_b.cost, res_m.cost, 1e-300)
        dm = res_m.x[2] * s
        if rel < 1e-3 and abs(dm + fitted["delta_c"]) < fitted["kappa"]:
            raise AmbiguousDetuningSign(
                "trace is fit equally well by detunings of opposite sign")

    result = None
    rms_bare = np.sqrt(2 * res_b.cost / res_b.residual.size)
    if init.get("coupling", None) != 0.0 and rms_bare > RESIDUAL_FLOOR:
        start = dict(fitted)
        resid = np.abs(res_b.residual)
        if is_complex:
            resid = np.hypot(resid[: omega.size], resid[omega.size:])
        i_w = int(np.argmax(resid))
        start["omega_m"] = init.get("omega_m", omega[i_w])
        w_bins = float(peak_widths(resid, [i_w], rel_height=0.5)[0][0])
        dw = float(np.median(np.diff(omega)))
        g_eff = max(w_bins * dw, 2 * dw)
        start["gamma_m"] = init.get("gamma_m", g_eff / 4)
        start["coupling"] = init.get(
            "coupling", np.sqrt(max(g_eff - start["gamma_m"], dw) * fitted["kappa"] / 4))
        oscale = np.full(6, s)
        res_o = _run(omega, data, is_complex, OMIT_NAMES, start, oscale, max_iter)
        if res_o.converged and res_o.cost < 0.5 * res_b.cost:
            vals = dict(zip(OMIT_NAMES, res_o.x * oscale))
            cov = res_o.covariance() * s**2
            sig = dict(zip(OMIT_NAMES, np.sqrt(np.clip(np.diag(cov), 0, None))))
            if abs(vals["coupling"]) > 3 * sig["coupling"]:
                vals["coupling"] = abs(vals["coupling"])
                vals["gamma_m"] = abs(vals["gamma_m"])
                result = (vals, sig, cov, OMIT_NAMES, res_o, True)

    if result is None:
        cov = res_b.covariance() * s**2
        sig = dict(zip(bare, np.sqrt(np.clip(np.diag(cov), 0, None))))
        vals = dict(fitted, coupling=0.0, omega_m=None, gamma_m=None)
        result = (vals, sig, cov, bare, res_b, False)

    vals, sig, cov, names, res, resolved = result
    sig = {k: float(v) for k, v in sig.items()}
    sig["delta_c"] = max(sig["delta_c"], detuning_floor)
    return CoherentResponseFit(
        kappa=float(abs(vals["kappa"])), kappa_ex=float(vals["kappa_ex"]),
        delta_c=float(vals["delta_c"]), coupling=float(vals["coupling"]),
        omega_m=None if vals.get("omega_m") is None else float(vals["omega_m"]),
        gamma_m=None if vals.get("gamma_m") is None else float(vals["gamma_m"]),
        sigmas=sig, covariance=cov, free_names=tuple(names),
        residual_norm=float(np.sqrt(2 * res.cost)), omit_resolved=resolved,
    )


def write_trace(path, probe_offset_hz, response):
    """Coherent-response CSV: ``probe_offset_hz,re,im`` or ``probe_offset_hz,magnitude``."""
    r = np.asarray(response)
    if np.iscomplexobj(r):
        cols = {"probe_offset_hz": probe_offset_hz, "re": r.real, "im": r.imag}
    else:
        cols = {"probe_offset_hz": probe_offset_hz, "magnitude": r}
    fileio.write_csv(path, cols)


def read_trace(path):
    """Return ``(omega, response)`` with omega in rad/s."""
    cols = fileio.read_csv(path)
    names = list(cols)
    if names == ["probe_offset_hz", "re", "im"]:
        resp = cols["re"] + 1j * cols["im"]
    elif names == ["probe_offset_hz", "magnitude"]:
        resp = cols["magnitude"]
    else:
        raise ValueError(f"{path}: expected probe_offset_hz,re,im or probe_offset_hz,magnitude")
    return TWO_PI * cols["probe_offset_hz"], resp
