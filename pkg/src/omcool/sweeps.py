"""Power and detuning sweeps: theory tables, global regressions, and the
end-to-end pipeline from spectrum files to a run ledger.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fileio
from .errors import ComputationError, Degenerate
from .fitting import (DETUNING_UNCERTAINTY, LorentzianFitResult, fit_coherent_response,
                      fit_lorentzians, read_trace)
from .model import (TWO_PI, DriveConfig, HeatingModel, SystemParams, dressed_state,
                    intracavity_photons, occupancy_with_heating, scattering_rates)
from .spectra import (NoiseFloorModel, fit_noise_floor, frequency_grid, heterodyne_psd,
                      read_spectrum, synthesize, write_spectrum)
from .thermometry import (Anchor, Calibration, OccupancyEstimate, occupancy_from_asymmetry,
                          occupancy_from_calibration, occupancy_noise_anchored, pool_calibration)

__all__ = [
    "HeatingModel", "SweepRun", "SnrModel", "snr_model", "theory_curves", "power_grid",
    "detuning_grid", "fit_heating", "fit_heating_arrays", "fit_snr", "fit_snr_arrays",
    "run_sweep", "write_sweep_outputs", "synthesize_sweep",
]

# Column-normalized condition number beyond which alpha1 and alpha2 are not separable.
CONDITION_LIMIT = 1e8
MIN_HEATING_RUNS = 4
MIN_NC_SPAN = 3.0


@dataclass
class SweepRun:
    run_id: str
    kind: str
    drive: Optional[DriveConfig] = None
    fit: Optional[LorentzianFitResult] = None
    occupancy: Optional[OccupancyEstimate] = None
    anchored: Optional[OccupancyEstimate] = None
    calibration: Optional[Calibration] = None
    input_power_w: Optional[float] = None
    reflected_power_w: Optional[float] = None
    session: Optional[str] = None
    coherent: Optional[dict] = None
    error: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def snr(self) -> Optional[float]:
        return None if self.fit is None else self.fit.snr(1)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "session": self.session,
            "input_power_w": self.input_power_w,
            "reflected_power_w": self.reflected_power_w,
            "drive": None if self.drive is None else self.drive.to_hz(),
            "coherent_response": self.coherent,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "snr": self.snr,
            "snr_sigma": None if self.fit is None else self.fit.snr_sigma(1),
            "occupancy": None if self.occupancy is None else self.occupancy.to_dict(),
            "anchored": None if self.anchored is None else self.anchored.to_dict(),
            "calibration": None if self.calibration is None else self.calibration.to_dict(),
            "error": self.error,
        }


@dataclass(frozen=True)
class SnrModel:
    eta: float
    heating: HeatingModel = field(default_factory=HeatingModel)
    c0: float = 1.0
    eta_sigma: float = 0.0
    heating_fitted: bool = False

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.c0 > 0:
            raise ValueError("c0 must be > 0")

    def to_dict(self) -> dict:
        return {"eta": self.eta, "eta_sigma": self.eta_sigma, "c0": self.c0,
                "heating": self.heating.to_dict(), "heating_fitted": self.heating_fitted}


def _snr_basis(params: SystemParams, n_c, delta_c):
    """x = n_c C0 L(delta_c) and the single-tone SNR shape 4x/(1+x)^2."""
    hw2 = params.kappa**2 / 4
    x = np.asarray(n_c) * params.cooperativity0 * hw2 / (hw2 + (np.asarray(delta_c) + params.omega_m) ** 2)
    return x, 4 * x / (1 + x) ** 2


def snr_model(params: SystemParams, n_c, delta_c, eta, heating: Optional[HeatingModel] = None):
    """Cooling-sideband peak height over the floor for a single cooling tone.

    Equals 4 eta n_bath x / (1 + x)^2 with n_bath the heated bath and
    x = gamma_c / gamma_m; at the red sideband and x >> 1 it tends to 4 eta n_f.
    """
    heating = heating or HeatingModel()
    _, shape = _snr_basis(params, n_c, delta_c)
    bath = params.n_th + heating.excess(np.asarray(n_c))
    return eta * bath * shape


def power_grid(n_c: Sequence[float], delta_c, omega_m, n_b=0.0, delta=0.0, delta_lo=0.0):
    return [DriveConfig.from_cooling_detuning(delta_c, omega_m, float(n), n_b, delta, delta_lo)
            for n in n_c]


def detuning_grid(delta_c: Sequence[float], params: SystemParams, n_c=None, power_w=None,
                  coupling_efficiency=1.0, delta=0.0, delta_lo=0.0, wavelength=1540e-9):
    """Drives along a cooling-tone detuning axis at fixed ``n_c`` or fixed
    input power (photon number then follows the cavity Lorentzian)."""
    if (n_c is None) == (power_w is None):
        raise ValueError("give exactly one of n_c and power_w")
    out = []
    for dc in delta_c:
        n = n_c if n_c is not None else float(intracavity_photons(
            power_w, dc, params, coupling_efficiency, wavelength))
        out.append(DriveConfig.from_cooling_detuning(float(dc), params.omega_m, n, 0.0,
                                                     delta, delta_lo))
    return out


def theory_curves(params: SystemParams, drives: Sequence[DriveConfig],
                  heating: Optional[HeatingModel] = None) -> dict:
    """Columnar table (Hz units) of core-model quantities along ``drives``."""
    cols = {k: [] for k in ("n_c", "n_b", "delta_c_hz", "gamma_b_hz", "gamma_c_hz",
                            "gamma_eff_hz", "spring_hz", "n_f", "n_min", "n_f_heated")}
    for d in drives:
        st = dressed_state(params, d)
        cols["n_c"].append(d.n_c)
        cols["n_b"].append(d.n_b)
        cols["delta_c_hz"].append(d.cooling_detuning(params.omega_m) / TWO_PI)
        cols["gamma_b_hz"].append(st.gamma_b / TWO_PI)
        cols["gamma_c_hz"].append(st.gamma_c / TWO_PI)
        cols["gamma_eff_hz"].append(st.gamma_eff / TWO_PI)
        cols["spring_hz"].append(st.spring_shift / TWO_PI)
        cols["n_f"].append(st.n_f)
        cols["n_min"].append(st.n_min)
        cols["n_f_heated"].append(
            st.n_f if heating is None else occupancy_with_heating(params, d, heating))
    return {k: np.array(v, dtype=float) for k, v in cols.items()}


def _check_design(X, n_c):
    if n_c.size < MIN_HEATING_RUNS:
        raise Degenerate(f"need at least {MIN_HEATING_RUNS} runs, got {n_c.size}")
    if np.min(n_c) <= 0 or np.max(n_c) / np.min(n_c) < MIN_NC_SPAN:
        raise Degenerate(f"n_c must span a factor of at least {MIN_NC_SPAN:g}")
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise Degenerate("design matrix has an empty column")
    cond = np.linalg.cond(X / norms)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise Degenerate(f"condition number {cond:.3g} exceeds {CONDITION_LIMIT:.0e}")


def _nonneg_lstsq(X, y):
    """Least squares with coefficients >= 0 by clipping negatives and refitting
    the rest. Returns (coef, cov, unconstrained coef, unconstrained cov)."""
    XtX_inv = np.linalg.inv(X.T @ X)
    coef = XtX_inv @ X.T @ y
    free = np.ones(X.shape[1], dtype=bool)
    out = coef.copy()
    cov = XtX_inv.copy()
    while np.any(out[free] < 0):
        free &= out >= 0
        out = np.zeros_like(coef)
        cov = np.zeros_like(XtX_inv)
        if free.any():
            Xf = X[:, free]
            inv = np.linalg.inv(Xf.T @ Xf)
            out[free] = inv @ Xf.T @ y
            cov[np.ix_(free, free)] = inv
    return out, cov, coef, XtX_inv


def fit_heating_arrays(n_c, n_f, n_f_sigma, gamma_eff, gamma_b, gamma_m, n_th,
                       absolute_sigma=True) -> HeatingModel:
    """Weighted fit of the excess bath (n_f gamma_eff - gamma_b)/gamma_m - n_th
    to alpha1 n_c + alpha2 n_c^2 with alpha >= 0.

    Clipped coefficients keep their unconstrained sigma so a zero result can
    still be judged against its uncertainty. With ``absolute_sigma`` False
    the covariance is scaled by the reduced chi-square.
    """
    n_c = np.asarray(n_c, dtype=float)
    gamma_eff = np.broadcast_to(np.asarray(gamma_eff, dtype=float), n_c.shape)
    gamma_b = np.broadcast_to(np.asarray(gamma_b, dtype=float), n_c.shape)
    excess = (np.asarray(n_f) * gamma_eff - gamma_b) / gamma_m - n_th
    sig = np.asarray(n_f_sigma, dtype=float) * gamma_eff / gamma_m
    if np.any(sig <= 0):
        raise ValueError("occupancy uncertainties must be > 0")
    X = np.column_stack([n_c, n_c**2]) / sig[:, None]
    y = excess / sig
    _check_design(X, n_c)
    coef, cov, raw, raw_cov = _nonneg_lstsq(X, y)
    if not absolute_sigma:
        dof = max(n_c.size - 2, 1)
        chi2 = float(np.sum((y - X @ raw) ** 2)) / dof
        cov, raw_cov = cov * chi2, raw_cov * chi2
    raw_sig = np.sqrt(np.diag(raw_cov))
    sig_out = np.where(np.diag(cov) > 0, np.sqrt(np.clip(np.diag(cov), 0, None)), raw_sig)
    return HeatingModel(alpha1=float(coef[0]), alpha2=float(coef[1]),
                        alpha1_sigma=float(sig_out[0]), alpha2_sigma=float(sig_out[1]),
                        covariance=cov, unconstrained=(float(raw[0]), float(raw[1]),
                                                       float(raw_sig[0]), float(raw_sig[1])))


def _run_rates(params, runs):
    gb, gc = zip(*(scattering_rates(params, r.drive) for r in runs))
    gb, gc = np.array(gb), np.array(gc)
    return gb, gc, params.gamma_m + gc - gb


def fit_heating(runs: Sequence[SweepRun], params: SystemParams, estimate="occupancy") -> HeatingModel:
    """Heating model from single-tone runs carrying occupancy estimates.

    ``estimate`` picks the ``occupancy`` (calibrated) or ``anchored`` field.
    """
    use = [r for r in runs if r.ok and r.kind == "single-tone" and getattr(r, estimate) is not None]
    if not use:
        raise Degenerate("no single-tone runs with occupancy estimates")
    gb, _, geff = _run_rates(params, use)
    ests = [getattr(r, estimate) for r in use]
    return fit_heating_arrays(
        [r.drive.n_c for r in use], [e.n_f for e in ests],
        [0.5 * (e.sigma_lo + e.sigma_hi) for e in ests], geff, gb, params.gamma_m, params.n_th)


def fit_snr_arrays(params: SystemParams, n_c, delta_c, snr, snr_sigma=None,
                   heating: Optional[HeatingModel] = None) -> SnrModel:
    """Least-squares detection efficiency from single-tone peak SNRs.

    With ``heating`` fixed the model is linear in eta. Without it, eta,
    eta alpha1 and eta alpha2 are fitted jointly (non-negative).
    """
    n_c = np.asarray(n_c, dtype=float)
    snr = np.asarray(snr, dtype=float)
    if not np.any(snr != 0):
        raise Degenerate("all SNR values are zero; detection efficiency is not identifiable")
    sig = np.ones_like(snr) if snr_sigma is None else np.asarray(snr_sigma, dtype=float)
    if np.any(sig <= 0):
        raise ValueError("SNR uncertainties must be > 0")
    _, shape = _snr_basis(params, n_c, delta_c)
    if heating is not None:
        f = shape * (params.n_th + heating.excess(n_c)) / sig
        y = snr / sig
        fw = float(f @ f)
        if fw == 0:
            raise Degenerate("SNR model vanishes on every run")
        eta = float(f @ y) / fw
        var = 1.0 / fw
        if snr_sigma is None:
            var *= float(np.sum((y - eta * f) ** 2)) / max(n_c.size - 1, 1)
        if not 0 < eta <= 1:
            raise Degenerate(f"fitted eta = {eta:.4g} lies outside (0, 1]")
        return SnrModel(eta=eta, heating=heating, c0=params.cooperativity0,
                        eta_sigma=float(np.sqrt(var)))

    X = np.column_stack([shape * params.n_th, shape * n_c, shape * n_c**2]) / sig[:, None]
    y = snr / sig
    _check_design(X[:, 1:], n_c)
    norms = np.linalg.norm(X, axis=0)
    if np.linalg.cond(X / norms) > CONDITION_LIMIT:
        raise Degenerate("SNR design matrix is ill-conditioned")
    coef, cov, _, _ = _nonneg_lstsq(X, y)
    if snr_sigma is None:
        cov = cov * float(np.sum((y - X @ coef) ** 2)) / max(n_c.size - 3, 1)
    eta = float(coef[0])
    if not 0 < eta <= 1:
        raise Degenerate(f"fitted eta = {eta:.4g} lies outside (0, 1]")
    heat = HeatingModel(alpha1=float(coef[1] / eta), alpha2=float(coef[2] / eta),
                        alpha1_sigma=float(np.sqrt(cov[1, 1]) / eta),
                        alpha2_sigma=float(np.sqrt(cov[2, 2]) / eta))
    return SnrModel(eta=eta, heating=heat, c0=params.cooperativity0,
                    eta_sigma=float(np.sqrt(cov[0, 0])), heating_fitted=True)


def fit_snr(runs: Sequence[SweepRun], params: SystemParams,
            heating: Optional[HeatingModel] = None) -> SnrModel:
    use = [r for r in runs if r.ok and r.kind == "single-tone" and r.fit is not None]
    if not use:
        raise Degenerate("no single-tone runs with fitted spectra")
    return fit_snr_arrays(
        params, [r.drive.n_c for r in use],
        [r.drive.cooling_detuning(params.omega_m) for r in use],
        [r.fit.snr(1) for r in use], [r.fit.snr_sigma(1) for r in use], heating)


# -- pipeline ---------------------------------------------------------------

def _drive_from_config(rc: dict, params: SystemParams) -> DriveConfig:
    d = dict(rc["drive"])
    if "delta_c_hz" not in d:
        raise ValueError("drive block needs delta_c_hz")
    delta_c = TWO_PI * d["delta_c_hz"]
    eff = d.get("coupling_efficiency")
    if "n_c" in d:
        n_c = d["n_c"]
    elif "cooling_power_w" in d and eff is not None:
        n_c = float(intracavity_photons(d["cooling_power_w"], delta_c, params, eff))
    else:
        raise ValueError("drive block needs n_c, or cooling_power_w with coupling_efficiency")
    delta = TWO_PI * d.get("delta_hz", 0.0)
    if "n_b" in d:
        n_b = d["n_b"]
    elif "probe_power_w" in d and eff is not None:
        # probe sits 2 (omega_m + delta) above the cooling tone
        det_b = delta_c + 2 * (params.omega_m + delta)
        n_b = float(intracavity_photons(d["probe_power_w"], det_b, params, eff))
    else:
        n_b = 0.0
    return DriveConfig.from_cooling_detuning(delta_c, params.omega_m, n_c, n_b, delta,
                                             TWO_PI * d.get("delta_lo_hz", 0.0))


def _process_run(rc: dict, params: SystemParams, base: Path, fit_opts: dict) -> SweepRun:
    run = SweepRun(run_id=str(rc["id"]), kind=rc.get("kind", "single-tone"),
                   input_power_w=rc.get("input_power_w"),
                   reflected_power_w=rc.get("reflected_power_w"), session=rc.get("session"))
    try:
        drive = _drive_from_config(rc, params)
        if rc.get("coherent_response"):
            omega, resp = read_trace(base / rc["coherent_response"])
            cfit = fit_coherent_response(omega, resp, init={"omega_m": params.omega_m,
                                                            "gamma_m": params.gamma_m})
            drive = drive.with_cooling_detuning(cfit.delta_c, params.omega_m)
            run.coherent = cfit.to_dict()
        run.drive = drive
        spec = read_spectrum(base / rc["spectrum"])
        mode = "double" if run.kind == "two-tone" else "single"
        run.fit = fit_lorentzians(spec, mode=mode, **fit_opts)
    except (ComputationError, ValueError, OSError, KeyError) as exc:
        run.error = {"type": type(exc).__name__, "message": str(exc)}
    return run


def _fail(run: SweepRun, exc: Exception):
    run.error = {"type": type(exc).__name__, "message": str(exc)}


def run_sweep(config: dict, base_dir=".", workers: int = 1):
    """Full analysis of a sweep description.

    Per-run failures are recorded on the run and never stop the sweep;
    regression failures are reported in the summary. Runs are processed in
    run-id order so outputs are deterministic. Returns ``(runs, summary)``.
    """
    base = Path(base_dir)
    params = system_from_config(config["system"])
    detuning_sigma = TWO_PI * config.get("detuning_sigma_hz", DETUNING_UNCERTAINTY / TWO_PI)
    fit_opts = {"weights": config.get("fit", {}).get("weights", "model")}
    rcs = sorted(config.get("runs", []), key=lambda r: str(r["id"]))
    ids = [str(r["id"]) for r in rcs]
    if len(set(ids)) != len(ids):
        raise ValueError("run ids must be unique")

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            runs = list(ex.map(lambda rc: _process_run(rc, params, base, fit_opts), rcs))
    else:
        runs = [_process_run(rc, params, base, fit_opts) for rc in rcs]

    summary = {"n_runs": len(runs), "regression_errors": {}}
    if not runs:
        summary.update(n_ok=0, failures=[], calibrations={}, heating=None, snr=None,
                       noise_floor=None, anchor=None)
        return runs, summary

    # two-tone asymmetry -> per-session calibration
    cals: dict = {}
    for r in runs:
        if r.ok and r.kind == "two-tone":
            try:
                r.occupancy, r.calibration = occupancy_from_asymmetry(
                    r.fit, params, r.drive, r.run_id, r.session, detuning_sigma)
                cals.setdefault(r.session, []).append(r.calibration)
            except (ComputationError, ValueError) as exc:
                _fail(r, exc)
    pooled = {}
    for sess, cs in cals.items():
        pooled[sess] = pool_calibration(cs) if len(cs) > 1 else cs[0]

    anchor = None
    anchor_id = config.get("anchor_run")
    if anchor_id is not None:
        ar = next((r for r in runs if r.run_id == str(anchor_id)), None)
        try:
            if ar is None or not ar.ok:
                raise ValueError(f"anchor run {anchor_id!r} is missing or failed")
            anchor = Anchor.from_fit(ar.fit, params, ar.drive,
                                     temperature=config.get("anchor_temperature_k"))
        except (ComputationError, ValueError) as exc:
            summary["regression_errors"]["anchor"] = {"type": type(exc).__name__,
                                                      "message": str(exc)}

    for r in runs:
        if not r.ok or r.kind != "single-tone":
            continue
        try:
            cal = pooled.get(r.session)
            if cal is not None:
                r.occupancy = occupancy_from_calibration(r.fit, params, r.drive, cal, r.run_id,
                                                         detuning_sigma)
            if anchor is not None:
                r.anchored = occupancy_noise_anchored(r.fit, params, r.drive, anchor, r.run_id,
                                                      detuning_sigma)
        except (ComputationError, ValueError) as exc:
            _fail(r, exc)

    heating = None
    reg = config.get("regressions", {})
    if reg.get("heating", True):
        est = "occupancy" if pooled else "anchored"
        try:
            heating = fit_heating(runs, params, estimate=est)
        except (ComputationError, ValueError) as exc:
            summary["regression_errors"]["heating"] = {"type": type(exc).__name__,
                                                       "message": str(exc)}
    snr = None
    if reg.get("snr", True):
        try:
            snr = fit_snr(runs, params, heating)
        except (ComputationError, ValueError) as exc:
            summary["regression_errors"]["snr"] = {"type": type(exc).__name__,
                                                   "message": str(exc)}
    floor = None
    pts = [(r.reflected_power_w, r.fit.background) for r in runs
           if r.ok and r.reflected_power_w is not None]
    if reg.get("noise_floor", True) and len({p for p, _ in pts}) >= 2:
        try:
            floor = fit_noise_floor(*zip(*pts))
        except ValueError as exc:
            summary["regression_errors"]["noise_floor"] = {"type": type(exc).__name__,
                                                           "message": str(exc)}

    ok = [r for r in runs if r.ok]
    single = [r for r in ok if r.kind == "single-tone"]
    summary.update(
        n_ok=len(ok),
        failures=[{"run_id": r.run_id, **r.error} for r in runs if not r.ok],
        calibrations={str(k): v.to_dict() for k, v in sorted(pooled.items(), key=lambda kv: str(kv[0]))},
        anchor=None if anchor is None else anchor.to_dict(),
        heating=None if heating is None else heating.to_dict(),
        snr=None if snr is None else snr.to_dict(),
        noise_floor=None if floor is None else dataclasses.asdict(floor),
        theory={k: v.tolist() for k, v in theory_curves(
            params, [r.drive for r in single], heating).items()} if single else None,
        system=params.to_hz(),
    )
    return runs, summary


def system_from_config(block: dict) -> SystemParams:
    """SystemParams from a Hz/K config block; gamma_m_hz may stand in for the split."""
    b = dict(block)
    if "gamma_m_hz" in b:
        if "gamma_int_hz" in b:
            raise ValueError("give gamma_m_hz or gamma_int_hz/gamma_gas_hz, not both")
        b["gamma_int_hz"] = b.pop("gamma_m_hz")
    keymap = {"temperature_k": "temperature", "x_zpf_m": "x_zpf"}
    kw = {keymap.get(k, k): v for k, v in b.items()}
    return SystemParams.from_hz(**kw)


def runs_table(runs: Sequence[SweepRun], params: SystemParams) -> dict:
    cols = {k: [] for k in ("run_id", "kind", "n_c", "n_b", "delta_c_hz", "gamma_eff_fit_hz",
                            "snr", "n_f", "n_f_sigma_lo", "n_f_sigma_hi", "n_f_anchored",
                            "n_f_anchored_sigma_lo", "n_f_anchored_sigma_hi")}
    nan = float("nan")
    for r in runs:
        if not r.ok:
            continue
        cols["run_id"].append(r.run_id)
        cols["kind"].append(r.kind)
        cols["n_c"].append(r.drive.n_c)
        cols["n_b"].append(r.drive.n_b)
        cols["delta_c_hz"].append(r.drive.cooling_detuning(params.omega_m) / TWO_PI)
        cols["gamma_eff_fit_hz"].append(r.fit.gamma_eff / TWO_PI)
        cols["snr"].append(r.fit.snr(1))
        for prefix, est in (("n_f", r.occupancy), ("n_f_anchored", r.anchored)):
            cols[prefix].append(nan if est is None else est.n_f)
            cols[prefix + "_sigma_lo"].append(nan if est is None else est.sigma_lo)
            cols[prefix + "_sigma_hi"].append(nan if est is None else est.sigma_hi)
    return cols


def write_sweep_outputs(out_dir, runs, summary, params: SystemParams):
    """ledger.jsonl, summary.json, runs.csv and theory.csv under ``out_dir``."""
    out = Path(out_dir)
    fileio.write_jsonl(out / "ledger.jsonl", [r.to_dict() for r in runs])
    fileio.write_json(out / "summary.json", summary)
    fileio.write_csv(out / "runs.csv", runs_table(runs, params))
    if summary.get("theory"):
        fileio.write_csv(out / "theory.csv", summary["theory"])


def synthesize_sweep(out_dir, params: SystemParams, drives: dict, eta: float, seed: int,
                     averages: float = 1e4, heating: Optional[HeatingModel] = None,
                     kinds: Optional[dict] = None, session="s0",
                     floor: Optional[NoiseFloorModel] = None, reflected_power_w=None,
                     anchor_run=None, rbw_hz=None) -> dict:
    """Write synthetic spectra for ``drives`` (run id -> DriveConfig) and return
    a sweep config referencing them. Occupancies follow the heated model.

    Run noise comes from children of ``SeedSequence(seed)`` handed out in
    run-id order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    heating = heating or HeatingModel()
    ids = sorted(drives)
    children = np.random.SeedSequence(seed).spawn(len(ids))
    runs = []
    for rid, ss in zip(ids, children):
        d = drives[rid]
        kind = (kinds or {}).get(rid, "two-tone" if d.n_b > 0 else "single-tone")
        n_f = float(occupancy_with_heating(params, d, heating))
        grid = frequency_grid(params, d, rbw_hz)
        spec = heterodyne_psd(params, d, n_f, eta, grid)
        p_refl = None if reflected_power_w is None else reflected_power_w.get(rid)
        if floor is not None and p_refl is not None:
            spec = spec.replace(psd=spec.psd + floor.slope * p_refl)
        spec = synthesize(spec, averages, np.random.default_rng(ss))
        write_spectrum(out / f"{rid}.csv", spec)
        dh = d.to_hz()
        rc = {"id": rid, "kind": kind, "spectrum": f"{rid}.csv", "session": session,
              "drive": {"n_c": dh["n_c"], "n_b": dh["n_b"],
                        "delta_c_hz": d.cooling_detuning(params.omega_m) / TWO_PI,
                        "delta_hz": dh["delta_hz"], "delta_lo_hz": dh["delta_lo_hz"]}}
        if p_refl is not None:
            rc["reflected_power_w"] = p_refl
        runs.append(rc)
    cfg = {"system": {k: v for k, v in params.to_hz().items()
                      if k not in ("n_th", "alpha_opt", "beta_mech", "x_zpf_m", "occupancy")},
           "runs": runs}
    if anchor_run is not None:
        cfg["anchor_run"] = anchor_run
    return cfg
