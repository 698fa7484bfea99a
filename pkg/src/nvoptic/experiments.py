"""Scripted protocols: coherence sweeps, resonance spectra, direction and
sensitivity estimates.

Inputs and outputs use the labelled (MHz) numbers of the field presets;
:class:`Settings` converts them with the chosen frequency convention.
Times are in us throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    DRIVE_MINUS,
    DRIVE_PLUS,
    DEPHASING,
    IntegratorConfig,
    full_program,
    reduced_lambda_program,
    stable_dt,
)
from .ensemble import (
    DARK_PLUS_ZERO,
    GROUND_ZERO,
    EnsembleConfig,
    Scenario,
    coherence_L,
    coherence_stderr,
    population_P0,
    run_ensemble,
)
from .model import (
    Convention,
    SignalParams,
    bright_state,
    dark_state,
    get_preset,
    ground_superposition,
    matched_drive,
    resonance_frequency,
)
from .noise import calibrate_dephasing, calibrate_drive_fluct
from .quantum import LevelBasis as Lv, basis_ket, outer, projector, pure_state

E_INV = math.exp(-1.0)
DT_TARGET = 0.01          # us; shrunk further when the stiffness bound asks for it
NOISE_BOUND_SIGMAS = 6.0  # noise excursions assumed when checking stiffness
# fraction of the stiffness bound used for dt; without decay nothing damps the
# RK4 truncation error on a pure state, so a finer step keeps it positive
DT_SAFETY = 0.9
DT_SAFETY_UNITARY = 0.1


class NoFWHMError(ValueError):
    """The half-maximum crossings do not bracket the peak on the grid."""


@dataclass(frozen=True)
class Settings:
    preset: str = "zero-field"
    convention: str = Convention.ORDINARY.value
    t2star: float = 3.0
    tau_beta: float = 25.0
    delta_omega: float = 0.0
    tau_omega: float = 100.0
    n_runs: int = 500
    seed: int = 1
    workers: int = 1
    dt: float | None = None
    record_every: float = 1.0
    program: str = "reduced"
    a1_leakage: str = "adiabatic"
    decay: bool = True
    nv_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        Convention(self.convention)
        get_preset(self.preset)
        if self.program not in ("reduced", "full"):
            raise ValueError(f"program must be 'reduced' or 'full', got {self.program!r}")
        if not (self.t2star > 0 and self.tau_beta > 0 and self.tau_omega > 0):
            raise ValueError("noise times must be positive")
        if self.delta_omega < 0:
            raise ValueError("delta_omega must be non-negative")

    @property
    def factor(self) -> float:
        return Convention(self.convention).factor

    def nv(self):
        nv = get_preset(self.preset).params(self.convention, **self.nv_overrides)
        return nv if self.decay else nv.without_decay()

    def ensemble(self, **kw) -> EnsembleConfig:
        base = dict(n_runs=self.n_runs, seed=self.seed, workers=self.workers)
        base.update(kw)
        return EnsembleConfig(**base)


@dataclass
class Series:
    """One swept quantity with its standard error."""

    x: np.ndarray
    y: np.ndarray
    stderr: np.ndarray
    x_name: str
    y_name: str
    meta: dict = field(default_factory=dict)


@dataclass
class SpectrumResult:
    frequencies: np.ndarray     # omega_s, labelled units
    delta_p: np.ndarray         # P_off - P_on (signed)
    stderr: np.ndarray
    resonance: float
    center: float
    depth: float
    fwhm: float | None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    grid: tuple
    settings: Settings

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValueError("sweep grid is empty")
        if list(self.grid) != sorted(self.grid):
            raise ValueError("sweep grid must be sorted")


# --- scenario construction ------------------------------------------------

def drive_for(settings: Settings, omega: float, phi_L: float = 0.0):
    """Matched drive at labelled Rabi frequency ``omega`` and its unit direction.

    The direction fixes the dark state even when ``omega`` is zero.
    """
    nv = settings.nv()
    direction = matched_drive(nv, 1.0, phi_L)
    return direction.scaled(omega * settings.factor), direction


def _noise_models(settings: Settings, drive):
    models = {DEPHASING: calibrate_dephasing(settings.t2star, settings.tau_beta)}
    if settings.delta_omega > 0:
        models[DRIVE_PLUS] = calibrate_drive_fluct(settings.delta_omega, settings.tau_omega,
                                                   drive.omega_plus)
        models[DRIVE_MINUS] = calibrate_drive_fluct(settings.delta_omega, settings.tau_omega,
                                                    drive.omega_minus)
    return models


def _program(settings: Settings, nv, drive, signal=None):
    kw = dict(dephasing=True, drive_noise=settings.delta_omega > 0 and not drive.is_off,
              signal=signal)
    if settings.program == "full":
        return full_program(nv, drive, **kw)
    return reduced_lambda_program(nv, drive, a1_leakage=settings.a1_leakage, **kw)


def _integrator(settings: Settings, program, noise_models, T: float) -> IntegratorConfig:
    bounds = {k: NOISE_BOUND_SIGMAS * p.std for k, p in noise_models.items()}
    safety = DT_SAFETY if settings.decay else DT_SAFETY_UNITARY
    dt_max = min(settings.dt or DT_TARGET, safety * stable_dt(program, bounds))
    rec = settings.record_every
    if T < rec:
        rec = T
    if abs(T / rec - round(T / rec)) > 1e-9:
        raise ValueError(f"T={T} must be a multiple of record_every={rec}")
    stride = max(1, math.ceil(rec / dt_max - 1e-9))
    return IntegratorConfig(dt=rec / stride, record_stride=stride)


def coherence_scenario(settings: Settings, omega: float, T: float, phi_L: float = 0.0) -> Scenario:
    nv = settings.nv()
    drive, direction = drive_for(settings, omega, phi_L)
    program = _program(settings, nv, drive)
    noise_models = _noise_models(settings, drive)
    d = dark_state(nv, direction)
    ket0 = basis_ket(Lv.G0)
    observables = {
        "rho_d0": outer(ket0, d),             # tr(rho |0><d|) = <d|rho|0>
        "P0": projector(Lv.G0),
        "P_dark": outer(d, d),
        "P_A2": projector(Lv.A2),
        "P_s": projector(Lv.S),
    }
    return Scenario(
        program=program,
        rho0=pure_state(ground_superposition(nv, direction)),
        T=T,
        integrator=_integrator(settings, program, noise_models, T),
        observables=observables,
        noise=noise_models,
        initial_state=DARK_PLUS_ZERO,
        label=f"coherence/{settings.preset}/omega={omega}",
    )


def signal_scenario(settings: Settings, omega: float, omega_s: float, eta0: float, T: float,
                    phi_L: float = 0.0, theta_sig: float = 0.0) -> Scenario:
    """Start in |0g> under a signal at internal angular frequency ``omega_s``."""
    nv = settings.nv()
    drive, direction = drive_for(settings, omega, phi_L)
    mode = get_preset(settings.preset).signal_mode
    signal = SignalParams(eta0 * settings.factor, omega_s, theta_sig, "random-per-run", mode)
    program = _program(settings, nv, drive, signal)
    noise_models = _noise_models(settings, drive)
    observables = {"P0": projector(Lv.G0), "P_A2": projector(Lv.A2), "P_s": projector(Lv.S)}
    return Scenario(
        program=program,
        rho0=pure_state(basis_ket(Lv.G0)),
        T=T,
        integrator=_integrator(settings, program, noise_models, T),
        observables=observables,
        noise=noise_models,
        random_signal_phase=True,
        initial_state=GROUND_ZERO,
        label=f"signal/{settings.preset}/omega={omega}/eta0={eta0}",
    )


def resonance(settings: Settings, omega: float, phi_L: float = 0.0) -> float:
    """Resonant signal frequency (internal units) for labelled drive ``omega``."""
    nv = settings.nv()
    drive, direction = drive_for(settings, omega, phi_L)
    if drive.is_off:
        return nv.eps_0m1
    return resonance_frequency(nv, drive, dark=dark_state(nv, direction))


def dark_offset(settings: Settings, omega: float, phi_L: float = 0.0) -> float:
    """Energy of the dark state above the centre of the bright/|A2> pair
    (internal units); the offset that enters the filter oracle."""
    nv = settings.nv()
    drive, direction = drive_for(settings, omega, phi_L)
    if drive.is_off:
        return 0.0
    h = _program(settings, nv, drive).static
    d = dark_state(nv, direction)
    b = bright_state(nv, direction)
    centre = 0.5 * (np.vdot(b, h @ b).real + h[Lv.A2, Lv.A2].real)
    return float(np.vdot(d, h @ d).real - centre)


def _value_at(times, t):
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9:
        raise ValueError(f"t={t} is not on the record grid")
    return k


# --- coherence ------------------------------------------------------------

def coherence_run(settings: Settings, omega: float, T: float, phi_L: float = 0.0, **ens):
    """|L(t)| and its standard error on the record grid."""
    sc = coherence_scenario(settings, omega, T, phi_L)
    res = run_ensemble(settings.ensemble(**ens), sc)
    return res.times, np.abs(coherence_L(res)), coherence_stderr(res), res


def exp_coherence_vs_drive(settings: Settings, omegas, t: float = 50.0) -> Series:
    ys, es, manifests = [], [], []
    for om in omegas:
        times, absL, err, res = coherence_run(settings, om, t)
        ys.append(absL[-1])
        es.append(np.abs(err[-1]))
        manifests.append(res.manifest)
    return Series(np.asarray(omegas, dtype=float), np.array(ys), np.array(es),
                  "omega", "abs_L", {"t": t, "runs": manifests})


def exp_coherence_vs_time(settings: Settings, omegas=(0.0, None), T: float = 60.0) -> dict:
    """|L(t)| for each drive; ``None`` stands for the preset's best drive."""
    out = {}
    for om in omegas:
        om = get_preset(settings.preset).best_omega if om is None else om
        times, absL, err, res = coherence_run(settings, om, T)
        out[om] = Series(times, absL, err, "t", "abs_L", {"omega": om, "manifest": res.manifest})
    return out


def exp_drive_fluctuations(settings: Settings, deltas, omega: float | None = None,
                           t: float = 50.0) -> Series:
    omega = get_preset(settings.preset).best_omega if omega is None else omega
    ys, es = [], []
    for dl in deltas:
        _, absL, err, _ = coherence_run(replace(settings, delta_omega=float(dl)), omega, t)
        ys.append(absL[-1])
        es.append(err[-1])
    return Series(np.asarray(deltas, dtype=float), np.array(ys), np.array(es),
                  "delta_omega", "abs_L", {"omega": omega, "t": t})


def crossing_time(times, values, level: float = E_INV) -> float:
    """First time the series falls to ``level`` (linear interpolation); nan if never."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    below = np.flatnonzero(values <= level)
    if below.size == 0:
        return math.nan
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1, v0, v1 = times[k - 1], times[k], values[k - 1], values[k]
    return float(t0 + (v0 - level) * (t1 - t0) / (v0 - v1))


def coherence_time(times, values, level: float = E_INV) -> tuple[float, bool]:
    """e^-1 time and whether it was observed.  When the series never
    reaches ``level``, a straight line through log|L| over the second half
    of the record is extrapolated instead (flag False)."""
    t = crossing_time(times, values, level)
    if not math.isnan(t):
        return t, True
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    half = times >= 0.5 * times[-1]
    slope, icpt = np.polyfit(times[half], np.log(values[half]), 1)
    if slope >= 0:
        return math.inf, False
    return float((math.log(level) - icpt) / slope), False


# --- spectroscopy ---------------------------------------------------------

def expected_fwhm(settings: Settings, omega: float, t: float) -> float:
    """Rough linewidth (internal units) used only to lay out the grid."""
    if omega > 0:
        return 5.0 / t
    return max(5.0 / t, 4.0 / settings.t2star)


def spectrum_grid(center: float, width: float, n_coarse: int = 21, n_fine: int = 25,
                  span_factor: float = 10.0, refine: int = 5) -> np.ndarray:
    """Coarse points over +-span_factor*width plus a ``refine``-fold denser
    block over the central fifth; 21 + 25 points give 41 distinct values."""
    span = span_factor * width
    coarse = np.linspace(-span, span, n_coarse)
    fine = np.linspace(-span / refine, span / refine, n_fine)
    grid = np.unique(np.round(np.concatenate([coarse, fine]) / span, 12)) * span
    return center + grid


def fwhm(freqs, values) -> float:
    """Full width at half maximum of the highest peak, baseline zero.

    Crossings are located by linear interpolation between grid points.
    """
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    if freqs.size < 3 or np.any(np.diff(freqs) <= 0):
        raise ValueError("need at least three strictly increasing frequencies")
    k = int(np.argmax(values))
    peak = values[k]
    if not peak > 0:
        raise NoFWHMError("no positive peak")
    half = 0.5 * peak
    left = k
    while left > 0 and values[left] > half:
        left -= 1
    right = k
    while right < len(values) - 1 and values[right] > half:
        right += 1
    if values[left] > half or values[right] > half:
        raise NoFWHMError("half-maximum crossings not bracketed by the grid")

    def cross(i, j):
        return freqs[i] + (half - values[i]) * (freqs[j] - freqs[i]) / (values[j] - values[i])

    return float(cross(right - 1, right) - cross(left, left + 1))


def exp_spectrum(settings: Settings, omega: float, eta0: float, t: float = 50.0,
                 grid=None, theta_sig: float = 0.0, phi_L: float | None = None) -> SpectrumResult:
    """Signed dP = P_off - P(omega_s) at time t over a grid of signal frequencies.

    Without a signal |0g> is stationary, so P_off = 1.  ``grid`` is in
    labelled units and defaults to :func:`spectrum_grid` about the
    resonance.  The laser phase defaults to the sensitive setting
    phi_L = 2 theta_sig + pi.
    """
    if phi_L is None:
        phi_L = sensitive_phase(theta_sig)
    f = settings.factor
    w_res = resonance(settings, omega, phi_L)
    if grid is None:
        freqs = spectrum_grid(w_res, expected_fwhm(settings, omega, t))
    else:
        freqs = np.asarray(grid, dtype=float) * f
    dps, errs = [], []
    for ws in freqs:
        sc = signal_scenario(settings, omega, ws, eta0, t, phi_L, theta_sig)
        res = run_ensemble(settings.ensemble(), sc)
        dps.append(1.0 - population_P0(res)[-1])
        errs.append(res.stderr["P0"][-1])
    dps = np.array(dps)
    k = int(np.argmax(dps))
    try:
        width = fwhm(freqs, dps) / f
    except NoFWHMError:
        width = None
    return SpectrumResult(freqs / f, dps, np.array(errs), w_res / f, freqs[k] / f,
                          float(dps[k]), width,
                          {"omega": omega, "eta0": eta0, "t": t, "preset": settings.preset,
                           "convention": settings.convention})


def sensitive_phase(theta: float) -> float:
    """Laser phase whose dark state lies along the in-plane direction theta."""
    return 2.0 * theta + math.pi


def exp_angle(settings: Settings, thetas, theta_sig: float = 0.0, omega: float = 10.0,
              eta0: float = 0.01, t: float = 50.0) -> Series:
    """On-resonance dP as the laser phase follows phi_L = 2 theta + pi."""
    ys, es = [], []
    for th in thetas:
        phi_L = sensitive_phase(th)
        ws = resonance(settings, omega, phi_L)
        sc = signal_scenario(settings, omega, ws, eta0, t, phi_L, theta_sig)
        res = run_ensemble(settings.ensemble(), sc)
        ys.append(1.0 - population_P0(res)[-1])
        es.append(res.stderr["P0"][-1])
    return Series(np.asarray(thetas, dtype=float), np.array(ys), np.array(es),
                  "theta", "delta_P", {"theta_sig": theta_sig, "omega": omega, "eta0": eta0})


@dataclass
class SensitivityResult:
    times: np.ndarray
    P: np.ndarray
    dP_deta: np.ndarray
    sensitivity: np.ndarray     # sqrt(P(1-P)) / |dP/deta0|, labelled eta units
    flagged: np.ndarray         # derivative lost in noise or degenerate
    meta: dict = field(default_factory=dict)


def exp_sensitivity(settings: Settings, times, omega: float, eta0: float,
                    rel_step: float = 0.1, theta_sig: float = 0.0) -> SensitivityResult:
    """One-trial sensitivity on resonance at each time in ``times``.

    dP/deta0 is a central difference over +-rel_step*eta0; both sides
    reuse the master seed, so noise and phases are common to the pair.
    """
    times = np.asarray(times, dtype=float)
    T = float(np.max(times))
    phi_L = sensitive_phase(theta_sig)
    ws = resonance(settings, omega, phi_L)
    cfg = settings.ensemble()
    out = {}
    for key, eta in (("mid", eta0), ("up", eta0 * (1 + rel_step)), ("down", eta0 * (1 - rel_step))):
        sc = signal_scenario(settings, omega, ws, eta, T, phi_L, theta_sig)
        out[key] = run_ensemble(cfg, sc)
    grid = out["mid"].times
    idx = [_value_at(grid, t) for t in times]
    P = population_P0(out["mid"])[idx]
    up = population_P0(out["up"])[idx]
    down = population_P0(out["down"])[idx]
    h = 2.0 * rel_step * eta0
    deriv = (up - down) / h
    spread = np.sqrt(np.clip(P * (1.0 - P), 0.0, None))
    # the paired difference cancels most Monte Carlo noise; the unpaired
    # standard errors give a conservative floor
    floor = (out["up"].stderr["P0"][idx] + out["down"].stderr["P0"][idx]) / h
    flagged = (spread == 0.0) | (np.abs(deriv) <= floor) | (deriv == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sens = spread / np.abs(deriv)
    return SensitivityResult(times, P, deriv, sens, flagged,
                             {"omega": omega, "eta0": eta0, "rel_step": rel_step,
                              "resonance": ws / settings.factor})


def averaging_factor(T_all: float, T_init: float, t: float) -> float:
    """alpha = 1/sqrt(N) with N = T_all / (T_init + t) repetitions."""
    if T_all <= 0 or t + T_init <= 0:
        raise ValueError("times must be positive")
    return 1.0 / math.sqrt(T_all / (T_init + t))


EXPERIMENTS = {
    "coherence_vs_drive": exp_coherence_vs_drive,
    "coherence_vs_time": exp_coherence_vs_time,
    "drive_fluctuations": exp_drive_fluctuations,
    "spectrum": exp_spectrum,
    "angle": exp_angle,
    "sensitivity": exp_sensitivity,
}
