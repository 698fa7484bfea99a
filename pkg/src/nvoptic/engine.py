"""Master-equation integration with stochastic, time-dependent Hamiltonians.

A :class:`HamiltonianProgram` is a static operator plus a list of
modulations, each an operator multiplied by a scalar coefficient

    amplitude * exp(i frequency t) * [noise sample] * [exp(i run_phase)]

The noise sample is the value of a named stream at the start of the
current step (piecewise constant); the exponential is evaluated at every
Runge-Kutta substage.  Decay enters as Lindblad channels ``(J, rate)``.

Integration is fixed-step RK4 in a compiled kernel (:mod:`._kernel`),
with rho symmetrized after every step.  :func:`rhs` is a plain numpy
reference of the same right-hand side.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .model import (
    DriveConfig,
    NVParams,
    SignalParams,
    a1_coupling_row,
    build_dephasing_operator,
    build_laser_hamiltonian,
    dark_state,
    drive_amplitude_operators,
    effective_rabi,
    lindblad_channels,
    signal_coupling_operator,
    total_decay_rate,
)
from .quantum import DIM, LevelBasis as Lv, adjoint, anticommutator, projector, validate_density

# noise stream names understood by the program builders
DEPHASING = "dephasing"
DRIVE_PLUS = "drive_plus"
DRIVE_MINUS = "drive_minus"

REDUCED_WARN_RATIO = 0.05
STIFFNESS_FRACTION = 1.0 / 20.0


class IntegrationError(RuntimeError):
    """Raised when a trajectory drifts out of the space of density matrices."""

    def __init__(self, message, run_index=None, step=None):
        super().__init__(message)
        self.run_index = run_index
        self.step = step


@dataclass(frozen=True)
class Coefficient:
    amplitude: complex = 1.0
    frequency: float = 0.0
    noise: str | None = None
    uses_run_phase: bool = False

    def __call__(self, t, noise_samples=None, run_phase=0.0) -> complex:
        c = complex(self.amplitude) * np.exp(1j * self.frequency * t)
        if self.noise is not None:
            c *= (noise_samples or {}).get(self.noise, 0.0)
        if self.uses_run_phase:
            c *= np.exp(1j * run_phase)
        return complex(c)


@dataclass(frozen=True)
class Modulation:
    """``coefficient * operator``, plus its Hermitian conjugate if ``add_conjugate``."""

    operator: np.ndarray
    coefficient: Coefficient
    add_conjugate: bool = False
    label: str = ""


@dataclass(frozen=True)
class HamiltonianProgram:
    static: np.ndarray
    modulations: tuple = ()
    channels: tuple = ()            # (jump operator, rate)
    levels: tuple | None = None     # active subset; None means all
    label: str = ""

    def __post_init__(self):
        h = np.asarray(self.static)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("static Hamiltonian must be square")
        if np.max(np.abs(h - adjoint(h)), initial=0.0) > 1e-12:
            raise ValueError("static Hamiltonian is not Hermitian")
        for mod in self.modulations:
            op = np.asarray(mod.operator)
            if op.shape != h.shape:
                raise ValueError(f"modulation {mod.label!r} has shape {op.shape}, expected {h.shape}")
            if not mod.add_conjugate:
                # coefficient may be complex only if the pair is completed
                if np.max(np.abs(op - adjoint(op)), initial=0.0) > 1e-12:
                    raise ValueError(f"modulation {mod.label!r} is not Hermitian; set add_conjugate")
                c = mod.coefficient
                if c.frequency != 0.0 or c.uses_run_phase or np.imag(c.amplitude) != 0.0:
                    raise ValueError(f"modulation {mod.label!r} needs a real coefficient")
        for op, rate in self.channels:
            if rate < 0:
                raise ValueError("channel rates must be non-negative")
            if np.asarray(op).shape != h.shape:
                raise ValueError("channel operator shape mismatch")

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    @property
    def active(self) -> tuple:
        return tuple(range(self.dim)) if self.levels is None else tuple(self.levels)

    @property
    def noise_streams(self) -> tuple:
        return tuple(sorted({m.coefficient.noise for m in self.modulations if m.coefficient.noise}))

    def hamiltonian(self, t, noise_samples=None, run_phase=0.0) -> np.ndarray:
        h = np.array(self.static, dtype=complex)
        for mod in self.modulations:
            term = mod.coefficient(t, noise_samples, run_phase) * mod.operator
            h = h + term
            if mod.add_conjugate:
                h = h + adjoint(term)
        return h

    def omega_max(self, noise_bounds=None) -> float:
        """Largest coefficient magnitude: Hamiltonian entries, modulation
        frequencies and amplitudes, and decay rates."""
        noise_bounds = noise_bounds or {}
        static = float(np.max(np.abs(self.static), initial=0.0))
        w = 0.0
        mod_total = 0.0
        for mod in self.modulations:
            c = mod.coefficient
            scale = abs(c.amplitude) * noise_bounds.get(c.noise, 1.0 if c.noise is None else 0.0)
            mod_total += scale * float(np.max(np.abs(mod.operator), initial=0.0))
            w = max(w, abs(c.frequency))
        w = max(w, static + mod_total)
        for op, rate in self.channels:
            w = max(w, rate * float(np.max(np.abs(op), initial=0.0)) ** 2)
        return w


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    ``positivity_tol`` bounds the most negative eigenvalue accepted in the
    final state.  Truncated Taylor steps are not positivity preserving; for
    nearly pure states the violation scales as dt^4 and is ~1e-6 at the
    stiffness bound.
    """

    dt: float
    record_stride: int = 1
    trace_tol: float = 1e-8
    positivity_tol: float = 1e-5
    method: str = "rk4"
    check_stiffness: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.method != "rk4":
            raise ValueError(f"only fixed-step rk4 is implemented, got {self.method!r}")

    def n_steps(self, T: float) -> int:
        n = int(round(T / self.dt))
        if n < 1 or abs(n * self.dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"T={T} is not a whole number of steps dt={self.dt}")
        if n % self.record_stride:
            raise ValueError(f"{n} steps are not a multiple of record_stride={self.record_stride}")
        return n


def stable_dt(program: HamiltonianProgram, noise_bounds=None) -> float:
    """Largest step allowed by the stiffness rule dt <= (2 pi / w_max) / 20."""
    w = program.omega_max(noise_bounds)
    return math.inf if w == 0 else STIFFNESS_FRACTION * 2.0 * math.pi / w


@dataclass
class Trajectory:
    times: np.ndarray
    channels: dict
    final_state: np.ndarray
    max_hermiticity_drift: float = 0.0
    max_trace_error: float = 0.0

    def __getitem__(self, name):
        return self.channels[name]


@dataclass
class BatchTrajectory:
    times: np.ndarray
    channels: dict                  # name -> (n_runs, n_records) complex
    final_states: np.ndarray
    hermiticity_drift: np.ndarray
    trace_error: np.ndarray
    n_steps: int = 0

    def run(self, r: int) -> Trajectory:
        return Trajectory(self.times, {k: v[r] for k, v in self.channels.items()},
                          self.final_states[r], float(self.hermiticity_drift[r]),
                          float(self.trace_error[r]))


# --- reference right-hand side --------------------------------------------

def rhs(rho: np.ndarray, h: np.ndarray, channels=()) -> np.ndarray:
    """-i[H, rho] + sum gamma (J rho J^dag - {J^dag J, rho}/2)."""
    out = -1j * (h @ rho - rho @ h)
    for op, rate in channels:
        jd = adjoint(op)
        out = out + rate * (op @ rho @ jd - 0.5 * anticommutator(jd @ op, rho))
    return out


def rk4_reference(rho0, program: HamiltonianProgram, dt, n_steps, noise=None, run_phase=0.0):
    """Slow numpy RK4 used to cross-check the compiled kernel."""
    noise = noise or {}
    rho = np.array(rho0, dtype=complex)
    out = [rho.copy()]
    for s in range(n_steps):
        t = s * dt
        samples = {k: v[s] for k, v in noise.items()}
        h0, h1, h2 = (program.hamiltonian(t + f * dt, samples, run_phase) for f in (0.0, 0.5, 1.0))
        k1 = rhs(rho, h0, program.channels)
        k2 = rhs(rho + 0.5 * dt * k1, h1, program.channels)
        k3 = rhs(rho + 0.5 * dt * k2, h1, program.channels)
        k4 = rhs(rho + dt * k3, h2, program.channels)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + adjoint(rho))
        out.append(rho.copy())
    return np.array(out)


# --- compilation ----------------------------------------------------------

@dataclass(frozen=True)
class _Compiled:
    idx: np.ndarray
    h0: np.ndarray
    rec: tuple
    ent: tuple
    mod_freq: np.ndarray
    mod_noise: np.ndarray
    mod_amp0: np.ndarray
    mod_phase: np.ndarray
    streams: tuple


def _restrict(op, idx):
    return np.asarray(op, dtype=complex)[np.ix_(idx, idx)]


def _check_closed(op, idx, what):
    mask = np.ones(op.shape[0], dtype=bool)
    mask[idx] = False
    if np.any(np.abs(np.asarray(op)[mask]) > 0) or np.any(np.abs(np.asarray(op)[:, mask]) > 0):
        raise ValueError(f"{what} touches levels outside the active set")


def _compile(program: HamiltonianProgram) -> _Compiled:
    idx = np.array(program.active, dtype=np.int64)
    h0 = _restrict(program.static, idx)
    _check_closed(program.static, idx, "static Hamiltonian")

    oi, oj, ii, ij, vals = [], [], [], [], []
    for op, rate in program.channels:
        _check_closed(op, idx, "channel")
        j = _restrict(op, idx)
        h0 = h0 - 0.5j * rate * (adjoint(j) @ j)
        nz = np.argwhere(np.abs(j) > 0)
        # (J rho J^dag)_ab = sum_cd J_ac rho_cd conj(J_bd)
        for a, c in nz:
            for b, d in nz:
                oi.append(a); oj.append(b); ii.append(c); ij.append(d)
                vals.append(rate * j[a, c] * np.conj(j[b, d]))
    rec = (np.array(oi, dtype=np.int64), np.array(oj, dtype=np.int64),
           np.array(ii, dtype=np.int64), np.array(ij, dtype=np.int64),
           np.array(vals, dtype=np.complex128))

    streams = program.noise_streams
    ek, ei, ej, ev = [], [], [], []
    freq, nidx, amp0, phase = [], [], [], []

    def add(op, coeff, conj):
        k = len(freq)
        for a, b in np.argwhere(np.abs(op) > 0):
            ek.append(k); ei.append(a); ej.append(b); ev.append(op[a, b])
        a0 = np.conj(coeff.amplitude) if conj else coeff.amplitude
        amp0.append(complex(a0))
        freq.append(-coeff.frequency if conj else coeff.frequency)
        nidx.append(streams.index(coeff.noise) if coeff.noise else -1)
        phase.append((-1.0 if conj else 1.0) if coeff.uses_run_phase else 0.0)

    for mod in program.modulations:
        _check_closed(mod.operator, idx, f"modulation {mod.label!r}")
        op = _restrict(mod.operator, idx)
        add(op, mod.coefficient, False)
        if mod.add_conjugate:
            add(adjoint(op), mod.coefficient, True)
    ent = (np.array(ek, dtype=np.int64), np.array(ei, dtype=np.int64),
           np.array(ej, dtype=np.int64), np.array(ev, dtype=np.complex128))
    return _Compiled(idx, np.ascontiguousarray(h0), rec, ent, np.array(freq, dtype=float),
                     np.array(nidx, dtype=np.int64), np.array(amp0, dtype=complex),
                     np.array(phase, dtype=float), streams)


def _as_observables(observables, dim):
    if observables is None:
        return {f"P_{Lv(k).label}" if dim == DIM else f"P_{k}": projector(k, dim) for k in range(dim)}
    return dict(observables)


def evolve_batch(rho0, program: HamiltonianProgram, cfg: IntegratorConfig, T: float,
                 noise=None, observables=None, run_phases=None, n_runs=None) -> BatchTrajectory:
    """Integrate several runs that share a program but differ in noise and phase.

    ``rho0`` is one density matrix or a stack ``(n_runs, dim, dim)``.
    ``noise`` maps stream name to an array ``(n_runs, n_steps + 1)``; any
    stream the program uses but ``noise`` omits is taken as zero.
    """
    n_steps = cfg.n_steps(T)
    noise = dict(noise or {})
    rho0 = np.asarray(rho0, dtype=complex)
    if n_runs is None:
        if rho0.ndim == 3:
            n_runs = rho0.shape[0]
        elif noise:
            n_runs = next(iter(noise.values())).shape[0]
        elif run_phases is not None:
            n_runs = len(run_phases)
        else:
            n_runs = 1
    if rho0.ndim == 2:
        rho0 = np.broadcast_to(rho0, (n_runs,) + rho0.shape)
    if rho0.shape[0] != n_runs:
        raise ValueError("rho0 stack does not match the number of runs")

    comp = _compile(program)
    for name, arr in noise.items():
        if name not in comp.streams:
            continue
        if np.shape(arr) != (n_runs, n_steps + 1):
            raise ValueError(f"noise stream {name!r} has shape {np.shape(arr)}, "
                             f"expected {(n_runs, n_steps + 1)}")
    noise_arr = np.zeros((max(len(comp.streams), 1), n_runs, n_steps + 1))
    for s, name in enumerate(comp.streams):
        if name in noise:
            noise_arr[s] = noise[name]

    if cfg.check_stiffness:
        bounds = {name: float(np.max(np.abs(noise_arr[s]), initial=0.0))
                  for s, name in enumerate(comp.streams)}
        limit = stable_dt(program, bounds)
        if cfg.dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={cfg.dt} exceeds the stiffness bound {limit:.3e} "
                             f"(w_max={program.omega_max(bounds):.4g} rad/us)")

    phases = np.zeros(n_runs) if run_phases is None else np.asarray(run_phases, dtype=float)
    mod_amp = comp.mod_amp0[:, None] * np.exp(1j * comp.mod_phase[:, None] * phases[None, :])
    mod_amp = np.ascontiguousarray(mod_amp.reshape(len(comp.mod_amp0), n_runs))

    # restrict initial states; they must not populate inactive levels
    full_dim = program.dim
    idx = comp.idx
    if len(idx) < full_dim:
        for r in range(n_runs):
            _check_closed(rho0[r], idx, "initial state")
    rho_act = np.ascontiguousarray(rho0[:, idx][:, :, idx])

    obs = _as_observables(observables, full_dim)
    names = list(obs)
    obs_arr = np.ascontiguousarray(np.array([_restrict(obs[k], idx) for k in names],
                                            dtype=complex).reshape(len(names), len(idx), len(idx)))
    n_rec = n_steps // cfg.record_stride + 1
    records = np.zeros((n_runs, n_rec, len(names)), dtype=complex)
    final = np.zeros((n_runs, len(idx), len(idx)), dtype=complex)
    herm = np.zeros(n_runs)
    trace = np.zeros(n_runs)
    status = np.zeros(n_runs, dtype=np.int64)
    fail = np.zeros(n_runs, dtype=np.int64)

    _kernel.rk4_batch(rho_act, comp.h0, *comp.rec, *comp.ent, mod_amp, comp.mod_freq,
                      comp.mod_noise, noise_arr, float(cfg.dt), int(n_steps),
                      int(cfg.record_stride), obs_arr, float(cfg.trace_tol),
                      records, final, herm, trace, status, fail)

    bad = np.flatnonzero(status != _kernel.STATUS_OK)
    if bad.size:
        r = int(bad[0])
        kind = "non-finite state" if status[r] == _kernel.STATUS_NONFINITE else "trace drift"
        raise IntegrationError(
            f"{kind} {trace[r]:.3e} at step {fail[r]} (t={fail[r] * cfg.dt:.6g} us) in run {r}; "
            f"dt={cfg.dt:.3e}, stiffness bound {stable_dt(program):.3e}; reduce dt",
            run_index=r, step=int(fail[r]))

    final_full = np.zeros((n_runs, full_dim, full_dim), dtype=complex)
    final_full[:, idx[:, None], idx[None, :]] = final
    for r in range(n_runs):
        diag = validate_density(final_full[r], trace_tol=cfg.trace_tol,
                                positivity_tol=cfg.positivity_tol)
        if not diag.ok:
            raise IntegrationError(f"final state of run {r} invalid: {diag.describe()}", run_index=r,
                                   step=n_steps)

    times = np.arange(n_rec) * cfg.dt * cfg.record_stride
    channels = {k: records[:, :, m] for m, k in enumerate(names)}
    return BatchTrajectory(times, channels, final_full, herm, trace, n_steps)


def evolve(rho0, program: HamiltonianProgram, cfg: IntegratorConfig, T: float,
           noise=None, observables=None, run_phase: float = 0.0) -> Trajectory:
    """Single trajectory; ``noise`` maps stream name to a path of n_steps + 1 values."""
    batch_noise = {k: np.asarray(v, dtype=float)[None, :] for k, v in (noise or {}).items()}
    out = evolve_batch(rho0, program, cfg, T, batch_noise, observables, [run_phase], n_runs=1)
    return out.run(0)


# --- program builders -----------------------------------------------------

def _modulations(nv, drive, *, dephasing, drive_noise, signal, include_a1):
    mods = []
    if dephasing:
        mods.append(Modulation(build_dephasing_operator(), Coefficient(1.0, noise=DEPHASING),
                               label="dephasing"))
    if drive_noise:
        dp, dm = drive_amplitude_operators(nv, drive, include_a1)
        mods.append(Modulation(dp, Coefficient(1.0, noise=DRIVE_PLUS), label="drive_plus"))
        mods.append(Modulation(dm, Coefficient(1.0, noise=DRIVE_MINUS), label="drive_minus"))
    if signal is not None and signal.eta0 > 0:
        k = signal_coupling_operator(nv, signal)
        coeff = Coefficient(0.5 * signal.eta0, signal.omega_s - nv.eps_0m1,
                            uses_run_phase=True)
        mods.append(Modulation(k, coeff, add_conjugate=True, label="signal"))
    return tuple(mods)


def full_program(nv: NVParams, drive: DriveConfig, *, dephasing=True, drive_noise=False,
                 signal: SignalParams | None = None) -> HamiltonianProgram:
    """All six levels, including the far-detuned |A1> (dt must resolve delta)."""
    h = build_laser_hamiltonian(nv, drive, include_a1=True)
    mods = _modulations(nv, drive, dephasing=dephasing, drive_noise=drive_noise,
                        signal=signal, include_a1=True)
    chans = tuple(lindblad_channels(nv))
    return HamiltonianProgram(h, mods, chans, None, label="full")


def reduced_lambda_program(nv: NVParams, drive: DriveConfig, *, dephasing=True,
                           drive_noise=False, signal: SignalParams | None = None,
                           a1_leakage: str = "adiabatic") -> HamiltonianProgram:
    """Lambda system {|+-1g>, |A2>} plus |0g> and the singlet, without |A1>.

    With ``a1_leakage="adiabatic"`` the eliminated |A1> still contributes
    its second-order light shift V^dag V / delta and effective decay
    channels sqrt(rate) |f><A1| V / delta, where V is the row <A1|H_L.
    ``"none"`` drops |A1> entirely.
    """
    if a1_leakage not in ("adiabatic", "none"):
        raise ValueError(f"a1_leakage must be 'adiabatic' or 'none', got {a1_leakage!r}")
    omega = effective_rabi(nv, drive)
    if omega / nv.delta > REDUCED_WARN_RATIO:
        warnings.warn(f"Omega/delta = {omega / nv.delta:.3g} > {REDUCED_WARN_RATIO}; "
                      "the reduced Lambda model is not reliable here", stacklevel=2)
    h = build_laser_hamiltonian(nv, drive, include_a1=False)
    chans = []
    for op, rate in lindblad_channels(nv):
        if op[:, Lv.A1].any():
            continue
        chans.append((op, rate))
    if a1_leakage == "adiabatic" and not drive.is_off:
        v = a1_coupling_row(nv, drive)
        h = h + np.outer(v.conj(), v) / nv.delta
        for op, rate in lindblad_channels(nv):
            if not op[:, Lv.A1].any():
                continue
            target = int(np.argmax(np.abs(op[:, Lv.A1])))
            j = np.zeros((DIM, DIM), dtype=complex)
            j[target, :] = v / nv.delta
            chans.append((j, rate))
    mods = _modulations(nv, drive, dephasing=dephasing, drive_noise=drive_noise,
                        signal=signal, include_a1=False)
    levels = tuple(int(k) for k in (Lv.G0, Lv.GM, Lv.GP, Lv.A2, Lv.S))
    return HamiltonianProgram(h, mods, tuple(chans), levels, label=f"reduced/{a1_leakage}")


def leakage_estimate(nv: NVParams, drive: DriveConfig, t: float) -> float:
    """Perturbative population lost from the dark state through |A1| by time t."""
    v = a1_coupling_row(nv, drive)
    amp = abs(np.dot(v, dark_state(nv, drive))) ** 2 / nv.delta ** 2
    return float(amp * total_decay_rate(nv, "A1") * t)


__all__ = [
    "Coefficient", "Modulation", "HamiltonianProgram", "IntegratorConfig", "Trajectory",
    "BatchTrajectory", "IntegrationError", "rhs", "rk4_reference", "evolve", "evolve_batch",
    "stable_dt", "full_program", "reduced_lambda_program", "leakage_estimate",
    "DEPHASING", "DRIVE_PLUS", "DRIVE_MINUS",
]
