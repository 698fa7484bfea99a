"""Ornstein-Uhlenbeck noise for the dephasing field and the laser amplitudes.

Realizations use the exact discrete update

    x(t + dt) = x(t) exp(-dt/tau) + n * sqrt(c tau / 2 * (1 - exp(-2 dt/tau)))

with ``n`` a unit normal, so any step size samples the continuous process
without discretization bias.

Random streams are keyed by ``(master_seed, run_index, stream_id)`` through
:class:`numpy.random.SeedSequence` and drive a counter-based Philox bit
generator.  A trajectory therefore sees the same numbers no matter which
worker evaluates it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
from scipy.signal import lfilter

NORMAL_ALGORITHM = "numpy.random.Generator(Philox).standard_normal (ziggurat)"
SEED_RULE = "Philox(SeedSequence(entropy=master_seed, spawn_key=(run_index, stream_id)))"


class Stream(IntEnum):
    """Independent random streams used inside one trajectory."""

    DEPHASING = 0
    DRIVE_PLUS = 1
    DRIVE_MINUS = 2
    SIGNAL_PHASE = 3


def make_rng(master_seed: int, run_index: int, stream: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_index), int(stream)))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class OUParams:
    """Correlation time ``tau`` (us) and diffusion coefficient ``c``.

    The stationary variance is ``c * tau / 2`` in squared amplitude units.
    ``burn_in`` is the number of correlation times simulated before t = 0.
    """

    tau: float
    c: float
    initial_value: float = 0.0
    burn_in: float = 10.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.c < 0:
            raise ValueError(f"diffusion coefficient must be non-negative, got {self.c}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be non-negative, got {self.burn_in}")

    @property
    def variance(self) -> float:
        return 0.5 * self.c * self.tau

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def step_coefficients(self, dt: float) -> tuple[float, float]:
        """Decay factor and innovation scale of one exact update."""
        decay = np.exp(-dt / self.tau)
        scale = np.sqrt(self.variance * -np.expm1(-2.0 * dt / self.tau))
        return float(decay), float(scale)


@dataclass(frozen=True)
class OUState:
    value: float
    rng: np.random.Generator | None = None


def ou_step(state: OUState, dt: float, params: OUParams, normal: float | None = None) -> OUState:
    """Advance one exact update; ``normal`` overrides the Gaussian draw."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    decay, scale = params.step_coefficients(dt)
    if normal is None:
        normal = state.rng.standard_normal() if state.rng is not None else 0.0
    return replace(state, value=state.value * decay + scale * normal)


def ou_burn_in(params: OUParams, seed=None) -> OUState:
    """State at t = 0 started from ``initial_value`` at ``-burn_in * tau``.

    ``seed`` may be an int or an existing Generator.  Because the update is
    exact, the burn-in is a single step of length ``burn_in * tau``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    start = OUState(params.initial_value, rng)
    return ou_step(start, params.burn_in * params.tau, params)


def ou_path(params: OUParams, dt: float, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Values at t = 0, dt, ..., n_steps*dt after burn-in (length n_steps + 1)."""
    x0 = ou_burn_in(params, rng).value
    if n_steps == 0:
        return np.array([x0])
    decay, scale = params.step_coefficients(dt)
    draws = rng.standard_normal(n_steps)
    tail, _ = lfilter([scale], [1.0, -decay], draws, zi=[decay * x0])
    return np.concatenate(([x0], tail))


def ou_paths(
    params: OUParams | None,
    dt: float,
    n_steps: int,
    master_seed: int,
    run_indices,
    stream: int,
) -> np.ndarray:
    """Stack of independent paths, one per run index, each on its own stream."""
    run_indices = list(run_indices)
    if params is None or params.c == 0.0 and params.initial_value == 0.0:
        return np.zeros((len(run_indices), n_steps + 1))
    return np.stack([
        ou_path(params, dt, n_steps, make_rng(master_seed, r, stream)) for r in run_indices
    ])


def calibrate_dephasing(t2star: float, tau: float) -> OUParams:
    """Diffusion coefficient giving free-induction coherence exp(-1) at T2*.

    In the quasi-static limit the accumulated phase has variance
    ``(c tau / 2) t^2``; setting half of it to 1 at ``t = T2*`` gives
    ``c = 4 / (T2*^2 tau)``.
    """
    if not (t2star > 0 and tau > 0):
        raise ValueError("T2* and tau must be positive")
    if np.isinf(t2star):
        return OUParams(tau=tau, c=0.0)
    return OUParams(tau=tau, c=4.0 / (t2star ** 2 * tau))


def calibrate_drive_fluct(delta_rel: float, tau: float, omega_nominal: float = 1.0) -> OUParams:
    """Amplitude noise whose ratio to ``omega_nominal`` has std ``delta_rel``."""
    if delta_rel < 0:
        raise ValueError("relative fluctuation must be non-negative")
    return OUParams(tau=tau, c=2.0 * (delta_rel * omega_nominal) ** 2 / tau)


def ou_correlation(params: OUParams, lag) -> np.ndarray:
    return params.variance * np.exp(-np.abs(lag) / params.tau)


def ou_spectral_density(params: OUParams, omega) -> np.ndarray:
    """Fourier transform of the stationary correlation, c tau^2 / (1 + w^2 tau^2)."""
    omega = np.asarray(omega, dtype=float)
    return params.c * params.tau ** 2 / (1.0 + (omega * params.tau) ** 2)


def accumulated_phase_variance(params: OUParams, t) -> np.ndarray:
    """Variance of the integral of the stationary process over [0, t]."""
    x = np.asarray(t, dtype=float) / params.tau
    return 2.0 * params.variance * params.tau ** 2 * (x - 1.0 + np.exp(-x))


def sample_autocovariance(x: np.ndarray, lag: int) -> float:
    """Autocovariance at an integer lag, centred on the sample mean."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    if lag == 0:
        return float(np.dot(xc, xc) / (len(x) - 1))
    return float(np.dot(xc[:-lag], xc[lag:]) / (len(x) - lag - 1))


def cross_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two equally long samples."""
    return float(np.corrcoef(np.ravel(x), np.ravel(y))[0, 1])
