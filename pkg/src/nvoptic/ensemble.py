"""Seeded Monte Carlo averages over noise and signal-phase realizations.

Runs are processed in fixed blocks of ``block_size`` consecutive run
indices.  Each block is integrated independently (any worker, any order)
and the block statistics are merged afterwards in block order, so the
result is bitwise independent of the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .engine import (
    DEPHASING,
    DRIVE_MINUS,
    DRIVE_PLUS,
    HamiltonianProgram,
    IntegrationError,
    IntegratorConfig,
    evolve_batch,
)
from .noise import SEED_RULE, OUParams, Stream, make_rng, ou_paths

STREAM_IDS = {
    DEPHASING: Stream.DEPHASING,
    DRIVE_PLUS: Stream.DRIVE_PLUS,
    DRIVE_MINUS: Stream.DRIVE_MINUS,
}

# labels for the initial states the observables helpers understand
DARK_PLUS_ZERO = "dark+0"
GROUND_ZERO = "0g"


_observers = []


@contextmanager
def observe(callback):
    """Call ``callback(manifest)`` after every ensemble finished inside the block."""
    _observers.append(callback)
    try:
        yield
    finally:
        _observers.remove(callback)


@dataclass(frozen=True)
class Scenario:
    program: HamiltonianProgram
    rho0: np.ndarray
    T: float
    integrator: IntegratorConfig
    observables: dict
    noise: dict = field(default_factory=dict)      # stream name -> OUParams
    random_signal_phase: bool = False
    initial_state: str = ""
    label: str = ""


@dataclass(frozen=True)
class EnsembleConfig:
    n_runs: int
    seed: int = 0
    dephasing: bool = True
    drive_fluct: bool = True
    signal_phase: bool = True
    workers: int = 1
    block_size: int = 64

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.workers < 1 or self.block_size < 1:
            raise ValueError("workers and block_size must be >= 1")

    def stream_enabled(self, name: str) -> bool:
        if name == DEPHASING:
            return self.dephasing
        return self.drive_fluct


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict
    stderr: dict
    n_runs: int
    seed: int
    initial_state: str = ""
    manifest: dict = field(default_factory=dict)


@dataclass
class _Stats:
    n: int
    mean: np.ndarray
    m2: np.ndarray     # sum of |x - mean|^2

    @classmethod
    def of(cls, x):
        mean = x.mean(axis=0)
        return cls(x.shape[0], mean, np.sum(np.abs(x - mean) ** 2, axis=0))

    def merge(self, other: "_Stats") -> "_Stats":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + np.abs(delta) ** 2 * (self.n * other.n / n)
        return _Stats(n, mean, m2)


def run_phases(seed: int, runs) -> np.ndarray:
    """Uniform signal phase on [0, 2 pi) for each run, from its own stream."""
    return np.array([make_rng(seed, r, Stream.SIGNAL_PHASE).uniform(0.0, 2.0 * math.pi)
                     for r in runs])


def block_noise(scenario: Scenario, cfg: EnsembleConfig, runs) -> dict:
    n_steps = scenario.integrator.n_steps(scenario.T)
    out = {}
    for name in scenario.program.noise_streams:
        params: OUParams | None = scenario.noise.get(name)
        if params is None or not cfg.stream_enabled(name):
            continue
        out[name] = ou_paths(params, scenario.integrator.dt, n_steps, cfg.seed, runs,
                             STREAM_IDS[name])
    return out


def _run_block(scenario: Scenario, cfg: EnsembleConfig, start: int, stop: int):
    runs = range(start, stop)
    noise = block_noise(scenario, cfg, runs)
    phases = (run_phases(cfg.seed, runs) if scenario.random_signal_phase and cfg.signal_phase
              else np.zeros(len(runs)))
    try:
        batch = evolve_batch(scenario.rho0, scenario.program, scenario.integrator, scenario.T,
                             noise, scenario.observables, phases, n_runs=len(runs))
    except IntegrationError as exc:
        run = None if exc.run_index is None else start + exc.run_index
        raise IntegrationError(f"run {run}: {exc}", run_index=run, step=exc.step) from exc
    stats = {k: _Stats.of(v) for k, v in batch.channels.items()}
    return batch.times, stats, batch.n_steps * len(runs), float(np.max(batch.hermiticity_drift))


def run_ensemble(cfg: EnsembleConfig, scenario: Scenario) -> EnsembleResult:
    started = time.perf_counter()
    bounds = [(a, min(a + cfg.block_size, cfg.n_runs))
              for a in range(0, cfg.n_runs, cfg.block_size)]
    if cfg.workers == 1:
        blocks = [_run_block(scenario, cfg, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            blocks = list(pool.map(lambda ab: _run_block(scenario, cfg, *ab), bounds))

    times = blocks[0][0]
    stats = dict(blocks[0][1])
    for _, block_stats, _, _ in blocks[1:]:
        for k in stats:
            stats[k] = stats[k].merge(block_stats[k])
    n = cfg.n_runs
    mean = {k: s.mean for k, s in stats.items()}
    if n > 1:
        stderr = {k: np.sqrt(s.m2 / (n - 1) / n) for k, s in stats.items()}
    else:
        stderr = {k: np.zeros_like(s.m2) for k, s in stats.items()}
    manifest = {
        "scenario": scenario.label,
        "program": scenario.program.label,
        "n_runs": n,
        "seed": int(cfg.seed),
        "seed_rule": SEED_RULE,
        "block_size": cfg.block_size,
        "switches": {"dephasing": cfg.dephasing, "drive_fluct": cfg.drive_fluct,
                     "signal_phase": cfg.signal_phase},
        "dt": scenario.integrator.dt,
        "T": scenario.T,
        "steps": int(sum(b[2] for b in blocks)),
        "max_hermiticity_drift": max(b[3] for b in blocks),
        "wall_seconds": time.perf_counter() - started,
        "version": __version__,
    }
    for callback in list(_observers):
        callback(manifest)
    return EnsembleResult(times, mean, stderr, n, int(cfg.seed), scenario.initial_state, manifest)


def coherence_L(result: EnsembleResult, channel: str = "rho_d0") -> np.ndarray:
    """L(t) = 2 <rho_{d,0}>(t); needs the (|d> + |0>)/sqrt(2) initial state."""
    if result.initial_state != DARK_PLUS_ZERO:
        raise ValueError(f"coherence needs initial state {DARK_PLUS_ZERO!r}, "
                         f"got {result.initial_state!r}")
    return 2.0 * result.mean[channel]


def coherence_stderr(result: EnsembleResult, channel: str = "rho_d0") -> np.ndarray:
    return 2.0 * result.stderr[channel]


def population_P0(result: EnsembleResult, channel: str = "P0") -> np.ndarray:
    return np.real(result.mean[channel])
