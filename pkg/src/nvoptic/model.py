"""Six-level NV model under two resonant lasers.

Units: time in us, every Hamiltonian coefficient in rad/us, decay rates
in 1/us.  Frequencies quoted in MHz are converted once, at the
configuration boundary, by :func:`to_internal`.

The rotating frame removes the ground-state energies, so the ground
levels sit at zero; |A2> is the energy reference and |A1> lies at -delta.
Each laser couples with matrix element ``rabi_factor * Omega_pm``;
the default 1/2 makes the dressed states of the Lambda system sit at
+-Omega/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .quantum import DIM, LevelBasis as Lv, basis_ket, transition

TWO_PI = 2.0 * math.pi
KAPPA_ZERO = 1e-12


class Convention(str, Enum):
    """How MHz-labelled inputs map onto rad/us coefficients."""

    ANGULAR = "angular"     # use the number as is
    ORDINARY = "ordinary"   # multiply by 2 pi

    @property
    def factor(self) -> float:
        return TWO_PI if self is Convention.ORDINARY else 1.0


def to_internal(value_mhz, convention: Convention | str):
    return value_mhz * Convention(convention).factor


def from_internal(value_rad, convention: Convention | str):
    return value_rad / Convention(convention).factor


SIGNAL_MODES = ("zero-field", "bias")

# (source level, target level, rate name, fraction of that rate)
DEFAULT_BRANCHING = (
    ("A2", "+1g", "gamma_ge", 0.5),
    ("A2", "-1g", "gamma_ge", 0.5),
    ("A2", "s", "gamma_se", 1.0),
    ("A1", "+1g", "gamma_ge", 0.5),
    ("A1", "-1g", "gamma_ge", 0.5),
    ("A1", "s", "gamma_se", 1.0),
    ("s", "0g", "gamma_gs", 1.0),
)


@dataclass(frozen=True)
class NVParams:
    delta: float
    c_plus: complex
    c_minus: complex
    ground_energies: tuple[float, float, float] = (0.0, 0.0, 0.0)   # E_0g, E_-1g, E_+1g
    gamma_ge: float = 17.0
    gamma_se: float = 37.0
    gamma_gs: float = 2.7
    branching: tuple = DEFAULT_BRANCHING
    rabi_factor: float = 0.5

    def __post_init__(self):
        norm = abs(self.c_plus) ** 2 + abs(self.c_minus) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"|c+|^2 + |c-|^2 = {norm!r}, must be 1 within 1e-12")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name in ("gamma_ge", "gamma_se", "gamma_gs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.rabi_factor <= 0:
            raise ValueError("rabi_factor must be positive")

    @property
    def eps_0m1(self) -> float:
        """Frame offset E_0g - E_-1g."""
        return self.ground_energies[0] - self.ground_energies[1]

    @property
    def eps_0p1(self) -> float:
        return self.ground_energies[0] - self.ground_energies[2]

    def rate(self, name: str) -> float:
        return float(getattr(self, name))

    def without_decay(self) -> "NVParams":
        return replace(self, gamma_ge=0.0, gamma_se=0.0, gamma_gs=0.0)


@dataclass(frozen=True)
class DriveConfig:
    omega_plus: float
    omega_minus: float
    phi_plus: float = 0.0
    phi_minus: float = 0.0

    def __post_init__(self):
        if self.omega_plus < 0 or self.omega_minus < 0:
            raise ValueError("Rabi amplitudes must be non-negative")

    def scaled(self, factor: float) -> "DriveConfig":
        return replace(self, omega_plus=self.omega_plus * factor, omega_minus=self.omega_minus * factor)

    @property
    def is_off(self) -> bool:
        return self.omega_plus == 0.0 and self.omega_minus == 0.0


@dataclass(frozen=True)
class SignalParams:
    eta0: float
    omega_s: float
    theta_sig: float = 0.0
    phase_policy: str = "random-per-run"
    mode: str = "zero-field"

    def __post_init__(self):
        if self.eta0 < 0:
            raise ValueError("eta0 must be non-negative")
        if self.phase_policy not in ("fixed", "random-per-run"):
            raise ValueError(f"unknown phase policy {self.phase_policy!r}")


@dataclass(frozen=True)
class FieldPreset:
    """Tabulated field configuration; frequencies in MHz-labelled units."""

    name: str
    b_bias: str
    delta: float
    c_plus: float
    c_minus: float
    eps_0m1: float
    eps_0p1: float
    signal_mode: str
    best_omega: float
    eta0: float

    def params(self, convention: Convention | str = Convention.ORDINARY, **overrides) -> NVParams:
        f = Convention(convention).factor
        # frame: |0g> carries eps_0m1 above |-1g|; only differences matter
        energies = (0.0, -self.eps_0m1 * f, -self.eps_0p1 * f)
        kw = dict(delta=self.delta * f, c_plus=self.c_plus, c_minus=self.c_minus,
                  ground_energies=energies)
        kw.update(overrides)
        return NVParams(**kw)


PRESETS = {
    "zero-field": FieldPreset(
        name="zero-field", b_bias="0 T", delta=2000.0,
        c_plus=1 / math.sqrt(2), c_minus=1 / math.sqrt(2),
        eps_0m1=2870.0, eps_0p1=2870.0, signal_mode="zero-field",
        best_omega=10.0, eta0=0.01,
    ),
    "bias": FieldPreset(
        name="bias", b_bias="0.1 T", delta=5710.0,
        # c- renormalized from the tabulated 0.178 so |c+|^2 + |c-|^2 = 1 exactly
        c_plus=0.984, c_minus=math.sqrt(1.0 - 0.984 ** 2),
        eps_0m1=67.5, eps_0p1=-5672.5, signal_mode="bias",
        best_omega=7.0, eta0=0.02,
    ),
}


def get_preset(name: str) -> FieldPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- drive geometry -------------------------------------------------------

def effective_rabi(nv: NVParams, drive: DriveConfig) -> float:
    return math.sqrt(drive.omega_plus ** 2 * abs(nv.c_plus) ** 2
                     + drive.omega_minus ** 2 * abs(nv.c_minus) ** 2)


def _require_drive(nv, drive):
    omega = effective_rabi(nv, drive)
    if omega == 0.0:
        raise ValueError("bright/dark states are undefined without drive (Omega = 0)")
    return omega


def bright_state(nv: NVParams, drive: DriveConfig) -> np.ndarray:
    omega = _require_drive(nv, drive)
    b = np.zeros(DIM, dtype=complex)
    b[Lv.GP] = nv.c_plus * drive.omega_plus * np.exp(-1j * drive.phi_plus)
    b[Lv.GM] = nv.c_minus * drive.omega_minus * np.exp(-1j * drive.phi_minus)
    return b / omega


def dark_state(nv: NVParams, drive: DriveConfig) -> np.ndarray:
    omega = _require_drive(nv, drive)
    phase = np.exp(1j * np.angle(nv.c_plus * nv.c_minus))
    d = np.zeros(DIM, dtype=complex)
    d[Lv.GP] = np.conj(nv.c_minus) * drive.omega_minus * np.exp(-1j * drive.phi_plus)
    d[Lv.GM] = -np.conj(nv.c_plus) * drive.omega_plus * np.exp(-1j * drive.phi_minus)
    return phase * d / omega


def relative_phase(nv: NVParams, drive: DriveConfig) -> float:
    """Tunable phase phi_L between the |+-1g> components of the bright state."""
    return float(np.angle(drive.omega_plus * drive.omega_minus * np.conj(nv.c_plus) * nv.c_minus)
                 + drive.phi_plus - drive.phi_minus)


def bright_phase(nv: NVParams, drive: DriveConfig) -> float:
    return float(np.angle(nv.c_plus * drive.omega_plus * np.exp(-1j * drive.phi_plus)))


def matched_drive(nv: NVParams, omega_eff: float, phi_L: float = 0.0) -> DriveConfig:
    """Amplitudes with |c+ W+| = |c- W-| and effective Rabi frequency ``omega_eff``."""
    if nv.c_plus == 0 or nv.c_minus == 0:
        raise ValueError("matched drive is unreachable with a vanishing mixing coefficient")
    if omega_eff < 0:
        raise ValueError("effective Rabi frequency must be non-negative")
    arm = omega_eff / math.sqrt(2.0)
    phi_minus = 0.0
    phi_plus = phi_L - float(np.angle(np.conj(nv.c_plus) * nv.c_minus)) + phi_minus
    return DriveConfig(
        omega_plus=arm / abs(nv.c_plus),
        omega_minus=arm / abs(nv.c_minus),
        phi_plus=phi_plus,
        phi_minus=phi_minus,
    )


def kappa(nv: NVParams, drive: DriveConfig, normalized: bool = False) -> float:
    """Residual diagonal weight of S_z in the bright/dark basis.

    The default keeps the printed 1/Omega prefactor; ``normalized=True``
    divides by Omega^2 instead, which is the dimensionless <b|S_z|b>.
    """
    omega = _require_drive(nv, drive)
    diff = abs(nv.c_plus * drive.omega_plus) ** 2 - abs(nv.c_minus * drive.omega_minus) ** 2
    return diff / omega ** 2 if normalized else diff / omega


def residual_T(nv: NVParams, drive: DriveConfig, t2star: float) -> float:
    """Decoherence time T2*/kappa from the unsuppressed noise fraction."""
    k = abs(kappa(nv, drive, normalized=True))
    # below round-off the drive is matched and nothing is left unprotected
    return math.inf if k < KAPPA_ZERO else t2star / k


# --- operators ------------------------------------------------------------

def laser_coupling(nv: NVParams, include_a1: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Excitation pieces P, M so that the laser term is
    ``Omega_+ e^{i phi_+} P + Omega_- e^{i phi_-} M + h.c.``."""
    f = nv.rabi_factor
    p = np.zeros((DIM, DIM), dtype=complex)
    m = np.zeros((DIM, DIM), dtype=complex)
    p[Lv.A2, Lv.GP] = f * np.conj(nv.c_plus)
    m[Lv.A2, Lv.GM] = f * np.conj(nv.c_minus)
    if include_a1:
        p[Lv.A1, Lv.GP] = f * nv.c_minus
        m[Lv.A1, Lv.GM] = -f * nv.c_plus
    return p, m


def drive_amplitude_operators(nv: NVParams, drive: DriveConfig, include_a1: bool = True):
    """dH/dOmega_+ and dH/dOmega_- (Hermitian), used for amplitude noise."""
    p, m = laser_coupling(nv, include_a1)
    dp = np.exp(1j * drive.phi_plus) * p
    dm = np.exp(1j * drive.phi_minus) * m
    return dp + dp.conj().T, dm + dm.conj().T


def build_laser_hamiltonian(nv: NVParams, drive: DriveConfig, include_a1: bool = True) -> np.ndarray:
    dp, dm = drive_amplitude_operators(nv, drive, include_a1)
    h = drive.omega_plus * dp + drive.omega_minus * dm
    if include_a1:
        h[Lv.A1, Lv.A1] -= nv.delta
    return h


def build_dephasing_operator() -> np.ndarray:
    """S_z restricted to the ground triplet."""
    return transition(Lv.GP, Lv.GP) - transition(Lv.GM, Lv.GM)


def a1_coupling_row(nv: NVParams, drive: DriveConfig) -> np.ndarray:
    """<A1| H_L |g> over all levels (non-zero only on |+-1g>)."""
    row = build_laser_hamiltonian(nv, drive)[Lv.A1].copy()
    row[Lv.A1] = 0.0
    return row


def signal_coupling_operator(nv: NVParams, sig: SignalParams) -> np.ndarray:
    """Pattern K of the rotating-wave signal term ``env(t) K + h.c.``.

    K maps |0g> onto the ground spin state the in-plane field couples to.
    In bias mode the far-detuned |0g> <-> |+1g> channel is dropped.
    """
    if sig.mode not in SIGNAL_MODES:
        raise ValueError(f"unknown signal mode {sig.mode!r}; expected one of {SIGNAL_MODES}")
    k = np.zeros((DIM, DIM), dtype=complex)
    k[Lv.GM, Lv.G0] = np.exp(1j * sig.theta_sig) / math.sqrt(2.0)
    if sig.mode == "zero-field":
        k[Lv.GP, Lv.G0] = np.exp(-1j * sig.theta_sig) / math.sqrt(2.0)
    return k


def signal_envelope(nv: NVParams, sig: SignalParams, t, run_phase=0.0):
    """(eta0/2) exp(i[(omega_s - eps_0,-1) t + phi_s])."""
    return 0.5 * sig.eta0 * np.exp(1j * ((sig.omega_s - nv.eps_0m1) * t + run_phase))


def build_signal_hamiltonian(nv: NVParams, sig: SignalParams, drive: DriveConfig | None,
                             t: float, run_phase: float = 0.0) -> np.ndarray:
    # drive is accepted for interface symmetry; the RWA signal term does not depend on it
    k = signal_coupling_operator(nv, sig)
    term = signal_envelope(nv, sig, t, run_phase) * k
    return term + term.conj().T


def lindblad_channels(nv: NVParams) -> list[tuple[np.ndarray, float]]:
    """Jump operators |target><source| with their rates, per the branching table."""
    channels = []
    for source, target, rate_name, fraction in nv.branching:
        rate = nv.rate(rate_name) * fraction
        if rate > 0.0:
            channels.append((transition(Lv.from_label(target), Lv.from_label(source)), rate))
    return channels


def total_decay_rate(nv: NVParams, level: str) -> float:
    return sum(nv.rate(r) * f for s, _, r, f in nv.branching if s == level)


# --- spectroscopy ---------------------------------------------------------

def resonance_frequency(nv: NVParams, drive: DriveConfig, dark=None) -> float:
    """Signal frequency resonant with |0g> -> dressed dark state.

    The full laser Hamiltonian (including |A1>) is diagonalized on the
    levels it couples; the eigenvector with the largest overlap with the
    bare dark state is taken as the dressed dark state.  ``dark`` fixes
    the reference dark state when the drive is weak or off.
    """
    if drive.is_off:
        return nv.eps_0m1
    h = build_laser_hamiltonian(nv, drive)
    active = [Lv.GM, Lv.GP, Lv.A1, Lv.A2]
    w, v = np.linalg.eigh(h[np.ix_(active, active)])
    d = dark_state(nv, drive) if dark is None else np.asarray(dark)
    overlaps = np.abs(v.conj().T @ d[active]) ** 2
    k = int(np.argmax(overlaps))
    if overlaps[k] <= 0.5:
        raise ValueError(
            f"no dressed eigenstate is dominated by the dark state (max overlap {overlaps[k]:.3f})")
    # |0g> is uncoupled and sits at zero in the rotating frame
    return float(nv.eps_0m1 - w[k])


def dressed_energies(nv: NVParams, drive: DriveConfig, include_a1: bool = True) -> np.ndarray:
    return np.linalg.eigvalsh(build_laser_hamiltonian(nv, drive, include_a1))


def ground_superposition(nv: NVParams, drive: DriveConfig) -> np.ndarray:
    """(|d_g> + |0_g>)/sqrt(2) for the given drive direction."""
    return (dark_state(nv, drive) + basis_ket(Lv.G0)) / math.sqrt(2.0)
