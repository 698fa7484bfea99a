"""Small dense quantum-state helpers for the six-level NV model.

Everything here works on plain complex numpy arrays.  The level ordering
is fixed by :class:`LevelBasis` and shared by every other module.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
NORM_TOL = 1e-12


class LevelBasis(IntEnum):
    """Index of each NV level in every operator and state vector."""

    G0 = 0      # |0_g>
    GM = 1      # |-1_g>
    GP = 2      # |+1_g>
    A1 = 3
    A2 = 4
    S = 5       # singlet shelf

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "LevelBasis":
        for level, name in _LABELS.items():
            if name == label:
                return level
        raise KeyError(f"unknown level label {label!r}")


_LABELS = {
    LevelBasis.G0: "0g",
    LevelBasis.GM: "-1g",
    LevelBasis.GP: "+1g",
    LevelBasis.A1: "A1",
    LevelBasis.A2: "A2",
    LevelBasis.S: "s",
}

DIM = len(LevelBasis)


def basis_ket(level: int, dim: int = DIM) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[int(level)] = 1.0
    return v


def outer(ket: np.ndarray, bra: np.ndarray) -> np.ndarray:
    """|ket><bra| for two column vectors."""
    return np.outer(ket, np.conj(bra))


def transition(to_level: int, from_level: int, dim: int = DIM) -> np.ndarray:
    """Elementary operator |to><from|."""
    op = np.zeros((dim, dim), dtype=complex)
    op[int(to_level), int(from_level)] = 1.0
    return op


def projector(level: int, dim: int = DIM) -> np.ndarray:
    return transition(level, level, dim)


def pure_state(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return outer(ket, ket)


def adjoint(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


def expectation(rho: np.ndarray, op: np.ndarray) -> complex:
    """tr(rho A) without forming the product."""
    return complex(np.sum(rho * op.T))


def is_normalized(ket: np.ndarray, tol: float = NORM_TOL) -> bool:
    return abs(np.linalg.norm(ket) - 1.0) <= tol


@dataclass(frozen=True)
class DensityDiagnostics:
    hermiticity: float
    trace_error: float
    min_eigenvalue: float
    hermitian_ok: bool
    trace_ok: bool
    positive_ok: bool

    @property
    def ok(self) -> bool:
        return self.hermitian_ok and self.trace_ok and self.positive_ok

    def describe(self) -> str:
        problems = []
        if not self.hermitian_ok:
            problems.append(f"non-Hermitian (max |rho - rho^dag| = {self.hermiticity:.3e})")
        if not self.trace_ok:
            problems.append(f"trace drift {self.trace_error:.3e}")
        if not self.positive_ok:
            problems.append(f"negative eigenvalue {self.min_eigenvalue:.3e}")
        return "; ".join(problems) if problems else "valid density matrix"


def validate_density(
    rho: np.ndarray,
    trace_tol: float = TRACE_TOL,
    hermitian_tol: float = HERMITIAN_TOL,
    positivity_tol: float = POSITIVITY_TOL,
) -> DensityDiagnostics:
    rho = np.asarray(rho)
    herm = float(np.max(np.abs(rho - adjoint(rho)))) if rho.size else 0.0
    tr_err = float(abs(np.trace(rho) - 1.0))
    # eigvalsh reads one triangle only, so symmetrize first
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (rho + adjoint(rho)))))
    return DensityDiagnostics(
        hermiticity=herm,
        trace_error=tr_err,
        min_eigenvalue=min_eig,
        hermitian_ok=herm <= hermitian_tol,
        trace_ok=tr_err <= trace_tol,
        positive_ok=min_eig >= -positivity_tol,
    )


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))
