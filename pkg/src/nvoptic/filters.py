"""Second-order (Gaussian) coherence model in the frequency domain.

Under a matched drive the dark-state coherence sees the dephasing field
through the modulation M(t1, t2) = cos[Omega (t1 - t2) / 2].  Its double
Fourier transform over [0, t]^2 is the filter function

    M~(w) = 2 sin^2((w - Omega/2) t/2) / (w - Omega/2)^2
          + 2 sin^2((w + Omega/2) t/2) / (w + Omega/2)^2

and to second order L = 1 - (1 / 4 pi) int S(w) M~(w) dw.

When the dark state sits an energy E away from the centre of the dressed
pair (for example through the |A1> light shift) the modulation becomes
cos(E tau) cos(Omega tau / 2), the mean of two unshifted modulations at
Omega +- 2E.  ``FilterParams.offset`` carries E.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .noise import OUParams, ou_spectral_density


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterParams:
    omega: float          # drive Omega, rad/us
    t: float              # horizon, us
    offset: float = 0.0   # dark-state energy above the dressed-pair centre, rad/us

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if self.omega < 0:
            raise ValueError("Omega must be non-negative")

    def split(self) -> tuple["FilterParams", ...]:
        """Unshifted parameter sets whose mean reproduces the offset."""
        if self.offset == 0.0:
            return (self,)
        return tuple(FilterParams(abs(self.omega + s * 2.0 * self.offset), self.t)
                     for s in (1.0, -1.0))


def modulation(t1, t2, omega, offset=0.0):
    tau = np.asarray(t1) - np.asarray(t2)
    return np.cos(0.5 * omega * tau) * np.cos(offset * tau)


def _lobe(x, t):
    # 2 sin^2(x t / 2) / x^2, written through sinc so x = 0 gives t^2 / 2
    return 0.5 * t * t * np.sinc(x * t / (2.0 * math.pi)) ** 2


def filter_function(omega, params: FilterParams):
    if params.offset:
        return 0.5 * sum(filter_function(omega, p) for p in params.split())
    w = np.asarray(omega, dtype=float)
    half = 0.5 * params.omega
    return _lobe(w - half, params.t) + _lobe(w + half, params.t)


def filter_approx(omega, params: FilterParams):
    """Single-lobe power-law approximation C sin^2(D t/2) / D^2 with
    C = 4 w Omega / (w + Omega/2)^2 and D = |w - Omega/2|."""
    w = np.asarray(omega, dtype=float)
    half = 0.5 * params.omega
    c = 4.0 * w * params.omega / (w + half) ** 2
    return c * 0.5 * _lobe(np.abs(w - half), params.t)


def second_order_L(spectrum, params: FilterParams, rtol: float = 1e-6) -> float:
    """1 - (1/4 pi) int S(w) M~(w) dw by piecewise adaptive quadrature.

    ``spectrum`` is a callable S(w) or an :class:`OUParams`.  The finite
    window is cut into pieces a few filter oscillations long, with the
    lobe centres as break points; the two tails are integrated to
    infinity separately.
    """
    if params.offset:
        return 0.5 * sum(second_order_L(spectrum, p, rtol) for p in params.split())
    if isinstance(spectrum, OUParams):
        ou = spectrum
        spectrum = lambda w: ou_spectral_density(ou, w)  # noqa: E731
    half = 0.5 * params.omega
    period = 2.0 * math.pi / params.t
    width = half + 400.0 * period
    edges = np.arange(-width, width + 0.5 * period, 10.0 * period)
    edges = np.unique(np.concatenate([edges, [-half, half, -width, width]]))
    edges = edges[(edges >= -width) & (edges <= width)]
    # drop slivers left by rounding in arange next to the break points
    edges = edges[np.concatenate(([True], np.diff(edges) > 1e-6 * period))]

    def f(w):
        return float(spectrum(w) * filter_function(w, params))

    # rough pass fixes an absolute floor so near-zero pieces do not stall
    rough = sum(integrate.quad(f, a, b, limit=50)[0] for a, b in zip(edges[:-1], edges[1:]))
    floor = 1e-3 * rtol * abs(rough) / len(edges)
    if floor == 0.0:
        return 1.0 - rough / (4.0 * math.pi)
    parts, errs = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(f, a, b, epsrel=1e-2 * rtol, epsabs=floor, limit=200)
        parts.append(val)
        errs.append(err)
    for sign in (1.0, -1.0):
        val, err = _tail(lambda w: spectrum(sign * w), half, params.t, width, floor)
        parts.append(val)
        errs.append(err)
    total = math.fsum(parts)
    err = math.fsum(errs)
    if total != 0.0 and err > rtol * abs(total):
        raise QuadratureError(f"quadrature error estimate {err:.3e} exceeds rtol={rtol} "
                              f"of the integral {total:.6e}")
    return 1.0 - total / (4.0 * math.pi)


def _tail(spec, half, t, start, floor):
    """int_start^inf S(w) M~(w) dw with the oscillating parts done by QAWF.

    Each lobe is (1 - cos((w -+ h) t)) / (w -+ h)^2; the cosine is split
    into cos(w t) and sin(w t) weights.
    """
    total, err = 0.0, 0.0
    for h in (half, -half):
        g = lambda w, h=h: spec(w) / (w - h) ** 2  # noqa: E731
        v, e = integrate.quad(g, start, np.inf, epsabs=floor, limit=400)
        total += v
        err += e
        for weight, factor in (("cos", math.cos(h * t)), ("sin", math.sin(h * t))):
            if factor == 0.0:
                continue
            v, e = integrate.quad(g, start, np.inf, weight=weight, wvar=t, epsabs=floor,
                                  limlst=100)
            total -= factor * v
            err += abs(factor) * e
    return total, err


def ou_deficit_closed_form(ou: OUParams, params: FilterParams) -> float:
    """1 - L for an OU spectrum, from the time-domain double integral.

    1 - L = (c tau / 2) Re[t/p - (1 - exp(-p t)) / p^2], p = 1/tau - i Omega/2.
    """
    if params.offset:
        return 0.5 * sum(ou_deficit_closed_form(ou, p) for p in params.split())
    p = 1.0 / ou.tau - 0.5j * params.omega
    t = params.t
    return float(ou.variance * np.real(t / p + np.expm1(-p * t) / p ** 2))
