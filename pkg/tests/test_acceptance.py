"""Exit criteria of the build, at reduced run counts.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts.  Monte Carlo runs use fixed seeds, so results are repeatable.
"""

import functools
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE
from nvoptic import engine as e
from nvoptic import ensemble as en
from nvoptic import experiments as ex
from nvoptic import filters as f
from nvoptic import model as m
from nvoptic import noise as nz
from nvoptic.quantum import LevelBasis as Lv, basis_ket, pure_state, validate_density

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def report(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def spectrum(preset, controlled, delta_omega=0.0):
    """Spectrum at t = 50 us with 500 runs per point (cached across criteria)."""
    pr = m.get_preset(preset)
    s = ex.Settings(preset=preset, n_runs=500, seed=21, record_every=50.0,
                    delta_omega=delta_omega)
    omega = pr.best_omega if controlled else 0.0
    return timed(ex.exp_spectrum, s, omega, pr.eta0, 50.0)


def test_criterion_01_ou_exactness():
    t0 = time.perf_counter()
    p = nz.calibrate_dephasing(3.0, 25.0)
    n = 100_000
    rng = nz.make_rng(1, 0, nz.Stream.DEPHASING)
    x0 = nz.ou_step(nz.OUState(np.zeros(n)), p.burn_in * p.tau, p,
                    normal=rng.standard_normal(n)).value
    x1 = nz.ou_step(nz.OUState(x0), p.tau, p, normal=rng.standard_normal(n)).value
    var = p.variance
    z_mean = abs(x0.mean()) / math.sqrt(var / n)
    z_var = abs(x0.var() - var) / (var * math.sqrt(2 / (n - 1)))
    rho = np.corrcoef(x0, x1)[0, 1]
    z_corr = abs(rho - math.exp(-1)) / ((1 - math.exp(-2)) / math.sqrt(n))
    # ten chained steps of tau/10 against one step of tau from the same start
    chained = x0
    for _ in range(10):
        chained = nz.ou_step(nz.OUState(chained), p.tau / 10, p,
                             normal=rng.standard_normal(n)).value
    pval = stats.ks_2samp(chained, x1).pvalue
    wall = time.perf_counter() - t0
    ok = max(z_mean, z_var, z_corr) < 3 and pval > 0.01 and wall < 10
    report(1, ok, f"z(mean,var,corr)=({z_mean:.2f},{z_var:.2f},{z_corr:.2f}) "
                  f"KS p={pval:.3f} time={wall:.1f}s")


def test_criterion_02_free_induction():
    s = ex.Settings(n_runs=2000, seed=2, record_every=0.1)
    (times, absL, err, _), wall = timed(ex.coherence_run, s, 0.0, 4.0)
    L3 = absL[np.argmin(np.abs(times - 3.0))]
    gap = np.max(np.abs(absL - np.exp(-times ** 2 / 9.0)))
    ok = abs(L3 - math.exp(-1)) <= 0.05 and gap <= 0.05 and wall < 120
    report(2, ok, f"|L(3)|={L3:.3f} (target {math.exp(-1):.3f}) "
                  f"max|L-gauss|={gap:.3f} time={wall:.0f}s")


def test_criterion_03_coherence_protection():
    s = ex.Settings(n_runs=1000, seed=3, record_every=0.5)
    t0 = time.perf_counter()
    tf, Lf, _, _ = ex.coherence_run(s, 0.0, 50.0)
    tc, Lc, _, _ = ex.coherence_run(s, 10.0, 200.0)
    wall = time.perf_counter() - t0
    L50c = Lc[np.argmin(np.abs(tc - 50.0))]
    Tf, _ = ex.coherence_time(tf, Lf)
    Tc, seen = ex.coherence_time(tc, Lc)
    factor = Tc / Tf
    ok = L50c >= 0.5 and Lf[-1] <= 0.05 and factor >= 10 and wall < 900
    report(3, ok, f"|L(50)| controlled={L50c:.3f} free={Lf[-1]:.3f} "
                  f"T_e controlled={Tc:.1f}{'' if seen else ' (extrapolated)'} "
                  f"free={Tf:.2f} factor={factor:.1f} time={wall:.0f}s")


def test_criterion_04_drive_optimum():
    omegas = [2.0, 5.0, 7.0, 10.0, 15.0, 25.0, 50.0]
    windows = {"zero-field": (5.0, 20.0), "bias": (3.5, 14.0)}
    t0 = time.perf_counter()
    parts, ok = [], True
    for preset, (lo, hi) in windows.items():
        s = ex.Settings(preset=preset, n_runs=300, seed=4, record_every=50.0)
        ser = ex.exp_coherence_vs_drive(s, omegas, 50.0)
        k = int(np.argmax(ser.y))
        best = omegas[k]
        ok &= 0 < k < len(omegas) - 1 and lo <= best <= hi
        curve = ",".join(f"{v:.3f}" for v in ser.y)
        parts.append(f"{preset}: argmax={best:g} in [{lo:g},{hi:g}]? |L|=[{curve}]")
    wall = time.perf_counter() - t0
    ok &= wall < 3600
    report(4, ok, "; ".join(parts) + f" time={wall:.0f}s")


def test_criterion_05_spectrum_narrowing():
    checks = []
    zc, w1 = spectrum("zero-field", True)
    zu, w2 = spectrum("zero-field", False)
    bc, w3 = spectrum("bias", True)
    bu, w4 = spectrum("bias", False)

    def within(v, target, tol):
        return v is not None and abs(v - target) <= tol

    checks.append(("zf ctrl depth", zc.depth, within(zc.depth, 0.63, 0.10)))
    checks.append(("zf ctrl fwhm", zc.fwhm, within(zc.fwhm, 0.02, 0.01)))
    checks.append(("zf free depth", zu.depth, within(zu.depth, 0.21, 0.08)))
    checks.append(("zf free fwhm", zu.fwhm, within(zu.fwhm, 0.2, 0.08)))
    checks.append(("bias ctrl depth", bc.depth, within(bc.depth, 0.42, 0.10)))
    checks.append(("bias free depth", bu.depth, within(bu.depth, 0.30, 0.10)))
    ratio = (bu.fwhm / bc.fwhm) if bu.fwhm and bc.fwhm else math.nan
    checks.append(("bias fwhm ratio", ratio, ratio >= 5))
    wall = w1 + w2 + w3 + w4
    ok = all(c[2] for c in checks) and wall < 7200
    detail = " ".join(f"{name}={v if v is None else round(v, 4)}{'' if good else '(x)'}"
                      for name, v, good in checks)
    report(5, ok, detail + f" time={wall:.0f}s")


def test_criterion_06_direction_inference():
    theta_sig = 0.0
    thetas = [round(k * 0.05, 10) * math.pi for k in range(-10, 11)]
    s = ex.Settings(n_runs=500, seed=6, record_every=50.0)
    ser, wall = timed(ex.exp_angle, s, thetas, theta_sig, 10.0, 0.01, 50.0)
    th = np.array(thetas)
    peak = th[int(np.argmax(ser.y))]
    near = np.abs(th - theta_sig) <= 0.1 * math.pi + 1e-9
    drop = float(np.max(ser.y) - np.min(ser.y[near]))
    ok = abs(peak - theta_sig) <= 0.05 * math.pi + 1e-9 and drop <= 0.03 and wall < 1800
    report(6, ok, f"argmax theta={peak / math.pi:.2f}pi plateau drop={drop:.4f} "
                  f"(limit 0.03) time={wall:.0f}s")


def test_criterion_07_sensitivity_crossover():
    t0 = time.perf_counter()

    def pair(preset, times):
        pr = m.get_preset(preset)
        s = ex.Settings(preset=preset, n_runs=500, seed=7, record_every=5.0)
        ctrl = ex.exp_sensitivity(s, times, pr.best_omega, pr.eta0)
        free = ex.exp_sensitivity(s, times, 0.0, pr.eta0)
        return ctrl, free

    bc, bu = pair("bias", [5.0, 30.0])
    zc, zu = pair("zero-field", [20.0, 40.0, 55.0])
    wall = time.perf_counter() - t0
    want = [
        ("bias t=5 free better", bu.sensitivity[0] < bc.sensitivity[0]),
        ("bias t=30 ctrl better", bc.sensitivity[1] < bu.sensitivity[1]),
        ("zf t=20 ctrl better", zc.sensitivity[0] < zu.sensitivity[0]),
        ("zf t=40 ctrl better", zc.sensitivity[1] < zu.sensitivity[1]),
        ("zf t=55 ctrl degraded", zc.sensitivity[2] > zc.sensitivity[1]),
    ]
    flags = int(sum(r.flagged.sum() for r in (bc, bu, zc, zu)))
    ok = all(w for _, w in want) and wall < 3600
    nums = (f"bias ctrl/free={np.round(bc.sensitivity, 4)}/{np.round(bu.sensitivity, 4)} "
            f"zf ctrl/free={np.round(zc.sensitivity, 4)}/{np.round(zu.sensitivity, 4)}")
    bad = [name for name, w in want if not w]
    report(7, ok, f"{nums} flagged={flags} failed={bad} time={wall:.0f}s")


def test_criterion_08_filter_oracle():
    t0 = time.perf_counter()
    parts, ok = [], True
    # weak noise: the Monte Carlo deficit stays at or below 0.1, and under drive
    # the noise-induced shift of the dressed gap (~sigma^2/Omega) stays small
    # against 1/t.  The oracle carries the dark-state light shift as an offset.
    # The deficit has a relative standard error near sqrt(2/n); 10^4 runs put
    # the 5% tolerance near three of them.
    for omega, t2star, t in ((0.0, 20.0, 3.0), (10.0, 10.0, 20.0)):
        s = ex.Settings(n_runs=10_000, seed=8, record_every=t, decay=False, t2star=t2star)
        _, absL, err, _ = ex.coherence_run(s, omega, t)
        mc = 1 - absL[-1]
        params = f.FilterParams(omega * s.factor, t, ex.dark_offset(s, omega))
        pred = 1 - f.second_order_L(nz.calibrate_dephasing(t2star, 25.0), params)
        rel = abs(mc / pred - 1)
        ok &= rel <= 0.05 and mc <= 0.1
        parts.append(f"omega={omega:g}: mc={mc:.3e}+-{err[-1]:.1e} oracle={pred:.3e} rel={rel:.3f}")
    wall = time.perf_counter() - t0
    ok &= wall < 600
    report(8, ok, "; ".join(parts) + f" time={wall:.0f}s")


def test_criterion_09_structural_invariants():
    t0 = time.perf_counter()
    worst = {}
    for name in m.PRESETS:
        nv = m.get_preset(name).params()
        drive = m.matched_drive(nv, 2 * math.pi * 10, 0.4)
        h = m.build_laser_hamiltonian(nv, drive, include_a1=False)
        worst["dark"] = max(worst.get("dark", 0), np.max(np.abs(h @ m.dark_state(nv, drive))))
        w = np.sort(m.dressed_energies(nv, drive, include_a1=False))
        om = m.effective_rabi(nv, drive)
        gap_err = np.max(np.abs(w - np.array([-om / 2, 0, 0, 0, 0, om / 2])))
        worst["gap"] = max(worst.get("gap", 0), gap_err)
        worst["kappa"] = max(worst.get("kappa", 0), abs(m.kappa(nv, drive)))

    # full six-level model with decay, drive and signal
    nv = m.get_preset("zero-field").params()
    drive = m.matched_drive(nv, 2 * math.pi * 10)
    sig = m.SignalParams(2 * math.pi * 0.2, m.resonance_frequency(nv, drive))
    prog = e.full_program(nv, drive, signal=sig)
    T = 0.5
    n = math.ceil(T / (0.9 * e.stable_dt(prog)))
    cfg = e.IntegratorConfig(T / n, record_stride=n)
    tr = e.evolve(pure_state(basis_ket(Lv.G0)), prog, cfg, T, run_phase=0.7)
    diag = validate_density(tr.final_state, positivity_tol=1e-8)

    # RK4 order on the reduced model with decay and a time-dependent signal
    prog = e.reduced_lambda_program(nv, drive, signal=sig)
    rho0 = pure_state(basis_ket(Lv.G0))

    def final(dt):
        n = round(1.0 / dt)
        return e.evolve(rho0, prog, e.IntegratorConfig(dt, record_stride=n,
                                                       check_stiffness=False),
                        1.0, run_phase=0.7).final_state

    ref = final(0.0005)
    e1 = np.max(np.abs(final(0.008) - ref))
    e2 = np.max(np.abs(final(0.004) - ref))
    order = math.log2(e1 / e2)

    # thread count does not change an ensemble
    s = ex.Settings(n_runs=130, seed=9, record_every=1.0)
    sc = ex.signal_scenario(s, 10.0, ex.resonance(s, 10.0), 0.05, 2.0)
    a = en.run_ensemble(s.ensemble(workers=1), sc)
    b = en.run_ensemble(s.ensemble(workers=2), sc)
    same = all(np.array_equal(a.mean[k], b.mean[k]) for k in a.mean)
    wall = time.perf_counter() - t0

    ok = (worst["dark"] < 1e-12 and worst["gap"] < 1e-9 and worst["kappa"] < 1e-12
          and diag.ok and tr.max_trace_error < 1e-8 and tr.max_hermiticity_drift < 1e-10
          and 3.5 <= order <= 4.5 and same and wall < 60)
    report(9, ok, f"dark={worst['dark']:.1e} gap={worst['gap']:.1e} kappa={worst['kappa']:.1e} "
                  f"trace={tr.max_trace_error:.1e} herm={tr.max_hermiticity_drift:.1e} "
                  f"min_eig={diag.min_eigenvalue:.1e} order={order:.2f} "
                  f"threads_identical={same} time={wall:.0f}s")


def test_criterion_10_drive_fluctuations():
    t0 = time.perf_counter()
    base, _ = spectrum("zero-field", True)
    noisy, _ = spectrum("zero-field", True, 0.005)
    d_depth = abs(noisy.depth - base.depth)
    s = ex.Settings(n_runs=1000, seed=10, record_every=50.0)
    _, L0, _, _ = ex.coherence_run(s, 10.0, 50.0)
    _, L2, _, _ = ex.coherence_run(replace(s, delta_omega=0.02), 10.0, 50.0)
    rel = abs(L2[-1] / L0[-1] - 1)
    wall = time.perf_counter() - t0
    ok = d_depth < 0.05 and rel <= 0.2 and wall < 1800
    report(10, ok, f"depth {base.depth:.3f}->{noisy.depth:.3f} (change {d_depth:.3f}) "
                   f"|L(50)| {L0[-1]:.3f}->{L2[-1]:.3f} (rel {rel:.3f}) time={wall:.0f}s")
