"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every test records one ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are also
repeated in the terminal summary (see conftest.py).
"""

import math
import time

import numpy as np
import pytest

from higherhom import field as fld
from higherhom.cell import homogenize, solve_all_cells, verify_homogenized
from higherhom.harness import SweepConfig, negative_control, run_sweep
from higherhom.multiindex import EXACT, enumerate_indices, mi
from higherhom.operators import builtin, default_lambda, estimate_garding, apply, weak_form
from higherhom.potential import (
    random_solenoidal,
    skew_potential,
    symmetrized,
    zero_functional_check,
    zero_functional_scale,
)
from higherhom.resolvent import TorusProblem, random_trig_poly, solve_epsilon

from oracles import dense_galerkin_by_sampling, harmonic_mean_quad, random_problem

RESULTS: list[str] = []
THRESHOLD = 0.9


def record(n: int, ok: bool, title: str, detail: str, elapsed: float, budget: float):
    ok = ok and elapsed < budget
    line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{elapsed:.1f}s / {budget:.0f}s]"
    RESULTS.append(line)
    print(line)
    return ok


def sweep(problem, ks, **kw):
    return run_sweep(SweepConfig(problem, ks, use_cache=False, **kw), write=False)


def test_01_homogenized_coefficient_exactness():
    t = time.perf_counter()
    oracle = harmonic_mean_quad(lambda y: 2.0 + math.sin(2 * math.pi * y))
    errs = {}
    for m in (1, 2):
        a = builtin(f"1d-m{m}-harmonic")
        hat = homogenize(a, solve_all_cells(a))
        errs[m] = abs(hat[(mi(m), mi(m))] - oracle)
    ok = all(e <= 1e-8 for e in errs.values())
    assert record(1, ok, "1d a^ = sqrt(3)", f"|err| m=1 {errs[1]:.1e}, m=2 {errs[2]:.1e} (tol 1e-8)",
                  time.perf_counter() - t, 5)


def test_02_l2_rate():
    t = time.perf_counter()
    rep = sweep("1d-m1-harmonic", [4, 8, 16, 32, 64])
    s = rep.slopes["l2_u"].slope
    assert record(2, s is not None and s >= THRESHOLD, "L2 rate, 1d m=1", f"slope {s:.3f} (>= 0.9)",
                  time.perf_counter() - t, 120)


def test_03_corrector_rate():
    t = time.perf_counter()
    slopes = {}
    for m in (1, 2):
        slopes[m] = sweep(f"1d-m{m}-harmonic", [4, 8, 16, 32, 64]).slopes["hm_vhat"].slope
    ok = all(s is not None and s >= THRESHOLD for s in slopes.values())
    assert record(3, ok, "H^m rate of u_eps - v_hat", f"slope m=1 {slopes[1]:.3f}, m=2 {slopes[2]:.3f} (>= 0.9)",
                  time.perf_counter() - t, 300)


def test_04_steklov_rate():
    t = time.perf_counter()
    s = sweep("1d-m1-harmonic", [4, 8, 16, 32, 64]).slopes["hm_steklov"].slope
    assert record(4, s is not None and s >= THRESHOLD, "H^m rate of S u_eps - u, 1d m=1", f"slope {s:.3f} (>= 0.9)",
                  time.perf_counter() - t, 120)


def test_05_two_dimensional_sweeps():
    t = time.perf_counter()
    slopes = {}
    for name in ("2d-m1-isotropic", "bilaplacian"):
        slopes[name] = sweep(name, [2, 4, 8, 16], gate=("l2_u",)).slopes["l2_u"].slope
    ok = all(s is not None and s >= THRESHOLD for s in slopes.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items()) + " (>= 0.9, k = 2..16)"
    assert record(5, ok, "2d L2 rates", detail, time.perf_counter() - t, 1200)


def test_06_skew_potential_identities():
    t = time.perf_counter()
    worst_skew = worst_div = 0.0
    for i in range(20):
        m = 1 + i % 2
        G = skew_potential(random_solenoidal(2, m, 1 + i % 6, seed=100 + i))
        worst_skew = max(worst_skew, G.skew_defect())
        worst_div = max(worst_div, G.report["divergence_residual"])
    ok = worst_skew == 0.0 and worst_div <= 1e-10
    assert record(6, ok, "skew potential, 20 inputs", f"skew defect {worst_skew:.1e}, divergence residual "
                  f"{worst_div:.1e} (<= 1e-10)", time.perf_counter() - t, 10)


def test_07_zero_functional():
    t = time.perf_counter()
    worst = 0.0
    control = 0.0
    for i in range(20):
        m = 1 + i % 2
        G = skew_potential(random_solenoidal(2, m, 1 + i % 6, seed=100 + i))
        S = symmetrized(G)
        for j in range(10):
            phi = random_trig_poly(2, 3, seed=1000 * i + j)
            u = random_trig_poly(2, 2, seed=5000 + 1000 * i + j)
            k = 1 + j % 3
            worst = max(worst, abs(zero_functional_check(G, u, phi, k)) / zero_functional_scale(G, u, phi, k))
            control = max(control, abs(zero_functional_check(S, u, phi, k)) / zero_functional_scale(S, u, phi, k))
    ok = worst <= 1e-10 and control > 1e-6
    assert record(7, ok, "zero functional", f"max |F|/scale {worst:.1e} (<= 1e-10), symmetric control {control:.1e} (> 0)",
                  time.perf_counter() - t, 10)


def test_08_dense_oracle_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    cases = [(1, 1, 4), (1, 2, 8), (2, 1, 2), (2, 2, 4), (2, 1, 8)]
    worst = 0.0
    for d, m, k in cases:
        a = random_problem(rng, d, m)
        lam = default_lambda(estimate_garding(a))
        f = random_trig_poly(d, 3, int(rng.integers(1 << 30)))
        u = solve_epsilon(TorusProblem(a, k, lam, f, 8))
        M = dense_galerkin_by_sampling(a, 8, k)
        x = np.linalg.solve(M + lam * np.eye(len(M)), fld.resize_coeffs(f.coeffs, 8).reshape(-1))
        worst = max(worst, np.linalg.norm(u.coeffs.reshape(-1) - x) / np.linalg.norm(x))
    assert record(8, worst <= 1e-8, "iterative vs dense solve, 5 problems", f"max rel diff {worst:.1e} (<= 1e-8)",
                  time.perf_counter() - t, 60)


def test_09_negative_control():
    t = time.perf_counter()
    ctrl = negative_control(SweepConfig("1d-m1-harmonic", [4, 8, 16, 32, 64], use_cache=False))
    ok = (ctrl.control_slope is not None and ctrl.control_slope < 0.3 and ctrl.real_slope >= THRESHOLD
          and ctrl.passed)
    assert record(9, ok, "naive-mean control", f"control slope {ctrl.control_slope:.3f} (< 0.3), real "
                  f"{ctrl.real_slope:.3f} (>= 0.9)", time.perf_counter() - t, 120)


def test_10_structural_invariants():
    t = time.perf_counter()
    checks = {}
    rng = np.random.default_rng(10)
    means, symbols = [], []
    for name in ("1d-m1-harmonic", "1d-m2-harmonic", "2d-m1-isotropic", "bilaplacian", "plate-tensor", "1d-m1-lower"):
        a = builtin(name)
        cells = solve_all_cells(a)
        means.extend(abs(fld.mean(f)) for f in cells.solutions.values())
        hat = homogenize(a, cells)
        v = verify_homogenized(hat, a.lambda0)
        symbols.append(v["verdict"] == "ok" and v["symbol_min"] >= a.lambda0 - 1e-9)
    checks["mean N = 0"] = max(means) == 0.0
    checks["symbol positivity"] = all(symbols)

    garding = []
    for d, m in ((1, 1), (1, 2), (2, 1)):
        a = random_problem(rng, d, m).scale_lower(4.0)
        N = 6 if d == 2 else 16
        lam2 = estimate_garding(a, cutoff=N)
        for _ in range(5):
            c = rng.normal(size=(2 * N + 1,) * d) + 1j * rng.normal(size=(2 * N + 1,) * d)
            u = fld.PeriodicField(c)
            lhs = weak_form(a, u, u) + (lam2 + 1e-8) * fld.l2_norm(u) ** 2
            garding.append(lhs >= a.lambda0 / 2 * fld.norms(u, m).seminorms[m] ** 2 * (1 - 1e-10))
    checks["Garding"] = all(garding)

    parseval, duality = [], []
    for d, m, k in ((1, 1, 2), (2, 2, 1), (2, 1, 3)):
        a = random_problem(rng, d, m)
        N = 5 if d == 2 else 10
        u = fld.PeriodicField(rng.normal(size=(2 * N + 1,) * d) + 1j * rng.normal(size=(2 * N + 1,) * d))
        phi = fld.PeriodicField(rng.normal(size=(2 * N + 1,) * d) + 1j * rng.normal(size=(2 * N + 1,) * d))
        grid = u.grid(2 * N + 1)
        parseval.append(abs(np.mean(grid**2) - fld.l2_norm(u) ** 2) <= 1e-12 * fld.l2_norm(u) ** 2)
        w = weak_form(a, u, phi, k)
        duality.append(abs(fld.inner(apply(a, u, k), phi) - w) <= 1e-10 * abs(w))
    checks["Parseval"] = all(parseval)
    checks["duality"] = all(duality)
    ok = all(checks.values())
    detail = ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
    assert record(10, ok, "structural invariants", detail, time.perf_counter() - t, 60)
