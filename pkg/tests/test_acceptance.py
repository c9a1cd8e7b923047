"""Acceptance gate: one test per criterion, each with its runtime budget.

Every test records a one-line verdict that is repeated in the terminal
summary under "acceptance criteria".
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from dzofl.channel import q_success
from dzofl.config import load_preset
from dzofl.costmodel import CostParams, comm_totals, convergence_time, e_bp, e_fp, e_mac, total_energy
from dzofl.engine import run_replications
from dzofl.quantizer import QuantizerSpec, certified_sigma
from dzofl.validators import (
    check_lemma1,
    check_lemma2,
    check_lemma3,
    check_lemma4,
    check_quantizer,
    check_theorem1,
    check_theorem2,
    enumerate_q,
)

E_FP_HAND = 2.346684963017054e-05
E_BP_HAND = 8.99329474e-05


def test_criterion_01_erasure_closed_form(acceptance_line):
    t0 = time.perf_counter()
    mismatches = [
        (p, N) for p in ("0.1", "0.5", "0.9") for N in (1, 2, 3, 4)
        if q_success(Fraction(p), N) != enumerate_q(Fraction(p), N)
    ]
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1
    acceptance_line(1, ok, f"12 (p,N) cases exact, {len(mismatches)} mismatches, {elapsed:.3f}s")
    assert not mismatches
    assert elapsed < 1


def test_criterion_02_expected_aggregate(acceptance_line):
    t0 = time.perf_counter()
    results = [check_lemma1(p, N, rounds=1_000_000, seed=2) for p, N in ((0.5, 3), (0.9, 10))]
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in results) and elapsed < 30
    detail = ", ".join(f"(p={r.details['p']},N={r.details['N']}) |err|/SE="
                       f"{r.details['abs_error'] / r.se:.2f}" for r in results)
    acceptance_line(2, ok, f"{detail}, {elapsed:.1f}s")
    assert all(r.passed for r in results)
    assert elapsed < 30


def test_criterion_03_quantizer(acceptance_line):
    spec = QuantizerSpec(M=16)
    t0 = time.perf_counter()
    res = check_quantizer(spec, magnitudes=np.logspace(-8, 8, 30), draws=100_000, seed=3)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 60
    acceptance_line(3, ok, f"30 magnitudes, max rel. variance {res.empirical:.3e} <= "
                           f"sigma {certified_sigma(spec):.3e}, {elapsed:.1f}s")
    assert res.passed
    assert elapsed < 60


def test_criterion_04_unbiased_direction_on_quadratic(acceptance_line):
    cfg = load_preset("lemma-quadratic")
    assert (cfg.task.kind, cfg.task.d, cfg.task.N, cfg.p) == ("quadratic", 8, 4, 0.8)
    t0 = time.perf_counter()
    res = check_lemma2(cfg, rounds=100_000)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 60
    acceptance_line(4, ok, f"error {res.empirical:.4f} vs 4 SE {res.bound:.4f}, {elapsed:.1f}s")
    assert res.passed
    assert elapsed < 60


def test_criterion_05_second_moment(acceptance_line):
    cfg = load_preset("lemma-quadratic")
    t0 = time.perf_counter()
    res = check_lemma3(cfg, gammas=(0.2, 0.1, 0.05), rounds=100_000)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 60
    ratios = ", ".join(f"{e / b:.2e}" for e, b in zip(res.empirical, res.bound))
    acceptance_line(5, ok, f"E|g|^2 / (c2 gamma^2) = {ratios}, {elapsed:.1f}s")
    assert res.passed
    assert elapsed < 60


def test_criterion_06_bias_bound_and_linear_ratio(acceptance_line):
    cfg = load_preset("lemma-nonconvex")
    assert cfg.task.kind == "nonconvex" and cfg.task.d <= 10
    t0 = time.perf_counter()
    res = check_lemma4(cfg, n_theta=20, gammas=(0.1, 0.05, 0.025), seed=6)
    elapsed = time.perf_counter() - t0
    d = res.details
    ok = res.passed and elapsed < 120
    acceptance_line(6, ok, f"bound {'ok' if d['bound_ok'] else 'violated'} (max |b|/(c3 gamma) "
                           f"{d['max_norm_over_bound']:.1e}); halving ratio in "
                           f"[{d['min_ratio']:.3f}, {d['max_ratio']:.3f}] vs 2 +- 25%, {elapsed:.1f}s")
    assert d["bound_ok"]
    assert elapsed < 120
    assert d["ratio_ok"], "bias norm does not halve with gamma"


def test_criterion_07_convergence(acceptance_line):
    cfg = load_preset("nonconvex-theorem1")
    assert (cfg.task.kind, cfg.task.d, cfg.task.N, cfg.p, cfg.uplink.M, cfg.K, cfg.replications) == \
        ("nonconvex", 20, 10, 0.9, 16, 50_000, 10)
    t0 = time.perf_counter()
    res = check_theorem1(cfg, window=0.1, threshold=0.1)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 600
    acceptance_line(7, ok, f"trailing mean {res.empirical:.3e} vs 10% of initial "
                           f"{res.details['initial']:.3e}, {elapsed:.0f}s")
    assert res.details["cumulative_nondecreasing"]
    assert res.passed
    assert elapsed < 600


def test_criterion_08_rate_bound(acceptance_line):
    cfg = load_preset("quadratic-theorem2")
    assert cfg.task.kind == "quadratic"
    t0 = time.perf_counter()
    results = run_replications(cfg.with_overrides(K=10_000))
    res = check_theorem2(cfg, Ks=(1_000, 10_000), results=results)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 600
    rows = res.details["rows"]
    detail = "; ".join(f"K={r['K']}: {r['weighted_average']:.3g} <= {r['rate_bound']:.3g}" for r in rows)
    acceptance_line(8, ok, f"{detail}; sums sandwiched: {all(r['sandwich_ok'] for r in rows)}, "
                           f"{elapsed:.0f}s")
    assert all(r["bound_ok"] for r in rows)
    assert all(r["sandwich_ok"] for r in rows)
    assert elapsed < 600


def test_criterion_09_upload_arithmetic(acceptance_line):
    t0 = time.perf_counter()
    cp = CostParams()
    d, M = 400_000, 16
    checks = {
        "640 ms per baseline round": M * d / cp.bit_rate == pytest.approx(0.640, rel=1e-15),
        "64 s for T'=100": 100 * M * d / cp.bit_rate == pytest.approx(64.0, rel=1e-15),
        "1.25 s for 10^4 slots": 10_000 * cp.slot == pytest.approx(1.25, rel=1e-15),
        "41.25 s total": convergence_time("dzofl", 10_000, cp) == pytest.approx(41.25, rel=1e-15),
        "64e7 baseline bits": comm_totals("baseline", 100, 1, M, d) == 64 * 10**7,
        "16e3 DZOFL bits (T=1000)": comm_totals("dzofl", 1_000, 1, M, d) == 16 * 10**3,
    }
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 1
    acceptance_line(9, ok, f"{len(checks) - len(failed)}/{len(checks)} figures exact, {elapsed:.4f}s")
    assert not failed
    assert elapsed < 1


def test_criterion_10_energy_model(acceptance_line):
    t0 = time.perf_counter()
    cp = CostParams()
    T_prime = 100
    T = 10 * T_prime
    dz = total_energy("dzofl", T, cp, comm_totals("dzofl", T, 1, cp.M, cp.d))
    fo = total_energy("baseline", T_prime, cp, comm_totals("baseline", T_prime, 1, cp.M, cp.d))
    checks = {
        "e_mac(32)": e_mac(cp, 32) == pytest.approx(3.7e-12, rel=1e-12),
        "e_mac(16)": e_mac(cp, 16) == pytest.approx(3.7e-12 * 0.5**1.25, rel=1e-12),
        "E_FP": e_fp(cp) == pytest.approx(E_FP_HAND, rel=1e-6),
        "E_BP": e_bp(cp) == pytest.approx(E_BP_HAND, rel=1e-6),
        "total DZOFL < baseline": dz < fo,
    }
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 1
    acceptance_line(10, ok, f"E_FP={e_fp(cp):.6e} J, E_BP={e_bp(cp):.6e} J, totals {dz:.4g} J < "
                            f"{fo:.4g} J, {elapsed:.4f}s")
    assert not failed
    assert elapsed < 1
