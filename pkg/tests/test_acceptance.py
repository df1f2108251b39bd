"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``criterion N ... PASS|FAIL`` line (visible with
``pytest -v`` or ``-s``) before asserting.
"""
import math
import time

import numpy as np
import pytest
import torch

from online_registers import verify
from online_registers.cli import main
from online_registers.encoder import DualModeEncoder
from online_registers.streaming import latency_report


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {number:<3} {title:<44} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def props_detail(props):
    return "; ".join(f"{p.passed}/{p.passed + p.failed}" + (f" [{p.first_failure}]" if p.first_failure else "") for p in props)


def run_props(suite, **kw):
    start = time.perf_counter()
    props = verify.SUITES[suite](**kw)
    return props, time.perf_counter() - start


def test_01_mask_oracle_sweep(report):
    props, secs = run_props("mask-oracle")
    ok = all(p.ok for p in props) and props[0].passed == 12 * sum(C + 1 for C in range(1, 7)) * 4 and secs < 10
    assert report(1, "mask oracle equivalence (exhaustive)", ok, f"{props_detail(props)} in {secs:.1f}s")


def test_02_golden_mask_golden(report):
    props, _ = run_props("golden-mask")
    assert report(2, "golden golden mask (T=6,C=2,L=1,R=1)", all(p.ok for p in props), props_detail(props))


def test_03_degeneracy(report):
    worst = 0.0
    for seed in range(10):
        enc = DualModeEncoder(16, n_layers=2, n_heads=2, n_registers=0, seed=seed).double()
        T = 3 + 2 * seed
        x = torch.randn(T, 16, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
        with torch.no_grad():
            worst = max(worst, float((enc.encode_online(x, T, 0)[0] - enc.encode_offline(x)).abs().max()))
    assert report(3, "dual-mode degeneracy C=T,L=0,R=0 (<1e-10)", worst < 1e-10, f"max diff {worst:.3g}")


def test_04_streaming_equivalence(report):
    props, secs = run_props("streaming", cases=100)
    ok = all(p.ok for p in props) and all(p.passed == 100 for p in props) and secs < 60
    details = ", ".join(p.detail for p in props[::2])
    assert report(4, "streaming == full masked forward (100 cfgs)", ok, f"{details}; {secs:.1f}s")


def test_05_causality(report):
    props, _ = run_props("causality", cases=50)
    ok = all(p.ok for p in props) and props[0].passed == 50
    assert report(5, "causality beyond look-ahead (50 cases)", ok, f"{props_detail(props)}, {props[0].detail}")


def test_06_register_independence(report):
    props, _ = run_props("register-independence", cases=20)
    ok = all(p.ok for p in props) and props[0].passed == 20
    assert report(6, "offline output ignores registers (20 cases)", ok, props_detail(props))


def test_07_gradient_check(report):
    errors = verify.gradient_check(seed=0, h=1e-5)
    worst_name = max(errors, key=lambda k: errors[k][0])
    worst = errors[worst_name][0]
    ok = worst < 1e-4 and all(math.isfinite(e) for e, _, _ in errors.values())
    assert report(7, "gradient check vs central differences", ok, f"{len(errors)} groups, worst {worst:.3g} ({worst_name})")


def test_08_stop_gradient(report):
    props, _ = run_props("stop-gradient")
    assert report(8, "stop-gradient on L_on targets and U_hat", all(p.ok for p in props), props_detail(props))


def test_09_loss_arithmetic(report):
    props, _ = run_props("loss-arithmetic")
    assert report(9, "L_dual / L_total arithmetic (1e-12)", all(p.ok for p in props), props_detail(props))


def test_10_contrastive_symmetry(report):
    props, _ = run_props("contrastive-symmetry")
    assert report(10, "equal-similarity loss and L_fp(U,U)=0", all(p.ok for p in props), props_detail(props))


def test_11_dynamic_sampling(report):
    props, _ = run_props("dynamic-sampling", draws=10_000)
    assert report(11, "dynamic (C, L) sampling, 10k draws", all(p.ok for p in props), props_detail(props))


@pytest.fixture(scope="module")
def training_runs():
    runs = verify.training_comparison(seed=0, steps=500)
    return runs, verify.summarize_training(runs)


def test_12a_training_loss_drop(report, training_runs):
    _, s = training_runs
    ok = s["dual_drop"] >= 0.30
    assert report("12a", "toy training: L_dual drop >= 30%", ok, f"{s['dual_first']:.3f} -> {s['dual_last']:.3f} ({s['dual_drop']:.1%})")


def test_12b_training_accuracy(report, training_runs):
    _, s = training_runs
    assert report("12b", "toy training: accuracy > 0.27", s["accuracy"] > 0.27, f"{s['accuracy']:.3f}")


def test_12c_registers_vs_baseline(report, training_runs):
    _, s = training_runs
    ok = s["L_on_registers"] <= s["L_on_baseline"]
    detail = f"L_on R=1 {s['L_on_registers']:.4f} vs R=0 {s['L_on_baseline']:.4f}"
    assert report("12c", "toy training: R=1 L_on <= R=0 baseline", ok, detail)


def test_12_training_runtime(report, training_runs):
    runs, s = training_runs
    ok = s["seconds"] < 300 and runs["baseline"]["seconds"] < 300
    assert report("12t", "toy training: runtime < 5 min per run", ok, f"{s['seconds']:.1f}s / {runs['baseline']['seconds']:.1f}s")


def test_13_latency_table(report, capsys):
    code = main(["bench", "--n-chunks", "2"])
    out = capsys.readouterr().out
    rows = {int(r.split()[0]): float(r.split()[2]) for r in out.splitlines()[1:]}
    exact = all(latency_report(C).chunk_ms == C * 20.0 for C in (8, 16, 32))
    ok = code == 0 and rows == {8: 160.0, 16: 320.0, 32: 640.0} and exact
    assert report(13, "bench latency 160/320/640 ms", ok, f"{rows}")
