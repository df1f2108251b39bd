"""Self-verification suites.

Each suite checks one family of properties against an independent oracle
(brute-force predicate, cache-free recomputation, finite differences, closed
forms) and reports pass/fail counts per property. ``run_suite`` is what the
``verify`` subcommand and the acceptance tests call.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np
import torch

from . import masks
from .encoder import DualModeEncoder, MaskingPlan
from .layout import StreamConfig, build_layout
from .losses import contrastive_loss, distractor_table, future_prediction_loss, total_loss
from .quantizer import gumbel_noise
from .streaming import latency_report, recompute_encode, stream_encode
from .training import (
    ModelConfig,
    PretrainingModel,
    StepInputs,
    TrainConfig,
    forward_losses,
    sample_dynamic_config,
    train,
    window_mean,
)


@dataclass
class PropertyResult:
    name: str
    passed: int = 0
    failed: int = 0
    detail: str = ""
    first_failure: str = ""

    @property
    def ok(self) -> bool:
        return self.failed == 0 and self.passed > 0

    def record(self, good: bool, note: str = "") -> None:
        if good:
            self.passed += 1
        else:
            self.failed += 1
            if not self.first_failure:
                self.first_failure = note


@dataclass
class SuiteReport:
    suite: str
    properties: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.properties)

    def render(self) -> str:
        lines = [f"suite {self.suite}: {'PASS' if self.ok else 'FAIL'} ({self.seconds:.1f}s)"]
        for p in self.properties:
            total = p.passed + p.failed
            line = f"  [{'PASS' if p.ok else 'FAIL'}] {p.name}: {p.passed}/{total} passed"
            if p.detail:
                line += f"  {p.detail}"
            lines.append(line)
            if p.first_failure:
                lines.append(f"         first failure: {p.first_failure}")
        return "\n".join(lines)


def _mask_builder():
    # Looked up at call time so a substituted builder is picked up.
    return masks.build_online_mask


def golden_mask() -> str:
    return resources.files("online_registers").joinpath("data/golden_mask.txt").read_text()


def _encoder(seed: int, d: int = 16, R: int = 1, n_layers: int = 2, n_heads: int = 2, dtype=torch.float64) -> DualModeEncoder:
    return DualModeEncoder(d, n_layers=n_layers, n_heads=n_heads, n_registers=R, seed=seed).to(dtype)


def _frames(gen: torch.Generator, T: int, d: int, dtype=torch.float64) -> torch.Tensor:
    return torch.randn(T, d, generator=gen, dtype=torch.float64).to(dtype)


# -- suites -----------------------------------------------------------------


def suite_mask_oracle(seed: int = 0) -> list[PropertyResult]:
    build = _mask_builder()
    res = PropertyResult("fast mask == brute-force predicate (T<=12, C<=6, L<=C, R<=3)")
    for T in range(1, 13):
        for C in range(1, 7):
            for L in range(C + 1):
                for R in range(4):
                    layout = build_layout(StreamConfig(T=T, C=C, L=L, R=R))
                    fast = np.asarray(build(layout))
                    ref = masks.build_online_mask_bruteforce(layout)
                    res.record(fast.shape == ref.shape and np.array_equal(fast, ref), f"T={T} C={C} L={L} R={R}")
    return [res]


def suite_golden_mask(seed: int = 0) -> list[PropertyResult]:
    res = PropertyResult("(T=6, C=2, L=1, R=1) mask matches golden grid")
    layout = build_layout(StreamConfig(T=6, C=2, L=1, R=1))
    got = masks.render_bits(np.asarray(_mask_builder()(layout)))
    want = golden_mask()
    res.record(got.strip() == want.strip(), f"got\n{got}")
    return [res]


def suite_degeneracy(seed: int = 0, cases: int = 10) -> list[PropertyResult]:
    res = PropertyResult("online(C=T, L=0, R=0) == offline, double", detail="tol 1e-10")
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for k in range(cases):
        T = int(torch.randint(1, 25, (1,), generator=gen))
        enc = _encoder(seed + k, R=0)
        x = _frames(gen, T, enc.d_model)
        with torch.no_grad():
            diff = float((enc.encode_online(x, T, 0)[0] - enc.encode_offline(x)).abs().max())
        worst = max(worst, diff)
        res.record(diff < 1e-10, f"T={T} diff={diff:.3g}")
    res.detail += f", worst {worst:.3g}"
    return [res]


def suite_streaming(seed: int = 0, cases: int = 100) -> list[PropertyResult]:
    out = []
    rng = np.random.default_rng(seed)
    configs = []
    for _ in range(cases):
        C = int(rng.integers(2, 9))
        configs.append((int(rng.integers(1, 25)), C, int(rng.integers(0, C + 1)), int(rng.integers(0, 4)), int(rng.integers(1 << 30))))
    for dtype, tol in ((torch.float32, 1e-5), (torch.float64, 1e-10)):
        name = str(dtype).replace("torch.", "")
        cached = PropertyResult(f"cached stream == full masked forward, {name}")
        reference = PropertyResult(f"full masked forward == prefix recomputation, {name}")
        worst = [0.0, 0.0]
        for T, C, L, R, s in configs:
            enc = _encoder(s % 10_000, R=R, dtype=dtype)
            x = _frames(torch.Generator().manual_seed(s), T, enc.d_model, dtype)
            with torch.no_grad():
                y_full, u_full, _ = enc.encode_online(x, C, L)
            y_st, u_st = stream_encode(enc, x, C, L)
            y_re, u_re = recompute_encode(enc, x, C, L)
            for slot, (res, (y, u)) in enumerate(((cached, (y_st, u_st)), (reference, (y_re, u_re)))):
                diff = max(float((y - y_full).abs().max()), float((u - u_full).abs().max()) if R else 0.0)
                worst[slot] = max(worst[slot], diff)
                res.record(y.shape == y_full.shape and u.shape == u_full.shape and diff < tol, f"T={T} C={C} L={L} R={R} diff={diff:.3g}")
        cached.detail = f"tol {tol:g}, worst {worst[0]:.3g}"
        reference.detail = f"tol {tol:g}, worst {worst[1]:.3g}"
        out += [cached, reference]
    return out


def suite_causality(seed: int = 0, cases: int = 50) -> list[PropertyResult]:
    res = PropertyResult("perturbing t' >= (i+1)C+L leaves chunk i frame and register outputs unchanged (exact)")
    rng = np.random.default_rng(seed)
    chunks = 0
    for k in range(cases):
        C = int(rng.integers(1, 7))
        L, R = int(rng.integers(0, C + 1)), int(rng.integers(0, 4))
        # t' always lies beyond chunk 0's reach, so each case checks at least one chunk.
        T = int(rng.integers(C + L + 1, 25))
        t_p = int(rng.integers(C + L, T))
        enc = _encoder(seed + k, R=R)
        x = _frames(torch.Generator().manual_seed(seed * 1000 + k), T, enc.d_model)
        x2 = x.clone()
        x2[t_p] += 1.0 + torch.rand(enc.d_model, generator=torch.Generator().manual_seed(k), dtype=x.dtype)
        with torch.no_grad():
            y1, u1, _ = enc.encode_online(x, C, L)
            y2, u2, _ = enc.encode_online(x2, C, L)
        bad = []
        for i in range(math.ceil(T / C)):
            if t_p < (i + 1) * C + L:
                continue
            chunks += 1
            sl = slice(i * C, min(T, (i + 1) * C))
            if not (torch.equal(y1[sl], y2[sl]) and torch.equal(u1[i], u2[i])):
                bad.append(i)
        res.record(not bad, f"T={T} C={C} L={L} R={R} t'={t_p} changed chunks {bad}")
    res.detail = f"{chunks} chunks checked"
    return [res]


def suite_register_independence(seed: int = 0, cases: int = 20) -> list[PropertyResult]:
    res = PropertyResult("randomizing register embeddings leaves offline outputs unchanged (exact)")
    gen = torch.Generator().manual_seed(seed)
    for k in range(cases):
        T = int(torch.randint(1, 25, (1,), generator=gen))
        R = int(torch.randint(1, 4, (1,), generator=gen))
        enc = _encoder(seed + k, R=R)
        x = _frames(gen, T, enc.d_model)
        with torch.no_grad():
            before = enc.encode_offline(x)
            enc.register_embeddings.copy_(10 * torch.randn(enc.register_embeddings.shape, generator=gen, dtype=torch.float64))
            after = enc.encode_offline(x)
        res.record(torch.equal(before, after), f"T={T} R={R}")
    return [res]


def tiny_problem(seed: int = 0):
    """A d=8, 2-layer, T=6, G=1/V=4 model with one fixed batch of step inputs, in double precision."""
    cfg = ModelConfig(d_model=8, n_layers=2, n_heads=2, n_registers=1, codebook_groups=1, codebook_entries=4, dtype="float64", seed=seed)
    model = PretrainingModel(cfg)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(2, 6, 8, generator=gen, dtype=torch.float64)
    rng = np.random.default_rng(seed)
    plans = [MaskingPlan(6, (1, 3, 4)), MaskingPlan(6, (0, 2, 5))]
    tables = [distractor_table(len(p), 2, rng) for p in plans]
    noise = gumbel_noise((6, 1, 4), gen, torch.float64)
    inputs = StepInputs(StreamConfig(T=6, C=2, L=1, R=1, d=8), plans, tables, noise)
    train_cfg = TrainConfig(n_distractors=2)
    return model, x, inputs, train_cfg


def gradient_check(seed: int = 0, h: float = 1e-5) -> dict[str, tuple[float, float, float]]:
    """Analytic vs central-difference gradients of the total loss, per parameter group.

    Uses the relaxed (soft) quantizer with fixed noise, and holds the severed
    quantities at their base values so the finite differences see the same
    function autograd differentiates. Returns ``name -> (rel err, |analytic|, |numeric|)``.
    """
    model, x, inputs, cfg = tiny_problem(seed)
    base = forward_losses(model, x, inputs, cfg, hard=False)
    sev_t = base.targets.detach().clone()
    sev_f = [f.detach().clone() for f in base.future]

    def loss() -> torch.Tensor:
        return forward_losses(model, x, inputs, cfg, hard=False, severed_targets=sev_t, severed_future=sev_f).losses.total

    return compare_gradients(loss, dict(model.named_parameters()), h)


def numeric_gradient(fn: Callable[[], torch.Tensor], param: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central differences of scalar ``fn()`` with respect to every entry of ``param`` (perturbed in place)."""
    num = torch.zeros_like(param)
    with torch.no_grad():
        flat, nflat = param.view(-1), num.view(-1)
        for j in range(flat.numel()):
            orig = float(flat[j])
            flat[j] = orig + h
            up = float(fn())
            flat[j] = orig - h
            down = float(fn())
            flat[j] = orig
            nflat[j] = (up - down) / (2 * h)
    return num


def compare_gradients(fn: Callable[[], torch.Tensor], params: dict, h: float = 1e-5) -> dict[str, tuple[float, float, float]]:
    """Per-group relative error ``|g - g_num| / max(|g|, |g_num|)`` between autograd and central differences."""
    analytic = torch.autograd.grad(fn(), list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), analytic):
        g = torch.zeros_like(p) if g is None else g
        num = numeric_gradient(fn, p, h)
        na, nn_ = float(g.norm()), float(num.norm())
        scale = max(na, nn_)
        err = float((g - num).norm()) / scale if scale > 1e-12 else 0.0
        out[name] = (err, na, nn_)
    return out


def suite_gradcheck(seed: int = 0) -> list[PropertyResult]:
    res = PropertyResult("analytic == central differences per parameter group", detail="h=1e-5, rel tol 1e-4")
    errors = gradient_check(seed)
    for name, (err, na, nn_) in errors.items():
        res.record(err < 1e-4, f"{name}: rel err {err:.3g} (|analytic|={na:.3g}, |numeric|={nn_:.3g})")
    res.detail += f", worst {max(e for e, _, _ in errors.values()):.3g} over {len(errors)} groups"
    return [res]


def suite_stop_gradient(seed: int = 0) -> list[PropertyResult]:
    model, x, inputs, cfg = tiny_problem(seed)
    result = forward_losses(model, x, inputs, cfg)
    dual = result.extra["dual"]
    qparams = list(model.quantizer.named_parameters())
    zero = lambda g: g is None or bool((g == 0).all())

    on = PropertyResult("dL_on / d(quantizer params) == 0")
    grads = torch.autograd.grad(result.losses.on, [p for _, p in qparams], retain_graph=True, allow_unused=True)
    for (name, _), g in zip(qparams, grads):
        on.record(zero(g), name)

    fp = PropertyResult("dL_fp / d(offline outputs) == 0 and dL_fp / d(quantizer params) == 0")
    g_off, *g_q = torch.autograd.grad(result.losses.future, [dual.y_off] + [p for _, p in qparams], retain_graph=True, allow_unused=True)
    fp.record(zero(g_off), "offline outputs")
    for (name, _), g in zip(qparams, g_q):
        fp.record(zero(g), name)

    live = PropertyResult("control: L_off reaches the codebook, L_fp reaches the registers")
    g_code = torch.autograd.grad(result.losses.off, model.quantizer.codebook, retain_graph=True)[0]
    live.record(not zero(g_code), "codebook gradient of L_off is zero")
    g_reg = torch.autograd.grad(result.losses.future, model.encoder.register_embeddings, retain_graph=True)[0]
    live.record(not zero(g_reg), "register gradient of L_fp is zero")
    return [on, fp, live]


def suite_loss_arithmetic(seed: int = 0, cases: int = 200) -> list[PropertyResult]:
    res = PropertyResult("L_dual = (L_off+L_on)/2 + 0.1 L_d, L_total = L_dual + L_fp", detail="tol 1e-12")
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        off, on, div, fp = rng.uniform(0, 50, size=4)
        b = total_loss(off, on, div, fp)
        dual = 0.5 * (off + on) + 0.1 * div
        res.record(abs(b.dual - dual) <= 1e-12 and abs(b.total - (dual + 1.0 * fp)) <= 1e-12, f"{(off, on, div, fp)}")
    model, x, inputs, cfg = tiny_problem(seed)
    b = forward_losses(model, x, inputs, cfg).losses.as_floats()
    dual = 0.5 * (b.off + b.on) + 0.1 * b.diversity
    res.record(abs(b.dual - dual) <= 1e-12 and abs(b.total - (dual + b.future)) <= 1e-12, "training forward")
    return [res]


def suite_contrastive_symmetry(seed: int = 0, cases: int = 50) -> list[PropertyResult]:
    sym = PropertyResult("equal similarities give |T_M| ln(K+1)", detail="tol 1e-9")
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(cases):
        M = int(rng.integers(2, 30))
        K = int(rng.integers(1, M))
        d = int(rng.integers(2, 17))
        # Every target identical: the positive and every distractor score the same.
        q = torch.randn(d, generator=gen, dtype=torch.float64)
        targets = q.expand(M, d).clone()
        outputs = torch.randn(M, d, generator=gen, dtype=torch.float64)
        table = distractor_table(M, K, rng)
        loss = float(contrastive_loss(outputs, targets, table))
        sym.record(abs(loss - M * math.log(K + 1)) < 1e-9, f"M={M} K={K} loss={loss}")
    fp = PropertyResult("future-prediction loss is 0 when U == U_hat (exact)")
    for _ in range(cases):
        R, d, n = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
        regs = [torch.randn(R, d, generator=gen, dtype=torch.float64) for _ in range(n)]
        fut = [u[: int(rng.integers(0, R + 1))].clone() for u in regs]
        fp.record(float(future_prediction_loss(regs, fut)) == 0.0, f"R={R} d={d} n={n}")
    return [sym, fp]


def suite_dynamic_sampling(seed: int = 0, draws: int = 10_000) -> list[PropertyResult]:
    rng = np.random.default_rng(seed)
    pairs = np.array([sample_dynamic_config(rng) for _ in range(draws)])
    C, L = pairs[:, 0], pairs[:, 1]
    ranges = PropertyResult("C in [2,32], L in [0,C]")
    for c, l in pairs:
        ranges.record(2 <= c <= 32 and 0 <= l <= c, f"C={c} L={l}")

    uni_c = PropertyResult("every C value within 5 sigma of uniform")
    p = 1 / 31
    sigma = math.sqrt(draws * p * (1 - p))
    for c in range(2, 33):
        n = int((C == c).sum())
        uni_c.record(abs(n - draws * p) <= 5 * sigma, f"C={c}: {n} draws, expected {draws * p:.1f}")

    uni_l = PropertyResult("L | C within 5 sigma of uniform on [0, C]")
    for c in range(2, 33):
        sub = L[C == c]
        q = 1 / (c + 1)
        s = math.sqrt(len(sub) * q * (1 - q))
        for l in range(c + 1):
            n = int((sub == l).sum())
            uni_l.record(abs(n - len(sub) * q) <= 5 * s, f"C={c} L={l}: {n} of {len(sub)}")
    return [ranges, uni_c, uni_l]


def suite_latency(seed: int = 0) -> list[PropertyResult]:
    res = PropertyResult("chunk latency is C x 20 ms (160/320/640 ms)")
    for C, ms in ((8, 160.0), (16, 320.0), (32, 640.0)):
        rep = latency_report(C, 0, 20.0)
        res.record(rep.chunk_ms == ms and rep.with_lookahead_ms == ms, f"C={C}: {rep}")
    la = PropertyResult("with look-ahead the wait is (C + L) x 20 ms")
    for C in (8, 16, 32):
        for L in range(C + 1):
            la.record(latency_report(C, L, 20.0).with_lookahead_ms == (C + L) * 20.0, f"C={C} L={L}")
    return [res, la]


def training_comparison(seed: int = 0, steps: int = 500) -> dict:
    """The registers+future-prediction run and the no-register baseline on identical data."""
    out = {}
    for key, R, beta in (("registers", 1, 1.0), ("baseline", 0, 0.0)):
        start = time.perf_counter()
        _, history = train(ModelConfig(n_registers=R, seed=seed), TrainConfig(steps=steps, seed=seed, beta=beta))
        out[key] = {"history": history, "seconds": time.perf_counter() - start}
    return out


def summarize_training(runs: dict, window: int = 50) -> dict:
    h = runs["registers"]["history"]
    n = len(h)
    first = window_mean(h, "L_dual", 0, window)
    last = window_mean(h, "L_dual", n - window, n)
    return {
        "dual_first": first,
        "dual_last": last,
        "dual_drop": 1 - last / first,
        "accuracy": window_mean(h, "accuracy", n - window, n),
        "L_on_registers": last_on(h, window),
        "L_on_baseline": last_on(runs["baseline"]["history"], window),
        "seconds": runs["registers"]["seconds"],
    }


def last_on(history, window: int = 50) -> float:
    return window_mean(history, "L_on", len(history) - window, len(history))


def suite_training(seed: int = 0, steps: int = 500) -> list[PropertyResult]:
    s = summarize_training(training_comparison(seed, steps))
    drop = PropertyResult("final-window L_dual >= 30% below first window", detail=f"drop {s['dual_drop']:.1%}")
    drop.record(s["dual_drop"] >= 0.30, f"{s['dual_first']:.4f} -> {s['dual_last']:.4f}")
    acc = PropertyResult("final-window contrastive accuracy > 0.27", detail=f"{s['accuracy']:.3f}")
    acc.record(s["accuracy"] > 0.27, f"accuracy {s['accuracy']:.4f}")
    reg = PropertyResult(
        "R=1 final-window L_on <= R=0 baseline",
        detail=f"{s['L_on_registers']:.4f} vs {s['L_on_baseline']:.4f}",
    )
    reg.record(s["L_on_registers"] <= s["L_on_baseline"], f"{s['L_on_registers']:.4f} > {s['L_on_baseline']:.4f}")
    rt = PropertyResult("registers run finishes in < 300 s", detail=f"{s['seconds']:.1f}s")
    rt.record(s["seconds"] < 300, f"{s['seconds']:.1f}s")
    return [drop, acc, reg, rt]


SUITES: dict[str, Callable[..., list[PropertyResult]]] = {
    "mask-oracle": suite_mask_oracle,
    "golden-mask": suite_golden_mask,
    "degeneracy": suite_degeneracy,
    "streaming": suite_streaming,
    "causality": suite_causality,
    "register-independence": suite_register_independence,
    "gradcheck": suite_gradcheck,
    "stop-gradient": suite_stop_gradient,
    "loss-arithmetic": suite_loss_arithmetic,
    "contrastive-symmetry": suite_contrastive_symmetry,
    "dynamic-sampling": suite_dynamic_sampling,
    "latency": suite_latency,
    "training": suite_training,
}


def run_suite(name: str, seed: int = 0, **kwargs) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    start = time.perf_counter()
    props = SUITES[name](seed=seed, **kwargs)
    return SuiteReport(name, props, time.perf_counter() - start)


def run_all(seed: int = 0, skip: Optional[set] = None) -> list[SuiteReport]:
    return [run_suite(name, seed) for name in SUITES if not skip or name not in skip]
