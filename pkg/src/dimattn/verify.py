"""Randomized invariant suite behind ``dimattn verify``.

Each check returns a :class:`CheckResult`; sizes default to the full
acceptance settings and can be scaled down for quick runs. Wherever possible
a property is compared against a second, independently computed route
(plain ``g(x) - g(0)`` evaluation, brute force, finite differences).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from . import autodiff as ad
from .core import (
    LOG,
    SQRT,
    ConcaveTransform,
    CoverageTracker,
    DiminishConfig,
    crossover_point,
    diminishing_attention,
    dynamic_diminishing_attention,
    running_max_before,
    submodular_coverage,
)
from .greedy import WeightedCoverageFunction, brute_force_maximize, greedy_maximize, is_submodular

FAMILIES = (LOG, SQRT, ConcaveTransform("pow", 0.65))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}  ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def _plain(g: ConcaveTransform, x: np.ndarray) -> np.ndarray:
    """``g(x) - g(0)`` straight from the textbook formula (second route to ``anchored``)."""
    return g.raw(x) - g.raw(0.0)


def _random_histories(rng, n: int, max_len: int) -> List[np.ndarray]:
    lengths = rng.integers(1, max_len + 1, size=n)
    return [rng.random(int(k)) for k in lengths]


def check_submodularity(n: int = 10_000, max_len: int = 512, seed: int = 0, rel: float = 1e-12) -> CheckResult:
    """``F(H_s + d) - F(H_s) >= F(H_t + d) - F(H_t)`` for prefixes ``H_s`` of ``H_t``."""

    def run():
        rng = np.random.default_rng(seed)
        hist = _random_histories(rng, n, max_len)
        worst = 0.0
        for g in FAMILIES:
            for h in hist:
                t = int(rng.integers(1, len(h) + 1))
                s = int(rng.integers(0, t + 1))
                delta = float(rng.uniform(0.0, 1.0)) or 0.5
                ext_s = np.append(h[:s], delta)
                ext_t = np.append(h[:t], delta)
                gain_s = submodular_coverage(g, ext_s) - submodular_coverage(g, h[:s])
                gain_t = submodular_coverage(g, ext_t) - submodular_coverage(g, h[:t])
                scale = max(1.0, abs(submodular_coverage(g, ext_t)))
                worst = max(worst, (gain_t - gain_s) / scale)
        return worst <= rel, f"{3 * n} trials, worst scaled excess {worst:.2e} (slack {rel:g})"

    return _timed("submodularity", run)


def check_telescoping(n: int = 10_000, max_len: int = 512, seed: int = 1, tol: float = 1e-9) -> CheckResult:
    """Sum of DimAttn equals ``F`` in batch and streaming form; the two forms agree bit for bit."""

    def run():
        rng = np.random.default_rng(seed)
        hist = _random_histories(rng, n, max_len)
        worst, mismatched = 0.0, 0
        for g in FAMILIES:
            cfg = DiminishConfig.dim(g)
            batch = [diminishing_attention(g, h) for h in hist]
            target = np.array([_plain(g, np.sum(h)) for h in hist])
            batch_sum = np.array([b.sum() for b in batch])
            worst = max(worst, float(np.max(np.abs(batch_sum - target))))
            # streaming: one tracker, every history is its own encoder state
            padded = np.zeros((max_len, n))
            for j, h in enumerate(hist):
                padded[: len(h), j] = h
            tracker = CoverageTracker(n)
            rows = np.array([tracker.step(row, cfg) for row in padded])
            stream_sum = rows.sum(axis=0)
            worst = max(worst, float(np.max(np.abs(stream_sum - target))))
            for j, b in enumerate(batch):
                if not np.array_equal(rows[: len(b), j], b):
                    mismatched += 1
        ok = worst <= tol and mismatched == 0
        return ok, f"{3 * n} histories, max |sum - F| {worst:.2e}, stream/batch mismatches {mismatched}"

    return _timed("telescoping", run)


def check_attention_properties(n: int = 10_000, seed: int = 2, tol: float = 1e-12) -> CheckResult:
    """Equal raw attention later, or on a more-covered state, never earns more."""

    def run():
        rng = np.random.default_rng(seed)
        later = cross = 0
        for g in FAMILIES:
            for _ in range(n):
                k = int(rng.integers(0, 20))
                a = float(rng.uniform(1e-6, 1.0))
                middle = rng.random(k + 1)
                middle[int(rng.integers(0, k + 1))] += 1e-3  # at least one positive in between
                h = np.concatenate([rng.random(int(rng.integers(0, 10))), [a], middle, [a]])
                eff = diminishing_attention(g, h)
                i_first = len(h) - len(middle) - 2
                later += eff[-1] > eff[i_first] + tol
                # two states, equal score now, state i has more coverage before
                ci = float(rng.uniform(0.0, 20.0))
                cj = float(rng.uniform(0.0, ci))
                if cj == ci:
                    continue
                gi = diminishing_attention(g, [ci, a])[1]
                gj = diminishing_attention(g, [cj, a])[1]
                cross += gi > gj + tol
        return later == 0 and cross == 0, f"{3 * n} cases each, violations later={later} cross={cross}"

    return _timed("attention_properties", run)


def _tie_consistent(order: np.ndarray, values: np.ndarray, tol: float) -> bool:
    return bool(np.all(np.diff(values[order]) >= -tol))


def check_order_preservation(n: int = 1000, seed: int = 3, tol: float = 1e-12) -> CheckResult:
    """Ranking by effective coverage equals ranking by raw coverage (dim, every family)."""

    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for g in FAMILIES:
            cfg = DiminishConfig.dim(g)
            for _ in range(n):
                steps, states = int(rng.integers(1, 30)), int(rng.integers(2, 40))
                logits = rng.normal(0.0, 2.0, (steps, states))
                A = np.exp(logits - logits.max(axis=1, keepdims=True))
                A /= A.sum(axis=1, keepdims=True)
                raw_cov = A.sum(axis=0)
                eff_cov = cfg.effective_matrix(A).sum(axis=0)
                o_raw = np.argsort(raw_cov, kind="stable")
                o_eff = np.argsort(eff_cov, kind="stable")
                if np.array_equal(o_raw, o_eff):
                    continue
                # different orders are fine only where values tie within tol
                if not (_tie_consistent(o_raw, eff_cov, tol) and _tie_consistent(o_eff, raw_cov, tol)):
                    bad += 1
        return bad == 0, f"{3 * n} matrices, ranking disagreements {bad}"

    return _timed("order_preservation", run)


def dydim_grid(size: int = 100) -> List[tuple]:
    """``(a, g1, g2)`` combinations where ``g1' <= g2'`` on ``[0, 2]``.

    That ordering is the assumption under which constant streams give a
    non-increasing DyDim sequence; pairs are drawn from a fixed pool of
    transforms and crossed with evenly spaced scores in (0, 1].
    """
    pool = [ConcaveTransform("log", b) for b in (2.2, 3.0, 4.0, 8.0, 16.0)]
    pool += [ConcaveTransform("sqrt"), LOG, ConcaveTransform("log", 1.9), ConcaveTransform("log", 1.95)]
    pool += [ConcaveTransform("pow", p) for p in (0.3, 0.5, 0.6, 0.65, 0.75)]
    xs = np.linspace(0.0, 2.0, 201)
    pairs = []
    for g1 in pool:
        for g2 in pool:
            if g1 != g2 and np.all(g1.derivative(xs) <= g2.derivative(xs)):
                pairs.append((g1, g2))
    per_pair = max(1, math.ceil(size / len(pairs)))
    scores = np.linspace(1.0 / per_pair, 1.0, per_pair)
    return [(float(a), g1, g2) for g1, g2 in pairs for a in scores][:size]


def check_dydim(grid_size: int = 100, length: int = 60, n_random: int = 2000, seed: int = 4) -> CheckResult:
    def run():
        grid = dydim_grid(grid_size)
        increases = 0
        for a, g1, g2 in grid:
            seq = dynamic_diminishing_attention(g1, g2, np.full(length, a))
            increases += int(np.any(np.diff(seq) > 1e-15))
        rng = np.random.default_rng(seed)
        p_bad = 0
        for _ in range(n_random):
            h = rng.random(int(rng.integers(1, 200)))
            p = running_max_before(h)
            p_bad += int(p[0] != 0.0 or np.any(np.diff(p) < 0))
            tr = CoverageTracker(1)
            prev = 0.0
            for x in h[:20]:
                tr.step([x], DiminishConfig.dydim())
                p_bad += int(tr.running_max[0] < prev)
                prev = tr.running_max[0]
        ok = increases == 0 and p_bad == 0 and len(grid) == grid_size
        return ok, f"{len(grid)} grid cases, increasing sequences {increases}; P monotonicity violations {p_bad}"

    return _timed("dydim_monotone", run)


def check_greedy_bound(n_instances: int = 1000, seed: int = 5) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        bound = 1.0 - 1.0 / math.e - 1e-9
        worst, below, not_sub = 1.0, 0, 0
        for _ in range(n_instances):
            n = int(rng.integers(1, 13))
            m = int(rng.integers(1, min(4, n) + 1))
            g = FAMILIES[int(rng.integers(0, len(FAMILIES)))]
            f = WeightedCoverageFunction.random(rng, n, int(rng.integers(1, 9)), g)
            greedy = greedy_maximize(f, m).value
            _, opt = brute_force_maximize(f, m)
            ratio = 1.0 if opt == 0 else greedy / opt
            worst = min(worst, ratio)
            below += ratio < bound
            not_sub += not is_submodular(f)
        ok = below == 0 and not_sub == 0
        return ok, f"{n_instances} instances, worst ratio {worst:.4f}, below bound {below}, non-submodular {not_sub}"

    return _timed("greedy_bound", run)


# --- gradients ----------------------------------------------------------------------------


def _weighted(out: ad.Tensor, w: np.ndarray) -> ad.Tensor:
    return ad.sum(out * w)


def primitive_cases(rng) -> List[tuple]:
    """(name, function of one tensor, input array) for every differentiable primitive."""
    A = rng.normal(size=(3, 4))
    B = rng.normal(size=(4, 5))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    w34 = rng.normal(size=(3, 4))
    w35 = rng.normal(size=(3, 5))
    other = rng.normal(size=(3, 4))
    batch = rng.normal(size=(2, 3, 4))
    wb = rng.normal(size=(2, 3, 5))
    ids = np.array([1, 0, 2, 1])
    w38 = rng.normal(size=(3, 8))
    w234 = rng.normal(size=(2, 3, 4))
    w44 = rng.normal(size=(4, 4))
    targets = np.array([2, 0, 4])
    d = 3
    h0 = rng.normal(size=(2, d))
    xp = rng.normal(size=(2, 3 * d))
    wh = rng.normal(size=(d, 3 * d)) * 0.5
    bh = rng.normal(size=3 * d) * 0.1
    cases = [
        ("add", lambda x: _weighted(x + other, w34), A),
        ("sub", lambda x: _weighted(other - x, w34), A),
        ("mul", lambda x: _weighted(x * other, w34), A),
        ("div", lambda x: _weighted(other / x, w34), pos),
        ("neg", lambda x: _weighted(-x, w34), A),
        ("broadcast", lambda x: _weighted(ad.Tensor(other) * x[0], w34), A),
        ("matmul", lambda x: _weighted(x @ ad.Tensor(B), w35), A),
        ("matmul_right", lambda x: _weighted(ad.Tensor(A) @ x, w35), B),
        ("matmul_batched", lambda x: _weighted(x @ ad.Tensor(B), wb), batch),
        ("getitem", lambda x: _weighted(x[1:, ::2], w34[1:, ::2]), A),
        ("getitem_fancy", lambda x: _weighted(x[[0, 2, 0]], w34[[0, 1, 2]]), A),
        ("concat", lambda x: _weighted(ad.concat([x, x * 2.0], axis=1), w38), A),
        ("stack", lambda x: _weighted(ad.stack([x, x * x], axis=0), w234), A),
        ("reshape", lambda x: _weighted(ad.reshape(x, (4, 3)), w34.reshape(4, 3)), A),
        ("tanh", lambda x: _weighted(ad.tanh(x), w34), A),
        ("sigmoid", lambda x: _weighted(ad.sigmoid(x), w34), A),
        ("exp", lambda x: _weighted(ad.exp(x), w34), A),
        ("expm1", lambda x: _weighted(ad.expm1(x), w34), A),
        ("log", lambda x: _weighted(ad.log(x), w34), pos),
        ("log1p", lambda x: _weighted(ad.log1p(x), w34), pos),
        ("sqrt", lambda x: _weighted(ad.sqrt(x), w34), pos),
        ("pow", lambda x: _weighted(ad.pow(x, 0.65), w34), pos),
        ("softmax", lambda x: _weighted(ad.softmax(x, axis=-1), w34), A),
        ("sum", lambda x: _weighted(ad.sum(x, axis=0, keepdims=True), w34[:1]), A),
        ("max", lambda x: _weighted(ad.max(x, axis=1, detach=False), w34[:, 0]), A),
        ("maximum", lambda x: _weighted(ad.maximum(x, ad.Tensor(other), detach=False), w34), A),
        ("cumsum", lambda x: _weighted(ad.cumsum(x, axis=1), w34), A),
        ("embedding", lambda x: _weighted(ad.embedding(x, ids), w44), pos),
        ("cross_entropy", lambda x: ad.cross_entropy(x, targets), rng.normal(size=(3, 5))),
        ("gru_cell_h", lambda x: _weighted(ad.gru_cell(ad.Tensor(xp), x, ad.Tensor(wh), ad.Tensor(bh)), h0), h0),
        ("gru_cell_w", lambda x: _weighted(ad.gru_cell(ad.Tensor(xp), ad.Tensor(h0), x, ad.Tensor(bh)), h0), wh),
        ("gru_cell_x", lambda x: _weighted(ad.gru_cell(x, ad.Tensor(h0), ad.Tensor(wh), ad.Tensor(bh)), h0), xp),
    ]
    return cases


def attention_step_cases(rng) -> List[tuple]:
    """Three decoder steps of dim/dydim attention, gradient w.r.t. the query weights.

    DyDim is checked twice: with P differentiated (subgradient of the running
    max) and with P detached. The detached case freezes P at the values of
    the unperturbed forward pass so that finite differences see the same
    constant the analytic gradient assumes.
    """
    from .seq2seq import DiminishState, attention_step

    B, T, d = 2, 5, 4
    H = rng.normal(size=(B, T, d))
    HP = rng.normal(size=(B, T, d))
    v = rng.normal(size=d)
    states = [rng.normal(size=(B, d)) for _ in range(3)]
    wctx = rng.normal(size=(B, d))
    ws0 = rng.normal(size=(d, d))

    class FrozenP(DiminishState):
        def __init__(self, cfg, p_values):
            super().__init__(cfg)
            self.p_values = list(p_values)

        def step(self, raw):
            out = super().step(raw)
            if self.p is not None and self.p_values:
                self.p = ad.Tensor(self.p_values.pop(0))
            return out

    def rollout(ws, state):
        total = None
        for s in states:
            ctx, _, _ = attention_step(ad.Tensor(s), ad.Tensor(H), ad.Tensor(HP), ws, ad.Tensor(v), None, state)
            term = ad.sum(ctx * wctx)
            total = term if total is None else total + term
        return total

    cases = []
    configs = [
        DiminishConfig.dim(LOG),
        DiminishConfig.dydim(LOG, SQRT, detach_p=False),
        DiminishConfig.dydim(SQRT, LOG, detach_p=False),
    ]
    for cfg in configs:
        cases.append((f"attention_{cfg.spec()}", lambda ws, cfg=cfg: rollout(ws, DiminishState(cfg)), ws0))
    for cfg in (DiminishConfig.dydim(LOG, SQRT), DiminishConfig.dydim(SQRT, LOG)):
        probe = DiminishState(cfg)
        trace = []
        with ad.no_grad():
            for s in states:
                attention_step(ad.Tensor(s), ad.Tensor(H), ad.Tensor(HP), ad.Tensor(ws0), ad.Tensor(v), None, probe)
                trace.append(probe.p.data.copy())
        cases.append((f"attention_{cfg.spec()}_detached",
                      lambda ws, cfg=cfg, trace=trace: rollout(ws, FrozenP(cfg, trace)), ws0))
    return cases


def check_gradients(seed: int = 6, tol_primitive: float = 1e-6, tol_attention: float = 1e-4) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        errs = {name: ad.grad_check(fn, x) for name, fn, x in primitive_cases(rng)}
        att = {name: ad.grad_check(fn, x) for name, fn, x in attention_step_cases(rng)}
        worst_p = max(errs, key=errs.get)
        worst_a = max(att, key=att.get)
        ok = errs[worst_p] < tol_primitive and att[worst_a] < tol_attention
        return ok, (f"{len(errs)} primitives, worst {worst_p}={errs[worst_p]:.1e}; "
                    f"attention worst {worst_a}={att[worst_a]:.1e}")

    return _timed("gradients", run)


def check_crossover(tol: float = 1e-8) -> CheckResult:
    def run():
        x = crossover_point(SQRT, LOG)
        ok = x is not None and abs(x - 3.0) <= tol
        return ok, f"crossover(sqrt, log) = {x!r}"

    return _timed("crossover", run)


def run_all(scale: float = 1.0) -> List[CheckResult]:
    """Every check; ``scale`` shrinks the randomized trial counts."""
    k = lambda n: max(10, int(n * scale))  # noqa: E731
    return [
        check_submodularity(n=k(10_000)),
        check_telescoping(n=k(10_000)),
        check_attention_properties(n=k(10_000)),
        check_order_preservation(n=k(1000)),
        check_dydim(n_random=k(2000)),
        check_greedy_bound(n_instances=k(1000)),
        check_gradients(),
        check_crossover(),
    ]


def report(results: Sequence[CheckResult]) -> str:
    return "\n".join(r.line() for r in results)
