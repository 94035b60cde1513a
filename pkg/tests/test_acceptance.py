"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary). The
two desk-scale experiments take most of the runtime: roughly 15-20 minutes
each on a single core.
"""

import itertools
import math
import time

import numpy as np
import pytest

import oracles
from dimattn import verify
from dimattn.core import LOG, SQRT, DiminishConfig, crossover_point
from dimattn.decode import DecodeConfig, decode
from dimattn.experiments import ProbeConfig, directional_summary, layout_probe_experiment, repeat_trap_experiment
from dimattn.metrics import corpus_bleu, ngrams, novel_ngram_pct, repetition_ratio, rouge_l, rouge_n
from dimattn.seq2seq import TrainConfig, train
from dimattn.synth import TaskSpec, gen_repeat_trap

SEEDS = list(range(10))
GATED = ("dim:log", "dydim:sqrt,log")

# Criteria that fail at desk scale after a faithful attempt; the analysis is
# in the decisions ledger. A shortfall is reported as FAIL and marked xfail.
SHORTFALLS = {}


def finish(report, number, passed, detail):
    report(number, passed, detail)
    if not passed and number in SHORTFALLS:
        pytest.xfail(SHORTFALLS[number])
    assert passed, detail


@pytest.mark.parametrize(
    "number, check, budget",
    [
        (1, verify.check_submodularity, 10.0),
        (2, verify.check_telescoping, 10.0),
        (3, verify.check_attention_properties, None),
        (4, verify.check_order_preservation, None),
        (5, verify.check_dydim, None),
        (6, verify.check_greedy_bound, 120.0),
        (7, verify.check_gradients, 60.0),
    ],
)
def test_property_criteria(report, number, check, budget):
    res = check()
    in_time = budget is None or res.seconds < budget
    limit = "" if budget is None else f" < {budget:g}s"
    finish(report, number, res.passed and in_time, f"{res.name}: {res.detail}; {res.seconds:.1f}s{limit}")


def test_criterion_5_grid_precondition():
    # the monotone-DyDim grid only contains pairs whose g1 diminishes at least as fast as g2
    xs = np.linspace(0.0, 2.0, 201)
    grid = verify.dydim_grid(100)
    assert len(grid) == 100
    assert all(np.all(g1.derivative(xs) <= g2.derivative(xs)) for _, g1, g2 in grid)


def test_criterion_6_brute_force_is_exhaustive():
    # second route to the optimum used by the greedy-bound check
    from dimattn.greedy import WeightedCoverageFunction, brute_force_maximize, evaluate

    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 13))
        m = int(rng.integers(1, min(4, n) + 1))
        f = WeightedCoverageFunction.random(rng, n, int(rng.integers(1, 9)))
        best = max(evaluate(f, s) for k in range(1, m + 1) for s in itertools.combinations(range(n), k))
        assert brute_force_maximize(f, m)[1] == pytest.approx(best, rel=1e-12)


# --- desk-scale experiments ---------------------------------------------------------------


@pytest.fixture(scope="module")
def repeat_trap_results():
    cfg = ProbeConfig(variants=("standard",) + GATED)
    start = time.perf_counter()
    results = repeat_trap_experiment(SEEDS, cfg)
    return results, time.perf_counter() - start


def test_criterion_8_repeat_trap(report, repeat_trap_results):
    results, seconds = repeat_trap_results
    summary = directional_summary(results)
    ok = seconds < 30 * 60
    for name in GATED:
        s = summary[name]
        ok &= s["entropy_wins"] >= 8 and s["repetition_wins"] >= 8 and s["max_acc_drop"] <= 0.02
    detail = "; ".join(
        f"{name} H>{summary[name]['entropy_wins']}/10 rep2<={summary[name]['repetition_wins']}/10 "
        f"max_acc_drop={summary[name]['max_acc_drop']:.4f}"
        for name in GATED
    )
    finish(report, 8, ok, f"{detail}; {seconds / 60:.1f} min (< 30)")


@pytest.fixture(scope="module")
def layout_results():
    cfg = ProbeConfig(variants=("standard",) + GATED)
    return layout_probe_experiment(SEEDS, cfg)


def test_criterion_9_layout_probe(report, layout_results):
    summary = directional_summary(layout_results)
    ok = all(summary[name]["tail_wins"] >= 7 for name in GATED)
    detail = "; ".join(f"{name} tail-recall wins {summary[name]['tail_wins']}/10" for name in GATED)
    finish(report, 9, ok, detail)


# --- decoding contracts --------------------------------------------------------------------


@pytest.fixture(scope="module")
def decode_model():
    spec = TaskSpec(kind="repeat_trap", seed=21, n_train=600, n_val=10, n_test=1000)
    corpus = gen_repeat_trap(spec)
    cfg = TrainConfig(lr=2e-3, batch_size=32, d=32, seed=21)
    # one epoch in, forced past the gold length, the model loops on every input
    params, _ = train(cfg, [(i.source, i.target) for i in corpus.train], len(corpus.vocab), epochs=1)
    return params, [i.source for i in corpus.test]


def test_criterion_10_decoding_contracts(report, decode_model):
    params, sources = decode_model
    att = DiminishConfig.dydim(SQRT, LOG)
    blocked = DecodeConfig("beam", width=3, max_len=40, min_len=30, ngram_block=3)
    unblocked = DecodeConfig("beam", width=3, max_len=40, min_len=30)
    dupes = fallbacks = looping = 0
    for src in sources:
        free = ngrams(decode(params, src, unblocked, att).output, 3)
        looping += len(free) != len(set(free))
        rec = decode(params, src, blocked, att)
        if rec.fallback:
            fallbacks += 1
            continue
        grams = ngrams(rec.output, 3)
        dupes += len(grams) != len(set(grams))
    mismatches = 0
    for src in sources:
        for kw in ({}, {"min_len": 30, "ngram_block": 3}):
            g = decode(params, src, DecodeConfig("greedy", max_len=40, **kw), att)
            b = decode(params, src, DecodeConfig("beam", width=1, max_len=40, **kw), att)
            mismatches += g.output != b.output
    n = len(sources)
    ok = looping > 0 and dupes == 0 and fallbacks < 0.01 * n and mismatches == 0
    finish(report, 10, ok, f"{n} outputs: duplicate-trigram outputs {dupes} (unblocked: {looping}), "
                           f"fallbacks {fallbacks}; "
                           f"beam-1 vs greedy mismatches {mismatches}/{2 * n} (plain and blocked)")


# --- metrics ---------------------------------------------------------------------------------


def close(a, b, tol=1e-12):
    return np.allclose(a, b, rtol=0.0, atol=tol)


def test_criterion_11_metric_oracles(report):
    rng = np.random.default_rng(12)
    bad = 0
    pairs = []
    for _ in range(1000):
        a = rng.integers(0, 6, rng.integers(0, 12)).tolist()
        b = rng.integers(0, 6, rng.integers(0, 12)).tolist()
        pairs.append((a, b))
        for n in (1, 2, 3):
            bad += not close(rouge_n(a, b, n), oracles.rouge_n(a, b, n))
            bad += not close(repetition_ratio(a, n), oracles.repetition(a, n))
            bad += not close(novel_ngram_pct(a, b, n), oracles.novel(a, b, n))
        bad += not close(rouge_l(a, b), oracles.rouge_l(a, b))
    for i in range(0, 1000, 5):
        cands, refs = [p[0] for p in pairs[i : i + 5]], [p[1] for p in pairs[i : i + 5]]
        for smooth in (False, True):
            bad += not close(corpus_bleu(cands, refs, smooth=smooth), oracles.bleu(cands, refs, smooth=smooth))
    hand = [
        rouge_n(["the", "cat", "sat"], ["the", "cat"], 1)[:2] == (2 / 3, 1.0),
        math.isclose(rouge_n(["the", "cat", "sat"], ["the", "cat"], 1)[2], 0.8, abs_tol=1e-15),
        rouge_l(list("acbd"), list("abcd"))[:2] == (0.75, 0.75),
        rouge_l([], list("abc"))[2] == 0.0,
        rouge_n(list("abc"), list("xyz"), 1)[2] == 0.0,
        repetition_ratio(list("abcd"), 1) == 0.0,
        repetition_ratio(list("abab"), 1) == 0.5,
        repetition_ratio(list("ababa"), 2) == 0.5,
        novel_ngram_pct(list("abc"), list("abcd"), 2) == 0.0,
        novel_ngram_pct(list("xy"), list("abcd"), 1) == 1.0,
        corpus_bleu([list("abcdef")], [list("abcdef")]) == 1.0,
        math.isclose(corpus_bleu([list("abcdef")], [list("abcdefgh")]), math.exp(1 - 8 / 6), rel_tol=1e-15),
        corpus_bleu([list("abcx")], [list("abcy")]) == 0.0,
    ]
    ok = bad == 0 and all(hand)
    finish(report, 11, ok, f"1000 random pairs, oracle mismatches {bad}; hand examples {sum(hand)}/{len(hand)}")


def test_criterion_12_crossover(report):
    # 1 / (2 sqrt(x + 1)) = 1 / (x + 1)  <=>  sqrt(x + 1) = 2
    x = crossover_point(SQRT, LOG)
    ok = x is not None and abs(x - 3.0) <= 1e-8
    finish(report, 12, ok, f"crossover_point(sqrt, log) = {x!r}, expected 3 within 1e-8")
