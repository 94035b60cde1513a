"""Generation metrics over token sequences (no stemming, clipped counts)."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

Tokens = Sequence[Hashable]


def ngrams(tokens: Tokens, n: int) -> List[tuple]:
    tokens = list(tokens)
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _prf(overlap: int, n_cand: int, n_ref: int) -> Tuple[float, float, float]:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> Tuple[float, float, float]:
    """(precision, recall, F1) of clipped n-gram overlap."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = Counter(ngrams(candidate, n)), Counter(ngrams(reference, n))
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> Tuple[float, float, float]:
    return _prf(lcs_length(candidate, reference), len(candidate), len(reference))


def corpus_bleu(
    candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4, smooth: bool = False
) -> float:
    """Single-reference corpus BLEU in [0, 1].

    Geometric mean of clipped n-gram precisions times the brevity penalty
    ``exp(1 - r / c)`` when the candidate corpus is shorter. Without
    smoothing any zero precision gives 0; ``smooth`` adds one to every
    numerator and denominator.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = Counter(ngrams(cand, n)), Counter(ngrams(ref, n))
            matches[n - 1] += sum((c & r).values())
            totals[n - 1] += sum(c.values())
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if smooth:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def repetition_ratio(tokens: Tokens, n: int) -> float:
    """``1 - distinct / total`` over the n-grams of one sequence; 0 if too short."""
    grams = ngrams(tokens, n)
    if not grams:
        return 0.0
    return 1.0 - len(set(grams)) / len(grams)


def novel_ngram_pct(candidate: Tokens, source: Tokens, n: int) -> float:
    """Fraction of candidate n-grams that never occur in the source."""
    grams = ngrams(candidate, n)
    if not grams:
        return 0.0
    seen = set(ngrams(source, n))
    return sum(1 for g in grams if g not in seen) / len(grams)


def split_sentences(tokens: Tokens, delimiter) -> List[List]:
    sentences, cur = [], []
    for tok in tokens:
        if tok == delimiter:
            if cur:
                sentences.append(cur)
            cur = []
        else:
            cur.append(tok)
    if cur:
        sentences.append(cur)
    return sentences


def lead(source: Tokens, k: int, delimiter) -> List:
    """First ``k`` sentences joined, delimiters dropped. No delimiter: the whole source."""
    return [tok for sent in split_sentences(source, delimiter)[:k] for tok in sent]


def lead_overlap(candidate: Tokens, source: Tokens, k: int = 3, delimiter=".") -> Dict[str, Tuple[float, float, float]]:
    ref = lead(source, k, delimiter)
    return {
        "rouge1": rouge_n(candidate, ref, 1),
        "rouge2": rouge_n(candidate, ref, 2),
        "rougeL": rouge_l(candidate, ref),
    }


def coverage_entropy(coverage: Sequence[float]) -> float:
    """Natural-log entropy of the coverage vector normalised to sum to one."""
    c = np.asarray(coverage, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("coverage must be non-negative")
    total = c.sum()
    if total <= 0:
        raise ValueError("coverage vector is all zero")
    p = c / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def short_long_split(
    instances: Sequence, metric: Callable[[Sequence], float], length: Callable = None
) -> Tuple[float, float]:
    """Metric on the shorter and longer halves of a test set.

    Instances are sorted by source length (stable, so equal lengths keep
    their order) and the first ``ceil(n / 2)`` form the short half.
    """
    if len(instances) < 2:
        raise ValueError("need at least 2 instances")
    length = length or (lambda x: len(x.source))
    order = sorted(range(len(instances)), key=lambda i: length(instances[i]))
    cut = (len(order) + 1) // 2
    short = [instances[i] for i in order[:cut]]
    long = [instances[i] for i in order[cut:]]
    return metric(short), metric(long)


@dataclass
class MetricBundle:
    rouge1: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rouge2: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rougeL: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bleu: float = 0.0
    repetition: Dict[int, float] = field(default_factory=dict)
    novel: Dict[int, float] = field(default_factory=dict)
    lead_rouge: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    entropy: Optional[float] = None

    def flat(self) -> Dict[str, float]:
        row = {}
        for name in ("rouge1", "rouge2", "rougeL"):
            for label, v in zip("prf", getattr(self, name)):
                row[f"{name}_{label}"] = v
        row["bleu"] = self.bleu
        for n, v in sorted(self.repetition.items()):
            row[f"rep{n}"] = v
        for n, v in sorted(self.novel.items()):
            row[f"novel{n}"] = v
        for name, triple in self.lead_rouge.items():
            row[f"lead_{name}_f"] = triple[2]
        row["entropy"] = self.entropy if self.entropy is not None else float("nan")
        return row

    def to_dict(self) -> dict:
        return asdict(self)


def instance_bundle(candidate, reference, source=None, coverage=None, delimiter=".", lead_k: int = 3) -> MetricBundle:
    b = MetricBundle(
        rouge1=rouge_n(candidate, reference, 1),
        rouge2=rouge_n(candidate, reference, 2),
        rougeL=rouge_l(candidate, reference),
        bleu=corpus_bleu([candidate], [reference], smooth=True),
        repetition={n: repetition_ratio(candidate, n) for n in (1, 2, 3)},
    )
    if source is not None:
        b.novel = {n: novel_ngram_pct(candidate, source, n) for n in range(1, 6)}
        b.lead_rouge = lead_overlap(candidate, source, lead_k, delimiter)
    if coverage is not None and np.sum(coverage) > 0:
        b.entropy = coverage_entropy(coverage)
    return b


def write_csv(path, rows: Sequence[Dict[str, object]]):
    if not rows:
        raise ValueError("no rows to write")
    keys: List[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
