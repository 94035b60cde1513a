"""Greedy and beam-search decoding with n-gram blocking.

Every hypothesis owns its coverage trackers (they live in the decoder state
row that belongs to it), so diverging hypotheses never share coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set

import numpy as np

from .core import DiminishConfig
from .seq2seq import (
    BOS,
    EOS,
    DecoderState,
    GenerationRecord,
    ModelParams,
    decoder_step,
    encode_full,
    initial_state,
)

_MODES = ("greedy", "beam")


@dataclass
class DecodeConfig:
    mode: str = "beam"
    width: int = 4
    max_len: int = 100
    alpha: float = 0.0
    ngram_block: Optional[int] = None
    min_len: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not 1 <= self.width <= 64:
            raise ValueError("beam width must lie in [1, 64]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.ngram_block is not None and self.ngram_block < 2:
            raise ValueError("ngram_block must be >= 2")
        if self.min_len < 0:
            raise ValueError("min_len must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def blocked_tokens(tokens: Sequence[int], n: int) -> Set[int]:
    """Tokens whose appending would repeat an ``n``-gram already in ``tokens``."""
    k = n - 1
    if len(tokens) < k:
        return set()
    tokens = list(tokens)
    tail = tokens[len(tokens) - k:] if k else []
    out = set()
    for i in range(len(tokens) - k):
        if tokens[i : i + k] == tail:
            out.add(tokens[i + k])
    return out


def ngram_blocked(tokens: Sequence[int], candidate: int, n: int) -> bool:
    if n < 2:
        raise ValueError("n must be >= 2")
    return candidate in blocked_tokens(tokens, n)


def length_normalized_score(log_prob: float, length: int, alpha: float) -> float:
    """``log_prob / length ** alpha``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return log_prob / (length ** alpha)


@dataclass
class Hypothesis:
    tokens: List[int]
    log_prob: float
    raw: List[np.ndarray] = field(default_factory=list)
    effective: List[np.ndarray] = field(default_factory=list)
    finished: bool = False
    fallback: bool = False
    row: int = 0

    @property
    def length(self) -> int:
        """Emitted tokens, counting the final eos of a finished hypothesis."""
        return len(self.tokens) + (1 if self.finished else 0)

    def score(self, alpha: float) -> float:
        return length_normalized_score(self.log_prob, max(self.length, 1), alpha)

    def record(self, source: Sequence[int]) -> GenerationRecord:
        n = len(source)
        raw = np.array(self.raw) if self.raw else np.zeros((0, n))
        eff = np.array(self.effective) if self.effective else np.zeros((0, n))
        return GenerationRecord(list(source), list(self.tokens), raw, eff, self.log_prob, self.finished, self.fallback)


def _step_scores(hyps, logp, cfg: DecodeConfig, t: int, block: bool) -> np.ndarray:
    scores = np.array([h.log_prob for h in hyps])[:, None] + logp
    if block and cfg.ngram_block:
        for i, h in enumerate(hyps):
            for tok in blocked_tokens(h.tokens, cfg.ngram_block):
                scores[i, tok] = -np.inf
    if t < cfg.min_len:
        scores[:, EOS] = -np.inf
    return scores


def _ranked_candidates(scores: np.ndarray):
    """Finite (row, token) pairs, best first; ties by row then token id."""
    rows, toks = np.nonzero(np.isfinite(scores))
    vals = scores[rows, toks]
    order = np.lexsort((toks, rows, -vals))
    return rows[order], toks[order], vals[order]


def beam_search(
    params: ModelParams, source: Sequence[int], cfg: DecodeConfig, attention: DiminishConfig
) -> List[Hypothesis]:
    """Hypotheses ranked by ``log_prob / length ** alpha`` (best first)."""
    enc = encode_full(params, source)
    state: DecoderState = initial_state(params, enc, 1)
    alive = [Hypothesis([], 0.0)]
    finished: List[Hypothesis] = []
    bound_len = float(cfg.max_len) ** cfg.alpha
    for t in range(cfg.max_len):
        last = [h.tokens[-1] if h.tokens else BOS for h in alive]
        logp, new_state, raw, eff = decoder_step(params, enc, state, last, attention)
        scores = _step_scores(alive, logp, cfg, t, block=True)
        fallback = False
        if not np.isfinite(scores).any():
            scores = _step_scores(alive, logp, cfg, t, block=False)
            fallback = True
        rows, toks, vals = _ranked_candidates(scores)
        nxt: List[Hypothesis] = []
        for r, tok, val in zip(rows, toks, vals):
            if len(nxt) >= cfg.width:
                break
            parent = alive[r]
            child = Hypothesis(
                parent.tokens if tok == EOS else parent.tokens + [int(tok)],
                float(val),
                parent.raw + [raw[r]],
                parent.effective + [eff[r]],
                finished=bool(tok == EOS),
                fallback=parent.fallback or fallback,
                row=int(r),
            )
            (finished if child.finished else nxt).append(child)
        alive = nxt
        if not alive:
            break
        if len(finished) >= cfg.width:
            worst_kept = sorted((h.score(cfg.alpha) for h in finished), reverse=True)[cfg.width - 1]
            best_bound = max(h.log_prob for h in alive) / bound_len
            if best_bound <= worst_kept:
                break
        state = new_state.select([h.row for h in alive])
    pool = finished + alive
    order = sorted(range(len(pool)), key=lambda i: (-pool[i].score(cfg.alpha), i))
    return [pool[i] for i in order]


def greedy_decode(
    params: ModelParams, source: Sequence[int], cfg: DecodeConfig, attention: DiminishConfig
) -> GenerationRecord:
    enc = encode_full(params, source)
    state = initial_state(params, enc, 1)
    hyp = Hypothesis([], 0.0)
    for t in range(cfg.max_len):
        last = hyp.tokens[-1] if hyp.tokens else BOS
        logp, state, raw, eff = decoder_step(params, enc, state, [last], attention)
        scores = _step_scores([hyp], logp, cfg, t, block=True)
        if not np.isfinite(scores).any():
            scores = _step_scores([hyp], logp, cfg, t, block=False)
            hyp.fallback = True
        # first maximal entry = lowest token id among ties
        tok = int(np.argmax(scores[0]))
        hyp.log_prob = float(scores[0, tok])
        hyp.raw.append(raw[0])
        hyp.effective.append(eff[0])
        if tok == EOS:
            hyp.finished = True
            break
        hyp.tokens.append(tok)
    return hyp.record(source)


def decode(
    params: ModelParams, source: Sequence[int], cfg: DecodeConfig, attention: DiminishConfig
) -> GenerationRecord:
    if cfg.mode == "greedy":
        return greedy_decode(params, source, cfg, attention)
    return beam_search(params, source, cfg, attention)[0].record(source)


def decode_all(params, sources, cfg: DecodeConfig, attention: DiminishConfig) -> List[GenerationRecord]:
    return [decode(params, src, cfg, attention) for src in sources]
