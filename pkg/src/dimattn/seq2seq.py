"""Toy GRU encoder-decoder with additive cross-attention.

Two code paths share one parameter set:

* a taped, teacher-forced path (``sequence_loss``) used for training, where
  coverage is a running sum of the softmax rows so gradients reach every
  earlier step's attention;
* a plain numpy float64 path (``encode`` / ``attend`` / ``decoder_step``)
  used at inference, where coverage lives in :class:`CoverageTracker`.

The decoder feeds the previous context vector back into its input, and the
effective attention row selected by :class:`DiminishConfig` weights the
encoder states to form the context.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .core import ConcaveTransform, CoverageTracker, DiminishConfig, parse_diminish

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

CHECKPOINT_FORMAT = "dimattn-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} in epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class Vocab:
    """Token/id bijection with ``<pad> <bos> <eos> <unk>`` fixed at ids 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens: Sequence[str], strict: bool = True) -> List[int]:
        out = []
        for tok in tokens:
            if tok in self.stoi:
                out.append(self.stoi[tok])
            elif strict:
                raise KeyError(f"token {tok!r} not in vocabulary")
            else:
                out.append(UNK)
        return out

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids]


PARAM_NAMES = (
    "emb",
    "enc_wx", "enc_bx", "enc_wh", "enc_bh",
    "init_w", "init_b",
    "dec_wx", "dec_wc", "dec_bx", "dec_wh", "dec_bh",
    "att_wh", "att_ws", "att_b", "att_v",
    "out_w", "out_b",
)


@dataclass
class ModelParams:
    arrays: dict
    vocab_size: int
    d: int

    @classmethod
    def init(cls, vocab_size: int, d: int = 64, seed: int = 0, scale: Optional[float] = None) -> "ModelParams":
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(d) if scale is None else scale

        def u(*shape):
            return rng.uniform(-s, s, size=shape)

        arrays = {
            "emb": rng.normal(0.0, 0.3, size=(vocab_size, d)),
            "enc_wx": u(d, 3 * d), "enc_bx": np.zeros(3 * d),
            "enc_wh": u(d, 3 * d), "enc_bh": np.zeros(3 * d),
            "init_w": u(d, d), "init_b": np.zeros(d),
            "dec_wx": u(d, 3 * d), "dec_wc": u(d, 3 * d), "dec_bx": np.zeros(3 * d),
            "dec_wh": u(d, 3 * d), "dec_bh": np.zeros(3 * d),
            "att_wh": u(d, d), "att_ws": u(d, d), "att_b": np.zeros(d), "att_v": u(d),
            "out_w": u(2 * d, vocab_size), "out_b": np.zeros(vocab_size),
        }
        return cls(arrays, vocab_size, d)

    @classmethod
    def zeros(cls, vocab_size: int, d: int = 64) -> "ModelParams":
        p = cls.init(vocab_size, d)
        return cls({k: np.zeros_like(v) for k, v in p.arrays.items()}, vocab_size, d)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.vocab_size, self.d)

    def __getitem__(self, name):
        return self.arrays[name]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    attention: DiminishConfig = field(default_factory=DiminishConfig)
    clip_norm: float = 2.0
    d: int = 64
    finetune_fraction: float = 0.25
    dtype: str = "float32"
    teacher_forcing: bool = True
    patience: Optional[int] = None
    min_delta: float = 0.01

    def __post_init__(self):
        if isinstance(self.attention, str):
            self.attention = parse_diminish(self.attention)
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.clip_norm <= 0 or self.d < 1:
            raise ValueError("training hyperparameters must be positive")
        if not 0.0 <= self.finetune_fraction <= 1.0:
            raise ValueError("finetune_fraction must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not self.teacher_forcing:
            raise ValueError("training is always teacher-forced")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed,
            "clip_norm": self.clip_norm, "d": self.d, "finetune_fraction": self.finetune_fraction,
            "dtype": self.dtype, "patience": self.patience, "min_delta": self.min_delta,
            **self.attention.to_dict(),
        }


# --- taped training path -------------------------------------------------------------


def tensor_transform(g: ConcaveTransform, x: ad.Tensor) -> ad.Tensor:
    """``g(x) + b`` on a tensor, same formulas as ``ConcaveTransform.anchored``."""
    lp = ad.log1p(x)
    if g.kind == "log":
        return lp if g.param == math.e else lp * (1.0 / math.log(g.param))
    p = 0.5 if g.kind == "sqrt" else g.param
    return ad.expm1(lp * p)


class DiminishState:
    """Taped counterpart of :class:`CoverageTracker` for a batch of rows."""

    def __init__(self, cfg: DiminishConfig):
        self.cfg = cfg
        self.coverage: Optional[ad.Tensor] = None
        self.p: Optional[ad.Tensor] = None
        self.prev: dict = {}

    def _gain(self, g: ConcaveTransform, key: str, coverage: ad.Tensor) -> ad.Tensor:
        now = tensor_transform(g, coverage)
        before = self.prev.get(key)
        self.prev[key] = now
        return now if before is None else now - before

    def step(self, raw: ad.Tensor) -> ad.Tensor:
        cfg = self.cfg
        if cfg.kind == "standard":
            return raw
        coverage = raw if self.coverage is None else self.coverage + raw
        self.coverage = coverage
        if cfg.kind == "dim":
            eff = self._gain(cfg.g, "g", coverage)
        else:
            gain1 = self._gain(cfg.g1, "g1", coverage)
            gain2 = self._gain(cfg.g2, "g2", coverage)
            if self.p is None:
                # P = 0 before any history exists
                eff = gain2
                self.p = ad.Tensor(raw.data.copy()) if cfg.detach_p else raw
            else:
                eff = self.p * gain1 + (1.0 - self.p) * gain2
                self.p = ad.maximum(self.p, raw, detach=cfg.detach_p)
        if cfg.renormalize:
            eff = eff / (ad.sum(eff, axis=-1, keepdims=True) + 1e-12)
        return eff


def attention_step(
    s: ad.Tensor, H: ad.Tensor, HP: ad.Tensor, att_ws: ad.Tensor, att_v: ad.Tensor,
    mask_bias: Optional[np.ndarray], state: DiminishState,
) -> Tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Taped attention for one decoder step: (context, raw row, effective row)."""
    B, T, d = H.shape
    q = ad.reshape(s @ att_ws, (B, 1, d))
    scores = ad.tanh(HP + q) @ att_v
    if mask_bias is not None:
        scores = scores + mask_bias
    raw = ad.softmax(scores, axis=-1)
    eff = state.step(raw)
    ctx = ad.reshape(ad.reshape(eff, (B, 1, T)) @ H, (B, d))
    return ctx, raw, eff


class Batch(NamedTuple):
    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray


def make_batch(pairs: Sequence[Tuple[Sequence[int], Sequence[int]]]) -> Batch:
    """Pad (source, target, ...) tuples; extra tuple fields are ignored."""
    pairs = [(p[0], p[1]) for p in pairs]
    B = len(pairs)
    ts = max(len(s) for s, _ in pairs)
    td = max(len(t) for _, t in pairs) + 1
    src = np.full((B, ts), PAD, dtype=np.int64)
    tgt_in = np.full((B, td), PAD, dtype=np.int64)
    tgt_out = np.full((B, td), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        if len(s) == 0:
            raise ValueError(f"instance {i} has an empty source")
        src[i, : len(s)] = s
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : len(t) + 1] = t
        tgt_out[i, : len(t)] = t
        tgt_out[i, len(t)] = EOS
    return Batch(src, src != PAD, tgt_in, tgt_out)


def forward_teacher(P: dict, batch: Batch, cfg: DiminishConfig):
    """Teacher-forced forward pass; returns (logits, raw rows, effective rows)."""
    dtype = P["emb"].data.dtype
    B, Ts = batch.src.shape
    d = P["emb"].shape[1]
    E = ad.embedding(P["emb"], batch.src)
    XP = E @ P["enc_wx"] + P["enc_bx"]
    h = ad.Tensor(np.zeros((B, d), dtype=dtype))
    mask = batch.src_mask.astype(dtype)
    full = bool(batch.src_mask.all())
    hs = []
    for t in range(Ts):
        h = ad.gru_cell(XP[:, t], h, P["enc_wh"], P["enc_bh"], None if full else mask[:, t])
        hs.append(h)
    H = ad.stack(hs, axis=1)
    s = ad.tanh(h @ P["init_w"] + P["init_b"])
    HP = H @ P["att_wh"] + P["att_b"]
    mask_bias = None if full else np.where(batch.src_mask, 0.0, -1e9).astype(dtype)

    Ed = ad.embedding(P["emb"], batch.tgt_in)
    XD = Ed @ P["dec_wx"] + P["dec_bx"]
    ctx = ad.Tensor(np.zeros((B, d), dtype=dtype))
    state = DiminishState(cfg)
    outs, raws, effs = [], [], []
    for t in range(batch.tgt_in.shape[1]):
        xp = XD[:, t] + ctx @ P["dec_wc"]
        s = ad.gru_cell(xp, s, P["dec_wh"], P["dec_bh"])
        ctx, raw, eff = attention_step(s, H, HP, P["att_ws"], P["att_v"], mask_bias, state)
        outs.append(ad.concat([s, ctx], axis=-1))
        raws.append(raw)
        effs.append(eff)
    O = ad.stack(outs, axis=1)
    logits = O @ P["out_w"] + P["out_b"]
    return logits, raws, effs


def sequence_loss(P: dict, batch: Batch, cfg: DiminishConfig) -> ad.Tensor:
    logits, _, _ = forward_teacher(P, batch, cfg)
    return ad.cross_entropy(logits, batch.tgt_out, ignore_index=PAD)


def evaluate_loss(params: "ModelParams", pairs, cfg: DiminishConfig, batch_size: int = 64, dtype="float32") -> float:
    """Token-weighted mean cross-entropy under teacher forcing."""
    P = {k: ad.Tensor(v.astype(dtype)) for k, v in params.arrays.items()}
    total = count = 0.0
    with ad.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = make_batch(pairs[start : start + batch_size])
            n = float((batch.tgt_out != PAD).sum())
            total += float(sequence_loss(P, batch, cfg).data) * n
            count += n
    return total / max(count, 1.0)


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * (g * g)
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train(
    config: TrainConfig,
    corpus: Sequence[Tuple[Sequence[int], Sequence[int]]],
    vocab_size: int,
    params: Optional[ModelParams] = None,
    attention: Optional[DiminishConfig] = None,
    epochs: Optional[int] = None,
    log=None,
    val=None,
) -> Tuple[ModelParams, List[float]]:
    """Teacher-forced cross-entropy training with Adam and global-norm clipping.

    ``attention`` and ``epochs`` override the config (used by the fine-tune
    protocol). With ``config.patience`` set, training stops once the
    monitored loss (validation loss when ``val`` is given, otherwise the
    epoch training loss) has gone ``patience`` epochs without a relative
    improvement of ``min_delta``; the parameters with the lowest monitored
    loss are returned. ``log(epoch, train_loss, val_loss)`` is called after
    every epoch. Returns the trained parameters and the mean loss per epoch.
    """
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    cfg = config.attention if attention is None else attention
    n_epochs = config.epochs if epochs is None else epochs
    if params is None:
        params = ModelParams.init(vocab_size, config.d, seed=config.seed)
    dtype = np.dtype(config.dtype)
    work = {k: v.astype(dtype, copy=True) for k, v in params.arrays.items()}
    opt = Adam(work, config.lr)
    # shuffling stream depends on the seed and on which phase is running
    rng = np.random.default_rng([config.seed, len(cfg.spec()), n_epochs])
    losses = []
    early_stop = config.patience is not None
    best_loss, ref_loss, best, stale = math.inf, math.inf, None, 0
    for epoch in range(n_epochs):
        order = rng.permutation(len(corpus))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = make_batch([corpus[i] for i in order[start : start + config.batch_size]])
            leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in work.items()}
            loss = sequence_loss(leaves, batch, cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            ad.backward(loss)
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
            clip_grads(grads, config.clip_norm)
            if config.lr > 0:
                opt.step(work, grads)
            total += value * len(batch.src)
            count += len(batch.src)
        losses.append(total / count)
        val_loss = None
        if val is not None:
            current = ModelParams(work, params.vocab_size, params.d)
            val_loss = evaluate_loss(current, val, cfg, dtype=config.dtype)
        if early_stop:
            monitored = losses[-1] if val_loss is None else val_loss
            if monitored < best_loss:
                best_loss, best = monitored, {k: v.copy() for k, v in work.items()}
            # patience only resets on a relative improvement of min_delta
            if monitored < ref_loss * (1.0 - config.min_delta):
                ref_loss, stale = monitored, 0
            else:
                stale += 1
        if log is not None:
            log(epoch, losses[-1], val_loss)
        if early_stop and stale >= config.patience:
            break
    if early_stop and best is not None:
        work = best
    out = ModelParams({k: v.astype(np.float64) for k, v in work.items()}, params.vocab_size, params.d)
    if not out.is_finite():
        raise TrainingDiverged(n_epochs - 1, float("nan"))
    return out, losses


def pretrain_then_finetune(
    config: TrainConfig, corpus, vocab_size: int, log=None
) -> Tuple[ModelParams, List[float]]:
    """Standard attention for most of the budget, then ``config.attention``.

    With a standard config, or a zero fine-tune fraction, this is plain
    ``train``.
    """
    if config.attention.kind == "standard" or config.finetune_fraction == 0:
        return train(config, corpus, vocab_size, log=log)
    ft = int(round(config.epochs * config.finetune_fraction))
    pre = config.epochs - ft
    params, losses = train(config, corpus, vocab_size, attention=DiminishConfig(), epochs=pre, log=log)
    params, more = train(config, corpus, vocab_size, params=params, epochs=ft, log=log)
    return params, losses + more


# --- numpy inference path ------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _gru(xp, h, wh, bh):
    d = h.shape[-1]
    hp = h @ wh + bh
    z = _sigmoid(xp[..., :d] + hp[..., :d])
    r = _sigmoid(xp[..., d : 2 * d] + hp[..., d : 2 * d])
    n = np.tanh(xp[..., 2 * d :] + r * hp[..., 2 * d :])
    return (1.0 - z) * n + z * h


class Encoded(NamedTuple):
    states: np.ndarray  # (T_enc, d)
    keys: np.ndarray  # states @ att_wh + att_b
    init: np.ndarray  # initial decoder state (d,)


def encode(params: ModelParams, source_ids: Sequence[int]) -> np.ndarray:
    """One GRU state per source token."""
    return encode_full(params, source_ids).states


def encode_full(params: ModelParams, source_ids: Sequence[int]) -> Encoded:
    ids = np.asarray(source_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty source")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise KeyError(f"token id outside vocabulary of size {params.vocab_size}")
    p = params.arrays
    xp = p["emb"][ids] @ p["enc_wx"] + p["enc_bx"]
    h = np.zeros(params.d)
    states = np.empty((len(ids), params.d))
    for t in range(len(ids)):
        h = _gru(xp[t], h, p["enc_wh"], p["enc_bh"])
        states[t] = h
    init = np.tanh(h @ p["init_w"] + p["init_b"])
    return Encoded(states, states @ p["att_wh"] + p["att_b"], init)


def raw_attention(params: ModelParams, s: np.ndarray, enc: Encoded) -> np.ndarray:
    """Softmax of additive scores; ``s`` is ``(d,)`` or ``(k, d)``."""
    p = params.arrays
    q = s @ p["att_ws"]
    scores = np.tanh(enc.keys + q[..., None, :]) @ p["att_v"]
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def _context(eff: np.ndarray, states: np.ndarray, cfg: DiminishConfig) -> np.ndarray:
    if cfg.renormalize:
        eff = eff / (eff.sum(axis=-1, keepdims=True) + 1e-12)
    return eff @ states


def attend(
    params: ModelParams, s: np.ndarray, enc: Encoded, tracker: CoverageTracker,
    cfg: DiminishConfig, step: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Attention for one decoder state: (context, raw row, effective row).

    The tracker absorbs the raw row; its step count must equal ``step``.
    """
    if tracker.steps != step:
        raise RuntimeError(f"coverage tracker at step {tracker.steps}, decoder at step {step}")
    raw = raw_attention(params, s, enc)
    eff = tracker.step(raw, cfg)
    return _context(eff, enc.states, cfg), raw, eff


@dataclass
class DecoderState:
    s: np.ndarray  # (k, d)
    ctx: np.ndarray  # (k, d)
    trackers: List[CoverageTracker]

    def select(self, rows: Sequence[int]) -> "DecoderState":
        rows = list(rows)
        return DecoderState(self.s[rows].copy(), self.ctx[rows].copy(), [self.trackers[r].copy() for r in rows])


def initial_state(params: ModelParams, enc: Encoded, k: int = 1) -> DecoderState:
    n = enc.states.shape[0]
    return DecoderState(
        np.tile(enc.init, (k, 1)), np.zeros((k, params.d)), [CoverageTracker(n) for _ in range(k)]
    )


def decoder_step(
    params: ModelParams, enc: Encoded, state: DecoderState, tokens: Sequence[int], cfg: DiminishConfig
):
    """Advance ``k`` decoder rows by one token each.

    Returns (log-probs ``(k, V)``, new state, raw rows, effective rows). The
    input state's trackers are not modified.
    """
    p = params.arrays
    tokens = np.asarray(tokens, dtype=np.int64)
    xp = p["emb"][tokens] @ p["dec_wx"] + p["dec_bx"] + state.ctx @ p["dec_wc"]
    s = _gru(xp, state.s, p["dec_wh"], p["dec_bh"])
    raw = raw_attention(params, s, enc)
    trackers = [t.copy() for t in state.trackers]
    eff = np.stack([tr.step(row, cfg) for tr, row in zip(trackers, raw)])
    ctx = _context(eff, enc.states, cfg)
    logits = np.concatenate([s, ctx], axis=-1) @ p["out_w"] + p["out_b"]
    logits = logits - logits.max(axis=-1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    return logp, DecoderState(s, ctx, trackers), raw, eff


@dataclass
class GenerationRecord:
    source: List[int]
    output: List[int]
    raw: np.ndarray  # (T_dec, T_enc), one row per decoding step
    effective: np.ndarray
    log_prob: float
    finished: bool = True
    fallback: bool = False

    @property
    def coverage(self) -> np.ndarray:
        """Per-state effective coverage (column sums of the effective matrix)."""
        return self.effective.sum(axis=0)

    @property
    def raw_coverage(self) -> np.ndarray:
        return self.raw.sum(axis=0)

    def to_dict(self, index: Optional[int] = None, vocab: Optional[Vocab] = None) -> dict:
        out = {
            "source": self.source,
            "output": self.output,
            "raw": self.raw.tolist(),
            "effective": self.effective.tolist(),
            "coverage": self.coverage.tolist(),
            "log_prob": self.log_prob,
            "finished": self.finished,
            "fallback": self.fallback,
        }
        if vocab is not None:
            out["source_tokens"] = vocab.decode(self.source)
            out["output_tokens"] = vocab.decode(self.output)
        if index is not None:
            out = {"index": index, **out}
        return out


def generate(params: ModelParams, source_ids: Sequence[int], decode_config, attention: DiminishConfig):
    """Decode one source; see :mod:`dimattn.decode` for the search itself."""
    from .decode import decode

    return decode(params, source_ids, decode_config, attention)


def teacher_forced_accuracy(params: ModelParams, corpus, cfg: DiminishConfig, batch_size: int = 64) -> float:
    """Fraction of target tokens (eos included) predicted correctly under teacher forcing."""
    correct = total = 0
    P = {k: ad.Tensor(v) for k, v in params.arrays.items()}
    with ad.no_grad():
        for start in range(0, len(corpus), batch_size):
            batch = make_batch(corpus[start : start + batch_size])
            logits, _, _ = forward_teacher(P, batch, cfg)
            pred = logits.data.argmax(axis=-1)
            mask = batch.tgt_out != PAD
            correct += int(((pred == batch.tgt_out) & mask).sum())
            total += int(mask.sum())
    return correct / max(total, 1)


# --- checkpoints ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, vocab: Vocab, config: Optional[dict] = None):
    """Structured-text checkpoint: shapes plus row-major float64 values.

    Layout (JSON object)::

        {"format": "dimattn-checkpoint", "version": 1,
         "vocab_size": V, "d": d, "vocab": [token, ...], "config": {...},
         "params": {name: {"shape": [...], "data": [row-major floats]}}}
    """
    if len(vocab) != params.vocab_size:
        raise ValueError("vocabulary size does not match the parameters")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "vocab_size": params.vocab_size,
        "d": params.d,
        "vocab": vocab.itos,
        "config": config or {},
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in params.arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> Tuple[ModelParams, Vocab, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    vocab = Vocab()
    if doc["vocab"][: len(RESERVED)] != list(RESERVED):
        raise ValueError("checkpoint vocabulary does not start with the reserved tokens")
    for tok in doc["vocab"][len(RESERVED):]:
        vocab.add(tok)
    arrays = {}
    for name in PARAM_NAMES:
        entry = doc["params"][name]
        arrays[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return ModelParams(arrays, doc["vocab_size"], doc["d"]), vocab, doc.get("config", {})
