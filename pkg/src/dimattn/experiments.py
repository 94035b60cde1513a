"""Desk-scale directional experiments on the synthetic tasks.

Both experiments follow the same protocol: pretrain one model with standard
attention, then fork it into a standard-continued branch and one branch per
diminishing variant, each fine-tuned for the same number of epochs on the
same data. Branches therefore differ only in the attention mechanism.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DiminishConfig, parse_diminish
from .decode import DecodeConfig, decode
from .metrics import coverage_entropy, repetition_ratio, rouge_n
from .seq2seq import ModelParams, TrainConfig, teacher_forced_accuracy, train
from .synth import Corpus, TaskSpec, gen_keyword_summarize, gen_repeat_trap


@dataclass
class ProbeConfig:
    """Settings shared by every seed of a probe.

    Pretraining stops at the plateau of the training loss (``patience``
    epochs without a relative improvement of ``min_delta``), capped at
    ``max_pretrain_epochs``; ``plateau="val"`` watches the validation loss
    instead. Each branch is then fine-tuned for
    ``max(min_finetune_epochs, ceil(finetune_fraction * pretrain epochs))``.
    """

    variants: Sequence[str] = ("standard", "dim:log", "dydim:sqrt,log")
    max_pretrain_epochs: int = 40
    patience: int = 3
    min_delta: float = 0.01
    plateau: str = "train"
    finetune_fraction: float = 0.25
    min_finetune_epochs: int = 3
    d: int = 64
    lr: float = 1e-3
    batch_size: int = 32
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 1000
    max_decode: int = 20

    def __post_init__(self):
        if self.plateau not in ("train", "val"):
            raise ValueError("plateau must be 'train' or 'val'")

    def finetune_epochs(self, pretrain_epochs: int) -> int:
        return max(self.min_finetune_epochs, math.ceil(self.finetune_fraction * pretrain_epochs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        return d


@dataclass
class BranchResult:
    variant: str
    accuracy: float
    entropy: float
    repetition: float
    tail_recall: float = float("nan")
    losses: List[float] = field(default_factory=list)


@dataclass
class SeedResult:
    seed: int
    pretrain_losses: List[float]
    branches: Dict[str, BranchResult]
    seconds: float

    def row(self) -> dict:
        out = {"seed": self.seed, "seconds": round(self.seconds, 2)}
        for name, b in self.branches.items():
            out[f"{name}/acc"] = b.accuracy
            out[f"{name}/H"] = b.entropy
            out[f"{name}/rep2"] = b.repetition
            if not np.isnan(b.tail_recall):
                out[f"{name}/tail_recall"] = b.tail_recall
        return out


def tail_salient_recall(output: Sequence[int], source: Sequence[int], target: Sequence[int]) -> Optional[float]:
    """ROUGE-1 recall of the salient tokens that sit in the back half of the source.

    Salient positions are recovered by matching the target, in order, against
    the source (the target lists salient tokens in source order). Returns
    None when no salient token lies in the tail half.
    """
    positions, j = [], 0
    for i, tok in enumerate(source):
        if j < len(target) and tok == target[j]:
            positions.append(i)
            j += 1
    half = len(source) / 2.0
    tail = [source[i] for i in positions if i >= half]
    if not tail:
        return None
    return rouge_n(output, tail, 1)[1]


def _branch_metrics(params, corpus: Corpus, att: DiminishConfig, cfg: ProbeConfig, tail: bool) -> BranchResult:
    pairs = [(i.source, i.target) for i in corpus.test]
    acc = teacher_forced_accuracy(params, pairs, att)
    dcfg = DecodeConfig("greedy", max_len=cfg.max_decode)
    ent, rep, rec = [], [], []
    for inst in corpus.test:
        r = decode(params, inst.source, dcfg, att)
        if r.coverage.sum() > 0:
            ent.append(coverage_entropy(r.coverage))
        rep.append(repetition_ratio(r.output, 2))
        if tail and inst.tag == "tail":
            v = tail_salient_recall(r.output, inst.source, inst.target)
            if v is not None:
                rec.append(v)
    return BranchResult(
        att.spec(), acc, float(np.mean(ent)), float(np.mean(rep)), float(np.mean(rec)) if rec else float("nan")
    )


def run_seed(
    corpus: Corpus,
    seed: int,
    cfg: ProbeConfig,
    tail: bool = False,
    pretrained: Optional[Tuple[ModelParams, List[float]]] = None,
    log: Optional[Callable[[str], None]] = None,
) -> SeedResult:
    """Pretrain (or reuse ``pretrained = (params, losses)``), fork, fine-tune, measure."""
    start = time.perf_counter()
    tcfg = TrainConfig(
        lr=cfg.lr, batch_size=cfg.batch_size, seed=seed, d=cfg.d, patience=cfg.patience, min_delta=cfg.min_delta
    )
    pairs = [(i.source, i.target) for i in corpus.train]
    val = [(i.source, i.target) for i in corpus.val]
    vsize = len(corpus.vocab)
    if pretrained is None:
        pretrained = train(
            tcfg, pairs, vsize, attention=DiminishConfig.standard(), epochs=cfg.max_pretrain_epochs,
            val=val if cfg.plateau == "val" else None,
        )
    pretrained, pre_losses = pretrained
    ft_epochs = cfg.finetune_epochs(len(pre_losses))
    if log:
        log(f"seed {seed}: pretrained {len(pre_losses)} epochs, fine-tuning {ft_epochs}")
    ft_cfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, seed=seed, d=cfg.d)
    branches = {}
    for name in cfg.variants:
        att = parse_diminish(name)
        params, losses = train(ft_cfg, pairs, vsize, params=pretrained, attention=att, epochs=ft_epochs)
        res = _branch_metrics(params, corpus, att, cfg, tail)
        res.losses = losses
        branches[name] = res
        if log:
            log(f"seed {seed} {name}: acc={res.accuracy:.4f} H={res.entropy:.4f} rep2={res.repetition:.4f}"
                + (f" tail={res.tail_recall:.4f}" if tail else ""))
    return SeedResult(seed, pre_losses, branches, time.perf_counter() - start)


def repeat_trap_corpus(seed: int, cfg: ProbeConfig) -> Corpus:
    return gen_repeat_trap(
        TaskSpec(kind="repeat_trap", seed=seed, n_train=cfg.n_train, n_val=cfg.n_val, n_test=cfg.n_test)
    )


def keyword_corpus(seed: int, cfg: ProbeConfig) -> Corpus:
    return gen_keyword_summarize(
        TaskSpec(kind="keyword", seed=seed, n_train=cfg.n_train, n_val=cfg.n_val, n_test=cfg.n_test)
    )


def repeat_trap_experiment(seeds: Sequence[int], cfg: ProbeConfig, log=None) -> List[SeedResult]:
    return [run_seed(repeat_trap_corpus(s, cfg), s, cfg, log=log) for s in seeds]


def layout_probe_experiment(seeds: Sequence[int], cfg: ProbeConfig, log=None) -> List[SeedResult]:
    return [run_seed(keyword_corpus(s, cfg), s, cfg, tail=True, log=log) for s in seeds]


def directional_summary(results: Sequence[SeedResult], baseline: str = "standard") -> Dict[str, Dict[str, float]]:
    """Per-variant seed counts against the baseline branch of the same seed."""
    summary = {}
    for name in results[0].branches:
        if name == baseline:
            continue
        h = r = t = 0
        drop = 0.0
        for res in results:
            b, v = res.branches[baseline], res.branches[name]
            h += v.entropy > b.entropy
            r += v.repetition <= b.repetition
            t += v.tail_recall > b.tail_recall
            drop = max(drop, b.accuracy - v.accuracy)
        summary[name] = {"entropy_wins": h, "repetition_wins": r, "tail_wins": t, "max_acc_drop": drop}
    return summary
