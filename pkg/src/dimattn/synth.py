"""Deterministic synthetic tasks and corpus file I/O.

All randomness comes from numpy's PCG64 bit generator seeded with
``[seed, split, index]``, so every instance is a pure function of the task
spec and its position, independent of how many other instances exist.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .seq2seq import RESERVED, Vocab

RNG_NAME = "numpy.PCG64"
DELIMITER = "."
TASKS = ("copy", "keyword", "repeat_trap")
_SPLITS = {"train": 0, "val": 1, "test": 2}
_DELIM_ID = len(RESERVED)  # id of "." in task_vocab
_FIRST = len(RESERVED) + 1


class Instance(NamedTuple):
    source: List[int]
    target: List[int]
    tag: str = ""


@dataclass
class TaskSpec:
    kind: str = "copy"
    vocab_size: int = 40
    min_len: int = 30
    max_len: int = 50
    salient_fraction: float = 0.25
    n_salient_types: int = 12
    n_distractors: int = 3
    multiplicity: int = 3
    concept_range: Tuple[int, int] = (5, 9)
    seed: int = 0
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    delimiters: bool = True

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"task kind must be one of {TASKS}, got {self.kind!r}")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("split sizes must be >= 1")
        if not 0.0 < self.salient_fraction < 1.0:
            raise ValueError("salient_fraction must lie in (0, 1)")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.vocab_size < len(RESERVED) + 4:
            raise ValueError("vocabulary too small")
        self.concept_range = tuple(self.concept_range)
        if self.kind == "repeat_trap":
            lo, hi = self.concept_range
            max_delims = self.min_len // 9 if self.delimiters else 0
            if self.n_distractors * self.multiplicity + 2 * hi > self.min_len - max_delims:
                raise ValueError("min_len too short for the distractor multiplicity and concept count")
            if hi > self.n_content - 1 - self.n_distractors:
                raise ValueError("not enough concept tokens in the vocabulary")

    @property
    def n_content(self) -> int:
        return self.vocab_size - len(RESERVED)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["concept_range"] = list(self.concept_range)
        return d


@dataclass
class Corpus:
    vocab: Vocab
    train: List[Instance]
    val: List[Instance]
    test: List[Instance]
    meta: Dict[str, str] = field(default_factory=dict)

    def split(self, name: str) -> List[Instance]:
        return getattr(self, name)


def task_vocab(spec: TaskSpec) -> Vocab:
    """``<pad> <bos> <eos> <unk> .`` followed by ``t05``, ``t06``, ..."""
    names = [DELIMITER] + [f"t{i:02d}" for i in range(len(RESERVED) + 1, spec.vocab_size)]
    return Vocab(names)


def _rng(spec: TaskSpec, split: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([spec.seed, _SPLITS[split], index]))


def _layout(rng, spec: TaskSpec) -> Tuple[int, np.ndarray]:
    """Total length and the boolean delimiter mask (a delimiter after every 8-12 tokens)."""
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    delim = np.zeros(length, dtype=bool)
    if spec.delimiters:
        pos = int(rng.integers(8, 13))
        while pos < length - 1:
            delim[pos] = True
            pos += 1 + int(rng.integers(8, 13))
    return length, delim


def _fill(delim: np.ndarray, content: Sequence[int]) -> List[int]:
    out, it = [], iter(content)
    for is_delim in delim:
        out.append(_DELIM_ID if is_delim else int(next(it)))
    return out


def _copy_instance(rng, spec: TaskSpec) -> Instance:
    length, delim = _layout(rng, spec)
    content = rng.integers(_FIRST, spec.vocab_size, size=int((~delim).sum()))
    src = _fill(delim, content)
    return Instance(src, list(src))


def _keyword_instance(rng, spec: TaskSpec) -> Instance:
    length, delim = _layout(rng, spec)
    slots = np.flatnonzero(~delim)
    n_sal = int(np.clip(round(spec.salient_fraction * length), 1, len(slots)))
    salient_ids = np.arange(_FIRST, _FIRST + spec.n_salient_types)
    noise_ids = np.arange(_FIRST + spec.n_salient_types, spec.vocab_size)
    tail = bool(rng.integers(2))
    rel = np.linspace(0.0, 1.0, len(slots))
    weights = (rel if tail else 1.0 - rel) ** 2 + 0.02
    chosen = np.sort(rng.choice(len(slots), size=n_sal, replace=False, p=weights / weights.sum()))
    content = rng.choice(noise_ids, size=len(slots))
    content[chosen] = rng.choice(salient_ids, size=n_sal)
    src = _fill(delim, content)
    target = [int(content[i]) for i in chosen]
    return Instance(src, target, "tail" if tail else "head")


def _repeat_trap_instance(rng, spec: TaskSpec) -> Instance:
    length, delim = _layout(rng, spec)
    n_slots = int((~delim).sum())
    distractors = np.arange(_FIRST, _FIRST + spec.n_distractors)
    concept_pool = np.arange(_FIRST + spec.n_distractors, spec.vocab_size)
    lo, hi = spec.concept_range
    k = int(rng.integers(lo, hi + 1))
    concepts = rng.choice(concept_pool, size=k, replace=False)
    # some concepts occur twice; the target still lists each once
    repeats = concepts[rng.random(k) < 0.3]
    body = list(concepts) + list(repeats)
    n_fill = n_slots - len(body)
    fill = list(np.repeat(distractors, spec.multiplicity))
    fill += list(rng.choice(distractors, size=n_fill - len(fill)))
    content = np.array(body + fill)
    rng.shuffle(content)
    src = _fill(delim, content)
    seen, target = set(), []
    for tok in src:
        if tok in set(concepts.tolist()) and tok not in seen:
            seen.add(tok)
            target.append(tok)
    return Instance(src, target)


_MAKERS = {"copy": _copy_instance, "keyword": _keyword_instance, "repeat_trap": _repeat_trap_instance}


def generate(spec: TaskSpec) -> Corpus:
    make = _MAKERS[spec.kind]
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    splits = {name: [make(_rng(spec, name, i), spec) for i in range(n)] for name, n in sizes.items()}
    meta = {"task": spec.kind, "rng": RNG_NAME, "seed": str(spec.seed), "vocab_size": str(spec.vocab_size)}
    return Corpus(task_vocab(spec), splits["train"], splits["val"], splits["test"], meta)


def gen_copy(spec: TaskSpec) -> Corpus:
    if spec.kind != "copy":
        spec = TaskSpec(**{**spec.to_dict(), "kind": "copy"})
    return generate(spec)


def gen_keyword_summarize(spec: TaskSpec) -> Corpus:
    if spec.kind != "keyword":
        spec = TaskSpec(**{**spec.to_dict(), "kind": "keyword"})
    return generate(spec)


def gen_repeat_trap(spec: TaskSpec) -> Corpus:
    if spec.kind != "repeat_trap":
        spec = TaskSpec(**{**spec.to_dict(), "kind": "repeat_trap"})
    return generate(spec)


# --- corpus files -------------------------------------------------------------------------


class CorpusFormatError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def write_corpus(path, instances: Sequence[Instance], vocab: Vocab, meta: Dict[str, str] = None):
    """Header ``# key=value ...`` then ``source tokens<TAB>target tokens`` per line."""
    meta = dict(meta or {})
    header = "# " + " ".join(f"{k}={v}" for k, v in meta.items())
    lines = [header]
    for inst in instances:
        lines.append(" ".join(vocab.decode(inst.source)) + "\t" + " ".join(vocab.decode(inst.target)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus_tokens(path) -> Tuple[Dict[str, str], List[Tuple[List[str], List[str]]]]:
    meta, rows = _read_rows(path)
    return meta, [(src, tgt) for _, src, tgt in rows]


def _read_rows(path):
    meta: Dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line_no == 1 and line.startswith("#"):
                for item in line[1:].split():
                    key, sep, value = item.partition("=")
                    if not sep:
                        raise CorpusFormatError(path, line_no, f"bad header item {item!r}")
                    meta[key] = value
                continue
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(path, line_no, f"expected 2 tab-separated fields, got {len(parts)}")
            src, tgt = parts[0].split(), parts[1].split()
            if not src:
                raise CorpusFormatError(path, line_no, "empty source")
            rows.append((line_no, src, tgt))
    return meta, rows


def load_tsv(path, vocab: Vocab = None) -> Tuple[Vocab, List[Instance], Dict[str, str]]:
    """Read a corpus file; ids are assigned by first occurrence unless ``vocab`` is given."""
    meta, rows = _read_rows(path)
    if vocab is None:
        vocab = Vocab()
        for _, src, tgt in rows:
            for tok in src + tgt:
                vocab.add(tok)
    instances = []
    for line_no, src, tgt in rows:
        try:
            instances.append(Instance(vocab.encode(src), vocab.encode(tgt)))
        except KeyError as err:
            raise CorpusFormatError(path, line_no, err.args[0]) from None
    return vocab, instances, meta
