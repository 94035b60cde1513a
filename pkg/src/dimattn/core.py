"""Concave transforms, submodular coverage and diminishing attentions.

Everything here works in float64. The batch functions take the raw attention
history of a single encoder state; :class:`CoverageTracker` is the streaming
counterpart that advances every encoder state by one decoding step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ConcaveTransform",
    "LOG",
    "SQRT",
    "DiminishConfig",
    "PRESETS",
    "CoverageTracker",
    "eval_transform",
    "transform_derivative",
    "submodular_coverage",
    "diminishing_attention",
    "dynamic_diminishing_attention",
    "effective_coverage",
    "running_max_before",
    "crossover_point",
    "parse_transform",
    "parse_diminish",
]


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a transform."""


_KINDS = ("log", "sqrt", "pow")


@dataclass(frozen=True)
class ConcaveTransform:
    """A strictly increasing concave ``g`` on ``[0, inf)``.

    ``kind`` is one of ``"log"`` (``log_a(x + 1)``, ``param`` is the base),
    ``"sqrt"`` (``sqrt(x + 1)``) or ``"pow"`` (``(x + 1) ** p``, ``param``
    is the exponent). Calling the transform returns ``g(x) + b`` where the
    offset ``b = -g(0)`` anchors the value at zero.
    """

    kind: str
    param: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "log":
            base = math.e if self.param is None else float(self.param)
            if not 1.0 < base <= 16.0:
                raise ValueError(f"log base must lie in (1, 16], got {base}")
            object.__setattr__(self, "param", base)
        elif self.kind == "pow":
            if self.param is None or not 0.0 < float(self.param) < 1.0:
                raise ValueError(f"power exponent must lie in (0, 1), got {self.param}")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise ValueError("sqrt takes no parameter")

    @property
    def offset(self) -> float:
        """``b = -g(0)``."""
        return 0.0 if self.kind == "log" else -1.0

    @property
    def name(self) -> str:
        if self.kind == "sqrt":
            return "sqrt"
        if self.kind == "log":
            return "log" if self.param == math.e else f"log{self.param:g}"
        return f"pow{self.param:g}"

    def __str__(self) -> str:
        return self.name

    def __call__(self, x):
        return eval_transform(self, x)

    def raw(self, x):
        """``g(x)`` without the offset, vectorised over numpy arrays."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log":
            return np.log(x + 1.0) / math.log(self.param)
        if self.kind == "sqrt":
            return np.sqrt(x + 1.0)
        return np.power(x + 1.0, self.param)

    def anchored(self, x: np.ndarray) -> np.ndarray:
        """``g(x) + b`` on an array, without domain checks.

        The log1p/expm1 forms keep full precision near zero, which matters
        because diminishing attention differences small coverages.
        """
        if self.kind == "log":
            if self.param == math.e:
                return np.log1p(x)
            return np.log1p(x) / math.log(self.param)
        if self.kind == "sqrt":
            return np.expm1(0.5 * np.log1p(x))
        return np.expm1(self.param * np.log1p(x))

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log":
            return 1.0 / ((x + 1.0) * math.log(self.param))
        if self.kind == "sqrt":
            return 0.5 / np.sqrt(x + 1.0)
        return self.param * np.power(x + 1.0, self.param - 1.0)


LOG = ConcaveTransform("log")
SQRT = ConcaveTransform("sqrt")


def parse_transform(text: str) -> ConcaveTransform:
    """Parse ``"log"``, ``"log1.9"``, ``"sqrt"`` or ``"pow0.65"``."""
    text = text.strip().lower()
    if text in ("log", "ln", "loge"):
        return LOG
    if text == "sqrt":
        return SQRT
    for kind in ("log", "pow"):
        if text.startswith(kind):
            try:
                value = float(text[len(kind):])
            except ValueError:
                break
            return ConcaveTransform(kind, value)
    raise ValueError(f"cannot parse transform {text!r}")


def _check_nonnegative(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError("transform is only defined for x >= 0")
    return arr


def eval_transform(g: ConcaveTransform, x):
    """Return ``g(x) + b``; zero exactly at ``x = 0``."""
    arr = _check_nonnegative(x)
    out = g.anchored(arr)
    return float(out) if out.ndim == 0 else out


def transform_derivative(g: ConcaveTransform, x):
    arr = _check_nonnegative(x)
    out = g.derivative(arr)
    return float(out) if out.ndim == 0 else out


def _history(history: Sequence[float]) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64).reshape(-1)
    if np.any(np.isnan(h)) or np.any(h < 0):
        raise DomainError("attention scores must be >= 0")
    return h


def _prefix_sums(h: np.ndarray) -> np.ndarray:
    # np.add.accumulate is a strict left-to-right scan, which is exactly what
    # CoverageTracker does one step at a time.
    return np.add.accumulate(h) if h.size else h


def _gains(g: ConcaveTransform, before: np.ndarray, after: np.ndarray) -> np.ndarray:
    return g.anchored(after) - g.anchored(before)


def submodular_coverage(g: ConcaveTransform, history: Sequence[float]) -> float:
    """``F(A) = g(sum(A)) + b``; ``F`` of the empty history is 0."""
    h = _history(history)
    if h.size == 0:
        return 0.0
    return float(g.anchored(_prefix_sums(h)[-1]))


def diminishing_attention(g: ConcaveTransform, history: Sequence[float]) -> np.ndarray:
    """Effective attention ``F(A^t) - F(A^{t-1})`` for every step of ``history``."""
    h = _history(history)
    after = _prefix_sums(h)
    before = np.concatenate(([0.0], after[:-1])) if h.size else after
    return _gains(g, before, after)


def running_max_before(history: Sequence[float]) -> np.ndarray:
    """``P^t``: maximum raw score strictly before step ``t`` (0 at ``t = 0``)."""
    h = _history(history)
    if h.size == 0:
        return h
    return np.concatenate(([0.0], np.maximum.accumulate(h)[:-1]))


def _check_probabilities(h: np.ndarray):
    if np.any(h > 1.0):
        raise DomainError("dynamic diminishing attention needs raw scores in [0, 1]")


def dynamic_diminishing_attention(
    g1: ConcaveTransform, g2: ConcaveTransform, history: Sequence[float]
) -> np.ndarray:
    """Convex mix of two diminishing attentions weighted by the running max.

    Step ``t`` uses ``P = max(history[:t])`` (``P = 0`` at the first step) as
    the weight of ``g1``'s gain and ``1 - P`` for ``g2``'s gain.
    """
    h = _history(history)
    _check_probabilities(h)
    after = _prefix_sums(h)
    before = np.concatenate(([0.0], after[:-1])) if h.size else after
    p = running_max_before(h)
    return p * _gains(g1, before, after) + (1.0 - p) * _gains(g2, before, after)


def effective_coverage(effective_scores: Sequence[float]) -> float:
    """Sum of effective attention; for DimAttn it telescopes to ``F(A)``."""
    return float(np.sum(np.asarray(effective_scores, dtype=np.float64)))


def crossover_point(
    g1: ConcaveTransform, g2: ConcaveTransform, upper: float = 1e6, tol: float = 1e-10
) -> Optional[float]:
    """Coverage value where ``g1'`` and ``g2'`` are equal, or ``None``.

    Bisection on the derivative gap over ``[0, upper]``; ``None`` when the
    gap does not change sign there (including identical transforms).
    """
    def gap(x):
        return float(g1.derivative(x) - g2.derivative(x))

    lo, hi = 0.0, float(upper)
    f_lo, f_hi = gap(lo), gap(hi)
    if f_lo == 0.0 and f_hi == 0.0:
        return None
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        return None
    for _ in range(500):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        f_mid = gap(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_ATTN_KINDS = ("standard", "dim", "dydim")


@dataclass(frozen=True)
class DiminishConfig:
    """Which effective attention a decoder uses.

    ``dim`` uses ``g``; ``dydim`` mixes ``g1`` (weighted by ``P``) and ``g2``.
    Effective scores are used as-is unless ``renormalize`` is set.
    ``detach_p`` keeps the running max out of backward passes.
    """

    kind: str = "standard"
    g: Optional[ConcaveTransform] = None
    g1: Optional[ConcaveTransform] = None
    g2: Optional[ConcaveTransform] = None
    renormalize: bool = False
    detach_p: bool = True

    def __post_init__(self):
        if self.kind not in _ATTN_KINDS:
            raise ValueError(f"attention kind must be one of {_ATTN_KINDS}, got {self.kind!r}")
        if self.kind == "dim" and self.g is None:
            raise ValueError("dim attention needs a transform g")
        if self.kind == "dydim":
            if self.g1 is None or self.g2 is None:
                raise ValueError("dydim attention needs transforms g1 and g2")
            if self.g1 == self.g2:
                raise ValueError("dydim needs two distinct transforms")

    @classmethod
    def standard(cls) -> "DiminishConfig":
        return cls()

    @classmethod
    def dim(cls, g: ConcaveTransform = LOG, **kw) -> "DiminishConfig":
        return cls("dim", g=g, **kw)

    @classmethod
    def dydim(cls, g1: ConcaveTransform = LOG, g2: ConcaveTransform = SQRT, **kw) -> "DiminishConfig":
        return cls("dydim", g1=g1, g2=g2, **kw)

    def spec(self) -> str:
        if self.kind == "standard":
            return "standard"
        if self.kind == "dim":
            return f"dim:{self.g}"
        return f"dydim:{self.g1},{self.g2}"

    def to_dict(self) -> dict:
        return {"attention": self.spec(), "renormalize": self.renormalize, "detach_p": self.detach_p}

    def effective(self, history: Sequence[float]) -> np.ndarray:
        """Batch effective scores for one encoder state's raw history."""
        if self.kind == "standard":
            return _history(history).copy()
        if self.kind == "dim":
            return diminishing_attention(self.g, history)
        return dynamic_diminishing_attention(self.g1, self.g2, history)

    def effective_matrix(self, attention) -> np.ndarray:
        """Effective rows for a ``(steps, states)`` raw attention matrix."""
        A = np.asarray(attention, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("attention matrix must be 2-D (steps x states)")
        tracker = CoverageTracker(A.shape[1])
        return np.array([tracker.step(row, self) for row in A]).reshape(A.shape)


# g = g1 choices and g2 partners used for the host models in the experiments
# of the source work; "bert" reads "g = g1 = 2.2" as log base 2.2.
PRESETS = {
    "pg": ("log", "sqrt"),
    "bart": ("pow0.65", "pow0.6"),
    "bert": ("log2.2", "sqrt"),
    "imgpara": ("log1.9", "log1.95"),
}


def parse_diminish(text: str, renormalize: bool = False, detach_p: bool = True) -> DiminishConfig:
    """Parse ``standard``, ``dim:<g>``, ``dydim:<g1>,<g2>`` or ``dim@<preset>``."""
    text = text.strip()
    if text == "standard":
        return DiminishConfig(renormalize=renormalize, detach_p=detach_p)
    kind, _, rest = text.partition(":")
    kind, _, preset = kind.partition("@")
    if preset:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        first, second = PRESETS[preset]
        rest = first if kind == "dim" else f"{first},{second}"
    if kind == "dim":
        return DiminishConfig("dim", g=parse_transform(rest), renormalize=renormalize, detach_p=detach_p)
    if kind == "dydim":
        parts = rest.split(",")
        if len(parts) != 2:
            raise ValueError(f"dydim needs two transforms, got {rest!r}")
        return DiminishConfig(
            "dydim",
            g1=parse_transform(parts[0]),
            g2=parse_transform(parts[1]),
            renormalize=renormalize,
            detach_p=detach_p,
        )
    raise ValueError(f"cannot parse attention kind {text!r}")


@dataclass
class CoverageTracker:
    """Streaming coverage state for every encoder state of one hypothesis.

    ``coverage`` is the running sum of raw attention, ``running_max`` the
    running max used as ``P`` for the next step, ``steps`` the number of
    decoding steps absorbed so far.
    """

    n_states: int
    coverage: np.ndarray = field(default=None)
    running_max: np.ndarray = field(default=None)
    steps: int = 0

    def __post_init__(self):
        if self.coverage is None:
            self.coverage = np.zeros(self.n_states)
        if self.running_max is None:
            self.running_max = np.zeros(self.n_states)

    def copy(self) -> "CoverageTracker":
        return CoverageTracker(self.n_states, self.coverage.copy(), self.running_max.copy(), self.steps)

    def step(self, raw: Sequence[float], cfg: DiminishConfig) -> np.ndarray:
        """Absorb one raw attention row and return the effective row."""
        a = np.asarray(raw, dtype=np.float64)
        if a.shape != (self.n_states,):
            raise ValueError(f"expected {self.n_states} scores, got shape {a.shape}")
        if np.any(np.isnan(a)) or np.any(a < 0):
            raise DomainError("attention scores must be >= 0")
        before = self.coverage
        after = before + a
        if cfg.kind == "standard":
            eff = a.copy()
        elif cfg.kind == "dim":
            eff = _gains(cfg.g, before, after)
        else:
            _check_probabilities(a)
            p = self.running_max
            eff = p * _gains(cfg.g1, before, after) + (1.0 - p) * _gains(cfg.g2, before, after)
        self.coverage = after
        self.running_max = np.maximum(self.running_max, a)
        self.steps += 1
        return eff
