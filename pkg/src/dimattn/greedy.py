"""Budgeted monotone submodular maximization on small ground sets.

Elements are the integers ``0 .. n-1``. Subsets are handled either as
sorted tuples or as bitmasks (bit ``i`` set when element ``i`` is in the set).
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import LOG, ConcaveTransform, parse_transform

MAX_ORACLE_N = 24
MAX_SUBMODULAR_CHECK_N = 12
MAX_ENUMERATION = 5_000_000


class WeightedCoverageFunction:
    """``f(S) = sum_c w_c * g(sum_{s in S} cover[s, c]) + b_c`` with ``f(empty) = 0``.

    ``transform=None`` means the identity, which makes ``f`` modular.
    """

    def __init__(self, weights: Sequence[float], cover, transform: Optional[ConcaveTransform] = LOG):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.cover = np.asarray(cover, dtype=np.float64)
        if self.cover.ndim != 2 or self.cover.shape[1] != self.weights.shape[0]:
            raise ValueError("cover must be an (elements x concepts) matrix matching the weights")
        if np.any(self.weights < 0) or np.any(self.cover < 0):
            raise ValueError("weights and cover entries must be non-negative")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.cover))):
            raise ValueError("weights and cover entries must be finite")
        self.transform = transform

    @property
    def n(self) -> int:
        return self.cover.shape[0]

    def _g(self, x: np.ndarray) -> np.ndarray:
        return x if self.transform is None else self.transform.anchored(x)

    def _value_of_sums(self, sums: np.ndarray) -> np.ndarray:
        return (self._g(sums) * self.weights).sum(axis=-1)

    def __call__(self, subset: Iterable[int]) -> float:
        return evaluate(self, subset)

    def subset_values(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(self.n)) & 1).astype(np.float64)
        return self._value_of_sums(bits @ self.cover)

    def table(self) -> np.ndarray:
        """Values of all ``2**n`` subsets, indexed by bitmask."""
        return self.subset_values(np.arange(1 << self.n))

    def gains(self, sums: np.ndarray, candidates: Sequence[int]) -> np.ndarray:
        """Marginal gains of ``candidates`` given the current per-concept sums."""
        rows = self.cover[np.asarray(candidates, dtype=np.int64)]
        return ((self._g(sums + rows) - self._g(sums)) * self.weights).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "weights": self.weights.tolist(),
            "cover": self.cover.tolist(),
            "transform": "identity" if self.transform is None else self.transform.name,
        }

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, n_concepts: int, transform=LOG, density: float = 0.5):
        weights = rng.uniform(0.0, 1.0, n_concepts)
        cover = rng.uniform(0.0, 1.0, (n, n_concepts)) * (rng.random((n, n_concepts)) < density)
        return cls(weights, cover, transform)


class TableFunction:
    """A set function given by its value on every bitmask."""

    def __init__(self, values: Sequence[float]):
        self.values = np.asarray(values, dtype=np.float64)
        n = int(round(math.log2(len(self.values)))) if len(self.values) else -1
        if n < 0 or (1 << n) != len(self.values):
            raise ValueError("table length must be a power of two")
        self._n = n

    @property
    def n(self) -> int:
        return self._n

    def table(self) -> np.ndarray:
        return self.values

    def __call__(self, subset: Iterable[int]) -> float:
        return float(self.values[to_mask(subset, self.n)])


def to_mask(subset: Iterable[int], n: int) -> int:
    mask = 0
    for v in subset:
        v = int(v)
        if not 0 <= v < n:
            raise ValueError(f"element {v} is not in the ground set 0..{n - 1}")
        mask |= 1 << v
    return mask


def evaluate(f: WeightedCoverageFunction, subset: Iterable[int]) -> float:
    members = sorted(set(int(v) for v in subset))
    to_mask(members, f.n)
    sums = f.cover[members].sum(axis=0) if members else np.zeros(f.cover.shape[1])
    return float(f._value_of_sums(sums))


@dataclass
class GreedyResult:
    subset: List[int]
    value: float
    trace: List[float]


def _check_budget(n: int, m: int):
    if not 1 <= m <= n:
        raise ValueError(f"budget m must satisfy 1 <= m <= n={n}, got {m}")


def greedy_maximize(f: WeightedCoverageFunction, m: int, lazy: bool = False) -> GreedyResult:
    """Repeatedly add the element with the largest marginal gain.

    Ties go to the lowest element id. ``lazy`` keeps stale gains in a heap
    and only re-evaluates the top, which is valid because gains can only
    shrink; it returns the same set as the plain loop.
    """
    _check_budget(f.n, m)
    sums = np.zeros(f.cover.shape[1])
    chosen: List[int] = []
    trace: List[float] = []
    if not lazy:
        remaining = list(range(f.n))
        for _ in range(m):
            gains = f.gains(sums, remaining)
            k = int(np.argmax(gains))
            v = remaining.pop(k)
            chosen.append(v)
            trace.append(float(gains[k]))
            sums = sums + f.cover[v]
    else:
        heap = [(-float(g), v) for v, g in enumerate(f.gains(sums, range(f.n)))]
        heapq.heapify(heap)
        fresh = set(range(f.n))
        while len(chosen) < m:
            neg, v = heapq.heappop(heap)
            if v in fresh:
                chosen.append(v)
                trace.append(-neg)
                sums = sums + f.cover[v]
                fresh = set()
                continue
            gain = float(f.gains(sums, [v])[0])
            fresh.add(v)
            heapq.heappush(heap, (-gain, v))
    return GreedyResult(chosen, evaluate(f, chosen), trace)


def brute_force_maximize(f: WeightedCoverageFunction, m: int, chunk: int = 200_000) -> Tuple[List[int], float]:
    """Exact optimum over all subsets of size at most ``m``.

    Ties go to the lexicographically smallest sorted subset.
    """
    _check_budget(f.n, m)
    if f.n > MAX_ORACLE_N:
        raise ValueError(f"ground set too large for enumeration (n={f.n} > {MAX_ORACLE_N})")
    total = sum(math.comb(f.n, k) for k in range(m + 1))
    if math.comb(f.n, m) > MAX_ENUMERATION:
        raise ValueError(f"too many subsets to enumerate ({total})")
    best_val, best_set = 0.0, ()
    for k in range(1, m + 1):
        combos = itertools.combinations(range(f.n), k)
        while True:
            block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
            if block.size == 0:
                break
            vals = f._value_of_sums(f.cover[block].sum(axis=1))
            top = vals.max()
            if top < best_val:
                continue
            cand = tuple(int(x) for x in block[int(np.argmax(vals))])
            if top > best_val or cand < best_set:
                best_val, best_set = float(top), cand
    return list(best_set), best_val


def _subset_min(values: np.ndarray, n: int) -> np.ndarray:
    """``out[T] = min over S subset of T of values[S]`` (sum-over-subsets DP)."""
    out = values.copy()
    idx = np.arange(len(values))
    for i in range(n):
        has = (idx >> i) & 1 == 1
        out[has] = np.minimum(out[has], out[idx[has] ^ (1 << i)])
    return out


def is_submodular(f, slack: float = 1e-9, check_monotone: bool = True) -> bool:
    """Exhaustive diminishing-returns check, plus monotonicity by default.

    For every element ``v`` the gain ``f(S + v) - f(S)`` must not increase
    from any ``S`` to any superset ``T`` not containing ``v``. The minimum
    gain over all subsets of each ``T`` is computed in one pass, so every
    pair ``S <= T`` is covered without enumerating pairs.
    """
    n = f.n
    if n > MAX_SUBMODULAR_CHECK_N:
        raise ValueError(f"exhaustive check limited to n <= {MAX_SUBMODULAR_CHECK_N}")
    table = np.asarray(f.table(), dtype=np.float64)
    masks = np.arange(1 << n)
    for v in range(n):
        bit = 1 << v
        gain = np.full(1 << n, np.inf)
        outside = (masks & bit) == 0
        gain[outside] = table[masks[outside] | bit] - table[masks[outside]]
        if check_monotone and np.any(gain[outside] < -slack):
            return False
        # subsets containing v are +inf, so they never win the minimum
        low = _subset_min(gain, n)
        if np.any(gain[outside] - low[outside] > slack):
            return False
    return True


def is_submodular_pairwise(f, slack: float = 1e-9) -> bool:
    """Literal check over all ``S <= T`` and ``v`` outside ``T`` (slow, for small n)."""
    n = f.n
    table = np.asarray(f.table(), dtype=np.float64)
    for T in range(1 << n):
        S = T
        while True:
            for v in range(n):
                bit = 1 << v
                if T & bit:
                    continue
                if (table[S | bit] - table[S]) - (table[T | bit] - table[T]) < -slack:
                    return False
            if table[S] > table[T] + slack:
                return False
            if S == 0:
                break
            S = (S - 1) & T
    return True


# --- instance files ---------------------------------------------------------------------


def save_instance(path, f: WeightedCoverageFunction, m: int):
    data = f.to_dict()
    data["m"] = m
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_instance(path) -> Tuple[WeightedCoverageFunction, int]:
    data = json.loads(Path(path).read_text())
    for key in ("m", "weights", "cover"):
        if key not in data:
            raise ValueError(f"instance file lacks {key!r}")
    name = data.get("transform", "log")
    transform = None if name == "identity" else parse_transform(name)
    f = WeightedCoverageFunction(data["weights"], data["cover"], transform)
    if "n" in data and int(data["n"]) != f.n:
        raise ValueError(f"n={data['n']} disagrees with the cover matrix ({f.n} rows)")
    m = int(data["m"])
    _check_budget(f.n, m)
    return f, m
