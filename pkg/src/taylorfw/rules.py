"""Batch rules deciding which Taylor points are refreshed at iteration k.

Indices are 0-based. Iteration 0 always refreshes everything (the model is
built at ``x^0``), so rules are only evaluated for ``k >= 1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class RuleKind(str, enum.Enum):
    SBD_SQRT_K = "sbd-sqrt"
    DBD_SQRT_K = "dbd-sqrt"
    SBD_FOURTH_K = "sbd-k4"
    DBD_FOURTH_K = "dbd-k4"
    EMPTY = "empty"
    FULL = "full"

    @property
    def stochastic(self) -> bool:
        return self in (RuleKind.SBD_SQRT_K, RuleKind.SBD_FOURTH_K)


class Sampling(str, enum.Enum):
    UNIFORM = "uniform"
    CYCLIC = "cyclic"


class RuleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RuleSpec:
    kind: RuleKind = RuleKind.DBD_SQRT_K
    K: int | None = None
    sampling: Sampling = Sampling.CYCLIC
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if self.kind in (RuleKind.SBD_FOURTH_K, RuleKind.DBD_FOURTH_K):
            if self.K is None or int(self.K) < 1:
                raise RuleConfigError(f"rule {self.kind.value} needs a horizon K >= 1")
            object.__setattr__(self, "K", int(self.K))

    def with_seed(self, seed: int) -> "RuleSpec":
        return RuleSpec(self.kind, self.K, self.sampling, int(seed))

    def with_horizon(self, K: int) -> "RuleSpec":
        return RuleSpec(self.kind, int(K), self.sampling, self.seed)


def iteration_rng(seed: int, k: int) -> np.random.Generator:
    """Independent stream for iteration ``k`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2 ** 63 - 1), int(k)])))


def _fourth_root_floor(K: int) -> int:
    return math.isqrt(math.isqrt(K))


def expected_batch_size(spec: RuleSpec, k: int, n: int) -> float:
    """``E|B_k|`` for stochastic rules, ``|B_k|`` for deterministic ones."""
    if k < 1:
        raise ValueError("rules are evaluated for k >= 1")
    kind = spec.kind
    if kind is RuleKind.SBD_SQRT_K:
        return min(n / math.sqrt(k), float(n))
    if kind is RuleKind.SBD_FOURTH_K:
        return min(n / spec.K ** 0.25, float(n))
    return float(len(batch_indices(spec, k, n)))


def batch_indices(spec: RuleSpec, k: int, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sorted (uniform) or cyclic-ordered index array ``B_k``.

    Stochastic rules draw ``floor(beta) + Bernoulli(beta - floor(beta))``
    indices; ``rng`` defaults to the stream keyed by ``(spec.seed, k)``.
    Deterministic rules never touch ``rng``.
    """
    if k < 1:
        raise ValueError("rules are evaluated for k >= 1")
    kind = spec.kind
    if kind is RuleKind.EMPTY:
        return np.empty(0, dtype=np.int64)
    if kind is RuleKind.FULL:
        return np.arange(n, dtype=np.int64)
    if kind is RuleKind.DBD_SQRT_K:
        r = math.isqrt(k)
        return np.arange(n, dtype=np.int64) if r * r == k else np.empty(0, dtype=np.int64)
    if kind is RuleKind.DBD_FOURTH_K:
        period = max(_fourth_root_floor(spec.K), 1)
        return np.arange(n, dtype=np.int64) if k % period == 0 else np.empty(0, dtype=np.int64)

    beta = expected_batch_size(spec, k, n)
    if rng is None:
        rng = iteration_rng(spec.seed, k)
    base = math.floor(beta)
    frac = beta - base
    size = min(base + int(rng.random() < frac), n) if frac > 0 else base
    if size == 0:
        return np.empty(0, dtype=np.int64)
    if spec.sampling is Sampling.CYCLIC:
        start = int(rng.integers(n))
        return (start + np.arange(size, dtype=np.int64)) % n
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)
