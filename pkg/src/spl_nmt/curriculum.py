"""Competence-based curriculum baselines (sentence length and word rarity)."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Pair, example_tokens


def difficulty_sl(example: Pair) -> float:
    """Target-sentence token count."""
    return float(len(example[1]))


def unigram_freqs(corpus: Sequence[Pair], vocab: Sequence[int]) -> dict[int, float]:
    """Add-one smoothed relative frequencies of target tokens."""
    counts = Counter(t for _, tgt in corpus for t in tgt)
    total = sum(counts.values()) + len(vocab)
    return {w: (counts.get(w, 0) + 1) / total for w in vocab}


def difficulty_wr(example: Pair, freqs: dict[int, float]) -> float:
    """Mean ``-log p(w)`` over the target tokens."""
    tgt = example[1]
    if not tgt:
        raise ValueError("word rarity is undefined for an empty sentence")
    return float(np.mean([-math.log(freqs[w]) for w in tgt]))


def cdf_ranks(scores: np.ndarray) -> np.ndarray:
    """Rank of each score in (0, 1]: position in a stable sort, plus one, over N."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1) / len(scores)
    return ranks


@dataclass(frozen=True)
class DifficultyTable:
    sl: np.ndarray
    wr: np.ndarray
    cdf_sl: np.ndarray
    cdf_wr: np.ndarray
    tokens: np.ndarray

    @classmethod
    def build(cls, corpus: Sequence[Pair], vocab: Sequence[int]) -> "DifficultyTable":
        freqs = unigram_freqs(corpus, vocab)
        sl = np.array([difficulty_sl(p) for p in corpus])
        wr = np.array([difficulty_wr(p, freqs) for p in corpus])
        tokens = np.array([example_tokens(p) for p in corpus])
        return cls(sl, wr, cdf_ranks(sl), cdf_ranks(wr), tokens)

    def ranks(self, measure: str) -> np.ndarray:
        if measure == "sl":
            return self.cdf_sl
        if measure == "wr":
            return self.cdf_wr
        raise ValueError(f"unknown difficulty measure {measure!r}")

    def export_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("example_id", "sl", "wr", "cdf_sl", "cdf_wr"))
            for i in range(len(self.sl)):
                w.writerow((i, int(self.sl[i]), repr(float(self.wr[i])),
                            repr(float(self.cdf_sl[i])), repr(float(self.cdf_wr[i]))))


@dataclass(frozen=True)
class CompetenceSchedule:
    c0: float = 0.01
    T: int = 1500

    def __post_init__(self):
        if not 0.0 < self.c0 < 1.0:
            raise ValueError("c0 must lie in (0, 1)")
        if self.T <= 0:
            raise ValueError("T must be positive")


def competence(t: float, schedule: CompetenceSchedule) -> float:
    """Square-root competence ``min(1, sqrt(t (1 - c0^2) / T + c0^2))``."""
    if t < 0:
        raise ValueError("step must be non-negative")
    c0sq = schedule.c0 * schedule.c0
    return min(1.0, math.sqrt(t * (1.0 - c0sq) / schedule.T + c0sq))


def admissible(table: DifficultyTable, measure: str, c: float) -> np.ndarray:
    return np.flatnonzero(table.ranks(measure) <= c)


def admissible_sampler(table: DifficultyTable, schedule: CompetenceSchedule, t: int,
                       rng: np.random.Generator, batch_size_tokens: int,
                       measure: str = "sl") -> np.ndarray:
    """Indices drawn uniformly without replacement from the examples whose
    difficulty rank is at most ``c(t)``, until the token budget is filled."""
    pool = admissible(table, measure, competence(t, schedule))
    if len(pool) == 0:
        raise ValueError("no admissible examples at this competence; raise c0")
    picked, used = [], 0
    for i in rng.permutation(pool):
        cost = table.tokens[i]
        if picked and used + cost > batch_size_tokens:
            break
        picked.append(i)
        used += cost
    return np.array(picked)
