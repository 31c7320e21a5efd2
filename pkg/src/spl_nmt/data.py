"""Synthetic translation corpora and length-bucketed token batching."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .model import N_SPECIAL, Batch

Pair = tuple[list[int], list[int]]

TASK_KINDS = ("copy", "reverse", "dict_map")


@dataclass(frozen=True)
class SyntheticTask:
    """``vocab_size`` counts content tokens; ids start after the special tokens."""

    kind: str = "dict_map"
    vocab_size: int = 64
    length_min: int = 3
    length_max: int = 20
    noise_prob: float = 0.1
    corpus_size: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if not 1 <= self.length_min <= self.length_max:
            raise ValueError("length range must satisfy 1 <= min <= max")
        if not 0.0 <= self.noise_prob < 1.0:
            raise ValueError("noise_prob must lie in [0, 1)")
        if self.corpus_size < 0:
            raise ValueError("corpus_size must be non-negative")

    @property
    def model_vocab(self) -> int:
        return self.vocab_size + N_SPECIAL


def task_mapping(task: SyntheticTask) -> np.ndarray:
    """The seeded source->target token bijection used by ``dict_map``."""
    # kept apart from the corpus stream so held-out sets share the mapping
    perm = np.random.default_rng([task.seed, 7919]).permutation(task.vocab_size)
    return perm + N_SPECIAL


def generate_corpus(task: SyntheticTask, mapping_seed: int | None = None) -> list[Pair]:
    """Deterministic corpus for ``task``.

    ``mapping_seed`` overrides the seed of the dict_map bijection, so a held-out
    set drawn with a different corpus seed can share the training mapping.
    """
    rng = np.random.default_rng([task.seed, 1])
    lo, hi = N_SPECIAL, N_SPECIAL + task.vocab_size
    mapping = None
    if task.kind == "dict_map":
        ms = task.seed if mapping_seed is None else mapping_seed
        mapping = task_mapping(SyntheticTask(task.kind, task.vocab_size, seed=ms))
    pairs = []
    for _ in range(task.corpus_size):
        length = int(rng.integers(task.length_min, task.length_max + 1))
        src = rng.integers(lo, hi, size=length)
        if task.kind == "copy":
            tgt = src.copy()
        elif task.kind == "reverse":
            tgt = src[::-1].copy()
        else:
            tgt = mapping[src - N_SPECIAL]
        if task.noise_prob > 0:
            flip = rng.random(length) < task.noise_prob
            tgt = np.where(flip, rng.integers(lo, hi, size=length), tgt)
        pairs.append((src.tolist(), tgt.tolist()))
    return pairs


def clean_reference(task: SyntheticTask, src: Sequence[int], mapping_seed: int | None = None) -> list[int]:
    """Noise-free target for ``src`` under ``task``."""
    src = np.asarray(src)
    if task.kind == "copy":
        return src.tolist()
    if task.kind == "reverse":
        return src[::-1].tolist()
    ms = task.seed if mapping_seed is None else mapping_seed
    mapping = task_mapping(SyntheticTask(task.kind, task.vocab_size, seed=ms))
    return mapping[src - N_SPECIAL].tolist()


# ---------------------------------------------------------------------------
# corpus files


def save_corpus(pairs: Sequence[Pair], path: str | Path, task: SyntheticTask | None = None) -> None:
    """One pair per line: source ids, a tab, target ids (space separated)."""
    lines = ["# spl_nmt corpus v1: <src ids> TAB <tgt ids>"]
    if task is not None:
        lines.append("# task " + " ".join(f"{k}={v}" for k, v in asdict(task).items()))
    lines += [" ".join(map(str, s)) + "\t" + " ".join(map(str, t)) for s, t in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_corpus(path: str | Path) -> list[Pair]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        src, tgt = line.split("\t")
        pairs.append(([int(x) for x in src.split()], [int(x) for x in tgt.split()]))
    return pairs


# ---------------------------------------------------------------------------
# bucketing


def example_tokens(pair: Pair) -> int:
    """Target positions an example contributes to a batch (tokens plus EOS)."""
    return len(pair[1]) + 1


@dataclass(frozen=True)
class BucketPlan:
    """``boundaries[b]`` is the largest target length in bucket ``b``."""

    num_buckets: int
    boundaries: tuple[int, ...]
    assignment: np.ndarray

    @property
    def n_effective(self) -> int:
        return len(self.boundaries)

    def members(self, bucket: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == bucket)


def make_bucket_plan(corpus: Sequence[Pair], num_buckets: int) -> BucketPlan:
    """Equal-population buckets over target length. Quantile cut points that
    coincide (more buckets than distinct lengths) are merged with a warning."""
    if not corpus:
        raise ValueError("cannot bucket an empty corpus")
    if num_buckets < 1:
        raise ValueError("num_buckets must be positive")
    lengths = np.array([len(t) for _, t in corpus])
    ordered = np.sort(lengths)
    n = len(ordered)
    cuts = [int(ordered[min(n - 1, int(np.ceil(q * n)) - 1)]) for q in np.arange(1, num_buckets + 1) / num_buckets]
    boundaries = tuple(sorted(set(cuts)))
    if len(boundaries) < num_buckets:
        warnings.warn(f"{num_buckets} buckets requested but only {len(boundaries)} "
                      "distinct cut points exist; merging", stacklevel=2)
    assignment = np.searchsorted(np.array(boundaries), lengths, side="left")
    return BucketPlan(num_buckets, boundaries, assignment)


def _chunks(indices: np.ndarray, corpus: Sequence[Pair], budget: int) -> list[np.ndarray]:
    out, cur, used = [], [], 0
    for i in indices:
        cost = example_tokens(corpus[i])
        if cur and used + cost > budget:
            out.append(np.array(cur))
            cur, used = [], 0
        cur.append(i)
        used += cost
    if cur:
        out.append(np.array(cur))
    return out


def epoch_batches(corpus: Sequence[Pair], plan: BucketPlan, batch_size_tokens: int,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of index batches: every example exactly once, each batch from a
    single bucket, buckets drawn in proportion to their remaining size."""
    longest = max(example_tokens(p) for p in corpus)
    if batch_size_tokens < longest:
        raise ValueError(f"batch_size_tokens={batch_size_tokens} is below the longest example ({longest})")
    queues = []
    for b in range(plan.n_effective):
        members = plan.members(b)
        if len(members):
            queues.append(_chunks(rng.permutation(members), corpus, batch_size_tokens))
    remaining = np.array([sum(len(c) for c in q) for q in queues], dtype=float)
    order = []
    while remaining.sum() > 0:
        b = int(rng.choice(len(queues), p=remaining / remaining.sum()))
        chunk = queues[b].pop(0)
        remaining[b] -= len(chunk)
        order.append(chunk)
    return order


def make_batch(corpus: Sequence[Pair], ids: Sequence[int]) -> Batch:
    return Batch.from_pairs([corpus[i] for i in ids], ids=ids)


def batch_iterator(corpus: Sequence[Pair], plan: BucketPlan, batch_size_tokens: int,
                   seed: int) -> Iterator[Batch]:
    """Endless stream of padded batches, epoch after epoch."""
    rng = np.random.default_rng([seed, 2])
    while True:
        for ids in epoch_batches(corpus, plan, batch_size_tokens, rng):
            yield make_batch(corpus, ids)


def padding_fraction(batch: Batch) -> float:
    return 1.0 - batch.n_tokens / batch.pad_mask.size
