"""Held-out evaluation: teacher-forced token accuracy and corpus BLEU."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

from .model import Batch, ModelParams, forward_logprobs, greedy_decode_batch


def _ngrams(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]], max_n: int = 4):
    """Clipped n-gram matches and totals per order, plus hypothesis and reference lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]: geometric mean of clipped n-gram precisions
    (orders 1..4, no smoothing) times the brevity penalty."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis and reference counts differ")
    matches, totals, hyp_len, ref_len = bleu_stats(hyps, refs, max_n)
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def token_accuracy(params: ModelParams, batch: Batch) -> float:
    """Fraction of real target positions whose argmax under teacher forcing is correct."""
    lp = forward_logprobs(params, batch).values
    hit = (lp.argmax(axis=-1) == batch.dec_out) & batch.pad_mask
    return float(hit.sum() / batch.pad_mask.sum())


def evaluate(params: ModelParams, held_out: Sequence[tuple[Sequence[int], Sequence[int]]],
             with_bleu: bool = True, chunk: int = 256) -> tuple[float, float]:
    """``(token_accuracy, bleu)`` on ``held_out`` pairs."""
    hits = total = 0
    hyps: list[list[int]] = []
    for start in range(0, len(held_out), chunk):
        part = held_out[start : start + chunk]
        batch = Batch.from_pairs(part)
        lp = forward_logprobs(params, batch).values
        hits += int(((lp.argmax(axis=-1) == batch.dec_out) & batch.pad_mask).sum())
        total += int(batch.pad_mask.sum())
        if with_bleu:
            longest = max(len(s) for s, _ in part)
            hyps += greedy_decode_batch(params, [s for s, _ in part], max_new_tokens=longest + 5)
    acc = hits / total
    bleu = corpus_bleu(hyps, [t for _, t in held_out]) if with_bleu else float("nan")
    return acc, bleu
