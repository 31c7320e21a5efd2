"""Plain-Python reference implementations used as test oracles.

Written with explicit loops, exact rational variances and ``math.fsum`` so
they share no code path with the vectorised package implementations.
"""

import math
from fractions import Fraction

import numpy as np

NEG_K_FLOOR = 0.125


def variance(xs):
    """Population variance in exact rational arithmetic: explicit mean, then
    explicit squared deviations."""
    xs = [Fraction(float(x)) for x in xs]
    mean = sum(xs) / len(xs)
    return sum((x - mean) ** 2 for x in xs) / len(xs)


def raw_scores(variances, k):
    top = max(variances)
    out = []
    for v in variances:
        scaled = float(v / top) if top > 0 else 0.0
        base = 1.0 - scaled
        if k < 0:
            base = NEG_K_FLOOR + (1.0 - NEG_K_FLOOR) * base
        out.append(base ** k)
    return out


def softmax(zs):
    m = max(zs)
    es = [math.exp(z - m) for z in zs]
    total = math.fsum(es)
    return [e / total for e in es]


def slc(sent_nll, k):
    vs = [variance(row) for row in sent_nll]
    raw = raw_scores(vs, k)
    return raw, softmax(raw)


def tlc(tok_nll, pad_mask, k):
    n, j = pad_mask.shape
    raw = np.zeros((n, j))
    beta = np.zeros((n, j))
    for i in range(n):
        cols = [c for c in range(j) if pad_mask[i, c]]
        vs = [variance(tok_nll[i, c]) for c in cols]
        r = raw_scores(vs, k)
        b = softmax(r)
        for c, rv, bv in zip(cols, r, b):
            raw[i, c] = rv
            beta[i, c] = bv
    return raw, beta


def random_samples(rng, kind="random"):
    """Random ``(sent_nll, tok_nll, pad_mask)`` triples, optionally degenerate."""
    from spl_nmt.confidence import PAD_SENTINEL, McSamples

    n = int(rng.integers(1, 7))
    m = int(rng.integers(2, 7))
    if kind == "single_token":
        lengths = np.ones(n, int)
    else:
        lengths = rng.integers(1, 8, size=n)
    j = int(lengths.max())
    mask = np.arange(j)[None, :] < lengths[:, None]
    tok = rng.exponential(scale=float(rng.uniform(0.1, 3.0)), size=(n, j, m))
    if kind == "zero_variance":
        tok = np.repeat(tok[..., :1], m, axis=-1)
    tok[~mask] = 0.0
    sent = tok.sum(axis=1)
    tok[~mask] = PAD_SENTINEL
    return McSamples(sent, tok, mask)
