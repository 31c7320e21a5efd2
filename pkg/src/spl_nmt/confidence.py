"""Monte Carlo dropout confidence: sentence-level (SLC) and token-level (TLC) weights.

Each training batch is pushed through the model ``M`` times with independent
dropout masks. The spread of the per-sentence and per-token negative
log-likelihoods across those passes measures how unsure the model is; low
spread means high confidence and a larger loss weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Batch, ModelParams, Stochastic, forward_logprobs
from .tensor import NumericError, no_grad

PAD_SENTINEL = np.nan

GRANULARITIES = ("sentence", "token", "both")

# (1 - v) is mapped onto [NEG_K_FLOOR, 1] when k < 0, keeping (.)^k finite at the
# most uncertain example (v = 1) and softmax weights positive for k >= -3.
NEG_K_FLOOR = 0.125


@dataclass(frozen=True)
class ConfidenceConfig:
    M: int = 5
    k: float = 2.0
    granularity: str = "both"

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2: variance needs two passes")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")


@dataclass
class McSamples:
    """``sent_nll`` is ``[N, M]``; ``tok_nll`` is ``[N, J, M]`` with NaN on padding."""

    sent_nll: np.ndarray
    tok_nll: np.ndarray
    pad_mask: np.ndarray

    @property
    def M(self) -> int:
        return self.sent_nll.shape[1]


@dataclass
class ConfidenceWeights:
    """Normalised weights plus their count-rescaled forms.

    ``sentence_scale = N * alpha`` and ``token_scale[n] = J_n * beta[n]`` are
    computed directly from the raw scores so that equal raw scores give
    scales of exactly 1.0.
    """

    alpha: np.ndarray
    beta: np.ndarray
    raw_alpha: np.ndarray
    raw_beta: np.ndarray
    sentence_scale: np.ndarray
    token_scale: np.ndarray


def pass_seed(step_seed, m: int) -> tuple[int, ...]:
    """Dropout seed of Monte Carlo pass ``m`` (0-based) for a training step."""
    return (*np.atleast_1d(step_seed).tolist(), 1, m)


def mc_forward(params: ModelParams, batch: Batch, cfg: ConfidenceConfig, step_seed) -> McSamples:
    """``cfg.M`` stochastic passes without gradient recording."""
    mask = batch.pad_mask
    tok = np.empty(mask.shape + (cfg.M,))
    targets = batch.dec_out[..., None]
    with no_grad():
        for m in range(cfg.M):
            lp = forward_logprobs(params, batch, Stochastic(pass_seed(step_seed, m))).values
            tok[..., m] = -np.take_along_axis(lp, targets, axis=-1)[..., 0]
    tok[~mask] = 0.0
    sent = tok.sum(axis=1)
    tok[~mask] = PAD_SENTINEL
    return McSamples(sent, tok, mask)


def variance(xs) -> float:
    """Population variance (divides by the number of samples)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size < 2:
        raise ValueError("variance needs at least two samples")
    return float(_variances(xs))


def _variances(x: np.ndarray) -> np.ndarray:
    # Shifting by the first pass leaves the variance unchanged but makes it
    # exactly 0 for constant rows; otherwise rounding noise (~1e-31) would be
    # scaled up to 1 by the max-division.
    with np.errstate(invalid="ignore"):
        d = x - x[..., :1]
        return np.mean((d - d.mean(axis=-1, keepdims=True)) ** 2, axis=-1)


def sentence_variances(samples: McSamples) -> np.ndarray:
    """Per-sentence NLL variance over the passes, ``[N]``."""
    return _variances(samples.sent_nll)


def token_variances(samples: McSamples) -> np.ndarray:
    """Per-token NLL variance over the passes, ``[N, J]``, zero on padding."""
    tok = np.where(samples.pad_mask[..., None], samples.tok_nll, 0.0)
    return _variances(tok)


def raw_confidence(var: np.ndarray, k: float, valid: np.ndarray | None = None) -> np.ndarray:
    """``(1 - v / max v) ** k`` along the last axis, with the max over ``valid``
    entries only. An all-zero row scales to zero."""
    if not np.all(np.isfinite(var[valid] if valid is not None else var)):
        raise NumericError("non-finite variance in confidence estimation")
    masked = var if valid is None else np.where(valid, var, 0.0)
    top = masked.max(axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    scaled = np.where(top > 0, masked / safe, 0.0)
    base = 1.0 - scaled
    if k < 0:
        base = NEG_K_FLOOR + (1.0 - NEG_K_FLOOR) * base
    raw = base ** k
    if valid is not None:
        raw = np.where(valid, raw, 0.0)
    return raw


def _normalise(raw: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over ``valid`` entries of each row, returned both as probabilities
    and rescaled by the row's count of valid entries."""
    z = np.where(valid, raw, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    total = e.sum(axis=-1, keepdims=True)
    count = valid.sum(axis=-1, keepdims=True)
    return e / total, e * (count / total)


def slc(samples: McSamples, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Sentence-level confidence: ``(raw_alpha, alpha)``."""
    raw, alpha, _ = _slc(samples, k)
    return raw, alpha


def _slc(samples: McSamples, k: float):
    raw = raw_confidence(sentence_variances(samples), k)
    valid = np.ones_like(raw, dtype=bool)
    alpha, scale = _normalise(raw, valid)
    return raw, alpha, scale


def tlc(samples: McSamples, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Token-level confidence: ``(raw_beta, beta)``, zero on padding."""
    raw, beta, _ = _tlc(samples, k)
    return raw, beta


def _tlc(samples: McSamples, k: float):
    mask = samples.pad_mask
    if not np.all(mask.any(axis=1)):
        raise ValueError("every sentence needs at least one non-pad token")
    raw = raw_confidence(token_variances(samples), k, valid=mask)
    beta, scale = _normalise(raw, mask)
    return raw, np.where(mask, beta, 0.0), np.where(mask, scale, 0.0)


def confidence_weights(samples: McSamples, k: float, granularity: str = "both") -> ConfidenceWeights:
    """Both weight families. A granularity that is switched off yields uniform
    weights for that level (scales of exactly 1)."""
    n, j = samples.pad_mask.shape
    mask = samples.pad_mask
    if granularity in ("sentence", "both"):
        raw_a, alpha, s_scale = _slc(samples, k)
    else:
        raw_a, alpha, s_scale = np.ones(n), np.full(n, 1.0 / n), np.ones(n)
    if granularity in ("token", "both"):
        raw_b, beta, t_scale = _tlc(samples, k)
    else:
        counts = mask.sum(axis=1, keepdims=True)
        raw_b = mask.astype(float)
        beta = mask / counts
        t_scale = mask.astype(float)
    return ConfidenceWeights(alpha, beta, raw_a, raw_b, s_scale, t_scale)


def uniform_weights(pad_mask: np.ndarray) -> ConfidenceWeights:
    return confidence_weights(
        McSamples(np.zeros((pad_mask.shape[0], 2)), np.zeros(pad_mask.shape + (2,)), pad_mask),
        0.0, "both")


class DiagnosticWriter:
    """Per-step CSV rows ``step,sentence_index,variance,raw_alpha,alpha``."""

    HEADER = ("step", "sentence_index", "variance", "raw_alpha", "alpha")

    def __init__(self, path: str | Path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.HEADER)

    def write(self, step: int, samples: McSamples, weights: ConfidenceWeights) -> None:
        var = sentence_variances(samples)
        for i, (v, r, a) in enumerate(zip(var, weights.raw_alpha, weights.alpha)):
            self._w.writerow((step, i, repr(float(v)), repr(float(r)), repr(float(a))))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
