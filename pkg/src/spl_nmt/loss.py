"""Confidence-weighted training objective and the vanilla objective it generalises."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .confidence import ConfidenceWeights
from .model import Batch, token_nll
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossConfig:
    use_slc: bool = True
    use_tlc: bool = True
    scale_preserving: bool = True

    @property
    def granularity(self) -> str | None:
        if self.use_slc and self.use_tlc:
            return "both"
        if self.use_slc:
            return "sentence"
        if self.use_tlc:
            return "token"
        return None


def _detached(w) -> np.ndarray:
    """Weights as plain constants, cut from any computation record."""
    if isinstance(w, Tensor):
        w = w.values
    return np.array(w, dtype=T.DTYPE)


def spl_sentence_loss(logprobs: Tensor, targets, beta, scale_preserving: bool = True) -> Tensor:
    """Token-weighted sentence log-likelihood ``sum_j beta_j log P(y_j)``.

    ``logprobs`` is ``[J, V]`` for one sentence; ``beta`` is zero on padding.
    With ``scale_preserving`` the sum is multiplied by the number of real tokens,
    so a uniform ``beta`` gives back the plain summed log-likelihood.
    """
    targets = np.asarray(targets)
    beta = _detached(beta)
    if beta.shape != targets.shape or logprobs.shape[:-1] != targets.shape:
        raise ShapeError(f"beta {beta.shape}, targets {targets.shape} and logprobs "
                         f"{logprobs.shape} disagree")
    w = beta * np.count_nonzero(beta) if scale_preserving else beta
    return T.sum(T.mul(T.pick(logprobs, targets), w))


def spl_batch_loss(sentence_losses: Tensor, alpha, scale_preserving: bool = True) -> Tensor:
    """``-sum_n alpha_n L_n``, times N under ``scale_preserving``.

    ``alpha`` enters as a constant: no gradient reaches whatever produced it.
    """
    alpha = _detached(alpha)
    if alpha.shape != sentence_losses.shape:
        raise ShapeError(f"alpha {alpha.shape} does not match {sentence_losses.shape}")
    w = alpha * alpha.size if scale_preserving else alpha
    return T.neg(T.sum(T.mul(sentence_losses, w)))


def token_weights(weights: ConfidenceWeights | None, batch: Batch, cfg: LossConfig) -> np.ndarray:
    """Per-token loss multipliers for the whole batch, zero on padding.

    Switched-off levels contribute 1 (uniform). Without ``scale_preserving`` the
    plain probabilities are used instead of their count-rescaled forms.
    """
    mask = batch.pad_mask.astype(T.DTYPE)
    if weights is None:
        return mask
    if cfg.scale_preserving:
        s = weights.sentence_scale if cfg.use_slc else np.ones(batch.size)
        t = weights.token_scale if cfg.use_tlc else mask
    else:
        s = weights.alpha if cfg.use_slc else np.full(batch.size, 1.0 / batch.size)
        t = weights.beta if cfg.use_tlc else mask / mask.sum(axis=1, keepdims=True)
    return s[:, None] * t


def weighted_token_loss(logprobs: Tensor, batch: Batch, weights: np.ndarray) -> Tensor:
    """``sum_{n,j} w_nj * nll_nj / (number of real tokens)``."""
    nll = token_nll(logprobs, batch)
    return T.scale(T.sum(T.mul(nll, weights)), 1.0 / batch.n_tokens)


def vanilla_loss(logprobs: Tensor, batch: Batch) -> Tensor:
    """Summed token cross-entropy over real tokens, divided by their count."""
    return weighted_token_loss(logprobs, batch, batch.pad_mask.astype(T.DTYPE))


def spl_loss(logprobs: Tensor, batch: Batch, weights: ConfidenceWeights | None, cfg: LossConfig) -> Tensor:
    """Batch objective used for training, normalised by the real-token count."""
    return weighted_token_loss(logprobs, batch, token_weights(weights, batch, cfg))
