import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spl_nmt import config as C
from spl_nmt import tensor as T
from spl_nmt.confidence import ConfidenceConfig, confidence_weights, mc_forward, uniform_weights
from spl_nmt.harness import train
from spl_nmt.loss import (LossConfig, spl_batch_loss, spl_loss, spl_sentence_loss, token_weights,
                          vanilla_loss, weighted_token_loss)
from spl_nmt.model import Batch, Stochastic, forward_logprobs, sentence_nll
from spl_nmt.tensor import ShapeError, Tape, Tensor

from conftest import toy_batch

LOG = math.log


def sentence_logprobs(probs_of_targets, vocab=4):
    """``[J, V]`` log-probabilities putting the given mass on target id 0."""
    rows = []
    for p in probs_of_targets:
        rest = (1 - p) / (vocab - 1)
        rows.append([LOG(p)] + [LOG(rest)] * (vocab - 1))
    return Tensor(rows), np.zeros(len(rows), int)


# ---------------------------------------------------------------------------
# sentence loss


def test_sentence_loss_uniform_beta_is_summed_log_likelihood(small_model):
    b = toy_batch(0, n=1, vocab=11, lengths=[4])
    lp = forward_logprobs(small_model, b, Stochastic(1))
    J = int(b.pad_mask.sum())
    out = spl_sentence_loss(T.reshape(lp, lp.shape[1:]), b.dec_out[0], np.full(J, 1.0 / J))
    assert out.values == pytest.approx(-sentence_nll(lp, b)[0], abs=1e-12)


def test_sentence_loss_single_token():
    lp, tgt = sentence_logprobs([0.3])
    assert spl_sentence_loss(lp, tgt, [1.0]).values == pytest.approx(LOG(0.3), abs=1e-15)


def test_sentence_loss_skewed_beta():
    lp, tgt = sentence_logprobs([0.5, 0.25])
    expected = 2 * (0.75 * LOG(0.5) + 0.25 * LOG(0.25))
    assert spl_sentence_loss(lp, tgt, [0.75, 0.25]).values == pytest.approx(expected, abs=1e-6)
    plain = 0.75 * LOG(0.5) + 0.25 * LOG(0.25)
    assert spl_sentence_loss(lp, tgt, [0.75, 0.25], scale_preserving=False).values == pytest.approx(plain)


def test_sentence_loss_length_mismatch():
    lp, tgt = sentence_logprobs([0.5, 0.25])
    with pytest.raises(ShapeError):
        spl_sentence_loss(lp, tgt, [1.0])


# ---------------------------------------------------------------------------
# batch loss


def test_batch_loss_single_sentence():
    assert spl_batch_loss(Tensor([-2.5]), [1.0]).values == pytest.approx(2.5)


def test_batch_loss_hand_weights():
    out = spl_batch_loss(Tensor([-1.0, -3.0]), [0.8, 0.2])
    assert out.values == pytest.approx(2 * (0.8 * 1.0 + 0.2 * 3.0), abs=1e-6)
    out = spl_batch_loss(Tensor([-1.0, -3.0]), [0.8, 0.2], scale_preserving=False)
    assert out.values == pytest.approx(1.4, abs=1e-6)


def test_batch_loss_length_mismatch():
    with pytest.raises(ShapeError):
        spl_batch_loss(Tensor([-1.0, -3.0]), [1.0])


def test_weights_receive_no_gradient():
    logits = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    losses = Tensor(np.array([-1.0, -3.0]), requires_grad=True)
    with Tape() as tape:
        alpha = T.softmax(logits)
        loss = spl_batch_loss(losses, alpha)
    tape.backward(loss)
    assert logits.grad is None
    np.testing.assert_allclose(losses.grad, -2 * alpha.values)


def test_batched_objective_matches_sentence_composition(small_model):
    """The vectorised objective equals the per-sentence then per-batch form."""
    b = toy_batch(4, n=4, vocab=11)
    s = mc_forward(small_model, b, ConfidenceConfig(M=3), 0)
    w = confidence_weights(s, 2.0)
    lp = forward_logprobs(small_model, b, Stochastic(2))
    fast = spl_loss(lp, b, w, LossConfig()).values
    sent = []
    for n in range(b.size):
        J = int(b.pad_mask[n].sum())
        rows = T.Tensor(lp.values[n, :J])
        sent.append(spl_sentence_loss(rows, b.dec_out[n, :J], w.beta[n, :J]).values)
    slow = spl_batch_loss(Tensor(np.array(sent)), w.alpha).values / b.n_tokens
    assert fast == pytest.approx(slow, abs=1e-10)


# ---------------------------------------------------------------------------
# vanilla loss and reductions


def test_vanilla_certain_model_is_zero():
    b = Batch.from_pairs([([3, 4], [5, 6]), ([3], [4])])
    lp = np.full(b.dec_out.shape + (7,), -1e9)
    np.put_along_axis(lp, b.dec_out[..., None], 0.0, axis=-1)
    assert vanilla_loss(Tensor(lp), b).values == 0.0


def test_vanilla_matches_cross_entropy_oracle():
    rng = np.random.default_rng(0)
    b = toy_batch(1, n=3, vocab=9)
    logits = rng.normal(scale=2.0, size=b.dec_out.shape + (9,))
    total = 0.0
    for n in range(b.size):
        for j in range(b.dec_out.shape[1]):
            if b.pad_mask[n, j]:
                row = logits[n, j]
                m = max(row)
                total += m + LOG(math.fsum(math.exp(v - m) for v in row)) - row[b.dec_out[n, j]]
    out = vanilla_loss(T.log_softmax(Tensor(logits)), b).values
    assert out == pytest.approx(total / b.n_tokens, abs=1e-6)


def _loss_and_grads(params, batch, fn):
    params.zero_grad()
    with Tape() as tape:
        loss = fn(forward_logprobs(params, batch, Stochastic(3)), batch)
    tape.backward(loss)
    return float(loss.values), {k: p.grad.copy() for k, p in params.items()}


@pytest.mark.parametrize("seed", range(5))
def test_uniform_weights_reduce_to_vanilla(small_model, seed):
    b = toy_batch(seed, n=4, vocab=11)
    w = uniform_weights(b.pad_mask)
    v_loss, v_grads = _loss_and_grads(small_model, b, vanilla_loss)
    s_loss, s_grads = _loss_and_grads(small_model, b, lambda lp, bb: spl_loss(lp, bb, w, LossConfig()))
    assert abs(v_loss - s_loss) <= 1e-6
    for name in v_grads:
        np.testing.assert_allclose(s_grads[name], v_grads[name], rtol=0, atol=1e-6)


def test_both_levels_off_is_vanilla():
    b = toy_batch(2, n=3, vocab=7)
    cfg = LossConfig(use_slc=False, use_tlc=False)
    assert cfg.granularity is None
    np.testing.assert_array_equal(token_weights(None, b, cfg), b.pad_mask.astype(float))


def test_unscaled_weights_sum_to_one():
    rng = np.random.default_rng(3)
    b = toy_batch(3, n=4, vocab=9)
    tok = rng.exponential(size=b.pad_mask.shape + (3,))
    from spl_nmt.confidence import McSamples

    tok[~b.pad_mask] = np.nan
    w = confidence_weights(McSamples(np.nansum(tok, axis=1), tok, b.pad_mask), 2.0)
    tw = token_weights(w, b, LossConfig(scale_preserving=False))
    assert tw.sum() == pytest.approx(1.0, abs=1e-12)
    tw = token_weights(w, b, LossConfig())
    assert np.all(tw[~b.pad_mask] == 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_loss_and_gradient_are_finite(seed, k):
    from spl_nmt.model import ModelConfig, init_params

    params = init_params(ModelConfig(vocab_size_src=7, vocab_size_tgt=7, d_model=8, n_heads=2,
                                     n_layers=1, d_ffn=16, max_len=16), seed=seed % 97)
    b = toy_batch(seed, n=3, vocab=7)
    w = confidence_weights(mc_forward(params, b, ConfidenceConfig(M=2), seed), k)
    params.zero_grad()
    with Tape() as tape:
        loss = spl_loss(forward_logprobs(params, b, Stochastic(seed)), b, w, LossConfig())
    tape.backward(loss)
    assert math.isfinite(float(loss.values))
    assert all(np.all(np.isfinite(p.grad)) for _, p in params.items())


def test_padding_weight_is_irrelevant():
    b = toy_batch(5, n=2, vocab=7, lengths=[1, 4])
    lp = T.log_softmax(Tensor(np.zeros(b.dec_out.shape + (7,))))
    w = np.where(b.pad_mask, 1.0, 123.0)
    # padded positions carry zero NLL, so their weight is irrelevant
    assert weighted_token_loss(lp, b, w).values == pytest.approx(LOG(7))


# ---------------------------------------------------------------------------
# k = 0 training step


def test_k_zero_step_matches_vanilla_step():
    base = {"task.corpus_size": 300, "eval_size": 20, "total_steps": 3, "eval_every": 3,
            "track_slc": False, "eval_bleu": False, "model.d_model": 16, "model.d_ffn": 32}
    van = train(C.build({**base, "method": "vanilla"}))
    spl = train(C.build({**base, "method": "spl", "confidence.k": 0.0}))
    for name, p in van.params.items():
        np.testing.assert_allclose(spl.params[name].values, p.values, rtol=0, atol=1e-6)
