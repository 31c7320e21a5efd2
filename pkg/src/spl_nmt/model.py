"""Tiny pre-LN transformer encoder-decoder on top of :mod:`spl_nmt.tensor`."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD, BOS, EOS = 0, 1, 2
N_SPECIAL = 3

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size_src: int = 67
    vocab_size_tgt: int = 67
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 128
    dropout_keep: float = 0.7
    max_len: int = 64

    def __post_init__(self):
        for name in ("vocab_size_src", "vocab_size_tgt", "d_model", "n_heads",
                     "n_layers", "d_ffn", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must lie in (0, 1]")


@dataclass
class Batch:
    """Padded sentence pairs.

    ``tgt`` rows are ``BOS y_1 .. y_L EOS PAD ..``; the decoder reads ``tgt[:, :-1]``
    and predicts ``tgt[:, 1:]``. ``pad_mask`` marks the predicted positions that
    are real tokens (the ``y`` tokens and EOS).
    """

    src: np.ndarray
    tgt: np.ndarray
    src_lens: np.ndarray
    tgt_lens: np.ndarray
    pad_mask: np.ndarray
    ids: np.ndarray | None = None

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Sequence[int], Sequence[int]]], ids=None) -> "Batch":
        if not pairs:
            raise ValueError("a batch needs at least one sentence pair")
        n = len(pairs)
        src_lens = np.array([len(s) + 1 for s, _ in pairs])
        tgt_lens = np.array([len(t) + 1 for _, t in pairs])
        src = np.full((n, src_lens.max()), PAD, dtype=np.int64)
        tgt = np.full((n, tgt_lens.max() + 1), PAD, dtype=np.int64)
        for i, (s, t) in enumerate(pairs):
            src[i, : len(s)] = s
            src[i, len(s)] = EOS
            tgt[i, 0] = BOS
            tgt[i, 1 : len(t) + 1] = t
            tgt[i, len(t) + 1] = EOS
        pad_mask = np.arange(tgt.shape[1] - 1)[None, :] < tgt_lens[:, None]
        return cls(src, tgt, src_lens, tgt_lens, pad_mask,
                   None if ids is None else np.asarray(ids, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def dec_in(self) -> np.ndarray:
        return self.tgt[:, :-1]

    @property
    def dec_out(self) -> np.ndarray:
        return self.tgt[:, 1:]

    @property
    def n_tokens(self) -> int:
        return int(self.pad_mask.sum())


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.values.copy(), requires_grad=True, name=k)
                                         for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return int(np.sum([t.values.size for t in self.tensors.values()]))


def _shapes(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """name -> (shape, init kind)."""
    d, f = cfg.d_model, cfg.d_ffn
    shapes: dict[str, tuple[tuple[int, ...], str]] = {
        "src_embed": ((cfg.vocab_size_src, d), "uniform"),
        "tgt_embed": ((cfg.vocab_size_tgt, d), "uniform"),
    }

    def attn(prefix):
        for w in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{w}"] = ((d, d), "uniform")
            shapes[f"{prefix}.b{w}"] = ((d,), "zeros")

    def ln(prefix):
        shapes[f"{prefix}.gamma"] = ((d,), "ones")
        shapes[f"{prefix}.beta"] = ((d,), "zeros")

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = ((d, f), "uniform")
        shapes[f"{prefix}.b1"] = ((f,), "zeros")
        shapes[f"{prefix}.w2"] = ((f, d), "uniform")
        shapes[f"{prefix}.b2"] = ((d,), "zeros")

    for i in range(cfg.n_layers):
        ln(f"enc{i}.ln1"); attn(f"enc{i}.self"); ln(f"enc{i}.ln2"); ffn(f"enc{i}.ffn")
    ln("enc.ln")
    for i in range(cfg.n_layers):
        ln(f"dec{i}.ln1"); attn(f"dec{i}.self"); ln(f"dec{i}.ln2"); attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3"); ffn(f"dec{i}.ffn")
    ln("dec.ln")
    shapes["out.w"] = ((d, cfg.vocab_size_tgt), "uniform")
    shapes["out.b"] = ((cfg.vocab_size_tgt,), "zeros")
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in); biases zero; layer-norm gains one."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (shape, kind) in _shapes(cfg).items():
        if kind == "uniform":
            bound = 1.0 / math.sqrt(shape[1] if name.endswith("embed") else shape[0])
            values = rng.uniform(-bound, bound, size=shape)
        elif kind == "ones":
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


# ---------------------------------------------------------------------------
# forward


@dataclass(frozen=True)
class Stochastic:
    """Dropout active, masks derived from ``seed`` (an int or tuple of ints)."""

    seed: int | tuple[int, ...]


DETERMINISTIC = None


class _Dropper:
    """Hands out per-site dropout masks. Site ids count up in call order, so a
    mask is a function of (seed, site) only."""

    def __init__(self, keep: float, mode: Stochastic | None):
        self.keep = keep
        self.key = None if mode is None else tuple(np.atleast_1d(mode.seed).tolist())
        self.site = 0

    def __call__(self, x: Tensor) -> Tensor:
        self.site += 1
        if self.key is None:
            return x
        return T.dropout(x, self.keep, (*self.key, self.site), training=True)


def _attention(p: ModelParams, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray,
               n_heads: int, drop: _Dropper) -> Tensor:
    n, jq, d = xq.shape
    jk = xkv.shape[1]
    dh = d // n_heads
    q = T.transpose(T.reshape(T.linear(xq, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), (n, jq, n_heads, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(T.linear(xkv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), (n, jk, n_heads, dh)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(T.linear(xkv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), (n, jk, n_heads, dh)), (0, 2, 1, 3))
    attn = drop(T.masked_softmax(T.matmul(q, k), mask, 1.0 / math.sqrt(dh)))
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (n, jq, d))
    return T.linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn(p: ModelParams, prefix: str, x: Tensor, drop: _Dropper) -> Tensor:
    h = drop(T.relu(T.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"])))
    return T.linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _ln(p: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"])


def _embed(table: Tensor, ids: np.ndarray, d_model: int) -> Tensor:
    pe = positional_encoding(ids.shape[1], d_model)
    return T.add(T.scale(T.embedding(table, ids), math.sqrt(d_model)), pe)


def _check_input(cfg: ModelConfig, src: np.ndarray, dec_in: np.ndarray) -> None:
    if src.shape[1] > cfg.max_len or dec_in.shape[1] > cfg.max_len:
        raise ValueError(f"sequence longer than max_len={cfg.max_len}")


def encode(params: ModelParams, src: np.ndarray, src_mask: np.ndarray, drop: _Dropper) -> Tensor:
    cfg = params.config
    x = drop(_embed(params["src_embed"], src, cfg.d_model))
    key_mask = src_mask[:, None, None, :]
    for i in range(cfg.n_layers):
        h = _ln(params, f"enc{i}.ln1", x)
        x = T.add(x, drop(_attention(params, f"enc{i}.self", h, h, key_mask, cfg.n_heads, drop)))
        x = T.add(x, drop(_ffn(params, f"enc{i}.ffn", _ln(params, f"enc{i}.ln2", x), drop)))
    return _ln(params, "enc.ln", x)


def decode_logprobs(params: ModelParams, memory: Tensor, src_mask: np.ndarray,
                    dec_in: np.ndarray, drop: _Dropper) -> Tensor:
    cfg = params.config
    j = dec_in.shape[1]
    y = drop(_embed(params["tgt_embed"], dec_in, cfg.d_model))
    causal = np.tril(np.ones((j, j), dtype=bool))
    # pad positions of the decoder input only ever sit after the real tokens, so
    # the causal mask already keeps real queries off them
    self_mask = causal[None, None, :, :]
    cross_mask = src_mask[:, None, None, :]
    for i in range(cfg.n_layers):
        h = _ln(params, f"dec{i}.ln1", y)
        y = T.add(y, drop(_attention(params, f"dec{i}.self", h, h, self_mask, cfg.n_heads, drop)))
        h = _ln(params, f"dec{i}.ln2", y)
        y = T.add(y, drop(_attention(params, f"dec{i}.cross", h, memory, cross_mask, cfg.n_heads, drop)))
        y = T.add(y, drop(_ffn(params, f"dec{i}.ffn", _ln(params, f"dec{i}.ln3", y), drop)))
    y = _ln(params, "dec.ln", y)
    return T.log_softmax(T.linear(y, params["out.w"], params["out.b"]), -1)


class Counters:
    """Pass counters used to audit the per-step cost of training."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.forward = 0
        self.decode = 0

    def snapshot(self) -> tuple[int, int]:
        return self.forward, self.decode


counters = Counters()


def forward_logprobs(params: ModelParams, batch: Batch, mode: Stochastic | None = DETERMINISTIC) -> Tensor:
    """Teacher-forced log-probabilities, shape ``[N, J, V_tgt]``.

    ``mode`` is ``DETERMINISTIC`` (no dropout) or ``Stochastic(seed)``.
    """
    cfg = params.config
    _check_input(cfg, batch.src, batch.dec_in)
    if batch.src.max() >= cfg.vocab_size_src or batch.tgt.max() >= cfg.vocab_size_tgt:
        raise IndexError("token id outside the model vocabulary")
    counters.forward += 1
    drop = _Dropper(cfg.dropout_keep, mode)
    src_mask = batch.src != PAD
    memory = encode(params, batch.src, src_mask, drop)
    return decode_logprobs(params, memory, src_mask, batch.dec_in, drop)


def token_nll(logprobs: Tensor, batch: Batch) -> Tensor:
    """``-log P(y_j | x, y_<j)`` per position, zero on padding. On-graph, ``[N, J]``."""
    nll = T.neg(T.pick(logprobs, batch.dec_out))
    return T.mul(nll, batch.pad_mask.astype(T.DTYPE))


def sentence_nll(logprobs: Tensor, batch: Batch) -> np.ndarray:
    """Summed token NLL per sentence over non-pad positions."""
    lp = np.take_along_axis(logprobs.values, batch.dec_out[..., None], axis=-1)[..., 0]
    return -(lp * batch.pad_mask).sum(axis=1)


def greedy_decode_batch(params: ModelParams, srcs: Sequence[Sequence[int]],
                        max_new_tokens: int | None = None) -> list[list[int]]:
    """Argmax decoding without dropout; stops at EOS or the length cap."""
    cfg = params.config
    counters.decode += 1
    cap = cfg.max_len - 1 if max_new_tokens is None else min(max_new_tokens, cfg.max_len - 1)
    dummy = Batch.from_pairs([(s, [BOS]) for s in srcs])
    if dummy.src.shape[1] > cfg.max_len:
        raise ValueError(f"sequence longer than max_len={cfg.max_len}")
    src_mask = dummy.src != PAD
    memory = encode(params, dummy.src, src_mask, _Dropper(1.0, None))
    n = len(srcs)
    dec_in = np.full((n, 1), BOS, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for _ in range(cap):
        lp = decode_logprobs(params, memory, src_mask, dec_in, _Dropper(1.0, None))
        nxt = lp.values[:, -1, :].argmax(axis=-1)
        nxt = np.where(done, PAD, nxt)
        dec_in = np.concatenate([dec_in, nxt[:, None]], axis=1)
        done |= nxt == EOS
        if done.all():
            break
    out = []
    for row in dec_in[:, 1:]:
        toks = []
        for t in row:
            if t in (EOS, PAD):
                break
            toks.append(int(t))
        out.append(toks)
    return out


def greedy_decode(params: ModelParams, src: Sequence[int], max_new_tokens: int | None = None) -> list[int]:
    return greedy_decode_batch(params, [src], max_new_tokens)[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """``.npz`` container: format version, JSON config, one array per parameter."""
    arrays = {f"param/{k}": v.values for k, v in params.items()}
    arrays["format"] = np.array(CHECKPOINT_FORMAT)
    arrays["config"] = np.array(json.dumps(asdict(params.config)))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format"])
        if version != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {version}")
        cfg = ModelConfig(**json.loads(str(z["config"])))
        tensors = {k[len("param/"):]: Tensor(z[k], requires_grad=True, name=k[len("param/"):])
                   for k in z.files if k.startswith("param/")}
    expected = _shapes(cfg)
    if set(tensors) != set(expected):
        raise ValueError("checkpoint parameters do not match its config")
    for name, (shape, _) in expected.items():
        if tensors[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {tensors[name].shape}, expected {shape}")
    return ModelParams(cfg, {k: tensors[k] for k in expected})
