import hypothesis
import numpy as np
import pytest

from spl_nmt import config as C
from spl_nmt.data import SyntheticTask, generate_corpus
from spl_nmt.model import Batch, ModelConfig, init_params

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.load_profile("default")


def toy_batch(seed=0, n=3, vocab=7, lengths=None):
    rng = np.random.default_rng(seed)
    lengths = lengths or [int(x) for x in rng.integers(1, 5, size=n)]
    pairs = []
    for L in lengths:
        src = rng.integers(3, vocab, size=L).tolist()
        pairs.append((src, src[::-1]))
    return Batch.from_pairs(pairs)


@pytest.fixture
def tiny_model():
    cfg = ModelConfig(vocab_size_src=7, vocab_size_tgt=7, d_model=8, n_heads=2, n_layers=1,
                      d_ffn=16, dropout_keep=0.7, max_len=16)
    return init_params(cfg, seed=1)


@pytest.fixture
def small_model():
    cfg = ModelConfig(vocab_size_src=11, vocab_size_tgt=11, d_model=16, n_heads=2, n_layers=2,
                      d_ffn=32, dropout_keep=0.7, max_len=24)
    return init_params(cfg, seed=2)


COPY_OVERRIDES = {
    "method": "vanilla", "task.kind": "copy", "task.vocab_size": 32, "task.length_min": 3,
    "task.length_max": 12, "task.noise_prob": 0.0, "task.corpus_size": 5000,
    "total_steps": 2000, "eval_every": 100, "track_slc": False, "eval_size": 200,
}


@pytest.fixture(scope="session")
def copy_run():
    """Vanilla training on the copy task, shared by the end-to-end checks."""
    from spl_nmt.harness import train

    return train(C.build(COPY_OVERRIDES))
