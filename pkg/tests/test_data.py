import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spl_nmt.data import (SyntheticTask, batch_iterator, clean_reference, epoch_batches,
                          example_tokens, generate_corpus, load_corpus, make_bucket_plan,
                          padding_fraction, save_corpus, task_mapping)
from spl_nmt.model import EOS


def test_copy_without_noise():
    corpus = generate_corpus(SyntheticTask(kind="copy", noise_prob=0.0, corpus_size=500))
    assert all(s == t for s, t in corpus)


def test_reverse_without_noise():
    corpus = generate_corpus(SyntheticTask(kind="reverse", noise_prob=0.0, corpus_size=200))
    assert all(s[::-1] == t for s, t in corpus)


def test_same_seed_same_corpus():
    task = SyntheticTask(corpus_size=300, seed=5)
    assert generate_corpus(task) == generate_corpus(task)
    assert generate_corpus(task) != generate_corpus(SyntheticTask(corpus_size=300, seed=6))


def test_lengths_and_ids_within_range():
    task = SyntheticTask(vocab_size=10, length_min=2, length_max=6, corpus_size=1000)
    corpus = generate_corpus(task)
    lengths = Counter(len(s) for s, _ in corpus)
    assert set(lengths) == {2, 3, 4, 5, 6}
    ids = {t for s, tg in corpus for t in s + tg}
    assert min(ids) >= 3 and max(ids) < 13


def test_dict_map_is_a_bijection():
    m = task_mapping(SyntheticTask(vocab_size=64, seed=3))
    assert sorted(m.tolist()) == list(range(3, 67))


def test_dict_map_noise_fraction():
    task = SyntheticTask(noise_prob=0.1, corpus_size=10_000, seed=1)
    corpus = generate_corpus(task)
    altered = total = 0
    for src, tgt in corpus:
        ref = clean_reference(task, src)
        altered += sum(a != b for a, b in zip(tgt, ref))
        total += len(tgt)
    assert abs(altered / total - 0.10) <= 0.01


def test_held_out_mapping_is_shared():
    task = SyntheticTask(noise_prob=0.0, corpus_size=50, seed=2)
    other = SyntheticTask(noise_prob=0.0, corpus_size=50, seed=99)
    for src, tgt in generate_corpus(other, mapping_seed=2):
        assert tgt == clean_reference(task, src)


@pytest.mark.parametrize("kw", [dict(vocab_size=1), dict(kind="sort"), dict(noise_prob=1.0),
                                dict(length_min=5, length_max=3)])
def test_task_validation(kw):
    with pytest.raises(ValueError):
        SyntheticTask(**kw)


def test_corpus_round_trip(tmp_path):
    task = SyntheticTask(corpus_size=40)
    corpus = generate_corpus(task)
    path = tmp_path / "corpus.tsv"
    save_corpus(corpus, path, task)
    text = path.read_text().splitlines()
    assert text[0].startswith("#") and "vocab_size=64" in text[1]
    assert load_corpus(path) == corpus


# ---------------------------------------------------------------------------
# bucketing


def test_single_bucket_holds_everything():
    corpus = generate_corpus(SyntheticTask(corpus_size=300))
    plan = make_bucket_plan(corpus, 1)
    assert plan.n_effective == 1
    assert len(plan.members(0)) == 300


def test_uniform_length_collapses_to_one_bucket():
    corpus = generate_corpus(SyntheticTask(length_min=7, length_max=7, corpus_size=100))
    with pytest.warns(UserWarning, match="merging"):
        plan = make_bucket_plan(corpus, 10)
    assert plan.n_effective == 1


def test_empty_corpus_is_an_error():
    with pytest.raises(ValueError):
        make_bucket_plan([], 5)


@given(st.integers(1, 40), st.integers(0, 10_000))
def test_buckets_partition_corpus_in_length_order(num_buckets, seed):
    corpus = generate_corpus(SyntheticTask(corpus_size=200, seed=seed, length_max=30))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = make_bucket_plan(corpus, num_buckets)
    assert plan.n_effective <= num_buckets
    sizes = [len(plan.members(b)) for b in range(plan.n_effective)]
    assert sum(sizes) == len(corpus)
    lengths = np.array([len(t) for _, t in corpus])
    for b, bound in enumerate(plan.boundaries):
        assert np.all(lengths[plan.members(b)] <= bound)
        if b:
            assert np.all(lengths[plan.members(b)] > plan.boundaries[b - 1])


def test_buckets_have_equal_population_when_lengths_allow():
    corpus = generate_corpus(SyntheticTask(corpus_size=5000, length_max=60, seed=0))
    plan = make_bucket_plan(corpus, 5)
    sizes = np.array([len(plan.members(b)) for b in range(5)])
    # cuts land on length boundaries, so sizes can differ by about one length's mass
    per_length = max(Counter(len(t) for _, t in corpus).values())
    assert np.all(np.abs(sizes - 1000) <= per_length)


def test_padding_shrinks_as_bucket_count_grows():
    corpus = generate_corpus(SyntheticTask(corpus_size=5000, length_max=60, seed=0))
    means = []
    for nb in (5, 10, 20, 40, 72):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plan = make_bucket_plan(corpus, nb)
        it = batch_iterator(corpus, plan, 600, seed=0)
        means.append(np.mean([padding_fraction(next(it)) for _ in range(100)]))
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert means[0] > means[-1]


def test_batches_respect_bucket_and_budget():
    corpus = generate_corpus(SyntheticTask(corpus_size=2000, seed=1))
    plan = make_bucket_plan(corpus, 10)
    it = batch_iterator(corpus, plan, 300, seed=0)
    for _ in range(200):
        b = next(it)
        buckets = {int(plan.assignment[i]) for i in b.ids}
        assert len(buckets) == 1
        bound = plan.boundaries[buckets.pop()]
        assert b.tgt_lens.max() - 1 <= bound  # tgt_lens counts EOS
        assert b.n_tokens <= 300
        assert np.all(b.src[np.arange(b.size), b.src_lens - 1] == EOS)


def test_epoch_covers_each_example_once():
    corpus = generate_corpus(SyntheticTask(corpus_size=1500, seed=2))
    plan = make_bucket_plan(corpus, 10)
    rng = np.random.default_rng(0)
    for _ in range(2):
        ids = np.concatenate(epoch_batches(corpus, plan, 300, rng))
        assert sorted(ids.tolist()) == list(range(1500))


def test_iterator_is_deterministic():
    corpus = generate_corpus(SyntheticTask(corpus_size=500))
    plan = make_bucket_plan(corpus, 5)
    a, b = batch_iterator(corpus, plan, 200, 3), batch_iterator(corpus, plan, 200, 3)
    for _ in range(30):
        assert next(a).ids.tolist() == next(b).ids.tolist()


def test_budget_below_longest_example_is_an_error():
    corpus = generate_corpus(SyntheticTask(corpus_size=50))
    longest = max(example_tokens(p) for p in corpus)
    with pytest.raises(ValueError):
        epoch_batches(corpus, make_bucket_plan(corpus, 2), longest - 1, np.random.default_rng(0))
