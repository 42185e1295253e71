import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isptrain.config import JobConfig, StopConfig
from isptrain.data import (MANIFEST, Corpus, DatasetSpec, fnv1a_64, format_sample, generate_lr,
                           generate_pmf, hash_feature, minmax_normalize, parse_sample, partition,
                           read_batch, read_manifest, write_corpus)
from isptrain.errors import ConfigurationError, DataError
from isptrain.learning import LR, Sample, batch_loss
from isptrain.runtime import run_job
from isptrain.sparse import SparseVector


def _key(s: Sample):
    return (s.label, tuple(s.features.indices.tolist()), tuple(s.features.values.tolist()))


# -- generators ----------------------------------------------------------------

def test_lr_dense_13_features():
    corpus, _ = generate_lr(DatasetSpec(n=50, dim=13, sparsity=1.0, seed=0))
    assert all(s.features.indices.tolist() == list(range(13)) for s in corpus.samples)


def test_lr_deterministic_and_balanced():
    spec = DatasetSpec(n=2000, dim=100, sparsity=0.1, seed=5)
    a, _ = generate_lr(spec)
    b, _ = generate_lr(spec)
    assert [format_sample(s) for s in a.samples] == [format_sample(s) for s in b.samples]
    balance = np.mean([s.label for s in a.samples])
    assert 0.3 <= balance <= 0.7


def test_lr_planted_model_is_learnable():
    corpus, _ = generate_lr(DatasetSpec(n=3000, dim=50, sparsity=0.2, seed=1))
    cfg = JobConfig(model="lr", workers=1, batch_size=100, seed=1,
                    stop=StopConfig(max_steps=1500))
    cfg.optimizer.eta = 1.0
    res = run_job(cfg, corpus)
    assert batch_loss(corpus.samples, res.final_model) < math.log(2)


def test_pmf_rank1_noiseless_on_mask():
    corpus, (U, M) = generate_pmf(DatasetSpec(kind="pmf", n_users=20, n_movies=30, rank=1,
                                              sparsity=0.3, noise=0.0, seed=2))
    assert len(corpus) == round(0.3 * 20 * 30)
    for s in corpus.samples:
        u, m = s.features.indices
        assert s.label == pytest.approx(U[u, 0] * M[m - 20, 0], rel=1e-12, abs=1e-15)


def test_pmf_deterministic():
    spec = DatasetSpec(kind="pmf", n_users=10, n_movies=12, rank=2, sparsity=0.5, seed=4)
    a = [format_sample(s) for s in generate_pmf(spec)[0].samples]
    b = [format_sample(s) for s in generate_pmf(spec)[0].samples]
    assert a == b


def test_pmf_pilot_reaches_noise_level():
    noise = 0.1
    corpus, _ = generate_pmf(DatasetSpec(kind="pmf", n_users=100, n_movies=120, rank=5,
                                         sparsity=0.5, noise=noise, seed=1))
    cfg = JobConfig(model="pmf", workers=1, batch_size=100, rank=5, seed=1,
                    stop=StopConfig(max_steps=3000))
    cfg.optimizer.algo = "adam"
    cfg.optimizer.eta = 0.01
    res = run_job(cfg, corpus)
    assert batch_loss(corpus.samples, res.final_model) < noise * 1.1


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        DatasetSpec(sparsity=0.0)
    with pytest.raises(ConfigurationError):
        DatasetSpec(kind="images")


# -- hashing -----------------------------------------------------------------------

def test_fnv_reference_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_hash_feature_examples():
    assert hash_feature("C1", "abc", 1) == 0
    assert hash_feature("C7", "x9", 100_000) == hash_feature("C7", "x9", 100_000)
    assert hash_feature("C1", "a", 2**64) == fnv1a_64(b"C1=a")


def test_hash_collisions_match_birthday_bound():
    n, dim = 10_000, 100_000
    rng = np.random.default_rng(0)
    names = [f"C{int(k)}" for k in rng.integers(1, 27, n)]
    values = [format(int(v), "x") for v in rng.integers(0, 2**40, n)]
    pairs = list(dict.fromkeys(zip(names, values)))
    idx = [hash_feature(a, b, dim) for a, b in pairs]
    collisions = len(idx) - len(set(idx))
    m = len(pairs)
    # expected occupied-slot deficit: m - dim * (1 - (1 - 1/dim)^m)
    expected = m - dim * (1.0 - (1.0 - 1.0 / dim) ** m)
    sigma = math.sqrt(expected)
    assert abs(collisions - expected) <= 3 * sigma


# -- min-max ------------------------------------------------------------------------

def _corpus(rows, dim):
    return Corpus(LR, [Sample(SparseVector.from_dict(r), 0.0) for r in rows], dim)


def test_minmax_examples():
    out = minmax_normalize(_corpus([{0: 0.0 + 1e-300, 1: 7.0}, {0: 5.0, 1: 7.0},
                                    {0: 10.0, 1: 7.0}], 2))
    assert [s.features.get(0) for s in out.samples] == pytest.approx([0.0, 0.5, 1.0])
    assert [s.features.get(1) for s in out.samples] == [0.0, 0.0, 0.0]


@given(st.integers(0, 2**32 - 1))
def test_minmax_bounds_and_idempotence(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 8))
    rows = []
    for _ in range(int(rng.integers(2, 12))):
        idx = np.flatnonzero(rng.random(dim) < 0.7)
        rows.append({int(i): float(rng.normal(scale=5)) for i in idx})
    out = minmax_normalize(_corpus(rows, dim))
    dense = np.array([s.features.to_dense(dim) for s in out.samples])
    orig = np.array([[r.get(j, 0.0) for j in range(dim)] for r in rows])
    for j in range(dim):
        if orig[:, j].max() > orig[:, j].min():
            assert dense[:, j].min() == 0.0 and dense[:, j].max() == 1.0
        else:
            assert np.all(dense[:, j] == 0.0)
    again = minmax_normalize(out)
    dense2 = np.array([s.features.to_dense(dim) for s in again.samples])
    assert np.allclose(dense2, dense, rtol=0, atol=1e-15)


# -- partition and files ------------------------------------------------------------

def test_partition_sizes():
    assert [len(b) for b in partition(range(10), 4)] == [4, 4, 2]
    assert [len(b) for b in partition(range(10), 10)] == [10]
    assert [len(b) for b in partition(range(3), 50)] == [3]
    with pytest.raises(ConfigurationError):
        partition(range(3), 0)


@given(st.lists(st.integers(), max_size=80), st.integers(1, 20), st.integers(0, 1000))
def test_partition_is_a_permutation(items, b, seed):
    batches = partition(items, b, seed=seed)
    flat = [x for batch in batches for x in batch]
    assert Counter(flat) == Counter(items)
    assert len(batches) == math.ceil(len(items) / b)
    assert all(len(x) == b for x in batches[:-1])
    assert partition(items, b, seed=seed) == batches


def test_sample_line_roundtrip():
    s = Sample(SparseVector([0, 17], [0.1, 1 / 3]), 1.0)
    line = format_sample(s)
    assert line == "1.0 0:0.1 17:0.3333333333333333"
    assert _key(parse_sample(line)) == _key(s)
    with pytest.raises(DataError):
        parse_sample("1.0 3-0.5")


def test_corpus_files_roundtrip(tmp_path):
    corpus, _ = generate_lr(DatasetSpec(n=103, dim=40, sparsity=0.1, seed=8))
    batches = write_corpus(tmp_path, corpus, 10, seed=8)
    assert len(batches) == 11
    man = read_manifest(tmp_path)
    assert man["samples"] == 103 and man["batch_count"] == 11 and man["batch_size"] == 10
    assert man["normalized"] is False and man["dim"] == 40
    back = [read_batch(tmp_path / f"part-{b}.txt") for b in range(11)]
    assert [[_key(s) for s in b] for b in back] == [[_key(s) for s in b] for b in batches]
    assert Counter(_key(s) for b in back for s in b) == Counter(_key(s) for s in corpus.samples)
    assert (tmp_path / MANIFEST).exists()


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        read_manifest(tmp_path)
