"""Synthetic corpora, feature hashing, min-max scaling and mini-batch files.

Mini-batch files hold one sample per line, ``label idx:val idx:val ...``
with 0-based indices, and are named ``part-<batch_id>.txt``. A corpus
directory also carries ``manifest.txt`` with ``key = value`` lines.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .learning import LR, PMF, Sample, pmf_sample
from .rng import substream
from .sparse import SparseVector

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

MANIFEST = "manifest.txt"


@dataclass
class DatasetSpec:
    kind: str = "lr"
    n: int = 10_000
    dim: int = 1000
    n_users: int = 0
    n_movies: int = 0
    rank: int = 0
    sparsity: float = 0.01
    noise: float = 0.0
    seed: int = 0
    hash_dim: int = 100_000

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("lr", "pmf", "file"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if not 0 < self.sparsity <= 1:
            raise ConfigurationError("sparsity must lie in (0, 1]")
        if self.hash_dim < 1:
            raise ConfigurationError("hash_dim must be >= 1")


@dataclass
class Corpus:
    kind: str
    samples: list[Sample]
    dim: int
    n_users: int = 0
    n_movies: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


# -- generators ----------------------------------------------------------

def generate_lr(spec: DatasetSpec) -> tuple[Corpus, np.ndarray]:
    """Samples from a planted sparse logistic model.

    Each sample has ``max(1, round(sparsity * dim))`` uniformly chosen
    features with values in (0, 1]. Returns the corpus and the planted
    weights.
    """
    rng = substream(spec.seed, "data")
    dim = spec.dim
    k = max(1, int(round(spec.sparsity * dim)))
    w = rng.standard_normal(dim)
    w -= w.mean()
    w *= 3.0 / math.sqrt(k / 3.0)
    samples = []
    dense = k == dim
    all_idx = np.arange(dim)
    for _ in range(spec.n):
        idx = all_idx if dense else np.sort(rng.choice(dim, size=k, replace=False))
        vals = 1.0 - rng.random(k)
        z = float(w[idx] @ vals)
        if spec.noise:
            z += spec.noise * rng.standard_normal()
        label = 1.0 if rng.random() < 1.0 / (1.0 + math.exp(-z)) else 0.0
        samples.append(Sample(SparseVector(idx, vals, check=False), label))
    corpus = Corpus(LR, samples, dim, meta={"seed": spec.seed})
    return corpus, w


def generate_pmf(spec: DatasetSpec) -> tuple[Corpus, tuple[np.ndarray, np.ndarray]]:
    """Noisy ratings of planted rank-``rank`` factors on a random mask.

    ``sparsity`` is the observed fraction of the rating matrix. Returns the
    corpus and the planted ``(U, M)``.
    """
    nu, nm, r = spec.n_users, spec.n_movies, spec.rank
    if nu < 1 or nm < 1 or r < 1:
        raise ConfigurationError("PMF generation needs n_users, n_movies and rank >= 1")
    rng = substream(spec.seed, "data")
    std = r ** -0.25
    U = std * rng.standard_normal((nu, r))
    M = std * rng.standard_normal((nm, r))
    n_obs = max(1, int(round(spec.sparsity * nu * nm)))
    cells = np.sort(rng.choice(nu * nm, size=n_obs, replace=False))
    users, movies = np.divmod(cells, nm)
    ratings = np.einsum("ij,ij->i", U[users], M[movies])
    if spec.noise:
        ratings = ratings + spec.noise * rng.standard_normal(n_obs)
    samples = [pmf_sample(int(u), int(m), float(x), nu)
               for u, m, x in zip(users, movies, ratings)]
    corpus = Corpus(PMF, samples, nu + nm, n_users=nu, n_movies=nm,
                    meta={"seed": spec.seed, "rank": r})
    return corpus, (U, M)


def generate(spec: DatasetSpec) -> Corpus:
    if spec.kind == "lr":
        return generate_lr(spec)[0]
    if spec.kind == "pmf":
        return generate_pmf(spec)[0]
    raise ConfigurationError("file corpora are read, not generated")


# -- hashing trick -------------------------------------------------------

def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def hash_feature(name: str, value: str, hash_dim: int) -> int:
    """Index of ``name=value`` under 64-bit FNV-1a, modulo ``hash_dim``."""
    if hash_dim < 1:
        raise ConfigurationError("hash_dim must be >= 1")
    return fnv1a_64(f"{name}={value}".encode("utf-8")) % hash_dim


# -- min-max scaling -----------------------------------------------------

def feature_ranges(samples: Sequence[Sample], dim: int):
    """First pass: per-feature min and max over the dense columns.

    Samples that lack a feature contribute an implicit zero.
    """
    lo = np.full(dim, np.inf)
    hi = np.full(dim, -np.inf)
    counts = np.zeros(dim, dtype=np.int64)
    for s in samples:
        idx, vals = s.features.indices, s.features.values
        np.minimum.at(lo, idx, vals)
        np.maximum.at(hi, idx, vals)
        counts[idx] += 1
    present = counts > 0
    partial = present & (counts < len(samples))
    lo[partial] = np.minimum(lo[partial], 0.0)
    hi[partial] = np.maximum(hi[partial], 0.0)
    return lo, hi, present


def minmax_normalize(corpus: Corpus) -> Corpus:
    """Rescale every feature to [0, 1]; constant features become 0."""
    lo, hi, present = feature_ranges(corpus.samples, corpus.dim)
    span = np.where(present, hi - lo, 0.0)
    varying = present & (span > 0)
    # features whose implicit zeros map to a nonzero value must be densified
    shifted = np.flatnonzero(varying & (lo < 0))
    shifted_fill = (0.0 - lo[shifted]) / span[shifted]
    out = []
    for s in corpus.samples:
        idx, vals = s.features.indices, s.features.values
        keep = varying[idx]
        idx, vals = idx[keep], vals[keep]
        scaled = (vals - lo[idx]) / span[idx]
        if shifted.size:
            missing = ~np.isin(shifted, idx, assume_unique=True)
            idx = np.concatenate([idx, shifted[missing]])
            scaled = np.concatenate([scaled, shifted_fill[missing]])
            order = np.argsort(idx, kind="stable")
            idx, scaled = idx[order], scaled[order]
        out.append(Sample(SparseVector(idx, scaled), s.label))
    meta = dict(corpus.meta, normalized=True)
    return replace(corpus, samples=out, meta=meta)


# -- partitioning and files ----------------------------------------------

def partition(samples: Sequence, batch_size: int, seed: int | None = 0,
              shuffle: bool = True) -> list[list]:
    """Split into ``ceil(N / B)`` batches after a seeded shuffle."""
    if batch_size < 1:
        raise ConfigurationError("batch size must be >= 1")
    items = list(samples)
    if shuffle and seed is not None:
        order = substream(seed, "shuffle").permutation(len(items))
        items = [items[i] for i in order]
    return [items[i:i + batch_size] for i in range(0, len(items), batch_size)]


def format_sample(s: Sample) -> str:
    body = " ".join(f"{i}:{v!r}" for i, v in s.features)
    return f"{s.label!r} {body}".rstrip()


def parse_sample(line: str) -> Sample:
    parts = line.split()
    if not parts:
        raise DataError("empty sample line")
    try:
        label = float(parts[0])
        pairs = [p.split(":", 1) for p in parts[1:]]
        idx = [int(i) for i, _ in pairs]
        vals = [float(v) for _, v in pairs]
    except ValueError as exc:
        raise DataError(f"malformed sample line {line!r}") from exc
    return Sample(SparseVector(idx, vals), label)


def batch_path(directory, batch_id: int) -> Path:
    return Path(directory) / f"part-{batch_id}.txt"


def write_batch(path, batch: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in batch:
            fh.write(format_sample(s) + "\n")


def read_batch(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [parse_sample(line) for line in fh if line.strip()]


def write_manifest(directory, entries: dict) -> None:
    with open(Path(directory) / MANIFEST, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def read_manifest(directory) -> dict:
    out = {}
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise DataError(f"no manifest in {directory}")
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = _coerce(value.strip())
    return out


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value in ("true", "false"):
        return value == "true"
    return value


def write_corpus(directory, corpus: Corpus, batch_size: int, seed: int,
                 normalized: bool = False) -> list[list[Sample]]:
    """Partition ``corpus`` and write batch files plus the manifest."""
    os.makedirs(directory, exist_ok=True)
    batches = partition(corpus.samples, batch_size, seed)
    for b, batch in enumerate(batches):
        write_batch(batch_path(directory, b), batch)
    manifest = {
        "kind": corpus.kind,
        "samples": len(corpus.samples),
        "dim": corpus.dim,
        "batch_size": batch_size,
        "batch_count": len(batches),
        "seed": seed,
        "normalized": "true" if normalized else "false",
    }
    if corpus.kind == PMF:
        manifest.update(n_users=corpus.n_users, n_movies=corpus.n_movies)
        if "rank" in corpus.meta:
            manifest["rank"] = corpus.meta["rank"]
    write_manifest(directory, manifest)
    return batches


# -- thin readers for real corpora --------------------------------------

def read_criteo(path, hash_dim: int = 100_000, limit: int | None = None,
                numeric_only: bool = False) -> Corpus:
    """Criteo TSV: label, 13 integer features, 26 categorical features.

    Numeric features keep indices 0..12; categorical ones are hashed into
    ``13 + hash_feature(name, value, hash_dim)``.
    """
    samples = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            if limit is not None and n >= limit:
                break
            cols = line.rstrip("\n").split("\t")
            entries: dict[int, float] = {}
            for j, raw in enumerate(cols[1:14]):
                if raw:
                    entries[j] = float(raw)
            if not numeric_only:
                for j, raw in enumerate(cols[14:40]):
                    if raw:
                        entries[13 + hash_feature(f"C{j + 1}", raw, hash_dim)] = 1.0
            samples.append(Sample(SparseVector.from_dict(entries), float(cols[0])))
    dim = 13 if numeric_only else 13 + hash_dim
    return Corpus(LR, samples, dim)


def read_movielens(path, sep: str = "::") -> Corpus:
    """MovieLens ``user<sep>movie<sep>rating[...]`` lines with compacted ids."""
    raw = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                u, m, r = line.strip().split(sep)[:3]
                raw.append((u, m, float(r)))
    users = {u: k for k, u in enumerate(sorted({u for u, _, _ in raw}))}
    movies = {m: k for k, m in enumerate(sorted({m for _, m, _ in raw}))}
    nu, nm = len(users), len(movies)
    samples = [pmf_sample(users[u], movies[m], r, nu) for u, m, r in raw]
    return Corpus(PMF, samples, nu + nm, n_users=nu, n_movies=nm)
