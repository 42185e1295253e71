"""
Synthetic corpora and mini-batch files
======================================

Generate a sparse logistic-regression corpus, hash a few categorical
features, min-max scale, then partition into ``part-<id>.txt`` files.
"""
import tempfile
from pathlib import Path

import numpy as np

from isptrain.data import (DatasetSpec, generate_lr, generate_pmf, hash_feature,
                           minmax_normalize, read_batch, read_manifest, write_corpus)

# a planted sparse model: 2000 samples, 20 of 1000 features each
corpus, w_true = generate_lr(DatasetSpec(kind="lr", n=2000, dim=1000, sparsity=0.02, seed=7))
labels = np.array([s.label for s in corpus.samples])
print(f"{len(corpus)} samples, dim {corpus.dim}, positive rate {labels.mean():.3f}")

# categorical values land in a fixed index space through 64-bit FNV-1a
for value in ("us", "de", "fr"):
    print(f"country={value:<3s} -> index {hash_feature('country', value, 100_000)}")

# two-pass min-max scaling: pass one collects ranges, pass two rescales
scaled = minmax_normalize(corpus)
vals = np.concatenate([s.features.values for s in scaled.samples])
print(f"scaled values lie in [{vals.min():.3f}, {vals.max():.3f}]")

# partition into mini-batches of B=250 and write them out
with tempfile.TemporaryDirectory() as tmp:
    batches = write_corpus(tmp, scaled, batch_size=250, seed=7, normalized=True)
    print(f"{len(batches)} files:", sorted(p.name for p in Path(tmp).glob("part-*.txt"))[:3], "...")
    print("manifest:", read_manifest(tmp))
    first = read_batch(Path(tmp) / "part-0.txt")
    print("first sample line round-trips:", first[0].features == batches[0][0].features)

# a rank-5 rating matrix observed on 20% of its cells
pmf, _ = generate_pmf(DatasetSpec(kind="pmf", n_users=50, n_movies=80, rank=5,
                                  sparsity=0.2, noise=0.1, seed=7))
print(f"PMF corpus: {len(pmf)} ratings over a {pmf.n_users}x{pmf.n_movies} matrix")
