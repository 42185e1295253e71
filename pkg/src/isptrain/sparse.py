"""Sparse vectors stored as sorted (index, value) arrays.

Every feature vector, gradient and published update in the package goes
through :class:`SparseVector`. Indices are strictly increasing and zero
values are never stored.
"""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64


class SparseVector:
    __slots__ = ("indices", "values")

    def __init__(self, indices=(), values=(), *, check: bool = True):
        idx = np.asarray(indices, dtype=INDEX_DTYPE).reshape(-1)
        val = np.asarray(values, dtype=VALUE_DTYPE).reshape(-1)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if check:
            if idx.size and idx.min() < 0:
                raise ValueError("negative index")
            if idx.size > 1 and np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            keep = val != 0.0
            if not keep.all():
                idx, val = idx[keep], val[keep]
        self.indices = idx
        self.values = val

    @classmethod
    def from_dict(cls, entries: Mapping[int, float]) -> "SparseVector":
        keys = sorted(entries)
        return cls(keys, [entries[k] for k in keys])

    @classmethod
    def from_unsorted(cls, indices, values) -> "SparseVector":
        """Build from possibly repeated, unsorted pairs by summing duplicates."""
        idx = np.asarray(indices, dtype=INDEX_DTYPE).reshape(-1)
        val = np.asarray(values, dtype=VALUE_DTYPE).reshape(-1)
        if idx.size == 0:
            return cls()
        uniq, inverse = np.unique(idx, return_inverse=True)
        summed = np.bincount(inverse, weights=val, minlength=uniq.size)
        return cls(uniq, summed)

    @classmethod
    def from_dense(cls, dense) -> "SparseVector":
        dense = np.asarray(dense, dtype=VALUE_DTYPE)
        nz = np.flatnonzero(dense)
        return cls(nz, dense[nz], check=False)

    def __len__(self) -> int:
        return int(self.indices.size)

    def __iter__(self):
        return zip(self.indices.tolist(), self.values.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        body = ", ".join(f"{i}: {v!r}" for i, v in self)
        return f"SparseVector({{{body}}})"

    def __neg__(self) -> "SparseVector":
        return SparseVector(self.indices, -self.values, check=False)

    def scale(self, factor: float) -> "SparseVector":
        return SparseVector(self.indices, self.values * factor)

    def get(self, index: int, default: float = 0.0) -> float:
        pos = np.searchsorted(self.indices, index)
        if pos < self.indices.size and self.indices[pos] == index:
            return float(self.values[pos])
        return default

    def to_dict(self) -> dict[int, float]:
        return dict(self)

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim, dtype=VALUE_DTYPE)
        if self.indices.size:
            if self.indices[-1] >= dim:
                raise IndexError(f"index {self.indices[-1]} outside dimension {dim}")
            out[self.indices] = self.values
        return out

    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1

    def copy(self) -> "SparseVector":
        return SparseVector(self.indices.copy(), self.values.copy(), check=False)


def concat_rows(rows: Iterable[SparseVector]):
    """Flatten a batch of sparse rows into (row_ids, indices, values)."""
    rows = list(rows)
    lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    if lengths.sum() == 0:
        empty_i = np.zeros(0, dtype=INDEX_DTYPE)
        return empty_i, empty_i, np.zeros(0, dtype=VALUE_DTYPE)
    row_ids = np.repeat(np.arange(len(rows), dtype=np.int64), lengths)
    indices = np.concatenate([r.indices for r in rows])
    values = np.concatenate([r.values for r in rows])
    return row_ids, indices, values
