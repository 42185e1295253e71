"""Models, losses and gradients for sparse logistic regression and PMF.

Both models expose a single flat parameter vector so that updates, the
significance filter and the store share one keyspace:

* LR: weight ``j`` lives at index ``j``.
* PMF: ``U[u, k]`` lives at ``u * r + k`` and ``M[m, k]`` at
  ``n_users * r + m * r + k``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .sparse import SparseVector, concat_rows

LR = "LR"
PMF = "PMF"

# sigmoid inputs are clamped to this magnitude
_Z_CLAMP = 35.0


@dataclass(frozen=True)
class Sample:
    features: SparseVector
    label: float


def pmf_sample(user: int, movie: int, rating: float, n_users: int) -> Sample:
    """Encode a rating as one-hot (user, n_users + movie) features."""
    return Sample(SparseVector([user, n_users + movie], [1.0, 1.0], check=False), float(rating))


@dataclass
class ModelState:
    kind: str
    params: np.ndarray
    step: int = 0
    n_users: int = 0
    n_movies: int = 0
    rank: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.kind == PMF:
            if self.rank < 1 or self.n_users < 1 or self.n_movies < 1:
                raise ConfigurationError("PMF needs rank, n_users and n_movies >= 1")
            if self.params.size != (self.n_users + self.n_movies) * self.rank:
                raise ConfigurationError("PMF parameter vector has the wrong size")
        elif self.kind != LR:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")

    @classmethod
    def lr(cls, dim: int, weights=None) -> "ModelState":
        w = np.zeros(dim) if weights is None else np.array(weights, dtype=np.float64)
        return cls(LR, w)

    @classmethod
    def pmf(cls, n_users: int, n_movies: int, rank: int, *, rng=None,
            init_scale: float = 0.1) -> "ModelState":
        size = (n_users + n_movies) * rank
        if rng is None:
            params = np.zeros(size)
        else:
            params = init_scale * rng.standard_normal(size)
        return cls(PMF, params, n_users=n_users, n_movies=n_movies, rank=rank)

    @property
    def dim(self) -> int:
        return int(self.params.size)

    @property
    def lr_weights(self) -> np.ndarray:
        if self.kind != LR:
            raise AttributeError("lr_weights only exists for LR models")
        return self.params

    @property
    def factors_u(self) -> np.ndarray:
        if self.kind != PMF:
            raise AttributeError("factors_u only exists for PMF models")
        return self.params[: self.n_users * self.rank].reshape(self.n_users, self.rank)

    @property
    def factors_m(self) -> np.ndarray:
        if self.kind != PMF:
            raise AttributeError("factors_m only exists for PMF models")
        return self.params[self.n_users * self.rank:].reshape(self.n_movies, self.rank)

    def copy(self) -> "ModelState":
        return ModelState(self.kind, self.params.copy(), self.step,
                          self.n_users, self.n_movies, self.rank)

    def checksum(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()


@dataclass
class GradientUpdate:
    """The additive update ``u_t`` with ``x_t = x_{t-1} + u_t``."""

    deltas: SparseVector
    producer: int = 0
    step: int = 0
    batch_loss: float = 0.0
    meta: dict = field(default_factory=dict)


def _check_kind(model: ModelState, kind: str):
    if model.kind != kind:
        raise ConfigurationError(f"expected a {kind} model, got {model.kind}")


def lr_loss_grad(batch: Sequence[Sample], model: ModelState):
    """Mean binary cross-entropy and its sparse gradient over ``batch``."""
    _check_kind(model, LR)
    if not batch:
        raise ConfigurationError("empty batch")
    w = model.params
    rows, idx, vals = concat_rows(s.features for s in batch)
    if idx.size and idx.max() >= w.size:
        raise ConfigurationError(
            f"feature index {int(idx.max())} outside model dimension {w.size}")
    n = len(batch)
    labels = np.fromiter((s.label for s in batch), dtype=np.float64, count=n)
    z = np.bincount(rows, weights=w[idx] * vals, minlength=n)
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
    zc = np.clip(z, -_Z_CLAMP, _Z_CLAMP)
    resid = 1.0 / (1.0 + np.exp(-zc)) - labels
    grad = SparseVector.from_unsorted(idx, resid[rows] * vals / n)
    return loss, grad


def lr_loss(batch: Sequence[Sample], model: ModelState) -> float:
    return lr_loss_grad(batch, model)[0]


def _pmf_decode(batch: Sequence[Sample], model: ModelState):
    nu, nm = model.n_users, model.n_movies
    users = np.empty(len(batch), dtype=np.int64)
    movies = np.empty(len(batch), dtype=np.int64)
    for k, s in enumerate(batch):
        idx = s.features.indices
        if idx.size != 2:
            raise DataError("a PMF sample needs exactly a user and a movie feature")
        u, m = int(idx[0]), int(idx[1]) - nu
        if not (0 <= u < nu) or not (0 <= m < nm):
            raise DataError(f"rating ({u}, {m}) outside a {nu}x{nm} matrix")
        users[k], movies[k] = u, m
    ratings = np.fromiter((s.label for s in batch), dtype=np.float64, count=len(batch))
    return users, movies, ratings


def pmf_loss_grad(batch: Sequence[Sample], model: ModelState, reg: float = 0.0):
    """Batch RMSE, plus the gradient of the regularized squared error.

    The differentiated objective is
    ``mean_i[ 0.5 * e_i**2 + 0.5 * reg * (|U_u|**2 + |M_m|**2) ]``
    with ``e_i = <U_u, M_m> - rating``; see :func:`pmf_objective`.
    """
    _check_kind(model, PMF)
    if not batch:
        raise ConfigurationError("empty batch")
    users, movies, ratings = _pmf_decode(batch, model)
    r = model.rank
    U, M = model.factors_u, model.factors_m
    Uu, Mm = U[users], M[movies]
    err = np.einsum("ij,ij->i", Uu, Mm) - ratings
    loss = float(np.sqrt(np.mean(err * err)))
    n = len(batch)
    gu = (err[:, None] * Mm + reg * Uu) / n
    gm = (err[:, None] * Uu + reg * Mm) / n
    ks = np.arange(r)
    u_idx = (users[:, None] * r + ks).ravel()
    m_idx = (model.n_users * r + movies[:, None] * r + ks).ravel()
    grad = SparseVector.from_unsorted(np.concatenate([u_idx, m_idx]),
                                      np.concatenate([gu.ravel(), gm.ravel()]))
    return loss, grad


def pmf_objective(batch: Sequence[Sample], model: ModelState, reg: float = 0.0) -> float:
    users, movies, ratings = _pmf_decode(batch, model)
    Uu, Mm = model.factors_u[users], model.factors_m[movies]
    err = np.einsum("ij,ij->i", Uu, Mm) - ratings
    penalty = (Uu * Uu).sum(axis=1) + (Mm * Mm).sum(axis=1)
    return float(np.mean(0.5 * err * err + 0.5 * reg * penalty))


def loss_grad(batch, model: ModelState, reg: float = 0.0):
    if model.kind == LR:
        return lr_loss_grad(batch, model)
    return pmf_loss_grad(batch, model, reg)


def batch_loss(batch, model: ModelState) -> float:
    """Reported loss only (BCE for LR, RMSE for PMF)."""
    if model.kind == LR:
        return lr_loss_grad(batch, model)[0]
    users, movies, ratings = _pmf_decode(batch, model)
    err = np.einsum("ij,ij->i", model.factors_u[users], model.factors_m[movies]) - ratings
    return float(np.sqrt(np.mean(err * err)))


def _check_indices(model: ModelState, deltas: SparseVector):
    if len(deltas) and deltas.max_index() >= model.dim:
        raise IndexError(f"update index {deltas.max_index()} outside dimension {model.dim}")


def apply_update(model: ModelState, u: GradientUpdate | SparseVector) -> ModelState:
    """Return ``model + u`` with the step counter advanced."""
    deltas = u.deltas if isinstance(u, GradientUpdate) else u
    _check_indices(model, deltas)
    out = model.copy()
    out.params[deltas.indices] += deltas.values
    out.step += 1
    return out


def add_inplace(model: ModelState, deltas: SparseVector) -> None:
    """Add ``deltas`` to ``model`` in place without touching the step."""
    _check_indices(model, deltas)
    model.params[deltas.indices] += deltas.values
