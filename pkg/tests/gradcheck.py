"""Central finite-difference gradient oracle shared by the learning tests."""
import numpy as np

from isptrain.learning import ModelState, Sample, lr_loss_grad, pmf_loss_grad, pmf_objective, pmf_sample
from isptrain.sparse import SparseVector


def fd_gradient(f, params, h=1e-6):
    g = np.zeros_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        up = f()
        params[i] = old - h
        down = f()
        params[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def random_lr_case(rng, dim=12, n=8):
    batch = []
    for _ in range(n):
        k = int(rng.integers(1, dim + 1))
        idx = np.sort(rng.choice(dim, size=k, replace=False))
        batch.append(Sample(SparseVector(idx, rng.uniform(0.1, 1.0, k)), float(rng.integers(0, 2))))
    model = ModelState.lr(dim, rng.normal(0, 1.0, dim))
    return batch, model


def lr_check(rng):
    batch, model = random_lr_case(rng)
    _, grad = lr_loss_grad(batch, model)
    fd = fd_gradient(lambda: lr_loss_grad(batch, model)[0], model.params)
    return relative_error(grad.to_dense(model.dim), fd)


def pmf_check(rng, nu=5, nm=6, rank=3):
    model = ModelState.pmf(nu, nm, rank, rng=rng, init_scale=0.5)
    n = int(rng.integers(1, 10))
    batch = [pmf_sample(int(rng.integers(nu)), int(rng.integers(nm)), float(rng.normal()), nu)
             for _ in range(n)]
    reg = float(rng.uniform(0, 0.5))
    _, grad = pmf_loss_grad(batch, model, reg)
    fd = fd_gradient(lambda: pmf_objective(batch, model, reg), model.params)
    return relative_error(grad.to_dense(model.dim), fd)
