import math

import numpy as np
import pytest

from isptrain.errors import ConfigurationError
from isptrain.learning import ModelState
from isptrain.optim import ADAM, NESTEROV, SGD, OptimizerState, canonical_algo, optimizer_step
from isptrain.sparse import SparseVector


def test_aliases():
    assert canonical_algo("sgd") == SGD
    assert canonical_algo("nesterov") == NESTEROV
    assert canonical_algo("adam") == ADAM
    with pytest.raises(ConfigurationError):
        canonical_algo("rmsprop")


def test_sgd_is_minus_eta_g():
    opt = OptimizerState(eta=0.5)
    u = optimizer_step(opt, ModelState.lr(4), SparseVector([0, 2], [1.0, -4.0]))
    assert u.deltas.to_dict() == {0: -0.5, 2: 2.0}
    assert u.step == 1 and opt.step == 1


def test_inverse_sqrt_decay():
    opt = OptimizerState(eta=1.0, decay="inverse_sqrt")
    m = ModelState.lr(1)
    g = SparseVector([0], [1.0])
    deltas = [optimizer_step(opt, m, g).deltas.get(0) for _ in range(4)]
    assert deltas == pytest.approx([-1.0, -1 / math.sqrt(2), -1 / math.sqrt(3), -0.5])


def test_nesterov_by_hand():
    opt = OptimizerState(algo="nesterov", eta=0.1, momentum=0.9)
    m = ModelState.lr(1)
    g = SparseVector([0], [1.0])
    # v1 = 1, u1 = -0.1 (1 + 0.9); v2 = 1.9, u2 = -0.1 (1 + 1.71)
    assert optimizer_step(opt, m, g).deltas.get(0) == pytest.approx(-0.19)
    assert optimizer_step(opt, m, g).deltas.get(0) == pytest.approx(-0.271)


def test_adam_first_step_is_about_eta():
    opt = OptimizerState(algo="adam", eta=0.01)
    u = optimizer_step(opt, ModelState.lr(3), SparseVector([0, 1], [5.0, -0.001]))
    assert u.deltas.get(0) == pytest.approx(-0.01, rel=1e-6)
    assert u.deltas.get(1) == pytest.approx(0.01, rel=1e-4)


def test_adam_is_lazy_on_untouched_coordinates():
    opt = OptimizerState(algo="adam", eta=0.01)
    m = ModelState.lr(3)
    optimizer_step(opt, m, SparseVector([0], [1.0]))
    optimizer_step(opt, m, SparseVector([1], [1.0]))
    assert opt.m[2] == 0.0 and opt.v[2] == 0.0
    assert opt.m[0] == pytest.approx(0.1)


def test_state_copy_is_deep():
    opt = OptimizerState(algo="nesterov", dim=2)
    dup = opt.copy()
    dup.velocity[0] = 3.0
    assert opt.velocity[0] == 0.0


@pytest.mark.parametrize("kwargs", [dict(eta=0), dict(decay="cosine"), dict(momentum=1.0),
                                    dict(beta1=1.0), dict(epsilon=0.0)])
def test_validation(kwargs):
    with pytest.raises(ConfigurationError):
        OptimizerState(**kwargs)


def test_gradient_outside_model_rejected():
    with pytest.raises(ConfigurationError):
        optimizer_step(OptimizerState(), ModelState.lr(2), SparseVector([5], [1.0]))


def test_zero_gradient_entries_do_not_appear():
    opt = OptimizerState(algo="nesterov")
    u = optimizer_step(opt, ModelState.lr(3), SparseVector([0], [1.0]))
    assert np.all(u.deltas.values != 0)
