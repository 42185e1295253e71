"""SGD, Nesterov momentum and Adam, restricted to the touched indices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .learning import GradientUpdate, ModelState
from .sparse import SparseVector

SGD = "SGD"
NESTEROV = "NesterovMomentum"
ADAM = "Adam"

_ALIASES = {
    "sgd": SGD,
    "nesterov": NESTEROV,
    "nesterovmomentum": NESTEROV,
    "momentum": NESTEROV,
    "adam": ADAM,
}


def canonical_algo(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown optimizer {name!r}") from None


@dataclass
class OptimizerState:
    algo: str = SGD
    eta: float = 0.1
    decay: str = "none"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dim: int = 0
    step: int = 0
    velocity: np.ndarray | None = field(default=None, repr=False)
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.algo = canonical_algo(self.algo)
        if self.eta <= 0:
            raise ConfigurationError("eta must be positive")
        if self.decay not in ("none", "inverse_sqrt"):
            raise ConfigurationError(f"unknown decay {self.decay!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.dim:
            self._alloc(self.dim)

    def _alloc(self, dim: int):
        self.dim = dim
        if self.algo == NESTEROV and self.velocity is None:
            self.velocity = np.zeros(dim)
        if self.algo == ADAM and self.m is None:
            self.m = np.zeros(dim)
            self.v = np.zeros(dim)

    def rate(self, t: int) -> float:
        """Step size at 1-based step ``t``."""
        if t < 1:
            raise ValueError("steps are 1-based")
        if self.decay == "inverse_sqrt":
            return self.eta / math.sqrt(t)
        return self.eta

    def copy(self) -> "OptimizerState":
        out = OptimizerState(self.algo, self.eta, self.decay, self.momentum, self.beta1,
                             self.beta2, self.epsilon, 0, self.step)
        out.dim = self.dim
        for name in ("velocity", "m", "v"):
            arr = getattr(self, name)
            setattr(out, name, None if arr is None else arr.copy())
        return out


def optimizer_step(opt: OptimizerState, model: ModelState, grad: SparseVector,
                   *, producer: int = 0, batch_loss: float = 0.0) -> GradientUpdate:
    """Advance ``opt`` by one step and return the update ``u_t``.

    The model itself is not modified; apply the result with
    :func:`isptrain.learning.apply_update`.
    """
    if opt.dim != model.dim:
        if opt.dim:
            raise ConfigurationError("optimizer and model dimensions differ")
        opt._alloc(model.dim)
    if len(grad) and grad.max_index() >= model.dim:
        raise ConfigurationError("gradient index outside model dimension")
    opt.step += 1
    t = opt.step
    eta_t = opt.rate(t)
    idx, g = grad.indices, grad.values
    if opt.algo == SGD:
        delta = -eta_t * g
    elif opt.algo == NESTEROV:
        mu = opt.momentum
        vel = mu * opt.velocity[idx] + g
        opt.velocity[idx] = vel
        delta = -eta_t * (g + mu * vel)
    else:
        b1, b2 = opt.beta1, opt.beta2
        m = b1 * opt.m[idx] + (1.0 - b1) * g
        v = b2 * opt.v[idx] + (1.0 - b2) * g * g
        opt.m[idx] = m
        opt.v[idx] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        delta = -eta_t * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return GradientUpdate(SparseVector(idx, delta),
                          producer=producer, step=t, batch_loss=batch_loss)
