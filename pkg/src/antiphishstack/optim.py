"""Adaptive first-order optimizers operating in place on dicts of numpy arrays."""
from __future__ import annotations

from collections.abc import MutableMapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, NonFiniteUpdate


class OptimizerKind(str, Enum):
    ADADELTA = "adadelta"
    ADAM = "adam"
    RMSPROP = "rmsprop"
    ADAGRAD = "adagrad"
    SGD = "sgd"


DEFAULT_LR = {
    OptimizerKind.ADADELTA: 1.0,
    OptimizerKind.ADAM: 1e-3,
    OptimizerKind.RMSPROP: 1e-3,
    OptimizerKind.ADAGRAD: 1e-2,
    OptimizerKind.SGD: 1e-2,
}

# Reference epoch counts per optimizer.
DEFAULT_EPOCHS = {
    OptimizerKind.ADADELTA: 200,
    OptimizerKind.ADAM: 100,
    OptimizerKind.RMSPROP: 150,
    OptimizerKind.ADAGRAD: 200,
    OptimizerKind.SGD: 250,
}

# Reference (epochs, learning rate) presets keyed by (dataset, feature set, optimizer).
PRESETS: dict[tuple[str, str, OptimizerKind], tuple[int, float]] = {
    ("ds1", "urlf", OptimizerKind.ADADELTA): (200, 0.019),
    ("ds1", "clf", OptimizerKind.ADADELTA): (200, 0.0023),
    ("ds1", "urlf", OptimizerKind.ADAM): (100, 0.007),
    ("ds1", "clf", OptimizerKind.ADAM): (100, 0.0016),
    ("ds1", "urlf", OptimizerKind.RMSPROP): (150, 0.025),
    ("ds1", "clf", OptimizerKind.RMSPROP): (150, 0.027),
    ("ds1", "urlf", OptimizerKind.ADAGRAD): (200, 0.0048),
    ("ds1", "clf", OptimizerKind.ADAGRAD): (200, 0.098),
    ("ds1", "urlf", OptimizerKind.SGD): (250, 0.003),
    ("ds1", "clf", OptimizerKind.SGD): (250, 0.003),
    ("ds2", "urlf", OptimizerKind.ADADELTA): (200, 0.0029),
    ("ds2", "clf", OptimizerKind.ADADELTA): (200, 0.0017),
    ("ds2", "urlf", OptimizerKind.ADAM): (100, 0.096),
    ("ds2", "clf", OptimizerKind.ADAM): (100, 0.0194),
    ("ds2", "urlf", OptimizerKind.RMSPROP): (150, 0.056),
    ("ds2", "clf", OptimizerKind.RMSPROP): (150, 0.007),
    ("ds2", "urlf", OptimizerKind.ADAGRAD): (200, 0.068),
    ("ds2", "clf", OptimizerKind.ADAGRAD): (200, 0.007),
    ("ds2", "urlf", OptimizerKind.SGD): (250, 0.001),
    ("ds2", "clf", OptimizerKind.SGD): (250, 0.02),
}


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float | None = None
    epochs: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float | None = None      # 0.9 for RMSprop, 0.95 for AdaDelta
    eps: float | None = None      # 1e-6 for AdaDelta, 1e-8 otherwise

    def __post_init__(self):
        try:
            kind = OptimizerKind(self.kind)
        except ValueError:
            raise ConfigError(f"unknown optimizer {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", DEFAULT_LR[kind])
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[kind])
        if self.rho is None:
            object.__setattr__(self, "rho", 0.95 if kind is OptimizerKind.ADADELTA else 0.9)
        if self.eps is None:
            object.__setattr__(self, "eps", 1e-6 if kind is OptimizerKind.ADADELTA else 1e-8)
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and 0.0 <= self.rho < 1.0):
            raise ConfigError("beta1, beta2 and rho must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")

    @classmethod
    def preset(cls, dataset: str, feature_set: str, kind: str | OptimizerKind) -> OptimizerConfig:
        kind = OptimizerKind(kind)
        epochs, lr = PRESETS[(dataset.lower(), feature_set.lower(), kind)]
        return cls(kind, learning_rate=lr, epochs=epochs)


@dataclass
class OptimizerState:
    t: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def init_state(cfg: OptimizerConfig, params: MutableMapping[str, np.ndarray]) -> OptimizerState:
    names = {
        OptimizerKind.ADAM: ("m", "v"),
        OptimizerKind.RMSPROP: ("sq",),
        OptimizerKind.ADAGRAD: ("sum_sq",),
        OptimizerKind.ADADELTA: ("sq", "delta_sq"),
        OptimizerKind.SGD: (),
    }[cfg.kind]
    return OptimizerState(0, {p: {s: np.zeros_like(v) for s in names} for p, v in params.items()})


def optimizer_step(cfg: OptimizerConfig, params: MutableMapping[str, np.ndarray],
                   grads: MutableMapping[str, np.ndarray], state: OptimizerState) -> OptimizerState:
    """Apply one update in place and advance ``state.t``."""
    state.t += 1
    t, lr, eps = state.t, cfg.learning_rate, cfg.eps
    for name, theta in params.items():
        g = grads[name]
        slot = state.slots[name]
        if cfg.kind is OptimizerKind.SGD:
            theta -= lr * g
        elif cfg.kind is OptimizerKind.ADAM:
            m, v = slot["m"], slot["v"]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        elif cfg.kind is OptimizerKind.RMSPROP:
            sq = slot["sq"]
            sq *= cfg.rho
            sq += (1.0 - cfg.rho) * g * g
            theta -= lr * g / (np.sqrt(sq) + eps)
        elif cfg.kind is OptimizerKind.ADAGRAD:
            acc = slot["sum_sq"]
            acc += g * g
            theta -= lr * g / np.sqrt(acc + eps)
        else:  # AdaDelta; lr scales the unit-corrected step
            sq, dsq = slot["sq"], slot["delta_sq"]
            sq *= cfg.rho
            sq += (1.0 - cfg.rho) * g * g
            delta = np.sqrt(dsq + eps) / np.sqrt(sq + eps) * g
            dsq *= cfg.rho
            dsq += (1.0 - cfg.rho) * delta * delta
            theta -= lr * delta
        if not np.all(np.isfinite(theta)):
            raise NonFiniteUpdate(f"non-finite value in {name!r} after {cfg.kind.value} step {t}")
    return state


def clip_global_norm(grads: MutableMapping[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``; returns the original norm."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if not np.isfinite(total):
        raise NonFiniteUpdate("gradient norm is not finite")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
