"""Adam (with bias correction) and vanilla SGD over lists of Parameters."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    #: epochs of recogniser / joint / multitask training
    epochs: int = 20
    #: epochs of unsupervised feature learning
    feature_epochs: int = 20
    #: frames per feature-learning minibatch (both domains together)
    frame_batch: int = 200
    #: utterances per recogniser minibatch
    utterance_batch: int = 2

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if not self.lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.epochs < 1 or self.feature_epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.frame_batch < 1 or self.utterance_batch < 1:
            raise ConfigError("batch sizes must be >= 1")


def adam_state():
    return {"t": 0, "m": {}, "v": {}}


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, in place. ``grads`` maps param -> array."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p in params:
        g = grads[p]
        key = id(p)
        m = state["m"].get(key)
        if m is None:
            m = state["m"][key] = np.zeros_like(p.data)
            state["v"][key] = np.zeros_like(p.data)
        v = state["v"][key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def sgd_step(params, grads, lr):
    for p in params:
        p.data -= lr * grads[p]


class Optimizer:
    def __init__(self, params, cfg):
        self.params = list(params)
        self.cfg = cfg
        self.state = adam_state()

    def step(self, grads):
        if self.cfg.kind == "adam":
            adam_step(self.params, grads, self.state, self.cfg)
        else:
            sgd_step(self.params, grads, self.cfg.lr)
