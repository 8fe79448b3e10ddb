"""Adam and SGD steps over per-layer parameter dicts.

Steps are pure: they return fresh parameter and state structures so that a
cloned state replayed on the same inputs reproduces the same outputs.
"""

import numpy as np
from dataclasses import dataclass, field


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self):
        return OptimizerState(
            kind=self.kind,
            learning_rate=self.learning_rate,
            step_count=self.step_count,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            m=[{k: a.copy() for k, a in layer.items()} for layer in self.m],
            v=[{k: a.copy() for k, a in layer.items()} for layer in self.v],
        )


def init_optimizer(params, kind="adam", learning_rate=1e-3):
    if kind not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer kind {kind!r}")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    zeros = [{k: np.zeros_like(a) for k, a in layer.items()} for layer in params]
    if kind == "adam":
        return OptimizerState(kind, learning_rate,
                              m=zeros,
                              v=[{k: np.zeros_like(a) for k, a in layer.items()}
                                 for layer in params])
    return OptimizerState(kind, learning_rate, m=zeros, v=[])


def _check_shapes(params, grads):
    for lp, lg in zip(params, grads):
        for k, g in lg.items():
            if g.shape != lp[k].shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {lp[k].shape}")


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    _check_shapes(params, grads)
    t = state.step_count + 1
    b1, b2, eps, lr = state.beta1, state.beta2, state.eps, state.learning_rate
    new_params, new_m, new_v = [], [], []
    for lp, lg, lm, lv in zip(params, grads, state.m, state.v):
        np_l, nm_l, nv_l = {}, {}, {}
        for k, p in lp.items():
            g = lg.get(k)
            if g is None:
                np_l[k], nm_l[k], nv_l[k] = p.copy(), lm[k].copy(), lv[k].copy()
                continue
            m = b1 * lm[k] + (1 - b1) * g
            v = b2 * lv[k] + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            np_l[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
            nm_l[k], nv_l[k] = m, v
        new_params.append(np_l)
        new_m.append(nm_l)
        new_v.append(nv_l)
    new_state = OptimizerState(state.kind, lr, t, b1, b2, eps, new_m, new_v)
    return new_params, new_state


def sgd_step(params, grads, state):
    _check_shapes(params, grads)
    new_params = []
    for lp, lg in zip(params, grads):
        new_params.append({k: (p - state.learning_rate * lg[k]) if k in lg else p.copy()
                           for k, p in lp.items()})
    new_state = OptimizerState(state.kind, state.learning_rate, state.step_count + 1,
                               state.beta1, state.beta2, state.eps, state.m, state.v)
    return new_params, new_state


def optimizer_step(params, grads, state):
    if state.kind == "adam":
        return adam_step(params, grads, state)
    return sgd_step(params, grads, state)
