from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


@dataclass
class AdamState:
    """Adam moments for a named collection of parameter matrices."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> None:
        """One bias-corrected Adam step, in place on ``params``.

        ``step`` counts calls, not parameters, so every parameter in a call
        shares the same bias correction.
        """
        self.step += 1
        t = self.step
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name in sorted(params):
            g = grads[name]
            params[name] = adam_step(self, name, params[name], g, c1, c2)


def adam_step(state: AdamState, name, param, grad, c1=None, c2=None):
    """Return the Adam-updated copy of ``param``.

    Called directly it advances ``state.step`` itself.
    """
    if param.shape != grad.shape:
        raise DimensionError(f"adam_step[{name}]: param {param.shape} vs grad {grad.shape}")
    if c1 is None:
        state.step += 1
        c1 = 1.0 - state.beta1**state.step
        c2 = 1.0 - state.beta2**state.step
    m = state.m.get(name)
    v = state.v.get(name)
    if m is None:
        m = np.zeros_like(param)
        v = np.zeros_like(param)
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    state.m[name] = m
    state.v[name] = v
    out = param - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"adam_step[{name}]")
    return out
