# shared/optim.py
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from shared.errors import GradientError
from shared.tensor import Parameter

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS_ADAM = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_parameter(cls, param: Parameter) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data))


def adam_step(
    params: Mapping[str, Parameter],
    states: dict[str, AdamState],
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS_ADAM,
) -> None:
    """Bias-corrected Adam update on every trainable parameter, then zero the grads."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")

    missing = [name for name, p in params.items() if p.trainable and p.grad is None]
    if missing:
        raise GradientError(f"no gradient for trainable parameters: {', '.join(sorted(missing))}")

    for name, param in params.items():
        if not param.trainable:
            continue
        state = states.get(name)
        if state is None:
            state = states[name] = AdamState.for_parameter(param)
        g = param.grad
        state.t += 1
        state.m = beta1 * state.m + (1.0 - beta1) * g
        state.v = beta2 * state.v + (1.0 - beta2) * g * g
        m_hat = state.m / (1.0 - beta1**state.t)
        v_hat = state.v / (1.0 - beta2**state.t)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

    for param in params.values():
        param.zero_grad()


@dataclass
class Adam:
    params: Mapping[str, Parameter]
    lr: float = 1e-3
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self) -> None:
        adam_step(self.params, self.states, self.lr)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
