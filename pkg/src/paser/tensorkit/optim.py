"""Adam optimiser over a graph's parameters."""

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..errors import GradientError
from .graph import Graph
from .tensor import Tensor


@dataclass
class AdamState:
    """Moments and step counter for one set of parameters."""

    params: dict[str, Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        for name, param in self.params.items():
            self.m.setdefault(name, np.zeros_like(param.data))
            self.v.setdefault(name, np.zeros_like(param.data))

    @classmethod
    def for_graph(cls, graph: Graph, lr: float = 1e-4, **kwargs: float) -> "AdamState":
        return cls(params=dict(graph.params), lr=lr, **kwargs)


def adam_step(state: AdamState, grads: Mapping[str, np.ndarray]) -> None:
    """Apply one bias-corrected Adam update in place.

    Raises:
        GradientError: If ``grads`` does not cover exactly the tracked parameters
    """
    missing = set(state.params) - set(grads)
    extra = set(grads) - set(state.params)
    if missing or extra:
        raise GradientError(
            f"Gradient map mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
        )

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, param in state.params.items():
        g = np.asarray(grads[name], dtype=param.data.dtype)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(param.data.dtype)


def step_graph(state: AdamState, graph: Graph) -> None:
    """Update ``graph`` from its accumulated gradients and clear them."""
    adam_step(state, graph.gradients())
    graph.zero_grad()
