"""Central finite-difference gradient checks."""

from collections.abc import Callable

import numpy as np

from .rng import RngStream
from .tensor import Tensor


def numerical_gradient(
    loss_fn: Callable[[], Tensor], param: Tensor, index: tuple[int, ...], eps: float = 1e-4
) -> float:
    """Central difference of ``loss_fn`` with respect to one entry of ``param``."""
    original = param.data[index]
    param.data[index] = original + eps
    upper = loss_fn().item()
    param.data[index] = original - eps
    lower = loss_fn().item()
    param.data[index] = original
    return (upper - lower) / (2.0 * eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    rng: RngStream,
    probes: int = 10,
    eps: float = 1e-4,
) -> float:
    """Compare backprop against central differences at random parameter entries.

    ``loss_fn`` must be deterministic (fixed dropout masks etc.). Returns the worst
    relative error over all probes.
    """
    for param in params.values():
        param.zero_grad()
    loss_fn().backward()
    analytic = {
        name: p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for name, p in params.items()
    }

    names = sorted(params)
    worst = 0.0
    for k in range(probes):
        name = names[int(rng.split(k).integers(0, len(names)))]
        param = params[name]
        flat = int(rng.split(f"entry{k}").integers(0, param.size))
        index = np.unravel_index(flat, param.shape)
        numeric = numerical_gradient(loss_fn, param, index, eps)
        worst = max(worst, relative_error(float(analytic[name][index]), numeric))
    return worst
