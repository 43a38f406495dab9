"""Analytic flop accounting by tracing a graph on a zero input of the requested shape.

Counts depend only on shapes and mode, never on parameter or input values.
"""

import numpy as np

from ..errors import ShapeError
from .graph import Graph, Mode
from .rng import RngStream
from .tensor import FlopLedger, Tensor, flop_ledger, no_grad


def _validate_shape(input_shape: tuple[int | None, ...]) -> tuple[int, ...]:
    if not input_shape or any(d is None or d <= 0 for d in input_shape):
        raise ShapeError(f"count_flops needs a fully specified shape, got {input_shape}")
    return tuple(int(d) for d in input_shape if d is not None)


def trace_flops(
    graph: Graph, input_shape: tuple[int | None, ...], mode: Mode = Mode.EVAL
) -> FlopLedger:
    """Run one forward pass and return the per-op flop ledger."""
    shape = _validate_shape(input_shape)
    x = Tensor(np.zeros(shape, dtype=graph.dtype))
    with no_grad(), flop_ledger() as ledger:
        graph(x, mode, RngStream(0))
    return ledger


def count_flops(
    graph: Graph, input_shape: tuple[int | None, ...], mode: Mode = Mode.EVAL
) -> int:
    """Flops of one forward pass of ``graph`` on an input of ``input_shape``."""
    return trace_flops(graph, input_shape, mode).total
