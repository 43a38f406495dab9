"""Minimal reverse-mode differentiable kernel with Adam and analytic flop accounting."""

from .flops import count_flops, trace_flops
from .graph import Graph, Mode, count_params, forward
from .optim import AdamState, adam_step, step_graph
from .rng import RngStream
from .tensor import FlopLedger, Tensor, flop_ledger, no_grad

__all__ = [
    "AdamState",
    "FlopLedger",
    "Graph",
    "Mode",
    "RngStream",
    "Tensor",
    "adam_step",
    "count_flops",
    "count_params",
    "flop_ledger",
    "forward",
    "no_grad",
    "step_graph",
    "trace_flops",
]
