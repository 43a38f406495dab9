"""Reverse-mode differentiable tensor and the bookkeeping shared by every op."""

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field

import numpy as np

from ..errors import GradientError, NonFiniteError, ShapeError
from ..util import float_dtype

BackwardFn = Callable[[np.ndarray], None]

_GRAD_ENABLED: ContextVar[bool] = ContextVar("paser_grad_enabled", default=True)
_ACTIVE_LEDGER: ContextVar["FlopLedger | None"] = ContextVar(
    "paser_flop_ledger", default=None
)


@dataclass
class FlopLedger:
    """Accumulates analytic flop counts for every op executed while active."""

    total: int = 0
    by_op: dict[str, int] = field(default_factory=dict)

    def record(self, op: str, flops: int) -> None:
        self.total += flops
        self.by_op[op] = self.by_op.get(op, 0) + flops


@contextmanager
def flop_ledger() -> Iterator[FlopLedger]:
    """Collect flops of every op executed inside the block."""
    ledger = FlopLedger()
    token = _ACTIVE_LEDGER.set(ledger)
    try:
        yield ledger
    finally:
        _ACTIVE_LEDGER.reset(token)


def record_flops(op: str, flops: int) -> None:
    ledger = _ACTIVE_LEDGER.get()
    if ledger is not None:
        ledger.record(op, int(flops))


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def ensure_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"Non-finite values produced by '{op}'", op=op)


class Tensor:
    """A dense float array that remembers how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray | float | list,
        requires_grad: bool = False,
        name: str = "",
        dtype: np.dtype | type | None = None,
    ):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(float_dtype())
        self.data: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = grad.astype(self.data.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        """Populate ``grad`` on every tensor that contributed to this scalar."""
        if self.data.size != 1:
            raise GradientError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise GradientError(
                "backward() called on a loss that was not evaluated with gradient tracking"
            )

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            for parent in node._parents:
                if parent.grad is not None:
                    ensure_finite(parent.grad, f"{node.op}.backward")

    def __add__(self, other: "Tensor | float") -> "Tensor":
        from .ops import add

        return add(self, other)

    def __radd__(self, other: float) -> "Tensor":
        from .ops import add

        return add(self, other)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        from .ops import add, scale

        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other: float) -> "Tensor":
        from .ops import add, scale

        return add(scale(self, -1.0), other)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from .ops import mul, scale

        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other: float) -> "Tensor":
        from .ops import scale

        return scale(self, other)

    def __neg__(self) -> "Tensor":
        from .ops import scale

        return scale(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        from .ops import scale

        return scale(self, 1.0 / other)

    def __pow__(self, exponent: float) -> "Tensor":
        from .ops import power

        return power(self, exponent)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"<Tensor(shape={self.shape}, op={self.op}{label})>"


def make_result(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward: BackwardFn,
    op: str,
) -> Tensor:
    """Wrap an op's output, attaching the backward closure when tracking gradients."""
    ensure_finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out
