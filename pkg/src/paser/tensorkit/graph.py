"""Parameter containers that evaluate a fixed DAG of ops."""

from collections.abc import Mapping
from enum import StrEnum

import numpy as np

from ..errors import ShapeError
from ..util import float_dtype
from . import ops
from .rng import RngStream
from .tensor import Tensor


class Mode(StrEnum):
    """Evaluation mode; dropout is active only in TRAIN and MC_DROPOUT."""

    TRAIN = "train"
    EVAL = "eval"
    MC_DROPOUT = "mc-dropout"

    @property
    def dropout_active(self) -> bool:
        return self is not Mode.EVAL


class Graph:
    """Base class for networks: named parameter leaves plus a ``forward`` definition.

    Subclasses register parameters in ``__init__`` and implement ``forward``. ``input_names``
    and ``check_input`` describe the graph signature used by :func:`forward`.
    """

    input_names: tuple[str, ...] = ("x",)
    output_names: tuple[str, ...] = ("y",)

    def __init__(self, dtype: np.dtype | type | None = None):
        self.dtype = np.dtype(dtype) if dtype is not None else float_dtype()
        self.params: dict[str, Tensor] = {}
        self.trained = False

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"Parameter '{name}' is already registered")
        param = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = param
        return param

    def add_conv(
        self, name: str, cin: int, cout: int, kernel: int, rng: RngStream
    ) -> None:
        """Register He-initialised ``{name}.weight`` and zero ``{name}.bias``."""
        std = np.sqrt(2.0 / (cin * kernel * kernel))
        self.add_param(f"{name}.weight", rng.normal((cout, cin, kernel, kernel), std))
        self.add_param(f"{name}.bias", np.zeros(cout))

    def conv(self, name: str, x: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
        weight = self.params[f"{name}.weight"]
        kernel = weight.shape[-1]
        pad = kernel // 2 if padding is None else padding
        return ops.conv2d(x, weight, self.params[f"{name}.bias"], stride=stride, padding=pad)

    def check_input(self, shape: tuple[int, ...]) -> None:
        """Raise ShapeError if ``shape`` is not a valid input for this graph."""

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL, rng: RngStream | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(
        self, x: Tensor, mode: Mode = Mode.EVAL, rng: RngStream | None = None
    ) -> Tensor:
        self.check_input(x.shape)
        return self.forward(x, mode, rng)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient map for every parameter; unreachable parameters get zeros."""
        return {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeError(
                f"State does not match graph parameters (missing={sorted(missing)}, "
                f"extra={sorted(extra)})"
            )
        for name, param in self.params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(
                    f"Parameter '{name}' expects shape {param.shape}, got {value.shape}",
                    expected=param.shape,
                    actual=value.shape,
                )
            param.data = value.astype(self.dtype, copy=True)
            param.grad = None

    def astype(self, dtype: np.dtype | type) -> "Graph":
        """Convert parameters in place (used for 64-bit gradient checks)."""
        self.dtype = np.dtype(dtype)
        for param in self.params.values():
            param.data = param.data.astype(self.dtype)
            param.grad = None
        return self

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}(params={count_params(self)})>"


def count_params(graph: Graph) -> int:
    """Total number of learnable scalars."""
    return sum(int(np.prod(p.shape)) for p in graph.params.values())


def forward(
    graph: Graph,
    inputs: Mapping[str, np.ndarray | Tensor],
    mode: Mode = Mode.EVAL,
    rng: RngStream | None = None,
) -> dict[str, Tensor]:
    """Evaluate ``graph`` on named inputs and return its named outputs."""
    if set(inputs) != set(graph.input_names):
        raise ShapeError(
            f"{graph.__class__.__name__} expects inputs {list(graph.input_names)}, "
            f"got {sorted(inputs)}"
        )
    (name,) = graph.input_names
    value = inputs[name]
    x = value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=graph.dtype))
    (out_name,) = graph.output_names
    return {out_name: graph(x, mode, rng)}
