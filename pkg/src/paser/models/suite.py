"""The ordered family of task models and its parameter-based cost vector."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..tensorkit import Mode, RngStream, count_flops, count_params
from .unet import UNet, UNetSpec

logger = logging.getLogger(__name__)


def cost_vector(param_counts: Sequence[int]) -> np.ndarray:
    """C(f_i) = numParams(f_i) / sum over *all* models f_0..f_m of numParams."""
    counts = np.asarray(param_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts <= 0):
        raise ValueError(f"Parameter counts must be positive, got {list(param_counts)}")
    return counts / counts.sum()


@dataclass
class ModelSuite:
    """Task models ordered from cheapest (f_0) to most expensive (f_m)."""

    models: list[UNet]
    param_counts: list[int]
    costs: np.ndarray
    _flops: dict[tuple[int, tuple[int, ...], Mode], int] = field(default_factory=dict)

    @classmethod
    def from_models(cls, models: Sequence[UNet], strict: bool = True) -> "ModelSuite":
        """Build a suite; ``strict`` enforces strictly increasing parameter counts."""
        if not models:
            raise ValueError("A model suite needs at least one model")
        first = models[0].spec
        for model in models[1:]:
            if (model.spec.in_channels, model.spec.num_classes) != (
                first.in_channels,
                first.num_classes,
            ):
                raise ValueError("All suite models must share input channels and classes")
        counts = [count_params(model) for model in models]
        if strict and any(b <= a for a, b in zip(counts, counts[1:], strict=False)):
            raise ValueError(f"Suite model sizes must strictly increase, got {counts}")
        return cls(models=list(models), param_counts=counts, costs=cost_vector(counts))

    @property
    def m(self) -> int:
        """Index of the largest model (the suite holds m + 1 models)."""
        return len(self.models) - 1

    @property
    def num_models(self) -> int:
        return len(self.models)

    @property
    def num_classes(self) -> int:
        return self.models[0].spec.num_classes

    @property
    def small(self) -> UNet:
        return self.models[0]

    def flops(self, index: int, input_shape: tuple[int, ...], mode: Mode = Mode.EVAL) -> int:
        """Cached analytic flops of one forward pass of model ``index``."""
        key = (index, tuple(input_shape), mode)
        if key not in self._flops:
            self._flops[key] = count_flops(self.models[index], input_shape, mode)
        return self._flops[key]

    def replace(self, index: int, model: UNet) -> None:
        """Swap in another model of identical architecture (keeps the cost vector)."""
        if model.spec != self.models[index].spec:
            raise ValueError(f"Replacement for f_{index} must share its architecture")
        self.models[index] = model


def build_suite(
    specs: Sequence[UNetSpec], rng: RngStream, dtype: np.dtype | type | None = None
) -> ModelSuite:
    """Instantiate one UNet per spec and compute the suite cost vector."""
    if len(specs) < 2:
        raise ValueError(f"A suite needs at least two models, got {len(specs)}")
    models = [UNet(spec, rng.split(f"f{i}"), dtype) for i, spec in enumerate(specs)]
    suite = ModelSuite.from_models(models, strict=True)
    logger.info(
        f"Built suite with parameter counts {suite.param_counts}, "
        f"costs {np.round(suite.costs, 6).tolist()}"
    )
    return suite
