"""JSON-lines training event logs and loss-plateau detection."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class TrainEvent(BaseModel):
    """One row of a stage's event log."""

    stage: str
    epoch: int = Field(ge=0)
    loss: float | None = None
    reward: float | None = None
    alpha: float | None = None
    lam: float | None = None
    tvd: float | None = None
    plateau: bool = False
    extra: dict[str, float] = Field(default_factory=dict)


class EventLog:
    """Collects events in memory and, when given a path, appends them as JSON lines."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.events: list[TrainEvent] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, event: TrainEvent) -> None:
        if self.events and self.events[-1].stage == event.stage:
            if event.epoch <= self.events[-1].epoch:
                raise ValueError(
                    f"Event epochs must increase within '{event.stage}' "
                    f"({self.events[-1].epoch} then {event.epoch})"
                )
        self.events.append(event)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                f.write(event.model_dump_json() + "\n")

    def __len__(self) -> int:
        return len(self.events)


def read_events(path: str | Path) -> list[TrainEvent]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrainEvent.model_validate_json(line) for line in lines if line.strip()]


def detect_plateau(history: Sequence[float], window: int, tolerance: float) -> bool:
    """True once the mean of the last ``window`` values moved less than ``tolerance``
    (relative) from the mean of the ``window`` values before them."""
    if window < 1 or len(history) < 2 * window:
        return False
    recent = float(np.mean(history[-window:]))
    previous = float(np.mean(history[-2 * window : -window]))
    return abs(recent - previous) <= tolerance * max(abs(previous), 1e-12)


class PlateauTracker:
    """Flags the first epoch at which a loss history plateaus."""

    def __init__(self, stage: str, window: int, tolerance: float):
        self.stage = stage
        self.window = window
        self.tolerance = tolerance
        self.history: list[float] = []
        self.epoch: int | None = None

    def update(self, epoch: int, loss: float) -> bool:
        self.history.append(loss)
        if self.epoch is None and detect_plateau(self.history, self.window, self.tolerance):
            self.epoch = epoch
            logger.info(f"{self.stage}: loss plateaued at epoch {epoch} ({loss:.6f})")
        return self.epoch is not None


@dataclass
class TrainHistory:
    """Per-epoch summaries returned by every training stage."""

    losses: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    plateau_epoch: int | None = None
    stopped_early: bool = False
