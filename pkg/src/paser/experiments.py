"""Drivers for the evaluation protocols, composed from the pipeline stages.

Each driver prepares whatever stages it needs under ``config.out_dir`` and forks child run
directories (sharing data and checkpoints by copy) for every variant it compares.
"""

import logging
import shutil
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .config import ExperimentConfig
from .data import split_patches, stack_images
from .metrics import EntropyComparison, RunReport, entropy_dist_compare
from .models import mc_entropy
from .stages import (
    Method,
    Stage,
    gen_data,
    load_split,
    load_suite,
    root_rng,
    run_eval,
    run_finetune_tvd,
    run_pretrain,
    run_report,
    run_train_rl,
    stage_is_current,
)

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
TVD_THRESHOLDS = (0.0, 0.05, 0.1)
SALT_PEPPER_RATE = 0.01


def with_updates(
    config: ExperimentConfig, out_dir: str | Path | None = None, **sections: dict[str, Any]
) -> ExperimentConfig:
    """Re-validated copy of ``config`` with per-section field updates."""
    tree = config.model_dump()
    for section, values in sections.items():
        tree[section].update(values)
    if out_dir is not None:
        tree["out_dir"] = str(out_dir)
    return ExperimentConfig.model_validate(tree)


def fork(parent: ExperimentConfig, child: ExperimentConfig) -> ExperimentConfig:
    """Copy the parent's data and checkpoints into the child's run directory."""
    source = Path(parent.out_dir)
    target = Path(child.out_dir)
    for name in ("data", "checkpoints"):
        if (source / name).exists():
            shutil.copytree(source / name, target / name, dirs_exist_ok=True)
    return child


def ensure_prepared(config: ExperimentConfig) -> None:
    """Generate data and pretrain the suite unless ``out_dir`` already holds them for this
    config."""
    if not stage_is_current(config, Stage.GEN_DATA):
        gen_data(config)
    if not stage_is_current(config, Stage.PRETRAIN, "f0"):
        run_pretrain(config)


def ensure_policy(config: ExperimentConfig) -> None:
    ensure_prepared(config)
    if not stage_is_current(config, Stage.TRAIN_RL, "policy"):
        run_train_rl(config)


def lambda_sweep(
    config: ExperimentConfig, lams: Sequence[float] = LAMBDA_GRID
) -> list[RunReport]:
    """Train and evaluate one RL policy per lambda; writes ``sweep/lambda_sweep.csv``."""
    ensure_prepared(config)
    base = Path(config.out_dir)
    reports, run_dirs = [], []
    for lam in lams:
        child = fork(
            config,
            with_updates(
                config,
                out_dir=base / f"lambda-{lam:g}",
                rl={"lam": lam},
                eval={"policy_stage": "train-rl"},
            ),
        )
        logger.info(f"Lambda sweep: training at lambda {lam:g}")
        run_train_rl(child)
        reports.append(run_eval(child, Method.PASER))
        run_dirs.append(child.out_dir)
    run_report(run_dirs, base / "sweep")
    return reports


def cheapest_share(config: ExperimentConfig) -> float:
    """Share of test patches a policy trained at lambda 1 leaves on f_0."""
    report = lambda_sweep(config, (1.0,))[0]
    return report.assignment_counts[0] / sum(report.assignment_counts)


@dataclass(frozen=True)
class AssignmentComparison:
    paser: RunReport
    cascade: RunReport


def noise_assignment(config: ExperimentConfig) -> AssignmentComparison:
    """Lambda-0 routing on complementary-noise glyphs against the tuned IDK cascade."""
    mixed = with_updates(
        config,
        out_dir=Path(config.out_dir) / "noise-assignment",
        data={"generator": "glyph-mix"},
        rl={"lam": 0.0},
        eval={"policy_stage": "train-rl"},
    )
    ensure_policy(mixed)
    paser = run_eval(mixed, Method.PASER)
    cascade = run_eval(mixed, Method.IDK)
    logger.info(
        f"Assignment accuracy: PaSeR {paser.assignment_accuracy}, "
        f"IDK {cascade.assignment_accuracy}"
    )
    return AssignmentComparison(paser, cascade)


@dataclass(frozen=True)
class MatchedComparison:
    paser: RunReport
    cascade: RunReport

    @property
    def flop_ratio(self) -> float:
        return self.cascade.flops / self.paser.flops


def iou_matched_comparison(config: ExperimentConfig) -> MatchedComparison:
    """Evaluate PaSeR, then the cheapest cascade that reaches PaSeR's IoU."""
    ensure_policy(config)
    paser = run_eval(config, Method.PASER)
    cascade = run_eval(config, Method.IDK_MATCH)
    result = MatchedComparison(paser, cascade)
    logger.info(
        f"IoU-matched cascade: IoU {cascade.iou:.4f} vs {paser.iou:.4f}, "
        f"{result.flop_ratio:.2f}x the flops"
    )
    return result


@dataclass(frozen=True)
class Adaptability:
    paser_clean: RunReport
    paser_noisy: RunReport
    random_clean: RunReport
    random_noisy: RunReport

    @property
    def routing_shift(self) -> float:
        """Extra share of patches sent to larger models under noise."""
        return self.paser_noisy.fraction_to_larger - self.paser_clean.fraction_to_larger

    @property
    def paser_drop(self) -> float:
        return self.paser_clean.iou - self.paser_noisy.iou

    @property
    def random_drop(self) -> float:
        return self.random_clean.iou - self.random_noisy.iou


def noise_adaptability(
    config: ExperimentConfig, rate: float = SALT_PEPPER_RATE
) -> Adaptability:
    """Swap in noise-exposed larger models and compare clean against salt-and-pepper test data.

    f_0 and the policy stay as trained on clean data.
    """
    ensure_policy(config)
    noisy = with_updates(config, pretrain={"variant": "noisy", "salt_pepper_rate": rate})
    if not stage_is_current(noisy, Stage.PRETRAIN_NOISY, "f1"):
        run_pretrain(noisy)

    base = Path(config.out_dir)
    reports: dict[str, RunReport] = {}
    for condition, test_rate in (("clean", 0.0), ("salt-pepper", rate)):
        child = fork(
            config,
            with_updates(
                config,
                out_dir=base / f"adapt-{condition}",
                eval={"noisy_models": True, "salt_pepper_rate": test_rate},
            ),
        )
        for method in (Method.PASER, Method.RANDOM):
            reports[f"{method}-{condition}"] = run_eval(child, method)
    result = Adaptability(
        reports["paser-clean"],
        reports["paser-salt-pepper"],
        reports["random-clean"],
        reports["random-salt-pepper"],
    )
    logger.info(
        f"Noise shifts {result.routing_shift:+.3f} of patches to larger models; "
        f"IoU drop PaSeR {result.paser_drop:.4f}, random {result.random_drop:.4f}"
    )
    return result


def tvd_ordering(
    config: ExperimentConfig, thresholds: Sequence[float] = TVD_THRESHOLDS
) -> list[RunReport]:
    """Fine-tune a lambda-0 policy under each TVD threshold and evaluate it."""
    ensure_prepared(config)
    base = Path(config.out_dir)
    start = fork(config, with_updates(config, out_dir=base / "tvd-start", rl={"lam": 0.0}))
    ensure_policy(start)
    reports = []
    for threshold in thresholds:
        child = fork(
            start,
            with_updates(
                start,
                out_dir=base / f"tvd-{threshold:g}",
                tvd={"threshold": threshold},
                eval={"policy_stage": "finetune-tvd"},
            ),
        )
        run_finetune_tvd(child)
        reports.append(run_eval(child, Method.PASER))
    return reports


def mc_sensitivity(
    config: ExperimentConfig, low: int = 5, high: int = 20, threshold: float = 0.1
) -> EntropyComparison:
    """Compare f_0's per-patch mean entropies on the test split at two MC sample counts."""
    ensure_prepared(config)
    suite = load_suite(config, (Stage.PRETRAIN,))
    images = stack_images(load_split(config, "test"))
    rng = root_rng(config).split("mc-sensitivity")
    entropies = []
    for samples in (low, high):
        prediction = mc_entropy(suite.small, images, samples, rng.split(samples))
        patches = split_patches(prediction.entropy.values, config.data.patches)
        entropies.append(patches.mean(axis=(-2, -1)).ravel())
    result = entropy_dist_compare(entropies[0], entropies[1], threshold)
    logger.info(
        f"MC entropy S={low} vs S={high}: gap {result.gap:.4f}, p={result.p_value:.3g}, "
        f"equivalent={result.equivalent}"
    )
    return result


def non_increasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=np.float64)) <= tolerance))
