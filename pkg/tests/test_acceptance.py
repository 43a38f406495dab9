"""Desk-scale protocol runs from the shipped configs. Slow: run with ``pytest -m slow``."""

from pathlib import Path

import pytest

from paser.config import ExperimentConfig, load_config
from paser.experiments import (
    LAMBDA_GRID,
    TVD_THRESHOLDS,
    cheapest_share,
    iou_matched_comparison,
    lambda_sweep,
    mc_sensitivity,
    noise_adaptability,
    noise_assignment,
    non_increasing,
    tvd_ordering,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def desk(tmp_path, *overrides: str) -> ExperimentConfig:
    return load_config(CONFIGS / "desk.toml", list(overrides), out_dir=str(tmp_path / "desk"))


def glyph_mix(tmp_path) -> ExperimentConfig:
    return load_config(CONFIGS / "glyph-mix.toml", out_dir=str(tmp_path / "glyph-mix"))


def test_full_cost_weight_keeps_small_model(tmp_path):
    assert cheapest_share(desk(tmp_path)) >= 0.95


def test_lambda_sweep_cost_is_non_increasing(tmp_path):
    reports = lambda_sweep(desk(tmp_path), LAMBDA_GRID)
    costs = [r.mean_cost for r in reports]
    assert non_increasing(costs), costs
    assert (tmp_path / "desk" / "sweep" / "lambda_sweep.csv").exists()


def test_noise_assignment_beats_cascade(tmp_path):
    result = noise_assignment(glyph_mix(tmp_path))
    assert result.paser.assignment_accuracy >= 0.9
    assert result.paser.assignment_accuracy > result.cascade.assignment_accuracy


def test_iou_matched_cascade_costs_more(tmp_path):
    result = iou_matched_comparison(desk(tmp_path))
    assert result.cascade.iou >= result.paser.iou - 1e-3
    assert result.flop_ratio >= 1.5


def test_noise_adaptability(tmp_path):
    result = noise_adaptability(desk(tmp_path))
    assert result.routing_shift >= 0.02
    assert result.paser_drop < result.random_drop


def test_tvd_threshold_ordering(tmp_path):
    reports = tvd_ordering(desk(tmp_path), TVD_THRESHOLDS)
    assert non_increasing([r.iou for r in reports])
    assert non_increasing([-r.iou_per_gigaflop for r in reports])


def test_mc_sample_count_insensitivity(tmp_path):
    assert mc_sensitivity(desk(tmp_path)).equivalent
