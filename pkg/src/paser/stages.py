"""Pipeline stages over a run directory.

Layout under ``out_dir``::

    data/{pt,rl,ft,val,test}.paserds      (+ .meta.jsonl sidecars, config.hash)
    checkpoints/<stage>/{f0,f1,...,policy}.pasr
    events/<stage>.jsonl
    eval/<method>/{report.json,report.csv,flops.jsonl}
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import (
    CascadeConfig,
    idk_infer,
    iou_match_tune,
    random_policy_infer,
    replay_cascade,
    trace_cascade,
    tune_idk,
)
from .checkpoint import load_checkpoint, load_graph, save_graph
from .config import ExperimentConfig, PretrainConfig
from .data import (
    BlurType,
    SegSample,
    SplitSet,
    corrupt_samples,
    gen_blurred_glyphs,
    gen_glyph_mix,
    gen_phase_texture,
    load_idx_glyphs,
    read_dataset,
    split_dataset,
    stack_images,
    stack_labels,
    write_dataset,
)
from .data.splits import SPLIT_NAMES
from .errors import ConfigError, FormatError, MissingStageError
from .metrics import (
    RunReport,
    assignment_confusion,
    dataset_iou,
    iou_per_gigaflop,
    marginal_assignment,
    read_report,
    tvd,
    write_csv,
    write_report,
)
from .models import ModelSuite, PolicyNet, build_suite
from .pipeline import FlopRecord, paser_infer
from .tensorkit import Graph, RngStream
from .training import (
    EventLog,
    TvdResult,
    finetune,
    finetune_tvd,
    pretrain_large,
    pretrain_small_kd,
    train_rl,
)

logger = logging.getLogger(__name__)


class Stage(StrEnum):
    GEN_DATA = "gen-data"
    PRETRAIN = "pretrain"
    PRETRAIN_NOISY = "pretrain-noisy"
    TRAIN_RL = "train-rl"
    FINETUNE = "finetune"
    FINETUNE_TVD = "finetune-tvd"
    EVAL = "eval"


class Method(StrEnum):
    PASER = "paser"
    IDK = "idk"
    IDK_MATCH = "idk-match"
    RANDOM = "random"


@dataclass(frozen=True)
class RunPaths:
    root: Path

    def split(self, name: str) -> Path:
        return self.root / "data" / f"{name}.paserds"

    def checkpoint(self, stage: Stage, name: str) -> Path:
        return self.root / "checkpoints" / stage.value / f"{name}.pasr"

    def data_stamp(self) -> Path:
        return self.root / "data" / "config.hash"

    def events(self, stage: Stage) -> Path:
        return self.root / "events" / f"{stage.value}.jsonl"

    def eval_dir(self, method: Method) -> Path:
        return self.root / "eval" / method.value


def paths_for(config: ExperimentConfig) -> RunPaths:
    return RunPaths(Path(config.out_dir))


def root_rng(config: ExperimentConfig) -> RngStream:
    return RngStream(config.seed)


# pretrain.variant only selects the output stage
_PRETRAIN_FIELDS = {name: True for name in PretrainConfig.model_fields if name != "variant"}
_BASE_SECTIONS: dict[str, Any] = {
    "seed": True,
    "data": True,
    "suite": True,
    "pretrain": _PRETRAIN_FIELDS,
}
STAGE_SECTIONS: dict[Stage, dict[str, Any]] = {
    Stage.GEN_DATA: {"seed": True, "data": True},
    Stage.PRETRAIN: _BASE_SECTIONS,
    Stage.PRETRAIN_NOISY: _BASE_SECTIONS,
    Stage.TRAIN_RL: {**_BASE_SECTIONS, "rl": True},
    Stage.FINETUNE: {**_BASE_SECTIONS, "rl": True, "finetune": True},
    Stage.FINETUNE_TVD: {**_BASE_SECTIONS, "rl": True, "finetune": True, "tvd": True},
}


def stage_hash(config: ExperimentConfig, stage: Stage) -> str:
    """Hash of the config sections that determine ``stage``'s checkpoints."""
    return config.config_hash(STAGE_SECTIONS[stage])


def noise_order() -> list[str]:
    return [kind.value for kind in BlurType]


# Data


def generate_samples(config: ExperimentConfig) -> list[SegSample]:
    data = config.data
    match data.generator:
        case "phase-texture":
            return gen_phase_texture(
                data.num_samples, config.seed, data.class_balance, size=data.image_size
            )
        case "glyphs":
            return gen_blurred_glyphs(data.num_samples, data.noise_type, config.seed)
        case "glyph-mix":
            return gen_glyph_mix(data.num_samples, config.seed)
        case "idx":
            if data.idx_path is None:
                raise ConfigError("data.generator = 'idx' requires data.idx_path")
            return load_idx_glyphs(data.idx_path, data.noise_type, limit=data.num_samples)


def gen_data(config: ExperimentConfig) -> SplitSet:
    """Generate, split and write every dataset split."""
    samples = generate_samples(config)
    splits = split_dataset(samples, config.data.ratios, config.seed)
    paths = paths_for(config)
    for name, part in splits.items():
        write_dataset(paths.split(name), part, config.data.num_classes)
    paths.data_stamp().write_text(stage_hash(config, Stage.GEN_DATA) + "\n")
    logger.info(f"Wrote splits {dict(zip(SPLIT_NAMES, splits.sizes, strict=True))}")
    return splits


def load_split(config: ExperimentConfig, name: str) -> list[SegSample]:
    path = paths_for(config).split(name)
    if not path.exists():
        raise MissingStageError(f"Dataset split {path} does not exist", stage=Stage.GEN_DATA)
    samples, num_classes = read_dataset(path)
    if num_classes != config.data.num_classes:
        raise FormatError(
            f"{path} holds K={num_classes}, config expects K={config.data.num_classes}",
            path=str(path),
        )
    return samples


def noise_subset(samples: list[SegSample], index: int) -> list[SegSample]:
    kind = noise_order()[index]
    return [s for s in samples if s.noise == kind]


def reference_assignment(samples: list[SegSample], patches: int) -> np.ndarray:
    """Per-patch correct model for complementary-noise data: the sample's noise index."""
    order = noise_order()
    return np.array([[order.index(s.noise)] * patches for s in samples], dtype=np.int64)


# Models


def check_mixed(config: ExperimentConfig) -> None:
    """Complementary-noise runs pair model i with noise type i."""
    kinds = len(noise_order())
    if config.data.generator == "glyph-mix" and len(config.suite.depths) != kinds:
        raise ConfigError(
            f"glyph-mix data has {kinds} noise types but the suite has "
            f"{len(config.suite.depths)} models"
        )


def init_suite(config: ExperimentConfig) -> ModelSuite:
    specs = config.suite.specs(in_channels=1, num_classes=config.data.num_classes)
    return build_suite(specs, root_rng(config).split("init"))


def init_policy(config: ExperimentConfig, num_models: int) -> PolicyNet:
    canvas = config.data.canvas
    return PolicyNet(
        config.data.num_classes,
        num_models,
        (canvas, canvas),
        config.data.patches,
        root_rng(config).split("init").split("policy"),
        width=config.suite.policy_width,
    )


def _require(path: Path, stage: Stage) -> Path:
    if not path.exists():
        raise MissingStageError(
            f"Checkpoint {path} is missing; run '{stage.value}' first", stage=stage
        )
    return path


def stage_is_current(config: ExperimentConfig, stage: Stage, name: str = "") -> bool:
    """Whether ``stage``'s output (checkpoint ``name``, or the data splits) exists and was
    written under ``config``'s hash for that stage."""
    paths = paths_for(config)
    expected = stage_hash(config, stage)
    if stage is Stage.GEN_DATA:
        stamp = paths.data_stamp()
        return stamp.exists() and stamp.read_text().strip() == expected
    path = paths.checkpoint(stage, name)
    return path.exists() and load_checkpoint(path).config_hash == expected


def load_suite(
    config: ExperimentConfig, large_stages: Sequence[Stage] = (Stage.PRETRAIN,)
) -> ModelSuite:
    """f_0 from pretraining; each larger model from the first of ``large_stages`` that has it."""
    paths = paths_for(config)
    suite = init_suite(config)
    f0 = _require(paths.checkpoint(Stage.PRETRAIN, "f0"), Stage.PRETRAIN)
    load_graph(f0, suite.small, stage_hash(config, Stage.PRETRAIN))
    for i in range(1, suite.num_models):
        for stage in large_stages:
            path = paths.checkpoint(stage, f"f{i}")
            if path.exists():
                load_graph(path, suite.models[i], stage_hash(config, stage))
                break
        else:
            raise MissingStageError(
                f"No checkpoint for f_{i} in stages {[s.value for s in large_stages]}",
                stage=large_stages[-1],
            )
    return suite


def load_policy(config: ExperimentConfig, suite: ModelSuite, stages: Sequence[Stage]) -> PolicyNet:
    paths = paths_for(config)
    policy = init_policy(config, suite.num_models)
    for stage in stages:
        path = paths.checkpoint(stage, "policy")
        if path.exists():
            logger.info(f"Using policy from {stage.value}")
            load_graph(path, policy, stage_hash(config, stage))
            return policy
    raise MissingStageError(
        f"No policy checkpoint in stages {[s.value for s in stages]}", stage=stages[-1]
    )


def eval_suite(config: ExperimentConfig) -> ModelSuite:
    if config.eval.noisy_models:
        return load_suite(config, (Stage.PRETRAIN_NOISY,))
    return load_suite(config, (Stage.FINETUNE, Stage.PRETRAIN))


def eval_policy_stages(config: ExperimentConfig) -> list[Stage]:
    if config.eval.policy_stage == "auto":
        return [Stage.FINETUNE_TVD, Stage.FINETUNE, Stage.TRAIN_RL]
    return [Stage(config.eval.policy_stage)]


def _save(config: ExperimentConfig, stage: Stage, name: str, graph: Graph) -> None:
    save_graph(paths_for(config).checkpoint(stage, name), graph, stage_hash(config, stage))


# Training stages


def run_pretrain(config: ExperimentConfig) -> ModelSuite:
    """Pretrain f_1..f_m on patches, then distil f_0 from f_m on full images.

    With ``pretrain.variant = "noisy"`` only f_1..f_m are retrained, on clean plus
    salt-and-pepper data, and stored separately. On glyph-mix data model i sees only
    noise type i.
    """
    check_mixed(config)
    paths = paths_for(config)
    pt = load_split(config, "pt")
    suite = init_suite(config)
    rng = root_rng(config).split(Stage.PRETRAIN.value)
    patches = config.data.patches
    noisy = config.pretrain.variant == "noisy"
    stage = Stage.PRETRAIN_NOISY if noisy else Stage.PRETRAIN
    events = EventLog(paths.events(stage))
    mixed = config.data.generator == "glyph-mix"

    for i in range(1, suite.num_models):
        data = noise_subset(pt, i) if mixed else pt
        if noisy:
            rate = config.pretrain.salt_pepper_rate
            data = data + corrupt_samples(data, rate, rng.split("noise").split(i))
        model = suite.models[i]
        pretrain_large(
            model, data, config.pretrain, patches, rng.split(f"f{i}"), events, f"{stage}-f{i}"
        )
        _save(config, stage, f"f{i}", model)
    if noisy:
        return suite

    data = noise_subset(pt, 0) if mixed else pt
    pretrain_small_kd(
        suite.small, suite.models[-1], data, config.pretrain, patches, rng.split("f0"), events
    )
    _save(config, stage, "f0", suite.small)
    return suite


def run_train_rl(config: ExperimentConfig) -> PolicyNet:
    paths = paths_for(config)
    suite = load_suite(config, (Stage.PRETRAIN,))
    policy = init_policy(config, suite.num_models)
    train_rl(
        policy,
        suite,
        load_split(config, "rl"),
        config.rl,
        config.data.patches,
        root_rng(config).split(Stage.TRAIN_RL.value),
        EventLog(paths.events(Stage.TRAIN_RL)),
    )
    _save(config, Stage.TRAIN_RL, "policy", policy)
    return policy


def routed_iou(
    config: ExperimentConfig, suite: ModelSuite, policy: PolicyNet, samples: list[SegSample]
) -> float:
    """Dataset IoU of greedy routing on ``samples`` with a fixed MC stream."""
    rng = root_rng(config).split("routed-iou")
    out = paser_infer(
        suite, policy, stack_images(samples), config.eval_samples, rng, config.data.patches
    )
    return dataset_iou(out.labels, stack_labels(samples), suite.num_classes)


FINETUNE_REGRESSION = 0.01


def run_finetune(config: ExperimentConfig) -> tuple[ModelSuite, PolicyNet]:
    paths = paths_for(config)
    suite = load_suite(config, (Stage.PRETRAIN,))
    policy = load_policy(config, suite, [Stage.TRAIN_RL])
    val = load_split(config, "val")
    before = routed_iou(config, suite, policy, val)
    finetune(
        suite,
        policy,
        load_split(config, "ft"),
        config.finetune,
        config.rl,
        config.data.patches,
        root_rng(config).split(Stage.FINETUNE.value),
        EventLog(paths.events(Stage.FINETUNE)),
    )
    after = routed_iou(config, suite, policy, val)
    logger.info(f"Validation IoU {before:.4f} before fine-tuning, {after:.4f} after")
    if after < before - FINETUNE_REGRESSION:
        logger.warning(
            f"Fine-tuning lowered validation IoU by {before - after:.4f} "
            f"(more than {FINETUNE_REGRESSION})"
        )
    for i in range(1, suite.num_models):
        _save(config, Stage.FINETUNE, f"f{i}", suite.models[i])
    _save(config, Stage.FINETUNE, "policy", policy)
    return suite, policy


def run_finetune_tvd(config: ExperimentConfig) -> TvdResult:
    """Start from the RL policy (trained at lambda 0) and ramp lambda under the TVD budget."""
    paths = paths_for(config)
    suite = load_suite(config, (Stage.FINETUNE, Stage.PRETRAIN))
    policy = load_policy(config, suite, [Stage.TRAIN_RL])
    result = finetune_tvd(
        policy,
        suite,
        load_split(config, "ft"),
        load_split(config, "val"),
        config.tvd,
        config.rl,
        config.data.patches,
        root_rng(config).split(Stage.FINETUNE_TVD.value),
        EventLog(paths.events(Stage.FINETUNE_TVD)),
    )
    logger.info(
        f"TVD fine-tuning finished after {len(result.lams)} epochs "
        f"(final lambda {result.final_lam}, stopped={result.stopped})"
    )
    _save(config, Stage.FINETUNE_TVD, "policy", policy)
    return result


# Evaluation


@dataclass(frozen=True, eq=False)
class MethodOutput:
    labels: np.ndarray
    actions: np.ndarray
    flops: list[FlopRecord]


def write_cascade(config: ExperimentConfig, method: Method, cascade: CascadeConfig) -> None:
    out_dir = paths_for(config).eval_dir(method)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "cascade.json").write_text(cascade.model_dump_json(indent=2) + "\n")


def _batches(n: int, size: int) -> list[slice]:
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


def infer_method(
    config: ExperimentConfig,
    method: Method,
    suite: ModelSuite,
    test: list[SegSample],
) -> MethodOutput:
    samples = config.eval_samples
    patches = config.data.patches
    rng = root_rng(config).split(Stage.EVAL.value).split(method.value)
    images = stack_images(test)
    cascade: CascadeConfig | None = None
    policy: PolicyNet | None = None

    if method is Method.PASER:
        policy = load_policy(config, suite, eval_policy_stages(config))
    elif method is Method.IDK:
        cascade = tune_idk(
            suite, load_split(config, "val"), config.idk, samples, rng.split("tune"), patches
        )
    elif method is Method.IDK_MATCH:
        target = config.idk.target_iou
        if target is None:
            paser_dir = paths_for(config).eval_dir(Method.PASER)
            if not (paser_dir / "report.json").exists():
                raise MissingStageError(
                    "IoU matching needs a PaSeR report or idk.target_iou", stage=Stage.EVAL
                )
            target = read_report(paser_dir).iou
        # Reported outcome is the trace selection the thresholds were bisected on.
        trace = trace_cascade(suite, test, samples, rng.split("tune"), patches)
        cascade = iou_match_tune(
            suite, target, test, config.idk, samples, rng.split("tune"), patches, trace
        ).config
        replayed = replay_cascade(suite, trace, cascade, images, samples, patches)
        write_cascade(config, method, cascade)
        return MethodOutput(replayed.labels, replayed.assignment, replayed.flops)

    labels, actions, flops = [], [], []
    for b, batch in enumerate(_batches(len(test), config.eval.batch_size)):
        stream = rng.split(b)
        if policy is not None:
            out = paser_infer(suite, policy, images[batch], samples, stream, patches, batch.start)
            labels.append(out.labels)
            actions.append(out.actions)
        elif cascade is not None:
            out = idk_infer(suite, cascade, images[batch], samples, stream, patches, batch.start)
            labels.append(out.labels)
            actions.append(out.assignment)
        else:
            out = random_policy_infer(suite, images[batch], samples, stream, patches, batch.start)
            labels.append(out.labels)
            actions.append(out.actions)
        flops.extend(out.flops)
    if cascade is not None:
        write_cascade(config, method, cascade)
    return MethodOutput(np.concatenate(labels), np.concatenate(actions), flops)


def patch_costs(suite: ModelSuite, method: Method, actions: np.ndarray) -> np.ndarray:
    """Normalised cost paid per patch; a cascade patch that stopped at f_k paid f_0..f_k."""
    if method in (Method.IDK, Method.IDK_MATCH):
        return np.cumsum(suite.costs)[actions]
    return suite.costs[actions]


def build_report(
    config: ExperimentConfig,
    method: Method,
    suite: ModelSuite,
    test: list[SegSample],
    output: MethodOutput,
) -> RunReport:
    iou = dataset_iou(output.labels, stack_labels(test), suite.num_classes)
    total = sum(record.total for record in output.flops)
    counts = np.bincount(output.actions.ravel(), minlength=suite.num_models)
    confusion: list[list[int]] | None = None
    accuracy: float | None = None
    distance: float | None = None
    if config.data.generator == "glyph-mix" and config.eval.salt_pepper_rate == 0:
        reference = reference_assignment(test, config.data.patches)
        matrix = assignment_confusion(output.actions, reference, suite.num_models)
        confusion, accuracy = matrix.matrix.tolist(), matrix.accuracy
        distance = tvd(
            marginal_assignment(output.actions, suite.num_models),
            marginal_assignment(reference, suite.num_models),
        )
    return RunReport(
        method=method.value,
        num_images=len(test),
        iou=iou,
        flops=total,
        iou_per_gigaflop=iou_per_gigaflop(iou, total),
        mean_cost=float(patch_costs(suite, method, output.actions).mean()),
        lam=config.rl.lam if method is Method.PASER else None,
        samples=config.eval_samples,
        assignment_counts=counts.tolist(),
        fraction_to_larger=float((output.actions > 0).mean()),
        confusion=confusion,
        assignment_accuracy=accuracy,
        tvd=distance,
    )


def run_eval(config: ExperimentConfig, method: Method | str) -> RunReport:
    """Evaluate ``method`` on the test split and write its report and flop ledger."""
    method = Method(method)
    check_mixed(config)
    test = load_split(config, "test")
    if config.eval.salt_pepper_rate > 0:
        rng = root_rng(config).split("eval-noise")
        test = corrupt_samples(test, config.eval.salt_pepper_rate, rng)
    suite = eval_suite(config)
    output = infer_method(config, method, suite, test)
    report = build_report(config, method, suite, test, output)

    out_dir = paths_for(config).eval_dir(method)
    write_report(report, out_dir)
    with open(out_dir / "flops.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for record in output.flops:
            f.write(record.model_dump_json() + "\n")
    return report


# Reporting

COMPARISON_FIELDS = ("run", "method", "iou", "flops", "iou_per_gigaflop", "mean_cost", "lam")
SWEEP_FIELDS = ("lam", "mean_cost", "iou")


def find_reports(run_dir: Path) -> list[Path]:
    if (run_dir / "report.json").exists():
        return [run_dir]
    found = sorted(p.parent for p in run_dir.glob("eval/*/report.json"))
    if not found:
        raise FormatError(f"No report.json under {run_dir}", path=str(run_dir / "report.json"))
    return found


def run_report(run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[RunReport]:
    """Write ``comparison.csv`` (one row per report) and ``lambda_sweep.csv``."""
    if not run_dirs:
        raise ValueError("Reporting needs at least one run directory")
    rows, sweep, reports = [], [], []
    for run_dir in run_dirs:
        for report_dir in find_reports(Path(run_dir)):
            report = read_report(report_dir)
            reports.append(report)
            rows.append(
                {
                    "run": str(report_dir),
                    "method": report.method,
                    "iou": repr(report.iou),
                    "flops": str(report.flops),
                    "iou_per_gigaflop": repr(report.iou_per_gigaflop),
                    "mean_cost": repr(report.mean_cost),
                    "lam": "" if report.lam is None else repr(report.lam),
                }
            )
            if report.lam is not None:
                sweep.append(report)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "comparison.csv", rows, COMPARISON_FIELDS)
    sweep_rows = [
        {"lam": repr(r.lam), "mean_cost": repr(r.mean_cost), "iou": repr(r.iou)}
        for r in sorted(sweep, key=lambda r: r.lam or 0.0)
    ]
    write_csv(out_dir / "lambda_sweep.csv", sweep_rows, SWEEP_FIELDS)
    logger.info(f"Compared {len(rows)} reports into {out_dir}")
    return reports
