"""Loss engineering, learning-rate schedules, and the two training protocols.

The loss is a weighted, label-smoothed multi-class cross entropy: each sample
contributes minus the smoothed-target log-likelihood scaled by its true
class's weight, mean-reduced over the batch. Class weights come in two modes:
``as_written`` (count / majority count) and ``inverse`` (majority count /
count); the majority class gets weight exactly 1 in both.

Training is single-threaded and deterministic: every random draw derives from
``numpy.random.SeedSequence((seed, epoch, purpose))`` with PCG64, so one
(seed, data) pair always yields the same history.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imaging
from . import tensor_core as tc
from .datasets import Manifest, SampleRecord, SplitAssignment, sampling_plan, source_path_and_turns
from .errors import TrainingDivergedError
from .models import (
    CovidNetConfig,
    ModelGraph,
    build_covid_net,
)

HEAD_PREFIX = "head_fc"


# --- class weights -----------------------------------------------------------

@dataclass
class ClassWeights:
    weights: np.ndarray
    mode: str


def class_weights(counts, mode: str) -> ClassWeights:
    """Per-class loss weights from per-class sample counts.

    ``as_written``: w_i = n_i / n_max (majority 1, minorities < 1).
    ``inverse``:    w_i = n_max / n_i (majority 1, minorities > 1).
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or len(counts) < 2:
        raise ValueError(f"need a vector of >=2 class counts, got shape {counts.shape}")
    if (counts <= 0).any():
        raise ValueError(f"all class counts must be positive, got {counts.tolist()}")
    n_max = counts.max()
    if mode == "as_written":
        w = counts / n_max
    elif mode == "inverse":
        w = n_max / counts
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    return ClassWeights(w.astype(np.float32), mode)


# --- smoothed targets and the loss ------------------------------------------

@dataclass
class SmoothedTarget:
    y_soft: np.ndarray
    alpha: float


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def smooth_targets(labels_one_hot: np.ndarray, alpha: float) -> SmoothedTarget:
    """(1 - alpha) * y + alpha / C, rows staying on the simplex."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0,1), got {alpha}")
    y = np.asarray(labels_one_hot)
    if y.ndim != 2:
        raise ValueError(f"labels must be [N,C] one-hot, got shape {y.shape}")
    is_binary = np.isin(y, (0.0, 1.0)).all()
    if not is_binary or not np.allclose(y.sum(axis=1), 1.0):
        raise ValueError("rows must be one-hot (a single 1 per row)")
    c = y.shape[1]
    return SmoothedTarget(((1.0 - alpha) * y + alpha / c).astype(y.dtype), alpha)


_clamp_events = 0


def clamp_count() -> int:
    return _clamp_events


def reset_clamp_count() -> None:
    global _clamp_events
    _clamp_events = 0


def weighted_smoothed_ce(
    probabilities: np.ndarray,
    targets: SmoothedTarget,
    weights: ClassWeights | None = None,
) -> tuple[float, np.ndarray]:
    """Loss and its gradient through softmax.

    L = -(1/N) * sum_n w_{true(n)} * sum_c y_soft[n,c] * log(p[n,c]) and
    dL/dlogits[n] = (w_{true(n)}/N) * (p[n] - y_soft[n]). Probabilities at or
    below zero where the target is positive are clamped to 1e-12 and counted
    (see :func:`clamp_count`).
    """
    global _clamp_events
    p = np.asarray(probabilities)
    y = targets.y_soft
    if p.shape != y.shape:
        raise ValueError(f"probabilities shape {p.shape} != targets shape {y.shape}")
    n = p.shape[0]
    true_class = np.argmax(y, axis=1)
    if weights is not None:
        w = weights.weights.astype(p.dtype)[true_class]
    else:
        w = np.ones(n, dtype=p.dtype)
    bad = (p <= 0) & (y > 0)
    if bad.any():
        _clamp_events += int(bad.sum())
    p_safe = np.maximum(p, 1e-12)
    loss = float(-(w * (y * np.log(p_safe)).sum(axis=1)).sum() / n)
    dlogits = (w[:, None] / n) * (p - y)
    return loss, dlogits.astype(p.dtype)


# --- learning-rate schedules -------------------------------------------------

@dataclass
class StepDecay:
    factor: float = 0.5
    every_n_epochs: int = 5


@dataclass
class Plateau:
    factor: float = 0.5
    patience: int = 3


class SchedulerState:
    """Tracks the learning rate across epochs for either schedule kind."""

    def __init__(self, schedule: StepDecay | Plateau, initial_lr: float):
        self.schedule = schedule
        self.initial_lr = initial_lr
        self.lr = initial_lr
        self.best_loss = float("inf")
        self.stall = 0

    def lr_for_epoch(self, epoch: int) -> float:
        if isinstance(self.schedule, StepDecay):
            s = self.schedule
            return self.initial_lr * s.factor ** (epoch // s.every_n_epochs)
        return self.lr

    def observe(self, epoch: int, validation_loss: float) -> float:
        if isinstance(self.schedule, StepDecay):
            self.lr = self.lr_for_epoch(epoch)
            return self.lr
        if validation_loss < self.best_loss:
            self.best_loss = validation_loss
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.schedule.patience:
                self.lr *= self.schedule.factor
                self.stall = 0
        return self.lr


def scheduler_next(state: SchedulerState, epoch: int, validation_loss: float) -> float:
    return state.observe(epoch, validation_loss)


# --- train configuration -----------------------------------------------------

@dataclass
class TrainConfig:
    initial_lr: float
    schedule: StepDecay | Plateau
    batch_size: int = 32
    steps_per_epoch: int | None = None
    max_epochs: int = 100
    early_stop_patience: int = 0  # 0 disables early stopping
    label_smoothing_alpha: float = 0.0
    weights_mode: str | None = None
    oversample: str = "natural"  # "natural" | "equalized"


def filter_train_config() -> TrainConfig:
    """Preset for the validity filter: batch 128, 5 steps per epoch, step decay."""
    return TrainConfig(
        initial_lr=1e-3,
        schedule=StepDecay(0.5, 5),
        batch_size=128,
        steps_per_epoch=5,
        max_epochs=100,
        early_stop_patience=15,
    )


def classifier_train_config() -> TrainConfig:
    """Preset for the classifier: plateau halving, smoothing 0.1, inverse weights,
    equalized oversampling."""
    return TrainConfig(
        initial_lr=1e-5,
        schedule=Plateau(0.5, 3),
        batch_size=16,
        steps_per_epoch=None,
        max_epochs=100,
        early_stop_patience=5,
        label_smoothing_alpha=0.1,
        weights_mode="inverse",
        oversample="equalized",
    )


# --- training data sources ---------------------------------------------------

class ArrayDataset:
    """In-memory samples: tensors [N,C,H,W] float32 with integer labels."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.asarray(x, dtype=np.float32)
        self.y = np.asarray(y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} samples but {len(self.y)} labels")

    def __len__(self):
        return len(self.x)

    def labels(self) -> list[int]:
        return self.y.tolist()

    def load(self, i: int, rng: np.random.Generator | None = None):
        return self.x[i], int(self.y[i])


class ManifestDataset:
    """Loads, preprocesses, and (for training) augments manifest records on demand.

    Derived rotated-negative records are materialized here by applying the
    quarter turn encoded in the path fragment.
    """

    def __init__(
        self,
        records: list[SampleRecord],
        class_names: list[str],
        input_size: int,
        normalization: str,
        grayscale: bool = False,
        augment_spec: imaging.AugmentSpec | None = None,
        root: str | Path | None = None,
    ):
        self.records = records
        self.class_names = list(class_names)
        self.input_size = input_size
        self.normalization = normalization
        self.grayscale = grayscale
        self.augment_spec = augment_spec
        self.root = Path(root) if root is not None else None

    def __len__(self):
        return len(self.records)

    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def load(self, i: int, rng: np.random.Generator | None = None):
        rec = self.records[i]
        rel_path, turns = source_path_and_turns(rec.image_path)
        path = self.root / rel_path if self.root else Path(rel_path)
        img = imaging.decode_image(path.read_bytes())
        if turns:
            img = imaging.rotate_quarter(img, turns)
        if self.grayscale:
            img = imaging.to_grayscale(img)
        img = imaging.resize_bilinear(img, self.input_size, self.input_size)
        if self.augment_spec is not None and rng is not None:
            img = imaging.augment(img, self.augment_spec, rng)
        x = imaging.normalize(img, self.normalization)
        return x, self.class_names.index(rec.label)


# --- history -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                row = {
                    "epoch": rec.epoch,
                    "train_loss": rec.train_loss,
                    "val_loss": rec.val_loss,
                    "val_accuracy": rec.val_accuracy,
                    "lr": rec.lr,
                    "best": rec.epoch == self.best_epoch,
                }
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "TrainHistory":
        history = cls()
        for line in Path(path).read_text().splitlines():
            row = json.loads(line)
            history.epochs.append(
                EpochRecord(row["epoch"], row["train_loss"], row["val_loss"],
                            row["val_accuracy"], row["lr"])
            )
            if row.get("best"):
                history.best_epoch = row["epoch"]
        return history


# --- evaluation pass used inside the loop ------------------------------------

def _dataset_batches(dataset, indices, batch_size, rng=None):
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        pairs = [dataset.load(int(i), rng) for i in chunk]
        xs = np.stack([p[0] for p in pairs]).astype(np.float32)
        ys = np.array([p[1] for p in pairs], dtype=np.int64)
        yield xs, ys


def evaluate_loss(
    model: ModelGraph,
    dataset,
    batch_size: int,
    alpha: float,
    weights: ClassWeights | None,
) -> tuple[float, float]:
    """(mean loss, accuracy) over a dataset without augmentation."""
    total_loss = 0.0
    correct = 0
    n = len(dataset)
    if n == 0:
        raise ValueError("evaluate_loss needs at least one sample")
    num_classes = len(model.class_names)
    for xs, ys in _dataset_batches(dataset, np.arange(n), batch_size):
        out = model.forward(xs)
        targets = smooth_targets(one_hot(ys, num_classes), alpha)
        loss, _ = weighted_smoothed_ce(out.probabilities, targets, weights)
        total_loss += loss * len(ys)
        correct += int((out.probabilities.argmax(axis=1) == ys).sum())
    return total_loss / n, correct / n


def _diagnostics(model: ModelGraph, logits: np.ndarray) -> str:
    worst = max(
        ((name, float(np.abs(p.value).max())) for name, p in model.parameters().items()),
        key=lambda t: t[1],
    )
    return f"max |logit| = {np.abs(logits).max():.3g}, largest parameter {worst[0]} = {worst[1]:.3g}"


# --- the train loop -----------------------------------------------------------

def train(
    model: ModelGraph,
    train_data,
    val_data,
    config: TrainConfig,
    seed: int = 0,
) -> tuple[ModelGraph, TrainHistory]:
    """Optimize ``model``, returning it holding its best-validation-loss weights.

    Runs at most ``max_epochs`` epochs, stopping early once the validation
    loss has not improved for ``early_stop_patience`` consecutive epochs
    (0 disables). The returned history marks the restored best epoch.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError(
            f"train needs non-empty splits, got {len(train_data)} train and "
            f"{len(val_data)} validation samples (too little data for the "
            "split ratios, or an unlucky split seed)"
        )
    num_classes = len(model.class_names)
    weights = None
    if config.weights_mode is not None:
        labels = train_data.labels()
        if labels and isinstance(labels[0], str):
            ordered: list = list(model.class_names)
        else:
            ordered = list(range(num_classes))
        counts = [labels.count(c) for c in ordered]
        weights = class_weights(counts, config.weights_mode)

    sched = SchedulerState(config.schedule, config.initial_lr)
    history = TrainHistory()
    best_val = float("inf")
    best_state: dict[str, np.ndarray] = {}
    stall = 0

    for epoch in range(config.max_epochs):
        lr = sched.lr_for_epoch(epoch)
        hyper = tc.AdamHyper(lr=lr)
        plan_rng_seed = np.random.SeedSequence((seed, epoch, 0))
        aug_rng = np.random.default_rng(np.random.SeedSequence((seed, epoch, 1)))
        plan = sampling_plan(
            train_data.labels(),
            config.oversample,
            int(plan_rng_seed.generate_state(1)[0]),
        )
        indices = plan.indices
        if config.steps_per_epoch is not None:
            indices = indices[: config.steps_per_epoch * config.batch_size]

        batch_losses = []
        for batch_idx, (xs, ys) in enumerate(
            _dataset_batches(train_data, indices, config.batch_size, aug_rng)
        ):
            ctx: dict = {}
            out = model.forward(xs, ctx)
            targets = smooth_targets(one_hot(ys, num_classes), config.label_smoothing_alpha)
            loss, dlogits = weighted_smoothed_ce(out.probabilities, targets, weights)
            if not np.isfinite(loss):
                raise TrainingDivergedError(batch_idx, _diagnostics(model, out.logits))
            model.zero_grad()
            model.backward(dlogits, ctx)
            for p in model.parameters().values():
                tc.adam_step(p, hyper)
            batch_losses.append(loss)

        val_loss, val_acc = evaluate_loss(
            model, val_data, config.batch_size, config.label_smoothing_alpha, weights
        )
        history.epochs.append(
            EpochRecord(epoch, float(np.mean(batch_losses)), val_loss, val_acc, lr)
        )
        if val_loss < best_val:
            best_val = val_loss
            best_state = {n: p.value.copy() for n, p in model.parameters().items()}
            history.best_epoch = epoch
            stall = 0
        else:
            stall += 1
        sched.observe(epoch, val_loss)
        if config.early_stop_patience > 0 and stall >= config.early_stop_patience:
            break

    if best_state:
        model.load_state(best_state)
    return model, history


# --- two-stage classifier protocol -------------------------------------------

@dataclass
class TwoStageData:
    """Stage 1 sees the two merged classes; stage 2 sees all three."""

    stage1_train: object
    stage1_val: object
    stage2_train: object
    stage2_val: object


def transfer_backbone(src: ModelGraph, dst: ModelGraph) -> None:
    """Copy every non-head parameter of ``src`` into ``dst`` bitwise."""
    dst_params = dst.parameters()
    for name, p in src.parameters().items():
        if name.startswith(HEAD_PREFIX):
            continue
        if name not in dst_params:
            raise ValueError(f"destination model is missing parameter {name!r}")
        if dst_params[name].value.shape != p.value.shape:
            raise ValueError(
                f"parameter {name!r}: source shape {p.value.shape} "
                f"!= destination {dst_params[name].value.shape}"
            )
        dst_params[name].value[...] = p.value


def freeze_backbone(model: ModelGraph, frozen: bool = True) -> None:
    for name, p in model.parameters().items():
        if not name.startswith(HEAD_PREFIX):
            p.frozen = frozen


def train_two_stage(
    covid_config: CovidNetConfig,
    data: TwoStageData,
    stage1_cfg: TrainConfig,
    stage2_cfg: TrainConfig,
    seed: int = 0,
    skip_stage1: bool = False,
    freeze_backbone_stage2: bool = False,
) -> tuple[ModelGraph, tuple[TrainHistory | None, TrainHistory]]:
    """Train the 2-class model, then fine-tune a 3-class model from its backbone.

    The stage-2 model's head is freshly initialized; all other parameters are
    copied bitwise from the stage-1 result. ``skip_stage1`` trains the 3-class
    model from scratch (for ablation comparisons).
    """
    history1 = None
    stage1_model = None
    if not skip_stage1:
        stage1_model = build_covid_net(replace(covid_config, num_classes=2), seed=seed)
        _, history1 = train(stage1_model, data.stage1_train, data.stage1_val, stage1_cfg, seed)

    stage2_model = build_covid_net(replace(covid_config, num_classes=3), seed=seed + 1)
    if stage1_model is not None:
        transfer_backbone(stage1_model, stage2_model)
    if freeze_backbone_stage2:
        freeze_backbone(stage2_model)
    _, history2 = train(stage2_model, data.stage2_train, data.stage2_val, stage2_cfg, seed + 1)
    return stage2_model, (history1, history2)


# --- manifest-level assembly used by the CLI ---------------------------------

def manifest_datasets(
    manifest: Manifest,
    assignment: SplitAssignment,
    class_names: list[str],
    input_size: int,
    normalization: str,
    grayscale: bool,
    augment_spec: imaging.AugmentSpec | None,
    root: str | Path | None,
) -> dict[str, ManifestDataset]:
    out = {}
    for which in ("train", "validation", "test"):
        records = assignment.select(manifest, which)
        out[which] = ManifestDataset(
            records,
            class_names,
            input_size,
            normalization,
            grayscale=grayscale,
            augment_spec=augment_spec if which == "train" else None,
            root=root,
        )
    return out
