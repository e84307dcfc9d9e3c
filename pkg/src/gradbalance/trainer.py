"""Two-stage training: warm-up, gradient-similarity grouping, group-level
min-norm updates.

Stage 1 trains with plain cross entropy and uniform batches. The warmed-up
parameters are frozen to compute per-class mean gradients, classes are
grouped by the configured strategy, and stage 2 updates parameters along the
min-norm combination of group gradients (each group gradient the unweighted
mean of its present classes' mean gradients). Ablation switches degrade the
method gracefully: grouping off makes every class its own objective, the
min-norm solver off merges group gradients by plain averaging, and both off
reduces to the plain-CE baseline trajectory exactly.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_ops
from . import moo
from .datagen import Dataset
from .errors import TrainingDivergedError, ValidationError
from .grouping import (
    Partition,
    baseline_partitions,
    class_mean_gradients,
    similarity_matrix,
    spectral_partition,
)
from .model import ModelConfig
from .sampler import BatchSampler, GacConfig

GROUPING_STRATEGIES = ("gbg", "random", "instance-count")
BASELINES = ("ce", "resample", "reweight")

# deterministic seed offsets for the independent RNG streams of a run
_STAGE1_SEED_OFFSET = 1
_STAGE2_SEED_OFFSET = 2


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    epochs_stage1: int
    epochs_stage2: int
    learning_rate: float = 0.05
    batch_size: int = 64
    num_groups: int = 4
    sampler_mode: str = "gac"
    gac: GacConfig = field(default_factory=GacConfig)
    grouping_strategy: str = "gbg"
    grad_scope: str = "all"
    seed: int = 0
    eval_every: int = 0
    moo_enabled: bool = True
    grouping_enabled: bool = True
    moo_normalize: str = "l2"
    momentum: float = 0.0
    critical_tol: float = 1e-10
    divergence_threshold: float = 1e6
    many_threshold: int = 100
    few_threshold: int = 20

    def __post_init__(self):
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.num_groups < 1:
            raise ValidationError("num_groups must be >= 1")
        if self.sampler_mode not in ("uniform", "class-balanced", "gac"):
            raise ValidationError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.grouping_strategy not in GROUPING_STRATEGIES:
            raise ValidationError(f"unknown grouping_strategy {self.grouping_strategy!r}")
        if self.grad_scope not in ("all", "last-layer"):
            raise ValidationError(f"grad_scope must be 'all' or 'last-layer'")
        if self.moo_normalize not in ("l2", "none"):
            raise ValidationError("moo_normalize must be 'l2' or 'none'")
        if not (0.0 <= self.momentum < 1.0):
            raise ValidationError("momentum must be in [0, 1)")
        if self.eval_every < 0:
            raise ValidationError("eval_every must be >= 0")
        if self.few_threshold > self.many_threshold:
            raise ValidationError("few_threshold cannot exceed many_threshold")


def split_epochs(total: int, warmup_fraction: float = 0.3) -> tuple[int, int]:
    """Default stage split: 30% warm-up, remainder for grouped updates."""
    s1 = int(round(warmup_fraction * total))
    return s1, total - s1


@dataclass(frozen=True)
class EvalMetrics:
    """Accuracy on the balanced test split, overall and by class-count subset."""

    overall_accuracy: float
    balanced_accuracy: float
    per_class_accuracy: np.ndarray
    many_accuracy: float
    medium_accuracy: float
    few_accuracy: float


@dataclass(frozen=True)
class TrainRecord:
    """One optimization step: group losses, simplex weights, diagnostics.

    Arrays are indexed by group id (class id for ``per_class_sim``); entries
    for groups or classes absent from the batch are NaN. ``dstar_sq`` is the
    squared norm of the min-norm solver's combined vector (computed on unit
    gradients when ``moo_normalize='l2'``), the quantity the Pareto-critical
    skip is gated on.
    """

    iteration: int
    epoch: int
    group_losses: np.ndarray
    alphas: np.ndarray
    dstar_sq: float
    pareto_critical: bool
    per_class_sim: np.ndarray
    completed_groups: tuple[int, ...] = ()
    eval_metrics: EvalMetrics | None = None


def evaluate(params: np.ndarray, config: TrainConfig, dataset: Dataset) -> EvalMetrics:
    """Per-class, balanced, and Many/Medium/Few accuracies on the test split."""
    x, y = dataset.test_features, dataset.test_labels
    if x.shape[0] == 0:
        raise ValidationError("dataset has no test split")
    pred = model_ops.predict(params, config.model, x)
    k = dataset.num_classes
    per_class = np.full(k, np.nan)
    for c in range(k):
        mask = y == c
        if mask.any():
            per_class[c] = float((pred[mask] == c).mean())
    counts = dataset.class_counts
    many = counts > config.many_threshold
    few = counts < config.few_threshold
    medium = ~many & ~few

    def subset_mean(mask):
        vals = per_class[mask & ~np.isnan(per_class)]
        return float(vals.mean()) if vals.size else float("nan")

    return EvalMetrics(
        overall_accuracy=float((pred == y).mean()),
        balanced_accuracy=float(np.nanmean(per_class)),
        per_class_accuracy=per_class,
        many_accuracy=subset_mean(many),
        medium_accuracy=subset_mean(medium),
        few_accuracy=subset_mean(few),
    )


def tail_accuracy(metrics: EvalMetrics, class_counts: np.ndarray, n_tail: int = 3) -> float:
    """Mean accuracy of the n_tail smallest classes."""
    order = np.argsort(np.asarray(class_counts), kind="stable")
    return float(np.nanmean(metrics.per_class_accuracy[order[:n_tail]]))


def _check_finite_loss(loss: float, threshold: float, params_before: np.ndarray):
    if not math.isfinite(loss) or loss > threshold:
        raise TrainingDivergedError(
            f"training diverged: loss={loss!r} exceeds {threshold:g}",
            last_params=params_before,
        )


def stage1_warmup(config: TrainConfig, dataset: Dataset, params: np.ndarray | None = None) -> np.ndarray:
    """Plain CE warm-up with uniform batches; returns the trained parameters."""
    if params is None:
        params = model_ops.init_params(config.model)
    params = np.asarray(params, dtype=np.float64).copy()
    if config.epochs_stage1 == 0:
        return params
    sampler = BatchSampler(
        dataset, config.batch_size, "uniform", config.seed + _STAGE1_SEED_OFFSET
    )
    velocity = np.zeros_like(params)
    x, y = dataset.train_features, dataset.train_labels
    for _ in range(config.epochs_stage1):
        for _ in range(sampler.batches_per_epoch):
            batch = sampler.next_batch()
            last_good = params.copy()
            loss, grad = model_ops.loss_and_grad(
                params, config.model, x[batch.indices], y[batch.indices]
            )
            _check_finite_loss(loss, config.divergence_threshold, last_good)
            velocity = config.momentum * velocity + grad
            params -= config.learning_rate * velocity
    return params


def run_grouping(params: np.ndarray, config: TrainConfig, dataset: Dataset) -> Partition:
    """Partition classes per the configured strategy, using frozen parameters."""
    partition, _ = run_grouping_with_similarity(params, config, dataset)
    return partition


def run_grouping_with_similarity(
    params: np.ndarray, config: TrainConfig, dataset: Dataset
) -> tuple[Partition, np.ndarray | None]:
    """Like run_grouping, but also returns the similarity matrix for gbg runs."""
    k = dataset.num_classes
    g = config.num_groups
    if g > k:
        raise ValidationError(f"num_groups={g} exceeds number of classes {k}")
    if g == 1:
        return Partition(num_groups=1, assignment=np.zeros(k, dtype=np.int64)), None
    if config.grouping_strategy == "gbg":
        grads = class_mean_gradients(params, config.model, dataset)
        if config.grad_scope == "last-layer":
            sl = model_ops.last_layer_slice(config.model)
            sim = similarity_matrix([cg.grad[sl] for cg in grads])
        else:
            sim = similarity_matrix(grads)
        return spectral_partition(sim, g, seed=config.seed), sim
    return (
        baseline_partitions(dataset.class_counts, g, config.grouping_strategy, config.seed),
        None,
    )


def _group_stats(class_grads, partition: Partition):
    """Per-group mean loss/gradient over the classes present in the batch."""
    by_class = {cg.class_id: cg for cg in class_grads}
    present_groups, grads, losses = [], [], []
    group_losses = np.full(partition.num_groups, np.nan)
    for gid, classes in enumerate(partition.groups()):
        members = [by_class[c] for c in classes.tolist() if c in by_class]
        if not members:
            continue
        present_groups.append(gid)
        grads.append(np.mean([cg.grad for cg in members], axis=0))
        loss = float(np.mean([cg.loss for cg in members]))
        losses.append(loss)
        group_losses[gid] = loss
    return present_groups, grads, losses, group_losses


def _class_similarities(class_grads, num_classes: int) -> np.ndarray:
    """Cosine of each present class's gradient against the batch gradient."""
    sims = np.full(num_classes, np.nan)
    total = sum(cg.sample_count for cg in class_grads)
    batch_grad = sum((cg.sample_count / total) * cg.grad for cg in class_grads)
    bnorm = float(np.linalg.norm(batch_grad))
    for cg in class_grads:
        cnorm = float(np.linalg.norm(cg.grad))
        if bnorm < 1e-12 or cnorm < 1e-12:
            sims[cg.class_id] = 0.0
        else:
            sims[cg.class_id] = float(cg.grad @ batch_grad) / (cnorm * bnorm)
    return sims


def moo_step(
    params: np.ndarray,
    config: TrainConfig,
    partition: Partition,
    features: np.ndarray,
    labels: np.ndarray,
    iteration: int = 0,
    epoch: int = 0,
    velocity: np.ndarray | None = None,
) -> tuple[np.ndarray, TrainRecord]:
    """One grouped update on a batch; returns new parameters and the record.

    Group losses/gradients are unweighted means over the group's classes
    present in the batch. With the min-norm solver enabled the update moves
    along -d*; disabled, group gradients are merged by plain averaging.
    Pareto-critical steps (||d*||^2 <= critical_tol) leave parameters
    untouched and are flagged on the record.
    """
    if len(labels) == 0:
        raise ValidationError("batch is empty")
    class_grads = model_ops.per_class_gradients(params, config.model, features, labels)
    present, grads, losses, group_losses = _group_stats(class_grads, partition)
    if not present:
        raise ValidationError("batch contains no grouped classes")
    for gid, loss in zip(present, losses):
        _check_finite_loss(loss, config.divergence_threshold, params)

    if not config.moo_enabled:
        present_alphas = np.full(len(grads), 1.0 / len(grads))
        direction = present_alphas @ np.vstack(grads)
        sq = float(direction @ direction)
    elif len(grads) == 1:
        present_alphas = np.array([1.0])
        direction = grads[0]
        sq = float(direction @ direction)
    elif config.moo_normalize == "l2":
        # solve on unit gradients so a nearly-converged group cannot pin the
        # weights to its vanishing gradient, then restore the mean raw scale;
        # a positive rescale keeps -d a common descent direction for all groups
        norms = np.array([float(np.linalg.norm(g)) for g in grads])
        unit = [g / max(n, 1e-12) for g, n in zip(grads, norms)]
        combined = moo.min_norm_point(unit, critical_tol=config.critical_tol)
        present_alphas = combined.alphas
        direction = float(norms.mean()) * combined.direction
        sq = combined.squared_norm
    else:
        combined = moo.min_norm_point(grads, critical_tol=config.critical_tol)
        present_alphas = combined.alphas
        direction = combined.direction
        sq = combined.squared_norm

    alphas = np.full(partition.num_groups, np.nan)
    alphas[present] = present_alphas
    critical = sq <= config.critical_tol

    new_params = params
    if not critical:
        if velocity is not None:
            velocity *= config.momentum
            velocity += direction
            step = velocity
        else:
            step = direction
        new_params = params - config.learning_rate * step

    record = TrainRecord(
        iteration=iteration,
        epoch=epoch,
        group_losses=group_losses,
        alphas=alphas,
        dstar_sq=sq,
        pareto_critical=critical,
        per_class_sim=_class_similarities(class_grads, config.model.num_classes),
    )
    return new_params, record


def _stage2_partition(config: TrainConfig, params, dataset) -> Partition:
    k = dataset.num_classes
    if config.grouping_enabled:
        return run_grouping(params, config, dataset)
    if config.moo_enabled:
        return Partition(num_groups=k, assignment=np.arange(k))
    return Partition(num_groups=1, assignment=np.zeros(k, dtype=np.int64))


def _effective_sampler_mode(config: TrainConfig) -> str:
    # group-aware completion needs groups; without grouping fall back to uniform
    if config.sampler_mode == "gac" and not config.grouping_enabled:
        return "uniform"
    return config.sampler_mode


def train(
    config: TrainConfig, dataset: Dataset
) -> tuple[np.ndarray, list[TrainRecord], Partition]:
    """Full pipeline: warm-up, grouping, grouped stage-2 updates.

    With both ablation switches off the stage-2 loop takes plain CE steps,
    reproducing the ce baseline trajectory exactly. Evaluation runs on the
    balanced test split every ``eval_every`` stage-2 epochs (and always after
    the last), attached to that epoch's final record.
    """
    params = stage1_warmup(config, dataset)
    partition = _stage2_partition(config, params, dataset)
    plain_ce = not config.grouping_enabled and not config.moo_enabled
    mode = _effective_sampler_mode(config)
    sampler = BatchSampler(
        dataset,
        config.batch_size,
        mode,
        config.seed + _STAGE2_SEED_OFFSET,
        partition=partition,
        gac=config.gac,
    )
    x, y = dataset.train_features, dataset.train_labels
    records: list[TrainRecord] = []
    velocity = np.zeros(model_ops.num_params(config.model))
    iteration = 0
    for e in range(config.epochs_stage2):
        epoch = config.epochs_stage1 + e
        for _ in range(sampler.batches_per_epoch):
            batch = sampler.next_batch()
            if plain_ce:
                params, record, velocity = _plain_step(
                    params, config, x[batch.indices], y[batch.indices],
                    velocity, iteration, epoch,
                )
            else:
                params, record = moo_step(
                    params,
                    config,
                    partition,
                    x[batch.indices],
                    y[batch.indices],
                    iteration=iteration,
                    epoch=epoch,
                    velocity=velocity if config.momentum > 0 else None,
                )
                record = replace(record, completed_groups=batch.completed_groups)
            records.append(record)
            iteration += 1
        is_last = e == config.epochs_stage2 - 1
        if is_last or (config.eval_every > 0 and (e + 1) % config.eval_every == 0):
            metrics = evaluate(params, config, dataset)
            records[-1] = replace(records[-1], eval_metrics=metrics)
    return params, records, partition


def _plain_step(
    params, config, bx, by, velocity, iteration, epoch, sample_weights=None
) -> tuple[np.ndarray, TrainRecord, np.ndarray]:
    """One single-objective CE step plus its record, diagnostics at pre-update params."""
    class_grads = model_ops.per_class_gradients(params, config.model, bx, by)
    n = len(by)
    if sample_weights is None:
        # exact count-weighted recomposition of the batch loss and gradient
        loss = sum(cg.loss * cg.sample_count for cg in class_grads) / n
        grad = sum(cg.grad * cg.sample_count for cg in class_grads) / n
    else:
        loss, grad = model_ops.loss_and_grad(
            params, config.model, bx, by, sample_weights=sample_weights
        )
    _check_finite_loss(loss, config.divergence_threshold, params)
    velocity = config.momentum * velocity + grad
    new_params = params - config.learning_rate * velocity
    record = TrainRecord(
        iteration=iteration,
        epoch=epoch,
        group_losses=np.array([loss]),
        alphas=np.array([1.0]),
        dstar_sq=float(grad @ grad),
        pareto_critical=False,
        per_class_sim=_class_similarities(class_grads, config.model.num_classes),
    )
    return new_params, record, velocity


def train_baseline(
    config: TrainConfig, dataset: Dataset, kind: str = "ce"
) -> tuple[np.ndarray, list[TrainRecord]]:
    """Single-objective reference trainers sharing the two-phase structure.

    ``ce``: uniform batches throughout. ``resample``: uniform warm-up, then
    class-balanced batches. ``reweight``: uniform batches with inverse-
    frequency sample weights after warm-up. Seeded identically to train(),
    so ce matches the both-switches-off trajectory bit for bit.
    """
    if kind not in BASELINES:
        raise ValidationError(f"unknown baseline {kind!r}")
    params = stage1_warmup(config, dataset)
    mode = "class-balanced" if kind == "resample" else "uniform"
    sampler = BatchSampler(
        dataset, config.batch_size, mode, config.seed + _STAGE2_SEED_OFFSET
    )
    x, y = dataset.train_features, dataset.train_labels
    weights = None
    if kind == "reweight":
        counts = np.maximum(dataset.class_counts, 1)
        class_w = dataset.num_train / (dataset.num_classes * counts)
        weights = class_w  # indexed by label at batch time
    velocity = np.zeros_like(params)
    records: list[TrainRecord] = []
    iteration = 0
    for e in range(config.epochs_stage2):
        epoch = config.epochs_stage1 + e
        for _ in range(sampler.batches_per_epoch):
            batch = sampler.next_batch()
            bx, by = x[batch.indices], y[batch.indices]
            sw = weights[by] if weights is not None else None
            params, record, velocity = _plain_step(
                params, config, bx, by, velocity, iteration, epoch, sample_weights=sw
            )
            records.append(record)
            iteration += 1
    return params, records


@dataclass(frozen=True)
class ImbalanceRow:
    """Per-epoch, per-class gradient diagnostics from a baseline run."""

    epoch: int
    class_id: int
    mean_similarity: float
    norm_magnitude: float


def diagnose_gradient_imbalance(
    config: TrainConfig, dataset: Dataset, sampler_mode: str = "uniform"
) -> list[ImbalanceRow]:
    """Track per-class gradient alignment under a single-objective trainer.

    Trains plain CE with the given sampling for the full epoch budget. For
    every epoch and class: the mean over batches of cos(class gradient,
    batch gradient), and the mean class-gradient magnitude normalized by the
    epoch's largest class magnitude. Classes absent all epoch give NaN.
    """
    if sampler_mode not in ("uniform", "class-balanced"):
        raise ValidationError("diagnostic sampler must be uniform or class-balanced")
    params = model_ops.init_params(config.model)
    sampler = BatchSampler(
        dataset, config.batch_size, sampler_mode, config.seed + _STAGE1_SEED_OFFSET
    )
    x, y = dataset.train_features, dataset.train_labels
    k = dataset.num_classes
    epochs = config.epochs_stage1 + config.epochs_stage2
    velocity = np.zeros_like(params)
    rows: list[ImbalanceRow] = []
    for epoch in range(epochs):
        sim_sum = np.zeros(k)
        mag_sum = np.zeros(k)
        seen = np.zeros(k, dtype=np.int64)
        for _ in range(sampler.batches_per_epoch):
            batch = sampler.next_batch()
            bx, by = x[batch.indices], y[batch.indices]
            class_grads = model_ops.per_class_gradients(params, config.model, bx, by)
            sims = _class_similarities(class_grads, k)
            for cg in class_grads:
                sim_sum[cg.class_id] += sims[cg.class_id]
                mag_sum[cg.class_id] += float(np.linalg.norm(cg.grad))
                seen[cg.class_id] += 1
            loss, grad = model_ops.loss_and_grad(params, config.model, bx, by)
            _check_finite_loss(loss, config.divergence_threshold, params)
            velocity = config.momentum * velocity + grad
            params = params - config.learning_rate * velocity
        with np.errstate(invalid="ignore"):
            mean_sim = np.where(seen > 0, sim_sum / np.maximum(seen, 1), np.nan)
            mean_mag = np.where(seen > 0, mag_sum / np.maximum(seen, 1), np.nan)
        top = np.nanmax(mean_mag) if np.any(seen > 0) else np.nan
        for c in range(k):
            rows.append(
                ImbalanceRow(
                    epoch=epoch,
                    class_id=c,
                    mean_similarity=float(mean_sim[c]),
                    norm_magnitude=float(mean_mag[c] / top) if top and not np.isnan(top) else float("nan"),
                )
            )
    return rows
