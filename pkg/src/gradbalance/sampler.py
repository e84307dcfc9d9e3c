"""Mini-batch construction for long-tailed training.

Three modes: ``uniform`` (per-epoch shuffle, every index once per epoch),
``class-balanced`` (class uniform, then instance uniform within the class),
and ``gac`` (group-aware completion): start from a uniform batch and, for
each group with no samples in it, draw ceil(fill_fraction * batch_size)
completion samples from that group, choosing classes by an effective-number
resampling law and instances uniformly. Completions replace uniformly chosen
indices from whichever group currently holds the most batch slots, so the
batch size never changes and every group ends up represented.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, ValidationError
from .grouping import Partition

MODES = ("uniform", "class-balanced", "gac")


@dataclass(frozen=True)
class GacConfig:
    """Completion-sampler knobs; defaults follow the reference setting."""

    mu: float = 0.9999
    lam: float = 1e-7
    fill_fraction: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if not (0.0 < self.mu <= 1.0):
            raise ConfigError(f"mu must be in (0, 1], got {self.mu}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not (0.0 < self.fill_fraction <= 1.0):
            raise ConfigError(f"fill_fraction must be in (0, 1], got {self.fill_fraction}")


@dataclass(frozen=True)
class Batch:
    """Indices into the training split plus per-group presence flags."""

    indices: np.ndarray
    group_presence: np.ndarray
    completed_groups: tuple[int, ...] = ()


def gac_probabilities(counts_in_group, cfg: GacConfig) -> np.ndarray:
    """Per-class completion probabilities within one group.

    For class j with N_j instances, beta_j = mu - lambda * N_j / N_min
    (N_min taken within the group) and the unnormalized probability is
    (1 - beta_j) / (1 - beta_j ** N_j), i.e. the reciprocal effective
    number of samples; probabilities are then normalized over the group.
    """
    counts = np.asarray(counts_in_group, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 1):
        raise ValidationError("group class counts must all be >= 1")
    n_min = counts.min()
    beta = cfg.mu - cfg.lam * counts / n_min
    bad = np.nonzero((beta <= 0.0) | (beta >= 1.0))[0]
    if bad.size:
        j = int(bad[0])
        raise ConfigError(
            f"beta={beta[j]:.6g} out of (0, 1) for class count N_j={int(counts[j])} "
            f"(mu={cfg.mu}, lambda={cfg.lam})"
        )
    p = (1.0 - beta) / (1.0 - beta**counts)
    return p / p.sum()


class BatchSampler:
    """Single-consumer batch stream over a dataset's training split.

    Owns its RNG (seeded), so a fixed (dataset, partition, seed) yields a
    reproducible batch sequence. Partition may be None for non-GAC modes.
    """

    def __init__(
        self,
        dataset: Dataset,
        batch_size: int,
        mode: str,
        seed: int,
        partition: Partition | None = None,
        gac: GacConfig | None = None,
    ):
        if mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if mode == "gac":
            if partition is None:
                raise ValidationError("gac mode requires a partition")
            if batch_size < partition.num_groups:
                raise ValidationError(
                    f"gac mode needs batch_size >= num_groups "
                    f"({batch_size} < {partition.num_groups})"
                )
        self.dataset = dataset
        self.batch_size = batch_size
        self.mode = mode
        self.partition = partition
        self.gac = gac if gac is not None else GacConfig()
        self._rng = np.random.default_rng(seed)

        if mode == "class-balanced" and np.any(dataset.class_counts == 0):
            empty = int(np.nonzero(dataset.class_counts == 0)[0][0])
            raise ValidationError(f"class {empty} has no training samples")
        labels = dataset.train_labels
        self._class_indices = [
            np.nonzero(labels == c)[0] for c in range(dataset.num_classes)
        ]
        if partition is not None:
            self._group_of_class = partition.assignment
            self._group_labels = self._group_of_class[labels]
            self._group_classes = partition.groups()
            for gid, classes in enumerate(self._group_classes):
                if dataset.class_counts[classes].sum() < 1:
                    raise ValidationError(f"group {gid} has no training samples")
            if mode == "gac":
                # completion draws skip zero-count classes within a group
                self._group_probs = []
                for classes in self._group_classes:
                    nonzero = classes[dataset.class_counts[classes] > 0]
                    self._group_probs.append(
                        (nonzero, gac_probabilities(dataset.class_counts[nonzero], self.gac))
                    )
        self._order = np.arange(dataset.num_train)
        self._pos = len(self._order)  # force a shuffle on first use

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.dataset.num_train / self.batch_size)

    def _next_uniform(self) -> np.ndarray:
        if self._pos >= len(self._order):
            self._order = self._rng.permutation(self.dataset.num_train)
            self._pos = 0
        chunk = self._order[self._pos : self._pos + self.batch_size]
        self._pos += len(chunk)
        return chunk.copy()

    def sample_completion(self, group_id: int, m: int) -> np.ndarray:
        """Draw m indices from one group: class by completion probability, instance uniform."""
        classes, probs = self._group_probs[group_id]
        chosen = self._rng.choice(classes, size=m, p=probs)
        u = self._rng.random(m)
        counts = self.dataset.class_counts[chosen]
        pos = np.floor(u * counts).astype(np.int64)
        return np.array(
            [self._class_indices[c][i] for c, i in zip(chosen, pos)], dtype=np.int64
        )

    def _presence(self, indices: np.ndarray) -> np.ndarray:
        present = np.zeros(self.partition.num_groups, dtype=bool)
        present[np.unique(self._group_labels[indices])] = True
        return present

    def next_batch(self) -> Batch:
        if self.mode == "uniform":
            idx = self._next_uniform()
            return self._finish(idx, ())
        if self.mode == "class-balanced":
            k = self.dataset.num_classes
            cls = self._rng.integers(0, k, size=self.batch_size)
            u = self._rng.random(self.batch_size)
            pos = np.floor(u * self.dataset.class_counts[cls]).astype(np.int64)
            idx = np.array(
                [self._class_indices[c][i] for c, i in zip(cls, pos)], dtype=np.int64
            )
            return self._finish(idx, ())
        return self._next_gac()

    def _finish(self, indices: np.ndarray, completed: tuple[int, ...]) -> Batch:
        if self.partition is None:
            presence = np.ones(1, dtype=bool)
        else:
            presence = self._presence(indices)
        return Batch(indices=indices, group_presence=presence, completed_groups=completed)

    def _next_gac(self) -> Batch:
        idx = self._next_uniform()
        groups = self._group_labels[idx]
        num_groups = self.partition.num_groups
        slot_counts = np.bincount(groups, minlength=num_groups)
        missing = np.nonzero(slot_counts == 0)[0]
        fill = math.ceil(self.gac.fill_fraction * self.batch_size)
        for gid in missing:
            new_idx = self.sample_completion(int(gid), fill)
            for sample in new_idx:
                donor = int(np.argmax(slot_counts))
                if slot_counts[donor] <= 1:
                    break  # every slot already a distinct group; nothing to evict
                positions = np.nonzero(groups == donor)[0]
                victim = int(positions[self._rng.integers(len(positions))])
                idx[victim] = sample
                groups[victim] = gid
                slot_counts[donor] -= 1
                slot_counts[gid] += 1
        return Batch(
            indices=idx,
            group_presence=slot_counts > 0,
            completed_groups=tuple(int(g) for g in missing),
        )
