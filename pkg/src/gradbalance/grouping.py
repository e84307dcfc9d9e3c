"""Class grouping by gradient similarity.

Builds the K x K cosine-similarity matrix of per-class mean gradients and
partitions classes into G groups with normalized-cut spectral clustering.
Cosines live in [-1, 1]; the graph weights are shifted to W = (A + 1) / 2 so
degrees stay positive, both inside the Laplacian and in the cut objective's
optimization form (the raw-value objective is available for diagnostics).
Also provides the baseline grouping strategies and an exact brute-force cut
minimizer used as a test oracle.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import model, numkit
from .datagen import Dataset
from .errors import CombinatorialLimitError, ValidationError
from .model import ClassGradient, ModelConfig

BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class Partition:
    """Assignment of K classes to num_groups disjoint, nonempty groups."""

    num_groups: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if self.num_groups < 1:
            raise ValidationError(f"num_groups must be >= 1, got {self.num_groups}")
        if a.ndim != 1 or a.size == 0:
            raise ValidationError("assignment must be a nonempty 1-D sequence")
        present = np.unique(a)
        if present.min() < 0 or present.max() >= self.num_groups:
            raise ValidationError("group ids out of range")
        if present.size != self.num_groups:
            missing = sorted(set(range(self.num_groups)) - set(present.tolist()))
            raise ValidationError(f"empty groups: {missing}")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def num_classes(self) -> int:
        return int(self.assignment.size)

    def groups(self) -> list[np.ndarray]:
        """Class ids per group, ascending within each group."""
        return [np.nonzero(self.assignment == g)[0] for g in range(self.num_groups)]


def class_mean_gradients(
    params: np.ndarray,
    config: ModelConfig,
    dataset: Dataset,
    chunk_size: int = 1024,
) -> list[ClassGradient]:
    """Gradient of each class's mean loss over all its training samples.

    Parameters are held fixed; per-class sums accumulate over fixed-order
    chunks, so the result is deterministic and memory stays bounded.
    """
    x, y = dataset.train_features, dataset.train_labels
    zero = np.nonzero(dataset.class_counts == 0)[0]
    if zero.size:
        raise ValidationError(f"class {int(zero[0])} has no training samples")
    out = []
    for c in range(dataset.num_classes):
        idx = np.nonzero(y == c)[0]
        n = idx.size
        grad_sum = np.zeros(model.num_params(config))
        loss_sum = 0.0
        for start in range(0, n, chunk_size):
            chunk = idx[start : start + chunk_size]
            loss, grad = model.loss_and_grad(params, config, x[chunk], y[chunk])
            grad_sum += grad * chunk.size
            loss_sum += loss * chunk.size
        out.append(
            ClassGradient(
                class_id=c, grad=grad_sum / n, sample_count=int(n), loss=loss_sum / n
            )
        )
    return out


def similarity_matrix(grads: list[ClassGradient] | list[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity of class gradients (K x K, symmetric).

    Near-zero gradients get similarity 0 to every other class and 1 to
    themselves, so they behave as isolated graph nodes.
    """
    vecs = [g.grad if isinstance(g, ClassGradient) else np.asarray(g) for g in grads]
    lengths = {v.shape for v in vecs}
    if len(lengths) != 1:
        raise ValidationError(f"gradients have mixed lengths: {sorted(lengths)}")
    g = np.vstack(vecs).astype(np.float64)
    norms = np.linalg.norm(g, axis=1)
    safe = np.where(norms < 1e-12, 1.0, norms)
    a = (g @ g.T) / np.outer(safe, safe)
    degenerate = norms < 1e-12
    a[degenerate, :] = 0.0
    a[:, degenerate] = 0.0
    a = np.clip((a + a.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(a, 1.0)
    return a


def similarity_checksum(a: np.ndarray) -> str:
    """SHA-256 of the row-major float64 bytes of the similarity matrix."""
    return hashlib.sha256(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()


def save_similarity_csv(a: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(a):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _validate_pair(a: np.ndarray, partition: Partition) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"similarity matrix must be square, got {a.shape}")
    if partition.num_classes != a.shape[0]:
        raise ValidationError(
            f"partition covers {partition.num_classes} classes, matrix has {a.shape[0]}"
        )
    return a


def cut_objective(a: np.ndarray, partition: Partition, shifted: bool = True) -> float:
    """Total between-group affinity of a partition.

    With ``shifted`` (the optimization form) affinities are the nonnegative
    weights (A + 1) / 2; with ``shifted=False`` the raw similarity values are
    summed, for diagnostics.
    """
    a = _validate_pair(a, partition)
    w = (a + 1.0) / 2.0 if shifted else a
    assign = partition.assignment
    cross = assign[:, None] != assign[None, :]
    return float(w[cross].sum())


def spectral_partition(a: np.ndarray, g: int, seed: int) -> Partition:
    """Normalized-cut spectral clustering of the similarity graph into g groups.

    Shift weights to [0, 1], form the normalized Laplacian I - D^{-1/2} W
    D^{-1/2} (diagonal kept in the degrees), embed classes with the
    eigenvectors of the g smallest eigenvalues, row-normalize, and run
    seeded k-means. Classes with no off-diagonal weight are isolated nodes:
    each gets its own group up front and is left out of the eigenproblem.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"similarity matrix must be square, got {a.shape}")
    if not (2 <= g <= k):
        raise ValidationError(f"g must be in [2, {k}], got {g}")
    if g == k:
        return Partition(num_groups=k, assignment=np.arange(k))

    w = (a + 1.0) / 2.0
    offdiag = w.sum(axis=1) - np.diag(w)
    isolated = np.nonzero(offdiag < 1e-12)[0]
    active = np.nonzero(offdiag >= 1e-12)[0]

    assignment = np.full(k, -1, dtype=np.int64)
    n_iso = isolated.size
    if n_iso >= g or active.size == 0:
        # degenerate: singleton groups for the first g-1 isolated classes,
        # everything else pooled into the last group
        for gid, c in enumerate(isolated[: g - 1]):
            assignment[c] = gid
        assignment[assignment < 0] = g - 1
        return Partition(num_groups=g, assignment=assignment)
    for gid, c in enumerate(isolated):
        assignment[c] = gid

    g_active = g - n_iso
    if g_active == active.size:
        labels = np.arange(active.size)
    else:
        ws = w[np.ix_(active, active)]
        deg = ws.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(deg)
        lap = np.eye(active.size) - inv_sqrt[:, None] * ws * inv_sqrt[None, :]
        eig = numkit.symmetric_eigen(lap, tol=1e-10)
        embedding = eig.eigenvectors[:, :g_active].copy()
        row_norms = np.linalg.norm(embedding, axis=1)
        embedding[row_norms > 1e-12] /= row_norms[row_norms > 1e-12, None]
        labels = numkit.kmeans(embedding, g_active, seed)
    assignment[active] = labels + n_iso
    return Partition(num_groups=g, assignment=assignment)


def stirling2(n: int, k: int) -> int:
    """Number of set partitions of n elements into exactly k nonempty blocks."""
    if k < 0 or k > n:
        return 0
    row = [1] + [0] * k
    for i in range(1, n + 1):
        for j in range(min(i, k), 0, -1):
            row[j] = j * row[j] + row[j - 1]
        row[0] = 0 if i >= 1 else row[0]
    return row[k]


def brute_force_partition(a: np.ndarray, g: int) -> Partition:
    """Exact minimizer of the (shifted) cut objective by full enumeration.

    Enumerates canonical assignments in lexicographic order and keeps the
    first minimum, so ties resolve to the lexicographically smallest
    assignment. Refuses when the partition count exceeds 10^6.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    if not (1 <= g <= k):
        raise ValidationError(f"g must be in [1, {k}], got {g}")
    count = stirling2(k, g)
    if count > BRUTE_FORCE_LIMIT:
        raise CombinatorialLimitError(
            f"{count} partitions of {k} classes into {g} groups exceeds "
            f"the enumeration bound {BRUTE_FORCE_LIMIT}"
        )
    w = (a + 1.0) / 2.0

    best_assign: np.ndarray | None = None
    best_value = math.inf
    assign = np.zeros(k, dtype=np.int64)

    def recurse(i: int, used: int):
        nonlocal best_assign, best_value
        if i == k:
            if used != g:
                return
            same = assign[:, None] == assign[None, :]
            value = float(w[~same].sum())
            if value < best_value:
                best_value = value
                best_assign = assign.copy()
            return
        # restricted growth: next label at most one past the current max
        if used + (k - i) < g:
            return  # cannot reach g blocks anymore
        for label in range(min(used + 1, g)):
            assign[i] = label
            recurse(i + 1, max(used, label + 1))

    recurse(0, 0)
    assert best_assign is not None
    return Partition(num_groups=g, assignment=best_assign)


def baseline_partitions(
    class_counts: np.ndarray, g: int, strategy: str, seed: int = 0
) -> Partition:
    """Reference grouping strategies: seeded random, or count-banded chunks.

    ``instance-count`` sorts classes by training count descending and slices
    them into g contiguous chunks, larger chunks first (ceil split).
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    k = counts.size
    if not (1 <= g <= k):
        raise ValidationError(f"g must be in [1, {k}], got {g}")
    if strategy == "random":
        rng = np.random.default_rng(seed)
        assignment = rng.integers(0, g, size=k)
        for gid in range(g):
            if np.any(assignment == gid):
                continue
            sizes = np.bincount(assignment, minlength=g)
            donor = int(np.argmax(sizes))
            assignment[int(np.nonzero(assignment == donor)[0][0])] = gid
        return Partition(num_groups=g, assignment=assignment)
    if strategy == "instance-count":
        order = np.argsort(-counts, kind="stable")
        q, r = divmod(k, g)
        sizes = [q + 1] * r + [q] * (g - r)
        assignment = np.empty(k, dtype=np.int64)
        start = 0
        for gid, size in enumerate(sizes):
            assignment[order[start : start + size]] = gid
            start += size
        return Partition(num_groups=g, assignment=assignment)
    raise ValidationError(f"unknown grouping strategy {strategy!r}")


def partition_to_json(partition: Partition, similarity_checksum: str | None = None) -> str:
    doc = {
        "num_groups": partition.num_groups,
        "assignment": partition.assignment.tolist(),
        "similarity_checksum": similarity_checksum,
    }
    return json.dumps(doc, indent=2)


def partition_from_json(text: str) -> Partition:
    doc = json.loads(text)
    return Partition(num_groups=int(doc["num_groups"]), assignment=np.asarray(doc["assignment"]))
