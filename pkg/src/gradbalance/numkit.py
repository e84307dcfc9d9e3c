"""Dense numerical kernels: inner products, a Jacobi eigensolver, k-means.

Everything here is pure and deterministic given its inputs (and seed, for
k-means). Matrices are float64 numpy arrays, row-major; "vectors" are 1-D
arrays. Sizes stay small (at most a few hundred classes), so simplicity and
reproducibility win over raw speed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, ValidationError

JACOBI_MAX_SWEEPS = 100
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300


def as_vector(a) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"expected a nonempty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vector contains non-finite entries")
    return v


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValidationError(f"expected a nonempty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix contains non-finite entries")
    return m


def dot(a, b) -> float:
    """Inner product of two equal-length vectors."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise DimensionError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(va @ vb)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in ascending order; eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def symmetric_eigen(m, tol: float = 1e-10) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Rotations run in row order (p < q) until every off-diagonal magnitude is
    at most ``tol``; at most 100 sweeps. Raises ConvergenceError (with the
    residual) if the cap is hit, which does not happen for symmetric input
    at sane tolerances.
    """
    a = as_matrix(m).copy()
    n, nc = a.shape
    if n != nc:
        raise ValidationError(f"matrix is not square: {n}x{nc}")
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    asym = float(np.max(np.abs(a - a.T))) if n > 1 else 0.0
    if asym > 1e-12:
        raise ValidationError(f"matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    a = (a + a.T) / 2.0

    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = _max_offdiag(a)
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol:
                    continue
                # classic stable rotation angle
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J on rows/cols p,q
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _max_offdiag(a)
        raise ConvergenceError(
            f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
            f"(max off-diagonal {off:.3e} > tol {tol:.3e})",
            residual=off,
        )

    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    return EigenDecomposition(eigenvalues=evals[order], eigenvectors=v[:, order])


def _max_offdiag(a: np.ndarray) -> float:
    n = a.shape[0]
    if n < 2:
        return 0.0
    mask = ~np.eye(n, dtype=bool)
    return float(np.max(np.abs(a[mask])))


def kmeans(points, k: int, seed: int) -> np.ndarray:
    """Cluster rows of ``points`` into ``k`` groups by Lloyd's algorithm.

    Init is farthest-first traversal from a seeded-random starting row;
    assignment ties break toward the lowest cluster index; empty clusters
    are repaired by moving the point farthest from its centroid. Runs 10
    restarts with seeds seed..seed+9 and keeps the lowest objective, so the
    result is deterministic for a fixed seed.
    """
    x = as_matrix(points)
    n = x.shape[0]
    if not (1 <= k <= n):
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    if k == n:
        return np.arange(n, dtype=np.int64)

    best_labels, best_obj = None, np.inf
    for r in range(KMEANS_RESTARTS):
        labels, obj = _lloyd(x, k, seed + r)
        if obj < best_obj:
            best_labels, best_obj = labels, obj
    return best_labels


def kmeans_trace(points, k: int, seed: int) -> list[float]:
    """Objective after each Lloyd iteration of a single (non-restarted) run."""
    x = as_matrix(points)
    if not (1 <= k <= x.shape[0]):
        raise ValidationError(f"k must be in [1, {x.shape[0]}], got {k}")
    trace: list[float] = []
    _lloyd(x, k, seed, trace=trace)
    return trace


def kmeans_objective(points, labels, k: int) -> float:
    """Sum of squared distances from each row to its cluster centroid."""
    x = as_matrix(points)
    labels = np.asarray(labels)
    total = 0.0
    for j in range(k):
        member = x[labels == j]
        if member.shape[0]:
            total += float(np.sum((member - member.mean(axis=0)) ** 2))
    return total


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _farthest_first(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(k - 1):
        dist[chosen] = -1.0  # never re-pick a chosen row, even if all ties are zero
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[chosen].copy()


def _lloyd(
    x: np.ndarray, k: int, seed: int, trace: list[float] | None = None
) -> tuple[np.ndarray, float]:
    rng = np.random.default_rng(seed)
    centers = _farthest_first(x, k, rng)
    labels = np.full(x.shape[0], -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        new_labels = np.argmin(_sq_dists(x, centers), axis=1)
        new_labels = _repair_empty(x, new_labels, centers, k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            member = x[labels == j]
            if member.shape[0]:
                centers[j] = member.mean(axis=0)
        if trace is not None:
            trace.append(float(np.sum((x - centers[labels]) ** 2)))
    obj = float(np.sum((x - centers[labels]) ** 2))
    return labels, obj


def _repair_empty(x, labels, centers, k) -> np.ndarray:
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        # move the globally farthest point (from its own centroid) into j
        d = np.sum((x - centers[labels]) ** 2, axis=1)
        counts = np.bincount(labels, minlength=k)
        d[counts[labels] <= 1] = -1.0  # do not empty another cluster
        labels[int(np.argmax(d))] = j
    return labels
