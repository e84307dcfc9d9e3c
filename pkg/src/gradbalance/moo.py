"""Min-norm combination of objective gradients.

Finds the convex combination d* = sum_i alpha_i g_i of smallest squared
norm over the probability simplex. By the KKT conditions of that problem,
g_i . d* >= ||d*||^2 for every i, so -d* is a common descent direction for
all objectives whenever d* is nonzero; when ||d*||^2 falls below the
critical tolerance the point is treated as Pareto critical and the caller
should skip the update.

Two gradients have a closed-form solution; three or more use Frank-Wolfe
iterations on the Gram matrix with exact line search.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

CRITICAL_TOL = 1e-10
FW_GAP_TOL = 1e-9
FW_MAX_ITER = 500


@dataclass(frozen=True)
class CombinedDirection:
    """Result of the min-norm problem over a set of gradients."""

    direction: np.ndarray = field(repr=False)
    alphas: np.ndarray
    squared_norm: float
    is_pareto_critical: bool
    converged: bool = True


def _stack(grads) -> np.ndarray:
    if len(grads) == 0:
        raise ValidationError("need at least one gradient")
    vecs = [np.asarray(g, dtype=np.float64) for g in grads]
    lengths = {v.shape for v in vecs}
    if len(lengths) != 1 or vecs[0].ndim != 1:
        raise DimensionError(f"gradients must be equal-length vectors, got {sorted(lengths)}")
    g = np.vstack(vecs)
    if not np.all(np.isfinite(g)):
        raise ValidationError("gradients contain non-finite values")
    return g


def _two_point_alphas(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    denom = float(np.sum((g1 - g2) ** 2))
    if denom < 1e-30:
        return np.array([0.5, 0.5])
    gamma = float((g2 - g1) @ g2) / denom
    gamma = min(1.0, max(0.0, gamma))
    return np.array([gamma, 1.0 - gamma])


def frank_wolfe_weights(
    gram: np.ndarray, gap_tol: float = FW_GAP_TOL, max_iter: int = FW_MAX_ITER
) -> tuple[np.ndarray, bool]:
    """Simplex weights minimizing alpha^T M alpha, plus a convergence flag."""
    m = np.asarray(gram, dtype=np.float64)
    n = m.shape[0]
    alpha = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        ma = m @ alpha
        t = int(np.argmin(ma))
        value = float(alpha @ ma)
        gap = value - float(ma[t])
        if gap <= gap_tol:
            converged = True
            break
        # exact line search from alpha toward the vertex e_t
        denom = float(m[t, t] - 2.0 * ma[t] + value)
        if denom <= 0.0:
            gamma = 1.0
        else:
            gamma = min(1.0, max(0.0, (value - float(ma[t])) / denom))
        if gamma == 0.0:
            converged = True
            break
        alpha *= 1.0 - gamma
        alpha[t] += gamma
    alpha = np.maximum(alpha, 0.0)
    alpha /= alpha.sum()
    return alpha, converged


def min_norm_point(
    grads,
    critical_tol: float = CRITICAL_TOL,
    method: str = "auto",
    gap_tol: float = FW_GAP_TOL,
    max_iter: int = FW_MAX_ITER,
) -> CombinedDirection:
    """Minimum-norm point in the convex hull of the given gradients.

    ``method='auto'`` solves one and two gradients in closed form and larger
    sets by Frank-Wolfe; ``method='frank-wolfe'`` forces the iterative path
    (used to cross-check the closed forms). Hitting the iteration cap sets
    ``converged=False`` on the result rather than raising.
    """
    if method not in ("auto", "frank-wolfe"):
        raise ValidationError(f"unknown method {method!r}")
    g = _stack(grads)
    n = g.shape[0]
    converged = True
    if n == 1:
        alphas = np.array([1.0])
    elif n == 2 and method == "auto":
        alphas = _two_point_alphas(g[0], g[1])
    else:
        gram = g @ g.T
        gram = (gram + gram.T) / 2.0
        alphas, converged = frank_wolfe_weights(gram, gap_tol=gap_tol, max_iter=max_iter)
    direction = alphas @ g
    sq = float(direction @ direction)
    return CombinedDirection(
        direction=direction,
        alphas=alphas,
        squared_norm=sq,
        is_pareto_critical=sq <= critical_tol,
        converged=converged,
    )


def pareto_descent_check(direction, grads, tol: float = 1e-9) -> bool:
    """Whether every gradient satisfies g_i . d >= ||d||^2 - tol.

    This is the min-norm KKT property; it implies each objective decreases
    to first order along -d. A zero direction passes vacuously.
    """
    d = np.asarray(direction, dtype=np.float64)
    g = _stack(grads)
    if g.shape[1] != d.shape[0]:
        raise DimensionError(
            f"direction length {d.shape[0]} does not match gradients {g.shape[1]}"
        )
    sq = float(d @ d)
    return bool(np.all(g @ d >= sq - tol))


def dominates(losses_a, losses_b) -> bool:
    """True iff a is elementwise <= b and strictly smaller in some coordinate."""
    a = np.asarray(losses_a, dtype=np.float64)
    b = np.asarray(losses_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))
