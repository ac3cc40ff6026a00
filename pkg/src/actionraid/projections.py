"""Norms and exact Euclidean projections onto lp balls and mixed-norm balls.

Perturbation sequences are represented as 2-D float64 arrays of shape
``(m, H)``: column ``k`` holds the action-space perturbation commanded at
step ``k`` of the window.  The mixed norm of such a matrix takes an inner
norm within each column (across action dimensions, the "spatial" norm)
and an outer norm across columns (through time, the "temporal" norm).

All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import InvalidInputError


class NormOrder(enum.IntEnum):
    """Norm orders supported by the budget constraints: only 1 and 2."""

    L1 = 1
    L2 = 2

    @classmethod
    def from_label(cls, label: str) -> "NormOrder":
        try:
            return {"l1": cls.L1, "l2": cls.L2}[str(label).lower()]
        except KeyError:
            raise InvalidInputError(f"unknown norm order {label!r}, expected 'l1' or 'l2'")

    @property
    def label(self) -> str:
        return "l1" if self is NormOrder.L1 else "l2"


L1 = NormOrder.L1
L2 = NormOrder.L2


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector contains non-finite entries")
    return v


def _as_matrix(delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[0] < 1 or delta.shape[1] < 1:
        raise InvalidInputError(f"expected a 2-D (m, H) matrix, got shape {delta.shape}")
    if not np.all(np.isfinite(delta)):
        raise InvalidInputError("matrix contains non-finite entries")
    return delta


def _check_radius(radius: float) -> float:
    radius = float(radius)
    if not np.isfinite(radius) or radius < 0:
        raise InvalidInputError(f"radius must be finite and >= 0, got {radius}")
    return radius


def norm_lp(v, order: NormOrder) -> float:
    """Return the l1 or l2 norm of a vector."""
    v = _as_vector(v)
    if order == NormOrder.L1:
        return float(np.sum(np.abs(v)))
    return float(np.sqrt(np.sum(v * v)))


def norm_pq(delta, outer: NormOrder, inner: NormOrder) -> float:
    """Mixed norm of a perturbation matrix.

    Computes the ``outer`` norm of the vector of per-column ``inner``
    norms, i.e. ``(sum_k ||col_k||_inner^outer)^(1/outer)``.  The inner
    norm runs within a step (action space), the outer norm across steps.
    """
    delta = _as_matrix(delta)
    if inner == NormOrder.L1:
        col = np.sum(np.abs(delta), axis=0)
    else:
        col = np.sqrt(np.sum(delta * delta, axis=0))
    return norm_lp(col, outer)


def project_l2_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_2 <= radius}`` (rescale if outside)."""
    v = _as_vector(v)
    radius = _check_radius(radius)
    n = float(np.sqrt(np.sum(v * v)))
    if n <= radius:
        return v.copy()
    if radius == 0.0:
        return np.zeros_like(v)
    return v * (radius / n)


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_1 <= radius}``.

    Uses the sort-based threshold search: soft-threshold every entry by
    the largest lambda for which the thresholded l1 norm still equals the
    radius.  O(m log m); the threshold depends only on the multiset of
    absolute values, so no tie-breaking is needed.
    """
    v = _as_vector(v)
    radius = _check_radius(radius)
    a = np.abs(v)
    if float(np.sum(a)) <= radius:
        return v.copy()
    if radius == 0.0:
        return np.zeros_like(v)
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, u.size + 1, dtype=np.float64)
    active = np.nonzero(u * ranks > css - radius)[0]
    if active.size == 0:
        # radius below the ulp of the largest entry: the subtraction above
        # absorbs it and the threshold search degenerates; the projection
        # is indistinguishable from zero at this scale
        return np.zeros_like(v)
    rho = active[-1]
    lam = (css[rho] - radius) / (rho + 1.0)
    out = np.sign(v) * np.maximum(a - lam, 0.0)
    # cancellation in the threshold can leave the norm a few ulps over the
    # radius; budgets are hard constraints, so rescale the excess away
    total = float(np.sum(np.abs(out)))
    if total > radius:
        out *= radius / total
    return out


def project_lp_ball(v, order: NormOrder, radius: float) -> np.ndarray:
    """Projection onto the l1 or l2 ball, dispatched on ``order``."""
    if order == NormOrder.L1:
        return project_l1_ball(v, radius)
    return project_l2_ball(v, radius)


def allocate_step_budgets(column_norms, temporal: NormOrder, budget: float) -> np.ndarray:
    """Distribute a window budget over per-step spatial norms.

    Projects the (nonnegative) vector of per-column spatial norms onto
    the temporal-norm ball of the given radius.  The result is again
    nonnegative and entrywise no larger than the input, so it can be read
    directly as the per-step budget each column is allowed to keep.
    """
    column_norms = _as_vector(column_norms)
    if np.any(column_norms < 0):
        raise InvalidInputError("column norms must be nonnegative")
    return project_lp_ball(column_norms, temporal, budget)


def project_sequence(delta, spatial: NormOrder, temporal: NormOrder, budget: float) -> np.ndarray:
    """Project a perturbation sequence onto the mixed spatial/temporal ball.

    The feasible set is ``{X : || (||x_k||_spatial)_k ||_temporal <= budget}``
    with columns ``x_k`` indexed by step.  Three of the four norm
    combinations admit an exact closed-form Euclidean projection and are
    dispatched to it:

    * spatial=L2, temporal=L2: the constraint is the Frobenius ball, so
      the whole matrix is rescaled at once.
    * spatial=L1, temporal=L1: the constraint is the plain l1 ball on the
      flattened matrix, so every entry is soft-thresholded together.
    * spatial=L2, temporal=L1: column directions are preserved; the vector
      of column norms is projected onto the l1 ball and each column is
      rescaled to its allocated norm.

    The remaining combination (spatial=L1, temporal=L2) uses the same
    two-stage scheme as the third case: allocate per-step budgets by
    projecting the norm vector, then project each column onto the spatial
    ball of its allocated radius.  For that combination the two-stage
    result is feasible but not in general the exact Euclidean projection.
    """
    delta = _as_matrix(delta)
    budget = _check_radius(budget)
    if budget == 0.0:
        return np.zeros_like(delta)
    if delta.shape[1] == 1:
        # single step: any temporal norm of one column is the column norm,
        # so this is exactly the spatial-ball projection (bit for bit)
        return project_lp_ball(delta[:, 0], spatial, budget).reshape(delta.shape)
    if norm_pq(delta, outer=temporal, inner=spatial) <= budget:
        return delta.copy()

    if spatial == NormOrder.L2 and temporal == NormOrder.L2:
        frob = float(np.sqrt(np.sum(delta * delta)))
        return delta * (budget / frob)
    if spatial == NormOrder.L1 and temporal == NormOrder.L1:
        flat = project_l1_ball(delta.ravel(), budget)
        return flat.reshape(delta.shape)

    if spatial == NormOrder.L1:
        col_norms = np.sum(np.abs(delta), axis=0)
    else:
        col_norms = np.sqrt(np.sum(delta * delta, axis=0))
    budgets = allocate_step_budgets(col_norms, temporal, budget)

    out = np.zeros_like(delta)
    for k in range(delta.shape[1]):
        if col_norms[k] == 0.0 or budgets[k] <= 0.0:
            continue  # zero columns get zero budget; nothing to keep
        if budgets[k] >= col_norms[k]:
            out[:, k] = delta[:, k]
        elif spatial == NormOrder.L2:
            out[:, k] = delta[:, k] * (budgets[k] / col_norms[k])
        else:
            out[:, k] = project_l1_ball(delta[:, k], budgets[k])
    return out
