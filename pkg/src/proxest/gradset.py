"""Coordinator-side memory of agent prox queries and gradient estimation.

Each communication with an agent yields a query record; the coordinator
retains a bounded window of them.  At a new query point every retained
record contributes one co-coercivity ball that must contain the agent's
envelope gradient, so the gradient is estimated by picking an anchor
record and, if its gradient violates any ball, projecting it onto the
intersection of all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelope import MEMBERSHIP_TOL, QueryRecord
from .functions import _as_vector


class CommunicationRequired(RuntimeError):
    """Raised when no estimate can be formed and the agent must be queried."""


class InconsistentSetError(RuntimeError):
    """Projection onto the ball intersection failed to reach feasibility."""


class AgentMemory:
    """Bounded FIFO window of query records for one agent.

    Parameters
    ----------
    gamma : float
        Step size shared by all records; a record computed with a
        different step is a configuration error.
    memory_limit : int or None
        Maximum number of retained records; ``None`` keeps everything.
        When full, the oldest record is evicted first.
    """

    def __init__(self, gamma, memory_limit=None):
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        if memory_limit is not None:
            memory_limit = int(memory_limit)
            if memory_limit < 1:
                raise ValueError(f"memory_limit must be at least 1, got {memory_limit}")
        self.gamma = float(gamma)
        self.memory_limit = memory_limit
        self.records: list[QueryRecord] = []
        self._stacked = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def record_communication(self, rec):
        """Append a record, evicting the oldest ones beyond the limit."""
        if rec.gamma != self.gamma:
            raise ValueError(
                f"record step {rec.gamma} does not match memory step {self.gamma}"
            )
        if self.records and rec.dim != self.records[0].dim:
            raise ValueError(
                f"record dimension {rec.dim} does not match memory dimension "
                f"{self.records[0].dim}"
            )
        self.records.append(rec)
        if self.memory_limit is not None:
            while len(self.records) > self.memory_limit:
                self.records.pop(0)
        self._stacked = None

    def stacked(self):
        """Record data as stacked arrays (points, grads, env values).

        Rebuilt lazily after mutations; rows follow record order.
        """
        if self._stacked is None:
            self._stacked = (
                np.stack([rec.point for rec in self.records]),
                np.stack([rec.grad for rec in self.records]),
                np.array([rec.env_value for rec in self.records]),
            )
        return self._stacked


def select_anchor(mem, v, rule="lower_bound"):
    """Pick the record whose information is sharpest at ``v``.

    ``lower_bound`` maximizes the linearization
    ``env_value + <grad, v - point>`` (each one minorizes the envelope,
    so the largest is the best certificate at ``v``); it needs the
    transmitted envelope scalars.  ``nearest_point`` falls back to the
    record whose query point is closest to ``v`` and uses no envelope
    values.  Ties break toward the oldest (lowest) index.
    """
    if len(mem) == 0:
        raise CommunicationRequired("memory is empty; agent must be queried")
    v = _as_vector(v, mem.records[0].dim, "v")
    if rule == "lower_bound":
        scores = [rec.env_value + float(rec.grad @ (v - rec.point)) for rec in mem.records]
        return int(np.argmax(scores))
    if rule == "nearest_point":
        dists = [float(np.linalg.norm(v - rec.point)) for rec in mem.records]
        return int(np.argmin(dists))
    raise ValueError(f"unknown anchor rule {rule!r}")


def project_onto_intersection(balls, p, tol=1e-8, max_iter=5000):
    """Project ``p`` onto the intersection of Euclidean balls.

    Runs Dykstra's alternating scheme with per-ball correction terms
    (plain alternating projections converge to a feasible point but not
    to the projection).  Iteration stops once a full sweep moves the
    iterate by less than ``tol``.  If after ``max_iter`` sweeps the
    iterate still violates some ball by more than ``10 * tol`` the ball
    system is reported as inconsistent.
    """
    if not balls:
        raise ValueError("at least one ball is required")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    x = _as_vector(p, balls[0].center.shape[0], "p").copy()
    corrections = [np.zeros_like(x) for _ in balls]
    for _ in range(max_iter):
        x_prev = x.copy()
        for i, ball in enumerate(balls):
            shifted = x + corrections[i]
            x = ball.project(shifted)
            corrections[i] = shifted - x
        if float(np.linalg.norm(x - x_prev)) < tol:
            break
    worst = max(
        float(np.linalg.norm(x - ball.center)) - ball.radius for ball in balls
    )
    if worst > 10.0 * tol:
        raise InconsistentSetError(
            f"ball intersection infeasible by {worst:.3e} after {max_iter} sweeps"
        )
    return x


@dataclass(frozen=True)
class GradientEstimate:
    """Estimated envelope gradient at a query point.

    ``error_bound`` is the diameter of the smallest co-coercivity ball,
    ``min_j ||v - point_j|| / gamma``: both the estimate and the true
    gradient lie in that ball, so it dominates the true estimation error.
    """

    g: np.ndarray
    anchor_index: int
    projected: bool
    error_bound: float


def _row_norms(a):
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def _dykstra_balls(centers, radii, p, tol, max_iter):
    """Dykstra's cyclic projection in raw array form.

    Same scheme and stopping rule as ``project_onto_intersection``,
    without per-ball object overhead; used by the in-loop estimator.
    """
    x = p.copy()
    corrections = np.zeros_like(centers)
    for _ in range(max_iter):
        x_prev = x
        for i in range(centers.shape[0]):
            shifted = x + corrections[i]
            d = shifted - centers[i]
            dist = math.sqrt(float(d @ d))
            if dist > radii[i]:
                x = centers[i] + d * (radii[i] / dist)
                corrections[i] = shifted - x
            else:
                x = shifted
                corrections[i] = 0.0
        delta = x - x_prev
        if math.sqrt(float(delta @ delta)) < tol:
            break
    return x


def estimate_gradient(
    mem,
    v,
    anchor_rule="lower_bound",
    projection_tol=1e-8,
    projection_max_iter=5000,
):
    """Estimate the envelope gradient at ``v`` from retained records.

    Every record contributes one co-coercivity ball containing the true
    gradient.  The anchor record's gradient is returned as-is when it is
    feasible for all balls; otherwise it is projected onto their
    intersection.  If some record was queried exactly at ``v`` its ball
    has radius zero and pins the estimate to the true gradient.

    Balls that contain the smallest ball outright are dropped before
    projecting; they cannot tighten the intersection, and memories grow
    into the hundreds of records on long runs.

    Raises
    ------
    CommunicationRequired
        If the memory is empty.
    InconsistentSetError
        If the projection cannot reach feasibility (numerically broken
        records).
    """
    if len(mem) == 0:
        raise CommunicationRequired("memory is empty; agent must be queried")
    v = _as_vector(v, mem.records[0].dim, "v")
    points, grads, envs = mem.stacked()
    w = v[None, :] - points
    dists = _row_norms(w)
    nearest = int(np.argmin(dists))
    if dists[nearest] == 0.0:
        return GradientEstimate(
            g=grads[nearest].copy(),
            anchor_index=nearest,
            projected=False,
            error_bound=0.0,
        )
    gamma = mem.gamma
    centers = grads + w / (2.0 * gamma)
    radii = dists / (2.0 * gamma)
    error_bound = float(dists[nearest]) / gamma
    if anchor_rule == "lower_bound":
        anchor = int(np.argmax(envs + np.einsum("ij,ij->i", grads, w)))
    elif anchor_rule == "nearest_point":
        anchor = nearest
    else:
        raise ValueError(f"unknown anchor rule {anchor_rule!r}")
    g = grads[anchor]
    violations = _row_norms(g[None, :] - centers) - radii
    if float(violations.max()) <= MEMBERSHIP_TOL:
        return GradientEstimate(
            g=g.copy(), anchor_index=anchor, projected=False, error_bound=error_bound
        )
    enclosing = _row_norms(centers - centers[nearest]) + radii[nearest] <= radii
    enclosing[nearest] = False
    active_centers = centers[~enclosing]
    active_radii = radii[~enclosing]
    g = _dykstra_balls(
        active_centers, active_radii, g, projection_tol, projection_max_iter
    )
    worst = float((_row_norms(g[None, :] - centers) - radii).max())
    if worst > 10.0 * projection_tol:
        raise InconsistentSetError(
            f"ball intersection infeasible by {worst:.3e} "
            f"after {projection_max_iter} sweeps"
        )
    return GradientEstimate(
        g=g, anchor_index=anchor, projected=True, error_bound=error_bound
    )
