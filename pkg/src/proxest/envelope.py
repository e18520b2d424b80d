"""Moreau-envelope calculus for reasoning about unseen prox outputs.

For a convex function f and step gamma, the Moreau envelope

    env_{gamma f}(z) = min_x  f(x) + (1/(2*gamma)) ||x - z||^2

is differentiable with a (1/gamma)-Lipschitz gradient, and the prox is
recovered from it by ``prox_{gamma f}(z) = z - gamma * grad``.  A single
prox evaluation at a point therefore certifies, at every other point,
both an upper bound on the envelope and a region that must contain its
gradient.  This module builds those certificates: query records (one per
prox evaluation), quadratic upper bounds, approximate-subgradient sets
derived from those bounds, and the co-coercivity ball that can be formed
without knowing the envelope's value at the new point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functions import _as_vector, _check_step

#: Absolute tolerance for set-membership tests.
MEMBERSHIP_TOL = 1e-9


def _sqnorm(d):
    return float(d @ d)


@dataclass(frozen=True)
class QueryRecord:
    """One prox evaluation of an agent's function, as seen by a coordinator.

    Attributes
    ----------
    point : ndarray
        Where the prox was queried.
    prox_out : ndarray
        The prox output at ``point``.
    grad : ndarray
        Envelope gradient ``(point - prox_out) / gamma``.
    env_value : float
        Envelope value at ``point``.
    gamma : float
        Step size the record was computed with.
    """

    point: np.ndarray
    prox_out: np.ndarray
    grad: np.ndarray
    env_value: float
    gamma: float

    @property
    def dim(self):
        return self.point.shape[0]


def make_query_record(f, point, gamma):
    """Evaluate ``f``'s prox at ``point`` and package the envelope data."""
    _check_step(gamma)
    point = _as_vector(point, f.dim, "point")
    prox_out = f.prox(point, gamma)
    grad = (point - prox_out) / gamma
    env_value = f(prox_out) + 0.5 / gamma * _sqnorm(prox_out - point)
    return QueryRecord(
        point=point.copy(),
        prox_out=prox_out,
        grad=grad,
        env_value=float(env_value),
        gamma=float(gamma),
    )


def query_record_from_response(point, prox_out, env_value, gamma):
    """Build a record from values an agent reported back.

    The gradient is derived from the reconstruction identity, so the
    agent only ever transmits its prox output and one envelope scalar.
    """
    _check_step(gamma)
    point = _as_vector(point, name="point")
    prox_out = _as_vector(prox_out, point.shape[0], "prox_out")
    grad = (point - prox_out) / gamma
    return QueryRecord(
        point=point.copy(),
        prox_out=prox_out.copy(),
        grad=grad,
        env_value=float(env_value),
        gamma=float(gamma),
    )


@dataclass(frozen=True)
class GradientBall:
    """Euclidean ball known to contain an envelope gradient."""

    center: np.ndarray
    radius: float

    def contains(self, g, tol=MEMBERSHIP_TOL):
        g = _as_vector(g, self.center.shape[0], "g")
        return float(np.linalg.norm(g - self.center)) <= self.radius + tol

    def project(self, p):
        p = _as_vector(p, self.center.shape[0], "p")
        d = p - self.center
        dist = float(np.linalg.norm(d))
        if dist <= self.radius:
            return p.copy()
        return self.center + d * (self.radius / dist)


def quadratic_upper_bound(rec, z):
    """Upper bound on the envelope at ``z`` certified by one record.

    Smoothness of the envelope gives

        env(z) <= env(rec.point) + <rec.grad, z - rec.point>
                  + (1/(2*gamma)) ||z - rec.point||^2

    with equality at ``z = rec.point``.
    """
    z = _as_vector(z, rec.dim, "z")
    d = z - rec.point
    return float(rec.env_value + rec.grad @ d + 0.5 / rec.gamma * _sqnorm(d))


def upper_bound_gap(rec, v, env_at_v):
    """Gap between the record's quadratic bound at ``v`` and the true envelope.

    This is the smallest slack for which the bound-based approximate
    subgradient set at ``v`` is valid, so it needs the true envelope
    value ``env_at_v`` -- information the coordinator does not normally
    have.  Intended for tests and diagnostics.

    A result below ``-1e-9`` means the claimed envelope value violates
    the upper bound and is rejected; small negative rounding residue is
    clamped to zero.
    """
    gap = quadratic_upper_bound(rec, v) - float(env_at_v)
    if gap < -MEMBERSHIP_TOL:
        raise ValueError(
            f"upper bound fell below the claimed envelope value by {-gap:.3e}; "
            "inconsistent envelope data"
        )
    return max(gap, 0.0)


def slack_set_contains(rec, v, g, slack, tol=0.0):
    """Membership of ``g`` in the slack-``slack`` subgradient set at ``v``.

    The set collects every g with

        (gamma/2) ||g - rec.grad||^2 - <g - rec.grad, v - rec.point>
        + (1/(2*gamma)) ||rec.point - v||^2  <=  slack.

    At ``slack = upper_bound_gap(rec, v, env_at_v)`` the set is the
    smallest of the family that still contains the gradient at ``v``;
    test facility, exact by default (``tol=0``).
    """
    v = _as_vector(v, rec.dim, "v")
    g = _as_vector(g, rec.dim, "g")
    d = g - rec.grad
    w = v - rec.point
    lhs = 0.5 * rec.gamma * _sqnorm(d) - float(d @ w) + 0.5 / rec.gamma * _sqnorm(rec.point - v)
    return lhs <= float(slack) + tol


def exact_set_contains(rec, v, env_at_v, g, tol=MEMBERSHIP_TOL):
    """Membership in the tightest bound-derived gradient set at ``v``.

    Requires the true envelope value at ``v`` (test facility): g belongs
    iff

        (gamma/2) ||g - rec.grad||^2 - <g, v - rec.point>
            <= rec.env_value - env_at_v.
    """
    v = _as_vector(v, rec.dim, "v")
    g = _as_vector(g, rec.dim, "g")
    lhs = 0.5 * rec.gamma * _sqnorm(g - rec.grad) - float(g @ (v - rec.point))
    return lhs <= rec.env_value - float(env_at_v) + tol


def cocoercive_ball(rec, v):
    """Ball containing the envelope gradient at ``v``, from one record alone.

    Co-coercivity of the envelope gradient (Lipschitz modulus 1/gamma)
    gives ``gamma ||g - rec.grad||^2 <= <g - rec.grad, v - rec.point>``;
    completing the square turns it into the ball with

        center = rec.grad + (v - rec.point) / (2*gamma)
        radius = ||v - rec.point|| / (2*gamma).

    Unlike the bound-derived sets this needs no envelope values, so a
    coordinator can build it from transmitted prox outputs only.
    """
    v = _as_vector(v, rec.dim, "v")
    w = v - rec.point
    center = rec.grad + w / (2.0 * rec.gamma)
    radius = float(np.linalg.norm(w)) / (2.0 * rec.gamma)
    return GradientBall(center=center, radius=radius)
