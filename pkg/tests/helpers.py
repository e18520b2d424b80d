"""Test-side oracles and random instance generators.

Everything here is deliberately independent of the library's own code
paths: conjugate proxes come from hand-derived closed forms, projections
from grid refinement, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import numpy as np

from proxest.functions import BoxIndicator, Quadratic, SeparablePiecewiseLinear


def absolute_value(dim):
    """f(x) = sum_t |x_t| as a separable piecewise-linear function."""
    slopes = np.vstack([np.ones(dim), -np.ones(dim)])
    intercepts = np.zeros((2, dim))
    return SeparablePiecewiseLinear(slopes, intercepts)


def random_box(rng, dim):
    lower = rng.uniform(-3.0, 1.0, size=dim)
    width = rng.uniform(0.5, 4.0, size=dim)
    return BoxIndicator(lower, lower + width)


def random_diagonal_quadratic(rng, dim):
    diag = rng.uniform(0.1, 4.0, size=dim)
    q = rng.normal(0.0, 1.0, size=dim)
    return Quadratic(diag, q)


def random_dense_quadratic(rng, dim):
    a = rng.normal(size=(dim, dim))
    q_mat = a.T @ a / dim + 0.05 * np.eye(dim)
    return Quadratic(q_mat, rng.normal(0.0, 1.0, size=dim))


#: (name, builder) pairs for the containment-style sweeps: the three
#: kinds the acceptance suite ranges over.
CONTAINMENT_KINDS = (
    ("box", random_box),
    ("quadratic", random_diagonal_quadratic),
    ("absolute-value", lambda rng, dim: absolute_value(dim)),
)


def conjugate_prox_box(lower, upper, x, rho):
    """prox of rho * (support function of [lower, upper]), closed form.

    The support function is u*y on y >= 0 and l*y on y <= 0 per
    coordinate; its prox is the two-sided shrinkage that maps everything
    between rho*l and rho*u to zero.
    """
    up = x - rho * upper
    down = x - rho * lower
    return np.where(up > 0.0, up, np.where(down < 0.0, down, 0.0))


def conjugate_prox_absolute_value(x, rho):
    # conjugate of sum |x_t| is the indicator of the unit box; its prox
    # is the projection, independent of rho
    return np.clip(x, -1.0, 1.0)


def conjugate_prox_diagonal_quadratic(diag, q, x, rho):
    """prox of rho * f* for f = 0.5 x'Dx + q'x with D positive diagonal.

    f*(y) = 0.5 (y-q)' D^{-1} (y-q); the prox solves a separable scalar
    quadratic per coordinate.
    """
    return (diag * x + rho * q) / (diag + rho)


def grid_projection_oracle(centers, radii, p, stages=5, resolution=161):
    """Projection of p onto a ball intersection by 2-D grid refinement.

    Starts from the bounding box of the smallest ball (which contains
    the whole intersection), keeps the feasible grid point nearest p,
    and zooms in around it.  Requires the intersection to have interior
    so that fine grids always contain feasible points.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    tightest = int(np.argmin(radii))
    lo = centers[tightest] - radii[tightest]
    hi = centers[tightest] + radii[tightest]
    best = None
    for _ in range(stages):
        xs = np.linspace(lo[0], hi[0], resolution)
        ys = np.linspace(lo[1], hi[1], resolution)
        grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
        feasible = np.ones(len(pts), dtype=bool)
        for c, r in zip(centers, radii):
            d = pts - c[None, :]
            feasible &= (d * d).sum(axis=1) <= r * r + 1e-14
        candidates = pts[feasible]
        if candidates.size == 0:
            raise AssertionError("grid refinement lost the feasible set")
        dist2 = ((candidates - p[None, :]) ** 2).sum(axis=1)
        best = candidates[int(np.argmin(dist2))]
        step = np.array([xs[1] - xs[0], ys[1] - ys[0]])
        lo = best - 6.0 * step
        hi = best + 6.0 * step
    return best


def random_splitting_instance(rng):
    """Small coordinator/agent problem: quadratic h plus mixed agents."""
    agents = []
    for _ in range(int(rng.integers(1, 4))):
        dim = int(rng.integers(1, 4))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            agents.append(random_box(rng, dim))
        elif kind == 1:
            agents.append(random_diagonal_quadratic(rng, dim))
        else:
            lo = rng.uniform(-4.0, -1.0, size=dim)
            agents.append(
                SeparablePiecewiseLinear(
                    rng.normal(0.0, 1.0, size=(2, dim)),
                    rng.normal(0.0, 1.0, size=(2, dim)),
                    lower=lo,
                    upper=lo + rng.uniform(1.0, 5.0, size=dim),
                )
            )
    total = sum(f.dim for f in agents)
    h = Quadratic(rng.uniform(0.2, 2.0, size=total), rng.normal(0.0, 1.0, size=total))
    rho = float(rng.uniform(0.5, 4.0))
    eta = float(rng.uniform(0.5, 1.8))
    return h, agents, rho, eta


def random_ball_intersection(rng, max_balls=5, slack=(0.3, 1.0)):
    """Centers/radii of 2-D balls sharing an interior point, plus a target.

    Every ball contains ``hub`` with margin at least ``slack[0]``, so the
    intersection has interior and the grid oracle is reliable.
    """
    n_balls = int(rng.integers(1, max_balls + 1))
    hub = rng.normal(0.0, 1.0, size=2)
    centers = hub + rng.normal(0.0, 1.5, size=(n_balls, 2))
    margins = rng.uniform(slack[0], slack[1], size=n_balls)
    radii = np.linalg.norm(centers - hub, axis=1) + margins
    p = rng.normal(0.0, 2.5, size=2)
    return centers, radii, p
