"""Convex functions with closed-form proximal operators.

Every function here is closed, proper, and convex, and exposes two
operations: evaluation (which may return ``math.inf`` outside the
effective domain) and the proximal operator

    prox_{gamma f}(z) = argmin_x  f(x) + (1/(2*gamma)) ||x - z||^2.

Proximal operators of conjugates are derived from the Moreau identity
rather than by evaluating the conjugate itself, so any function below
can serve on either side of a primal/dual splitting scheme.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
from scipy.linalg import cho_factor, cho_solve

#: Absolute tolerance for membership tests of indicator functions.
FEASIBILITY_TOL = 1e-9


def _as_vector(x, dim=None, name="x"):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    return v


def _check_step(gamma):
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")


class ProximableFunction(ABC):
    """A closed proper convex function with a computable prox."""

    dim: int

    @abstractmethod
    def prox(self, z, gamma):
        """Return ``argmin_x f(x) + (1/(2*gamma)) ||x - z||^2``."""

    @abstractmethod
    def __call__(self, x) -> float:
        """Evaluate the function; ``math.inf`` outside the domain."""

    def conjugate_prox(self, x, rho):
        """Prox of ``rho * f_conjugate`` at ``x`` via the Moreau identity.

        Uses ``prox_{rho f*}(x) = x - rho * prox_{f/rho}(x/rho)``, so the
        conjugate itself is never evaluated.
        """
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        x = _as_vector(x, self.dim)
        return x - rho * self.prox(x / rho, 1.0 / rho)


class BoxIndicator(ProximableFunction):
    """Indicator of the box ``{x : lower <= x <= upper}``.

    Bounds may be ``-inf``/``+inf`` componentwise; the prox is a clamp.
    """

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        lower, upper = np.broadcast_arrays(lower, upper)
        if np.any(lower > upper):
            raise ValueError("empty box: some lower bound exceeds its upper bound")
        self.lower = np.array(lower, dtype=float)
        self.upper = np.array(upper, dtype=float)
        self.dim = self.lower.shape[0]

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        return np.clip(z, self.lower, self.upper)

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        inside = np.all(x >= self.lower - FEASIBILITY_TOL) and np.all(
            x <= self.upper + FEASIBILITY_TOL
        )
        return 0.0 if inside else math.inf


class BallIndicator(ProximableFunction):
    """Indicator of the Euclidean ball ``{x : ||x - center|| <= radius}``."""

    def __init__(self, center, radius):
        self.center = _as_vector(center, name="center")
        radius = float(radius)
        if radius < 0:
            raise ValueError(f"radius must be nonnegative, got {radius}")
        self.radius = radius
        self.dim = self.center.shape[0]

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        d = z - self.center
        dist = float(np.linalg.norm(d))
        if dist <= self.radius:
            return z.copy()
        return self.center + d * (self.radius / dist)

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        dist = float(np.linalg.norm(x - self.center))
        return 0.0 if dist <= self.radius + FEASIBILITY_TOL else math.inf


class AffineSetIndicator(ProximableFunction):
    """Indicator of ``{x : A x = b}`` for a full-row-rank matrix A.

    The Gram factorization of ``A A^T`` is computed once at construction;
    the prox (an orthogonal projection) reuses it on every call.
    """

    def __init__(self, A, b):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise ValueError(f"A must be a matrix, got shape {A.shape}")
        b = _as_vector(b, A.shape[0], "b")
        self.A = A
        self.b = b
        self.dim = A.shape[1]
        try:
            self._gram = cho_factor(A @ A.T)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own
            raise ValueError("rows of A must be linearly independent") from exc
        except Exception as exc:
            raise ValueError("rows of A must be linearly independent") from exc

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        residual = self.A @ z - self.b
        return z - self.A.T @ cho_solve(self._gram, residual)

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        residual = self.A @ x - self.b
        if np.max(np.abs(residual), initial=0.0) <= FEASIBILITY_TOL:
            return 0.0
        return math.inf


class Quadratic(ProximableFunction):
    """Convex quadratic ``f(x) = 0.5 x^T Q x + q^T x`` with Q PSD.

    ``Q`` may be a 1-D array (diagonal) or a dense symmetric 2-D array.
    A dense Q is eigendecomposed once at construction, which both checks
    positive semidefiniteness and lets the prox

        prox_{gamma f}(z) = (I + gamma Q)^{-1} (z - gamma q)

    be applied for any step size without refactorizing; the per-step
    spectral scaling is memoized per (function, gamma).
    """

    def __init__(self, Q, q=None):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 0:
            Q = Q.reshape(1)
        if Q.ndim == 1:
            if np.any(Q < 0):
                raise ValueError("diagonal Q must be entrywise nonnegative")
            self.diag = Q.copy()
            self.Q = None
            self.dim = Q.shape[0]
        elif Q.ndim == 2:
            if Q.shape[0] != Q.shape[1]:
                raise ValueError(f"Q must be square, got shape {Q.shape}")
            scale = max(1.0, float(np.max(np.abs(Q))))
            if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
                raise ValueError("Q must be symmetric")
            evals, evecs = np.linalg.eigh(Q)
            if evals.min(initial=0.0) < -1e-10 * max(1.0, evals.max(initial=0.0)):
                raise ValueError("Q must be positive semidefinite")
            self.diag = None
            self.Q = 0.5 * (Q + Q.T)
            self._evals = np.maximum(evals, 0.0)
            self._evecs = evecs
            self.dim = Q.shape[0]
        else:
            raise ValueError(f"Q must be 1-D or 2-D, got shape {Q.shape}")
        self.q = np.zeros(self.dim) if q is None else _as_vector(q, self.dim, "q")
        self._scale_cache: dict[float, np.ndarray] = {}

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        rhs = z - gamma * self.q
        if self.diag is not None:
            return rhs / (1.0 + gamma * self.diag)
        scale = self._scale_cache.get(gamma)
        if scale is None:
            scale = 1.0 / (1.0 + gamma * self._evals)
            self._scale_cache[gamma] = scale
        return self._evecs @ (scale * (self._evecs.T @ rhs))

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        if self.diag is not None:
            quad = float(x @ (self.diag * x))
        else:
            quad = float(x @ (self.Q @ x))
        return 0.5 * quad + float(self.q @ x)


def _upper_envelope(slopes, intercepts):
    """Upper envelope of the lines ``a*x + b``.

    Returns (env_slopes, env_breaks) with slopes strictly increasing and
    env_breaks[j] the crossover between envelope pieces j and j+1.  Lines
    that are nowhere maximal are dropped.
    """
    slopes = np.asarray(slopes, dtype=float)
    intercepts = np.asarray(intercepts, dtype=float)
    order = np.lexsort((intercepts, slopes))
    lines: list[tuple[float, float]] = []
    for i in order:
        a, b = float(slopes[i]), float(intercepts[i])
        if lines and lines[-1][0] == a:
            lines[-1] = (a, b)  # equal slopes: the larger intercept wins
            continue
        lines.append((a, b))
    hull: list[tuple[float, float]] = []
    breaks: list[float] = []
    for a, b in lines:
        while hull:
            a0, b0 = hull[-1]
            x = (b0 - b) / (a - a0)
            if breaks and x <= breaks[-1]:
                hull.pop()
                breaks.pop()
            else:
                breaks.append(x)
                break
        hull.append((a, b))
    env_slopes = np.array([a for a, _ in hull])
    env_breaks = np.array(breaks)
    return env_slopes, env_breaks


def _scan_prox_1d(env_slopes, env_breaks, z, gamma):
    # Solve z in x + gamma * dg(x) where g is the piecewise-linear envelope:
    # the map is increasing, so scan its segments and subdifferential jumps.
    x = z - gamma * env_slopes[-1]
    for j in range(len(env_breaks) - 1, -1, -1):
        if z <= env_breaks[j] + gamma * env_slopes[j + 1]:
            x = env_breaks[j]
        if z <= env_breaks[j] + gamma * env_slopes[j]:
            x = z - gamma * env_slopes[j]
    return x


def prox_piecewise_linear_1d(pieces, box, z, gamma):
    """Prox of ``max_m(a_m x + b_m) + indicator([lo, hi])`` at a scalar z.

    Parameters
    ----------
    pieces : iterable of (slope, intercept)
        Affine pieces whose maximum defines the function. Must be nonempty.
    box : (lo, hi)
        Interval bounds; either may be infinite.
    z, gamma : float
        Prox center and positive step size.

    The unconstrained minimizer is found by scanning the breakpoints of
    the envelope's subdifferential; in one dimension the box constraint
    then reduces to a clamp of that minimizer.
    """
    _check_step(gamma)
    pieces = list(pieces)
    if not pieces:
        raise ValueError("pieces must be nonempty")
    lo, hi = box
    lo = -math.inf if lo is None else float(lo)
    hi = math.inf if hi is None else float(hi)
    if lo > hi:
        raise ValueError("empty interval: lo > hi")
    slopes = np.array([a for a, _ in pieces], dtype=float)
    intercepts = np.array([b for _, b in pieces], dtype=float)
    env_slopes, env_breaks = _upper_envelope(slopes, intercepts)
    x = _scan_prox_1d(env_slopes, env_breaks, float(z), float(gamma))
    return float(min(max(x, lo), hi))


class SeparablePiecewiseLinear(ProximableFunction):
    """Sum over coordinates of max-of-affine pieces plus a box constraint.

        f(x) = sum_t  max_m (slopes[m, t] * x_t + intercepts[m, t])
               + indicator(lower <= x <= upper)

    The upper envelope of each coordinate's pieces is computed once at
    construction; the prox is a vectorized breakpoint scan followed by a
    clamp onto the box.
    """

    def __init__(self, slopes, intercepts, lower=None, upper=None):
        slopes = np.asarray(slopes, dtype=float)
        intercepts = np.asarray(intercepts, dtype=float)
        if slopes.ndim == 1:
            slopes = slopes[:, None]
            intercepts = np.asarray(intercepts, dtype=float)[:, None]
        if slopes.shape != intercepts.shape or slopes.ndim != 2 or slopes.shape[0] == 0:
            raise ValueError("slopes and intercepts must be matching (pieces, dim) arrays")
        self.piece_slopes = slopes
        self.piece_intercepts = intercepts
        self.dim = slopes.shape[1]
        self.lower = (
            np.full(self.dim, -math.inf) if lower is None else _as_vector(lower, self.dim, "lower")
        )
        self.upper = (
            np.full(self.dim, math.inf) if upper is None else _as_vector(upper, self.dim, "upper")
        )
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: some lower bound exceeds its upper bound")

        envelopes = [
            _upper_envelope(slopes[:, t], intercepts[:, t]) for t in range(self.dim)
        ]
        width = max(len(s) for s, _ in envelopes)
        # Pad with the last slope and a -inf breakpoint: padded thresholds
        # never fire in the scan, and the default segment stays the true
        # rightmost piece.
        self._env_slopes = np.empty((self.dim, width))
        self._env_breaks = np.full((self.dim, max(width - 1, 0)), -math.inf)
        for t, (es, eb) in enumerate(envelopes):
            self._env_slopes[t, : len(es)] = es
            self._env_slopes[t, len(es):] = es[-1]
            self._env_breaks[t, : len(eb)] = eb

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        slopes, breaks = self._env_slopes, self._env_breaks
        x = z - gamma * slopes[:, -1]
        for j in range(breaks.shape[1] - 1, -1, -1):
            x = np.where(z <= breaks[:, j] + gamma * slopes[:, j + 1], breaks[:, j], x)
            x = np.where(z <= breaks[:, j] + gamma * slopes[:, j], z - gamma * slopes[:, j], x)
        return np.clip(x, self.lower, self.upper)

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        inside = np.all(x >= self.lower - FEASIBILITY_TOL) and np.all(
            x <= self.upper + FEASIBILITY_TOL
        )
        if not inside:
            return math.inf
        values = self.piece_slopes * x[None, :] + self.piece_intercepts
        return float(np.sum(np.max(values, axis=0)))


class TiltedShifted(ProximableFunction):
    """Composite ``f(x) = scale * base(x - shift) + <tilt, x>``.

    Folds a positive scaling, a translation of the argument, and a linear
    tilt into an existing prox: the tilt moves the prox center, the shift
    translates input and output, and the scale multiplies the step size.
    """

    def __init__(self, base, tilt=None, shift=None, scale=1.0):
        if not isinstance(base, ProximableFunction):
            raise TypeError("base must be a ProximableFunction")
        scale = float(scale)
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.base = base
        self.dim = base.dim
        self.tilt = np.zeros(self.dim) if tilt is None else _as_vector(tilt, self.dim, "tilt")
        self.shift = np.zeros(self.dim) if shift is None else _as_vector(shift, self.dim, "shift")
        self.scale = scale

    def prox(self, z, gamma=1.0):
        _check_step(gamma)
        z = _as_vector(z, self.dim, "z")
        inner = self.base.prox(z - self.shift - gamma * self.tilt, gamma * self.scale)
        return inner + self.shift

    def __call__(self, x):
        x = _as_vector(x, self.dim)
        return self.scale * self.base(x - self.shift) + float(self.tilt @ x)
