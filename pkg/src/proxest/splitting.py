"""Operator-splitting steps for coordinator/agent problems.

The problem is ``min_x h(x) + sum_i f_i(x_i)`` over a stacked variable
whose blocks belong to the agents.  One relaxed ADMM iteration is

    x    <- prox_{h/rho}(y - lam/rho)
    x_rel <- eta * x + (1 - eta) * y
    y_i  <- prox_{f_i/rho}(v_i),   v = x_rel + lam/rho
    lam  <- lam + rho * (x_rel - y)

The same iteration, written on the dual, is a relaxed Douglas-Rachford
scheme; ``dr_step`` implements it through conjugate proxes and is used
to cross-check the primal updates.  ``reduced_communication_step``
replaces the agents' prox evaluations with coordinator-side gradient
estimates and only queries the agents when the estimated residual stops
decreasing, so entire rounds of messages are skipped.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envelope import QueryRecord
from .gradset import InconsistentSetError, estimate_gradient

__all__ = [
    "SplittingState",
    "StepInfo",
    "Transport",
    "RelaxationSchedule",
    "agent_slices",
    "communication_test",
    "admm_step_exact",
    "dr_step",
    "dr_step_inexact",
    "reduced_communication_step",
]


@dataclass
class StepInfo:
    """What one step did: communication, error bound, diagnostics.

    ``trigger`` names what caused a communicated round: "forced"
    (caller), "empty" (an agent had no records yet), "stale" (certified
    uncertainty too large), "infeasible" (ball intersection projection
    failed), "test" (residual failed to decrease).  None on rounds that
    used estimates, and on exact steps.
    """

    communicated: bool
    error_bound: float
    eta: float
    estimate_seconds: float = 0.0
    true_error: np.ndarray | None = None
    trigger: str | None = None


@dataclass
class SplittingState:
    """Iterates of the splitting scheme.

    ``y`` is the coordinator's current belief about the agents' blocks:
    after a communicated round it is the true prox output, otherwise an
    estimate.  ``s`` is the residual ``||x - y||`` of the latest step
    (infinite before the first one).
    """

    x: np.ndarray
    x_relaxed: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    rho: float
    k: int = 0
    s: float = math.inf
    e_history: list = field(default_factory=list)
    last_info: StepInfo | None = None

    @classmethod
    def zeros(cls, dim, rho):
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        return cls(
            x=np.zeros(dim),
            x_relaxed=np.zeros(dim),
            y=np.zeros(dim),
            lam=np.zeros(dim),
            rho=float(rho),
        )


class Transport:
    """Per-agent message counters; one query and one reply per round."""

    def __init__(self, n_agents):
        if n_agents < 1:
            raise ValueError(f"need at least one agent, got {n_agents}")
        self.n_agents = int(n_agents)
        self.to_agents = np.zeros(self.n_agents, dtype=int)
        self.to_coordinator = np.zeros(self.n_agents, dtype=int)
        self.log: list[tuple[int, bool]] = []

    def record_round(self, k, communicated):
        if communicated:
            self.to_agents += 1
            self.to_coordinator += 1
        self.log.append((int(k), bool(communicated)))

    @property
    def rounds_communicated(self):
        return int(self.to_agents[0]) if self.n_agents else 0

    def messages_per_agent(self):
        return self.to_agents + self.to_coordinator

    def messages_total(self):
        return int(self.to_agents.sum() + self.to_coordinator.sum())


class RelaxationSchedule:
    """Relaxation parameter sequence plus its summability monitors.

    ``constant`` always returns ``value``.  ``diminishing`` returns
    ``clip(1 / (k^2 * max(error_bound, floor)), eta_min, eta_max)`` so
    that the weighted error sum behaves like ``sum 1/k^2``; a zero error
    bound yields the full step ``eta_max``.  Every call accumulates
    ``weighted_error_sum += eta * error_bound`` (must stay finite) and
    ``margin_sum += eta * (2 - eta)`` (must grow without bound).

    The error bound fed to step ``k`` is the one reported by step
    ``k - 1``: the current step's bound is only known after its
    estimates, which already depend on the relaxation.
    """

    ETA_MIN = 1e-6
    ETA_MAX = 1.999
    FLOOR = 1e-12

    def __init__(self, mode="constant", value=1.0):
        if mode not in ("constant", "diminishing"):
            raise ValueError(f"unknown relaxation mode {mode!r}")
        value = float(value)
        if not 0.0 < value < 2.0:
            raise ValueError(f"relaxation value must lie in (0, 2), got {value}")
        self.mode = mode
        self.value = value
        self.weighted_error_sum = 0.0
        self.margin_sum = 0.0
        self.last_eta = None

    def next(self, k, error_bound):
        """Relaxation for iteration ``k`` (1-based) given an error bound."""
        if k < 1:
            raise ValueError(f"iteration index must be >= 1, got {k}")
        error_bound = float(error_bound)
        if self.mode == "constant":
            eta = self.value
        else:
            eta = 1.0 / (k * k * max(error_bound, self.FLOOR))
            eta = min(max(eta, self.ETA_MIN), self.ETA_MAX)
        self.weighted_error_sum += eta * error_bound
        self.margin_sum += eta * (2.0 - eta)
        self.last_eta = eta
        return eta


def agent_slices(agents):
    """Consecutive block slices of the stacked variable, one per agent."""
    slices = []
    start = 0
    for f in agents:
        slices.append(slice(start, start + f.dim))
        start += f.dim
    return slices


def communication_test(s_prev, s_next):
    """Decide whether the agents must be queried this round.

    True (communicate) exactly when the residual increased:
    ``s_prev - s_next < 0``.  Equality counts as progress and skips the
    round.  A NaN residual forces communication and warns, since the
    comparison is meaningless.
    """
    if math.isnan(s_prev) or math.isnan(s_next):
        warnings.warn("NaN residual in communication test; forcing communication")
        return True
    return (s_prev - s_next) < 0.0


def _coordinator_updates(state, h, eta):
    # Shared by the exact and estimated paths so that a forced
    # communication reproduces the exact step bit for bit.
    rho = state.rho
    x = h.prox(state.y - state.lam / rho, 1.0 / rho)
    x_relaxed = eta * x + (1.0 - eta) * state.y
    v = x_relaxed + state.lam / rho
    return x, x_relaxed, v


def _agent_updates(v, x_relaxed, lam, rho, agents, slices):
    gamma = 1.0 / rho
    y = np.empty_like(v)
    for f, sl in zip(agents, slices):
        y[sl] = f.prox(v[sl], gamma)
    lam_new = lam + rho * (x_relaxed - y)
    return y, lam_new


def _commit(state, x, x_relaxed, y, lam, s, info):
    state.x = x
    state.x_relaxed = x_relaxed
    state.y = y
    state.lam = lam
    state.s = s
    state.k += 1
    state.last_info = info
    return info


def admm_step_exact(state, h, agents, eta=1.0, transport=None):
    """One relaxed ADMM iteration with true agent proxes.

    Every agent is queried, so when a transport is given its counters
    advance by one message in each direction per agent.
    """
    slices = agent_slices(agents)
    x, x_relaxed, v = _coordinator_updates(state, h, eta)
    y, lam = _agent_updates(v, x_relaxed, state.lam, state.rho, agents, slices)
    s = float(np.linalg.norm(x - y))
    if transport is not None:
        transport.record_round(state.k, True)
    info = StepInfo(communicated=True, error_bound=0.0, eta=eta)
    return _commit(state, x, x_relaxed, y, lam, s, info)


def _dual_prox_h(h, w, rho):
    # prox of rho * H with H(lam) = h*(-lam), via the Moreau identity.
    return w + rho * h.prox(-w / rho, 1.0 / rho)


def _dual_prox_agents(agents, slices, z, rho):
    out = np.empty_like(z)
    for f, sl in zip(agents, slices):
        out[sl] = f.conjugate_prox(z[sl], rho)
    return out


def dr_step(z, lam, h, agents, rho, eta):
    """One relaxed Douglas-Rachford iteration on the dual problem.

    The dual objective splits into ``H(lam) = h*(-lam)`` and the
    blockwise sum of the agents' conjugates; both proxes come from the
    Moreau identity.  Returns ``(reflected, z_new, lam_new)``.
    """
    slices = agent_slices(agents)
    w = 2.0 * lam - z
    r = _dual_prox_h(h, w, rho)
    z_new = z + eta * (r - lam)
    lam_new = _dual_prox_agents(agents, slices, z_new, rho)
    return r, z_new, lam_new


def dr_step_inexact(z, lam, h, agents, rho, eta, e):
    """Douglas-Rachford step whose dual prox is perturbed by ``e``.

    Models a coordinator that uses an estimated agent response: the
    error enters the lam-update additively.  Also returns the deviation
    ``zeta`` between the perturbed and the exact fixed-point operator at
    ``z``, the quantity whose weighted sum must stay summable for
    convergence.  With ``e = 0`` this reproduces ``dr_step`` exactly and
    ``zeta = 0``.
    """
    slices = agent_slices(agents)
    e = np.asarray(e, dtype=float)
    w = 2.0 * lam - z
    r = _dual_prox_h(h, w, rho)
    z_new = z + eta * (r - lam)
    lam_new = _dual_prox_agents(agents, slices, z_new, rho) + e

    def reflect_agents(u):
        return 2.0 * _dual_prox_agents(agents, slices, u, rho) - u

    def reflect_h(u):
        return 2.0 * _dual_prox_h(h, u, rho) - u

    inner = reflect_agents(z)
    fixed_point = 0.5 * (reflect_h(inner) + z)
    perturbed = 0.5 * (reflect_h(inner + 2.0 * e) + z)
    zeta = perturbed - fixed_point
    return r, z_new, lam_new, zeta


#: Default trust threshold for the staleness trigger: a round is forced
#: whenever an agent's certified gradient uncertainty (diameter of its
#: smallest co-coercivity ball at v_i) exceeds this fraction of the
#: estimated gradient's own norm.
STALENESS_RATIO = 0.3

#: Projection sweep budget for in-loop estimation.  Consistent ball
#: intersections project in far fewer sweeps; records straddling a
#: breakpoint can be jointly infeasible at roundoff scale, and burning
#: the full default budget before falling back to a true round costs
#: more time than the round saves.
ESTIMATION_PROJECTION_SWEEPS = 600


def reduced_communication_step(
    state,
    h,
    memories,
    agents,
    transport=None,
    eta=1.0,
    anchor_rule="lower_bound",
    force_communicate=False,
    record_true_error=False,
    staleness_ratio=STALENESS_RATIO,
):
    """One coordinator round that queries the agents only when needed.

    The coordinator runs the ADMM updates with estimated agent blocks:
    for each agent it estimates the envelope gradient at ``v_i`` from
    that agent's memory, reconstructs ``y_i = v_i - gamma * g_i``, and
    forms the provisional residual.  If the residual fails to decrease
    relative to the previous round (or any memory is empty, or
    ``force_communicate`` is set), all agents are queried: true proxes
    replace the estimates, the duals and residual are recomputed from
    them, and one record per agent is appended to its memory.  Otherwise
    the estimates are committed and no messages are exchanged.

    A second trigger guards the estimates themselves.  Estimation is
    trustworthy only while ``v_i`` stays close to some recorded query
    point; the certified uncertainty (``error_bound`` of the estimate)
    grows with that distance.  Once it exceeds ``staleness_ratio`` times
    the estimated gradient's norm for any agent, a true round is forced.
    Without this guard an estimate can keep validating its own
    prediction indefinitely: the recorded gradient of the most recent
    round is a fixed point of the projection, so the residual test alone
    never fires again and the coordinator runs open loop on stale data.
    Pass ``staleness_ratio=None`` to disable the guard.

    ``record_true_error`` additionally computes the true agent proxes
    for diagnostics only (no transport accounting) and appends the
    realized estimation error ``g - grad_env(v)`` to ``state.e_history``.
    """
    if len(memories) != len(agents):
        raise ValueError("one memory per agent is required")
    slices = agent_slices(agents)
    rho = state.rho
    gamma = 1.0 / rho
    x, x_relaxed, v = _coordinator_updates(state, h, eta)

    trigger = None
    if force_communicate:
        trigger = "forced"
    elif any(len(m) == 0 for m in memories):
        trigger = "empty"
    estimate_seconds = 0.0
    error_bound = 0.0
    g_stacked = None
    if trigger is None:
        g_stacked = np.empty_like(v)
        started = time.perf_counter()
        try:
            for mem, sl in zip(memories, slices):
                est = estimate_gradient(
                    mem,
                    v[sl],
                    anchor_rule=anchor_rule,
                    projection_max_iter=ESTIMATION_PROJECTION_SWEEPS,
                )
                g_stacked[sl] = est.g
                error_bound = max(error_bound, est.error_bound)
                if staleness_ratio is not None and est.error_bound > (
                    staleness_ratio * float(np.linalg.norm(est.g))
                ):
                    trigger = "stale"
                    break
        except InconsistentSetError:
            # estimation is only a shortcut; on numerical failure fall
            # back to querying the agents instead of aborting the run
            trigger = "infeasible"
        estimate_seconds = time.perf_counter() - started
        if trigger is not None:
            error_bound = 0.0
        else:
            y_est = v - gamma * g_stacked
            lam_est = state.lam + rho * (x_relaxed - y_est)
            s_est = float(np.linalg.norm(x - y_est))
            if communication_test(state.s, s_est):
                trigger = "test"
    must_communicate = trigger is not None

    true_error = None
    if must_communicate:
        y, lam = _agent_updates(v, x_relaxed, state.lam, rho, agents, slices)
        s = float(np.linalg.norm(x - y))
        for mem, f, sl in zip(memories, agents, slices):
            env_value = f(y[sl]) + 0.5 / gamma * float((y[sl] - v[sl]) @ (y[sl] - v[sl]))
            mem.record_communication(
                QueryRecord(
                    point=v[sl].copy(),
                    prox_out=y[sl].copy(),
                    grad=(v[sl] - y[sl]) / gamma,
                    env_value=float(env_value),
                    gamma=gamma,
                )
            )
        if record_true_error:
            true_error = np.zeros_like(v)
        error_bound = 0.0
    else:
        y, lam, s = y_est, lam_est, s_est
        if record_true_error:
            y_true, _ = _agent_updates(v, x_relaxed, state.lam, rho, agents, slices)
            true_error = g_stacked - (v - y_true) / gamma

    if transport is not None:
        transport.record_round(state.k, must_communicate)
    if record_true_error:
        state.e_history.append(true_error)
    info = StepInfo(
        communicated=must_communicate,
        error_bound=error_bound,
        eta=eta,
        estimate_seconds=estimate_seconds,
        true_error=true_error,
        trigger=trigger,
    )
    return _commit(state, x, x_relaxed, y, lam, s, info)
