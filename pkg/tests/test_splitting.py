"""Splitting steps: exact ADMM, dual DR forms, and the reduced-round path."""

from __future__ import annotations

import math

import numpy as np
import pytest

from proxest.envelope import make_query_record
from proxest.exchange import build_agent_costs, build_coupling, generate_scenario
from proxest.functions import BoxIndicator, Quadratic
from proxest.gradset import AgentMemory, InconsistentSetError
from proxest.splitting import (
    RelaxationSchedule,
    SplittingState,
    Transport,
    admm_step_exact,
    communication_test,
    dr_step,
    dr_step_inexact,
    reduced_communication_step,
)

from helpers import random_splitting_instance


def _scalar_toy():
    # min 0.5*(x-3)^2 over [0,1]: optimum at the right endpoint
    h = Quadratic(np.array([1.0]), np.array([-3.0]))
    agents = [BoxIndicator([0.0], [1.0])]
    return h, agents


def test_exact_step_converges_on_scalar_toy():
    h, agents = _scalar_toy()
    state = SplittingState.zeros(1, rho=1.0)
    for _ in range(200):
        admm_step_exact(state, h, agents)
    assert state.x == pytest.approx(1.0, abs=1e-8)
    assert state.y == pytest.approx(1.0, abs=1e-8)
    assert state.s <= 1e-8


def test_exact_step_fixed_point_is_invariant():
    # at x = y = 1, lam = 2 every update reproduces itself exactly
    h, agents = _scalar_toy()
    state = SplittingState(
        x=np.array([1.0]), x_relaxed=np.array([1.0]), y=np.array([1.0]),
        lam=np.array([2.0]), rho=1.0,
    )
    admm_step_exact(state, h, agents)
    assert np.array_equal(state.x, [1.0])
    assert np.array_equal(state.y, [1.0])
    assert np.array_equal(state.lam, [2.0])
    assert state.s == 0.0


def test_exact_step_counts_messages_every_round():
    h, agents = _scalar_toy()
    state = SplittingState.zeros(1, rho=1.0)
    transport = Transport(len(agents))
    for _ in range(7):
        admm_step_exact(state, h, agents, transport=transport)
    assert transport.rounds_communicated == 7
    assert np.array_equal(transport.messages_per_agent(), [14])
    assert transport.messages_total() == 14
    assert transport.log == [(k, True) for k in range(7)]


def test_communication_test_decision_table():
    assert communication_test(1.0, 0.9) is False
    assert communication_test(0.5, 0.6) is True
    assert communication_test(0.5, 0.5) is False  # equality counts as progress
    with pytest.warns(UserWarning):
        assert communication_test(float("nan"), 1.0) is True


def test_relaxation_schedule_constant_and_diminishing():
    constant = RelaxationSchedule("constant", 1.0)
    assert [constant.next(k, 0.3) for k in range(1, 5)] == [1.0] * 4

    dim = RelaxationSchedule("diminishing")
    assert dim.next(2, 0.5) == pytest.approx(0.5)  # 1 / (4 * 0.5)
    assert dim.next(3, 0.0) == RelaxationSchedule.ETA_MAX  # zero error takes a full step
    assert dim.next(1000, 50.0) == RelaxationSchedule.ETA_MIN


def test_relaxation_schedule_accumulates_monitors():
    sched = RelaxationSchedule("constant", 0.5)
    sched.next(1, 2.0)
    assert sched.weighted_error_sum == pytest.approx(1.0)
    assert sched.margin_sum == pytest.approx(0.75)
    sched.next(2, 0.0)
    assert sched.weighted_error_sum == pytest.approx(1.0)
    assert sched.margin_sum == pytest.approx(1.5)


def test_relaxation_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        RelaxationSchedule("constant", 2.0)
    with pytest.raises(ValueError):
        RelaxationSchedule("constant", 0.0)
    with pytest.raises(ValueError):
        RelaxationSchedule("annealed")
    sched = RelaxationSchedule()
    with pytest.raises(ValueError):
        sched.next(0, 0.0)


def test_state_and_transport_validation():
    with pytest.raises(ValueError):
        SplittingState.zeros(3, rho=0.0)
    with pytest.raises(ValueError):
        Transport(0)


def test_dr_matches_admm_lambda_sequence():
    rng = np.random.default_rng(79)
    for _ in range(3):
        h, agents, rho, eta = random_splitting_instance(rng)
        dim = sum(f.dim for f in agents)
        state = SplittingState.zeros(dim, rho)
        z = state.lam + rho * state.y  # dual DR state paired with the primal start
        lam = state.lam.copy()
        for _ in range(60):
            lam_prev = lam.copy()
            admm_step_exact(state, h, agents, eta=eta)
            _, z, lam = dr_step(z, lam_prev, h, agents, rho, eta)
            assert np.linalg.norm(lam - state.lam) <= 1e-10
            assert np.linalg.norm(z - (lam_prev + rho * state.x_relaxed)) <= 1e-10


def test_dr_singleton_sets_agree_after_one_step():
    # both functions pin their variable to the same point; dyadic data
    # keeps the float arithmetic exact, so the fixed point is bitwise
    a = np.array([0.5, -0.25])
    h = BoxIndicator(a, a)
    agents = [BoxIndicator(a, a)]
    rho = 2.0
    z = np.array([1.0, 0.5])
    lam = np.array([-0.5, 0.25])
    _, z, lam = dr_step(z, lam, h, agents, rho, 1.0)
    r2, z2, lam2 = dr_step(z, lam, h, agents, rho, 1.0)
    assert np.array_equal(r2, lam)  # reflector already agrees with the dual point
    assert np.array_equal(z2, z)
    assert np.array_equal(lam2, lam)


def test_dr_inexact_with_zero_error_reproduces_exact():
    rng = np.random.default_rng(83)
    h, agents, rho, eta = random_splitting_instance(rng)
    dim = sum(f.dim for f in agents)
    z = rng.normal(size=dim)
    lam = rng.normal(size=dim)
    zero = np.zeros(dim)
    for _ in range(20):
        r_a, z_a, lam_a = dr_step(z, lam, h, agents, rho, eta)
        r_b, z_b, lam_b, zeta = dr_step_inexact(z, lam, h, agents, rho, eta, zero)
        assert np.array_equal(r_a, r_b)
        assert np.array_equal(z_a, z_b)
        assert np.array_equal(lam_a, lam_b)
        assert np.array_equal(zeta, zero)
        z, lam = z_a, lam_a


def _fresh_run(scn_args, rho):
    scn = generate_scenario(*scn_args, rho=rho)
    agents = build_agent_costs(scn)
    h = build_coupling(scn)
    state = SplittingState.zeros(h.dim, rho)
    state.y = scn.baselines.reshape(-1).copy()
    return scn, agents, h, state


def test_first_round_with_empty_memory_communicates_and_matches_exact():
    _, agents, h, state_est = _fresh_run((3, 4, 7), rho=5.0)
    _, _, _, state_exact = _fresh_run((3, 4, 7), rho=5.0)
    memories = [AgentMemory(1.0 / 5.0) for _ in agents]
    info = reduced_communication_step(state_est, h, memories, agents)
    admm_step_exact(state_exact, h, agents)
    assert info.communicated
    assert info.trigger == "empty"
    assert all(len(m) == 1 for m in memories)
    assert np.array_equal(state_est.x, state_exact.x)
    assert np.array_equal(state_est.y, state_exact.y)
    assert np.array_equal(state_est.lam, state_exact.lam)
    assert state_est.s == state_exact.s


def test_forced_communication_reproduces_exact_iterates():
    _, agents, h, state_est = _fresh_run((3, 4, 7), rho=5.0)
    _, _, _, state_exact = _fresh_run((3, 4, 7), rho=5.0)
    memories = [AgentMemory(1.0 / 5.0) for _ in agents]
    for _ in range(200):
        info = reduced_communication_step(
            state_est, h, memories, agents, force_communicate=True
        )
        admm_step_exact(state_exact, h, agents)
        assert info.trigger == "forced"
        assert np.array_equal(state_est.x, state_exact.x)
        assert np.array_equal(state_est.x_relaxed, state_exact.x_relaxed)
        assert np.array_equal(state_est.y, state_exact.y)
        assert np.array_equal(state_est.lam, state_exact.lam)
        assert state_est.s == state_exact.s


def test_reduced_rounds_skip_communication_on_the_benchmark():
    _, agents, h, state = _fresh_run((3, 4, 7), rho=5.0)
    memories = [AgentMemory(1.0 / 5.0) for _ in agents]
    transport = Transport(len(agents))
    for _ in range(60):
        reduced_communication_step(state, h, memories, agents, transport=transport)
    assert transport.rounds_communicated < 60
    assert len(transport.log) == 60
    assert np.array_equal(
        transport.messages_per_agent(),
        np.full(len(agents), 2 * transport.rounds_communicated),
    )
    flags = [communicated for _, communicated in transport.log]
    assert not all(flags)
    assert any(flags)


def test_estimation_failure_falls_back_to_communication(monkeypatch):
    _, agents, h, state = _fresh_run((3, 4, 7), rho=5.0)
    memories = [AgentMemory(1.0 / 5.0) for _ in agents]
    reduced_communication_step(state, h, memories, agents)  # seed the memories

    def broken(*args, **kwargs):
        raise InconsistentSetError("simulated projection breakdown")

    monkeypatch.setattr("proxest.splitting.estimate_gradient", broken)
    info = reduced_communication_step(state, h, memories, agents)
    assert info.communicated
    assert info.trigger == "infeasible"


def test_stale_records_force_a_round():
    # one record queried far from the upcoming v: the certified error
    # bound dwarfs the estimated gradient, so the guard fires
    h = Quadratic(np.array([1.0]), np.array([-3.0]))
    agents = [BoxIndicator([0.0], [1.0])]
    memories = [AgentMemory(1.0)]
    memories[0].record_communication(make_query_record(agents[0], np.array([10.0]), 1.0))
    state = SplittingState.zeros(1, rho=1.0)
    info = reduced_communication_step(state, h, memories, agents)
    assert info.communicated
    assert info.trigger == "stale"

    # with the guard disabled the same round sails through on estimates
    memories = [AgentMemory(1.0)]
    memories[0].record_communication(make_query_record(agents[0], np.array([10.0]), 1.0))
    state = SplittingState.zeros(1, rho=1.0)
    info = reduced_communication_step(state, h, memories, agents, staleness_ratio=None)
    assert not info.communicated
    assert info.trigger is None


def test_reduced_step_requires_one_memory_per_agent():
    _, agents, h, state = _fresh_run((3, 4, 7), rho=5.0)
    with pytest.raises(ValueError):
        reduced_communication_step(state, h, [AgentMemory(0.2)], agents)


def test_exact_mode_residual_vanishes_on_toy_scenario():
    _, agents, h, state = _fresh_run((2, 3, 2), rho=20.0)
    for _ in range(5000):
        admm_step_exact(state, h, agents)
        if state.s < 1e-10:
            break
    assert state.s < 1e-6


def test_true_error_recording_matches_estimate_minus_truth():
    scn, agents, h, state = _fresh_run((2, 2, 4), rho=5.0)
    memories = [AgentMemory(1.0 / 5.0) for _ in agents]
    for _ in range(30):
        info = reduced_communication_step(
            state, h, memories, agents, record_true_error=True
        )
        assert info.true_error is not None
        if info.communicated:
            assert np.array_equal(info.true_error, np.zeros(h.dim))
        else:
            assert math.isfinite(float(np.linalg.norm(info.true_error)))
    assert len(state.e_history) == 30
