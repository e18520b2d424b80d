"""Experiment harness: configs, runs, metrics, and mode comparisons.

A run is fully described by a JSON config (scenario size and seed,
penalty, relaxation, mode, memory limit, tolerances); identical configs
produce byte-identical metrics CSVs.  Termination is measured against a
precomputed oracle solution of the same scenario; a residual-based
fallback covers oracle-free runs.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .exchange import build_agent_costs, build_coupling, generate_scenario
from .gradset import AgentMemory
from .splitting import (
    RelaxationSchedule,
    SplittingState,
    Transport,
    admm_step_exact,
    reduced_communication_step,
)

#: Iteration budget of the oracle solver.
ORACLE_ITERATIONS = 50_000
#: Residual level at which the oracle run may stop early.
ORACLE_RESIDUAL = 1e-12

CSV_COLUMNS = (
    "k",
    "rel_error",
    "residual",
    "communicated",
    "cum_comms_per_agent",
    "e_norm_bound",
    "eta",
)


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    n_agents: int = 5
    horizon: int = 6
    seed: int = 1
    rho: float = 20.0
    eta_mode: str = "constant"
    eta_value: float = 1.0
    mode: str = "exact"
    memory_limit: int | None = None
    tol: float = 1e-3
    max_iter: int = 5000
    # nearest-z anchoring: needs nothing beyond the (y, lam) messages
    # and is robust to minorant-value ties among same-piece records,
    # which otherwise put stale anchors in play at fine scales
    anchor_rule: str = "nearest_point"
    output_path: str | None = None


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def parse_config(data):
    """Validate a config dict; unknown keys are errors."""
    _require(isinstance(data, dict), "config must be a JSON object")
    known = {
        "scenario",
        "rho",
        "eta",
        "mode",
        "memory_limit",
        "tol",
        "max_iter",
        "anchor_rule",
        "output_path",
    }
    unknown = set(data) - known
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    scenario = data.get("scenario", {})
    _require(isinstance(scenario, dict), "scenario must be an object")
    unknown = set(scenario) - {"N", "T", "seed"}
    _require(not unknown, f"unknown scenario keys: {sorted(unknown)}")
    n_agents = scenario.get("N", 5)
    horizon = scenario.get("T", 6)
    seed = scenario.get("seed", 1)
    for name, value in (("N", n_agents), ("T", horizon), ("seed", seed)):
        _require(isinstance(value, int) and not isinstance(value, bool), f"scenario.{name} must be an integer")
    _require(n_agents >= 1 and horizon >= 1, "scenario.N and scenario.T must be positive")

    rho = data.get("rho", 20.0)
    _require(isinstance(rho, (int, float)) and rho > 0, "rho must be a positive number")

    eta = data.get("eta", {})
    _require(isinstance(eta, dict), "eta must be an object")
    unknown = set(eta) - {"mode", "value"}
    _require(not unknown, f"unknown eta keys: {sorted(unknown)}")
    eta_mode = eta.get("mode", "constant")
    eta_value = eta.get("value", 1.0)
    _require(eta_mode in ("constant", "diminishing"), "eta.mode must be constant or diminishing")
    _require(
        isinstance(eta_value, (int, float)) and 0.0 < eta_value < 2.0,
        "eta.value must lie in (0, 2)",
    )

    mode = data.get("mode", "exact")
    _require(mode in ("exact", "estimated"), "mode must be exact or estimated")

    memory_limit = data.get("memory_limit")
    if memory_limit is not None:
        _require(
            isinstance(memory_limit, int) and not isinstance(memory_limit, bool) and memory_limit >= 1,
            "memory_limit must be null or a positive integer",
        )

    tol = data.get("tol", 1e-3)
    _require(isinstance(tol, (int, float)) and tol > 0, "tol must be a positive number")

    max_iter = data.get("max_iter", 5000)
    _require(
        isinstance(max_iter, int) and not isinstance(max_iter, bool) and max_iter >= 1,
        "max_iter must be a positive integer",
    )

    anchor_rule = data.get("anchor_rule", "nearest_point")
    _require(
        anchor_rule in ("lower_bound", "nearest_point"),
        "anchor_rule must be lower_bound or nearest_point",
    )

    output_path = data.get("output_path")
    if output_path is not None:
        _require(isinstance(output_path, str), "output_path must be a string")

    return ExperimentConfig(
        n_agents=n_agents,
        horizon=horizon,
        seed=seed,
        rho=float(rho),
        eta_mode=eta_mode,
        eta_value=float(eta_value),
        mode=mode,
        memory_limit=memory_limit,
        tol=float(tol),
        max_iter=max_iter,
        anchor_rule=anchor_rule,
        output_path=output_path,
    )


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    rel_error: float
    residual: float
    communicated: bool
    cum_comms_per_agent: int
    e_norm_bound: float
    eta: float


@dataclass
class RunMetrics:
    rows: list[IterationRecord]
    summary: dict

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    [
                        row.k,
                        repr(row.rel_error),
                        repr(row.residual),
                        int(row.communicated),
                        row.cum_comms_per_agent,
                        repr(row.e_norm_bound),
                        repr(row.eta),
                    ]
                )

    def write_summary(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_metrics(csv_path, summary_path=None):
    """Re-read a metrics CSV, recomputing and cross-checking the summary.

    The cumulative communication counter must match the per-row flags;
    when a summary file is given, its row-derivable fields must agree
    with the recomputation.
    """
    rows = []
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        cum = 0
        for raw in reader:
            rec = IterationRecord(
                k=int(raw[0]),
                rel_error=float(raw[1]),
                residual=float(raw[2]),
                communicated=bool(int(raw[3])),
                cum_comms_per_agent=int(raw[4]),
                e_norm_bound=float(raw[5]),
                eta=float(raw[6]),
            )
            cum += int(rec.communicated)
            if rec.cum_comms_per_agent != cum:
                raise ValueError(
                    f"row {rec.k}: cumulative counter {rec.cum_comms_per_agent} "
                    f"does not match the communication flags ({cum})"
                )
            if rec.k != len(rows) + 1:
                raise ValueError(f"row {rec.k}: expected iteration index {len(rows) + 1}")
            rows.append(rec)
    derived = {
        "iterations": len(rows),
        "communication_rounds": rows[-1].cum_comms_per_agent if rows else 0,
    }
    if summary_path is not None:
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        for key, value in derived.items():
            if summary.get(key) != value:
                raise ValueError(
                    f"summary {key}={summary.get(key)} disagrees with rows ({value})"
                )
        expected_messages = 2 * summary["n_agents"] * derived["communication_rounds"]
        if summary.get("messages_total") != expected_messages:
            raise ValueError(
                f"summary messages_total={summary.get('messages_total')} disagrees "
                f"with rows ({expected_messages})"
            )
        derived = summary
    return RunMetrics(rows=rows, summary=derived)


@dataclass
class OracleResult:
    y: np.ndarray
    iterations: int
    final_residual: float


_oracle_cache: dict = {}


def compute_oracle(config):
    """Reference solution: a long exact run of the same scenario.

    Runs up to ``ORACLE_ITERATIONS`` exact iterations (constant
    relaxation), stopping early once both the primal residual and the
    scaled dual movement fall below ``ORACLE_RESIDUAL``.  Results are
    cached per scenario within the process.
    """
    eta = config.eta_value if config.eta_mode == "constant" else 1.0
    key = (config.n_agents, config.horizon, config.seed, config.rho, eta)
    cached = _oracle_cache.get(key)
    if cached is not None:
        return cached
    scn = generate_scenario(
        config.n_agents, config.horizon, config.seed, rho=config.rho, eta=eta
    )
    agents = build_agent_costs(scn)
    h = build_coupling(scn)
    state = SplittingState.zeros(h.dim, config.rho)
    # warm start at the baselines: the natural operating point agents
    # would hold with no coordination
    state.y = scn.baselines.reshape(-1).copy()
    iterations = 0
    for _ in range(ORACLE_ITERATIONS):
        y_prev = state.y
        admm_step_exact(state, h, agents, eta=eta)
        iterations += 1
        dual_move = config.rho * float(np.linalg.norm(state.y - y_prev))
        if state.s <= ORACLE_RESIDUAL and dual_move <= ORACLE_RESIDUAL:
            break
    result = OracleResult(y=state.y.copy(), iterations=iterations, final_residual=state.s)
    _oracle_cache[key] = result
    return result


def run_experiment(config, oracle=None, use_oracle=True, record_true_error=False):
    """Run one experiment to convergence or the iteration cap.

    Termination uses ``||y - y*|| / ||y*|| <= tol`` against the oracle
    (computed on demand unless passed in); with ``use_oracle=False`` it
    falls back to the primal residual and scaled dual movement both
    reaching ``tol``.  Returns RunMetrics whose summary flags
    non-convergence.
    """
    scn = generate_scenario(
        config.n_agents, config.horizon, config.seed, rho=config.rho, eta=config.eta_value
    )
    agents = build_agent_costs(scn)
    h = build_coupling(scn)
    oracle_y = None
    oracle_norm = None
    if use_oracle:
        if oracle is None:
            oracle = compute_oracle(config)
        oracle_y = oracle.y if isinstance(oracle, OracleResult) else np.asarray(oracle, float)
        oracle_norm = float(np.linalg.norm(oracle_y))
        if oracle_norm == 0.0:
            raise ValueError("oracle solution has zero norm; relative error undefined")

    state = SplittingState.zeros(h.dim, config.rho)
    state.y = scn.baselines.reshape(-1).copy()
    transport = Transport(config.n_agents)
    schedule = RelaxationSchedule(config.eta_mode, config.eta_value)
    memories = [
        AgentMemory(1.0 / config.rho, config.memory_limit) for _ in range(config.n_agents)
    ]
    rows: list[IterationRecord] = []
    estimate_seconds = []
    last_bound = 0.0
    converged = False
    for it in range(1, config.max_iter + 1):
        eta = schedule.next(it, last_bound)
        y_prev = state.y
        if config.mode == "exact":
            admm_step_exact(state, h, agents, eta=eta, transport=transport)
        else:
            reduced_communication_step(
                state,
                h,
                memories,
                agents,
                transport=transport,
                eta=eta,
                anchor_rule=config.anchor_rule,
                record_true_error=record_true_error,
            )
        info = state.last_info
        last_bound = info.error_bound
        if oracle_norm is not None:
            rel_error = float(np.linalg.norm(state.y - oracle_y)) / oracle_norm
        else:
            rel_error = math.nan
        rows.append(
            IterationRecord(
                k=it,
                rel_error=rel_error,
                residual=state.s,
                communicated=info.communicated,
                cum_comms_per_agent=transport.rounds_communicated,
                e_norm_bound=info.error_bound,
                eta=eta,
            )
        )
        if info.estimate_seconds:
            estimate_seconds.append(info.estimate_seconds)
        if oracle_norm is not None:
            converged = rel_error <= config.tol
        else:
            dual_move = config.rho * float(np.linalg.norm(state.y - y_prev))
            converged = state.s <= config.tol and dual_move <= config.tol
        if converged:
            break

    summary = {
        "mode": config.mode,
        "n_agents": config.n_agents,
        "horizon": config.horizon,
        "seed": config.seed,
        "memory_limit": config.memory_limit,
        "converged": converged,
        "iterations": len(rows),
        "communication_rounds": transport.rounds_communicated,
        "messages_total": transport.messages_total(),
        "final_rel_error": rows[-1].rel_error if rows else math.nan,
        "final_residual": rows[-1].residual if rows else math.nan,
        "tol": config.tol,
        "reduction_vs_exact": None,
        "avg_estimate_projection_seconds": (
            float(np.mean(estimate_seconds)) if estimate_seconds else 0.0
        ),
    }
    metrics = RunMetrics(rows=rows, summary=summary)
    metrics.state = state
    metrics.transport = transport
    metrics.memories = memories if config.mode == "estimated" else None
    return metrics


@dataclass
class ComparisonReport:
    config: ExperimentConfig
    rows: list[dict] = field(default_factory=list)

    def to_text(self):
        header = f"{'variant':>16} {'iterations':>10} {'comms':>6} {'reduction':>9} {'converged':>9}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            reduction = "-" if row["reduction_vs_exact"] is None else f"{100 * row['reduction_vs_exact']:.1f}%"
            lines.append(
                f"{row['variant']:>16} {row['iterations']:>10} {row['communication_rounds']:>6} "
                f"{reduction:>9} {str(row['converged']):>9}"
            )
        return "\n".join(lines)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.json"), "w", encoding="utf-8") as fh:
            json.dump(self.rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["variant", "iterations", "communication_rounds", "reduction_vs_exact", "converged"]
            )
            for row in self.rows:
                writer.writerow(
                    [
                        row["variant"],
                        row["iterations"],
                        row["communication_rounds"],
                        "" if row["reduction_vs_exact"] is None else repr(row["reduction_vs_exact"]),
                        int(row["converged"]),
                    ]
                )


#: Memory limits exercised by ``compare_modes`` alongside full memory.
COMPARE_MEMORY_LIMITS = (1, 5, 10)


def compare_modes(config):
    """Exact run vs estimated runs (full memory and bounded windows).

    The reduction column is ``1 - comms_estimated / comms_exact``; the
    exact run communicates every iteration by definition.
    """
    oracle = compute_oracle(config)
    report = ComparisonReport(config=config)

    def add(variant, cfg):
        metrics = run_experiment(cfg, oracle=oracle)
        row = {
            "variant": variant,
            "mode": cfg.mode,
            "memory_limit": cfg.memory_limit,
            "iterations": metrics.summary["iterations"],
            "communication_rounds": metrics.summary["communication_rounds"],
            "converged": metrics.summary["converged"],
            "final_rel_error": metrics.summary["final_rel_error"],
            "reduction_vs_exact": None,
        }
        report.rows.append(row)
        return metrics

    add("exact", replace(config, mode="exact"))
    add("estimated", replace(config, mode="estimated", memory_limit=None))
    for limit in COMPARE_MEMORY_LIMITS:
        add(f"estimated(M={limit})", replace(config, mode="estimated", memory_limit=limit))

    exact_rounds = report.rows[0]["communication_rounds"]
    for row in report.rows:
        if exact_rounds > 0:
            row["reduction_vs_exact"] = 1.0 - row["communication_rounds"] / exact_rounds
    return report
