"""Benchmark harness: agent+MCTS vs agent-only vs distilled program."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distill import (
    ExplainableProgram,
    ProgramRun,
    build_automaton,
    sample_traces,
    sequence_similarity,
    train_program,
)
from .recourse import InterventionResult, RecourseAgent
from .schema import UserState

WORKERS_ENV = "SYNRECOURSE_WORKERS"
MODELS = ("agent_mcts", "agent_only", "program")


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class Outcome:
    """One model's result on one user, in a model-independent shape."""

    success: bool
    actions: list[str]
    length: int
    cost: float
    seconds: float
    queries: int = 0


@dataclass
class ModelSummary:
    accuracy: float
    mean_length: float
    mean_cost: float
    mean_seconds: float
    mean_queries: float
    n_users: int
    n_success: int

    @classmethod
    def of(cls, outcomes: Sequence[Outcome]) -> "ModelSummary":
        ok = [o for o in outcomes if o.success]
        n = len(outcomes)

        def mean(xs):
            return float(np.mean(xs)) if len(xs) else float("nan")

        return cls(
            accuracy=len(ok) / n if n else float("nan"),
            mean_length=mean([o.length for o in ok]),
            mean_cost=mean([o.cost for o in ok]),
            mean_seconds=mean([o.seconds for o in outcomes]),
            mean_queries=mean([o.queries for o in outcomes]),
            n_users=n,
            n_success=len(ok),
        )


@dataclass
class BenchReport:
    task: str
    n_users: int
    summary: dict[str, ModelSummary]
    intersection: dict[str, ModelSummary]
    queries: dict[str, int]
    similarity: float  # program vs agent+MCTS, users where both succeed
    long_fraction: float  # successful agent+MCTS interventions with >= 3 actions
    training_queries: int = 0  # recorded when the checkpoint was trained
    sweep: list[dict] = field(default_factory=list)
    outcomes: dict[str, list[Outcome]] = field(default_factory=dict, repr=False)

    def to_dict(self, with_outcomes: bool = False) -> dict:
        d = {
            "task": self.task,
            "n_users": self.n_users,
            "summary": {k: asdict(v) for k, v in self.summary.items()},
            "intersection": {k: asdict(v) for k, v in self.intersection.items()},
            "queries": dict(self.queries),
            "similarity": self.similarity,
            "long_fraction": self.long_fraction,
            "training_queries": self.training_queries,
            "sweep": self.sweep,
        }
        if with_outcomes:
            d["outcomes"] = {k: [asdict(o) for o in v] for k, v in self.outcomes.items()}
        return d

    def save(self, path: str | Path, with_outcomes: bool = True):
        Path(path).write_text(json.dumps(self.to_dict(with_outcomes), indent=1))

    def table(self) -> str:
        rows = [f"task {self.task}, {self.n_users} unfavourable test users"]
        head = f"{'model':<12}{'acc':>7}{'len':>7}{'cost':>8}{'ms/user':>10}{'queries':>9}"
        for title, block in (("all users", self.summary), ("intersection", self.intersection)):
            rows += ["", title, head]
            for name, s in block.items():
                rows.append(
                    f"{name:<12}{s.accuracy:>7.2f}{s.mean_length:>7.2f}{s.mean_cost:>8.2f}"
                    f"{1000 * s.mean_seconds:>10.2f}{s.mean_queries:>9.1f}"
                )
        rows += ["", "queries by phase: " + ", ".join(f"{k}={v}" for k, v in self.queries.items())]
        rows.append(f"training queries (checkpoint): {self.training_queries}")
        rows.append(f"program/agent sequence similarity: {self.similarity:.3f}")
        rows.append(f"share of interventions with >= 3 actions: {self.long_fraction:.2f}")
        if self.sweep:
            rows += ["", "trace budget sweep (program accuracy)"]
            for r in self.sweep:
                rows.append(f"  M={r['M']:<5} seed={r['seed']:<3} acc={r['accuracy']:.2f}")
        return "\n".join(rows)


def _from_result(r: InterventionResult) -> Outcome:
    return Outcome(r.success, [str(a) for a in r.actions], r.length,
                   r.cost if r.success else float("nan"), r.seconds, r.queries)


def evaluate_program(program: ExplainableProgram, users: Sequence[UserState],
                     agent: RecourseAgent) -> tuple[list[Outcome], list[ProgramRun]]:
    """Run the program (phase distill-predict), then check outcomes (phase eval).

    The success check is a harness measurement, not part of the program's
    inference, so it is tagged separately.
    """
    counter = agent.counter_
    alpha = agent.alpha

    def run_one(u):
        t0 = time.perf_counter()
        run = program.run(u, alpha)
        return run, time.perf_counter() - t0

    with counter.phase("distill-predict"):
        workers = n_workers()
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                timed = list(ex.map(run_one, users))
        else:
            timed = [run_one(u) for u in users]
    cm = program.task.cost_model
    outcomes = []
    with counter.phase("eval"):
        for u, (run, secs) in zip(users, timed):
            ok = run.completed and bool(counter.predict(run.final_state)) != bool(counter.predict(u))
            cost = float("nan")
            if ok:
                cost = cm.intervention_cost(u, run.actions)
            outcomes.append(Outcome(ok, [str(a) for a in run.actions], run.length, cost, secs))
    return outcomes, [r for r, _ in timed]


def budget_sweep(
    agent: RecourseAgent,
    pool: Sequence[UserState],
    test_users: Sequence[UserState],
    budgets: Sequence[int] = (100, 250, 700),
    seeds: Sequence[int] = (0, 1, 2),
    max_depth: int = 6,
) -> list[dict]:
    """Program accuracy per trace budget M. Each seed samples max(M) traces
    once; smaller budgets use prefixes of that sample."""
    rows = []
    top = max(budgets)
    for seed in seeds:
        traces = sample_traces(agent, pool, top, seed=seed)
        for M in budgets:
            prog = train_program(build_automaton(traces[:M], agent.task_), max_depth)
            outcomes, _ = evaluate_program(prog, test_users, agent)
            rows.append({"M": M, "seed": seed,
                         "accuracy": float(np.mean([o.success for o in outcomes]))})
    return rows


def sweep_means(rows: Sequence[dict]) -> dict[int, float]:
    out: dict[int, list] = {}
    for r in rows:
        out.setdefault(r["M"], []).append(r["accuracy"])
    return {m: float(np.mean(v)) for m, v in sorted(out.items())}


def run_bench(
    agent: RecourseAgent,
    program: ExplainableProgram,
    test_users: Sequence[UserState],
    budget: int | None = None,
    n_users: int = 100,
    sweep_pool: Sequence[UserState] | None = None,
    sweep_budgets: Sequence[int] = (100, 250, 700),
    sweep_seeds: Sequence[int] = (0, 1, 2),
) -> BenchReport:
    """Evaluate all three models on the first ``n_users`` unfavourable users.

    ``sweep_pool`` (users to sample traces from) turns on the trace budget
    sweep.
    """
    agent._check_fitted()
    counter = agent.counter_
    with counter.phase("eval"):
        users = [u for u in test_users if not counter.predict(u)][:n_users]
    outcomes: dict[str, list[Outcome]] = {}
    outcomes["agent_mcts"] = [_from_result(r) for r in agent.predict(users, budget)]
    outcomes["agent_only"] = [_from_result(r) for r in agent.predict(users, 0)]
    outcomes["program"], _ = evaluate_program(program, users, agent)

    summary = {k: ModelSummary.of(v) for k, v in outcomes.items()}
    both = [i for i in range(len(users)) if all(outcomes[m][i].success for m in MODELS)]
    intersection = {k: ModelSummary.of([v[i] for i in both]) for k, v in outcomes.items()}

    sims = [
        sequence_similarity(_strip(outcomes["program"][i].actions), _strip(outcomes["agent_mcts"][i].actions))
        for i in range(len(users))
        if outcomes["program"][i].success and outcomes["agent_mcts"][i].success
    ]
    ok = [o for o in outcomes["agent_mcts"] if o.success]
    long_fraction = float(np.mean([o.length >= 3 for o in ok])) if ok else 0.0

    sweep = []
    if sweep_pool is not None:
        sweep = budget_sweep(agent, sweep_pool, users, sweep_budgets, sweep_seeds, 6)

    return BenchReport(
        task=agent.task_.name,
        n_users=len(users),
        summary=summary,
        intersection=intersection,
        queries=counter.snapshot(),
        similarity=float(np.mean(sims)) if sims else float("nan"),
        long_fraction=long_fraction,
        training_queries=int(getattr(agent, "train_queries_", 0)),
        sweep=sweep,
        outcomes=outcomes,
    )


def _strip(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t != "STOP"]
