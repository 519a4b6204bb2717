"""Trace sampling from a trained agent and the distiller estimator."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ..dsl import Action
from ..recourse import RecourseAgent, generate_intervention
from ..schema import UserState, check_users
from .program import ExplainableProgram, ProgramRun, build_automaton, train_program


class InsufficientTracesError(RuntimeError):
    pass


def sample_traces(
    agent: RecourseAgent,
    users: Sequence[UserState],
    M: int,
    budget: int | None = None,
    max_attempts_factor: int = 4,
    seed: int = 0,
) -> list[tuple[UserState, list[Action]]]:
    """Collect ``M`` successful interventions from the agent.

    Users are visited in a shuffled order (cycling when ``M`` exceeds the
    pool). Queries land in the ``distill-train`` phase. Gives up after
    ``max_attempts_factor * M`` attempts.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    agent._check_fitted()
    users = list(users)
    if not users:
        raise InsufficientTracesError("no users to sample from")
    budget = agent.infer_budget if budget is None else budget
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(users))
    counter = agent.counter_
    traces = []
    attempts = 0
    with counter.phase("distill-train"):
        while len(traces) < M:
            if attempts >= max_attempts_factor * M:
                raise InsufficientTracesError(
                    f"only {len(traces)} of {M} traces after {attempts} attempts"
                )
            u = users[order[attempts % len(users)]]
            attempts += 1
            if counter.predict(u):
                continue
            res = generate_intervention(u, agent.agent_, agent.env_, budget)
            if res.success:
                traces.append((u, res.actions))
    return traces


class ProgramDistiller(BaseEstimator):
    """Fits an :class:`ExplainableProgram` from a fitted :class:`RecourseAgent`.

    ``fit(X)`` samples ``n_traces`` successful interventions over the users
    in ``X``; ``predict(X)`` runs the program, which never calls the
    classifier.
    """

    def __init__(self, agent: RecourseAgent | None = None, n_traces: int = 250,
                 max_depth: int = 6, budget: int | None = None, seed: int = 0):
        self.agent = agent
        self.n_traces = n_traces
        self.max_depth = max_depth
        self.budget = budget
        self.seed = seed

    def fit(self, X, y=None, traces=None):
        """Either sample traces over ``X`` or use the given ``traces``."""
        if self.agent is None:
            raise ValueError("ProgramDistiller needs a fitted RecourseAgent")
        task = self.agent.task_
        if traces is None:
            users = check_users(X, task.schema)
            traces = sample_traces(self.agent, users, self.n_traces, self.budget, seed=self.seed)
        self.traces_ = list(traces)
        self.program_ = train_program(build_automaton(self.traces_, task), self.max_depth)
        return self

    def predict(self, X) -> list[ProgramRun]:
        if not hasattr(self, "program_"):
            raise RuntimeError("ProgramDistiller is not fitted yet")
        users = check_users(X, self.program_.task.schema)
        alpha = self.agent.alpha if self.agent is not None else 10
        return [self.program_.run(u, alpha) for u in users]
