"""Training loop, intervention generation, and the estimator front end."""

from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .agent import AgentNet, StepBatch
from .blackbox import FormulaBlackBox, QueryCounter
from .dsl import Action
from .mcts import (
    InterventionTrace,
    ReplayBuffer,
    SearchEnv,
    batch_steps,
    run_agent_only,
    run_episode,
)
from .schema import UserState, check_users
from .task import RecourseTask, load_task

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    """How long and how often to train.

    ``episodes`` searches are run over the training users (cycled in shuffled
    passes); every ``train_every`` episodes, ``updates`` SGD steps are taken
    on ``batch_traces`` traces sampled from the buffer.
    """

    episodes: int = 1000
    train_every: int = 1
    updates: int = 4
    batch_traces: int = 16
    learning_rate: float = 0.05
    buffer_capacity: int = 2000
    min_buffer: int = 8


@dataclass
class EpisodeLog:
    episode: int
    success: bool
    reward: float
    length: int
    queries: int
    terminal_evals: int
    loss: float


def train(
    users: Sequence[UserState],
    agent: AgentNet,
    env: SearchEnv,
    schedule: Schedule,
    budget: int = 200,
    tau: float = 1.0,
    seed: int = 0,
    buffer: ReplayBuffer | None = None,
    callback=None,
) -> tuple[AgentNet, list[EpisodeLog]]:
    """Alternate search episodes with imitation updates on the replay buffer."""
    rng = np.random.default_rng(seed)
    buffer = buffer if buffer is not None else ReplayBuffer(schedule.buffer_capacity)
    users = list(users)
    logs: list[EpisodeLog] = []
    if schedule.episodes <= 0 or not users:
        return agent, logs
    order = rng.permutation(len(users))
    pos = 0

    def verify(trace: InterventionTrace) -> bool:
        state = trace.root
        for a in trace.actions:
            state = env.library.apply(state, a)
        return bool(env.predict(state)) != bool(env.predict(trace.root))

    last_loss = float("nan")
    for ep in range(schedule.episodes):
        if pos == len(order):
            order, pos = rng.permutation(len(users)), 0
        user = users[order[pos]]
        pos += 1
        trace = run_episode(user, agent, env, budget, tau)
        queries = trace.queries
        if trace.success:
            before = _count(env)
            buffer.push(trace, verify)
            queries += _count(env) - before
        if (ep + 1) % schedule.train_every == 0 and len(buffer) >= schedule.min_buffer:
            losses = []
            for _ in range(schedule.updates):
                steps = batch_steps(buffer.sample(schedule.batch_traces, rng))
                losses.append(agent.train_step(StepBatch.stack(steps), schedule.learning_rate))
            last_loss = float(np.mean(losses))
        entry = EpisodeLog(ep, trace.success, trace.reward, trace.length, queries,
                           trace.terminal_evals, last_loss)
        logs.append(entry)
        if callback is not None:
            callback(entry)
    return agent, logs


def write_training_log(logs: Sequence[EpisodeLog], path, window: int = 100):
    """One CSV row per episode, plus a rolling success rate."""
    recent: deque = deque(maxlen=window)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "success", "reward", "length", "queries", "terminal_evals",
                    "loss", "rolling_success"])
        for e in logs:
            recent.append(e.success)
            w.writerow([e.episode, int(e.success), f"{e.reward:.6g}", e.length, e.queries,
                        e.terminal_evals, f"{e.loss:.6g}", f"{np.mean(recent):.4f}"])


def _count(env: SearchEnv) -> int:
    pred = env.predict
    owner = getattr(pred, "__self__", None)
    if isinstance(owner, QueryCounter):
        return owner.total
    if isinstance(pred, QueryCounter):
        return pred.total
    return 0


@dataclass
class InterventionResult:
    """Outcome of generating an intervention for one user."""

    user: UserState
    success: bool
    actions: list[Action] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    reward: float = 0.0
    queries: int = 0
    seconds: float = 0.0
    applicable: bool = True

    @property
    def cost(self) -> float:
        return float(sum(self.costs))

    @property
    def length(self) -> int:
        return sum(1 for a in self.actions if not a.is_stop)

    def to_record(self) -> dict:
        return {
            "success": self.success,
            "applicable": self.applicable,
            "user": self.user.as_dict(),
            "actions": [
                {"function": a.function, "argument": a.argument, "cost": c}
                for a, c in zip(self.actions, self.costs)
            ],
            "cost": self.cost,
            "length": self.length,
            "reward": self.reward,
            "queries": self.queries,
            "seconds": self.seconds,
        }


def generate_intervention(
    state: UserState,
    agent: AgentNet,
    env: SearchEnv,
    budget: int = 30,
    reorder: bool = True,
) -> InterventionResult:
    """Greedy search-guided intervention (tau -> 0) for a new user.

    ``budget=0`` runs the agent alone. Failure after ``alpha`` steps is a
    normal result with ``success=False``. With ``reorder`` the found actions
    are put in their cheapest feasible order (same final state, so no extra
    classifier queries).
    """
    t0 = time.perf_counter()
    if budget > 0:
        trace = run_episode(state, agent, env, budget, tau=0.0)
    else:
        trace = run_agent_only(state, agent, env)
    actions = trace.actions
    cm = env.task.cost_model
    if trace.success and reorder:
        actions, _ = cm.cheapest_order(state, actions)
    costs = cm.step_costs(state, actions) if trace.success else _partial_costs(cm, state, actions)
    return InterventionResult(state, trace.success, actions, costs, trace.reward,
                              trace.queries, time.perf_counter() - t0)


def _partial_costs(cm, state, actions):
    try:
        return cm.step_costs(state, actions)
    except ValueError:
        return [0.0] * len(actions)


class RecourseAgent(BaseEstimator):
    """Learns one intervention policy for a population of users.

    Parameters
    ----------
    task : str or RecourseTask
        Shipped config name, config path, or a loaded task.
    blackbox : object with ``predict(state) -> bool``, optional
        Classifier to overturn; defaults to the task's label formula.
    alpha, lam, beta, c_puct
        Max intervention length, reward discount, repeat-call penalty weight,
        exploration constant.
    train_budget, infer_budget
        Simulations per move while training / at inference.
    episodes ... learning_rate
        See :class:`Schedule`.
    """

    def __init__(
        self,
        task="syn",
        blackbox=None,
        alpha: int = 10,
        lam: float = 0.9,
        beta: float = 1.0,
        c_puct: float = 3.0,
        train_budget: int = 200,
        infer_budget: int = 30,
        episodes: int = 1000,
        train_every: int = 1,
        updates: int = 4,
        batch_traces: int = 16,
        learning_rate: float = 0.05,
        buffer_capacity: int = 2000,
        embedding: int = 32,
        hidden: int = 64,
        seed: int = 0,
        verbose: int = 0,
    ):
        self.task = task
        self.blackbox = blackbox
        self.alpha = alpha
        self.lam = lam
        self.beta = beta
        self.c_puct = c_puct
        self.train_budget = train_budget
        self.infer_budget = infer_budget
        self.episodes = episodes
        self.train_every = train_every
        self.updates = updates
        self.batch_traces = batch_traces
        self.learning_rate = learning_rate
        self.buffer_capacity = buffer_capacity
        self.embedding = embedding
        self.hidden = hidden
        self.seed = seed
        self.verbose = verbose

    # --------------------------------------------------------------- setup

    def _setup(self):
        task = self.task if isinstance(self.task, RecourseTask) else load_task(self.task)
        bb = self.blackbox
        if bb is None:
            bb = FormulaBlackBox(task.label, task.name)
        counter = bb if isinstance(bb, QueryCounter) else QueryCounter(bb)
        self.task_ = task
        self.counter_ = counter
        self.env_ = SearchEnv(task, counter.predict, self.alpha, self.lam, self.beta, self.c_puct)
        return task

    def _check_fitted(self):
        if not hasattr(self, "agent_"):
            raise RuntimeError("RecourseAgent is not fitted yet; call fit() or load()")

    def fit(self, X, y=None):
        """Train on the users in ``X``; favourable users are skipped."""
        task = self._setup()
        users = check_users(X, task.schema)
        with self.counter_.phase("train"):
            targets = [u for u in users if not self.counter_.predict(u)]
        self.agent_ = AgentNet.for_library(task.library, task.encoder.width, self.embedding,
                                           self.hidden, self.seed)
        schedule = Schedule(self.episodes, self.train_every, self.updates, self.batch_traces,
                            self.learning_rate, self.buffer_capacity)
        cb = self._progress_logger() if self.verbose else None
        with self.counter_.phase("train"):
            _, self.log_ = train(targets, self.agent_, self.env_, schedule, self.train_budget,
                                 tau=1.0, seed=self.seed, callback=cb)
        self.train_queries_ = self.counter_.counts["train"]
        return self

    def _progress_logger(self, window: int = 100):
        recent: deque = deque(maxlen=window)

        def cb(entry: EpisodeLog):
            recent.append(entry.success)
            if (entry.episode + 1) % max(1, self.verbose) == 0:
                log.info("episode %d success(last %d)=%.2f loss=%.4f", entry.episode + 1,
                         len(recent), np.mean(recent), entry.loss)

        return cb

    def predict(self, X, budget: int | None = None) -> list[InterventionResult]:
        """Interventions for each user (``budget=0`` runs the agent alone)."""
        self._check_fitted()
        users = check_users(X, self.task_.schema)
        budget = self.infer_budget if budget is None else budget
        out = []
        with self.counter_.phase("inference"):
            for u in users:
                q0 = self.counter_.total
                if self.counter_.predict(u):
                    out.append(InterventionResult(u, False, applicable=False,
                                                  queries=self.counter_.total - q0))
                    continue
                res = generate_intervention(u, self.agent_, self.env_, budget)
                res.queries = self.counter_.total - q0
                out.append(res)
        return out

    def score(self, X, y=None, budget: int | None = None) -> float:
        res = [r for r in self.predict(X, budget) if r.applicable]
        return float(np.mean([r.success for r in res])) if res else float("nan")

    # --------------------------------------------------------------- io

    def save(self, path):
        self._check_fitted()
        extra = {k: v for k, v in self.get_params().items() if k not in ("task", "blackbox")}
        extra["task"] = self.task_.raw
        extra["train_queries"] = int(getattr(self, "train_queries_", 0))
        self.agent_.save(path, extra)

    @classmethod
    def load(cls, path, blackbox=None) -> "RecourseAgent":
        agent, extra = AgentNet.load(path)
        task_cfg = extra.pop("task")
        train_queries = extra.pop("train_queries", 0)
        est = cls(task=load_task(task_cfg), blackbox=blackbox, **extra)
        est._setup()
        est.agent_ = agent
        est.train_queries_ = int(train_queries)
        return est
