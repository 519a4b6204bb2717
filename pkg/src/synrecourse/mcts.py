"""Tree search over interventions guided by the agent's priors."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agent import ActionMasks, AgentNet, ControllerState, select_action
from .dsl import Action, Library
from .schema import UserState
from .task import RecourseTask


class SearchConfigError(ValueError):
    pass


class DegenerateNodeError(RuntimeError):
    pass


def compute_reward(length: int, flipped: bool, lam: float) -> float:
    """``lam ** length`` for a flipping intervention of ``length`` actions, else 0."""
    if not 0.0 < lam < 1.0:
        raise SearchConfigError(f"lambda must lie in (0, 1), got {lam}")
    if length < 0:
        raise SearchConfigError("length must be non-negative")
    return lam ** length if flipped else 0.0


def compute_L(cost: float, prior_calls: int, beta: float = 1.0) -> float:
    """Effort score ``exp(-(cost + beta * prior_calls))``."""
    return math.exp(-(cost + beta * prior_calls))


class SearchEnv:
    """Task + black box + search constants, with per-state caches.

    ``predict`` must be the query-counting wrapper; classifier outputs are
    cached per episode (see :meth:`new_episode`) and every cache miss is one
    counted query.
    """

    def __init__(
        self,
        task: RecourseTask,
        predict: Callable[[UserState], bool],
        alpha: int = 10,
        lam: float = 0.9,
        beta: float = 1.0,
        c_puct: float = 3.0,
    ):
        if alpha < 0:
            raise SearchConfigError("alpha must be >= 0")
        compute_reward(0, True, lam)
        self.task = task
        self.library: Library = task.library
        self.predict = predict
        self.alpha = alpha
        self.lam = lam
        self.beta = beta
        self.c_puct = c_puct
        self.masks = ActionMasks(self.library)
        self._bits: dict = {}
        self._valid: dict = {}
        self._label: dict = {}
        self.terminal_evals = 0

        lib, schema = self.library, task.schema
        feats = schema.names
        fidx = {n: i for i, n in enumerate(feats)}
        n_a = lib.n_actions
        self._base = np.zeros(n_a)
        self._parents = np.zeros((n_a, len(feats)))
        self._target = np.full(n_a, -1)
        for i, a in enumerate(lib.actions):
            if a.is_stop:
                continue
            spec = lib[a.function]
            self._base[i] = spec.base_cost[a.argument]
            self._target[i] = fidx[spec.target]
            for p in task.graph.parents(spec.target):
                self._parents[i, fidx[p]] = 1.0
        self._thr = [
            (fidx[n], schema[n], task.cost_model._threshold_level[n])
            for n in task.cost_model._threshold_level
        ]
        self._fidx = fidx

    # ----------------------------------------------------------------- caches

    def new_episode(self):
        self._label = {}

    def bits(self, state: UserState) -> np.ndarray:
        b = self._bits.get(state)
        if b is None:
            b = self.task.encoder.encode(state)
            if len(self._bits) > 200_000:
                self._bits.clear()
            self._bits[state] = b
        return b

    def valid_mask(self, state: UserState) -> np.ndarray:
        m = self._valid.get(state)
        if m is None:
            m = self.library.mask(state)
            if len(self._valid) > 200_000:
                self._valid.clear()
            self._valid[state] = m
        return m

    def mask_at(self, state: UserState, depth: int) -> np.ndarray:
        if depth >= self.alpha:
            m = np.zeros(self.library.n_actions, dtype=bool)
            m[self.library.stop_index] = True
            return m
        return self.valid_mask(state)

    def label(self, state: UserState) -> bool:
        self.terminal_evals += 1
        y = self._label.get(state)
        if y is None:
            y = bool(self.predict(state))
            self._label[state] = y
        return y

    # ----------------------------------------------------------------- scores

    def improved(self, state: UserState, modified: frozenset) -> np.ndarray:
        imp = np.zeros(len(self._fidx))
        for i in modified:
            imp[i] = 1.0
        for i, feat, thr in self._thr:
            if feat.level(state.values[i]) >= thr:
                imp[i] = 1.0
        return imp

    def costs(self, state: UserState, modified: frozenset) -> np.ndarray:
        """Cost of every action in ``state`` given the features already modified."""
        n_imp = self._parents @ self.improved(state, modified)
        return self._base * self.task.cost_config.parent_discount ** n_imp

    def L_scores(self, state: UserState, modified: frozenset, func_counts: np.ndarray) -> np.ndarray:
        counts = func_counts[self.library.action_function]
        return np.exp(-(self.costs(state, modified) + self.beta * counts))


class SearchNode:
    """A state in the tree plus statistics for each outgoing action."""

    __slots__ = (
        "state", "ctrl", "depth", "modified", "func_counts", "terminal", "value",
        "expanded", "mask", "prior", "L", "N", "W", "children", "pi_f", "pi_x",
        "v", "ctrl_out", "fmask", "amask", "dead",
    )

    def __init__(self, state, ctrl, depth, modified, func_counts):
        self.state = state
        self.ctrl = ctrl
        self.depth = depth
        self.modified = modified
        self.func_counts = func_counts
        self.terminal = False
        self.value = 0.0
        self.expanded = False
        self.children: dict[int, SearchNode] = {}

    @property
    def visits(self) -> int:
        return int(self.N.sum()) if self.expanded else 0

    def Q(self) -> np.ndarray:
        return np.divide(self.W, self.N, out=np.zeros_like(self.W), where=self.N > 0)


def expand(node: SearchNode, agent: AgentNet, env: SearchEnv) -> float:
    node.mask = env.mask_at(node.state, node.depth)
    node.fmask, node.amask = env.masks.split(node.mask)
    pi_f, pi_x, v, ctrl_out = agent.forward(env.bits(node.state), node.ctrl, node.fmask, node.amask)
    node.pi_f, node.pi_x, node.v, node.ctrl_out = pi_f, pi_x, v, ctrl_out
    node.prior = env.masks.joint(pi_f, pi_x)
    node.L = np.where(node.mask, env.L_scores(node.state, node.modified, node.func_counts), 0.0)
    n = env.library.n_actions
    node.N = np.zeros(n)
    node.W = np.zeros(n)
    node.dead = np.zeros(n, dtype=bool)
    node.expanded = True
    return v


def uct_scores(node: SearchNode, c_puct: float) -> np.ndarray:
    total = node.N.sum()
    U = c_puct * node.prior * math.sqrt(total) / (1.0 + node.N)
    scores = node.Q() + U + node.L
    return np.where(node.mask & ~node.dead, scores, -np.inf)


def uct_select(node: SearchNode, c_puct: float) -> int:
    """Index of the child maximising Q + U + L (first index on ties).

    Children already proven to fail (see :func:`simulate`) are skipped.
    """
    if not node.expanded:
        raise DegenerateNodeError("node has not been expanded")
    if not (node.mask & ~node.dead).any():
        raise DegenerateNodeError("node has no valid children")
    return int(np.argmax(uct_scores(node, c_puct)))


def _child(node: SearchNode, idx: int, env: SearchEnv, origin_label: bool) -> SearchNode:
    lib = env.library
    action = lib.actions[idx]
    if action.is_stop:
        child = SearchNode(node.state, node.ctrl_out, node.depth, node.modified, node.func_counts)
        child.terminal = True
        flipped = env.label(node.state) != origin_label
        child.value = compute_reward(node.depth, flipped, env.lam)
        return child
    state = lib.apply_unchecked(node.state, action)
    counts = node.func_counts.copy()
    counts[lib.action_function[idx]] += 1
    modified = node.modified | {env._fidx[lib[action.function].target]}
    return SearchNode(state, node.ctrl_out, node.depth + 1, modified, counts)


def simulate(root: SearchNode, agent: AgentNet, env: SearchEnv, origin_label: bool):
    """One select / expand / evaluate / backup pass.

    A STOP that does not flip the classifier is a solved loss: its value is
    exact, so it is marked dead and never selected again. A node whose valid
    children are all dead is itself a solved loss for its parent.
    """
    if root.terminal:
        return
    node = root
    path = []
    while True:
        if node.terminal:
            value = node.value
            break
        if not node.expanded:
            value = expand(node, agent, env)
            break
        idx = uct_select(node, env.c_puct)
        path.append((node, idx))
        child = node.children.get(idx)
        if child is None:
            child = _child(node, idx, env, origin_label)
            node.children[idx] = child
        node = child
    solved_loss = node.terminal and node.value <= 0.0
    for n, idx in reversed(path):
        n.N[idx] += 1.0
        n.W[idx] += value
        if solved_loss:
            n.dead[idx] = True
            if (n.mask & ~n.dead).any():
                solved_loss = False
            else:
                n.terminal = True
                n.value = 0.0


def visit_distribution(visits: np.ndarray, tau: float) -> np.ndarray:
    visits = np.asarray(visits, dtype=float)
    if visits.sum() <= 0:
        raise ValueError("no visits at the root")
    if tau <= 1e-8:
        out = np.zeros_like(visits)
        out[int(np.argmax(visits))] = 1.0
        return out
    # rescale before the power to stay finite for small tau
    p = (visits / visits.max()) ** (1.0 / tau)
    return p / p.sum()


def improved_policy(root: SearchNode, masks: ActionMasks, tau: float = 1.0):
    """Visit-count policy at the root split into function and argument targets.

    Returns ``(pi_f, pi_x)`` with ``pi_f`` the function marginal and
    ``pi_x[f]`` the argument conditional (rows of unvisited functions are 0).
    """
    joint = visit_distribution(root.N, tau)
    pi_f = np.zeros(masks.n_functions)
    np.add.at(pi_f, masks.action_function, joint)
    pi_x = np.zeros((masks.n_functions, masks.n_args))
    pi_x[masks.action_function, masks.action_arg] = joint
    rows = pi_x.sum(axis=1, keepdims=True)
    pi_x = np.divide(pi_x, rows, out=np.zeros_like(pi_x), where=rows > 0)
    return pi_f, pi_x


@dataclass
class TraceStep:
    """Everything needed to replay one decision as a training example."""

    state: UserState
    next_state: UserState
    action: Action
    bits: np.ndarray
    ctrl: ControllerState
    fmask: np.ndarray
    amask: np.ndarray
    pi_f: np.ndarray
    pi_x: np.ndarray
    reward: float = 0.0


@dataclass
class InterventionTrace:
    root: UserState
    steps: list[TraceStep] = field(default_factory=list)
    success: bool = False
    reward: float = 0.0
    queries: int = 0
    terminal_evals: int = 0

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    @property
    def length(self) -> int:
        return sum(1 for s in self.steps if not s.action.is_stop)

    @property
    def states(self) -> list[UserState]:
        return [self.root] + [s.next_state for s in self.steps]


def run_episode(
    root_state: UserState,
    agent: AgentNet,
    env: SearchEnv,
    budget: int,
    tau: float = 1.0,
    rng: np.random.Generator | None = None,
    root_noise: tuple[float, float] | None = None,
) -> InterventionTrace:
    """Build one intervention, running ``budget`` simulations before each move.

    The subtree below the played action is kept for the next move. The
    episode ends on STOP or once ``alpha`` actions have been played (only
    STOP remains valid there); success means the classifier flipped.
    """
    if budget <= 0:
        raise SearchConfigError("budget must be positive")
    env.new_episode()
    evals0 = env.terminal_evals
    origin = env.label(root_state)
    trace = InterventionTrace(root_state)
    node = SearchNode(root_state, agent.initial_state(), 0, frozenset(),
                      np.zeros(len(env.library), dtype=float))
    expand(node, agent, env)
    while True:
        if root_noise is not None and rng is not None:
            _add_noise(node, rng, *root_noise)
        for _ in range(budget):
            simulate(node, agent, env, origin)
        if node.terminal:  # every continuation proven to fail
            idx = env.library.stop_index
            node.N[idx] = max(node.N[idx], 1.0)
        else:
            idx = _best_child(node)
        pi_f, pi_x = improved_policy(node, env.masks, tau)
        action = env.library.actions[idx]
        child = node.children.get(idx)
        if child is None:  # unreachable once budget >= 1, kept for safety
            child = _child(node, idx, env, origin)
        trace.steps.append(
            TraceStep(node.state, child.state, action, env.bits(node.state), node.ctrl,
                      node.fmask, node.amask, pi_f, pi_x)
        )
        if action.is_stop:
            trace.success = child.value > 0
            trace.reward = child.value
            break
        node = child
        if not node.expanded:
            expand(node, agent, env)
    for s in trace.steps:
        s.reward = trace.reward
    trace.queries = len(env._label)
    trace.terminal_evals = env.terminal_evals - evals0
    return trace


def _best_child(node: SearchNode) -> int:
    """Most visited live child; dead children only if nothing else is left."""
    live = node.mask & ~node.dead
    visits = np.where(live, node.N, -1.0)
    return int(np.argmax(visits))


def _add_noise(node: SearchNode, rng, alpha, frac):
    valid = np.flatnonzero(node.mask)
    noise = rng.dirichlet([alpha] * len(valid))
    prior = node.prior.copy()
    prior[valid] = (1 - frac) * prior[valid] + frac * noise
    node.prior = prior


def run_agent_only(root_state: UserState, agent: AgentNet, env: SearchEnv) -> InterventionTrace:
    """Greedy rollout of the agent's own policy, no search."""
    env.new_episode()
    origin = env.label(root_state)
    trace = InterventionTrace(root_state)
    state, ctrl, depth = root_state, agent.initial_state(), 0
    while True:
        mask = env.mask_at(state, depth)
        fmask, amask = env.masks.split(mask)
        pi_f, pi_x, _, ctrl_next = agent.forward(env.bits(state), ctrl, fmask, amask)
        action = select_action(pi_f, pi_x, env.library)
        nxt = env.library.apply_unchecked(state, action)
        trace.steps.append(TraceStep(state, nxt, action, env.bits(state), ctrl, fmask, amask, pi_f, pi_x))
        if action.is_stop:
            flipped = env.label(state) != origin
            trace.success = flipped
            trace.reward = compute_reward(depth, flipped, env.lam)
            break
        state, ctrl, depth = nxt, ctrl_next, depth + 1
    trace.queries = len(env._label)
    return trace


class ReplayBuffer:
    """Bounded FIFO of successful traces."""

    def __init__(self, capacity: int = 2000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[InterventionTrace] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, trace: InterventionTrace, verify: Callable[[InterventionTrace], bool] | None = None) -> bool:
        if not trace.success:
            return False
        if verify is not None and not verify(trace):
            return False
        self._items.append(trace)
        return True

    def sample(self, k: int, rng: np.random.Generator) -> list[InterventionTrace]:
        idx = rng.integers(0, len(self._items), size=min(k, len(self._items)))
        return [self._items[i] for i in idx]


def batch_steps(traces: Sequence[InterventionTrace]) -> list[TraceStep]:
    return [s for t in traces for s in t.steps]
