"""Causal graph over features and the consequence-aware cost model."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Any, Iterable, Mapping, Sequence

from .dsl import Action, Library, RejectedActionError
from .schema import FeatureSchema, SchemaError, UserState


class InfeasibleInterventionError(ValueError):
    """Some action in an intervention violates its precondition."""


class CausalGraph:
    """Directed acyclic graph whose nodes are feature names."""

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]] = ()):
        self.nodes = list(dict.fromkeys(nodes))
        self.edges = [tuple(e) for e in edges]
        node_set = set(self.nodes)
        for u, v in self.edges:
            if u not in node_set or v not in node_set:
                raise SchemaError(f"edge {u}->{v} references unknown node")
        self._parents = {n: [] for n in self.nodes}
        for u, v in self.edges:
            self._parents[v].append(u)
        try:
            self.order = list(TopologicalSorter(self._parents).static_order())
        except CycleError as exc:
            raise SchemaError(f"causal graph has a cycle: {exc.args[1]}") from None

    def parents(self, node: str) -> list[str]:
        return self._parents.get(node, [])

    def check_schema(self, schema: FeatureSchema):
        missing = set(self.nodes) - set(schema.names)
        if missing:
            raise SchemaError(f"graph nodes not in schema: {sorted(missing)}")

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class CostConfig:
    """Knobs of the cost model.

    parent_discount
        multiplier applied once per already-improved parent of the target.
    improved_at
        feature -> threshold; a parent at or above it counts as improved even
        if the episode never touched it.
    """

    parent_discount: float = 0.5
    improved_at: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.parent_discount <= 1.0:
            raise SchemaError("parent_discount must lie in (0, 1]")


class CostModel:
    """C(a, s): base cost times ``gamma`` for every improved causal parent."""

    def __init__(self, library: Library, graph: CausalGraph, config: CostConfig | None = None):
        self.library = library
        self.graph = graph
        self.config = config or CostConfig()
        graph.check_schema(library.schema)
        self._threshold_level = {}
        for name, value in self.config.improved_at.items():
            self._threshold_level[name] = library.schema[name].level(value)

    def is_improved(self, state: UserState, feature: str, modified: Iterable[str]) -> bool:
        if feature in modified:
            return True
        thr = self._threshold_level.get(feature)
        return thr is not None and state.level(feature) >= thr

    def action_cost(
        self, state: UserState, action: Action, history: Sequence[Action] = ()
    ) -> float:
        if action.is_stop:
            return 0.0
        spec = self.library[action.function]
        modified = {self.library.target_of(a) for a in history if not a.is_stop}
        cost = float(spec.base_cost[action.argument])
        for p in self.graph.parents(spec.target):
            if self.is_improved(state, p, modified):
                cost *= self.config.parent_discount
        return cost

    def step_costs(self, state: UserState, actions: Sequence[Action]) -> list[float]:
        costs = []
        for t, a in enumerate(actions):
            if not self.library.check_precondition(state, a):
                raise InfeasibleInterventionError(f"step {t}: precondition of {a} fails")
            costs.append(self.action_cost(state, a, actions[:t]))
            state = self.library.apply_unchecked(state, a)
        return costs

    def intervention_cost(self, state: UserState, actions: Sequence[Action]) -> float:
        return float(sum(self.step_costs(state, actions)))

    def cheapest_order(
        self, state: UserState, actions: Sequence[Action]
    ) -> tuple[list[Action], float]:
        """Cheapest feasible reordering that reaches the same final state.

        Assignments to the same categorical feature keep their relative
        order, so every subset of actions taken has one well-defined state.
        Exact dynamic programme over those subsets.
        """
        body = [a for a in actions if not a.is_stop]
        tail = [a for a in actions if a.is_stop]
        base_cost = self.intervention_cost(state, actions)
        if len(body) < 2:
            return list(actions), base_cost
        n = len(body)
        before = self._required_predecessors(body)
        states = {0: state}
        best = {0: (0.0, ())}
        # subsets in order of size so predecessors are always final
        for size in range(n):
            for subset in _subsets_of_size(n, size):
                if subset not in best:
                    continue
                cost_so_far, order = best[subset]
                s = states[subset]
                hist = [body[i] for i in order]
                for j in range(n):
                    if subset >> j & 1 or before[j] & ~subset:
                        continue
                    a = body[j]
                    if not self.library.check_precondition(s, a):
                        continue
                    c = cost_so_far + self.action_cost(s, a, hist)
                    nxt = subset | (1 << j)
                    prev = best.get(nxt)
                    if prev is None or c < prev[0] - 1e-12:
                        best[nxt] = (c, order + (j,))
                        states[nxt] = self.library.apply_unchecked(s, a)
        full = (1 << n) - 1
        if full not in best or best[full][0] >= base_cost - 1e-12:
            return list(actions), base_cost
        cost, order = best[full]
        return [body[i] for i in order] + tail, cost

    def _required_predecessors(self, body: Sequence[Action]) -> list[int]:
        """Bitmask per action of earlier actions assigning the same categorical."""
        out, last = [], {}
        for j, a in enumerate(body):
            target = self.library.target_of(a)
            mask = 0
            if self.library.schema[target].is_categorical:
                mask = out[last[target]] | (1 << last[target]) if target in last else 0
                last[target] = j
            out.append(mask)
        return out


def _subsets_of_size(n: int, k: int):
    for combo in itertools.combinations(range(n), k):
        m = 0
        for i in combo:
            m |= 1 << i
        yield m


def action_cost(state, action, library, graph, cfg, history=()) -> float:
    return CostModel(library, graph, cfg).action_cost(state, action, history)


def intervention_cost(state, actions, library, graph, cfg) -> float:
    return CostModel(library, graph, cfg).intervention_cost(state, actions)


__all__ = [
    "CausalGraph",
    "CostConfig",
    "CostModel",
    "InfeasibleInterventionError",
    "RejectedActionError",
    "action_cost",
    "intervention_cost",
]
