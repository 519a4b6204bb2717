"""Declarative task configs: schema, DSL, causal graph, costs, generator, label.

A task file is YAML (JSON also parses). Shipped tasks live in
``synrecourse/configs`` and load by name (``load_task("syn")``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .causal import CausalGraph, CostConfig, CostModel
from .dsl import Action, Condition, FunctionSpec, Library, RulePrecondition
from .encoding import BinaryEncoder
from .schema import Feature, FeatureSchema, SchemaError, UserState


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabelFormula:
    """Favourable iff the weighted count of satisfied literals reaches ``threshold``."""

    terms: tuple[tuple[Condition, float], ...]
    threshold: float

    def __call__(self, state: UserState) -> bool:
        score = 0.0
        for cond, w in self.terms:
            if cond.holds(state):
                score += w
        return score >= self.threshold - 1e-9

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "terms": [
                {"feature": c.feature, "op": c.op, "value": c.value, "weight": w}
                for c, w in self.terms
            ],
        }


@dataclass
class NodeModel:
    """Conditional distribution of one feature given its causal parents.

    Parent influence enters through the parent's normalised level in [0, 1]:
    for categorical nodes it tilts the logits toward higher levels, for
    numeric nodes it shifts the mean.
    """

    probs: tuple | None = None
    mean: float = 0.0
    std: float = 1.0
    round: float | None = None
    parents: Mapping[str, float] = field(default_factory=dict)


@dataclass
class RecourseTask:
    name: str
    schema: FeatureSchema
    library: Library
    graph: CausalGraph
    cost_config: CostConfig
    generative: dict[str, NodeModel] = field(default_factory=dict)
    label: LabelFormula | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.cost_model = CostModel(self.library, self.graph, self.cost_config)
        self.encoder = BinaryEncoder(self.schema)

    @property
    def n_functions(self) -> int:
        return len(self.library)

    def state(self, values) -> UserState:
        return self.schema.state(values)

    def action(self, function: str, argument=None) -> Action:
        spec = self.library[function]
        if not spec.is_stop and argument not in spec.base_cost:
            raise SchemaError(f"{argument!r} not in the domain of {function}")
        return Action(function, argument)

    def normalised_level(self, state: UserState, name: str) -> float:
        f = self.schema[name]
        if f.is_categorical:
            return f.level(state[name]) / max(1, len(f.values) - 1)
        lo, hi = f.low, f.high
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi == lo:
            return float(state[name])
        return (float(state[name]) - lo) / (hi - lo)


def _feature(obj: Mapping) -> Feature:
    kind = obj.get("kind", "categorical")
    if kind == "categorical":
        return Feature(obj["name"], kind, values=tuple(obj["values"]))
    return Feature(
        obj["name"],
        kind,
        bins=tuple(float(b) for b in obj.get("bins", ())),
        low=float(obj.get("low", -math.inf)),
        high=float(obj.get("high", math.inf)),
    )


def _coerce_arg(feature: Feature, value):
    return feature.parse(value) if not feature.is_categorical else value


def _function(obj: Mapping, schema: FeatureSchema) -> FunctionSpec:
    name, target = obj["name"], obj["target"]
    if target not in schema:
        raise ConfigError(f"{name}: unknown target {target!r}")
    feat = schema[target]
    args = tuple(_coerce_arg(feat, a) for a in obj["arguments"])
    costs = obj.get("costs", 1.0)
    if isinstance(costs, Mapping):
        base = {_coerce_arg(feat, k): float(v) for k, v in costs.items()}
    elif isinstance(costs, (list, tuple)):
        if len(costs) != len(args):
            raise ConfigError(f"{name}: {len(costs)} costs for {len(args)} arguments")
        base = {a: float(c) for a, c in zip(args, costs)}
    else:
        base = {a: float(costs) for a in args}
    arg_req = {
        _coerce_arg(feat, k): tuple(Condition.parse(c) for c in v)
        for k, v in (obj.get("arg_requires") or {}).items()
    }
    pre = RulePrecondition(
        target,
        monotone=obj.get("monotone"),
        requires=tuple(Condition.parse(c) for c in obj.get("requires") or ()),
        arg_requires=arg_req,
    )
    for conds in [pre.requires, *arg_req.values()]:
        for c in conds:
            if c.feature not in schema:
                raise ConfigError(f"{name}: condition on unknown feature {c.feature!r}")
    return FunctionSpec(name, target, args, base, pre)


def task_from_dict(cfg: Mapping[str, Any]) -> RecourseTask:
    try:
        features = tuple(_feature(f) for f in cfg["features"])
        schema = FeatureSchema(features, frozenset(cfg.get("protected", ())))
        library = Library([_function(f, schema) for f in cfg["functions"]], schema)
        g = cfg.get("graph") or {}
        graph = CausalGraph(g.get("nodes", schema.names), g.get("edges", ()))
        c = cfg.get("cost") or {}
        cost_cfg = CostConfig(float(c.get("parent_discount", 0.5)), dict(c.get("improved_at") or {}))
        generative = {}
        for node, spec in (cfg.get("generative") or {}).items():
            if node not in schema:
                raise ConfigError(f"generative spec for unknown feature {node!r}")
            unknown_parents = set(spec.get("parents") or {}) - set(graph.parents(node))
            if unknown_parents:
                raise ConfigError(f"{node}: generative parents {sorted(unknown_parents)} are not graph parents")
            generative[node] = NodeModel(
                probs=tuple(spec["probs"]) if "probs" in spec else None,
                mean=float(spec.get("mean", 0.0)),
                std=float(spec.get("std", 1.0)),
                round=spec.get("round"),
                parents=dict(spec.get("parents") or {}),
            )
        label = None
        if cfg.get("label"):
            lab = cfg["label"]
            terms = tuple(
                (Condition(t["feature"], t["op"], t["value"]), float(t.get("weight", 1.0)))
                for t in lab["terms"]
            )
            for cnd, _ in terms:
                if cnd.feature not in schema:
                    raise ConfigError(f"label references unknown feature {cnd.feature!r}")
            label = LabelFormula(terms, float(lab["threshold"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed task config: {exc!r}") from exc
    except SchemaError as exc:
        raise ConfigError(str(exc)) from exc
    return RecourseTask(cfg.get("name", "task"), schema, library, graph, cost_cfg, generative, label, dict(cfg))


def shipped_tasks() -> list[str]:
    root = resources.files("synrecourse") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_task(source: str | Path | Mapping) -> RecourseTask:
    """Load a task from a mapping, a file path, or a shipped config name."""
    if isinstance(source, Mapping):
        return task_from_dict(source)
    path = Path(source)
    if not path.exists():
        name = str(source)
        res = resources.files("synrecourse") / "configs" / f"{name}.yaml"
        if not res.is_file():
            raise ConfigError(f"no task file or shipped config named {name!r}")
        text = res.read_text()
    else:
        text = path.read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse task config: {exc}") from exc
    if not isinstance(cfg, Mapping):
        raise ConfigError("task config must be a mapping")
    return task_from_dict(cfg)


def sample_node(model: NodeModel, feature: Feature, shift: float, rng: np.random.Generator):
    if feature.is_categorical:
        k = len(feature.values)
        base = np.asarray(model.probs if model.probs else [1.0] * k, dtype=float)
        if base.size != k:
            raise ConfigError(f"{feature.name}: {base.size} probabilities for {k} values")
        logits = np.log(base / base.sum()) + shift * np.arange(k) / max(1, k - 1)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        return feature.values[int(rng.choice(k, p=p))]
    value = model.mean + shift + model.std * rng.standard_normal()
    value = float(np.clip(value, feature.low, feature.high))
    if model.round:
        value = float(np.round(value / model.round) * model.round)
        value = float(np.clip(value, feature.low, feature.high))
    return value
