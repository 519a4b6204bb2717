"""Actions, preconditions and the function library (the DSL)."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .schema import FeatureSchema, SchemaError, UserState

STOP = "STOP"


class RejectedActionError(ValueError):
    """An action was applied to a state that violates its precondition."""


_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
}


@dataclass(frozen=True)
class Condition:
    """A literal ``feature op value``; categorical values compare by ordinal level."""

    feature: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS and self.op not in ("in", "not in"):
            raise SchemaError(f"unknown operator {self.op!r}")

    def holds(self, state: UserState) -> bool:
        feat = state.schema[self.feature]
        current = state[self.feature]
        if self.op in ("in", "not in"):
            inside = current in tuple(self.value)
            return inside if self.op == "in" else not inside
        if feat.is_categorical:
            return _OPS[self.op](feat.level(current), feat.level(self.value))
        return _OPS[self.op](float(current), float(self.value))

    def __str__(self):
        return f"{self.feature} {self.op} {self.value}"

    @classmethod
    def parse(cls, obj) -> "Condition":
        if isinstance(obj, Condition):
            return obj
        if isinstance(obj, Mapping):
            return cls(obj["feature"], obj["op"], obj["value"])
        feature, op, value = obj
        return cls(feature, op, value)


@dataclass(frozen=True)
class Action:
    function: str
    argument: Any = None

    @property
    def is_stop(self) -> bool:
        return self.function == STOP

    def __str__(self):
        return self.function if self.is_stop else f"{self.function}({self.argument})"


STOP_ACTION = Action(STOP, None)


@dataclass(frozen=True)
class RulePrecondition:
    """Declarative precondition used by config-built functions.

    * categorical targets never accept their current value; with
      ``monotone="increase"`` only higher levels are allowed
    * numeric targets must land inside the feature's ``[low, high]`` range
    * ``requires`` must hold for every argument; ``arg_requires[x]`` only
      for argument ``x``
    """

    target: str
    monotone: str | None = None
    requires: tuple[Condition, ...] = ()
    arg_requires: Mapping[Any, tuple[Condition, ...]] = field(default_factory=dict)

    def __call__(self, state: UserState, argument) -> bool:
        feat = state.schema[self.target]
        current = state[self.target]
        if feat.is_categorical:
            if argument == current:
                return False
            if self.monotone == "increase" and feat.level(argument) <= feat.level(current):
                return False
        else:
            new = float(current) + float(argument)
            if new < feat.low or new > feat.high:
                return False
        for cond in self.requires:
            if not cond.holds(state):
                return False
        for cond in self.arg_requires.get(argument, ()):
            if not cond.holds(state):
                return False
        return True


@dataclass(frozen=True)
class FunctionSpec:
    """A DSL function acting on a single feature.

    ``precondition(state, argument)`` decides applicability and ``base_cost``
    maps every argument to its effort before causal discounting.
    """

    name: str
    target: str | None
    arguments: tuple = ()
    base_cost: Mapping[Any, float] = field(default_factory=dict)
    precondition: Callable[[UserState, Any], bool] | None = None

    def __post_init__(self):
        if self.name == STOP:
            if self.arguments:
                raise SchemaError("STOP takes no arguments")
            return
        if not self.arguments:
            raise SchemaError(f"{self.name} has an empty argument domain")
        missing = [a for a in self.arguments if a not in self.base_cost]
        if missing:
            raise SchemaError(f"{self.name}: no base cost for {missing}")
        if any(self.base_cost[a] <= 0 for a in self.arguments):
            raise SchemaError(f"{self.name}: base costs must be positive")

    @property
    def is_stop(self) -> bool:
        return self.name == STOP

    def allows(self, state: UserState, argument) -> bool:
        if self.is_stop:
            return True
        if argument not in self.base_cost:
            return False
        if self.precondition is None:
            return RulePrecondition(self.target)(state, argument)
        return bool(self.precondition(state, argument))


STOP_SPEC = FunctionSpec(STOP, None)


class Library:
    """Ordered set of functions plus the flat action index used for masks.

    STOP is always present and always the last function. Action indices
    enumerate functions in order and, inside each, the argument domain.
    """

    def __init__(self, functions: Iterable[FunctionSpec], schema: FeatureSchema):
        funcs = [f for f in functions if not f.is_stop]
        names = [f.name for f in funcs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate function names")
        for f in funcs:
            if f.target not in schema:
                raise SchemaError(f"{f.name} targets unknown feature {f.target!r}")
            if f.target in schema.protected:
                raise SchemaError(f"{f.name} targets protected feature {f.target!r}")
            feat = schema[f.target]
            if feat.is_categorical:
                bad = [a for a in f.arguments if a not in feat.values]
                if bad:
                    raise SchemaError(f"{f.name}: arguments {bad} not in {feat.name!r}")
        self.schema = schema
        self.functions: list[FunctionSpec] = funcs + [STOP_SPEC]
        self.function_index = {f.name: i for i, f in enumerate(self.functions)}
        self.actions: list[Action] = []
        self.action_function: list[int] = []
        for i, f in enumerate(self.functions):
            args = (None,) if f.is_stop else f.arguments
            for a in args:
                self.actions.append(Action(f.name, a))
                self.action_function.append(i)
        self.action_index = {a: i for i, a in enumerate(self.actions)}
        self.stop_index = self.action_index[STOP_ACTION]
        self.action_function = np.asarray(self.action_function)

        # union argument vocabulary; STOP owns the ``None`` token
        vocab: list = []
        seen = set()
        for a in self.actions:
            tok = _token(a.argument)
            if tok not in seen:
                seen.add(tok)
                vocab.append(tok)
        self.arg_vocab = vocab
        tok_index = {t: i for i, t in enumerate(vocab)}
        self.action_arg = np.asarray([tok_index[_token(a.argument)] for a in self.actions])

    def __len__(self):
        return len(self.functions)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def __getitem__(self, name: str) -> FunctionSpec:
        try:
            return self.functions[self.function_index[name]]
        except KeyError:
            raise SchemaError(f"unknown function {name!r}") from None

    def spec_of(self, action: Action) -> FunctionSpec:
        return self[action.function]

    def index_of(self, action: Action) -> int:
        try:
            return self.action_index[action]
        except KeyError:
            raise SchemaError(f"{action} is not in the library") from None

    def check_precondition(self, state: UserState, action: Action) -> bool:
        spec = self[action.function]
        if not spec.is_stop and action.argument not in spec.base_cost:
            raise SchemaError(f"{action.argument!r} not in the domain of {spec.name}")
        return spec.allows(state, action.argument)

    def apply(self, state: UserState, action: Action) -> UserState:
        if not self.check_precondition(state, action):
            raise RejectedActionError(f"precondition of {action} fails")
        return self.apply_unchecked(state, action)

    def apply_unchecked(self, state: UserState, action: Action) -> UserState:
        if action.is_stop:
            return state
        spec = self[action.function]
        feat = self.schema[spec.target]
        if feat.is_categorical:
            return state.replace(spec.target, action.argument)
        return state.replace(spec.target, float(state[spec.target]) + float(action.argument))

    def mask(self, state: UserState) -> np.ndarray:
        """Boolean vector over action indices; STOP always set."""
        m = np.zeros(len(self.actions), dtype=bool)
        for i, a in enumerate(self.actions):
            m[i] = self.functions[self.action_function[i]].allows(state, a.argument)
        return m

    def valid_actions(self, state: UserState) -> list[Action]:
        return [a for a, ok in zip(self.actions, self.mask(state)) if ok]

    def target_of(self, action: Action) -> str | None:
        return self[action.function].target


def _token(argument):
    if argument is None:
        return ("none", None)
    if isinstance(argument, str):
        return ("cat", argument)
    return ("num", float(argument))


def check_precondition(state: UserState, action: Action, library: Library) -> bool:
    return library.check_precondition(state, action)


def apply_action(state: UserState, action: Action, library: Library) -> UserState:
    return library.apply(state, action)


def valid_actions(state: UserState, library: Library) -> list[Action]:
    return library.valid_actions(state)


def replay(state: UserState, actions: Sequence[Action], library: Library) -> list[UserState]:
    """States visited by ``actions`` starting from ``state`` (inclusive)."""
    states = [state]
    for a in actions:
        state = library.apply(state, a)
        states.append(state)
    return states
