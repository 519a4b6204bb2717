"""Distilling the agent into an automaton of per-function decision trees.

Nodes are INTERVENE (start), one per library function, and the STOP sink.
Unrolling a trace ``s0 -a1-> s1 -a2-> ... -> STOP`` stores ``(s0, a1)`` at
INTERVENE, ``(s1, a2)`` at the node of ``a1``'s function, and so on. Each
node then learns "state -> next action" with a decision tree, or a constant
arc when all its stored decisions agree. Running the program never touches
the classifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..dsl import STOP, Action, Library
from ..encoding import BinaryEncoder
from ..schema import SchemaError, UserState
from ..task import RecourseTask, load_task
from .tree import BitDecisionTree, TreeNode

INTERVENE = "INTERVENE"
PROGRAM_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Rule:
    """Conjunction of bit literals, rendered as feature-level propositions."""

    literals: tuple[tuple[int, bool], ...]
    text: tuple[str, ...]

    def holds_bits(self, bits: np.ndarray) -> bool:
        return all((bits[j] > 0.5) == v for j, v in self.literals)

    def holds(self, state: UserState, encoder: BinaryEncoder) -> bool:
        return self.holds_bits(encoder.encode(state))

    def __str__(self):
        return " AND ".join(self.text) if self.text else "true"


def extract_rule(tree: BitDecisionTree | None, bits: np.ndarray, encoder: BinaryEncoder) -> Rule:
    """The root-to-leaf tests taken by ``bits``; an empty rule for constant nodes."""
    if tree is None:
        return Rule((), ())
    _, path = tree.decision_path(bits)
    literals = tuple((j, v) for j, v in path)
    return Rule(literals, tuple(encoder.bits_[j].describe(v) for j, v in literals))


@dataclass
class AutomatonNode:
    name: str
    states: list[UserState] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    tree: BitDecisionTree | None = None
    constant: Action | None = None

    @property
    def arcs(self) -> set[str]:
        return {a.function for a in self.actions}

    @property
    def trained(self) -> bool:
        return self.tree is not None or self.constant is not None

    def decide(self, bits: np.ndarray) -> Action:
        if self.constant is not None:
            return self.constant
        return self.tree.decision_path(bits)[0]


@dataclass
class ProgramRun:
    """Result of executing the program on one user (no classifier involved)."""

    user: UserState
    actions: list[Action]
    rules: list[Rule]
    states: list[UserState]
    completed: bool  # reached STOP
    failure: str | None = None

    @property
    def final_state(self) -> UserState:
        return self.states[-1]

    @property
    def length(self) -> int:
        return sum(1 for a in self.actions if not a.is_stop)

    def explanation(self) -> list[dict]:
        return [
            {"action": a.function, "argument": a.argument, "rule": str(r)}
            for a, r in zip(self.actions, self.rules)
        ]


class ExplainableProgram:
    """Automaton over library functions; frozen once trained."""

    def __init__(self, task: RecourseTask, nodes: dict[str, AutomatonNode] | None = None):
        self.task = task
        if nodes is None:
            nodes = {INTERVENE: AutomatonNode(INTERVENE)}
            for f in task.library.functions:
                nodes[f.name] = AutomatonNode(f.name)
        self.nodes = nodes

    @property
    def library(self) -> Library:
        return self.task.library

    def runnable_nodes(self) -> list[str]:
        return [n for n, node in self.nodes.items() if n != STOP and node.trained]

    # ----------------------------------------------------------------- build

    def add_trace(self, root: UserState, actions: Sequence[Action]):
        current = INTERVENE
        state = root
        for a in actions:
            if a.function not in self.library.function_index:
                raise SchemaError(f"trace uses unknown function {a.function!r}")
            node = self.nodes[current]
            node.states.append(state)
            node.actions.append(a)
            if a.is_stop:
                break
            state = self.library.apply_unchecked(state, a)
            current = a.function

    def fit_nodes(self, max_depth: int = 6) -> "ExplainableProgram":
        enc = self.task.encoder
        for name, node in self.nodes.items():
            if name == STOP or not node.actions:
                continue
            labels = set(node.actions)
            if len(labels) == 1:
                node.constant = node.actions[0]
                node.tree = None
            else:
                X = np.stack([enc.encode(s) for s in node.states])
                node.tree = BitDecisionTree(max_depth=max_depth).fit(X, node.actions)
                node.constant = None
        return self

    # ----------------------------------------------------------------- run

    def run(self, state: UserState, alpha: int = 10) -> ProgramRun:
        """Walk from INTERVENE until STOP, an infeasible step, or ``alpha`` actions."""
        enc = self.task.encoder
        lib = self.library
        current = INTERVENE
        actions, rules, states = [], [], [state]
        while True:
            node = self.nodes.get(current)
            if node is None or not node.trained:
                return ProgramRun(state, actions, rules, states, False, f"no transition out of {current}")
            bits = enc.encode(states[-1])
            action = node.decide(bits)
            rule = extract_rule(node.tree, bits, enc)
            if action.is_stop:
                actions.append(action)
                rules.append(rule)
                return ProgramRun(state, actions, rules, states, True)
            if len(actions) >= alpha:
                return ProgramRun(state, actions, rules, states, False, "maximum length exceeded")
            if not lib.check_precondition(states[-1], action):
                actions.append(action)
                rules.append(rule)
                return ProgramRun(state, actions, rules, states, False, f"infeasible step {action}")
            actions.append(action)
            rules.append(rule)
            states.append(lib.apply_unchecked(states[-1], action))
            current = action.function

    # ----------------------------------------------------------------- io

    def to_dict(self) -> dict:
        def enc_action(a: Action):
            return [a.function, a.argument]

        nodes = {}
        for name, node in self.nodes.items():
            if name == STOP:
                continue
            entry: dict[str, Any] = {"pairs": len(node.actions), "arcs": sorted(node.arcs)}
            if node.constant is not None:
                entry["constant"] = enc_action(node.constant)
            elif node.tree is not None:
                entry["tree"] = node.tree.root_.to_dict(enc_action)
            nodes[name] = entry
        return {"version": PROGRAM_FORMAT_VERSION, "task": self.task.raw, "nodes": nodes}

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, d: dict, task: RecourseTask | None = None) -> "ExplainableProgram":
        if d.get("version") != PROGRAM_FORMAT_VERSION:
            raise ValueError(f"unsupported program format {d.get('version')}")
        task = task or load_task(d["task"])
        lib = task.library

        def dec_action(v) -> Action:
            f, x = v
            if f == STOP:
                return Action(STOP, None)
            spec = lib[f]
            if spec.target and not task.schema[spec.target].is_categorical:
                x = float(x)
            return Action(f, x)

        prog = cls(task)
        for name, entry in d["nodes"].items():
            node = prog.nodes.setdefault(name, AutomatonNode(name))
            if "constant" in entry:
                node.constant = dec_action(entry["constant"])
            elif "tree" in entry:
                tree = BitDecisionTree()
                tree.root_ = TreeNode.from_dict(entry["tree"], dec_action)
                node.tree = tree
        return prog

    @classmethod
    def load(cls, path: str | Path, task: RecourseTask | None = None) -> "ExplainableProgram":
        return cls.from_dict(json.loads(Path(path).read_text()), task)


def build_automaton(traces: Sequence[tuple[UserState, Sequence[Action]]], task: RecourseTask) -> ExplainableProgram:
    """Raw automaton holding the stored (state, action) pairs; no trees yet."""
    if not traces:
        raise ValueError("need at least one trace")
    prog = ExplainableProgram(task)
    for root, actions in traces:
        prog.add_trace(root, actions)
    return prog


def train_program(raw: ExplainableProgram, max_depth: int = 6) -> ExplainableProgram:
    return raw.fit_nodes(max_depth)


def run_program(program: ExplainableProgram, state: UserState, alpha: int = 10) -> ProgramRun:
    return program.run(state, alpha)


def sequence_similarity(a: Sequence, b: Sequence) -> float:
    """1 - Levenshtein(a, b) / max(len(a), len(b)) over action tokens."""
    a, b = list(a), list(b)
    if not a and not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))
