import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synrecourse.data import sample_synthetic
from synrecourse.distill import (
    INTERVENE,
    BitDecisionTree,
    ExplainableProgram,
    InsufficientTracesError,
    ProgramDistiller,
    build_automaton,
    sample_traces,
    sequence_similarity,
    train_program,
)
from synrecourse.dsl import STOP_ACTION, Action
from synrecourse.recourse import RecourseAgent
from synrecourse.schema import SchemaError

SKILL_MID = Action("CHANGE_SKILL", "mid")
PAY_5 = Action("CHANGE_PAY", 5.0)
PAY_10 = Action("CHANGE_PAY", 10.0)


def test_single_trace_program(tiny):
    user = tiny.state({"skill": "low", "pay": 25})
    prog = train_program(build_automaton([(user, [SKILL_MID, STOP_ACTION])], tiny))
    assert prog.nodes[INTERVENE].constant == SKILL_MID
    assert prog.nodes["CHANGE_SKILL"].constant == STOP_ACTION
    run = prog.run(user)
    assert run.completed and run.actions == [SKILL_MID, STOP_ACTION]
    assert tiny.label(run.final_state)
    assert [str(r) for r in run.rules] == ["true", "true"]


def test_unvisited_nodes_are_not_runnable(tiny):
    user = tiny.state({"skill": "low", "pay": 25})
    prog = train_program(build_automaton([(user, [SKILL_MID, STOP_ACTION])], tiny))
    assert set(prog.runnable_nodes()) == {INTERVENE, "CHANGE_SKILL"}
    assert not prog.nodes["CHANGE_PAY"].trained
    assert prog.to_dict()["nodes"]["CHANGE_PAY"] == {"pairs": 0, "arcs": []}


def test_diverging_traces_split_on_state(tiny):
    low = tiny.state({"skill": "low", "pay": 25})
    mid = tiny.state({"skill": "mid", "pay": 12})
    traces = [(low, [SKILL_MID, STOP_ACTION]), (mid, [PAY_10, STOP_ACTION])]
    prog = train_program(build_automaton(traces, tiny))
    node = prog.nodes[INTERVENE]
    assert node.arcs == {"CHANGE_SKILL", "CHANGE_PAY"}
    assert node.tree is not None and node.tree.get_depth() == 1
    for user, actions in traces:
        run = prog.run(user)
        assert run.actions == actions
        assert run.rules[0].holds(user, tiny.encoder)
        assert "skill" in str(run.rules[0])


def test_rules_hold_on_their_own_states(syn):
    rng = np.random.default_rng(0)
    users = [u for u in sample_synthetic(syn, 200, seed=1).rows if not syn.label(u)][:40]
    traces = []
    for u in users:
        state, actions = u, []
        for _ in range(2):
            valid = [a for a in syn.library.valid_actions(state) if not a.is_stop]
            a = valid[rng.integers(len(valid))]
            actions.append(a)
            state = syn.library.apply(state, a)
        traces.append((u, actions + [STOP_ACTION]))
    prog = train_program(build_automaton(traces, syn), max_depth=3)
    for u, _ in traces:
        run = prog.run(u)
        for state, rule in zip(run.states, run.rules):
            assert rule.holds(state, syn.encoder)
            assert len(rule.literals) <= 3


def test_program_reaching_alpha_fails(tiny):
    user = tiny.state({"skill": "mid", "pay": 0})
    prog = train_program(build_automaton([(user, [PAY_5, PAY_5, STOP_ACTION])], tiny))
    assert prog.run(user, alpha=10).actions == [PAY_5, PAY_5, STOP_ACTION]
    run = prog.run(user, alpha=1)
    assert not run.completed
    assert run.failure == "maximum length exceeded"
    assert run.length == 1


def test_infeasible_step_is_reported(tiny):
    user = tiny.state({"skill": "low", "pay": 25})
    prog = train_program(build_automaton([(user, [SKILL_MID, STOP_ACTION])], tiny))
    run = prog.run(tiny.state({"skill": "high", "pay": 0}))
    assert not run.completed and run.failure.startswith("infeasible")


def test_unknown_function_in_trace(tiny):
    prog = ExplainableProgram(tiny)
    with pytest.raises(SchemaError):
        prog.add_trace(tiny.state({"skill": "low", "pay": 0}), [Action("CHANGE_HAT", "red")])


def test_empty_trace_list_rejected(tiny):
    with pytest.raises(ValueError):
        build_automaton([], tiny)


def test_tree_tie_goes_to_smallest_label():
    X = np.zeros((2, 3))
    tree = BitDecisionTree().fit(X, ["B", "A"])
    assert tree.predict(X[:1]) == ["A"]
    assert tree.get_depth() == 0


def test_tree_separable_depth_one():
    X = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1], [0, 1, 1]])
    tree = BitDecisionTree().fit(X, ["x", "x", "y", "y"])
    assert tree.get_depth() == 1
    assert tree.predict(X) == ["x", "x", "y", "y"]
    assert tree.root_.bit == 0


def test_tree_respects_max_depth():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (300, 10))
    y = [str(v) for v in rng.integers(0, 5, 300)]
    assert BitDecisionTree(max_depth=2).fit(X, y).get_depth() <= 2


def test_similarity_examples():
    assert sequence_similarity("ABC", "AC") == pytest.approx(2 / 3)
    assert sequence_similarity("ABC", "ABC") == 1.0
    assert sequence_similarity("AB", "CD") == 0.0
    assert sequence_similarity([], []) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("ABCD"), max_size=8), st.lists(st.sampled_from("ABCD"), max_size=8))
def test_similarity_bounds_and_symmetry(a, b):
    s = sequence_similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == sequence_similarity(b, a)
    assert (s == 1.0) == (a == b)


def test_save_load_roundtrip(tmp_path, tiny):
    low = tiny.state({"skill": "low", "pay": 25})
    mid = tiny.state({"skill": "mid", "pay": 12})
    prog = train_program(build_automaton([(low, [SKILL_MID, STOP_ACTION]),
                                          (mid, [PAY_10, STOP_ACTION])], tiny))
    prog.save(tmp_path / "p.json")
    back = ExplainableProgram.load(tmp_path / "p.json")
    for u in (low, mid, tiny.state({"skill": "high", "pay": 0})):
        a, b = prog.run(u), back.run(u)
        assert a.actions == b.actions
        assert [str(r) for r in a.rules] == [str(r) for r in b.rules]


def test_bad_format_version(tiny):
    with pytest.raises(ValueError):
        ExplainableProgram.from_dict({"version": 99, "nodes": {}}, tiny)


def _trained_tiny_agent(tiny):
    users = [tiny.state({"skill": s, "pay": p}) for s in ("low", "mid") for p in (0, 5, 10, 15)]
    est = RecourseAgent(tiny, episodes=40, train_budget=30, embedding=8, hidden=8, seed=0)
    return est.fit(users), users


def test_distiller_never_queries_at_predict_time(tiny):
    est, users = _trained_tiny_agent(tiny)
    dist = ProgramDistiller(est, n_traces=20, budget=10).fit(users)
    assert len(dist.traces_) == 20
    assert est.counter_.counts["distill-train"] > 0
    runs = dist.predict(users)
    assert len(runs) == len(users)
    assert est.counter_.counts["distill-predict"] == 0
    for run in runs:
        assert all(isinstance(e["rule"], str) for e in run.explanation())


def test_insufficient_traces(tiny):
    est, _ = _trained_tiny_agent(tiny)
    with pytest.raises(InsufficientTracesError):
        sample_traces(est, [], 5)
    favourable = [tiny.state({"skill": "high", "pay": 30})]
    with pytest.raises(InsufficientTracesError):
        sample_traces(est, favourable, 5)


def test_distiller_requires_agent(tiny):
    with pytest.raises(ValueError):
        ProgramDistiller().fit([tiny.state({"skill": "low", "pay": 0})])
