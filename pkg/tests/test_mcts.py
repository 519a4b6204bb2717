import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synrecourse.agent import AgentNet
from synrecourse.blackbox import FormulaBlackBox, QueryCounter
from synrecourse.data import sample_synthetic
from synrecourse.dsl import STOP_ACTION
from synrecourse.mcts import (
    InterventionTrace,
    ReplayBuffer,
    SearchConfigError,
    SearchEnv,
    SearchNode,
    compute_L,
    compute_reward,
    expand,
    run_agent_only,
    run_episode,
    simulate,
    visit_distribution,
)
from synrecourse.recourse import RecourseAgent, generate_intervention


def make_env(task, **kw):
    counter = QueryCounter(FormulaBlackBox(task.label))
    return SearchEnv(task, counter.predict, **kw), counter


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 30))
def test_reward_strictly_decreasing_in_length(lam, T):
    assert compute_reward(T, True, lam) > compute_reward(T + 1, True, lam)
    assert 0.0 < compute_reward(T, True, lam) <= 1.0
    assert compute_reward(T, False, lam) == 0.0


@pytest.mark.parametrize("lam", [0.0, 1.0, -0.5, 1.5])
def test_reward_rejects_bad_lambda(lam):
    with pytest.raises(SearchConfigError):
        compute_reward(1, True, lam)


def test_L_score_values():
    assert compute_L(0.0, 0) == 1.0
    assert compute_L(1.0, 2, beta=1.0) == pytest.approx(np.exp(-3.0))
    assert compute_L(1.0, 2, beta=0.0) == pytest.approx(np.exp(-1.0))


def test_visit_distribution_temperatures():
    v = np.array([1.0, 3.0, 0.0, 6.0])
    np.testing.assert_allclose(visit_distribution(v, 1.0), v / 10)
    np.testing.assert_array_equal(visit_distribution(v, 0.0), [0, 0, 0, 1])
    with pytest.raises(ValueError):
        visit_distribution(np.zeros(3), 1.0)


def test_budget_must_be_positive(tiny):
    env, _ = make_env(tiny)
    agent = AgentNet.for_library(tiny.library, tiny.encoder.width)
    with pytest.raises(SearchConfigError):
        run_episode(tiny.state({"skill": "low", "pay": 0}), agent, env, 0)


def test_tree_statistics_invariants(syn):
    env, _ = make_env(syn)
    agent = AgentNet.for_library(syn.library, syn.encoder.width, seed=2)
    user = _unfavourable(syn, 1)[0]
    root = SearchNode(user, agent.initial_state(), 0, frozenset(), np.zeros(len(syn.library)))
    expand(root, agent, env)
    origin = env.label(user)
    for _ in range(150):
        simulate(root, agent, env, origin)
    _check_node(root)
    assert root.N.sum() == 150


def _check_node(node):
    if not node.expanded or node.terminal:
        return
    q = node.Q()
    assert np.all((q >= 0) & (q <= 1))
    assert np.all(node.N[~node.mask] == 0)
    for idx, child in node.children.items():
        if child.expanded and not child.terminal:
            # every visit through a child except its own expansion descends further
            assert child.N.sum() == node.N[idx] - 1
        _check_node(child)


def test_one_step_flip_is_found(tiny):
    env, _ = make_env(tiny)
    agent = AgentNet.for_library(tiny.library, tiny.encoder.width)
    user = tiny.state({"skill": "mid", "pay": 15})
    trace = run_episode(user, agent, env, budget=tiny.library.n_actions * 2, tau=0.0)
    assert trace.success
    assert trace.length == 1
    assert trace.reward == pytest.approx(0.9)
    assert trace.actions[-1] == STOP_ACTION


def test_depth_limit_forces_stop(syn):
    env, _ = make_env(syn, alpha=2)
    agent = AgentNet.for_library(syn.library, syn.encoder.width)
    for user in _unfavourable(syn, 10):
        for trace in (run_episode(user, agent, env, 20), run_agent_only(user, agent, env)):
            assert trace.length <= 2
            assert trace.actions[-1].is_stop


def test_alpha_zero_only_stops(syn):
    env, _ = make_env(syn, alpha=0)
    agent = AgentNet.for_library(syn.library, syn.encoder.width)
    trace = run_episode(_unfavourable(syn, 1)[0], agent, env, 5)
    assert trace.actions == [STOP_ACTION]
    assert not trace.success


def test_inference_query_bound(syn):
    est = RecourseAgent("syn", episodes=0, seed=0)
    users = _unfavourable(syn, 15, seed=5)
    est.fit(users)
    budget = 30
    for res in est.predict(users, budget):
        # one query for the applicability check, then at most one per simulation and move
        assert res.queries <= 1 + budget * est.alpha + est.alpha


def test_generate_intervention_is_replayable(syn):
    env, counter = make_env(syn)
    agent = AgentNet.for_library(syn.library, syn.encoder.width, seed=0)
    for user in _unfavourable(syn, 10, seed=3):
        res = generate_intervention(user, agent, env, budget=30)
        if res.success:
            state = user
            for a in res.actions:
                state = syn.library.apply(state, a)
            assert syn.label(state)
            assert res.cost == pytest.approx(syn.cost_model.intervention_cost(user, res.actions))


def test_replay_buffer_rejects_failures_and_unverified(tiny):
    buf = ReplayBuffer(capacity=2)
    ok = InterventionTrace(tiny.state({"skill": "low", "pay": 0}), success=True)
    assert not buf.push(InterventionTrace(ok.root, success=False))
    assert not buf.push(ok, verify=lambda t: False)
    assert buf.push(ok) and buf.push(ok) and buf.push(ok)
    assert len(buf) == 2
    assert len(buf.sample(5, np.random.default_rng(0))) == 2
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_training_improves_on_tiny(tiny):
    users = [tiny.state({"skill": "low", "pay": p}) for p in (0, 5, 10, 15)]
    users += [tiny.state({"skill": "mid", "pay": p}) for p in (0, 5, 10)]
    est = RecourseAgent(tiny, episodes=60, train_budget=30, embedding=8, hidden=8, seed=0)
    est.fit(users)
    assert est.score(users, budget=10) == 1.0
    assert est.train_queries_ > 0
    assert len(est.log_) == 60


def test_estimator_save_load(tmp_path, tiny):
    users = [tiny.state({"skill": "low", "pay": 0}), tiny.state({"skill": "mid", "pay": 5})]
    est = RecourseAgent(tiny, episodes=5, train_budget=10, embedding=8, hidden=8).fit(users)
    est.save(tmp_path / "agent.npz")
    back = RecourseAgent.load(tmp_path / "agent.npz")
    assert back.train_queries_ == est.train_queries_
    a = [r.actions for r in est.predict(users, 10)]
    b = [r.actions for r in back.predict(users, 10)]
    assert a == b


def test_favourable_user_not_applicable(tiny):
    est = RecourseAgent(tiny, episodes=0).fit([tiny.state({"skill": "low", "pay": 0})])
    res = est.predict([tiny.state({"skill": "high", "pay": 40})])[0]
    assert not res.applicable and not res.success and res.actions == []


def test_unfitted_predict_raises(tiny):
    with pytest.raises(RuntimeError):
        RecourseAgent(tiny).predict([tiny.state({"skill": "low", "pay": 0})])


def _unfavourable(task, n, seed=0):
    rows = sample_synthetic(task, n * 4, seed=seed).rows
    return [r for r in rows if not task.label(r)][:n]
