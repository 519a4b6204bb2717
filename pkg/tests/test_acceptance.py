"""End-to-end acceptance checks on the shipped synthetic tasks.

Trains one agent per task, distills a program from it and benchmarks all
three models on 100 held-out unfavourable users. Each test records a single
PASS/FAIL line, printed together at the end of the run.
"""

import itertools

import numpy as np
import pytest

from synrecourse.bench import run_bench, sweep_means
from synrecourse.data import sample_synthetic, train_test_split
from synrecourse.distill import ProgramDistiller
from synrecourse.dsl import Action, RejectedActionError
from synrecourse.mcts import compute_reward
from synrecourse.recourse import RecourseAgent
from synrecourse.task import load_task, task_from_dict

from conftest import ACCEPTANCE, TINY

pytestmark = pytest.mark.slow

EPISODES = {"syn": 600, "syn_long": 400}
N_TRACES = 250
N_USERS = 100


def check(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _setup(name, sweep):
    task = load_task(name)
    ds = sample_synthetic(task, 10004, seed=0, balanced=True)
    train, test = train_test_split(ds, seed=0)
    agent = RecourseAgent(task, episodes=EPISODES[name], seed=0).fit(train.rows)
    dist = ProgramDistiller(agent, n_traces=N_TRACES, seed=0).fit(train.rows)
    report = run_bench(agent, dist.program_, test.rows, n_users=N_USERS,
                       sweep_pool=train.rows if sweep else None)
    return {"task": task, "agent": agent, "report": report,
            "mcts": agent.predict(test.unfavourable()[:N_USERS])}


@pytest.fixture(scope="module")
def syn_run():
    return _setup("syn", sweep=False)


@pytest.fixture(scope="module")
def syn_long_run():
    return _setup("syn_long", sweep=True)


def test_recourse_accuracy(syn_run, syn_long_run):
    a = syn_run["report"].summary["agent_mcts"].accuracy
    b = syn_long_run["report"].summary["agent_mcts"].accuracy
    check("recourse accuracy", a >= 0.90 and b >= 0.80,
          f"syn {a:.2f} (>= 0.90), syn_long {b:.2f} (>= 0.80)")


def test_ablation_gap(syn_long_run):
    s = syn_long_run["report"].summary
    only, mcts = s["agent_only"].accuracy, s["agent_mcts"].accuracy
    check("ablation gap", only <= 0.2 and mcts >= 0.8,
          f"syn_long agent-only {only:.2f} (<= 0.20), agent+search {mcts:.2f} (>= 0.80)")


def test_distillation_fidelity(syn_run, syn_long_run):
    s = syn_run["report"].summary
    gap = abs(s["program"].accuracy - s["agent_mcts"].accuracy)
    sim_syn = syn_run["report"].similarity
    sim_long = syn_long_run["report"].similarity
    check("distillation fidelity", gap <= 0.15 and sim_syn >= 0.7 and sim_long >= 0.6,
          f"syn success gap {gap:.2f} (<= 0.15), similarity syn {sim_syn:.2f} (>= 0.70), "
          f"syn_long {sim_long:.2f} (>= 0.60)")


def test_zero_query_explanation(syn_run, syn_long_run):
    counts = [r["report"].queries["distill-predict"] for r in (syn_run, syn_long_run)]
    check("zero-query explanation", counts == [0, 0],
          f"distill-predict queries syn {counts[0]}, syn_long {counts[1]} (== 0)")


def test_query_efficiency(syn_run, syn_long_run):
    parts, ok = [], True
    for name, run in (("syn", syn_run), ("syn_long", syn_long_run)):
        per_user = run["report"].summary["agent_mcts"].mean_queries
        limit = run["agent"].train_queries_ / 50
        ok &= per_user <= limit
        parts.append(f"{name} {per_user:.1f} per user vs training/50 = {limit:.1f}")
    check("query efficiency", ok, "; ".join(parts))


def test_latency(syn_run, syn_long_run):
    parts, ok = [], True
    for name, run in (("syn", syn_run), ("syn_long", syn_long_run)):
        out = run["report"].outcomes
        worst_mcts = max(o.seconds for o in out["agent_mcts"])
        worst_prog = max(o.seconds for o in out["program"])
        ok &= worst_mcts < 1.0 and worst_prog < 0.01
        parts.append(f"{name} max search {worst_mcts:.3f}s (< 1), max program {1000 * worst_prog:.2f}ms (< 10)")
    check("latency", ok, "; ".join(parts))


def test_gradient_correctness():
    from test_agent import numeric_grads, random_batch

    from synrecourse.agent import AgentConfig, AgentNet

    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = AgentNet(AgentConfig(6, 3, 4, 5, 4, seed))
        for k in net.params:
            net.params[k] = net.params[k] + rng.normal(0, 0.3, net.params[k].shape)
        batch = random_batch(rng, net.config)
        _, analytic = net.loss_and_grads(batch)
        numeric = numeric_grads(net, batch)
        for k in net.params:
            a, n = analytic[k], numeric[k]
            worst = max(worst, float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-7)).max()))
    check("gradient correctness", worst <= 1e-4, f"max relative error {worst:.2e} (<= 1e-4)")


def _dominated(task, user, actions):
    """A feasible reordering that still flips the label and costs strictly less."""
    cm, lib = task.cost_model, task.library
    body = [a for a in actions if not a.is_stop]
    own = cm.intervention_cost(user, body)
    for perm in itertools.permutations(body):
        state = user
        try:
            for a in perm:
                state = lib.apply(state, a)
        except RejectedActionError:
            continue
        if task.label(state) and cm.intervention_cost(user, list(perm)) < own - 1e-9:
            return True
    return False


def test_cost_and_ordering(syn_run, syn_long_run):
    lam = 0.9
    rewards = [compute_reward(t, True, lam) for t in range(12)]
    monotone = all(x > y for x, y in zip(rewards, rewards[1:]))

    tiny = task_from_dict(TINY)
    s = tiny.state({"skill": "low", "pay": 5})
    fwd = [Action("CHANGE_SKILL", "mid"), Action("CHANGE_PAY", 10.0)]
    order_sensitive = tiny.cost_model.intervention_cost(s, fwd) < tiny.cost_model.intervention_cost(s, fwd[::-1])

    checked = dominated = 0
    for run in (syn_run, syn_long_run):
        for r in run["mcts"]:
            if r.success and r.length <= 4:
                checked += 1
                dominated += _dominated(run["task"], r.user, r.actions)
    check("cost/ordering", monotone and order_sensitive and dominated == 0 and checked > 0,
          f"reward decreasing in T: {monotone}; parent-first cheaper: {order_sensitive}; "
          f"{dominated} of {checked} interventions dominated by a permutation (== 0)")


def test_budget_sweep(syn_long_run):
    means = sweep_means(syn_long_run["report"].sweep)
    check("budget sweep", means[700] >= means[100],
          "syn_long program accuracy by M: " + ", ".join(f"{m}: {v:.2f}" for m, v in means.items())
          + " (M=700 >= M=100)")


def test_long_interventions(syn_long_run):
    frac = syn_long_run["report"].long_fraction
    check("longer interventions", frac >= 0.1, f"syn_long share with >= 3 actions {frac:.2f} (>= 0.10)")
