import pytest

from synrecourse.task import load_task, task_from_dict

TINY = {
    "name": "tiny",
    "features": [
        {"name": "skill", "kind": "categorical", "values": ["low", "mid", "high"]},
        {"name": "pay", "kind": "numeric", "bins": [10, 20], "low": 0, "high": 40},
    ],
    "functions": [
        {"name": "CHANGE_SKILL", "target": "skill", "arguments": ["mid", "high"],
         "costs": [1.0, 2.0], "monotone": "increase"},
        {"name": "CHANGE_PAY", "target": "pay", "arguments": [5, 10], "costs": [1.0, 2.0]},
    ],
    "graph": {"edges": [["skill", "pay"]]},
    "cost": {"parent_discount": 0.5},
    "generative": {
        "skill": {"probs": [0.6, 0.3, 0.1]},
        "pay": {"mean": 5, "std": 5, "round": 1, "parents": {"skill": 10}},
    },
    "label": {
        "threshold": 2,
        "terms": [
            {"feature": "skill", "op": ">=", "value": "mid"},
            {"feature": "pay", "op": ">=", "value": 20},
        ],
    },
}


@pytest.fixture
def tiny():
    return task_from_dict(TINY)


@pytest.fixture(scope="session")
def syn():
    return load_task("syn")


@pytest.fixture(scope="session")
def syn_long():
    return load_task("syn_long")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
