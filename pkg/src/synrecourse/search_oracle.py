"""Exhaustive breadth-first search for short interventions.

Used as an independent reference when checking the learned searcher; it is
exponential in depth and meant for small depths only.
"""

from __future__ import annotations

from typing import Callable

from .dsl import Action, STOP_ACTION, Library
from .schema import UserState


def shortest_interventions(
    state: UserState,
    library: Library,
    predict: Callable[[UserState], bool],
    max_depth: int,
) -> tuple[int | None, list[list[Action]]]:
    """Minimum-length flipping sequences, one per distinct end state (STOP appended).

    Returns ``(None, [])`` when nothing within ``max_depth`` flips ``predict``.
    """
    origin = predict(state)
    frontier: list[tuple[UserState, list[Action]]] = [(state, [])]
    seen = {state}
    for depth in range(max_depth + 1):
        hits = [path + [STOP_ACTION] for s, path in frontier if depth > 0 and predict(s) != origin]
        if hits:
            return depth, hits
        if depth == max_depth:
            break
        nxt = []
        for s, path in frontier:
            for a in library.valid_actions(s):
                if a.is_stop:
                    continue
                s2 = library.apply_unchecked(s, a)
                if s2 in seen:
                    continue
                seen.add(s2)
                nxt.append((s2, path + [a]))
        frontier = nxt
    return None, []
