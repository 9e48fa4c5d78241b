"""Non-dominated sorting, crowding distance and candidate filtering.

Both objectives (RMSE, complexity) are minimized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObjectivePoint:
    rmse: float
    f_complexity: float
    id: str = ""

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.rmse, self.f_complexity)


def _objs(p):
    return p.objectives if isinstance(p, ObjectivePoint) else tuple(p)


def dominates(a, b) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    oa, ob = _objs(a), _objs(b)
    return all(x <= y for x, y in zip(oa, ob)) and any(x < y for x, y in zip(oa, ob))


def non_dominated_sort(points) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as lists of input indices.

    Front 0 holds the points nobody dominates; every point in front k is
    dominated only by points of earlier fronts.
    """
    objs = np.array([_objs(p) for p in points], dtype=float).reshape(-1, 2)
    n = len(objs)
    if n == 0:
        return []
    le = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    lt = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    dom = le & lt  # dom[a, b]: a dominates b
    count = dom.sum(axis=0)
    fronts = []
    current = [int(i) for i in np.flatnonzero(count == 0)]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for k in np.flatnonzero(dom[i]):
                count[k] -= 1
                if count[k] == 0:
                    nxt.append(int(k))
        current = sorted(nxt)
    return fronts


def crowding_distance(front, ids=None) -> np.ndarray:
    """Crowding distance of each point in one front.

    Extremes of every objective get +inf; interior points sum the
    range-normalized gap between their neighbours. Sorting is stable on
    ``(value, id)`` so duplicated objective values resolve deterministically.
    """
    objs = np.array([_objs(p) for p in front], dtype=float).reshape(-1, 2)
    n = len(objs)
    if ids is None:
        ids = [p.id if isinstance(p, ObjectivePoint) else str(i) for i, p in enumerate(front)]
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(objs.shape[1]):
        order = sorted(range(n), key=lambda i: (objs[i, m], ids[i]))
        lo, hi = objs[order[0], m], objs[order[-1], m]
        dist[order[0]] = dist[order[-1]] = np.inf
        if hi == lo:
            continue
        for a, i, b in zip(order, order[1:], order[2:]):
            dist[i] += (objs[b, m] - objs[a, m]) / (hi - lo)
    return dist


def filter_candidates(entries, min_n_run: int = 6, max_err_max: float = 80.0) -> list:
    """Keep repeatable, bounded-error entries and return their Pareto front.

    ``entries`` expose ``n_run``, ``err_max``, ``rmse`` and ``f_complexity``
    attributes (archive entries). Order of the result follows the input.
    """
    kept = [e for e in entries
            if e.n_run >= min_n_run and e.err_max <= max_err_max
            and np.isfinite(e.rmse) and np.isfinite(e.f_complexity)]
    if not kept:
        return []
    front = non_dominated_sort([(e.rmse, e.f_complexity) for e in kept])[0]
    return [kept[i] for i in sorted(front)]
