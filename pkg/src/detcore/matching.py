"""Optimal query-to-target assignment.

Rows of a cost matrix are queries (predictions) and columns are targets
(ground-truth objects).  Every target must be matched; queries left over
are implicitly assigned to the no-object class.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoxCxcywh
from .losses import LossWeights, box_loss

ORACLE_LIMIT = 8


@dataclass(frozen=True)
class Assignment:
    """One-to-one assignment; ``pairs`` are ``(query, target)`` sorted by target."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    @property
    def query_of_target(self) -> dict[int, int]:
        return {t: q for q, t in self.pairs}

    def to_dict(self) -> dict:
        return {
            "pairs": [[q, t] for q, t in self.pairs],
            "total_cost": self.total_cost,
        }


def _check_costs(costs) -> np.ndarray:
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    if c.shape[0] < c.shape[1]:
        raise ValueError(
            f"insufficient queries: {c.shape[0]} queries for {c.shape[1]} targets"
        )
    return c


def _total(c: np.ndarray, query_of_target: Sequence[int]) -> float:
    # Summed in target order so that equal assignments give identical floats.
    total = 0.0
    for t, q in enumerate(query_of_target):
        total += float(c[q, t])
    return total


def _make(c: np.ndarray, query_of_target: Sequence[int]) -> Assignment:
    pairs = tuple((int(q), t) for t, q in enumerate(query_of_target))
    return Assignment(pairs, _total(c, query_of_target))


def _solve_square(a: np.ndarray):
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns ``(col_of_row, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``a[i, j] - u[i] - v[j] >= 0`` with equality on the
    chosen edges.
    """
    n = a.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            cur = a[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.nonzero(used)[0]
            u[row_of_col[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _augment(start_row, adj, col_owner, row_ok, col_ok, seen):
    # Kuhn-style DFS for an alternating path from a free row.
    for col in adj[start_row]:
        if not col_ok[col] or seen[col]:
            continue
        seen[col] = True
        owner = col_owner[col]
        if owner < 0 or (row_ok[owner] and _augment(owner, adj, col_owner, row_ok, col_ok, seen)):
            col_owner[col] = start_row
            return True
    return False


def _lexicographic_tight(t_of_q: np.ndarray, tight: np.ndarray, n_targets: int) -> list[int]:
    """Among perfect matchings of the tight-edge graph, pick the one whose
    target->query list is lexicographically smallest.

    Every perfect matching of the equality subgraph of an optimal dual is
    itself optimal, so this only chooses among optimal assignments.
    ``tight`` is indexed ``[target, query]`` over the padded square.
    """
    n = tight.shape[0]
    adj = [np.nonzero(tight[t])[0].tolist() for t in range(n)]
    q_of_t = np.empty(n, dtype=np.int64)
    q_of_t[t_of_q] = np.arange(n)
    row_ok = np.ones(n, dtype=bool)  # targets still free to move
    col_ok = np.ones(n, dtype=bool)  # queries still free to move
    result = []
    for t in range(n_targets):
        for q in adj[t]:
            if not col_ok[q]:
                continue
            if q_of_t[t] == q:
                break
            # Force (t, q): q's owner must reroute to the query t releases.
            owner = int(t_of_q[q])
            col_owner = np.full(n, -1, dtype=np.int64)
            for tt in range(n):
                if row_ok[tt] and tt not in (t, owner):
                    col_owner[q_of_t[tt]] = tt
            row_ok[t] = False
            col_ok[q] = False
            seen = np.zeros(n, dtype=bool)
            ok = _augment(owner, adj, col_owner, row_ok, col_ok, seen)
            if ok:
                for qq in range(n):
                    tt = col_owner[qq]
                    if tt >= 0:
                        q_of_t[tt] = qq
                        t_of_q[qq] = tt
                q_of_t[t] = q
                t_of_q[q] = t
                break
            row_ok[t] = True
            col_ok[q] = True
        chosen = int(q_of_t[t])
        row_ok[t] = False
        col_ok[chosen] = False
        result.append(chosen)
    return result


def hungarian(costs) -> Assignment:
    """Minimum-cost assignment covering every target.

    Among equal-cost optima the one whose target->query list is
    lexicographically smallest is returned.
    """
    c = _check_costs(costs)
    n_q, n_t = c.shape
    if n_t == 0:
        return Assignment((), 0.0)
    # Square problem indexed [target, query]; padding targets cost nothing.
    square = np.zeros((n_q, n_q))
    square[:n_t] = c.T
    col_of_row, u, v = _solve_square(square)
    scale = max(1.0, float(np.max(np.abs(c))))
    reduced = square - u[:, None] - v[None, :]
    tight = reduced <= 1e-10 * scale * n_q
    tight[np.arange(n_q), col_of_row] = True
    t_of_q = np.empty(n_q, dtype=np.int64)
    t_of_q[col_of_row] = np.arange(n_q)
    q_of_t = _lexicographic_tight(t_of_q, tight, n_t)
    return _make(c, q_of_t)


@functools.lru_cache(maxsize=64)
def _injections(n_queries: int, n_targets: int) -> np.ndarray:
    perms = itertools.permutations(range(n_queries), n_targets)
    return np.array(list(perms), dtype=np.int8).reshape(-1, n_targets)


def brute_force(costs) -> Assignment:
    """Exhaustive minimum over every injective target->query mapping.

    Candidates are scanned in lexicographic order and the first minimum is
    kept, which matches the tie rule of :func:`hungarian`.
    """
    c = _check_costs(costs)
    n_q, n_t = c.shape
    if n_t > ORACLE_LIMIT:
        raise ValueError(f"oracle size limit: {n_t} targets > {ORACLE_LIMIT}")
    if n_t == 0:
        return Assignment((), 0.0)
    perms = _injections(n_q, n_t)
    totals = np.zeros(len(perms))
    for t in range(n_t):
        totals += c[perms[:, t], t]
    best = perms[int(np.argmin(totals))]
    return _make(c, [int(q) for q in best])


def match_cost(
    probs,
    pred_box,
    label: int,
    gt_box,
    weights: LossWeights | None = None,
) -> float:
    """Pairwise cost ``-p(label) + box_loss(pred_box, gt_box)``.

    ``probs`` is the predicted class distribution, no-object last.
    """
    p = np.asarray(probs, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"class probabilities sum to {p.sum()}, expected 1")
    if not (0 <= label < p.size - 1):
        raise ValueError(f"class label {label} outside [0, {p.size - 1})")
    return -float(p[label]) + box_loss(pred_box, gt_box, weights)


def cost_matrix(probs, pred_boxes, labels, gt_boxes, weights=None) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    c = np.empty((len(pred_boxes), len(labels)))
    for q in range(len(pred_boxes)):
        for t, label in enumerate(labels):
            c[q, t] = match_cost(probs[q], pred_boxes[q], int(label), gt_boxes[t], weights)
    return c


def optimal_assignment(preds, gts, weights: LossWeights | None = None) -> Assignment:
    """Assign predictions ``[(probs, box), ...]`` to ground truth ``[(label, box), ...]``."""
    if len(preds) < len(gts):
        raise ValueError(f"insufficient queries: {len(preds)} queries for {len(gts)} targets")
    if not gts:
        return Assignment((), 0.0)
    probs = [np.asarray(p, dtype=np.float64) for p, _ in preds]
    boxes = [_box_array(b) for _, b in preds]
    labels = [int(c) for c, _ in gts]
    gt_boxes = [_box_array(b) for _, b in gts]
    return hungarian(cost_matrix(probs, boxes, labels, gt_boxes, weights))


def _box_array(b) -> np.ndarray:
    if isinstance(b, BoxCxcywh):
        return b.as_array()
    return np.asarray(b, dtype=np.float64)
