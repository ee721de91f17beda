"""Family-wise error rate controlling procedures.

Each procedure takes one p-value per grid point and returns a
:class:`RejectionSet`. Every index in the set is certified to control the
risk, simultaneously, with probability at least ``1 - delta``.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BUDGET_TOL = 1e-12
WEIGHT_TOL = 1e-12


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RejectionSet:
    indices: tuple[int, ...]
    procedure: str
    delta: float
    alphas: tuple[float, ...] = ()
    log: tuple[dict, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted({int(i) for i in self.indices})))

    def __len__(self):
        return len(self.indices)

    def __contains__(self, idx):
        return idx in set(self.indices)

    def replay(self) -> tuple[int, ...]:
        """Rebuild the rejected indices from the audit log alone."""
        return tuple(sorted({e["index"] for e in self.log if e["decision"] == "reject"}))

    def to_json(self) -> dict:
        return {
            "procedure": self.procedure,
            "delta": self.delta,
            "alphas": list(self.alphas),
            "rejected": list(self.indices),
            "log": list(self.log),
        }


def _event(index: int, level: float, p: float, decision: str, **extra) -> dict:
    return {"index": int(index), "level": float(level), "p": float(p), "decision": decision, **extra}


def _as_pvalues(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a non-empty 1-D p-value vector")
    return p


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta {delta} outside (0, 1)")


# ---------------------------------------------------------------------------
# single-step and step-down


def bonferroni(p, delta: float, alphas: Sequence[float] = ()) -> RejectionSet:
    p = _as_pvalues(p)
    _check_delta(delta)
    level = delta / p.size
    hits = np.flatnonzero(p <= level)
    log = tuple(_event(j, level, p[j], "reject") for j in hits)
    return RejectionSet(tuple(hits), "bonferroni", delta, tuple(alphas), log)


def holm(p, delta: float, alphas: Sequence[float] = ()) -> RejectionSet:
    """Holm step-down: reject the longest sorted prefix with ``p_(k) <= delta / (N - k)``."""
    p = _as_pvalues(p)
    _check_delta(delta)
    N = p.size
    order = np.argsort(p, kind="stable")
    log = []
    rejected = []
    for k, j in enumerate(order):
        level = delta / (N - k)
        if p[j] <= level:
            rejected.append(int(j))
            log.append(_event(j, level, p[j], "reject"))
        else:
            log.append(_event(j, level, p[j], "stop"))
            break
    return RejectionSet(tuple(rejected), "holm", delta, tuple(alphas), tuple(log))


# ---------------------------------------------------------------------------
# fixed sequence


def fixed_sequence(
    p,
    delta: float,
    starts: Iterable[int] | None = None,
    order: Sequence[int] | None = None,
    alphas: Sequence[float] = (),
) -> RejectionSet:
    """Fixed sequence testing with one or more starting points.

    ``order`` lists grid indices in the sequence to walk (default: natural
    order 0..N-1). Each start is a grid index; from it the walk follows
    ``order`` while ``p <= delta / len(starts)`` and stops at the first
    failure or the end of the sequence. Starts already rejected are skipped.
    """
    p = _as_pvalues(p)
    _check_delta(delta)
    seq = np.arange(p.size) if order is None else np.asarray(order, dtype=int)
    if seq.size == 0 or seq.min() < 0 or seq.max() >= p.size:
        raise ValueError("order contains invalid grid indices")
    position = {int(j): k for k, j in enumerate(seq)}
    starts = [int(seq[0])] if starts is None else [int(s) for s in starts]
    if not starts:
        raise ValueError("need at least one start")
    for s in starts:
        if s not in position:
            raise ValueError(f"start {s} is not in the testing order")
    level = delta / len(starts)
    rejected: set[int] = set()
    log = []
    for s in starts:
        if s in rejected:
            continue
        k = position[s]
        while k < seq.size:
            j = int(seq[k])
            if p[j] <= level:
                rejected.add(j)
                log.append(_event(j, level, p[j], "reject", start=s))
                k += 1
            else:
                log.append(_event(j, level, p[j], "stop", start=s))
                break
    return RejectionSet(tuple(rejected), "fixed-sequence", delta, tuple(alphas), tuple(log))


def equispaced_starts(N: int, count: int) -> list[int]:
    """A coarse, evenly spaced set of start positions in ``range(N)``."""
    count = max(1, min(count, N))
    return sorted({int(round(x)) for x in np.linspace(0, N - 1, count)})


# ---------------------------------------------------------------------------
# sequential graphical testing


@dataclass
class TestGraph:
    """Initial node budgets plus sparse edge weights ``edges[i][j] = g_ij``."""

    budgets: np.ndarray
    edges: dict[int, dict[int, float]]

    __test__ = False  # not a pytest class

    def __post_init__(self):
        self.budgets = np.asarray(self.budgets, dtype=float).copy()
        self.edges = {int(i): {int(j): float(w) for j, w in row.items() if w != 0.0} for i, row in self.edges.items()}
        self.edges = {i: row for i, row in self.edges.items() if row}

    @property
    def n(self) -> int:
        return self.budgets.size

    @property
    def delta(self) -> float:
        return float(self.budgets.sum())

    def weight(self, i: int, j: int) -> float:
        return self.edges.get(i, {}).get(j, 0.0)

    def validate(self, delta: float | None = None) -> None:
        if self.n == 0:
            raise GraphError("graph has no nodes")
        if np.any(self.budgets < 0) or not np.all(np.isfinite(self.budgets)):
            raise GraphError("budgets must be finite and nonnegative")
        total = self.budgets.sum()
        if not 0.0 < total < 1.0:
            raise GraphError(f"total budget {total} outside (0, 1)")
        if delta is not None and abs(total - delta) > BUDGET_TOL:
            raise GraphError(f"budgets sum to {total}, expected {delta}")
        for i, row in self.edges.items():
            if not 0 <= i < self.n:
                raise GraphError(f"edge source {i} out of range")
            if i in row:
                raise GraphError(f"self-loop at node {i}")
            for j, w in row.items():
                if not 0 <= j < self.n:
                    raise GraphError(f"edge target {j} out of range")
                if not 0.0 <= w <= 1.0:
                    raise GraphError(f"weight {w} on edge {i}->{j} outside [0, 1]")
            if sum(row.values()) > 1.0 + WEIGHT_TOL:
                raise GraphError(f"outgoing weights of node {i} sum above 1")

    def dense(self) -> np.ndarray:
        g = np.zeros((self.n, self.n))
        for i, row in self.edges.items():
            for j, w in row.items():
                g[i, j] = w
        return g

    def to_json(self) -> dict:
        edges = [[i, j, w] for i in sorted(self.edges) for j, w in sorted(self.edges[i].items())]
        return {"n": self.n, "budgets": self.budgets.tolist(), "edges": edges}

    @classmethod
    def from_json(cls, obj: dict) -> "TestGraph":
        try:
            n = int(obj["n"])
            budgets = np.asarray(obj["budgets"], dtype=float)
            edges: dict[int, dict[int, float]] = {}
            for i, j, w in obj.get("edges", []):
                edges.setdefault(int(i), {})[int(j)] = float(w)
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from exc
        if budgets.shape != (n,):
            raise GraphError(f"expected {n} budgets, got {budgets.size}")
        graph = cls(budgets, edges)
        graph.validate()
        return graph

    @classmethod
    def from_dense(cls, budgets, weights) -> "TestGraph":
        weights = np.asarray(weights, dtype=float)
        edges = {i: {j: weights[i, j] for j in np.flatnonzero(weights[i])} for i in range(weights.shape[0])}
        return cls(budgets, edges)


def load_graph(path: str | Path) -> TestGraph:
    return TestGraph.from_json(json.loads(Path(path).read_text()))


def sgt(p, graph: TestGraph, alphas: Sequence[float] = (), record_budgets: bool = False) -> RejectionSet:
    """Sequential graphical testing.

    Repeatedly rejects the lowest-index node with ``p_i <= delta_i``, passes
    its budget along the outgoing edges and rewires the graph around it.
    Each log event carries the budget left on unrejected nodes
    (``budget_total``) and the budgets it changed (``budget_updates``);
    ``record_budgets`` adds the full post-update vector.
    """
    p = _as_pvalues(p)
    graph.validate()
    N = graph.n
    if p.size != N:
        raise ValueError(f"graph has {N} nodes but got {p.size} p-values")
    budgets = graph.budgets.copy()
    out = {i: dict(row) for i, row in graph.edges.items()}
    inc: dict[int, set[int]] = {}
    for i, row in out.items():
        for j in row:
            inc.setdefault(j, set()).add(i)
    alive = np.ones(N, dtype=bool)
    eligible = [int(i) for i in np.flatnonzero(p <= budgets)]
    heapq.heapify(eligible)
    queued = set(eligible)
    total = float(budgets.sum())
    log = []

    while eligible:
        i = heapq.heappop(eligible)
        level = budgets[i]
        alive[i] = False
        row_i = out.pop(i, {})
        preds = inc.pop(i, set())
        # budget flows along the edges of the pre-update graph
        updates = {}
        for j, w in row_i.items():
            budgets[j] += level * w
            updates[j] = float(budgets[j])
            if j not in queued and p[j] <= budgets[j]:
                heapq.heappush(eligible, j)
                queued.add(j)
        total += level * (sum(row_i.values()) - 1.0)
        budgets[i] = 0.0
        for j in row_i:
            inc[j].discard(i)
        # rewire: g_kj <- (g_kj + g_ki g_ij) / (1 - g_ki g_ik) for every predecessor k
        for k in preds:
            row_k = out[k]
            g_ki = row_k.pop(i)
            g_ik = row_i.get(k, 0.0)
            denom = 1.0 - g_ki * g_ik
            if denom <= 1e-12:
                for j in list(row_k):
                    inc[j].discard(k)
                out[k] = {}
                continue
            new_row = {}
            for j in set(row_k) | set(row_i):
                if j == k:
                    continue
                w = (row_k.get(j, 0.0) + g_ki * row_i.get(j, 0.0)) / denom
                if w > 0.0:
                    new_row[j] = w
            for j in set(row_k) - set(new_row):
                inc[j].discard(k)
            for j in new_row:
                inc.setdefault(j, set()).add(k)
            out[k] = new_row
        event = _event(i, level, p[i], "reject", budget_total=total, budget_updates={str(j): v for j, v in sorted(updates.items())})
        if record_budgets:
            event["budgets"] = budgets.tolist()
        log.append(event)

    rejected = tuple(int(i) for i in np.flatnonzero(~alive))
    return RejectionSet(rejected, "sgt", graph.delta, tuple(alphas), tuple(log))


# ---------------------------------------------------------------------------
# graph builders for 2-D grids
#
# Both builders use the row-major flat index of a (rows, cols) grid and treat
# high indices as the safe end: the last column holds the largest second
# coordinate and the last row the largest first coordinate.


def build_fallback_graph(rows: int, cols: int, delta: float) -> TestGraph:
    """Fallback graph: one chain per row, walking from the last column to the first.

    Each chain head gets ``delta / rows``; chain edges have weight 1 and the
    tail of each row passes everything to the head of the next row.
    """
    if rows < 1 or cols < 1:
        raise ValueError("need rows >= 1 and cols >= 1")
    _check_delta(delta)
    N = rows * cols
    budgets = np.zeros(N)
    edges: dict[int, dict[int, float]] = {}
    for r in range(rows):
        head = r * cols + cols - 1
        budgets[head] = delta / rows
        for c in range(cols - 1, 0, -1):
            edges[r * cols + c] = {r * cols + c - 1: 1.0}
        if r + 1 < rows:
            edges[r * cols] = {(r + 1) * cols + cols - 1: 1.0}
    return TestGraph(budgets, edges)


def hamming_index(i: int, j: int, n_side: int) -> int:
    """Flat index of Hamming node ``(i, j)`` (1-based, counted from the safe corner)."""
    return (n_side - i) * n_side + (n_side - j)


def hamming_weights(i: int, j: int, n_side: int) -> tuple[float, float]:
    """Weights from ``(i, j)`` to ``(i, j+1)`` and to ``(i+1, j)``."""
    if i + j <= n_side:
        return j / (i + j), i / (i + j)
    return (1.0 if i == n_side else 0.0), (1.0 if i < n_side else 0.0)


def build_hamming_graph(n_side: int, delta: float) -> TestGraph:
    """Hamming graph on an ``n_side x n_side`` grid rooted at the safe corner.

    The whole budget starts at the root; below the anti-diagonal the weights
    ``j/(i+j)`` and ``i/(i+j)`` give every node at the same Hamming distance
    the same potential inflow.
    """
    if n_side < 2:
        raise ValueError("n_side must be >= 2")
    _check_delta(delta)
    N = n_side * n_side
    budgets = np.zeros(N)
    budgets[hamming_index(1, 1, n_side)] = delta
    edges: dict[int, dict[int, float]] = {}
    for i in range(1, n_side + 1):
        for j in range(1, n_side + 1):
            right, down = hamming_weights(i, j, n_side)
            row = {}
            if j + 1 <= n_side and right > 0:
                row[hamming_index(i, j + 1, n_side)] = right
            if i + 1 <= n_side and down > 0:
                row[hamming_index(i + 1, j, n_side)] = down
            if row:
                edges[hamming_index(i, j, n_side)] = row
    return TestGraph(budgets, edges)


# ---------------------------------------------------------------------------
# structured fixed-sequence variants


def cascaded_2d_fixed_sequence(p_grid, delta: float, alphas: Sequence[float] = ()) -> RejectionSet:
    """Two fixed-sequence passes on a ``(rows, cols)`` p-value grid, each at ``delta/2``.

    Pass one walks the rows from the last to the first using the last
    (safest) column, and keeps the smallest row it certifies. Pass two walks
    that row from the last column to the first.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    if p_grid.ndim != 2:
        raise ValueError("cascaded testing needs a 2-D grid of p-values")
    _check_delta(delta)
    rows, cols = p_grid.shape
    flat = p_grid.ravel()
    half = delta / 2
    phase1 = [r * cols + cols - 1 for r in range(rows - 1, -1, -1)]
    first = fixed_sequence(flat, half, starts=[phase1[0]], order=phase1)
    log = [dict(e, phase=1) for e in first.log]
    if not first.indices:
        return RejectionSet((), "cascade-2d", delta, tuple(alphas), tuple(log))
    row = min(first.indices) // cols
    phase2 = [row * cols + c for c in range(cols - 1, -1, -1)]
    second = fixed_sequence(flat, half, starts=[phase2[0]], order=phase2)
    log += [dict(e, phase=2) for e in second.log]
    return RejectionSet(first.indices + second.indices, "cascade-2d", delta, tuple(alphas), tuple(log))


def learned_ordering(p_graph, D: int) -> list[int]:
    """Grid indices whose per-risk p-values sit closest to ``beta = d/D``, d = 0..D.

    Distance is the sup-norm to ``(beta, ..., beta)``; ties go to the lowest
    index; repeats are dropped keeping the first occurrence.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    p_graph = np.asarray(p_graph, dtype=float)
    if p_graph.ndim == 1:
        p_graph = p_graph[:, None]
    if p_graph.shape[0] == 0:
        raise ValueError("empty grid")
    ordering: list[int] = []
    seen = set()
    for d in range(D + 1):
        beta = d / D
        j = int(np.argmin(np.abs(p_graph - beta).max(axis=1)))
        if j not in seen:
            seen.add(j)
            ordering.append(j)
    return ordering


def split_fixed_sequence(p_graph, p_test, D: int, delta: float, alphas: Sequence[float] = ()):
    """Learn a testing order on one data split, then fixed-sequence test it on another.

    Returns ``(ordering, RejectionSet)``.
    """
    p_test = _as_pvalues(p_test)
    p_graph = np.asarray(p_graph, dtype=float)
    if p_graph.shape[0] != p_test.size:
        raise ValueError("both splits must share the grid")
    ordering = learned_ordering(p_graph, D)
    result = fixed_sequence(p_test, delta, starts=[ordering[0]], order=ordering, alphas=alphas)
    return ordering, RejectionSet(result.indices, "split-fixed-sequence", delta, tuple(alphas), result.log)
