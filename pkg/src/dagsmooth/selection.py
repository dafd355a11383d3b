"""Graph-respecting selection procedures and the Benjamini-Hochberg baseline.

* :func:`select_fwer_mg` - sequential rejection with all-parents
  water-filling weights (FWER).
* :func:`select_fdx` - FWER set augmented by a topological prefix of the
  remaining graph (FDX).
* :func:`select_fdr_dagger` - depth-wise generalized step-up (FDR).
* :func:`select_bh` - structureless step-up, ignores the graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AlignmentError, ConstraintViolation, DomainError
from .graph import Dag

__all__ = [
    "SelectionResult",
    "DaggerConstants",
    "water_fill_weights",
    "select_fwer_mg",
    "select_fdx",
    "dagger_constants",
    "dagger_threshold",
    "select_fdr_dagger",
    "select_bh",
    "fdx_budget",
    "SELECTORS",
    "run_selector",
]


@dataclass(frozen=True)
class SelectionResult:
    """Rejected nodes plus the audit trail of how they were reached.

    ``rounds`` is an ordered list of ``(round_number, nodes)``.  For DAGGER
    the round number is the depth.  ``thresholds`` maps each node that was
    ever eligible to the last level it was compared against.
    """

    rejected: frozenset
    rounds: tuple = ()
    thresholds: dict = field(default_factory=dict)
    method: str = ""
    alpha: float = 0.0
    gamma: float | None = None

    def mask(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[list(self.rejected)] = True
        return out

    def __len__(self):
        return len(self.rejected)


@dataclass(frozen=True)
class DaggerConstants:
    """Effective leaf and node counts propagated bottom-up."""

    eff_leaves: np.ndarray
    eff_nodes: np.ndarray
    total_leaves: int


def _check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")


def _as_pvalues(dag: Dag | None, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (dag is not None and len(p) != dag.node_count):
        raise AlignmentError("p-value vector does not align with the graph")
    return p


def water_fill_weights(dag: Dag, rejected) -> np.ndarray:
    """All-parents water-filling weights for the current rejection set.

    Every unrejected leaf starts with mass ``1/Z`` (``Z`` unrejected leaves);
    mass flows to unrejected parents in equal shares, and a node keeps the
    mass it collects only if all of its parents are rejected.  The weights
    sum to 1 whenever ``Z > 0`` and are all zero otherwise.
    """
    n = dag.node_count
    rej = np.zeros(n, dtype=bool)
    if isinstance(rejected, np.ndarray) and rejected.dtype == bool:
        rej[:] = rejected
    else:
        rej[list(rejected)] = True
    if not dag.is_upward_closed(rej):
        raise ConstraintViolation("rejection set is not closed under ancestors")

    open_leaves = [v for v in dag.leaves if not rej[v]]
    g = np.zeros(n)
    if not open_leaves:
        return g
    share = 1.0 / len(open_leaves)
    inflow = np.zeros(n)
    parents_of = dag.parents_of
    for v in reversed(dag.topo_order):
        if rej[v]:
            continue
        if not dag.children_of[v]:
            inflow[v] += share
        live = [u for u in parents_of[v] if not rej[u]]
        if live:
            part = inflow[v] / len(live)
            for u in live:
                inflow[u] += part
        else:
            g[v] = inflow[v]
    return g


def select_fwer_mg(dag: Dag, p, alpha: float) -> SelectionResult:
    """Meijer-Goeman sequential rejection with all-parents weights.

    Each round recomputes the water-filling weights ``g`` and rejects every
    unrejected node whose parents are all rejected and whose p-value is at
    most ``alpha * g_v``.  Stops when a round rejects nothing.
    """
    _check_alpha(alpha)
    p = _as_pvalues(dag, p)
    n = dag.node_count
    rej = np.zeros(n, dtype=bool)
    rounds = []
    thresholds = {}
    while True:
        g = water_fill_weights(dag, rej)
        front = [
            v for v in range(n) if not rej[v] and all(rej[u] for u in dag.parents_of[v])
        ]
        new = []
        for v in front:
            level = alpha * g[v]
            thresholds[v] = float(level)
            if p[v] <= level:
                new.append(v)
        if not new:
            break
        rej[new] = True
        rounds.append((len(rounds) + 1, tuple(new)))
    return SelectionResult(
        frozenset(np.flatnonzero(rej).tolist()),
        tuple(rounds),
        thresholds,
        "fwer-mg",
        float(alpha),
    )


def fdx_budget(n_fwer: int, gamma: float) -> int:
    """Largest augmentation keeping the false proportion at most ``gamma``."""
    if not (0.0 <= gamma < 1.0):
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    # tolerance guards exact multiples such as 9 * 0.1 / 0.9
    return int(math.floor(n_fwer * gamma / (1.0 - gamma) + 1e-9))


OrderPolicy = Callable[[Dag, Sequence[int], np.ndarray], Sequence[int]]


def _topological_policy(dag: Dag, remaining, p):
    return dag.induced_topological_order(remaining)


def select_fdx(
    dag: Dag, p, gamma: float, alpha: float, *, order: OrderPolicy | None = None
) -> SelectionResult:
    """FDX control: Meijer-Goeman at ``alpha`` then a greedy augmentation.

    Adds the first ``floor(|S0| * gamma / (1 - gamma))`` nodes of a
    topological order of the unrejected subgraph.  ``order`` may replace the
    default deterministic order; it must return a topological order of the
    nodes it is given.
    """
    p = _as_pvalues(dag, p)
    fdx_budget(0, gamma)  # validate gamma before any work
    base = select_fwer_mg(dag, p, alpha)
    budget = fdx_budget(len(base.rejected), gamma)
    rounds = list(base.rounds)
    rejected = set(base.rejected)
    if budget:
        remaining = [v for v in range(dag.node_count) if v not in rejected]
        ordered = list((order or _topological_policy)(dag, remaining, p))
        extra = ordered[:budget]
        rejected.update(extra)
        mask = np.zeros(dag.node_count, dtype=bool)
        mask[list(rejected)] = True
        if not dag.is_upward_closed(mask):
            raise ConstraintViolation("augmentation order is not topological")
        if extra:
            rounds.append((len(rounds) + 1, tuple(extra)))
    return SelectionResult(
        frozenset(rejected), tuple(rounds), dict(base.thresholds), "fdx", float(alpha), float(gamma)
    )


def dagger_constants(dag: Dag) -> DaggerConstants:
    """Effective numbers of leaves and nodes, computed leaves-to-roots."""
    n = dag.node_count
    ell = np.zeros(n)
    m = np.zeros(n)
    n_parents = [len(ps) for ps in dag.parents_of]
    for v in reversed(dag.topo_order):
        kids = dag.children_of[v]
        if not kids:
            ell[v] = 1.0
            m[v] = 1.0
            continue
        ell[v] = sum(ell[w] / n_parents[w] for w in kids)
        m[v] = 1.0 + sum(m[w] / n_parents[w] for w in kids)
    return DaggerConstants(ell, m, len(dag.leaves))


def dagger_threshold(alpha, ell, total_leaves, m, r, prior_rejections):
    """Step-up level for a node at rank ``r`` given earlier depths' rejections."""
    return alpha * (ell / total_leaves) * (m + r + prior_rejections - 1) / m


def _first_passing_rank(p, alpha, ell, total, m, prior, cap):
    """Smallest rank r >= 1 with ``p <= threshold(r)``; ``cap + 1`` if none <= cap."""
    with np.errstate(divide="ignore", invalid="ignore"):
        guess = p * total * m / (alpha * ell) - m - prior + 1
    r = np.clip(np.ceil(np.nan_to_num(guess, nan=1.0, posinf=cap + 1.0)), 1, cap + 1).astype(np.int64)
    # settle floating-point edges against the exact comparison
    for _ in range(4):
        down = (r > 1) & (p <= dagger_threshold(alpha, ell, total, m, r - 1, prior))
        r = np.where(down, r - 1, r)
        up = (r <= cap) & (p > dagger_threshold(alpha, ell, total, m, r, prior))
        r = np.where(up, r + 1, r)
        if not (down.any() or up.any()):
            break
    return r


def select_fdr_dagger(dag: Dag, p, alpha: float, *, constants: DaggerConstants | None = None) -> SelectionResult:
    """DAGGER: a generalized step-up procedure run depth by depth.

    At depth ``d`` only nodes whose parents are all rejected are tested.
    ``R_d`` is the largest rank ``r`` with at least ``r`` of them below
    their level ``alpha_{d,v}(r)``; if none qualifies nothing is rejected at
    that depth.
    """
    _check_alpha(alpha)
    p = _as_pvalues(dag, p)
    const = constants or dagger_constants(dag)
    ell, m, total = const.eff_leaves, const.eff_nodes, const.total_leaves
    depth = dag.depth_array
    rej = np.zeros(dag.node_count, dtype=bool)
    rounds = []
    thresholds = {}
    prior = 0
    for d in range(1, dag.max_depth + 1):
        cand = np.array(
            [v for v in np.flatnonzero(depth == d) if all(rej[u] for u in dag.parents_of[v])],
            dtype=np.intp,
        )
        if len(cand) == 0:
            continue
        k = len(cand)
        first = _first_passing_rank(p[cand], alpha, ell[cand], total, m[cand], prior, k)
        counts = np.cumsum(np.bincount(first, minlength=k + 2)[: k + 1])
        ranks = np.flatnonzero(counts[1:] >= np.arange(1, k + 1)) + 1
        big_r = int(ranks.max()) if len(ranks) else 0
        levels = dagger_threshold(alpha, ell[cand], total, m[cand], max(big_r, 1), prior)
        for v, level in zip(cand.tolist(), levels.tolist()):
            thresholds[v] = level
        if big_r:
            chosen = cand[first <= big_r]
            rej[chosen] = True
            rounds.append((d, tuple(chosen.tolist())))
        prior += big_r
    return SelectionResult(
        frozenset(np.flatnonzero(rej).tolist()), tuple(rounds), thresholds, "fdr-dagger", float(alpha)
    )


def select_bh(p, alpha: float) -> SelectionResult:
    """Benjamini-Hochberg step-up; rejects the ``k`` smallest p-values where
    ``k = max{k : p_(k) <= alpha k / n}``.  Ties sort by node index."""
    _check_alpha(alpha)
    p = _as_pvalues(None, p)
    n = len(p)
    if n == 0:
        return SelectionResult(frozenset(), (), {}, "bh", float(alpha))
    order = np.argsort(p, kind="stable")
    ranks = np.arange(1, n + 1)
    levels = alpha * ranks / n
    passing = np.flatnonzero(p[order] <= levels)
    k = int(passing.max()) + 1 if len(passing) else 0
    chosen = order[:k].tolist()
    thresholds = {int(v): float(level) for v, level in zip(order, levels)}
    rounds = ((1, tuple(sorted(chosen))),) if chosen else ()
    return SelectionResult(frozenset(chosen), rounds, thresholds, "bh", float(alpha))


SELECTORS = ("fwer-mg", "fdx", "fdr-dagger", "bh")


def run_selector(name: str, dag: Dag, p, alpha: float, gamma: float = 0.1, **kwargs) -> SelectionResult:
    """Dispatch on the command-line selector name."""
    if name == "fwer-mg":
        return select_fwer_mg(dag, p, alpha)
    if name == "fdx":
        return select_fdx(dag, p, gamma, alpha, **kwargs)
    if name == "fdr-dagger":
        return select_fdr_dagger(dag, p, alpha, **kwargs)
    if name == "bh":
        return select_bh(p, alpha)
    raise DomainError(f"unknown selector {name!r}")
