"""Synthetic graphs, ground truth, p-values and the benchmark runner."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, InvalidRecipe
from .graph import Dag, TruthAssignment, build_dag
from .selection import (
    SELECTORS,
    SelectionResult,
    dagger_constants,
    fdx_budget,
    select_bh,
    select_fdr_dagger,
    select_fwer_mg,
)
from .smoothing import SmoothingSpec, clamp_pvalues, smooth

__all__ = [
    "ALPHA_GRID",
    "GraphRecipe",
    "AlternativeScheme",
    "TrialMetrics",
    "BenchmarkConfig",
    "BenchmarkSummary",
    "gen_graph",
    "trigenic_graph",
    "gen_truth",
    "gen_pvalues_independent",
    "gen_pvalues_copula",
    "copula_null_covariance",
    "compute_metrics",
    "run_benchmark",
]

ALPHA_GRID = (0.01, 0.02, 0.03, 0.04, 0.05, 0.08, 0.1, 0.15, 0.2, 0.25)

GRAPH_KINDS = (
    "deep_tree",
    "wide_tree",
    "bipartite",
    "hourglass",
    "layered_random",
    "trigenic",
    "chain",
    "edgeless",
)

_DEFAULTS = {
    "deep_tree": {"depth": 8, "branching": 2},
    "wide_tree": {"depth": 3, "branching": 20},
    "bipartite": {"n_roots": 100, "n_leaves": 100, "fan_out": 20},
    "hourglass": {"n_roots": 30, "n_middle": 10, "n_leaves": 30, "edge_prob": 0.2},
    "layered_random": {"layers": 5, "width": 50, "n_parents": 3},
    "trigenic": {"genes": (), "pairs": (), "triplets": ()},
    "chain": {"length": 5},
    "edgeless": {"n": 50},
}


@dataclass(frozen=True)
class GraphRecipe:
    """A named graph family with its parameters and generation seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise InvalidRecipe(f"unknown graph kind {self.kind!r}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise InvalidRecipe(f"{self.kind} does not take {sorted(unknown)}")

    def get(self, name):
        return self.params.get(name, _DEFAULTS[self.kind][name])

    @property
    def label(self) -> str:
        if self.kind in ("deep_tree", "wide_tree"):
            return f"{self.kind}({self.get('depth')},{self.get('branching')})"
        if self.kind == "chain":
            return f"chain({self.get('length')})"
        if self.kind == "edgeless":
            return f"edgeless({self.get('n')})"
        return self.kind


def _tree(depth: int, branching: int) -> Dag:
    if depth < 1 or branching < 1:
        raise InvalidRecipe("tree needs depth >= 1 and branching >= 1")
    edges = []
    level = [0]
    count = 1
    for _ in range(depth - 1):
        nxt = []
        for parent in level:
            for _ in range(branching):
                edges.append((parent, count))
                nxt.append(count)
                count += 1
        level = nxt
    return build_dag(count, edges)


def _bipartite(n_roots, n_leaves, fan_out, rng) -> Dag:
    if fan_out > n_leaves or min(n_roots, n_leaves, fan_out) < 1:
        raise InvalidRecipe("bipartite needs 1 <= fan_out <= n_leaves")
    edges = []
    for root in range(n_roots):
        for leaf in rng.choice(n_leaves, size=fan_out, replace=False):
            edges.append((root, n_roots + int(leaf)))
    return build_dag(n_roots + n_leaves, edges)


def _hourglass(n_roots, n_middle, n_leaves, edge_prob, rng) -> Dag:
    if min(n_roots, n_middle, n_leaves) < 1 or not (0.0 <= edge_prob <= 1.0):
        raise InvalidRecipe("hourglass needs nonempty layers and edge_prob in [0, 1]")
    roots = np.arange(n_roots)
    middle = n_roots + np.arange(n_middle)
    leaves = n_roots + n_middle + np.arange(n_leaves)
    edges = set()
    for r in roots:
        for m in middle:
            if rng.random() < edge_prob:
                edges.add((int(r), int(m)))
    for m in middle:
        for leaf in leaves:
            if rng.random() < edge_prob:
                edges.add((int(m), int(leaf)))

    def has_out(v):
        return any(e[0] == v for e in edges)

    def has_in(v):
        return any(e[1] == v for e in edges)

    # repair: add one random admissible edge per unmet degree condition
    for r in roots:
        if not has_out(r):
            edges.add((int(r), int(rng.choice(middle))))
    for m in middle:
        if not has_in(m):
            edges.add((int(rng.choice(roots)), int(m)))
        if not has_out(m):
            edges.add((int(m), int(rng.choice(leaves))))
    for leaf in leaves:
        if not has_in(leaf):
            edges.add((int(rng.choice(middle)), int(leaf)))
    return build_dag(n_roots + n_middle + n_leaves, sorted(edges))


def _layered(layers, width, n_parents, rng) -> Dag:
    if layers < 1 or width < 1 or not (1 <= n_parents <= width):
        raise InvalidRecipe("layered graph needs 1 <= n_parents <= width")
    edges = []
    for layer in range(1, layers):
        above = (layer - 1) * width
        for j in range(width):
            child = layer * width + j
            for parent in np.sort(rng.choice(width, size=n_parents, replace=False)):
                edges.append((above + int(parent), child))
    return build_dag(layers * width, edges)


def trigenic_graph(genes: Sequence[str], pairs: Sequence[Sequence[str]], triplets: Sequence[Sequence[str]]):
    """Genetic-interaction graph: genes -> pairs -> triplets.

    Each pair gets an edge from both of its genes; each triplet gets an edge
    from each of its three constituent pairs that was itself measured.
    Returns ``(dag, labels)``.
    """
    labels: list[str] = []
    index: dict = {}

    def add(key, label):
        if key in index:
            raise InvalidRecipe(f"duplicate entry {label!r}")
        index[key] = len(labels)
        labels.append(label)

    for g in genes:
        add((g,), str(g))
    edges = []
    for pair in pairs:
        key = tuple(sorted(pair))
        if len(set(key)) != 2:
            raise InvalidRecipe(f"pair {pair!r} needs two distinct genes")
        for g in key:
            if (g,) not in index:
                raise InvalidRecipe(f"pair {pair!r} references unknown gene {g!r}")
        add(key, "|".join(key))
        edges += [(index[(g,)], index[key]) for g in key]
    for trip in triplets:
        key = tuple(sorted(trip))
        if len(set(key)) != 3:
            raise InvalidRecipe(f"triplet {trip!r} needs three distinct genes")
        add(key, "|".join(key))
        for sub in ((key[0], key[1]), (key[0], key[2]), (key[1], key[2])):
            if sub in index:
                edges.append((index[sub], index[key]))
    return build_dag(len(labels), edges), labels


def gen_graph(recipe: GraphRecipe, rng=None) -> Dag:
    """Build the graph described by ``recipe``.

    Random families draw from ``rng`` if given, otherwise from
    ``recipe.seed``.
    """
    rng = rng if rng is not None else np.random.default_rng(recipe.seed)
    get = recipe.get
    kind = recipe.kind
    if kind in ("deep_tree", "wide_tree"):
        return _tree(int(get("depth")), int(get("branching")))
    if kind == "bipartite":
        return _bipartite(int(get("n_roots")), int(get("n_leaves")), int(get("fan_out")), rng)
    if kind == "hourglass":
        return _hourglass(
            int(get("n_roots")), int(get("n_middle")), int(get("n_leaves")), float(get("edge_prob")), rng
        )
    if kind == "layered_random":
        return _layered(int(get("layers")), int(get("width")), int(get("n_parents")), rng)
    if kind == "trigenic":
        return trigenic_graph(get("genes"), get("pairs"), get("triplets"))[0]
    if kind == "chain":
        length = int(get("length"))
        if length < 1:
            raise InvalidRecipe("chain needs length >= 1")
        return build_dag(length, [(i, i + 1) for i in range(length - 1)])
    n = int(get("n"))
    if n < 1:
        raise InvalidRecipe("edgeless graph needs n >= 1")
    return build_dag(n, [])


SCHEME_KINDS = ("global_normal", "incremental_normal", "global_beta", "incremental_beta", "depth_beta")


@dataclass(frozen=True)
class AlternativeScheme:
    """How signals are placed on the graph and how their p-values are drawn.

    ``global_*`` flips every node independently with ``nonnull_prob`` and
    closes the result upward; ``incremental_*`` flips leaves only and makes
    an internal node a signal iff one of its children is.  ``*_normal``
    draws one-sided z-scores with mean ``mean`` (global) or
    ``base + slope * (D - d)`` (incremental); ``*_beta`` draws signal
    p-values from ``Beta(exp(beta_log_a - slope * (D - d)), beta_b)`` with
    the depth term only for the incremental kind.  ``depth_beta`` makes
    exactly the nodes at ``nonnull_depths`` signals, with
    ``Beta(beta_a, beta_b)`` p-values.
    """

    kind: str = "global_normal"
    nonnull_prob: float = 0.5
    mean: float = 2.0
    base: float = 1.0
    slope: float = 0.3
    beta_log_a: float = -4.0
    beta_b: float = 0.5
    beta_a: float = 0.1
    nonnull_depths: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown alternative scheme {self.kind!r}")
        if not (0.0 <= self.nonnull_prob <= 1.0):
            raise ConfigError("nonnull_prob must lie in [0, 1]")
        if self.beta_b <= 0 or self.beta_a <= 0:
            raise ConfigError("beta shape parameters must be positive")

    @classmethod
    def named(cls, name: str) -> "AlternativeScheme":
        """Preset by command-line name: the independent-null presets use
        ``nonnull_prob = 0.5``, the Beta presets ``0.2``."""
        if name in ("global", "global_normal"):
            return cls("global_normal")
        if name in ("incremental", "incremental_normal"):
            return cls("incremental_normal")
        if name == "global_beta":
            return cls("global_beta", nonnull_prob=0.2)
        if name == "incremental_beta":
            return cls("incremental_beta", nonnull_prob=0.2)
        if name == "null":
            return cls("global_normal", nonnull_prob=0.0)
        raise ConfigError(f"unknown scheme {name!r}")

    @property
    def label(self) -> str:
        if self.kind == "depth_beta":
            return "depth_beta(" + ",".join(str(d) for d in self.nonnull_depths) + ")"
        if self.nonnull_prob == 0.0:
            return "null"
        return self.kind


def gen_truth(dag: Dag, scheme: AlternativeScheme, rng) -> TruthAssignment:
    """Draw which hypotheses are false; always closed under ancestors."""
    rng = np.random.default_rng(rng)
    n = dag.node_count
    order = list(reversed(dag.topo_order))
    flags = np.zeros(n, dtype=bool)
    if scheme.kind == "depth_beta":
        flags = np.isin(dag.depth_array, list(scheme.nonnull_depths))
    elif scheme.kind.startswith("global"):
        draws = rng.random(n) < scheme.nonnull_prob
        flags[order] = draws
    else:
        for v in order:
            if not dag.children_of[v]:
                flags[v] = rng.random() < scheme.nonnull_prob
    for v in order:
        if flags[v]:
            for u in dag.parents_of[v]:
                flags[u] = True
    return TruthAssignment(flags)


def _signal_pvalues(dag: Dag, scheme: AlternativeScheme, signal: np.ndarray, rng):
    """p-values for the nodes in ``signal`` (returned aligned with it)."""
    gap = (dag.max_depth - dag.depth_array[signal]).astype(float)
    if scheme.kind.endswith("normal"):
        shift = scheme.mean if scheme.kind == "global_normal" else scheme.base + scheme.slope * gap
        return special.ndtr(-(shift + rng.standard_normal(len(signal))))
    if scheme.kind == "depth_beta":
        return rng.beta(scheme.beta_a, scheme.beta_b, size=len(signal))
    log_a = scheme.beta_log_a - (scheme.slope * gap if scheme.kind == "incremental_beta" else 0.0)
    return rng.beta(np.exp(log_a), scheme.beta_b, size=len(signal))


def gen_pvalues_independent(dag: Dag, truth: TruthAssignment, scheme: AlternativeScheme, rng, *, noise=None):
    """Independent p-values: uniform nulls, scheme-dependent signals.

    For the normal schemes ``p = 1 - Phi(z)``; ``noise`` overrides the
    standard-normal draws (one per node) so tests can pin ``z``.
    """
    rng = np.random.default_rng(rng)
    n = dag.node_count
    nonnull = truth.nonnull
    p = np.empty(n)
    nulls = np.flatnonzero(~nonnull)
    signal = np.flatnonzero(nonnull)
    if scheme.kind.endswith("normal"):
        eps = rng.standard_normal(n) if noise is None else np.asarray(noise, dtype=float)
        z = eps.copy()
        z[signal] += (
            scheme.mean
            if scheme.kind == "global_normal"
            else scheme.base + scheme.slope * (dag.max_depth - dag.depth_array[signal])
        )
        p[:] = special.ndtr(-z)
    else:
        p[nulls] = rng.random(len(nulls))
        p[signal] = _signal_pvalues(dag, scheme, signal, rng)
    return clamp_pvalues(p, warn=False)


def copula_null_covariance(dag: Dag, truth: TruthAssignment) -> np.ndarray:
    """Covariance of the graph Gaussian process over null nodes.

    Each null node is the mean of its null parents plus independent N(0, 1)
    noise (a null node without null parents is pure noise).  Rows and
    columns of signal nodes are zero.
    """
    n = dag.node_count
    null = ~truth.nonnull
    cov = np.zeros((n, n))
    for v in dag.topo_order:
        if not null[v]:
            continue
        ps = [u for u in dag.parents_of[v] if null[u]]
        if ps:
            row = cov[ps].mean(axis=0)
            cov[v, :] = row
            cov[:, v] = row
            cov[v, v] = 1.0 + cov[np.ix_(ps, ps)].mean()
        else:
            cov[v, v] = 1.0
    return cov


def gen_pvalues_copula(
    dag: Dag, truth: TruthAssignment, scheme: AlternativeScheme, rng, *, covariance=None
) -> np.ndarray:
    """Dependent nulls from the graph Gaussian process, uniformised exactly.

    ``p_v = Phi(Z_v / sd_v)`` with ``sd_v`` the exact marginal standard
    deviation, so every null is marginally uniform and null pairs are
    nonnegatively correlated.  Signals follow ``scheme`` independently.
    """
    rng = np.random.default_rng(rng)
    null = ~truth.nonnull
    cov = copula_null_covariance(dag, truth) if covariance is None else covariance
    z = np.zeros(dag.node_count)
    eps = rng.standard_normal(dag.node_count)
    for v in dag.topo_order:
        if not null[v]:
            continue
        ps = [u for u in dag.parents_of[v] if null[u]]
        z[v] = (z[ps].mean() if ps else 0.0) + eps[v]
    p = np.empty(dag.node_count)
    idx = np.flatnonzero(null)
    p[idx] = special.ndtr(z[idx] / np.sqrt(np.diag(cov)[idx]))
    signal = np.flatnonzero(~null)
    p[signal] = _signal_pvalues(dag, scheme, signal, rng)
    return clamp_pvalues(p, warn=False)


@dataclass(frozen=True)
class TrialMetrics:
    power: float
    fdp: float
    any_false: bool
    fdp_exceeds_gamma: bool


def compute_metrics(result: SelectionResult | np.ndarray, truth: TruthAssignment, gamma: float = 0.1) -> TrialMetrics:
    """Power, false discovery proportion and the two exceedance indicators.

    With no signals, power is 1 if nothing false was rejected and 0 otherwise.
    """
    nonnull = truth.nonnull
    mask = result if isinstance(result, np.ndarray) else result.mask(len(nonnull))
    n_rej = int(mask.sum())
    false = int((mask & ~nonnull).sum())
    n_sig = int(nonnull.sum())
    if n_sig:
        power = (mask & nonnull).sum() / n_sig
    else:
        power = 1.0 if false == 0 else 0.0
    fdp = false / max(1, n_rej)
    return TrialMetrics(float(power), float(fdp), false > 0, fdp > gamma)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Grid of experiments for :func:`run_benchmark`.

    ``null_model`` is ``"independent"`` or ``"copula"``.  With
    ``regenerate_graph`` the random graph families are redrawn every trial;
    otherwise one graph per recipe is reused with fresh data per trial.
    """

    recipes: tuple
    schemes: tuple
    smoothings: tuple
    selectors: tuple
    alphas: tuple = ALPHA_GRID
    trials: int = 100
    seed: int = 0
    gamma: float = 0.1
    null_model: str = "independent"
    regenerate_graph: bool = False
    workers: int | None = None

    def validate(self):
        for name in ("recipes", "schemes", "smoothings", "selectors", "alphas"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        for s in self.selectors:
            if s not in SELECTORS:
                raise ConfigError(f"unknown selector {s!r}")
        for a in self.alphas:
            if not (0.0 < a <= 1.0):
                raise ConfigError(f"alpha {a} outside (0, 1]")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must lie in [0, 1)")
        if self.null_model not in ("independent", "copula"):
            raise ConfigError(f"unknown null model {self.null_model!r}")


@dataclass(frozen=True)
class BenchmarkSummary:
    """Aggregates over trials for one (recipe, scheme, smoothing, method, alpha) cell.

    ``per_trial`` holds the raw ``(power, fdp, any_false, exceeds)`` rows
    for paired comparisons between cells.
    """

    recipe: str
    scheme: str
    smoothing: str
    method: str
    alpha: float
    trials: int
    power: float
    err_fwer: float
    err_fdx: float
    err_fdr: float
    se_power: float
    se_fwer: float
    se_fdx: float
    se_fdr: float
    per_trial: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def key(self):
        return (self.recipe, self.scheme, self.smoothing, self.method, self.alpha)

    def row(self) -> dict:
        return {
            "recipe": self.recipe,
            "scheme": self.scheme,
            "smoothing": self.smoothing,
            "method": self.method,
            "alpha": self.alpha,
            "trials": self.trials,
            "power": self.power,
            "err_fwer": self.err_fwer,
            "err_fdx": self.err_fdx,
            "err_fdr": self.err_fdr,
            "se_power": self.se_power,
            "se_fwer": self.se_fwer,
            "se_fdx": self.se_fdx,
            "se_fdr": self.se_fdr,
        }


def _trial_streams(seed: int, recipe_idx: int, scheme_idx: int, trial: int):
    ss = np.random.SeedSequence(seed, spawn_key=(recipe_idx, scheme_idx, trial))
    data, graph = ss.spawn(2)
    return np.random.default_rng(data), np.random.default_rng(graph)


def _recipe_graph(config: BenchmarkConfig, recipe_idx: int, recipe: GraphRecipe) -> Dag:
    if recipe.seed is not None:
        return gen_graph(recipe)
    ss = np.random.SeedSequence(config.seed, spawn_key=(recipe_idx, 2**31))
    return gen_graph(recipe, np.random.default_rng(ss))


def _run_trial(config: BenchmarkConfig, recipe_idx: int, scheme_idx: int, trial: int, dag: Dag | None):
    """One trial: all smoothings x selectors x alphas on shared data.

    Returns an array of shape (smoothings, selectors, alphas, 4).
    """
    recipe = config.recipes[recipe_idx]
    scheme = config.schemes[scheme_idx]
    data_rng, graph_rng = _trial_streams(config.seed, recipe_idx, scheme_idx, trial)
    if dag is None:
        dag = gen_graph(recipe, graph_rng)
    truth = gen_truth(dag, scheme, data_rng)
    if config.null_model == "copula":
        p = gen_pvalues_copula(dag, truth, scheme, data_rng)
    else:
        p = gen_pvalues_independent(dag, truth, scheme, data_rng)
    constants = dagger_constants(dag) if "fdr-dagger" in config.selectors else None
    out = np.zeros((len(config.smoothings), len(config.selectors), len(config.alphas), 4))
    for si, spec in enumerate(config.smoothings):
        ps = smooth(dag, p, spec, warn=False)
        for ai, alpha in enumerate(config.alphas):
            mg = None
            for mi, method in enumerate(config.selectors):
                if method in ("fwer-mg", "fdx"):
                    if mg is None:
                        mg = select_fwer_mg(dag, ps, alpha)
                    mask = mg.mask(dag.node_count)
                    if method == "fdx":
                        mask = _augment(dag, mask, config.gamma)
                elif method == "fdr-dagger":
                    mask = select_fdr_dagger(dag, ps, alpha, constants=constants).mask(dag.node_count)
                else:
                    mask = select_bh(ps, alpha).mask(dag.node_count)
                m = compute_metrics(mask, truth, config.gamma)
                out[si, mi, ai] = (m.power, m.fdp, m.any_false, m.fdp_exceeds_gamma)
    return out


def _augment(dag: Dag, mask: np.ndarray, gamma: float) -> np.ndarray:
    budget = fdx_budget(int(mask.sum()), gamma)
    if not budget:
        return mask
    order = dag.induced_topological_order(np.flatnonzero(~mask).tolist())
    out = mask.copy()
    out[order[:budget]] = True
    return out


def _worker_count(config: BenchmarkConfig) -> int:
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get("DAGSMOOTH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DAGSMOOTH_THREADS must be an integer, got {env!r}") from None
    return 1


def _run_block(args):
    config, ri, si, trials, dag = args
    return [_run_trial(config, ri, si, t, dag) for t in trials]


def run_benchmark(config: BenchmarkConfig) -> list[BenchmarkSummary]:
    """Run every cell of the grid and aggregate per-trial metrics.

    Each trial's randomness is derived from ``(seed, recipe, scheme, trial)``
    so results do not depend on worker count or execution order.
    """
    config.validate()
    workers = _worker_count(config)
    summaries = []
    for ri, recipe in enumerate(config.recipes):
        fixed = None if config.regenerate_graph else _recipe_graph(config, ri, recipe)
        for si, scheme in enumerate(config.schemes):
            trials = list(range(config.trials))
            if workers > 1:
                chunks = [trials[i::workers] for i in range(workers)]
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    parts = list(pool.map(_run_block, [(config, ri, si, c, fixed) for c in chunks]))
                by_trial = {}
                for chunk, res in zip(chunks, parts):
                    by_trial.update(zip(chunk, res))
                results = np.stack([by_trial[t] for t in trials])
            else:
                results = np.stack(_run_block((config, ri, si, trials, fixed)))
            summaries += _summarise(config, recipe, scheme, results)
    return summaries


def _summarise(config, recipe, scheme, results):
    out = []
    n = results.shape[0]
    for si, spec in enumerate(config.smoothings):
        for mi, method in enumerate(config.selectors):
            for ai, alpha in enumerate(config.alphas):
                cell = results[:, si, mi, ai, :]
                power, fdp, anyf, exc = cell.T
                fwer = anyf.mean()
                fdx = exc.mean()
                out.append(
                    BenchmarkSummary(
                        recipe=recipe.label,
                        scheme=scheme.label,
                        smoothing=spec.label(),
                        method=method,
                        alpha=float(alpha),
                        trials=n,
                        power=float(power.mean()),
                        err_fwer=float(fwer),
                        err_fdx=float(fdx),
                        err_fdr=float(fdp.mean()),
                        se_power=float(power.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                        se_fwer=float(np.sqrt(fwer * (1 - fwer) / n)),
                        se_fdx=float(np.sqrt(fdx * (1 - fdx) / n)),
                        se_fdr=float(fdp.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                        per_trial=cell.copy(),
                    )
                )
    return out
