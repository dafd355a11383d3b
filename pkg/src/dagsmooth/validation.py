"""Monte Carlo checks of the guarantees behind smoothing and selection.

Everything here is deterministic given its seed and returns a small report
object with a ``to_dict`` method for JSON output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import reference
from .errors import ConfigError
from .graph import Dag
from .selection import (
    dagger_constants,
    select_fdr_dagger,
    select_fdx,
    select_fwer_mg,
    water_fill_weights,
)
from .simulation import BenchmarkConfig, run_benchmark
from .smoothing import SmoothingSpec, smooth

__all__ = [
    "DEFAULT_GRID",
    "SuperUniformReport",
    "ErrorControlReport",
    "PrdsReport",
    "EquivalenceReport",
    "simulate_nulls",
    "check_superuniformity",
    "check_error_control",
    "prds_diagnostic",
    "reference_equivalence",
]

DEFAULT_GRID = (0.01, 0.02, 0.05, 0.1, 0.25, 0.5)


def simulate_nulls(dag: Dag, n: int, rng, model: str = "independent") -> np.ndarray:
    """All-null p-values of shape ``(n, nodes)``.

    ``"copula"`` uses the graph Gaussian process (each node is the mean of
    its parents plus unit noise), uniformised with the exact marginal sd.
    """
    rng = np.random.default_rng(rng)
    if model == "independent":
        return rng.random((n, dag.node_count))
    if model != "copula":
        raise ConfigError(f"unknown null model {model!r}")
    z = np.zeros((n, dag.node_count))
    var = np.ones(dag.node_count)
    cov = np.zeros((dag.node_count, dag.node_count))
    eps = rng.standard_normal((n, dag.node_count))
    for v in dag.topo_order:
        ps = list(dag.parents_of[v])
        if ps:
            z[:, v] = z[:, ps].mean(axis=1) + eps[:, v]
            row = cov[ps].mean(axis=0)
            cov[v, :] = row
            cov[:, v] = row
            cov[v, v] = 1.0 + cov[np.ix_(ps, ps)].mean()
        else:
            z[:, v] = eps[:, v]
            cov[v, v] = 1.0
        var[v] = cov[v, v]
    return special.ndtr(z / np.sqrt(var))


@dataclass
class SuperUniformReport:
    grid: tuple
    trials: int
    frequency: np.ndarray  # nodes x grid
    bound: np.ndarray  # grid
    passed: np.ndarray  # nodes x grid

    @property
    def verdict(self) -> bool:
        return bool(self.passed.all())

    def failures(self):
        return [(int(v), self.grid[j]) for v, j in zip(*np.nonzero(~self.passed))]

    def to_dict(self):
        return {
            "check": "superuniform",
            "trials": self.trials,
            "grid": list(self.grid),
            "bound": self.bound.tolist(),
            "frequency": self.frequency.tolist(),
            "passed": self.passed.tolist(),
            "verdict": self.verdict,
        }


def check_superuniformity(
    dag: Dag,
    spec: SmoothingSpec,
    n_trials: int = 200_000,
    seed=0,
    grid=DEFAULT_GRID,
    *,
    null_model: str = "independent",
    chunk: int = 50_000,
    min_trials: int = 50_000,
) -> SuperUniformReport:
    """Tabulate ``P(p~_v <= c)`` under the global null against
    ``c + 3 sqrt(c (1 - c) / N)`` for every node and grid point."""
    if n_trials < min_trials:
        raise ConfigError(f"need at least {min_trials} trials")
    rng = np.random.default_rng(seed)
    grid = tuple(float(c) for c in grid)
    cs = np.asarray(grid)
    counts = np.zeros((dag.node_count, len(grid)))
    left = n_trials
    while left:
        size = min(chunk, left)
        ps = smooth(dag, simulate_nulls(dag, size, rng, null_model), spec, warn=False)
        counts += (ps[:, :, None] <= cs).sum(axis=0)
        left -= size
    freq = counts / n_trials
    bound = cs + 3.0 * np.sqrt(cs * (1 - cs) / n_trials)
    return SuperUniformReport(grid, n_trials, freq, bound, freq <= bound)


_TARGET_SELECTORS = {"fwer": ("fwer-mg",), "fdx": ("fdx",), "fdr": ("fdr-dagger", "bh")}


@dataclass
class ErrorControlReport:
    target: str
    cells: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return all(c["passed"] for c in self.cells)

    def to_dict(self):
        return {"check": "error-control", "target": self.target, "cells": self.cells, "verdict": self.verdict}


def _guaranteed(spec: SmoothingSpec, null_model: str) -> bool:
    if null_model == "copula":
        return spec.method in ("none", "conservative_stouffer")
    return True


def check_error_control(
    config: BenchmarkConfig, target: str, *, allow_unguaranteed: bool = False
) -> ErrorControlReport:
    """Run the benchmark and compare each cell's empirical error with
    ``alpha + 3 SE``.

    FWER and FDX use the binomial SE at the nominal level,
    ``sqrt(alpha (1 - alpha) / T)``; FDR uses the sample SE of the FDP.
    Cells without a guarantee (merging smoothers under copula nulls) are
    rejected unless ``allow_unguaranteed`` is set, in which case they are
    reported with ``guaranteed = False``.
    """
    if target not in _TARGET_SELECTORS:
        raise ConfigError(f"unknown target {target!r}")
    bad = [s for s in config.selectors if s not in _TARGET_SELECTORS[target]]
    if bad:
        raise ConfigError(f"selectors {bad} do not target {target}")
    unsafe = [s.label() for s in config.smoothings if not _guaranteed(s, config.null_model)]
    if unsafe and not allow_unguaranteed:
        raise ConfigError(f"no {target} guarantee for {unsafe} under {config.null_model} nulls")
    report = ErrorControlReport(target)
    specs = {s.label(): s for s in config.smoothings}
    for cell in run_benchmark(config):
        t = cell.trials
        a = cell.alpha
        if target == "fdr":
            est, se = cell.err_fdr, cell.se_fdr
        else:
            est = cell.err_fwer if target == "fwer" else cell.err_fdx
            se = float(np.sqrt(a * (1 - a) / t))
        bound = a + 3.0 * se
        report.cells.append(
            {
                "recipe": cell.recipe,
                "scheme": cell.scheme,
                "smoothing": cell.smoothing,
                "method": cell.method,
                "alpha": a,
                "trials": t,
                "estimate": est,
                "bound": bound,
                "margin": bound - est,
                "power": cell.power,
                "guaranteed": _guaranteed(specs[cell.smoothing], config.null_model),
                "passed": bool(est <= bound),
            }
        )
    return report


@dataclass
class PrdsReport:
    null_node: int
    trials: int
    probes: list
    level: float

    @property
    def violations(self) -> int:
        return sum(1 for p in self.probes if p["violation"])

    @property
    def verdict(self) -> bool:
        return self.violations == 0

    def to_dict(self):
        return {
            "check": "prds",
            "null_node": self.null_node,
            "trials": self.trials,
            "level": self.level,
            "violations": self.violations,
            "probes": self.probes,
            "verdict": self.verdict,
        }


def _trend_z(hits: np.ndarray, bins: np.ndarray, n_bins: int) -> float:
    """Cochran-Armitage trend statistic of a binary outcome across ordered bins."""
    n_b = np.bincount(bins, minlength=n_bins).astype(float)
    x_b = np.bincount(bins, weights=hits, minlength=n_bins)
    total = n_b.sum()
    pbar = x_b.sum() / total
    t = np.arange(n_bins, dtype=float)
    stat = np.sum(t * (x_b - n_b * pbar))
    var = pbar * (1 - pbar) * (np.sum(n_b * t**2) - np.sum(n_b * t) ** 2 / total)
    if var <= 0:
        return 0.0
    return float(stat / np.sqrt(var))


def prds_diagnostic(
    dag: Dag,
    spec: SmoothingSpec | None,
    n_trials: int = 200_000,
    seed=0,
    null_node: int = 0,
    probe_upper_sets: int = 20,
    *,
    null_model: str = "independent",
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
    n_bins: int = 10,
    level: float = 1e-3,
    min_trials: int = 200_000,
) -> PrdsReport:
    """Screen for PRDS violations at one null coordinate.

    Bins the simulated ``p~`` at ``null_node`` into rank deciles and, for
    random coordinate-threshold upper sets ``D = {x : x_j >= t_j, j in J}``,
    tests whether ``P(p~ in D | bin)`` decreases across bins (one-sided
    trend test at ``level``).  Passing is necessary, not sufficient.
    ``transform`` replaces the smoothing step, e.g. to plant a violation.
    """
    if n_trials < min_trials:
        raise ConfigError(f"need at least {min_trials} trials")
    rng = np.random.default_rng(seed)
    raw = simulate_nulls(dag, n_trials, rng, null_model)
    ps = transform(raw) if transform is not None else smooth(dag, raw, spec, warn=False)
    ranks = np.argsort(np.argsort(ps[:, null_node], kind="stable"), kind="stable")
    bins = (ranks * n_bins) // n_trials
    others = [v for v in range(dag.node_count) if v != null_node] or [null_node]
    crit = -special.ndtri(level)
    probes = []
    for _ in range(probe_upper_sets):
        size = int(rng.integers(1, min(3, len(others)) + 1))
        coords = sorted(rng.choice(others, size=size, replace=False).tolist())
        quants = rng.uniform(0.2, 0.8, size=size)
        thresholds = [float(np.quantile(ps[:, j], q)) for j, q in zip(coords, quants)]
        hits = np.ones(n_trials, dtype=bool)
        for j, t in zip(coords, thresholds):
            hits &= ps[:, j] >= t
        z = _trend_z(hits.astype(float), bins, n_bins)
        probes.append(
            {"coords": coords, "thresholds": thresholds, "trend_z": z, "violation": bool(z < -crit)}
        )
    return PrdsReport(int(null_node), n_trials, probes, level)


@dataclass
class EquivalenceReport:
    ok: bool
    diff: dict

    def __bool__(self):
        return self.ok

    def to_dict(self):
        return {"check": "reference", "verdict": self.ok, "diff": self.diff}


def reference_equivalence(dag: Dag, p, alpha: float, gamma: float = 0.1, *, tol: float = 1e-12) -> EquivalenceReport:
    """Compare production selectors with the literal reference versions.

    Rejection sets must match exactly; water-filling weights at every state
    visited by the reference sequential rejection, and the DAGGER constants,
    must agree within ``tol``.
    """
    p = np.asarray(p, dtype=float)
    plist = p.tolist()
    diff = {}

    ref_mg, states = reference.meijer_goeman(dag, plist, alpha)
    got_mg = set(select_fwer_mg(dag, p, alpha).rejected)
    if got_mg != ref_mg:
        diff["fwer-mg"] = {"production": sorted(got_mg), "reference": sorted(ref_mg)}

    worst = 0.0
    for state in states:
        ref_w = np.asarray(reference.water_fill(dag, state))
        got_w = water_fill_weights(dag, sorted(state))
        worst = max(worst, float(np.max(np.abs(ref_w - got_w), initial=0.0)))
    if worst > tol:
        diff["weights"] = {"max_abs_diff": worst}

    ref_fdx = reference.hybrid_fdx(dag, plist, gamma, alpha)
    got_fdx = set(select_fdx(dag, p, gamma, alpha).rejected)
    if got_fdx != ref_fdx:
        diff["fdx"] = {"production": sorted(got_fdx), "reference": sorted(ref_fdx)}

    ell, m = reference.effective_counts(dag)
    const = dagger_constants(dag)
    gap = max(
        float(np.max(np.abs(const.eff_leaves - ell), initial=0.0)),
        float(np.max(np.abs(const.eff_nodes - m), initial=0.0)),
    )
    if gap > tol:
        diff["dagger_constants"] = {"max_abs_diff": gap}

    ref_fdr = reference.dagger(dag, plist, alpha)
    got_fdr = set(select_fdr_dagger(dag, p, alpha).rejected)
    if got_fdr != ref_fdr:
        diff["fdr-dagger"] = {"production": sorted(got_fdr), "reference": sorted(ref_fdr)}

    return EquivalenceReport(not diff, diff)
