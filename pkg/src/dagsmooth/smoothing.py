"""Descendant smoothing of node-level p-values.

Every transform maps the p-values on a node's support (by default the node
plus all of its descendants) to a merged statistic, then evaluates that
statistic's null CDF under i.i.d. uniform inputs.  All functions accept a
single vector of shape ``(n,)`` or a batch of shape ``(trials, n)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import AlignmentError, DomainError, SpecMismatch
from .graph import Dag
from .nulldist import (
    IRWIN_HALL_MAX_N,
    beta_cdf,
    build_empirical_cdf,
    chi_square_sf,
    irwin_hall_cdf,
)

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "P_FLOOR",
    "P_CEIL",
    "SmoothingSpec",
    "clamp_pvalues",
    "smooth",
    "smooth_fisher",
    "smooth_stouffer",
    "smooth_order",
    "smooth_generalized_mean",
    "smooth_conservative_stouffer",
]

P_FLOOR = 1e-15
P_CEIL = 1.0 - 1e-15

METHODS = (
    "none",
    "fisher",
    "stouffer",
    "tippett",
    "ruger",
    "generalized_mean",
    "conservative_stouffer",
)
WEIGHT_SCHEMES = ("self_plus_children", "all_descendants")

DEFAULT_MC_SAMPLES = 200_000
DEFAULT_SEED = 0

# which optional fields each method may carry; "k"/"r" are also required
_ALLOWED = {
    "none": set(),
    "fisher": {"weight_scheme"},
    "stouffer": set(),
    "tippett": set(),
    "ruger": {"k"},
    "generalized_mean": {"r", "mc_samples", "seed"},
    "conservative_stouffer": {"weight_scheme"},
}
_REQUIRED = {"ruger": {"k"}, "generalized_mean": {"r"}}

_CLI_ALIASES = {
    "genmean": "generalized_mean",
    "cons-stouffer": "conservative_stouffer",
    "conservative-stouffer": "conservative_stouffer",
}
_SCHEME_ALIASES = {
    "children": "self_plus_children",
    "descendants": "all_descendants",
    "self_plus_children": "self_plus_children",
    "all_descendants": "all_descendants",
}


@dataclass(frozen=True)
class SmoothingSpec:
    """Which smoothing transform to apply, with its parameters.

    ``k`` is the order-statistic index for ``ruger``; ``r`` the exponent in
    (0, 1] for ``generalized_mean``; ``weight_scheme`` selects the support of
    ``conservative_stouffer`` (and optionally ``fisher``).  ``mc_samples``
    and ``seed`` drive the Monte Carlo null used by ``generalized_mean``
    whenever no closed form applies.
    """

    method: str = "none"
    k: int | None = None
    r: float | None = None
    weight_scheme: str | None = None
    mc_samples: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecMismatch(f"unknown smoothing method {self.method!r}")
        given = {
            name
            for name in ("k", "r", "weight_scheme", "mc_samples", "seed")
            if getattr(self, name) is not None
        }
        extra = given - _ALLOWED[self.method]
        if extra:
            raise SpecMismatch(f"{self.method} does not take {sorted(extra)}")
        missing = _REQUIRED.get(self.method, set()) - given
        if missing:
            raise SpecMismatch(f"{self.method} requires {sorted(missing)}")
        if self.k is not None and (int(self.k) != self.k or self.k < 1):
            raise SpecMismatch(f"k must be a positive integer, got {self.k}")
        if self.r is not None and not (0.0 < self.r <= 1.0):
            raise SpecMismatch(f"r must lie in (0, 1], got {self.r}")
        if self.weight_scheme is not None and self.weight_scheme not in WEIGHT_SCHEMES:
            raise SpecMismatch(f"unknown weight scheme {self.weight_scheme!r}")
        if self.mc_samples is not None and self.mc_samples < 10_000:
            raise SpecMismatch("mc_samples must be at least 10000")
        # spell out defaults so equal transforms compare equal
        if self.method == "conservative_stouffer" and self.weight_scheme is None:
            object.__setattr__(self, "weight_scheme", "self_plus_children")
        if self.method == "fisher" and self.weight_scheme == "all_descendants":
            object.__setattr__(self, "weight_scheme", None)

    @classmethod
    def parse(cls, text: str, *, mc_samples=None, seed=None) -> "SmoothingSpec":
        """Build a spec from the command-line form, e.g. ``ruger:2``,
        ``genmean:0.5`` or ``cons-stouffer:descendants``."""
        name, _, arg = text.strip().partition(":")
        method = _CLI_ALIASES.get(name, name)
        if method not in METHODS:
            raise SpecMismatch(f"unknown smoothing {text!r}")
        kwargs = {}
        try:
            if method == "ruger":
                if not arg:
                    raise SpecMismatch("ruger needs an order index, e.g. ruger:2")
                kwargs["k"] = int(arg)
            elif method == "generalized_mean":
                if not arg:
                    raise SpecMismatch("genmean needs an exponent, e.g. genmean:0.5")
                kwargs["r"] = float(arg)
                kwargs["mc_samples"] = mc_samples
                kwargs["seed"] = seed
            elif method in ("conservative_stouffer", "fisher") and arg:
                if arg not in _SCHEME_ALIASES:
                    raise SpecMismatch(f"unknown support {arg!r}")
                kwargs["weight_scheme"] = _SCHEME_ALIASES[arg]
            elif arg:
                raise SpecMismatch(f"{method} takes no argument")
        except ValueError as exc:
            if isinstance(exc, SpecMismatch):
                raise
            raise SpecMismatch(f"bad smoothing argument in {text!r}") from exc
        return cls(method, **kwargs)

    def label(self) -> str:
        """Short stable name used in reports and CSV output."""
        if self.method == "ruger":
            return f"ruger:{self.k}"
        if self.method == "generalized_mean":
            text = repr(float(self.r))
            return "genmean:" + (text[:-2] if text.endswith(".0") else text)
        if self.method == "conservative_stouffer":
            return "cons-stouffer:" + ("children" if self.weight_scheme == "self_plus_children" else "descendants")
        if self.method == "fisher" and self.weight_scheme == "self_plus_children":
            return "fisher:children"
        return self.method


def clamp_pvalues(p, *, warn: bool = True) -> np.ndarray:
    """Clip p-values into ``[1e-15, 1 - 1e-15]`` so logs and quantiles stay finite."""
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(p)) or np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("p-values must lie in [0, 1]")
    outside = (p < P_FLOOR) | (p > P_CEIL)
    if np.any(outside):
        if warn:
            log.warning("clamped %d p-value(s) into [%g, 1 - %g]", int(outside.sum()), P_FLOOR, P_FLOOR)
        p = np.clip(p, P_FLOOR, P_CEIL)
    return p


def _prepare(dag: Dag, p, warn=True) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim not in (1, 2) or p.shape[-1] != dag.node_count:
        raise AlignmentError(
            f"p-values of shape {p.shape} do not align with {dag.node_count} nodes"
        )
    return clamp_pvalues(p, warn=warn)


def _support(dag: Dag, scheme: str | None, default: str):
    scheme = scheme or default
    if scheme == "all_descendants":
        return dag.closure_matrix, dag.closure_sizes
    matrix = dag.family_matrix
    return matrix, np.diff(matrix.indptr)


def _aggregate(matrix, x: np.ndarray) -> np.ndarray:
    """Row sums of ``x`` over each node's support, keeping the batch axis."""
    return np.asarray((matrix @ x.T).T)


def _keep_singletons(p, out, sizes):
    return np.where(sizes == 1, p, out)


def smooth_fisher(dag: Dag, p, *, weight_scheme: str | None = None, _checked=False):
    """Fisher smoothing: chi-square tail of ``-2 sum log p`` with ``2|C_v|`` df."""
    p = p if _checked else _prepare(dag, p)
    matrix, sizes = _support(dag, weight_scheme, "all_descendants")
    stat = _aggregate(matrix, -2.0 * np.log(p))
    out = chi_square_sf(np.maximum(stat, 0.0), 2 * sizes)
    return _keep_singletons(p, out, sizes)


def smooth_stouffer(dag: Dag, p, *, _checked=False):
    """Stouffer smoothing: ``Phi(sum z / sqrt|C_v|)`` with ``z = Phi^-1(p)``."""
    p = p if _checked else _prepare(dag, p)
    sizes = dag.closure_sizes
    total = _aggregate(dag.closure_matrix, special.ndtri(p))
    out = special.ndtr(total / np.sqrt(sizes))
    return _keep_singletons(p, out, sizes)


def smooth_order(dag: Dag, p, k: int = 1, *, _checked=False):
    """Order-statistic smoothing (Tippett for ``k = 1``, Rüger otherwise).

    The k-th smallest p-value in a closure of size m is Beta(k, m - k + 1)
    under the null; ``k`` is clamped to m per node.
    """
    p = p if _checked else _prepare(dag, p)
    if int(k) != k or k < 1:
        raise SpecMismatch("k must be a positive integer")
    out = np.array(p, dtype=float, copy=True)
    for v, closure in enumerate(dag.closures):
        m = len(closure)
        if m == 1:
            continue
        kk = min(int(k), m)
        kth = np.partition(p[..., closure], kk - 1, axis=-1)[..., kk - 1]
        out[..., v] = beta_cdf(kth, kk, m - kk + 1)
    return out


@lru_cache(maxsize=64)
def _genmean_null(r: float, m: int, n_samples: int, seed: int):
    stream = np.random.SeedSequence([seed, m])
    return build_empirical_cdf(lambda u: np.sum(u**r, axis=1), m, n_samples, stream)


def smooth_generalized_mean(
    dag: Dag,
    p,
    r: float,
    mc_samples: int | None = None,
    seed: int | None = None,
    *,
    _checked=False,
):
    """Generalized-mean smoothing with exponent ``r`` in (0, 1].

    The mean ``((1/m) sum p^r)^(1/r)`` is a monotone function of
    ``sum p^r``, so the null CDF is evaluated on the power sum: exactly via
    Irwin-Hall when ``r = 1`` and ``m <= 40``, otherwise by Monte Carlo with
    a stream keyed on ``(seed, m)``.
    """
    p = p if _checked else _prepare(dag, p)
    if not (0.0 < r <= 1.0):
        raise SpecMismatch(f"r must lie in (0, 1], got {r}")
    n_samples = DEFAULT_MC_SAMPLES if mc_samples is None else int(mc_samples)
    seed = DEFAULT_SEED if seed is None else int(seed)
    sizes = dag.closure_sizes
    power_sum = _aggregate(dag.closure_matrix, p if r == 1.0 else p**r)
    out = np.array(p, dtype=float, copy=True)
    for m in np.unique(sizes):
        m = int(m)
        if m == 1:
            continue
        cols = np.flatnonzero(sizes == m)
        if r == 1.0 and m <= IRWIN_HALL_MAX_N:
            out[..., cols] = irwin_hall_cdf(power_sum[..., cols], m)
        else:
            out[..., cols] = _genmean_null(float(r), m, n_samples, seed).evaluate(power_sum[..., cols])
    return out


def smooth_conservative_stouffer(dag: Dag, p, weight_scheme: str | None = None, *, _checked=False):
    """Truncated weighted z-average that stays valid under any Gaussian copula.

    ``p~ = 1`` when the equally weighted mean of ``Phi^-1(p)`` over the
    support is nonnegative, ``Phi(mean)`` otherwise.  The default support is
    the node with its direct children.
    """
    p = p if _checked else _prepare(dag, p)
    matrix, sizes = _support(dag, weight_scheme, "self_plus_children")
    mean = _aggregate(matrix, special.ndtri(p)) / sizes
    out = np.where(mean >= 0.0, 1.0, special.ndtr(mean))
    # a single-term average is p itself on the negative branch
    single = np.where(p < 0.5, p, 1.0)
    return np.where(sizes == 1, single, out)


def smooth(dag: Dag, p, spec: SmoothingSpec, *, warn: bool = True) -> np.ndarray:
    """Apply ``spec`` to ``p`` (shape ``(n,)`` or ``(trials, n)``)."""
    if not isinstance(spec, SmoothingSpec):
        raise SpecMismatch("spec must be a SmoothingSpec")
    method = spec.method
    if method == "none":
        raw = np.array(p, dtype=float, copy=True)
        _prepare(dag, raw, warn=False)
        return raw
    p = _prepare(dag, p, warn=warn)
    if method == "fisher":
        return smooth_fisher(dag, p, weight_scheme=spec.weight_scheme, _checked=True)
    if method == "stouffer":
        return smooth_stouffer(dag, p, _checked=True)
    if method == "tippett":
        return smooth_order(dag, p, 1, _checked=True)
    if method == "ruger":
        return smooth_order(dag, p, spec.k, _checked=True)
    if method == "generalized_mean":
        return smooth_generalized_mean(dag, p, spec.r, spec.mc_samples, spec.seed, _checked=True)
    return smooth_conservative_stouffer(dag, p, spec.weight_scheme, _checked=True)
