"""Command-line entry point: ``dagsmooth {smooth,select,simulate,validate}``.

Exit codes: 0 success, 1 a validation check failed, 2 usage or
configuration error, 3 unreadable or invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import io as dio
from .errors import (
    AlignmentError,
    ConfigError,
    CycleDetected,
    DomainError,
    DuplicateEdge,
    IndexOutOfRange,
    InputError,
    InvalidRecipe,
    SpecMismatch,
)
from .selection import SELECTORS, run_selector
from .simulation import ALPHA_GRID, AlternativeScheme, BenchmarkConfig, GraphRecipe, gen_graph, run_benchmark
from .smoothing import SmoothingSpec, smooth
from .validation import (
    DEFAULT_GRID,
    check_error_control,
    check_superuniformity,
    prds_diagnostic,
    reference_equivalence,
)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3

_USAGE_ERRORS = (ConfigError, SpecMismatch, DomainError, InvalidRecipe)
_INPUT_ERRORS = (InputError, CycleDetected, DuplicateEdge, IndexOutOfRange, AlignmentError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Settings for ``simulate``, loadable from a JSON file.

    Command-line flags override file values; unknown keys are rejected.
    """

    recipes: list
    schemes: list
    smoothings: list
    methods: list
    alphas: list
    trials: int = 100
    seed: int = 0
    gamma: float = 0.1
    null_model: str = "independent"
    regenerate_graph: bool = False
    mc_samples: int | None = None

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        defaults = {"recipes": [], "schemes": ["global"], "smoothings": ["none", "fisher"],
                    "methods": list(SELECTORS), "alphas": list(ALPHA_GRID)}
        return cls(**{**defaults, **data})

    def to_benchmark(self) -> BenchmarkConfig:
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not self.recipes:
            raise ConfigError("at least one recipe is required")
        config = BenchmarkConfig(
            recipes=tuple(parse_recipe(r) for r in self.recipes),
            schemes=tuple(AlternativeScheme.named(s) for s in self.schemes),
            smoothings=tuple(
                SmoothingSpec.parse(s, mc_samples=self.mc_samples, seed=self.seed) for s in self.smoothings
            ),
            selectors=tuple(self.methods),
            alphas=tuple(float(a) for a in self.alphas),
            trials=self.trials,
            seed=int(self.seed),
            gamma=float(self.gamma),
            null_model=self.null_model,
            regenerate_graph=bool(self.regenerate_graph),
        )
        config.validate()
        return config


def _number(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    raise ConfigError(f"expected a number, got {text!r}")


def parse_recipe(text: str) -> GraphRecipe:
    """``kind`` or ``kind:key=value,...``; the key ``seed`` fixes the graph."""
    kind, _, rest = text.partition(":")
    params = {}
    seed = None
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"recipe parameter {item!r} must be key=value")
        if key == "seed":
            seed = int(value)
        else:
            params[key] = _number(value)
    return GraphRecipe(kind, params, seed)


def _alphas(text):
    try:
        values = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("alpha list is empty")
    return values


def _add_smoothing_flags(p):
    p.add_argument("--graph", required=True, help="graph file")
    p.add_argument("--pvalues", required=True, help="CSV with header node,p")
    p.add_argument("--smoothing", default="none",
                   help="none|fisher|stouffer|tippett|ruger:k|genmean:r|cons-stouffer[:children|:descendants]")
    p.add_argument("--mc-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dagsmooth", description="Smoothed p-values and selection on DAGs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("smooth", help="write smoothed p-values")
    _add_smoothing_flags(p)
    p.add_argument("--out", default="-")

    p = sub.add_parser("select", help="run a selection procedure")
    _add_smoothing_flags(p)
    p.add_argument("--method", required=True, choices=SELECTORS)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--deterministic", action="store_true", help="omit the timestamp")
    p.add_argument("--out", default="-")

    p = sub.add_parser("simulate", help="run a power/error benchmark")
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--recipe", action="append", help="e.g. deep_tree:depth=6 (repeatable)")
    p.add_argument("--scheme", action="append", help="global|incremental|global_beta|incremental_beta|null")
    p.add_argument("--smoothing", action="append")
    p.add_argument("--method", action="append", choices=SELECTORS)
    p.add_argument("--trials", type=int)
    p.add_argument("--alphas", type=_alphas)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--null-model", choices=("independent", "copula"))
    p.add_argument("--regenerate-graph", action="store_true", default=None)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--out", default="-")

    p = sub.add_parser("validate", help="run a verification check")
    p.add_argument("--check", required=True, choices=("superuniform", "error-control", "prds", "reference"))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--graph", help="graph file")
    src.add_argument("--recipe", help="graph recipe, e.g. chain:length=5")
    p.add_argument("--smoothing", default="fisher")
    p.add_argument("--null-model", choices=("independent", "copula"), default="independent")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--target", choices=("fwer", "fdx", "fdr"), help="error-control target")
    p.add_argument("--scheme", default="global")
    p.add_argument("--alphas", type=_alphas)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--pvalues", help="p-value CSV for the reference check")
    p.add_argument("--null-node", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", default="-")
    return parser


def _load_inputs(args):
    graph = dio.read_graph(args.graph)
    p = dio.read_pvalues(args.pvalues, graph)
    spec = SmoothingSpec.parse(args.smoothing, mc_samples=args.mc_samples, seed=args.seed)
    return graph, p, spec


def _cmd_smooth(args):
    graph, p, spec = _load_inputs(args)
    dio.write_pvalues(args.out, graph.labels, smooth(graph.dag, p, spec))
    return EXIT_OK


def _cmd_select(args):
    graph, p, spec = _load_inputs(args)
    ps = smooth(graph.dag, p, spec)
    result = run_selector(args.method, graph.dag, ps, args.alpha, args.gamma)
    params = {"smoothing": spec.label(), "method": args.method}
    if spec.method == "generalized_mean":
        params.update(mc_samples=spec.mc_samples, seed=spec.seed)
    dio.write_result(args.out, result, graph.labels, params, deterministic=args.deterministic)
    return EXIT_OK


def _cmd_simulate(args):
    data = {}
    if args.config:
        try:
            data = json.loads(dio._read_text(args.config))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "recipes": args.recipe, "schemes": args.scheme, "smoothings": args.smoothing,
        "methods": args.method, "alphas": args.alphas, "trials": args.trials, "seed": args.seed,
        "gamma": args.gamma, "null_model": args.null_model, "regenerate_graph": args.regenerate_graph,
        "mc_samples": args.mc_samples,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "trials" in data and isinstance(data["trials"], int) and data["trials"] < 1:
        raise UsageError("--trials must be at least 1")
    config = RunConfig.from_mapping(data).to_benchmark()
    dio.write_benchmark_csv(args.out, run_benchmark(config))
    return EXIT_OK


def _validation_graph(args):
    if args.graph:
        return dio.read_graph(args.graph)
    if not args.recipe:
        raise UsageError("validate needs --graph or --recipe")
    dag = gen_graph(parse_recipe(args.recipe))
    return dio.LabeledDag(dag, tuple(str(i) for i in range(dag.node_count)))


def _cmd_validate(args):
    spec = SmoothingSpec.parse(args.smoothing, mc_samples=args.mc_samples, seed=args.seed)
    if args.check == "error-control":
        if not args.recipe or not args.target:
            raise UsageError("error-control needs --recipe and --target")
        selector = {"fwer": "fwer-mg", "fdx": "fdx", "fdr": "fdr-dagger"}[args.target]
        config = BenchmarkConfig(
            recipes=(parse_recipe(args.recipe),),
            schemes=(AlternativeScheme.named(args.scheme),),
            smoothings=(spec,),
            selectors=(selector,),
            alphas=tuple(args.alphas or (args.alpha,)),
            trials=args.trials or 500,
            seed=args.seed,
            gamma=args.gamma,
            null_model=args.null_model,
        )
        report = check_error_control(config, args.target)
        verdict = report.verdict
        payload = report.to_dict()
    else:
        graph = _validation_graph(args)
        if args.check == "superuniform":
            report = check_superuniformity(
                graph.dag, spec, args.trials or 200_000, args.seed, DEFAULT_GRID, null_model=args.null_model
            )
        elif args.check == "prds":
            report = prds_diagnostic(
                graph.dag, spec, args.trials or 200_000, args.seed, args.null_node, args.probes,
                null_model=args.null_model,
            )
        else:
            if args.pvalues:
                p = dio.read_pvalues(args.pvalues, graph)
            else:
                p = np.random.default_rng(args.seed).random(graph.dag.node_count)
            report = reference_equivalence(graph.dag, smooth(graph.dag, p, spec), args.alpha, args.gamma)
        verdict = report.verdict if hasattr(report, "verdict") else report.ok
        payload = report.to_dict()
    payload["parameters"] = {k: v for k, v in vars(args).items() if k not in ("out", "verbose", "deterministic")}
    dio.write_json(args.out, payload, deterministic=args.deterministic)
    return EXIT_OK if verdict else EXIT_FAILED


_COMMANDS = {"smooth": _cmd_smooth, "select": _cmd_select, "simulate": _cmd_simulate, "validate": _cmd_validate}


def run_cli(argv=None) -> int:
    """Run one command and return its exit code; errors go to standard error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="dagsmooth: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dagsmooth: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"dagsmooth: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"dagsmooth: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run_cli())
