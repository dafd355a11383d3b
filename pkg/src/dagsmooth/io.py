"""Text formats for graphs, p-values, selection results and benchmark tables.

Graph files are line oriented::

    # comment
    nodes 3
    node c            # optional: pin a label to the next free index
    edge a b

Labels are strings outside the library and dense indices inside; they are
assigned in order of first appearance.  Indices never mentioned get their
decimal index as a label.  A ``trigenic`` line instead opens a block of
``gene``, ``pair`` and ``triplet`` lines.

All writers go through a temporary file in the target directory followed
by an atomic rename.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DuplicateNode, MissingNode, OutOfRange, ParseError
from .graph import Dag, build_dag
from .selection import SelectionResult
from .smoothing import P_CEIL, P_FLOOR
from .simulation import trigenic_graph

__all__ = [
    "LabeledDag",
    "BENCHMARK_COLUMNS",
    "atomic_writer",
    "parse_graph",
    "read_graph",
    "format_graph",
    "write_graph",
    "read_pvalues",
    "write_pvalues",
    "result_to_dict",
    "write_result",
    "read_result",
    "write_benchmark_csv",
    "read_benchmark_csv",
    "write_json",
]

log = logging.getLogger(__name__)

BENCHMARK_COLUMNS = (
    "recipe",
    "scheme",
    "smoothing",
    "method",
    "alpha",
    "trials",
    "power",
    "err_fwer",
    "err_fdx",
    "err_fdr",
    "se_power",
    "se_fwer",
    "se_fdx",
    "se_fdr",
)


@dataclass(frozen=True)
class LabeledDag:
    dag: Dag
    labels: tuple

    @property
    def index(self) -> dict:
        return {label: i for i, label in enumerate(self.labels)}


@contextmanager
def atomic_writer(path, newline=None):
    """Text handle whose contents replace ``path`` only on clean exit.

    ``"-"`` writes to standard output.
    """
    if str(path) == "-":
        yield sys.stdout
        return
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with _suppress():
            os.unlink(tmp)
        raise


@contextmanager
def _suppress():
    try:
        yield
    except OSError:
        pass


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8: {exc}") from None


# ---------------------------------------------------------------- graphs


def _tokens(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_trigenic(lines) -> LabeledDag:
    genes, pairs, triplets = [], [], []
    arity = {"gene": (genes, 1), "pair": (pairs, 2), "triplet": (triplets, 3)}
    for lineno, toks in lines:
        if toks[0] not in arity:
            raise ParseError(f"unexpected {toks[0]!r} in trigenic block", lineno)
        bucket, k = arity[toks[0]]
        if len(toks) != k + 1:
            raise ParseError(f"{toks[0]} takes {k} label(s)", lineno)
        bucket.append(toks[1] if k == 1 else tuple(toks[1:]))
    try:
        dag, labels = trigenic_graph(genes, pairs, triplets)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return LabeledDag(dag, tuple(labels))


def parse_graph(text: str) -> LabeledDag:
    lines = list(_tokens(text))
    if not lines:
        raise ParseError("empty graph file")
    lineno, head = lines[0]
    if head == ["trigenic"]:
        return _parse_trigenic(lines[1:])
    if head[0] != "nodes" or len(head) != 2:
        raise ParseError("expected 'nodes <n>' or 'trigenic'", lineno)
    try:
        n = int(head[1])
    except ValueError:
        raise ParseError(f"bad node count {head[1]!r}", lineno) from None
    if n < 0:
        raise ParseError("node count must be non-negative", lineno)

    index: dict[str, int] = {}

    def resolve(label, lineno):
        if label not in index:
            if len(index) == n:
                raise ParseError(f"label {label!r} exceeds the declared {n} nodes", lineno)
            index[label] = len(index)
        return index[label]

    edges = []
    for lineno, toks in lines[1:]:
        kind = toks[0]
        if kind == "edge" and len(toks) == 3:
            edges.append((resolve(toks[1], lineno), resolve(toks[2], lineno)))
        elif kind == "node" and len(toks) == 2:
            if toks[1] in index:
                raise ParseError(f"node {toks[1]!r} declared twice", lineno)
            resolve(toks[1], lineno)
        else:
            raise ParseError(f"cannot parse {' '.join(toks)!r}", lineno)
    labels = [None] * n
    for label, i in index.items():
        labels[i] = label
    for i in range(len(index), n):
        if str(i) in index:
            raise ParseError(f"implicit label {i} collides with an explicit one")
        labels[i] = str(i)
    return LabeledDag(build_dag(n, edges), tuple(labels))


def read_graph(path) -> LabeledDag:
    """Parse a graph file; raises :class:`ParseError` or a graph error."""
    return parse_graph(_read_text(path))


def format_graph(dag: Dag, labels=None) -> str:
    labels = list(labels) if labels is not None else [str(i) for i in range(dag.node_count)]
    for label in labels:
        if not label or any(c.isspace() for c in label) or "#" in label:
            raise ValueError(f"label {label!r} cannot be written")
    out = [f"nodes {dag.node_count}"]
    out += [f"node {label}" for label in labels]
    out += [f"edge {labels[u]} {labels[v]}" for u, v in dag.edges]
    return "\n".join(out) + "\n"


def write_graph(path, dag: Dag, labels=None) -> None:
    with atomic_writer(path) as fh:
        fh.write(format_graph(dag, labels))


# ---------------------------------------------------------------- p-values


def read_pvalues(path, graph: LabeledDag) -> np.ndarray:
    """Read a ``node,p`` CSV into a vector aligned with ``graph``.

    Values outside ``[0, 1]`` are errors.  Values that smoothing will clamp
    are reported as a warning but returned unchanged.
    """
    index = graph.index
    out = np.full(len(graph.labels), np.nan)
    seen: dict[str, int] = {}
    reader = csv.reader(_io.StringIO(_read_text(path)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["node", "p"]:
        raise ParseError("header must be 'node,p'", 1)
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError("expected two columns", lineno)
        label, raw = row[0].strip(), row[1].strip()
        if label not in index:
            raise ParseError(f"unknown node {label!r}", lineno)
        if label in seen:
            raise DuplicateNode(f"node {label!r} listed twice (lines {seen[label]} and {lineno})")
        seen[label] = lineno
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(f"bad p-value {raw!r}", lineno) from None
        if math.isnan(value):
            raise ParseError("p-value is NaN", lineno)
        if value < 0.0 or value > 1.0:
            raise OutOfRange(f"line {lineno}: p-value {raw} for {label!r} is outside [0, 1]")
        out[index[label]] = value
    missing = [graph.labels[i] for i in np.flatnonzero(np.isnan(out))]
    if missing:
        raise MissingNode(f"no p-value for node(s) {', '.join(map(repr, missing))}")
    extreme = int(np.count_nonzero((out < P_FLOOR) | (out > P_CEIL)))
    if extreme:
        log.warning("%d p-value(s) in %s will be clamped to [%g, 1 - %g]", extreme, path, P_FLOOR, P_FLOOR)
    return out


def write_pvalues(path, labels, values) -> None:
    with atomic_writer(path, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "p"])
        for label, value in zip(labels, np.asarray(values, dtype=float).tolist()):
            writer.writerow([label, repr(value)])


# ---------------------------------------------------------------- results


def _version():
    from . import __version__

    return __version__


def write_json(path, payload: dict, *, deterministic: bool = False) -> None:
    payload = dict(payload)
    payload.setdefault("version", _version())
    if not deterministic:
        payload["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with atomic_writer(path) as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def result_to_dict(result: SelectionResult, labels, parameters: dict | None = None) -> dict:
    labels = list(labels)
    return {
        "method": result.method,
        "rejected": [labels[v] for v in sorted(result.rejected)],
        "rounds": [{"round": r, "nodes": [labels[v] for v in nodes]} for r, nodes in result.rounds],
        "thresholds": {labels[v]: t for v, t in sorted(result.thresholds.items())},
        "parameters": {"alpha": result.alpha, "gamma": result.gamma, **(parameters or {})},
        "labels": {label: i for i, label in enumerate(labels)},
    }


def write_result(path, result: SelectionResult, labels, parameters=None, *, deterministic=False) -> None:
    write_json(path, result_to_dict(result, labels, parameters), deterministic=deterministic)


def read_result(path) -> tuple[SelectionResult, tuple]:
    """Inverse of :func:`write_result`; returns the result and its labels."""
    try:
        data = json.loads(_read_text(path))
        index = data["labels"]
        labels = [None] * len(index)
        for label, i in index.items():
            labels[i] = label
        params = data["parameters"]
        result = SelectionResult(
            frozenset(index[x] for x in data["rejected"]),
            tuple((r["round"], tuple(index[x] for x in r["nodes"])) for r in data["rounds"]),
            {index[k]: float(t) for k, t in data["thresholds"].items()},
            data["method"],
            float(params["alpha"]),
            None if params.get("gamma") is None else float(params["gamma"]),
        )
    except (KeyError, TypeError, IndexError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed result file: {exc}") from None
    return result, tuple(labels)


# ---------------------------------------------------------------- benchmarks


def write_benchmark_csv(path, summaries) -> None:
    with atomic_writer(path, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCHMARK_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for s in summaries:
            row = s.row() if hasattr(s, "row") else s
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_benchmark_csv(path) -> list[dict]:
    reader = csv.DictReader(_io.StringIO(_read_text(path)))
    if tuple(reader.fieldnames or ()) != BENCHMARK_COLUMNS:
        raise ParseError("unexpected benchmark header", 1)
    rows = []
    for row in reader:
        try:
            rows.append(
                {
                    k: (v if k in ("recipe", "scheme", "smoothing", "method") else int(v) if k == "trials" else float(v))
                    for k, v in row.items()
                }
            )
        except ValueError as exc:
            raise ParseError(str(exc), reader.line_num) from None
    return rows
