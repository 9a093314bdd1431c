"""JSON instance files and CSV trace files.

Instance schema: {topology, support, lambda, nodes: [{id, cost,
rootPmf | transition, parent? | line?}], skipCosts?}. Parsers reject unknown
fields. Floats round-trip exactly (json emits shortest-repr doubles).

Trace schema: CSV with header ``exit_1_loss,...,exit_n_loss``; per-exit cost
proxies come either from extra ``cost_1,...,cost_n`` columns (constant per
column) or from a companion costs file with that header and a single row.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .model import (
    ExplorationInstance,
    InvalidInstanceError,
    NodeSpec,
    SkipCostTable,
    Support,
    TraceDataset,
)

_TOP_FIELDS = {"topology", "support", "lambda", "nodes", "skipCosts"}
_NODE_FIELDS = {"id", "cost", "rootPmf", "transition", "parent", "line"}
_SKIP_FIELDS = {"kind", "matrix", "base", "ratePerStep"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise InvalidInstanceError(f"unknown field {sorted(unknown)[0]!r} in {where}")


def instance_to_dict(instance: ExplorationInstance) -> dict:
    nodes = []
    for node in instance.nodes:
        entry: dict = {"id": node.id, "cost": node.cost}
        if node.root_pmf is not None:
            entry["rootPmf"] = [float(x) for x in node.root_pmf]
        else:
            entry["transition"] = [[float(x) for x in row] for row in node.transition]
        if node.parent is not None:
            entry["parent"] = node.parent
        if node.line is not None:
            entry["line"] = node.line
        nodes.append(entry)
    out = {
        "topology": instance.topology,
        "support": [float(v) for v in instance.support.values],
        "lambda": instance.lam,
        "nodes": nodes,
    }
    table = instance.skip_costs
    if table is not None:
        if table.kind == "matrix":
            out["skipCosts"] = {"kind": "matrix", "matrix": [[float(x) for x in row] for row in table.matrix]}
        elif table.kind == "affine":
            out["skipCosts"] = {"kind": "affine", "base": table.base, "ratePerStep": table.rate_per_step}
        else:
            out["skipCosts"] = {"kind": "pathSum"}
    return out


def instance_to_json(instance: ExplorationInstance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2, sort_keys=True) + "\n"


def instance_from_dict(data: dict) -> ExplorationInstance:
    if not isinstance(data, dict):
        raise InvalidInstanceError("instance file must hold a JSON object")
    _reject_unknown(data, _TOP_FIELDS, "instance")
    for field in ("topology", "support", "lambda", "nodes"):
        if field not in data:
            raise InvalidInstanceError(f"missing field {field!r}")
    nodes = []
    for raw in data["nodes"]:
        _reject_unknown(raw, _NODE_FIELDS, f"node {raw.get('id')!r}")
        if "id" not in raw or "cost" not in raw:
            raise InvalidInstanceError("every node needs id and cost")
        if ("rootPmf" in raw) == ("transition" in raw):
            raise InvalidInstanceError(
                f"node {raw['id']!r}: exactly one of rootPmf/transition required"
            )
        nodes.append(
            NodeSpec(
                id=str(raw["id"]),
                cost=float(raw["cost"]),
                root_pmf=np.asarray(raw["rootPmf"], dtype=float) if "rootPmf" in raw else None,
                transition=np.asarray(raw["transition"], dtype=float) if "transition" in raw else None,
                parent=raw.get("parent"),
                line=raw.get("line"),
            )
        )
    skip = None
    if "skipCosts" in data:
        raw = data["skipCosts"]
        _reject_unknown(raw, _SKIP_FIELDS, "skipCosts")
        kind = raw.get("kind")
        if kind == "matrix":
            skip = SkipCostTable.from_matrix(raw["matrix"])
        elif kind == "affine":
            skip = SkipCostTable.affine(len(nodes), float(raw["base"]), float(raw["ratePerStep"]))
        elif kind == "pathSum":
            skip = SkipCostTable.path_sum([n.cost for n in nodes])
        else:
            raise InvalidInstanceError(f"unknown skipCosts kind {kind!r}")
    return ExplorationInstance(
        topology=str(data["topology"]),
        support=Support(tuple(float(v) for v in data["support"])),
        lam=float(data["lambda"]),
        nodes=tuple(nodes),
        skip_costs=skip,
    )


def instance_from_json(text: str) -> ExplorationInstance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError(f"invalid JSON: {exc}") from exc
    return instance_from_dict(data)


def load_instance(path) -> ExplorationInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_json(fh.read())


def save_instance(instance: ExplorationInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(instance_to_json(instance))


# -- traces -------------------------------------------------------------------


def _parse_costs_header(header: list[str], prefix: str) -> list[int]:
    cols = []
    for idx, name in enumerate(header):
        if name.startswith(prefix):
            cols.append(idx)
    return cols


def trace_from_csv(text: str, costs_text: str | None = None) -> TraceDataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise InvalidInstanceError("no data")
    loss_cols = [i for i, name in enumerate(header) if name.startswith("exit_") and name.endswith("_loss")]
    if not loss_cols:
        raise InvalidInstanceError("trace header must name exit_<i>_loss columns")
    cost_cols = _parse_costs_header(header, "cost_")
    loss_rows: list[list[float]] = []
    cost_row: list[float] | None = None
    for row in reader:
        if not row:
            continue
        loss_rows.append([float(row[i]) for i in loss_cols])
        if cost_cols and cost_row is None:
            cost_row = [float(row[i]) for i in cost_cols]
    if not loss_rows:
        raise InvalidInstanceError("no data")
    if cost_row is None:
        if costs_text is None:
            raise InvalidInstanceError("per-exit costs required (columns or companion file)")
        creader = csv.reader(io.StringIO(costs_text))
        cheader = next(creader, None)
        if not cheader or not all(name.startswith("cost_") for name in cheader):
            raise InvalidInstanceError("costs file header must name cost_<i> columns")
        cost_row = [float(x) for x in next(creader)]
    losses = np.asarray(loss_rows, dtype=float)
    if len(cost_row) != losses.shape[1]:
        raise InvalidInstanceError("one cost per exit required")
    return TraceDataset(losses=losses, costs=np.asarray(cost_row, dtype=float))


def load_trace(path, costs_path=None) -> TraceDataset:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    costs_text = None
    if costs_path is not None:
        with open(costs_path, "r", encoding="utf-8") as fh:
            costs_text = fh.read()
    return trace_from_csv(text, costs_text)


def trace_to_csv(trace: TraceDataset, include_costs: bool = True) -> str:
    n = trace.num_exits
    header = [f"exit_{j + 1}_loss" for j in range(n)]
    if include_costs:
        header += [f"cost_{j + 1}" for j in range(n)]
    lines = [",".join(header)]
    for row in trace.losses:
        cells = [repr(float(x)) for x in row]
        if include_costs:
            cells += [repr(float(c)) for c in trace.costs]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
