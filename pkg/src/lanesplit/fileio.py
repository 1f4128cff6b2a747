"""Reading and writing node-problem and scenario files, traces and results.

Configuration files are YAML with a ``schema_version`` and a ``units``
header. Scenario values are converted to hours and kilometres on load; node
problems are always in vehicles per timestep.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, List

import jsonschema
import numpy as np
import yaml

from .link import FundamentalDiagram
from .problem import NodeProblem, ValidationError
from .simulator import Link, NodeSpec, Scenario, SimResult, Sink, Source
from .solver import BalanceRule, SolverOptions, SolverState, SolverTrace

SCHEMA_VERSION = 1

TIME_UNITS = {"h": 1.0, "min": 1.0 / 60.0, "s": 1.0 / 3600.0}
LENGTH_UNITS = {"km": 1.0, "m": 1e-3, "mi": 1.609344}


def fmt(x) -> str:
    """Locale-independent number formatting, 12 significant digits."""
    x = float(x)
    if x == 0:
        return "0"
    return format(x, ".12g")


_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_name = {"type": "string", "minLength": 1}
_movement = {
    "type": "object",
    "additionalProperties": False,
    "required": ["input", "output", "class"],
    "properties": {"input": _name, "output": _name, "class": _name},
}
_known = {
    "type": "object",
    "additionalProperties": False,
    "required": ["input", "output", "class", "value"],
    "properties": {"input": _name, "output": _name, "class": _name, "value": _num},
}
_splits = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "known": {"type": "array", "items": _known},
        "unknown": {"type": "array", "items": _movement},
    },
}

NODE_PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "units", "classes", "inputs", "outputs", "demands", "supplies", "priorities"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "node_problem"},
        "units": {
            "type": "object",
            "additionalProperties": False,
            "required": ["flow"],
            "properties": {"flow": {"const": "veh/timestep"}},
        },
        "classes": {"type": "array", "items": _name, "minItems": 1},
        "inputs": {"type": "array", "items": _name, "minItems": 1},
        "outputs": {"type": "array", "items": _name, "minItems": 1},
        "demands": {"type": "object", "additionalProperties": {"type": "object", "additionalProperties": _num}},
        "supplies": {"type": "object", "additionalProperties": _num},
        "priorities": {"type": "object", "additionalProperties": _num},
        "splits": _splits,
    },
}

_fd = {
    "type": "object",
    "additionalProperties": False,
    "required": ["free_flow_speed", "congestion_wave_speed", "capacity", "jam_density"],
    "properties": {k: _num for k in ("free_flow_speed", "congestion_wave_speed", "capacity", "jam_density")},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "units", "classes", "dt", "duration", "links", "sources", "sinks", "nodes"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "scenario"},
        "name": {"type": "string"},
        "units": {
            "type": "object",
            "additionalProperties": False,
            "required": ["time", "length"],
            "properties": {"time": {"enum": sorted(TIME_UNITS)}, "length": {"enum": sorted(LENGTH_UNITS)}},
        },
        "classes": {"type": "array", "items": _name, "minItems": 1},
        "dt": _num,
        "duration": _num,
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "balance_rule": {"enum": [r.value for r in BalanceRule]},
                "mu_equal_tol": _num,
                "supply_floor": _num,
                "max_iterations": {"type": ["integer", "null"]},
                "stall_tol": _num,
                "tie_tol": _num,
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "n_cells", "cell_length", "fd"],
                "properties": {
                    "name": _name,
                    "n_cells": {"type": "integer", "minimum": 1},
                    "cell_length": _num,
                    "fd": _fd,
                    "allowed_classes": {"type": ["array", "null"], "items": _name},
                    "initial_density": {"type": "array", "items": {"type": "array", "items": _num}},
                },
            },
        },
        "sources": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "profile"],
                "properties": {
                    "name": _name,
                    "profile": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["start", "rates"],
                            "properties": {
                                "start": _num,
                                "rates": {"type": "object", "additionalProperties": _nonneg},
                            },
                        },
                    },
                },
            },
        },
        "sinks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name"],
                "properties": {"name": _name, "capacity": {"type": ["number", "null"]}},
            },
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "inputs", "outputs", "priorities"],
                "properties": {
                    "name": _name,
                    "inputs": {"type": "array", "items": _name, "minItems": 1},
                    "outputs": {"type": "array", "items": _name, "minItems": 1},
                    "priorities": {"type": "array", "items": _num},
                    "splits": _splits,
                },
            },
        },
    },
}


def _check_schema(doc, schema, what: str) -> None:
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ValidationError(
            [f"{what}: {'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        )


def _load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ValidationError([f"{path}: not valid YAML ({err})"]) from None
    if not isinstance(doc, dict):
        raise ValidationError([f"{path}: expected a mapping at top level"])
    return doc


def _index(names: List[str], name: str, what: str, issues: list) -> int:
    try:
        return names.index(name)
    except ValueError:
        issues.append(f"splits: unknown {what} {name!r}")
        return -1


def _parse_splits(doc: dict, inputs, outputs, classes, issues):
    known, unknown = {}, set()
    for entry in doc.get("known", []):
        key = (
            _index(inputs, entry["input"], "input", issues),
            _index(outputs, entry["output"], "output", issues),
            _index(classes, entry["class"], "class", issues),
        )
        if -1 not in key:
            known[key] = float(entry["value"])
    for entry in doc.get("unknown", []):
        key = (
            _index(inputs, entry["input"], "input", issues),
            _index(outputs, entry["output"], "output", issues),
            _index(classes, entry["class"], "class", issues),
        )
        if -1 not in key:
            unknown.add(key)
    return known, unknown


def _dump_splits(known, unknown, inputs, outputs, classes) -> dict:
    out = {}
    if known:
        out["known"] = [
            {"input": inputs[i], "output": outputs[j], "class": classes[c], "value": float(v)}
            for (i, j, c), v in sorted(known.items())
        ]
    if unknown:
        out["unknown"] = [
            {"input": inputs[i], "output": outputs[j], "class": classes[c]} for (i, j, c) in sorted(unknown)
        ]
    return out


def node_problem_from_dict(doc: dict) -> NodeProblem:
    _check_schema(doc, NODE_PROBLEM_SCHEMA, "node problem")
    classes, inputs, outputs = list(doc["classes"]), list(doc["inputs"]), list(doc["outputs"])
    issues = []
    for what, names in (("classes", classes), ("inputs", inputs), ("outputs", outputs)):
        if len(set(names)) != len(names):
            issues.append(f"{what}: duplicate names")
    for key, expected in (("demands", inputs), ("supplies", outputs), ("priorities", inputs)):
        if set(doc[key]) != set(expected):
            issues.append(f"{key}: keys {sorted(doc[key])} do not match {sorted(expected)}")
    for i in inputs:
        row = doc["demands"].get(i, {})
        if set(row) - set(classes):
            issues.append(f"demands: input {i} has unknown classes {sorted(set(row) - set(classes))}")
    for j in outputs:
        if doc["supplies"].get(j, 0) < 0:
            issues.append(f"supplies: output {j} is negative ({doc['supplies'][j]})")
    for i in inputs:
        for c, v in doc["demands"].get(i, {}).items():
            if v < 0:
                issues.append(f"demands: input {i} class {c} is negative ({v})")
        if doc["priorities"].get(i, 0) < 0:
            issues.append(f"priorities: input {i} is negative ({doc['priorities'][i]})")
    known, unknown = _parse_splits(doc.get("splits", {}), inputs, outputs, classes, issues)
    if issues:
        raise ValidationError(issues)
    demands = np.array([[float(doc["demands"][i].get(c, 0.0)) for c in classes] for i in inputs])
    return NodeProblem(
        demands=demands,
        supplies=np.array([float(doc["supplies"][j]) for j in outputs]),
        priorities=np.array([float(doc["priorities"][i]) for i in inputs]),
        known=known,
        unknown=frozenset(unknown),
        input_labels=tuple(inputs),
        output_labels=tuple(outputs),
        class_labels=tuple(classes),
    )


def node_problem_to_dict(p: NodeProblem) -> dict:
    ins, outs, cls = p.input_labels, p.output_labels, p.class_labels
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "node_problem",
        "units": {"flow": "veh/timestep"},
        "classes": list(cls),
        "inputs": list(ins),
        "outputs": list(outs),
        "demands": {ins[i]: {cls[c]: float(p.demands[i, c]) for c in range(len(cls))} for i in range(len(ins))},
        "supplies": {outs[j]: float(p.supplies[j]) for j in range(len(outs))},
        "priorities": {ins[i]: float(p.priorities[i]) for i in range(len(ins))},
    }
    splits = _dump_splits(p.known, p.unknown, ins, outs, cls)
    if splits:
        doc["splits"] = splits
    return doc


def load_node_problem(path) -> NodeProblem:
    return node_problem_from_dict(_load_yaml(path))


def save_node_problem(p: NodeProblem, path) -> None:
    Path(path).write_text(yaml.safe_dump(node_problem_to_dict(p), sort_keys=False), encoding="utf-8")


def scenario_from_dict(doc: dict) -> Scenario:
    _check_schema(doc, SCENARIO_SCHEMA, "scenario")
    tu = TIME_UNITS[doc["units"]["time"]]
    lu = LENGTH_UNITS[doc["units"]["length"]]
    classes = list(doc["classes"])
    issues = []
    links = []
    for d in doc["links"]:
        fd = d["fd"]
        try:
            diagram = FundamentalDiagram(
                free_flow_speed=fd["free_flow_speed"] * lu / tu,
                congestion_wave_speed=fd["congestion_wave_speed"] * lu / tu,
                capacity=fd["capacity"] / tu,
                jam_density=fd["jam_density"] / lu,
            )
        except ValueError as err:
            issues.append(f"link {d['name']}: {err}")
            continue
        rho = d.get("initial_density")
        links.append(
            Link(
                name=d["name"],
                n_cells=d["n_cells"],
                cell_length=d["cell_length"] * lu,
                fd=diagram,
                allowed_classes=tuple(d["allowed_classes"]) if d.get("allowed_classes") is not None else None,
                initial_density=None if rho is None else np.asarray(rho, dtype=float) / lu,
            )
        )
    sources = []
    for d in doc["sources"]:
        profile = []
        for seg in d["profile"]:
            extra = set(seg["rates"]) - set(classes)
            if extra:
                issues.append(f"source {d['name']}: unknown classes {sorted(extra)}")
            profile.append((seg["start"] * tu, tuple(seg["rates"].get(c, 0.0) / tu for c in classes)))
        sources.append(Source(d["name"], profile))
    sinks = [
        Sink(d["name"], None if d.get("capacity") is None else d["capacity"] / tu) for d in doc["sinks"]
    ]
    nodes = []
    for d in doc["nodes"]:
        known, unknown = _parse_splits(d.get("splits", {}), d["inputs"], d["outputs"], classes, issues)
        nodes.append(NodeSpec(d["name"], list(d["inputs"]), list(d["outputs"]), list(d["priorities"]), known, unknown))
    if issues:
        raise ValidationError(issues)
    try:
        solver = SolverOptions(**doc.get("solver", {}))
    except ValueError as err:
        raise ValidationError([f"solver: {err}"]) from None
    return Scenario(
        classes=tuple(classes),
        links=links,
        sources=sources,
        sinks=sinks,
        nodes=nodes,
        dt=doc["dt"] * tu,
        duration=doc["duration"] * tu,
        solver=solver,
        name=doc.get("name", "scenario"),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    """Serialize in hours and kilometres."""
    classes = list(sc.classes)
    links = []
    for l in sc.links:
        d = {
            "name": l.name,
            "n_cells": l.n_cells,
            "cell_length": float(l.cell_length),
            "fd": {
                "free_flow_speed": float(l.fd.free_flow_speed),
                "congestion_wave_speed": float(l.fd.congestion_wave_speed),
                "capacity": float(l.fd.capacity),
                "jam_density": float(l.fd.jam_density),
            },
        }
        if l.allowed_classes is not None:
            d["allowed_classes"] = list(l.allowed_classes)
        if l.initial_density is not None:
            d["initial_density"] = np.asarray(l.initial_density, dtype=float).tolist()
        links.append(d)
    opts = sc.solver
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scenario",
        "name": sc.name,
        "units": {"time": "h", "length": "km"},
        "classes": classes,
        "dt": float(sc.dt),
        "duration": float(sc.duration),
        "solver": {
            "balance_rule": opts.balance_rule.value,
            "mu_equal_tol": opts.mu_equal_tol,
            "supply_floor": opts.supply_floor,
            "max_iterations": opts.max_iterations,
            "stall_tol": opts.stall_tol,
            "tie_tol": opts.tie_tol,
        },
        "links": links,
        "sources": [
            {
                "name": s.name,
                "profile": [
                    {"start": float(start), "rates": {c: float(r) for c, r in zip(classes, rates)}}
                    for start, rates in s.profile
                ],
            }
            for s in sc.sources
        ],
        "sinks": [{"name": s.name, "capacity": s.capacity} for s in sc.sinks],
        "nodes": [
            dict(
                {"name": n.name, "inputs": list(n.inputs), "outputs": list(n.outputs), "priorities": [float(x) for x in n.priorities]},
                **({"splits": _dump_splits(n.known, n.unknown, n.inputs, n.outputs, classes)} if (n.known or n.unknown) else {}),
            )
            for n in sc.nodes
        ],
    }


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_load_yaml(path))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(sc), sort_keys=False), encoding="utf-8")


# ---------------------------------------------------------------- outputs


def splits_csv(p: NodeProblem, beta: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "c", "beta"])
    M, N, C = p.shape
    for i in range(M):
        for j in range(N):
            for c in range(C):
                w.writerow([p.input_labels[i], p.output_labels[j], p.class_labels[c], fmt(beta[i, j, c])])
    return buf.getvalue()


def _movement_name(p: NodeProblem, i, j, c) -> str:
    return f"{p.input_labels[i]},{p.output_labels[j]},{p.class_labels[c]}"


def snapshot_record(p: NodeProblem, st: SolverState) -> dict:
    """Flat, JSON-ready view of one solver snapshot using problem labels."""
    M, N, C = p.shape
    ins, outs, cls = p.input_labels, p.output_labels, p.class_labels
    rec = {
        "k": st.k,
        "beta_tilde": {_movement_name(p, i, j, c): float(st.beta_tilde[i, j, c]) for i in range(M) for j in range(N) for c in range(C)},
        "beta_bar": {f"{ins[i]},{cls[c]}": float(st.beta_bar[i, c]) for i in range(M) for c in range(C)},
        "U_tilde": {outs[j]: sorted(ins[i] for i in st.U_tilde[j]) for j in sorted(st.U_tilde)},
        "V_tilde": [outs[j] for j in sorted(st.V_tilde)],
    }
    if st.mu_plus is None:
        return rec
    if st.S_tilde is not None:
        rec["S_bar"] = {f"{ins[i]},{cls[c]}": float(st.S_bar[i, c]) for i in range(M) for c in range(C)}
        rec["S_tilde"] = {_movement_name(p, i, j, c): float(st.S_tilde[i, j, c]) for i in range(M) for j in range(N) for c in range(C)}
        rec["gamma"] = {_movement_name(p, i, j, c): float(st.gamma[i, j, c]) for i in range(M) for j in range(N) for c in range(C)}
        rec["p_oriented"] = {f"{ins[i]},{outs[j]}": float(st.p_oriented[i, j]) for i in range(M) for j in range(N)}
        rec["ratio"] = {f"{ins[i]},{outs[j]}": float(st.ratio[i, j]) for i in range(M) for j in range(N)}
    rec["mu_plus"] = st.mu_plus
    rec["branch"] = st.branch
    if st.j_minus is not None:
        rec.update(
            mu_minus=st.mu_minus,
            Y=[outs[j] for j in sorted(st.Y)],
            j_minus=outs[st.j_minus],
            W=[ins[i] for i in sorted(st.W)],
            i_minus=ins[st.i_minus],
            c_minus=cls[st.c_minus],
        )
    if st.delta is not None:
        rec["delta"] = st.delta
        rec["delta_took_remainder"] = st.delta_took_remainder
    return rec


def trace_jsonl(p: NodeProblem, trace: SolverTrace) -> str:
    lines = [json.dumps(snapshot_record(p, st), sort_keys=False) for st in trace.snapshots]
    lines.append(json.dumps({"termination": trace.termination.value, "iterations": trace.iterations}))
    return "\n".join(lines) + "\n"


def _flatten(prefix, value) -> Iterable:
    if isinstance(value, dict):
        for k, v in value.items():
            yield from _flatten(f"{prefix}[{k}]", v)
    elif isinstance(value, list):
        yield prefix, ";".join(str(x) for x in value)
    elif isinstance(value, bool) or value is None or isinstance(value, str):
        yield prefix, "" if value is None else str(value)
    else:
        yield prefix, fmt(value)


def trace_csv(p: NodeProblem, trace: SolverTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "field", "value"])
    for st in trace.snapshots:
        rec = snapshot_record(p, st)
        k = rec.pop("k")
        for key, value in rec.items():
            for field, text in _flatten(key, value):
                w.writerow([k, field, text])
    w.writerow([trace.snapshots[-1].k, "termination", trace.termination.value])
    return buf.getvalue()


def trace_table(p: NodeProblem, trace: SolverTrace) -> str:
    """Per-iteration walkthrough: the assignment made, then the touched
    split and remainder, in the style of a hand-worked example."""
    ins, outs, cls = p.input_labels, p.output_labels, p.class_labels
    lines = []
    if trace.preassigned:
        lines.append("preassigned:")
        for (i, j, c), v in sorted(trace.preassigned.items()):
            lines.append(f"    beta[{ins[i]}->{outs[j]}, {cls[c]}] = {fmt(v)}")
        lines.append("")
    snaps = trace.snapshots
    for n, st in enumerate(snaps[:-1]):
        nxt = snaps[n + 1]
        lines.append(f"k={st.k}:  mu+ = {fmt(st.mu_plus)}" + (f", mu- = {fmt(st.mu_minus)}" if st.mu_minus is not None else ""))
        if st.branch == "b":
            i, j, c = st.i_minus, st.j_minus, st.c_minus
            tag = f"{ins[i]}->{outs[j]}, {cls[c]}"
            lines.append(f"    delta beta~[{tag}]({st.k}) = {fmt(st.delta)}")
            lines.append(f"    beta~[{tag}]({nxt.k}) = {fmt(st.beta_tilde[i, j, c])} + {fmt(st.delta)} = {fmt(nxt.beta_tilde[i, j, c])}")
            lines.append(f"    beta_bar[{ins[i]}, {cls[c]}]({nxt.k}) = {fmt(st.beta_bar[i, c])} - {fmt(st.delta)} = {fmt(nxt.beta_bar[i, c])}")
        else:
            lines.append("    balance: spread every remaining portion")
            M, N, C = p.shape
            for i in range(M):
                for c in range(C):
                    if st.beta_bar[i, c] > 0:
                        for j in range(N):
                            if nxt.beta_tilde[i, j, c] != st.beta_tilde[i, j, c]:
                                lines.append(f"    beta~[{ins[i]}->{outs[j]}, {cls[c]}]({nxt.k}) = {fmt(nxt.beta_tilde[i, j, c])}")
                        lines.append(f"    beta_bar[{ins[i]}, {cls[c]}]({nxt.k}) = 0")
        lines.append("")
    last = snaps[-1]
    lines.append(f"k={last.k}:  terminated ({trace.termination.value}) after {trace.iterations} iteration(s)")
    return "\n".join(lines) + "\n"


def states_csv_rows(result: SimResult):
    sc = result.scenario
    yield ["t", "link", "cell", "class", "density", "inflow", "outflow"]
    for snap in result.snapshots:
        for l in sc.links:
            rho = snap.densities[l.name]
            fin = snap.inflow[l.name]
            fout = snap.outflow[l.name]
            for k in range(l.n_cells):
                for c, cname in enumerate(sc.classes):
                    yield [fmt(snap.t), l.name, k, cname, fmt(rho[k, c]), fmt(fin[k, c]), fmt(fout[k, c])]


def write_states_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in states_csv_rows(result):
            w.writerow(row)


def write_summary(result: SimResult, path) -> None:
    Path(path).write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
