import csv
import io

import numpy as np
import pytest
import yaml

from lanesplit import fileio
from lanesplit.problem import ValidationError
from lanesplit.report import worked_example
from lanesplit.simulator import corridor, run
from lanesplit.solver import solve

DATA = "data/worked_example.yaml"


def test_fmt_uses_twelve_digits():
    assert fileio.fmt(1 / 3) == "0.333333333333"
    assert fileio.fmt(0.0) == "0"
    assert fileio.fmt(1e-20) == "1e-20"


def test_worked_example_file_matches_builder():
    p = fileio.load_node_problem(DATA)
    q = worked_example()
    assert np.array_equal(p.demands, q.demands) and np.array_equal(p.supplies, q.supplies)
    assert p.known == q.known and p.unknown == q.unknown
    assert (p.input_labels, p.output_labels, p.class_labels) == (q.input_labels, q.output_labels, q.class_labels)


def test_node_problem_round_trip(tmp_path):
    doc = yaml.safe_load(open(DATA))
    again = fileio.node_problem_to_dict(fileio.node_problem_from_dict(doc))
    assert again == doc
    fileio.save_node_problem(fileio.load_node_problem(DATA), tmp_path / "p.yaml")
    assert (tmp_path / "p.yaml").read_text() == open(DATA).read()


def test_scenario_round_trip(tmp_path):
    sc = corridor(duration=0.4)
    fileio.save_scenario(sc, tmp_path / "a.yaml")
    doc = yaml.safe_load((tmp_path / "a.yaml").read_text())
    assert fileio.scenario_to_dict(fileio.scenario_from_dict(doc)) == doc


def test_scenario_units_converted():
    doc = yaml.safe_load(open("data/corridor.yaml"))
    doc["units"] = {"time": "s", "length": "m"}
    doc["dt"] = 14.4
    doc["duration"] = 1440.0
    for link in doc["links"]:
        link["cell_length"] = 500.0
        link["fd"]["free_flow_speed"] = 100 / 3.6
    sc = fileio.scenario_from_dict(doc)
    assert sc.dt == pytest.approx(0.004)
    assert sc.n_steps == 100
    assert sc.links[0].cell_length == pytest.approx(0.5)
    assert sc.links[0].fd.free_flow_speed == pytest.approx(100.0)


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d["supplies"].update({"3": -5.0}), "supplies"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d["splits"]["known"].append({"input": "9", "output": "3", "class": "L", "value": 0.1}), "unknown input"),
        (lambda d: d["priorities"].update({"1": -1.0}), "priorities"),
    ],
)
def test_node_problem_rejections(mutate, needle):
    doc = yaml.safe_load(open(DATA))
    mutate(doc)
    with pytest.raises(ValidationError) as err:
        fileio.node_problem_from_dict(doc)
    assert any(needle in s for s in err.value.issues)


def test_scenario_rejects_unknown_keys():
    doc = yaml.safe_load(open("data/corridor.yaml"))
    doc["links"][0]["lanes"] = 3
    with pytest.raises(ValidationError, match="lanes"):
        fileio.scenario_from_dict(doc)


def test_splits_csv_layout():
    p = worked_example()
    rows = list(csv.reader(io.StringIO(fileio.splits_csv(p, solve(p).beta))))
    assert rows[0] == ["i", "j", "c", "beta"]
    assert ["1", "3", "L", "1"] in rows and ["2", "4", "H", "1"] in rows
    assert len(rows) == 1 + 8


def test_trace_csv_one_row_per_field():
    p = worked_example()
    text = fileio.trace_csv(p, solve(p).trace)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["k", "field", "value"]
    assert ["0", "delta", "1"] in rows
    assert ["0", "j_minus", "4"] in rows
    keys = [(r[0], r[1]) for r in rows[1:]]
    assert len(keys) == len(set(keys))
    assert rows[-1][1:] == ["termination", "EMPTY_V"]


def test_trace_jsonl_records():
    import json

    p = worked_example()
    res = solve(p)
    lines = fileio.trace_jsonl(p, res.trace).splitlines()
    assert len(lines) == len(res.trace.snapshots) + 1
    first = json.loads(lines[0])
    for key in ("S_bar", "S_tilde", "gamma", "p_oriented", "mu_plus", "mu_minus", "Y", "W", "delta"):
        assert key in first
    assert first["p_oriented"]["1,3"] == 0.6875
    assert json.loads(lines[-1]) == {"termination": "EMPTY_V", "iterations": 5}


def test_states_csv_is_byte_stable(tmp_path):
    sc = corridor(duration=0.2)
    fileio.write_states_csv(run(sc, stride=10), tmp_path / "a.csv")
    fileio.write_states_csv(run(sc, stride=10), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "t,link,cell,class,density,inflow,outflow"
