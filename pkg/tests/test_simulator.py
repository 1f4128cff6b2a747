import numpy as np
import pytest

from lanesplit.link import FundamentalDiagram
from lanesplit.node import compute_flows
from lanesplit.problem import ValidationError
from lanesplit.simulator import Link, NodeSpec, Scenario, Sink, Source, corridor, initial_state, run, step_once
from lanesplit.solver import SolverOptions, solve

FD = FundamentalDiagram(free_flow_speed=100.0, congestion_wave_speed=20.0, capacity=2000.0, jam_density=150.0)


def single_link(rate=1000.0, duration=2.0, n_cells=10):
    return Scenario(
        classes=("a",),
        links=[Link("road", n_cells, 0.5, FD)],
        sources=[Source("in", [(0.0, (rate,))])],
        sinks=[Sink("out")],
        nodes=[
            NodeSpec("up", ["in"], ["road"], [1.0], known={(0, 0, 0): 1.0}),
            NodeSpec("down", ["road"], ["out"], [1.0], known={(0, 0, 0): 1.0}),
        ],
        dt=0.004,
        duration=duration,
    )


def test_steady_state_density():
    res = run(single_link(), stride=100)
    rho = res.snapshots[-1].densities["road"][:, 0]
    assert rho == pytest.approx(np.full(10, 1000.0 / 100.0), rel=1e-9)


def test_zero_demand_leaves_state_unchanged():
    sc = corridor(duration=0.4, gp_demand=(0.0, 0.0), ml_demand=(0.0, 0.0))
    s0 = initial_state(sc)
    s1 = step_once(s0, sc)
    for name in s0.densities:
        assert np.array_equal(s0.densities[name], s1.densities[name])
    assert not s1.entered.any() and not s1.exited.any()


def test_zero_duration_keeps_initial_state_only():
    res = run(single_link(duration=0.0))
    assert len(res.snapshots) == 1 and res.summary["steps"] == 0


def test_stride_counts_snapshots():
    res = run(single_link(duration=0.4), stride=10)
    assert res.summary["steps"] == 100
    assert [s.step for s in res.snapshots] == list(range(0, 101, 10))


@pytest.mark.parametrize("rule", ["plain", "oriented"])
@pytest.mark.parametrize("demand", [(4500.0, 900.0), (1200.0, 2400.0), (7000.0, 300.0)])
def test_conservation_and_jam_bound(rule, demand):
    sc = corridor(duration=1.2, gp_demand=demand, solver=SolverOptions(balance_rule=rule))
    res = run(sc, stride=5)
    s = res.summary
    assert max(s["conservation_residual"]) <= 1e-9
    assert max(s["max_step_residual"]) <= 1e-9
    arrived = np.array(s["arrived"])
    assert np.allclose(arrived, np.array(s["entered"]) + np.array(s["queued"]), rtol=1e-12)
    for snap in res.snapshots:
        for l in sc.links:
            assert np.all(snap.densities[l.name].sum(axis=1) <= l.fd.jam_density + 1e-6)
    prev = res.snapshots[0]
    for snap in res.snapshots[1:]:
        assert np.all(snap.entered >= prev.entered) and np.all(snap.exited >= prev.exited)
        prev = snap


def test_managed_lane_carries_no_lov():
    res = run(corridor(duration=1.0), stride=50)
    for snap in res.snapshots:
        for k in range(4):
            assert not snap.densities[f"ml{k}"][:, 0].any()


def test_runs_are_deterministic():
    a = run(corridor(duration=0.6))
    b = run(corridor(duration=0.6))
    for sa, sb in zip(a.snapshots, b.snapshots):
        for name in sa.densities:
            assert np.array_equal(sa.densities[name], sb.densities[name])
    assert a.summary == b.summary


def interface_scenario():
    """One step through a 2x2 interface whose instantaneous demands and
    supplies are the worked-example values."""
    big = FundamentalDiagram(free_flow_speed=100.0, congestion_wave_speed=100.0, capacity=1e5, jam_density=5000.0)
    dt = 0.01
    links = [
        Link("gp0", 1, 1.0, big, initial_density=np.array([[500.0, 100.0]])),
        Link("ml0", 1, 1.0, big, allowed_classes=("H",), initial_density=np.array([[0.0, 50.0]])),
        Link("gp1", 1, 1.0, big, initial_density=np.array([[4400.0, 0.0]])),
        Link("ml1", 1, 1.0, big, allowed_classes=("H",), initial_density=np.array([[0.0, 4800.0]])),
    ]
    zero = [(0.0, (0.0, 0.0))]
    nodes = [
        NodeSpec("in_gp", ["s_gp"], ["gp0"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}),
        NodeSpec("in_ml", ["s_ml"], ["ml0"], [1.0], known={(0, 0, 0): 0.0, (0, 0, 1): 1.0}),
        NodeSpec(
            "ifc", ["gp0", "ml0"], ["gp1", "ml1"], [0.75, 0.25],
            known={(0, 0, 0): 1.0, (0, 1, 0): 0.0, (1, 0, 0): 1.0, (1, 1, 0): 0.0},
            unknown={(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)},
        ),
        NodeSpec("out_gp", ["gp1"], ["x_gp"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}),
        NodeSpec("out_ml", ["ml1"], ["x_ml"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}),
    ]
    return Scenario(
        classes=("L", "H"),
        links=links,
        sources=[Source("s_gp", zero), Source("s_ml", zero)],
        sinks=[Sink("x_gp"), Sink("x_ml")],
        nodes=nodes,
        dt=dt,
        duration=dt,
    )


def test_interface_flows_follow_solver_splits():
    sc = interface_scenario()
    s0 = initial_state(sc)
    s1 = step_once(s0, sc)
    node = s1.nodes["ifc"]
    p = node.problem
    assert p.demands == pytest.approx(np.array([[500.0, 100.0], [0.0, 50.0]]), rel=1e-12)
    assert p.supplies == pytest.approx([600.0, 200.0], rel=1e-12)
    ref = solve(p)
    assert np.array_equal(node.beta, ref.beta)
    assert node.beta[0, :, 1] == pytest.approx([0.541666666667, 0.458333333333], abs=1e-9)
    flows = compute_flows(p.demands, p.supplies, p.priorities, ref.beta).flows
    assert s1.outflow["gp0"][-1] == pytest.approx(flows[0].sum(axis=0), rel=1e-12)
    assert s1.inflow["ml1"][0] == pytest.approx(flows[:, 1, :].sum(axis=0), rel=1e-12)


def test_cfl_violation_rejected():
    sc = single_link()
    sc.dt = 0.01
    with pytest.raises(ValidationError, match="CFL"):
        run(sc)


def test_lov_toward_managed_lane_rejected():
    sc = corridor(duration=0.1)
    sc.nodes[2].known[(0, 1, 0)] = 0.5
    sc.nodes[2].known[(0, 0, 0)] = 0.5
    with pytest.raises(ValidationError, match="may not enter"):
        run(sc)


def test_cycle_rejected():
    sc = single_link()
    sc.nodes = [NodeSpec("loop", ["road"], ["road"], [1.0], known={(0, 0, 0): 1.0})]
    with pytest.raises(ValidationError, match="cycle"):
        run(sc)
