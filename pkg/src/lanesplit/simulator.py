"""Cell-transmission simulation of parallel general-purpose and managed lanes.

A scenario is a set of links (chains of cells), boundary sources and sinks,
and nodes joining link ends. Every timestep runs in two phases: first all
demands, supplies, split ratios and node flows are computed from the frozen
state, then every density is updated at once.
"""

from __future__ import annotations

import collections
import copy
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .link import FundamentalDiagram, receiving_array, sending_array
from .node import compute_flows
from .problem import NodeProblem, ValidationError, validate
from .solver import SolverOptions, Termination, solve

DENSITY_SLACK = 1e-6


@dataclass
class Link:
    name: str
    n_cells: int
    cell_length: float
    fd: FundamentalDiagram
    # None means every class may use the link
    allowed_classes: Optional[Tuple[str, ...]] = None
    # (n_cells, C) veh/length; zeros when omitted
    initial_density: Optional[np.ndarray] = None


@dataclass
class Source:
    """Boundary arrivals, piecewise constant in time.

    ``profile`` is a list of ``(start_time, rates)`` with one rate per class
    in vehicles per unit time; the last entry holds until the end.
    """

    name: str
    profile: List[Tuple[float, Tuple[float, ...]]]

    def rates(self, t: float) -> np.ndarray:
        current = None
        for start, rates in self.profile:
            if start <= t + 1e-12:
                current = rates
            else:
                break
        if current is None:
            return np.zeros(len(self.profile[0][1]))
        return np.asarray(current, dtype=float)


@dataclass
class Sink:
    name: str
    # veh per unit time; None is unlimited
    capacity: Optional[float] = None


@dataclass
class NodeSpec:
    """A junction between link ends.

    ``inputs`` name links or sources, ``outputs`` name links or sinks.
    ``known`` and ``unknown`` use positions in those lists and class
    indices, like :class:`NodeProblem`.
    """

    name: str
    inputs: List[str]
    outputs: List[str]
    priorities: List[float]
    known: Dict[Tuple[int, int, int], float] = field(default_factory=dict)
    unknown: Set[Tuple[int, int, int]] = field(default_factory=set)

    @property
    def has_unknown(self) -> bool:
        return bool(self.unknown)


@dataclass
class Scenario:
    classes: Tuple[str, ...]
    links: List[Link]
    sources: List[Source]
    sinks: List[Sink]
    nodes: List[NodeSpec]
    dt: float
    duration: float
    solver: SolverOptions = field(default_factory=SolverOptions)
    name: str = "scenario"

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def link(self, name: str) -> Link:
        return self._links[name]

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self._links = {l.name: l for l in self.links}


def validate_scenario(sc: Scenario) -> None:
    """Raise :class:`ValidationError` listing every configuration problem."""
    issues = []
    C = len(sc.classes)
    if C < 1:
        issues.append("at least one class is required")
    if not sc.dt > 0 or sc.duration < 0:
        issues.append("dt must be positive and duration nonnegative")
    names = [l.name for l in sc.links] + [s.name for s in sc.sources] + [s.name for s in sc.sinks]
    dupes = [n for n, k in collections.Counter(names).items() if k > 1]
    if dupes:
        issues.append(f"duplicate names: {dupes}")
    links = {l.name: l for l in sc.links}
    sources = {s.name for s in sc.sources}
    sinks = {s.name: s for s in sc.sinks}
    for l in sc.links:
        if l.n_cells < 1 or not l.cell_length > 0:
            issues.append(f"link {l.name}: needs n_cells >= 1 and positive cell_length")
            continue
        fastest = max(l.fd.free_flow_speed, l.fd.congestion_wave_speed)
        if fastest * sc.dt > l.cell_length * (1 + 1e-12):
            issues.append(
                f"link {l.name}: CFL violated, max wave speed {fastest:g} * dt {sc.dt:g} > cell length {l.cell_length:g}"
            )
        if l.allowed_classes is not None:
            bad = [c for c in l.allowed_classes if c not in sc.classes]
            if bad:
                issues.append(f"link {l.name}: unknown classes {bad}")
        if l.initial_density is not None:
            rho = np.asarray(l.initial_density, dtype=float)
            if rho.shape != (l.n_cells, C):
                issues.append(f"link {l.name}: initial_density shape {rho.shape} != {(l.n_cells, C)}")
            elif np.any(rho < 0) or np.any(rho.sum(axis=1) > l.fd.jam_density + 1e-9):
                issues.append(f"link {l.name}: initial densities must lie in [0, jam_density]")
    for s in sc.sources:
        if not s.profile:
            issues.append(f"source {s.name}: empty profile")
        for start, rates in s.profile:
            if len(rates) != C or any(r < 0 for r in rates):
                issues.append(f"source {s.name}: rates at t={start} need {C} nonnegative values")

    upstream = collections.Counter()
    downstream = collections.Counter()
    for nd in sc.nodes:
        for name in nd.inputs:
            if name in links:
                downstream[name] += 1
            elif name not in sources:
                issues.append(f"node {nd.name}: input {name} is not a link or source")
        for name in nd.outputs:
            if name in links:
                upstream[name] += 1
            elif name not in sinks:
                issues.append(f"node {nd.name}: output {name} is not a link or sink")
        if len(nd.priorities) != len(nd.inputs):
            issues.append(f"node {nd.name}: {len(nd.inputs)} inputs but {len(nd.priorities)} priorities")
            continue
        for (i, j, c) in nd.unknown:
            if 0 <= j < len(nd.outputs) and nd.outputs[j] in sinks and sinks[nd.outputs[j]].capacity is None:
                issues.append(f"node {nd.name}: unknown split toward unlimited sink {nd.outputs[j]}")
        for (i, j, c) in list(nd.known) + list(nd.unknown):
            if not (0 <= j < len(nd.outputs) and 0 <= c < C):
                continue
            out = nd.outputs[j]
            allowed = links[out].allowed_classes if out in links else None
            if allowed is not None and sc.classes[c] not in allowed:
                if (i, j, c) in nd.unknown or nd.known.get((i, j, c), 0.0) > 0:
                    issues.append(f"node {nd.name}: class {sc.classes[c]} may not enter {out}")
        # check the split template with demand on every row that may carry it
        M = len(nd.inputs)
        closed = np.array([
            [sum(nd.known.get((i, j, c), 0.0) for j in range(len(nd.outputs))) == 0
             and not any((i, j, c) in nd.unknown for j in range(len(nd.outputs)))
             for c in range(C)]
            for i in range(M)
        ])
        probe = NodeProblem(
            demands=np.where(closed, 0.0, 1.0),
            supplies=np.ones(len(nd.outputs)),
            priorities=nd.priorities,
            known=nd.known,
            unknown=frozenset(nd.unknown),
            input_labels=tuple(nd.inputs),
            output_labels=tuple(nd.outputs),
            class_labels=sc.classes,
        )
        try:
            validate(probe)
        except ValidationError as err:
            issues.extend(f"node {nd.name}: {msg}" for msg in err.issues)
    for name in links:
        if upstream[name] != 1 or downstream[name] != 1:
            issues.append(
                f"link {name}: needs exactly one upstream and one downstream node "
                f"(has {upstream[name]} and {downstream[name]})"
            )
    # link graph must be acyclic
    succ = collections.defaultdict(set)
    for nd in sc.nodes:
        for a in nd.inputs:
            for b in nd.outputs:
                if a in links and b in links:
                    succ[a].add(b)
    state = {}

    def visit(n):
        state[n] = 1
        for m in succ[n]:
            if state.get(m) == 1 or (m not in state and visit(m)):
                return True
        state[n] = 2
        return False

    if any(n not in state and visit(n) for n in links):
        issues.append("link graph contains a cycle")
    if issues:
        raise ValidationError(issues)


@dataclass
class NodeSummary:
    termination: Optional[Termination]
    iterations: int
    beta: np.ndarray
    problem: NodeProblem


@dataclass
class SimState:
    step: int
    t: float
    densities: Dict[str, np.ndarray]
    queues: Dict[str, np.ndarray]
    # flows realized during the step that ended at ``t``: (n_cells, C) per link
    inflow: Dict[str, np.ndarray]
    outflow: Dict[str, np.ndarray]
    arrived: np.ndarray
    entered: np.ndarray
    exited: np.ndarray
    nodes: Dict[str, NodeSummary] = field(default_factory=dict)

    def stored(self, scenario: Scenario) -> np.ndarray:
        """Vehicles inside the links, per class."""
        total = np.zeros(len(scenario.classes))
        for l in scenario.links:
            total += (self.densities[l.name] * l.cell_length).sum(axis=0)
        return total


def initial_state(sc: Scenario) -> SimState:
    C = len(sc.classes)
    dens = {}
    for l in sc.links:
        if l.initial_density is None:
            dens[l.name] = np.zeros((l.n_cells, C))
        else:
            dens[l.name] = np.array(l.initial_density, dtype=float)
    zeros = {l.name: np.zeros((l.n_cells, C)) for l in sc.links}
    return SimState(
        step=0,
        t=0.0,
        densities=dens,
        queues={s.name: np.zeros(C) for s in sc.sources},
        inflow=zeros,
        outflow={k: v.copy() for k, v in zeros.items()},
        arrived=np.zeros(C),
        entered=np.zeros(C),
        exited=np.zeros(C),
    )


def node_problem(sc: Scenario, nd: NodeSpec, demand_of, supply_of) -> NodeProblem:
    return NodeProblem(
        demands=np.array([demand_of(name) for name in nd.inputs]),
        supplies=np.array([supply_of(name) for name in nd.outputs]),
        priorities=nd.priorities,
        known=nd.known,
        unknown=frozenset(nd.unknown),
        input_labels=tuple(nd.inputs),
        output_labels=tuple(nd.outputs),
        class_labels=sc.classes,
    )


def step_once(state: SimState, sc: Scenario) -> SimState:
    """Advance one timestep."""
    dt = sc.dt
    C = len(sc.classes)
    links = {l.name: l for l in sc.links}
    sources = {s.name: s for s in sc.sources}
    sinks = {s.name: s for s in sc.sinks}

    # phase 1: everything from the frozen state
    send = {}
    recv = {}
    for l in sc.links:
        rho = state.densities[l.name]
        send[l.name] = sending_array(rho, l.fd, dt)
        recv[l.name] = receiving_array(rho.sum(axis=1), l.fd, dt)
    arrivals = {name: src.rates(state.t) * dt for name, src in sources.items()}
    queue_demand = {name: state.queues[name] + arrivals[name] for name in sources}

    def demand_of(name):
        return queue_demand[name] if name in sources else send[name][-1]

    def supply_of(name):
        if name in links:
            return recv[name][0]
        cap = sinks[name].capacity
        return math.inf if cap is None else cap * dt

    inflow = {name: np.zeros((l.n_cells, C)) for name, l in links.items()}
    outflow = {name: np.zeros((l.n_cells, C)) for name, l in links.items()}
    for name, l in links.items():
        if l.n_cells > 1:
            S = send[name][:-1]
            total = S.sum(axis=1)
            moved = np.minimum(total, recv[name][1:])
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(total > 0, moved / total, 0.0)
            f = S * frac[:, None]
            outflow[name][:-1] += f
            inflow[name][1:] += f

    summaries = {}
    source_out = {name: np.zeros(C) for name in sources}
    exited = np.zeros(C)
    entered = np.zeros(C)
    for nd in sc.nodes:
        prob = node_problem(sc, nd, demand_of, supply_of)
        if nd.has_unknown:
            res = solve(prob, sc.solver)
            beta = res.beta
            summaries[nd.name] = NodeSummary(res.termination, res.trace.iterations, beta, res.problem)
        else:
            beta = prob.known_array()
        flows = compute_flows(prob.demands, prob.supplies, prob.priorities, beta).flows
        for i, name in enumerate(nd.inputs):
            out = flows[i].sum(axis=0)
            if name in sources:
                source_out[name] += out
                entered += out
            else:
                outflow[name][-1] += out
        for j, name in enumerate(nd.outputs):
            into = flows[:, j, :].sum(axis=0)
            if name in links:
                inflow[name][0] += into
            else:
                exited += into

    # phase 2: apply
    densities = {}
    for name, l in links.items():
        rho = state.densities[name] + (inflow[name] - outflow[name]) / l.cell_length
        if np.any(rho < -1e-9) or np.any(rho.sum(axis=1) > l.fd.jam_density + DENSITY_SLACK):
            raise AssertionError(f"density out of range on link {name} at step {state.step + 1}")
        densities[name] = np.maximum(rho, 0.0)
    queues = {name: np.maximum(queue_demand[name] - source_out[name], 0.0) for name in sources}
    arrived_now = np.zeros(C)
    for a in arrivals.values():
        arrived_now += a
    return SimState(
        step=state.step + 1,
        t=(state.step + 1) * dt,
        densities=densities,
        queues=queues,
        inflow=inflow,
        outflow=outflow,
        arrived=state.arrived + arrived_now,
        entered=state.entered + entered,
        exited=state.exited + exited,
        nodes=summaries,
    )


@dataclass
class SimResult:
    scenario: Scenario
    snapshots: List[SimState]
    summary: dict


def run(sc: Scenario, stride: int = 1) -> SimResult:
    """Simulate the whole horizon, keeping every ``stride``-th state.

    The initial state is always kept, and so is the final one.
    """
    validate_scenario(sc)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    C = len(sc.classes)
    state = initial_state(sc)
    start_stored = state.stored(sc)
    snapshots = [copy.deepcopy(state)]
    vehicle_hours = np.zeros(C)
    link_out = {l.name: np.zeros(C) for l in sc.links}
    terminations = collections.Counter()
    worst_residual = np.zeros(C)
    for n in range(sc.n_steps):
        before = state.stored(sc)
        vehicle_hours += before * sc.dt
        nxt = step_once(state, sc)
        after = nxt.stored(sc)
        net = (nxt.entered - state.entered) - (nxt.exited - state.exited)
        scale = np.maximum(np.maximum(before, after), 1.0)
        worst_residual = np.maximum(worst_residual, np.abs(after - before - net) / scale)
        for l in sc.links:
            link_out[l.name] += nxt.outflow[l.name][-1]
        for s in nxt.nodes.values():
            terminations[s.termination.value] += 1
        state = nxt
        if (n + 1) % stride == 0 or n + 1 == sc.n_steps:
            snapshots.append(copy.deepcopy(state))
    end_stored = state.stored(sc)
    total_net = state.entered - state.exited
    denom = np.maximum(np.maximum(start_stored, end_stored) + state.entered, 1.0)
    summary = {
        "steps": sc.n_steps,
        "classes": list(sc.classes),
        "vehicle_hours": vehicle_hours.tolist(),
        "arrived": state.arrived.tolist(),
        "entered": state.entered.tolist(),
        "exited": state.exited.tolist(),
        "queued": sum(state.queues.values(), np.zeros(C)).tolist(),
        "stored_start": start_stored.tolist(),
        "stored_end": end_stored.tolist(),
        "link_outflow": {k: v.tolist() for k, v in link_out.items()},
        "solver_terminations": dict(sorted(terminations.items())),
        "conservation_residual": (np.abs(end_stored - start_stored - total_net) / denom).tolist(),
        "max_step_residual": worst_residual.tolist(),
        "final_splits": {k: v.beta.tolist() for k, v in state.nodes.items()},
    }
    return SimResult(scenario=sc, snapshots=snapshots, summary=summary)


def corridor(
    n_cells: int = 20,
    n_segments: int = 4,
    cell_length: float = 0.5,
    dt: float = 0.004,
    duration: float = 4.0,
    gp_demand: Sequence[float] = (4500.0, 900.0),
    ml_demand: Sequence[float] = (0.0, 600.0),
    gp_lanes: int = 3,
    bottleneck_lanes: Optional[int] = 2,
    solver: Optional[SolverOptions] = None,
) -> Scenario:
    """A general-purpose chain beside a managed-lane chain, split into
    ``n_segments`` links per chain with a 2x2 interface node between
    consecutive segments.

    Classes are ``("L", "H")``: low-occupancy vehicles stay in the
    general-purpose lanes, high-occupancy vehicles pick their lane at each
    interface. ``bottleneck_lanes`` narrows the last general-purpose segment.
    Demands are veh/h per class for the first quarter of the horizon, after
    which they drop to a third.
    """
    if n_cells % n_segments:
        raise ValueError("n_cells must be a multiple of n_segments")
    per = n_cells // n_segments
    per_lane = dict(free_flow_speed=100.0, congestion_wave_speed=20.0)

    def fd(lanes):
        return FundamentalDiagram(capacity=2000.0 * lanes, jam_density=150.0 * lanes, **per_lane)

    links = []
    for k in range(n_segments):
        lanes = bottleneck_lanes if (bottleneck_lanes and k == n_segments - 1) else gp_lanes
        links.append(Link(f"gp{k}", per, cell_length, fd(lanes)))
        links.append(Link(f"ml{k}", per, cell_length, fd(1), allowed_classes=("H",)))

    def profile(rates):
        return [(0.0, tuple(rates)), (duration / 4, tuple(r / 3 for r in rates))]

    sources = [Source("src_gp", profile(gp_demand)), Source("src_ml", profile(ml_demand))]
    sinks = [Sink("out_gp"), Sink("out_ml")]
    nodes = [
        NodeSpec("entry_gp", ["src_gp"], ["gp0"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}),
        NodeSpec("entry_ml", ["src_ml"], ["ml0"], [1.0], known={(0, 0, 0): 0.0, (0, 0, 1): 1.0}),
    ]
    p_gp = gp_lanes / (gp_lanes + 1)
    for k in range(1, n_segments):
        nodes.append(
            NodeSpec(
                f"ifc{k}",
                [f"gp{k - 1}", f"ml{k - 1}"],
                [f"gp{k}", f"ml{k}"],
                [p_gp, 1 - p_gp],
                known={(0, 0, 0): 1.0, (0, 1, 0): 0.0, (1, 0, 0): 1.0, (1, 1, 0): 0.0},
                unknown={(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)},
            )
        )
    last = n_segments - 1
    nodes.append(NodeSpec("exit_gp", [f"gp{last}"], ["out_gp"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}))
    nodes.append(NodeSpec("exit_ml", [f"ml{last}"], ["out_ml"], [1.0], known={(0, 0, 0): 1.0, (0, 0, 1): 1.0}))
    return Scenario(
        classes=("L", "H"),
        links=links,
        sources=sources,
        sinks=sinks,
        nodes=nodes,
        dt=dt,
        duration=duration,
        solver=solver or SolverOptions(),
        name="corridor",
    )
