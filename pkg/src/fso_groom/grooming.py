"""
The traffic grooming policy: three-step grooming of mission-critical (CF) and mice (MF) flows, rack-to-rack (R2R) lightpath provisioning, elephant-flow (EF) express lightpaths and contention handling.
"""
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from fso_groom import logger
from fso_groom.channel import capacity, ef_intensity, intensity_for_demand
from fso_groom.errors import ProvisioningError, ReservationError
from fso_groom.topology import Link, PhysicalTopology, ResourceState, min_wavelengths

class FlowClass(str, Enum):
    CF = "CF"
    MF = "MF"
    EF = "EF"

    @property
    def high_priority(self) -> bool:
        return self is not FlowClass.EF

class Stage(str, Enum):
    S2S = "S2S"
    S2R = "S2R"
    R2R = "R2R"

@dataclass(frozen=True)
class Flow:
    """
    One flow request.

    Args:
        id (`int`): Unique flow id.
        src (`int`): Source server.
        dst (`int`): Destination server.
        cls (`FlowClass`): Traffic class, fixed at creation.
        size (`float`): Size in bits.
        arrival (`float`): Arrival time in seconds.
        deadline (`float`): Class deadline in seconds (high-priority deadline for CF/MF, low-priority deadline for EF).
    """
    id : int
    src : int
    dst : int
    cls : FlowClass
    size : float
    arrival : float = 0.0
    deadline : float = math.inf

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError(f"Flow {self.id} must have a positive size, got {self.size}.")
        if self.src == self.dst:
            raise ValueError(f"Flow {self.id} has the same source and destination {self.src}.")
        object.__setattr__(self, "cls", FlowClass(self.cls))

@dataclass(frozen=True)
class GroomedFlow:
    """An aggregate of same-class flows produced by one grooming stage."""
    stage : Stage
    cls : FlowClass
    flow_ids : Tuple[int, ...]
    size : float
    src_rack : int
    dst_rack : int
    src : Optional[int] = None
    dst : Optional[int] = None
    epoch : int = 0

@dataclass
class Lightpath:
    """
    An all-optical circuit: one wavelength along a route, with the intensity reserved on every hop.

    R2R lightpaths run edge switch, core switch, edge switch; EF express lightpaths run server to server over four hops.
    """
    id : int
    cls : FlowClass
    src : int
    dst : int
    racks : Tuple[int, int]
    wavelength : int
    route : Tuple[int, ...]
    intensities : Tuple[float, ...]
    capacity : float
    active : bool = True
    flow_id : Optional[int] = None

    @property
    def links(self) -> List[Link]:
        return PhysicalTopology.path_links(self.route)

    @property
    def hops(self) -> int:
        return len(self.route) - 1

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

@dataclass(frozen=True)
class Blocked:
    """Result of an EF provisioning attempt that found no usable route."""
    flow_id : Optional[int]
    reason : str

    def __bool__(self):
        return False

@dataclass
class KspState:
    """
    Per rack pair: ``K`` feasible shortest routes and ``D`` the intensity cost of the cheapest one.
    """
    K : np.ndarray
    D : np.ndarray

    @classmethod
    def empty(cls, N : int) -> "KspState":
        return cls(np.zeros((N, N), dtype=np.int64), np.zeros((N, N), dtype=np.float64))

    def order_key(self, pair : Tuple[int, int]) -> tuple:
        # Fewest options first, then most expensive, then lexicographic
        return (int(self.K[pair]), -float(self.D[pair]), pair)

    def next_pair(self, pending : Iterable[Tuple[int, int]]) -> Tuple[int, int]:
        return min(pending, key=self.order_key)

#### Grooming ####

def _class_of(flows : Sequence[Flow], cls : Optional[FlowClass]) -> FlowClass:
    classes = {f.cls for f in flows}
    if cls is not None:
        classes.add(FlowClass(cls))
    if len(classes) > 1:
        raise ValueError(f"Grooming mixes classes {sorted(c.value for c in classes)}; CF and MF are groomed separately.")
    found = classes.pop()
    if found is FlowClass.EF:
        raise ValueError("Elephant flows are not groomed; they get express lightpaths.")
    return found

def groom_s2s(topo : PhysicalTopology, flows : Sequence[Flow], epoch : int=0) -> List[GroomedFlow]:
    groups : Dict[Tuple[int, int], List[Flow]] = defaultdict(list)
    for f in flows:
        groups[(f.src, f.dst)].append(f)
    return [
        GroomedFlow(
            Stage.S2S, members[0].cls, tuple(f.id for f in members), float(sum(f.size for f in members)),
            topo.rack_of(s), topo.rack_of(d), s, d, epoch
        )
        for (s, d), members in sorted(groups.items())
    ]

def groom_s2r(groups : Sequence[GroomedFlow]) -> List[GroomedFlow]:
    by_key : Dict[Tuple[int, int], List[GroomedFlow]] = defaultdict(list)
    for g in groups:
        by_key[(g.src, g.dst_rack)].append(g)
    return [_merge(Stage.S2R, members, src=s) for (s, _), members in sorted(by_key.items())]

def groom_r2r(groups : Sequence[GroomedFlow]) -> List[GroomedFlow]:
    by_key : Dict[Tuple[int, int], List[GroomedFlow]] = defaultdict(list)
    for g in groups:
        by_key[(g.src_rack, g.dst_rack)].append(g)
    return [_merge(Stage.R2R, members) for _, members in sorted(by_key.items())]

def _merge(stage : Stage, members : Sequence[GroomedFlow], src : Optional[int]=None) -> GroomedFlow:
    first = members[0]
    return GroomedFlow(
        stage, first.cls, tuple(i for g in members for i in g.flow_ids), float(sum(g.size for g in members)),
        first.src_rack, first.dst_rack, src, None, first.epoch
    )

def groom_3step(
        topo : PhysicalTopology,
        flows : Sequence[Flow],
        cls : Optional[FlowClass]=None,
        window : Optional[float]=None,
        return_stages : bool=False
    ) -> Union[List[GroomedFlow], Tuple[List[GroomedFlow], List[GroomedFlow], List[GroomedFlow]]]:
    """
    Groom same-class flows server-to-server, then server-to-rack, then rack-to-rack.

    Args:
        topo (`PhysicalTopology`): Needed to map servers to racks.
        flows (`Sequence[Flow]`): Flows of a single class (CF or MF).
        cls (`Optional[FlowClass]`, optional): Expected class. Defaults to the class of the flows.
        window (`Optional[float]`, optional): Epoch length in seconds. Flows are grouped per epoch ``floor(arrival / window)``. Defaults to one epoch for all flows.
        return_stages (`bool`, optional): Return the S2S, S2R and R2R lists instead of only R2R. Defaults to False.

    Returns:
        out: The R2R groomed flows ordered by (epoch, source rack, destination rack), or the three stage lists.
    """
    if len(flows) == 0:
        return ([], [], []) if return_stages else []
    _class_of(flows, cls)
    if window is not None and not window > 0:
        raise ValueError(f"Grooming window must be positive, got {window}.")
    epochs : Dict[int, List[Flow]] = defaultdict(list)
    for f in flows:
        epochs[0 if window is None else int(math.floor(f.arrival / window))].append(f)
    s2s, s2r, r2r = [], [], []
    for epoch in sorted(epochs):
        stage1 = groom_s2s(topo, epochs[epoch], epoch)
        stage2 = groom_s2r(stage1)
        s2s += stage1
        s2r += stage2
        r2r += groom_r2r(stage2)
    return (s2s, s2r, r2r) if return_stages else r2r

def demand_from_groomed(N : int, groomed : Iterable[GroomedFlow], window : float) -> np.ndarray:
    """Rack-pair arrival rates ``lambda_ij`` in bits/s, i.e. groomed bits per window divided by the window."""
    rates = np.zeros((N, N), dtype=np.float64)
    for g in groomed:
        rates[g.src_rack, g.dst_rack] += g.size / window
    return rates

#### Rack-to-rack provisioning ####

class _Stranded(Exception):
    def __init__(self, pair):
        self.pair = pair

def r2r_targets(
        N : int,
        demand : Mapping[FlowClass, Union[float, np.ndarray]],
        tau_h : float,
        window : Optional[float]=None,
        rates : Optional[Mapping[FlowClass, Optional[float]]]=None
    ) -> Dict[FlowClass, np.ndarray]:
    """
    Capacity each R2R lightpath must provide: ``window * lambda_ij / tau_h``, or a fixed rate when overridden.
    """
    window = tau_h if window is None else window
    if not (tau_h > 0 and window > 0):
        raise ValueError(f"tau_h and the grooming window must be positive, got {tau_h} and {window}.")
    rates = rates or {}
    targets = {}
    for cls in (FlowClass.CF, FlowClass.MF):
        if rates.get(cls) is not None:
            target = np.full((N, N), float(rates[cls]))
        else:
            lam = np.broadcast_to(np.asarray(demand.get(cls, 0.0), dtype=np.float64), (N, N))
            if np.any(lam < 0):
                raise ValueError(f"Demand rates must be nonnegative ({cls.value}).")
            target = window * lam / tau_h
        np.fill_diagonal(target, 0.0)
        targets[cls] = target
    return targets

def _r2r_options(topo : PhysicalTopology, state : ResourceState, i : int, j : int, target : float) -> List[tuple]:
    """Feasible (cost, common free count, core, links, intensities) for one rack pair."""
    src, dst = topo.edge_switch(i), topo.edge_switch(j)
    options = []
    for c in topo.core_switches:
        links = [(src, c), (c, dst)]
        free = state.common_free(links)
        n_free = int(free.sum())
        if n_free == 0:
            continue
        intensities = [intensity_for_demand(topo.gain(l), target, topo.channel.bandwidth) for l in links]
        if all(state.fits(l, e) for l, e in zip(links, intensities)):
            options.append((sum(intensities), n_free, c, links, intensities))
    return options

def _update_ksp(ksp : KspState, topo : PhysicalTopology, state : ResourceState, pairs : Iterable[Tuple[int, int]], target : np.ndarray):
    for (i, j) in pairs:
        options = _r2r_options(topo, state, i, j, target[i, j])
        ksp.K[i, j] = len(options)
        ksp.D[i, j] = min((o[0] for o in options), default=0.0)

def _place_r2r(topo, state, cls, i, j, c, wavelength, intensities, log) -> Lightpath:
    route = (topo.edge_switch(i), c, topo.edge_switch(j))
    links = PhysicalTopology.path_links(route)
    lid = state.new_lightpath_id()
    try:
        state.reserve_path(links, wavelength, intensities, owner=lid)
    except ReservationError as e:
        raise ProvisioningError(f"Cannot provision the {cls.value} lightpath for rack pair {(i, j)}: {e}", pair=(i, j), link=e.link) from e
    cap = min(capacity(topo.gain(l), e, topo.channel.bandwidth) for l, e in zip(links, intensities))
    lp = Lightpath(lid, cls, route[0], route[-1], (i, j), wavelength, route, tuple(float(e) for e in intensities), float(cap))
    if log is not None:
        log.record(0.0, f"{cls.value}{i}-{j}", "R2R", route, wavelength, lp.total_intensity)
    return lp

def _provision_greedy(topo, state, cls, target, out, log):
    N = topo.cfg.N
    pending = {(i, j) for i in range(N) for j in range(N) if i != j}
    ksp = KspState.empty(N)
    _update_ksp(ksp, topo, state, pending, target)
    while pending:
        i, j = ksp.next_pair(pending)
        options = _r2r_options(topo, state, i, j, target[i, j])
        if not options:
            raise _Stranded((i, j))
        # Cheapest route, then most common free wavelengths, then lowest core switch id
        _, _, c, links, intensities = min(options, key=lambda o: (o[0], -o[1], o[2]))
        wavelength = first_fit_wavelength(state, [links[0][0], c, links[1][1]])
        out.append(_place_r2r(topo, state, cls, i, j, c, wavelength, intensities, log))
        pending.discard((i, j))
        # Only pairs leaving rack i or entering rack j share a link with the new lightpath
        _update_ksp(ksp, topo, state, [p for p in pending if p[0] == i or p[1] == j], target)

def _provision_slot_plan(topo, state, targets, log) -> List[Lightpath]:
    """
    Conflict-free layout: rack pairs at cyclic distance ``s`` form a perfect matching, so every matching can share one (core switch, wavelength) slot.
    """
    N, W = topo.cfg.N, topo.W
    lightpaths = []
    for offset, cls in ((0, FlowClass.CF), (N - 1, FlowClass.MF)):
        for shift in range(1, N):
            c, w = divmod(offset + shift - 1, W)
            for i in range(N):
                j = (i + shift) % N
                links = [(topo.edge_switch(i), c), (c, topo.edge_switch(j))]
                intensities = [intensity_for_demand(topo.gain(l), targets[cls][i, j], topo.channel.bandwidth) for l in links]
                lightpaths.append(_place_r2r(topo, state, cls, i, j, c, w + 1, intensities, log))
    return lightpaths

def provision_r2r(
        topo : PhysicalTopology,
        state : ResourceState,
        demand : Mapping[FlowClass, Union[float, np.ndarray]],
        tau_h : float,
        window : Optional[float]=None,
        rates : Optional[Mapping[FlowClass, Optional[float]]]=None,
        log : Optional["DecisionLog"]=None
    ) -> List[Lightpath]:
    """
    Provision one CF and one MF lightpath for every ordered rack pair.

    CF lightpaths are placed before MF lightpaths. Within a class the next pair is the one with the fewest feasible shortest routes, ties broken by the highest cheapest-route intensity and then lexicographically.
    Each lightpath takes the cheapest feasible route and the first free wavelength on it, with the per-link intensity that makes its capacity exactly ``window * lambda_ij / tau_h``.
    If this greedy order strands a pair, every lightpath placed by the call is released and the classes are laid out on a conflict-free slot plan instead.

    Args:
        topo (`PhysicalTopology`): The topology.
        state (`ResourceState`): Mutated in place.
        demand (`Mapping[FlowClass, Union[float, np.ndarray]]`): Per class, ``N x N`` rack-pair arrival rates in bits/s (or a scalar for every pair).
        tau_h (`float`): High-priority deadline in seconds.
        window (`Optional[float]`, optional): Grooming window. Defaults to ``tau_h``.
        rates (`Optional[Mapping[FlowClass, Optional[float]]]`, optional): Fixed lightpath capacity per class, overriding the demand.
        log (`Optional[DecisionLog]`, optional): Decision trace.

    Returns:
        out (`List[Lightpath]`): ``2 N (N - 1)`` lightpaths, CF first.

    Raises:
        ProvisioningError: If ``W`` is below the minimum wavelength count, or the intensity budget of a link is exhausted.
    """
    N = topo.cfg.N
    bound = min_wavelengths(N, topo.cfg.eta)
    if topo.W < bound:
        raise ProvisioningError(f"W={topo.W} wavelengths cannot carry a CF and an MF lightpath for every rack pair; the minimum is ceil(2(N-1)/(eta N)) = {bound}.")
    targets = r2r_targets(N, demand, tau_h, window, rates)
    lightpaths : List[Lightpath] = []
    try:
        for cls in (FlowClass.CF, FlowClass.MF):
            _provision_greedy(topo, state, cls, targets[cls], lightpaths, log)
    except _Stranded as e:
        logger.info(f"Greedy provisioning stranded rack pair {e.pair}; switching to the cyclic slot plan")
        for lp in lightpaths:
            teardown(state, lp)
        lightpaths = _provision_slot_plan(topo, state, targets, log)
    logger.debug(f"Provisioned {len(lightpaths)} R2R lightpaths, total intensity {sum(lp.total_intensity for lp in lightpaths):.6g}")
    return lightpaths

#### Elephant flows ####

def feasible_routes(topo : PhysicalTopology, state : ResourceState, s : int, d : int) -> List[List[int]]:
    """
    Server-to-server shortest routes (one per core switch) with at least one wavelength free on every hop.
    """
    if topo.rack_of(s) == topo.rack_of(d):
        raise ValueError(f"Servers {s} and {d} are in the same rack.")
    return [route for route in topo.routes(s, d) if state.common_free(topo.path_links(route)).any()]

def _route_score(state : ResourceState, route : Sequence[int], size : float, tau : float) -> Tuple[float, float, List[float]]:
    links = PhysicalTopology.path_links(route)
    intensities = [ef_intensity(state, l, size, tau) for l in links]
    cap = min(capacity(state.gain(l), e, state.bandwidth) for l, e in zip(links, intensities))
    n_free = int(state.common_free(links).sum())
    return n_free * cap, cap, intensities

def rank_routes(state : ResourceState, routes : Sequence[Sequence[int]], size : float, tau : float) -> List[Tuple[List[int], float, List[float]]]:
    """Routes ordered best fit first as ``(route, capacity, intensities)``; ties keep the core switch order."""
    scored = [(route, *_route_score(state, route, size, tau)) for route in routes]
    order = sorted(range(len(scored)), key=lambda k: (-scored[k][1], k))
    return [(list(scored[k][0]), scored[k][2], scored[k][3]) for k in order]

def best_fit_route(state : ResourceState, routes : Sequence[Sequence[int]], size : float, tau : float) -> Union[List[int], Blocked]:
    """
    The route maximizing (common free wavelengths) x (bottleneck fair-share capacity).

    Returns:
        out (`Union[List[int], Blocked]`): The route, or ``Blocked`` when ``routes`` is empty.
    """
    if len(routes) == 0:
        return Blocked(None, "no feasible route")
    return rank_routes(state, routes, size, tau)[0][0]

def first_fit_wavelength(state : ResourceState, route : Sequence[int]) -> int:
    """Lowest wavelength free on every hop of ``route``."""
    free = np.flatnonzero(state.common_free(PhysicalTopology.path_links(route)))
    if len(free) == 0:
        raise ValueError(f"No wavelength is free along route {list(route)}.")
    return int(free[0]) + 1

def sjf_order(contending : Iterable[Flow]) -> List[Flow]:
    """Shortest job first; ties by arrival time, then flow id."""
    return sorted(contending, key=lambda f: (f.size, f.arrival, f.id))

def provision_ef(
        topo : PhysicalTopology,
        state : ResourceState,
        flow : Flow,
        tau : Optional[float]=None,
        now : float=0.0,
        log : Optional["DecisionLog"]=None
    ) -> Union[Lightpath, Blocked]:
    """
    Set up an express lightpath for an elephant flow.

    Routes are tried best fit first, each with its first-fit wavelength and fair-share intensities; a route that cannot be reserved (or would carry nothing) passes the flow on to the next one.

    Args:
        topo (`PhysicalTopology`): The topology.
        state (`ResourceState`): Mutated in place on success only.
        flow (`Flow`): An EF.
        tau (`Optional[float]`, optional): Deadline used by the fair-share rule. Defaults to ``flow.deadline``.
        now (`float`, optional): Time stamp for the decision log.
        log (`Optional[DecisionLog]`, optional): Decision trace.

    Returns:
        out (`Union[Lightpath, Blocked]`): The active lightpath, or ``Blocked``.
    """
    if flow.cls is not FlowClass.EF:
        raise ValueError(f"provision_ef expects an elephant flow, got {flow.cls.value} flow {flow.id}.")
    tau = flow.deadline if tau is None else tau
    routes = feasible_routes(topo, state, flow.src, flow.dst)
    for route, cap, intensities in rank_routes(state, routes, flow.size, tau):
        if not cap > 0:
            continue
        wavelength = first_fit_wavelength(state, route)
        lid = state.new_lightpath_id()
        try:
            state.reserve_path(PhysicalTopology.path_links(route), wavelength, intensities, owner=lid)
        except ReservationError:
            continue
        lp = Lightpath(
            lid, FlowClass.EF, flow.src, flow.dst, (topo.rack_of(flow.src), topo.rack_of(flow.dst)),
            wavelength, tuple(route), tuple(float(e) for e in intensities), float(cap), flow_id=flow.id
        )
        if log is not None:
            log.record(now, flow.id, "PROVISION", route, wavelength, lp.total_intensity)
        return lp
    if log is not None:
        log.record(now, flow.id, "BLOCKED", (), 0, 0.0)
    return Blocked(flow.id, "no route with a free wavelength and positive fair share" if routes else "no feasible route")

def teardown(state : ResourceState, lightpath : Lightpath) -> Lightpath:
    state.release_path(lightpath.links, lightpath.wavelength)
    lightpath.active = False
    return lightpath

#### Tables and traces ####

def lightpath_table(topo : PhysicalTopology, lightpaths : Sequence[Lightpath]) -> pd.DataFrame:
    """One row per lightpath: pair, class, route, wavelength, intensities and capacity."""
    columns = ["id", "class", "src_rack", "dst_rack", "route", "wavelength", "intensities", "total_intensity", "capacity_bps"]
    rows = [
        {
            "id" : lp.id,
            "class" : lp.cls.value,
            "src_rack" : lp.racks[0],
            "dst_rack" : lp.racks[1],
            "route" : "->".join(topo.label(n) for n in lp.route),
            "wavelength" : lp.wavelength,
            "intensities" : ";".join(f"{e:.9g}" for e in lp.intensities),
            "total_intensity" : lp.total_intensity,
            "capacity_bps" : lp.capacity,
        }
        for lp in lightpaths
    ]
    return pd.DataFrame(rows, columns=columns)

class DecisionLog:
    """
    Append-only trace of policy decisions, one tab-separated line per decision:
    ``time, flow id, decision, route, wavelength, intensity``.
    """
    def __init__(self):
        self.lines : List[str] = []

    def record(self, time : float, flow_id, decision : str, route : Sequence[int], wavelength : int, intensity : float):
        line = f"{time:.9f}\t{flow_id}\t{decision}\t{'-'.join(str(n) for n in route)}\t{wavelength}\t{intensity:.9g}"
        self.lines.append(line)
        logger.debug(line)

    def __len__(self):
        return len(self.lines)

    def decisions(self, decision : Optional[str]=None) -> List[List[str]]:
        rows = [line.split("\t") for line in self.lines]
        return rows if decision is None else [r for r in rows if r[2] == decision]

    def check_non_bifurcation(self) -> None:
        """Raise AssertionError if a flow was given more than one lightpath."""
        seen = set()
        for row in self.decisions("PROVISION"):
            if row[1] in seen:
                raise AssertionError(f"Flow {row[1]} was provisioned on more than one lightpath.")
            seen.add(row[1])

    def write(self, path : Union[str, os.PathLike]) -> Union[str, os.PathLike]:
        with open(path, "w") as f:
            f.write("".join(line + "\n" for line in self.lines))
        return path
