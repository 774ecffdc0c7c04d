"""
Discrete-event simulation in two modes.

* ``network``: flow-level simulation of a spine-leaf WDM-FSO network under one of the policies ``TG-FSO`` (groomed rack-to-rack lightpaths plus express lightpaths for elephants), ``ECMP-FSO`` (fixed equal-rate wavelength channels, hashed core switch) and ``ECMP-legacy`` (one channel at a tenth of the link rate).
* ``queueing``: packet-level tandem of non-preemptive two-priority (or FIFO) switches, the exact model behind :mod:`fso_groom.queueing`.

Runs are deterministic per seed: every stochastic source draws from its own stream spawned from the master seed.
"""
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.constants import c as SPEED_OF_LIGHT
from tqdm import tqdm

from fso_groom import logger
from fso_groom.channel import ChannelParams
from fso_groom.errors import ConfigurationError, InstabilityError
from fso_groom.grooming import (Blocked, DecisionLog, Flow, FlowClass, Lightpath, groom_3step, provision_ef, provision_r2r,
                                sjf_order, teardown)
from fso_groom.queueing import PathModel, ServiceModel, TrafficMix
from fso_groom.topology import SERVER, PhysicalTopology, ResourceState, TopologyConfig, build_topology, intensity_budget

STREAMS = ("arrivals", "classes", "servers", "service", "priority")

def rng_streams(seed : int, names : Sequence[str]=STREAMS) -> Dict[str, np.random.Generator]:
    """One independent generator per named source, spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name : np.random.default_rng(child) for name, child in zip(names, children)}

@dataclass
class SimConfig:
    """Typed view over the simulation part of a config dictionary (sizes in bits)."""
    seed : int = 0
    duration : float = 1.0
    mode : str = "network"
    policy : str = "TG-FSO"
    discipline : str = "two-priority"
    load : float = 1.0
    workload : str = "poisson"
    flow_rate : float = 100.0
    class_shares : Tuple[float, float, float] = (0.0, 0.8, 0.2)
    cf_size : float = 8.0e5
    mf_size : float = 8.0e5
    ef_size : float = 8.0e8
    tau_h : float = 1.0e-3
    tau_l : float = 1.0
    bflat : float = 0.2
    window : float = 1.0e-3
    mf_rate : Optional[float] = None
    cf_rate : Optional[float] = None
    shuffle_mice : int = 4
    switch_latency : float = 0.0
    tick : float = 1.0e-3
    link_rate : float = 1.0e10
    t_qos : float = 1.0e-2
    queue_cap : int = 10**7
    check_invariants : bool = False
    hops : int = 1
    service : ServiceModel = field(default_factory=lambda: ServiceModel.exponential(1.0e-3))
    propagation : float = 0.0
    packets : Optional[int] = None
    raw : Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError(f"DURATION must be positive, got {self.duration}.")
        if min(self.cf_size, self.mf_size, self.ef_size) <= 0:
            raise ConfigurationError("Flow sizes must be positive.")
        shares = np.asarray(self.class_shares, dtype=np.float64)
        if len(shares) != 3 or np.any(shares < 0) or not math.isclose(shares.sum(), 1.0, rel_tol=1e-9):
            raise ConfigurationError(f"CLASS_SHARES must be three nonnegative fractions summing to 1, got {self.class_shares}.")
        if self.load < 0 or self.flow_rate < 0:
            raise ConfigurationError("LOAD and FLOW_RATE must be nonnegative.")
        if not (self.window > 0 and self.tick > 0 and self.tau_h > 0 and self.tau_l > 0):
            raise ConfigurationError("GROOMING_WINDOW, TICK and the deadlines must be positive.")

    @property
    def sizes(self) -> Dict[FlowClass, float]:
        return {FlowClass.CF : self.cf_size, FlowClass.MF : self.mf_size, FlowClass.EF : self.ef_size}

    @property
    def deadlines(self) -> Dict[FlowClass, float]:
        return {FlowClass.CF : self.tau_h, FlowClass.MF : self.tau_h, FlowClass.EF : self.tau_l}

    @property
    def mix(self) -> TrafficMix:
        return TrafficMix.from_load(self.load, self.service.m1, self.class_shares, self.bflat)

    def path_model(self) -> PathModel:
        return PathModel.homogeneous(self.hops, self.mix, self.service, self.t_qos, self.propagation)

    @classmethod
    def from_cfg(cls, cfg : dict) -> "SimConfig":
        return cls(
            seed=cfg["SEED"],
            duration=float(cfg["DURATION"]),
            mode=cfg["MODE"],
            policy=cfg["POLICY"],
            discipline=cfg["DISCIPLINE"],
            load=float(cfg["LOAD"]),
            workload=cfg["WORKLOAD"],
            flow_rate=float(cfg["FLOW_RATE"]),
            class_shares=tuple(float(s) for s in cfg["CLASS_SHARES"]),
            cf_size=8.0 * cfg["CF_SIZE_BYTES"],
            mf_size=8.0 * cfg["MF_SIZE_BYTES"],
            ef_size=8.0 * cfg["EF_SIZE_BYTES"],
            tau_h=float(cfg["TAU_H"]),
            tau_l=float(cfg["TAU_L"]),
            bflat=float(cfg["BFLAT"]),
            window=float(cfg["GROOMING_WINDOW"]),
            mf_rate=cfg["MF_RATE"],
            cf_rate=cfg["CF_RATE"],
            shuffle_mice=cfg["SHUFFLE_MICE"],
            switch_latency=float(cfg["SWITCH_LATENCY"]),
            tick=float(cfg["TICK"]),
            link_rate=float(cfg["LINK_RATE"]),
            t_qos=float(cfg["T_QOS"]),
            queue_cap=cfg["QUEUE_CAP"],
            check_invariants=cfg["CHECK_INVARIANTS"],
            hops=cfg["HOPS"],
            service=ServiceModel.from_cfg(cfg),
            propagation=float(cfg["PROPAGATION"]),
            packets=cfg["PACKETS"],
            raw=dict(cfg),
        )

#### Event queue ####

class EventKind(IntEnum):
    # Ties at equal time are processed in this order
    COMPLETE = 0
    EPOCH = 1
    ARRIVAL = 2
    TICK = 3

class EventQueue:
    """Time-ordered events; ties broken by kind rank, then insertion order."""
    def __init__(self):
        self._heap = []
        self._seq = itertools.count()
        self.now = 0.0

    def push(self, time : float, kind : EventKind, payload : Any=None):
        if time < self.now:
            raise ValueError(f"Cannot schedule an event at {time} before the current time {self.now}.")
        heapq.heappush(self._heap, (time, int(kind), next(self._seq), payload))

    def pop(self) -> Tuple[float, EventKind, Any]:
        time, kind, _, payload = heapq.heappop(self._heap)
        self.now = time
        return time, EventKind(kind), payload

    def __len__(self):
        return len(self._heap)

#### Workload ####

def generate_workload(cfg : SimConfig, topo : PhysicalTopology, streams : Optional[Dict[str, np.random.Generator]]=None) -> List[Flow]:
    """
    Flow arrivals for every ordered rack pair during ``[0, duration)``, ids assigned in arrival order.

    ``poisson``: flows arrive at ``flow_rate * load`` per pair with classes drawn by ``class_shares``.
    ``shuffle``: every grooming window each pair sends ``shuffle_mice`` mice flows, and CF/EF flows arrive as Poisson streams at their share of ``flow_rate * load``.
    """
    streams = rng_streams(cfg.seed) if streams is None else streams
    arr_rng, cls_rng, srv_rng = streams["arrivals"], streams["classes"], streams["servers"]
    N = topo.cfg.N
    classes = (FlowClass.CF, FlowClass.MF, FlowClass.EF)
    raw = []
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            if cfg.workload == "poisson":
                n = arr_rng.poisson(cfg.flow_rate * cfg.load * cfg.duration)
                times = np.sort(arr_rng.uniform(0.0, cfg.duration, n))
                kinds = cls_rng.choice(3, size=n, p=cfg.class_shares)
                raw += [(t, i, j, classes[k]) for t, k in zip(times, kinds)]
            else:
                epochs = int(math.ceil(cfg.duration / cfg.window))
                for e in range(epochs):
                    times = e * cfg.window + arr_rng.uniform(0.0, cfg.window, cfg.shuffle_mice)
                    raw += [(t, i, j, FlowClass.MF) for t in times if t < cfg.duration]
                for k in (0, 2):
                    n = arr_rng.poisson(cfg.flow_rate * cfg.load * cfg.class_shares[k] * cfg.duration)
                    raw += [(t, i, j, classes[k]) for t in arr_rng.uniform(0.0, cfg.duration, n)]
    raw.sort(key=lambda r: (r[0], r[1], r[2]))
    flows = []
    for fid, (t, i, j, cls) in enumerate(raw):
        s = topo.servers_in_rack(i)[int(srv_rng.integers(topo.cfg.S))]
        d = topo.servers_in_rack(j)[int(srv_rng.integers(topo.cfg.S))]
        flows.append(Flow(fid, s, d, cls, cfg.sizes[cls], float(t), cfg.deadlines[cls]))
    logger.debug(f"Generated {len(flows)} flows ({cfg.workload})")
    return flows

def expected_demand(cfg : SimConfig, N : int) -> Dict[FlowClass, float]:
    """Mean offered rate in bits/s per ordered rack pair and class."""
    rate = cfg.flow_rate * cfg.load
    cf = rate * cfg.class_shares[0] * cfg.cf_size
    if cfg.workload == "shuffle":
        mf = cfg.shuffle_mice * cfg.mf_size / cfg.window
    else:
        mf = rate * cfg.class_shares[1] * cfg.mf_size
    return {FlowClass.CF : cf, FlowClass.MF : mf}

#### Metrics ####

FLOW_COLUMNS = [
    "id", "class", "src_rack", "dst_rack", "size_bits", "arrival", "release", "start", "completion",
    "fct", "network_fct", "epoch_delay", "deadline", "met_deadline",
]

@dataclass
class Metrics:
    """Results of a network-mode run."""
    policy : str
    flows : pd.DataFrame
    occupancy : pd.DataFrame
    lightpaths : pd.DataFrame
    ef_blocked : int = 0
    invariant_violations : int = 0

    def summary(self) -> pd.DataFrame:
        """One row per class: counts, FCT statistics, deadline ratio, throughput and occupancy."""
        rows = []
        for cls in FlowClass:
            sub = self.flows[self.flows["class"] == cls.value]
            done = sub[sub["completion"].notna()]
            fct = done["fct"].to_numpy()
            net = done["network_fct"].to_numpy()
            rows.append({
                "policy" : self.policy,
                "class" : cls.value,
                "flows" : len(sub),
                "completed" : len(done),
                "never_started" : int(sub["start"].isna().sum()),
                "mean_fct" : float(fct.mean()) if len(fct) else 0.0,
                "p50_fct" : float(np.percentile(fct, 50)) if len(fct) else 0.0,
                "p99_fct" : float(np.percentile(fct, 99)) if len(fct) else 0.0,
                "mean_network_fct" : float(net.mean()) if len(net) else 0.0,
                "mean_epoch_delay" : float(done["epoch_delay"].mean()) if len(done) else 0.0,
                "deadline_met_ratio" : float(done["met_deadline"].mean()) if len(done) else 0.0,
                "throughput_bps" : float((done["size_bits"] / done["fct"]).mean()) if len(done) else 0.0,
                "speedup" : float((done["deadline"] / done["network_fct"]).mean()) if len(done) else 0.0,
                "mean_ef_waiting" : float(self.occupancy["ef_waiting"].mean()) if len(self.occupancy) else 0.0,
                "mean_total_intensity" : float(self.occupancy["total_intensity"].mean()) if len(self.occupancy) else 0.0,
                "ef_blocked" : self.ef_blocked,
            })
        return pd.DataFrame(rows)

@dataclass
class _Transmitter:
    lightpath : Lightpath
    queue : deque = field(default_factory=deque)
    busy : bool = False
    bits : float = 0.0
    busy_time : float = 0.0

#### Network mode ####

class NetworkSimulation:
    """
    One network-mode run. Flows arrive during ``[0, duration)`` and the run drains every started transfer before it ends.

    Args:
        cfg (`SimConfig`): Parameters; ``cfg.policy`` selects the policy.
        topo (`PhysicalTopology`): The topology.
        flows (`Sequence[Flow]`): The workload, shared by every policy of a comparison.
        state (`Optional[ResourceState]`, optional): Resource state for TG-FSO. Built from the config when omitted.
        lightpaths (`Optional[Sequence[Lightpath]]`, optional): Pre-provisioned R2R lightpaths for TG-FSO.
        log (`Optional[DecisionLog]`, optional): Decision trace.
    """
    def __init__(
            self,
            cfg : SimConfig,
            topo : PhysicalTopology,
            flows : Sequence[Flow],
            state : Optional[ResourceState]=None,
            lightpaths : Optional[Sequence[Lightpath]]=None,
            log : Optional[DecisionLog]=None
        ):
        if cfg.policy not in ("TG-FSO", "ECMP-FSO", "ECMP-legacy"):
            raise ConfigurationError(f"Unknown policy {cfg.policy!r}.")
        self.cfg = cfg
        self.topo = topo
        self.flows = list(flows)
        self.log = log
        self.events = EventQueue()
        self.records : Dict[int, dict] = {}
        self.waiting : List[Flow] = []
        self.pending : List[Flow] = []
        self.samples = []
        self.ef_blocked = 0
        self.ef_active = 0
        E, E_T = intensity_budget(topo, {"E" : cfg.raw.get("E"), "E_T" : cfg.raw.get("E_T"), "LINK_RATE" : cfg.link_rate})
        self.E_T = E_T
        if cfg.policy == "TG-FSO":
            self.state = ResourceState(topo, E, E_T) if state is None else state
            if lightpaths is None:
                lightpaths = provision_r2r(
                    topo, self.state, expected_demand(cfg, topo.cfg.N), cfg.tau_h, cfg.window,
                    {FlowClass.MF : cfg.mf_rate, FlowClass.CF : cfg.cf_rate}, log
                )
            self.tx = {(lp.cls, *lp.racks) : _Transmitter(lp) for lp in lightpaths}
        else:
            self.state = None
            self.tx = {}
            self.n_channels = topo.W if cfg.policy == "ECMP-FSO" else 1
            self.channel_rate = cfg.link_rate / topo.W if cfg.policy == "ECMP-FSO" else cfg.link_rate / 10
            self.busy = np.zeros((len(topo.links), self.n_channels), dtype=bool)

    def path_delay(self, route : Sequence[int]) -> float:
        distance = sum(self.topo.distance(l) for l in PhysicalTopology.path_links(route))
        switches = sum(1 for n in route if self.topo.role(n) != SERVER)
        return distance / SPEED_OF_LIGHT + switches * self.cfg.switch_latency

    def _record(self, flow : Flow):
        self.records[flow.id] = {
            "id" : flow.id, "class" : flow.cls.value,
            "src_rack" : self.topo.rack_of(flow.src), "dst_rack" : self.topo.rack_of(flow.dst),
            "size_bits" : flow.size, "arrival" : flow.arrival, "release" : flow.arrival,
            "start" : math.nan, "completion" : math.nan, "deadline" : flow.deadline,
        }

    def _check_cap(self):
        backlog = len(self.waiting) + sum(len(t.queue) for t in self.tx.values())
        if backlog > self.cfg.queue_cap:
            raise InstabilityError(f"Backlog of {backlog} transfers exceeds the cap {self.cfg.queue_cap} at t={self.events.now:.6g}.")

    def run(self, progress : bool=False) -> Metrics:
        cfg = self.cfg
        for f in self.flows:
            self._record(f)
            self.events.push(f.arrival, EventKind.ARRIVAL, f)
        for k in range(int(math.floor(cfg.duration / cfg.tick)) + 1):
            self.events.push(k * cfg.tick, EventKind.TICK)
        if cfg.policy == "TG-FSO":
            for k in range(1, int(math.ceil(cfg.duration / cfg.window)) + 2):
                self.events.push(k * cfg.window, EventKind.EPOCH)

        bar = tqdm(total=len(self.flows), desc=f"Simulating {cfg.policy}", disable=not progress, leave=False)
        while len(self.events):
            now, kind, payload = self.events.pop()
            match kind:
                case EventKind.ARRIVAL:
                    self._on_arrival(now, payload)
                    self._check_cap()
                    bar.update(1)
                case EventKind.EPOCH:
                    self._on_epoch(now)
                    self._check_cap()
                case EventKind.COMPLETE:
                    self._on_complete(now, payload)
                case EventKind.TICK:
                    self._sample(now)
            if cfg.check_invariants and self.state is not None:
                self.state.check_invariants()
        bar.close()
        return self._metrics()

    #### Handlers ####

    def _on_arrival(self, now : float, flow : Flow):
        if self.cfg.policy != "TG-FSO":
            if not self._start_channel(now, flow):
                self.waiting.append(flow)
        elif flow.cls is FlowClass.EF:
            if not self._start_ef(now, flow):
                self.ef_blocked += 1
                self.waiting.append(flow)
        else:
            self.pending.append(flow)

    def _on_epoch(self, now : float):
        self._retry_ef(now)
        if not self.pending:
            return
        for cls in (FlowClass.CF, FlowClass.MF):
            flows = [f for f in self.pending if f.cls is cls]
            for g in groom_3step(self.topo, flows, cls):
                for fid in g.flow_ids:
                    self.records[fid]["release"] = now
                tx = self.tx[(cls, g.src_rack, g.dst_rack)]
                tx.queue.append(g)
                if not tx.busy:
                    self._start_batch(now, tx)
        self.pending = []

    def _start_batch(self, now : float, tx : _Transmitter):
        while tx.queue:
            g = tx.queue.popleft()
            if not tx.lightpath.capacity > 0:
                logger.warning(f"Lightpath {tx.lightpath.id} has no capacity; {len(g.flow_ids)} {g.cls.value} flows are never delivered")
                continue
            duration = g.size / tx.lightpath.capacity
            for fid in g.flow_ids:
                self.records[fid]["start"] = now
            tx.busy = True
            tx.bits += g.size
            tx.busy_time += duration
            self.events.push(now + duration, EventKind.COMPLETE, ("batch", tx, g))
            return
        tx.busy = False

    def _start_ef(self, now : float, flow : Flow) -> bool:
        lp = provision_ef(self.topo, self.state, flow, self.cfg.tau_l, now, self.log)
        if isinstance(lp, Blocked):
            return False
        self.ef_active += 1
        self.records[flow.id]["start"] = now
        self.events.push(now + flow.size / lp.capacity, EventKind.COMPLETE, ("ef", lp, flow))
        return True

    def _retry_ef(self, now : float):
        """Start blocked EFs in shortest-job-first order; runs on every EF teardown and grooming epoch."""
        if not self.waiting:
            return
        for waiting in sjf_order(self.waiting):
            if self._start_ef(now, waiting):
                self.waiting.remove(waiting)

    def _route(self, flow : Flow) -> List[int]:
        core = hash(flow.id) % self.topo.cfg.num_core
        i, j = self.topo.rack_of(flow.src), self.topo.rack_of(flow.dst)
        return [self.topo.edge_switch(i), core, self.topo.edge_switch(j)]

    def _start_channel(self, now : float, flow : Flow) -> bool:
        route = self._route(flow)
        rows = [self.topo.link_index(l) for l in PhysicalTopology.path_links(route)]
        free = np.flatnonzero(~self.busy[rows].any(axis=0))
        if len(free) == 0:
            return False
        ch = int(free[0])
        self.busy[rows, ch] = True
        self.records[flow.id]["start"] = now
        self.events.push(now + flow.size / self.channel_rate, EventKind.COMPLETE, ("channel", rows, ch, flow, route))
        return True

    def _on_complete(self, now : float, payload : tuple):
        match payload[0]:
            case "batch":
                _, tx, g = payload
                delay = self.path_delay(tx.lightpath.route)
                for fid in g.flow_ids:
                    self.records[fid]["completion"] = now + delay
                self._start_batch(now, tx)
            case "ef":
                _, lp, flow = payload
                teardown(self.state, lp)
                self.ef_active -= 1
                if self.log is not None:
                    self.log.record(now, flow.id, "TEARDOWN", lp.route, lp.wavelength, 0.0)
                self.records[flow.id]["completion"] = now + self.path_delay(lp.route)
                self._retry_ef(now)
            case "channel":
                _, rows, ch, flow, route = payload
                self.busy[rows, ch] = False
                self.records[flow.id]["completion"] = now + self.path_delay(route)
                started = [f for f in self.waiting if self._start_channel(now, f)]
                if started:
                    ids = {f.id for f in started}
                    self.waiting = [f for f in self.waiting if f.id not in ids]

    def _sample(self, now : float):
        if self.state is not None:
            intensity = self.state.total_intensity()
        elif self.cfg.policy == "ECMP-FSO":
            # Every wavelength of every edge-core link is lit at its fixed share
            core = set(self.topo.core_switches)
            intensity = self.E_T * sum(1 for l in self.topo.links if l[0] in core or l[1] in core)
        else:
            intensity = math.nan
        backlog = sum(len(t.queue) for t in self.tx.values())
        self.samples.append({
            "time" : now, "ef_waiting" : len(self.waiting), "pending" : len(self.pending),
            "r2r_backlog" : backlog, "active_ef" : self.ef_active, "total_intensity" : intensity,
        })

    def _metrics(self) -> Metrics:
        flows = pd.DataFrame(list(self.records.values()), columns=[c for c in FLOW_COLUMNS if c not in ("fct", "network_fct", "epoch_delay", "met_deadline")])
        flows = flows.sort_values("id", kind="stable").reset_index(drop=True)
        flows["fct"] = flows["completion"] - flows["arrival"]
        flows["network_fct"] = flows["completion"] - flows["release"]
        flows["epoch_delay"] = flows["release"] - flows["arrival"]
        flows["met_deadline"] = flows["network_fct"] <= flows["deadline"]
        flows = flows[FLOW_COLUMNS]
        incomplete = int(flows["completion"].isna().sum())
        if incomplete:
            logger.warning(f"{incomplete} flows never completed under {self.cfg.policy}")
        if self.waiting:
            logger.warning(f"{len(self.waiting)} blocked flows never started under {self.cfg.policy}: {sorted(f.id for f in self.waiting)}")
        lp_rows = []
        for t in self.tx.values():
            lp = t.lightpath
            lp_rows.append({
                "id" : lp.id, "class" : lp.cls.value, "src_rack" : lp.racks[0], "dst_rack" : lp.racks[1],
                "wavelength" : lp.wavelength, "capacity_bps" : lp.capacity, "bits" : t.bits, "busy_time" : t.busy_time,
                "throughput_bps" : t.bits / t.busy_time if t.busy_time > 0 else 0.0,
            })
        return Metrics(
            self.cfg.policy, flows, pd.DataFrame(self.samples, columns=["time", "ef_waiting", "pending", "r2r_backlog", "active_ef", "total_intensity"]),
            pd.DataFrame(lp_rows, columns=["id", "class", "src_rack", "dst_rack", "wavelength", "capacity_bps", "bits", "busy_time", "throughput_bps"]),
            self.ef_blocked,
        )

def build_network(cfg : SimConfig) -> PhysicalTopology:
    return build_topology(TopologyConfig.from_cfg(cfg.raw), ChannelParams.from_cfg(cfg.raw))

#### Queueing mode ####

DISCIPLINES = ("two-priority", "single-queue")

@dataclass
class SwitchQueues:
    """
    The high and low priority queues of one switch with their queue-length integrals. Under ``single-queue`` every packet joins the high queue.
    """
    discipline : str = "two-priority"
    high : deque = field(default_factory=deque)
    low : deque = field(default_factory=deque)
    area_high : float = 0.0
    area_low : float = 0.0
    last : float = 0.0

    def __post_init__(self):
        if self.discipline not in DISCIPLINES:
            raise ConfigurationError(f"Unknown queue discipline {self.discipline!r}.")

    def __len__(self):
        return len(self.high) + len(self.low)

    def advance(self, t : float):
        self.area_high += len(self.high) * (t - self.last)
        self.area_low += len(self.low) * (t - self.last)
        self.last = t

    def push(self, packet : int, high : bool):
        (self.high if (high or self.discipline == "single-queue") else self.low).append(packet)

    def pop(self) -> int:
        # Non-preemptive: only called when the server frees up
        return self.high.popleft() if self.high else self.low.popleft()

@dataclass
class SwitchTrace:
    """Service start times of one switch plus queue-length integrals for Little's law."""
    start : np.ndarray
    depart : np.ndarray
    area_high : float
    area_low : float
    end_time : float
    max_queue : int
    violations : int = 0

def simulate_switch(
        arrivals : np.ndarray,
        high : np.ndarray,
        service : np.ndarray,
        discipline : str="two-priority",
        queue_cap : int=10**7,
        check_invariants : bool=False
    ) -> SwitchTrace:
    """
    Single server with a high and a low priority queue, non-preemptive. ``single-queue`` puts every packet in one FIFO queue (reported as the high queue).

    Arrivals must be sorted. A departure and an arrival at the same instant are processed departure first.
    """
    queues = SwitchQueues(discipline)
    arr, hi, svc = arrivals.tolist(), high.tolist(), service.tolist()
    n = len(arr)
    start = np.empty(n, dtype=np.float64)
    t = 0.0
    i = 0
    max_queue = 0
    violations = 0
    while i < n or queues:
        while i < n and arr[i] < t:
            queues.advance(arr[i])
            queues.push(i, hi[i])
            i += 1
        size = len(queues)
        if size > max_queue:
            max_queue = size
            if size > queue_cap:
                raise InstabilityError(f"Queue length {size} exceeds the cap {queue_cap} at t={t:.6g}.")
        if not queues:
            # Idle until the next arrival, which starts service at once
            t = max(t, arr[i])
            k = i
            i += 1
            queues.advance(t)
        else:
            queues.advance(t)
            k = queues.pop()
        start[k] = t
        t += svc[k]
    depart = start + service
    if check_invariants and n:
        mask = high if discipline == "two-priority" else np.ones(n, dtype=bool)
        violations = count_violations(arrivals, mask, start, depart)
    return SwitchTrace(start, depart, queues.area_high, queues.area_low, float(depart.max()) if n else 0.0, max_queue, violations)

def count_violations(arrivals : np.ndarray, high : np.ndarray, start : np.ndarray, depart : np.ndarray) -> int:
    """
    Count work-conservation and priority violations in a single-switch trace.

    Work conservation: each service starts when the previous one ends, or at the packet's own arrival if the server was idle.
    Priority: no low-priority service starts while a high-priority packet that arrived earlier is still waiting.
    """
    order = np.argsort(start, kind="stable")
    s, d, a = start[order], depart[order], arrivals[order]
    expected = np.maximum(d[:-1], a[1:])
    bad = int(np.count_nonzero(s[1:] != expected)) + int(s[0] != a[0])
    hi_arr, hi_start = arrivals[high], start[high]
    low_start = start[~high]
    if len(hi_arr) and len(low_start):
        # High packets are served FIFO, so the last one to arrive before a low start is the latest to begin service
        last = np.searchsorted(hi_arr, low_start, side="left") - 1
        has = last >= 0
        bad += int(np.count_nonzero(hi_start[last[has]] > low_start[has]))
    return bad

@dataclass
class PacketStream:
    """Externally generated packets: arrival times, origin (0 CF, 1 MF, 2 EF) and priority."""
    arrivals : np.ndarray
    origin : np.ndarray
    high : np.ndarray

def generate_packets(mix : TrafficMix, count : Optional[int], duration : float, streams : Dict[str, np.random.Generator]) -> PacketStream:
    """
    Poisson packets at ``mix.lam`` per second. Mice-origin packets are high priority; elephant-origin packets are demoted with probability ``bflat`` and promoted (CF) otherwise.
    """
    lam = mix.lam
    if lam == 0:
        empty = np.empty(0)
        return PacketStream(empty, empty.astype(np.int64), empty.astype(bool))
    if count is None:
        count = int(streams["arrivals"].poisson(lam * duration))
        arrivals = np.sort(streams["arrivals"].uniform(0.0, duration, count))
    else:
        arrivals = np.cumsum(streams["arrivals"].exponential(1.0 / lam, count))
    mice = streams["classes"].random(count) < mix.lam_M / lam
    low = streams["priority"].random(count) < mix.bflat
    origin = np.where(mice, 1, np.where(low, 2, 0))
    return PacketStream(arrivals, origin, origin != 2)

@dataclass
class QueueMetrics:
    """Results of a queueing-mode run."""
    hops : pd.DataFrame
    classes : pd.DataFrame
    delays : np.ndarray
    origin : np.ndarray
    t_qos : float
    violations : int = 0

    def blocking_fraction(self, bflat : float, t_qos : Optional[float]=None) -> float:
        t_qos = self.t_qos if t_qos is None else t_qos
        high, low = self.delays[self.origin != 2], self.delays[self.origin == 2]
        if len(low) == 0:
            low = high
        frac = lambda d: float(np.mean(d > t_qos)) if len(d) else 0.0
        return (1 - bflat) * frac(high) + bflat * frac(low)

def simulate_tandem(cfg : SimConfig, packets : Optional[PacketStream]=None, discipline : Optional[str]=None, streams : Optional[Dict[str, np.random.Generator]]=None) -> QueueMetrics:
    """
    Push one packet stream through ``cfg.hops`` switches. Departures of hop ``k`` plus its propagation delay are the arrivals of hop ``k + 1``; service times are drawn afresh at every hop.
    """
    streams = rng_streams(cfg.seed) if streams is None else streams
    discipline = cfg.discipline if discipline is None else discipline
    if packets is None:
        packets = generate_packets(cfg.mix, cfg.packets, cfg.duration, streams)
    n = len(packets.arrivals)
    services = np.stack([cfg.service.sample(streams["service"], n) for _ in range(cfg.hops)]) if n else np.empty((cfg.hops, 0))
    return _run_tandem(cfg, packets, services, discipline)

def _run_tandem(cfg : SimConfig, packets : PacketStream, services : np.ndarray, discipline : str) -> QueueMetrics:
    n = len(packets.arrivals)
    order = np.arange(n)
    arrivals = packets.arrivals.copy()
    hop_rows = []
    waits = np.zeros((cfg.hops, n))
    finish = arrivals.copy()
    violations = 0
    for h in range(cfg.hops):
        high = packets.high[order]
        trace = simulate_switch(arrivals, high, services[h, order], discipline, cfg.queue_cap, cfg.check_invariants)
        violations += trace.violations
        wait = trace.start - arrivals
        waits[h, order] = wait
        end = max(trace.end_time, 1e-300)
        if discipline == "single-queue":
            queues = (("fifo", np.ones(n, dtype=bool), trace.area_high),)
        else:
            queues = (("high", high, trace.area_high), ("low", ~high, trace.area_low))
        for label, mask, area in queues:
            w = wait[mask]
            hop_rows.append({
                "hop" : h + 1, "queue" : label, "packets" : int(mask.sum()),
                "mean_wait" : float(w.mean()) if len(w) else 0.0,
                "wait2" : float((w ** 2).mean()) if len(w) else 0.0,
                "little_L" : area / end if n else 0.0,
                "little_lambda_W" : float(w.sum()) / end if n else 0.0,
                "max_queue" : trace.max_queue,
            })
        finish[order] = trace.depart + cfg.propagation
        nxt = np.argsort(finish[order], kind="stable")
        order = order[nxt]
        arrivals = finish[order]
    delays = finish - packets.arrivals
    class_rows = []
    for label, mask in (("CF", packets.origin == 0), ("MF", packets.origin == 1), ("EF", packets.origin == 2), ("high", packets.high), ("low", ~packets.high)):
        d = delays[mask]
        class_rows.append({
            "class" : label, "packets" : int(mask.sum()),
            "mean_delay" : float(d.mean()) if len(d) else 0.0,
            "mean_wait" : float(waits[:, mask].sum(axis=0).mean()) if len(d) else 0.0,
            "p99_delay" : float(np.percentile(d, 99)) if len(d) else 0.0,
            "late_fraction" : float(np.mean(d > cfg.t_qos)) if len(d) else 0.0,
        })
    return QueueMetrics(pd.DataFrame(hop_rows), pd.DataFrame(class_rows), delays, packets.origin, cfg.t_qos, violations)

def mc_blocking(path : PathModel, samples : int, seed : int=0, bflat : Optional[float]=None, queue_cap : int=10**7) -> float:
    """
    Monte-Carlo counterpart of :func:`fso_groom.queueing.blocking_probability`.

    Every hop is simulated as an independent single switch fed by its own Poisson mix (``samples`` packets each); per class, the ``k``-th delay samples of the hops are summed into one end-to-end sample.
    The late fractions of the two classes are weighted by ``(1 - bflat, bflat)``.
    """
    bflat = path.hops[0].mix.bflat if bflat is None else bflat
    seeds = np.random.SeedSequence(seed).spawn(path.H)
    totals = {"high" : None, "low" : None}
    for hop, child in zip(path.hops, seeds):
        streams = rng_streams(int(child.generate_state(1)[0]))
        packets = generate_packets(hop.mix, samples, 0.0, streams)
        svc = hop.service.sample(streams["service"], len(packets.arrivals))
        trace = simulate_switch(packets.arrivals, packets.high, svc, "two-priority", queue_cap)
        delay = trace.depart - packets.arrivals + hop.propagation
        for label, mask in (("high", packets.high), ("low", ~packets.high)):
            d = delay[mask]
            if totals[label] is None:
                totals[label] = d
            else:
                m = min(len(totals[label]), len(d))
                totals[label] = totals[label][:m] + d[:m]
    high, low = totals["high"], totals["low"]
    if low is None or len(low) == 0:
        low = high
    if high is None or len(high) == 0:
        high = low
    frac = lambda d: float(np.mean(d > path.t_qos)) if d is not None and len(d) else 0.0
    return (1 - bflat) * frac(high) + bflat * frac(low)

#### Entry points ####

def run(cfg : SimConfig, topo : Optional[PhysicalTopology]=None, lightpaths : Optional[Sequence[Lightpath]]=None, flows : Optional[Sequence[Flow]]=None, log : Optional[DecisionLog]=None, progress : bool=False):
    """
    Run one simulation.

    Returns:
        out (`Union[Metrics, QueueMetrics]`): ``Metrics`` in network mode, ``QueueMetrics`` in queueing mode.
    """
    if cfg.mode == "queueing":
        return simulate_tandem(cfg)
    topo = build_network(cfg) if topo is None else topo
    flows = generate_workload(cfg, topo) if flows is None else flows
    return NetworkSimulation(cfg, topo, flows, lightpaths=lightpaths, log=log).run(progress)

def compare_policies(cfg : SimConfig, policies : Sequence[str]=("TG-FSO", "ECMP-FSO", "ECMP-legacy"), progress : bool=False) -> pd.DataFrame:
    """Run every policy on the same topology and workload; one summary row per (policy, class)."""
    topo = build_network(cfg)
    flows = generate_workload(cfg, topo)
    tables = []
    for policy in tqdm(policies, desc="Policies", disable=not progress, leave=False):
        policy_cfg = replace(cfg, policy=policy)
        tables.append(NetworkSimulation(policy_cfg, topo, flows).run().summary())
    return pd.concat(tables, ignore_index=True)

def compare_disciplines(cfg : SimConfig) -> pd.DataFrame:
    """
    The same packets and service times through single-queue and two-priority switches.

    Returns one row per packet class with both mean delays and their ratio (single-queue over two-priority).
    """
    streams = rng_streams(cfg.seed)
    packets = generate_packets(cfg.mix, cfg.packets, cfg.duration, streams)
    n = len(packets.arrivals)
    services = np.stack([cfg.service.sample(streams["service"], n) for _ in range(cfg.hops)]) if n else np.empty((cfg.hops, 0))
    fifo = _run_tandem(cfg, packets, services, "single-queue").classes.set_index("class")
    prio = _run_tandem(cfg, packets, services, "two-priority").classes.set_index("class")
    out = pd.DataFrame({
        "packets" : prio["packets"],
        "single_queue_delay" : fifo["mean_delay"],
        "two_priority_delay" : prio["mean_delay"],
    })
    out["ratio"] = np.where(out["two_priority_delay"] > 0, out["single_queue_delay"] / out["two_priority_delay"].where(out["two_priority_delay"] > 0, 1.0), 0.0)
    return out.reset_index()
