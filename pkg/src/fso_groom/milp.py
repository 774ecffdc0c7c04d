"""
Exact traffic grooming model as a mixed-integer linear program.

The model is built for inspection and for checking small instances: :func:`build_instance` emits every variable and constraint family, :func:`export_lp` writes it in CPLEX LP syntax for an external solver, :func:`check_solution` evaluates a candidate against every family (with the true capacity curve in place of its linearization) and :func:`brute_force_optimum` enumerates tiny instances exhaustively.

Lightpaths join ordered pairs of servers in different racks, carry one wavelength end to end and take exactly four physical hops. ``L_max = 1`` since two lightpaths of one pair on one wavelength would collide.

Variable names (``w`` wavelength, ``l`` lightpath index, ``t``/``u`` flows):

    P_m_n_i_j_w        link (m, n) carries the lightpath i->j on w
    L_i_j_w, Lt_i_j    lightpath counts
    R_m_n_i_j_w_l      route selection
    X_i_j_t_w_l, Xt_i_j_t, Y_i_j_t
                       flow t carried on a lightpath / between i and j / admitted demand
    G_i_j_t_u_w_l, Gt_i_j_t_u
                       flows t and u groomed together
    E_m_n_w, C_m_n_w   intensity and capacity
    V_m_n_i_j_t_w_l    product Y * X * R
    Z_i_j_w_l          lightpath carries at least one flow
"""
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar
from tqdm import tqdm

from fso_groom import logger
from fso_groom.channel import capacity, intensity_for_demand
from fso_groom.errors import ConfigurationError, EnumerationLimitError, ProvisioningError
from fso_groom.topology import Link, PhysicalTopology, ResourceState

BINARY, INTEGER, CONTINUOUS = "B", "I", "C"

@dataclass(frozen=True)
class MilpFlow:
    t : int
    src : int
    dst : int
    demand : float

@dataclass
class Var:
    name : str
    kind : str
    lb : float = 0.0
    ub : float = math.inf

@dataclass
class Constraint:
    name : str
    family : str
    terms : Dict[str, float]
    sense : str
    rhs : float

@dataclass
class MilpInstance:
    """Index sets, variables, tagged constraints and objective of one grooming problem."""
    topo : PhysicalTopology
    W : int
    E : float
    E_T : float
    flows : List[MilpFlow]
    pairs : List[Tuple[int, int]]
    objective_kind : str = "throughput"
    capacity_mode : str = "pwl"
    breakpoints : int = 16
    fixed_intensity : Optional[float] = None
    big_m : float = 0.0
    variables : Dict[str, Var] = field(default_factory=dict)
    constraints : List[Constraint] = field(default_factory=list)
    objective : Dict[str, float] = field(default_factory=dict)
    sense : str = "max"
    envelopes : Dict[Link, List[Tuple[float, float]]] = field(default_factory=dict)
    _counts : Dict[str, int] = field(default_factory=dict, repr=False)

    def var(self, name : str, kind : str, lb : float=0.0, ub : float=math.inf) -> str:
        if name in self.variables:
            raise ValueError(f"Variable {name} declared twice.")
        self.variables[name] = Var(name, kind, lb, ub)
        return name

    def add(self, family : str, terms : Mapping[str, float], sense : str, rhs : float):
        for name in terms:
            if name not in self.variables:
                raise KeyError(f"Constraint family {family} references undeclared variable {name}.")
        self._counts[family] = self._counts.get(family, 0) + 1
        self.constraints.append(Constraint(f"{family}_{self._counts[family]}", family, dict(terms), sense, float(rhs)))

    def family_counts(self) -> Dict[str, int]:
        return dict(self._counts)

    def kind_counts(self) -> Dict[str, int]:
        counts = {BINARY : 0, INTEGER : 0, CONTINUOUS : 0}
        for v in self.variables.values():
            counts[v.kind] += 1
        return counts

    @property
    def fixed_level(self) -> float:
        return self.E_T / self.W if self.fixed_intensity is None else self.fixed_intensity

#### Names ####

def _n(*parts) -> str:
    return "_".join(str(p) for p in parts)

P = lambda m, n, i, j, w: _n("P", m, n, i, j, w)
L = lambda i, j, w: _n("L", i, j, w)
LT = lambda i, j: _n("Lt", i, j)
R = lambda m, n, i, j, w, l=1: _n("R", m, n, i, j, w, l)
X = lambda i, j, t, w, l=1: _n("X", i, j, t, w, l)
XT = lambda i, j, t: _n("Xt", i, j, t)
Y = lambda i, j, t: _n("Y", i, j, t)
G = lambda i, j, t, u, w, l=1: _n("G", i, j, t, u, w, l)
GT = lambda i, j, t, u: _n("Gt", i, j, t, u)
EV = lambda m, n, w: _n("E", m, n, w)
CV = lambda m, n, w: _n("C", m, n, w)
V = lambda m, n, i, j, t, w, l=1: _n("V", m, n, i, j, t, w, l)
Z = lambda i, j, w, l=1: _n("Z", i, j, w, l)

#### Capacity envelope ####

def tangent_point(h : float, B : float) -> float:
    """Intensity maximizing ``C(e) / e``, where the chord from the origin touches the capacity curve."""
    a = math.e * h ** 2 / (2 * math.pi)
    # In u = e sqrt(a) the ratio is log2(1 + u^2) / u up to constants
    res = minimize_scalar(lambda u: -math.log1p(u * u) / u, bounds=(1e-3, 1e2), method="bounded", options={"xatol" : 1e-10})
    return float(res.x) / math.sqrt(a)

def capacity_envelope(h : float, B : float, E : float, breakpoints : int) -> List[Tuple[float, float]]:
    """
    Lines ``(slope, intercept)`` whose minimum overestimates ``capacity(h, e, B)`` on ``[0, E]``: the chord from the origin to the tangent point, then tangents at evenly spaced points up to ``E``.
    """
    if breakpoints < 1:
        raise ConfigurationError(f"Need at least one breakpoint, got {breakpoints}.")
    e_star = tangent_point(h, B)
    lines = [(capacity(h, e_star, B) / e_star, 0.0)]
    if E > e_star and breakpoints > 1:
        a = math.e * h ** 2 / (2 * math.pi)
        for e in np.linspace(e_star, E, breakpoints)[1:]:
            slope = B * a * e / ((1 + a * e * e) * math.log(2))
            lines.append((slope, capacity(h, e, B) - slope * e))
    return lines

#### Construction ####

def _flows_from(topo : PhysicalTopology, demand : Union[Sequence[MilpFlow], Mapping[Tuple[int, int], Sequence[float]]]) -> List[MilpFlow]:
    if isinstance(demand, Mapping):
        flows, t = [], 0
        for (s, d) in sorted(demand):
            for D in demand[(s, d)]:
                flows.append(MilpFlow(t, s, d, float(D)))
                t += 1
    else:
        flows = list(demand)
    servers = set(topo.servers)
    for f in flows:
        if f.src not in servers or f.dst not in servers:
            raise ConfigurationError(f"Flow {f.t} references unknown servers {f.src}->{f.dst}.")
        if topo.rack_of(f.src) == topo.rack_of(f.dst):
            raise ConfigurationError(f"Flow {f.t} stays inside rack {topo.rack_of(f.src)}.")
        if f.demand < 0:
            raise ConfigurationError(f"Flow {f.t} has negative demand {f.demand}.")
    return flows

def build_instance(
        topo : PhysicalTopology,
        demand : Union[Sequence[MilpFlow], Mapping[Tuple[int, int], Sequence[float]]],
        E : float,
        E_T : float,
        objective : str="throughput",
        capacity_mode : str="pwl",
        breakpoints : int=16,
        fixed_intensity : Optional[float]=None
    ) -> MilpInstance:
    """
    Emit every variable and constraint family of the grooming problem.

    Args:
        topo (`PhysicalTopology`): The topology; its ``W`` is the wavelength count.
        demand: Flow requests, either a list of :class:`MilpFlow` or ``{(s, d): [demand, ...]}`` in bits/s.
        E (`float`): Per-wavelength intensity cap.
        E_T (`float`): Per-link intensity budget.
        objective (`str`, optional): ``"throughput"`` (maximize admitted demand) or ``"intensity"`` (admit every flow, minimize total intensity).
        capacity_mode (`str`, optional): ``"pwl"`` (piecewise-linear overestimate) or ``"fixed"`` (every used wavelength runs at ``fixed_intensity``).
        breakpoints (`int`, optional): Lines of the capacity envelope.
        fixed_intensity (`Optional[float]`, optional): Intensity in fixed mode. Defaults to ``E_T / W``.

    Returns:
        out (`MilpInstance`): The instance.
    """
    if objective not in ("throughput", "intensity"):
        raise ConfigurationError(f"Unknown objective {objective!r}.")
    if capacity_mode not in ("pwl", "fixed"):
        raise ConfigurationError(f"Unknown capacity mode {capacity_mode!r}.")
    flows = _flows_from(topo, demand)
    servers = topo.servers
    pairs = [(i, j) for i in servers for j in servers if topo.rack_of(i) != topo.rack_of(j)]
    W, Ws = topo.W, range(1, topo.W + 1)
    B = topo.channel.bandwidth
    links = topo.links
    inst = MilpInstance(topo, W, E, E_T, flows, pairs, objective, capacity_mode, breakpoints, fixed_intensity)
    inst.big_m = max(capacity(topo.gain(l), E, B) for l in links)
    M = inst.big_m
    T = [f.t for f in flows]
    flow = {f.t : f for f in flows}

    # Variables
    for (i, j) in pairs:
        for w in Ws:
            for (m, n) in links:
                inst.var(P(m, n, i, j, w), BINARY)
    for (i, j) in pairs:
        for w in Ws:
            inst.var(L(i, j, w), INTEGER, 0, 1)
        inst.var(LT(i, j), INTEGER, 0, W)
    for (i, j) in pairs:
        for w in Ws:
            for (m, n) in links:
                inst.var(R(m, n, i, j, w), BINARY)
    for (i, j) in pairs:
        for t in T:
            for w in Ws:
                inst.var(X(i, j, t, w), BINARY)
            inst.var(XT(i, j, t), BINARY)
            inst.var(Y(i, j, t), CONTINUOUS, 0, flow[t].demand)
    for (i, j) in pairs:
        for t, u in itertools.combinations(T, 2):
            for w in Ws:
                inst.var(G(i, j, t, u, w), BINARY)
            inst.var(GT(i, j, t, u), BINARY)
    for (m, n) in links:
        for w in Ws:
            inst.var(EV(m, n, w), CONTINUOUS, 0, E)
            inst.var(CV(m, n, w), CONTINUOUS, 0, M)
    for (i, j) in pairs:
        for t in T:
            for w in Ws:
                for (m, n) in links:
                    inst.var(V(m, n, i, j, t, w), CONTINUOUS, 0, flow[t].demand)
    for (i, j) in pairs:
        for w in Ws:
            inst.var(Z(i, j, w), BINARY)

    # Lightpath ports and counts
    for k in servers:
        inst.add("lightpath_ports_out", {L(i, j, w) : 1 for (i, j) in pairs if i == k for w in Ws}, "<=", topo.cfg.dxc_ports)
        inst.add("lightpath_ports_in", {L(i, j, w) : 1 for (i, j) in pairs if j == k for w in Ws}, "<=", topo.cfg.dxc_ports)
    for (i, j) in pairs:
        inst.add("lightpath_count", {LT(i, j) : 1, **{L(i, j, w) : -1 for w in Ws}}, "=", 0)

    # Routing and wavelength continuity
    nodes = sorted(topo.graph.nodes())
    for (i, j) in pairs:
        for w in Ws:
            inst.add("route_endpoints", {**{P(m, n, i, j, w) : 1 for (m, n) in links if m == i}, L(i, j, w) : -1}, "=", 0)
            inst.add("route_endpoints", {**{P(m, n, i, j, w) : 1 for (m, n) in links if n == j}, L(i, j, w) : -1}, "=", 0)
            inst.add("route_terminals", {P(m, n, i, j, w) : 1 for (m, n) in links if n == i}, "=", 0)
            inst.add("route_terminals", {P(m, n, i, j, w) : 1 for (m, n) in links if m == j}, "=", 0)
            for k in nodes:
                if k in (i, j):
                    continue
                terms = {P(m, n, i, j, w) : 1 for (m, n) in links if n == k}
                for (m, n) in links:
                    if m == k:
                        terms[P(m, n, i, j, w)] = terms.get(P(m, n, i, j, w), 0) - 1
                inst.add("wavelength_continuity", terms, "=", 0)
    for (m, n) in links:
        for w in Ws:
            inst.add("collision", {P(m, n, i, j, w) : 1 for (i, j) in pairs}, "<=", 1)
    for (i, j) in pairs:
        for w in Ws:
            for (m, n) in links:
                inst.add("route_select_bound", {R(m, n, i, j, w) : 1, P(m, n, i, j, w) : -1}, "<=", 0)
    for (i, j) in pairs:
        for w in Ws:
            inst.add("route_select", {**{R(m, n, i, j, w) : 1 for (m, n) in links if m == i}, L(i, j, w) : -1}, "=", 0)
            inst.add("hop_count", {**{P(m, n, i, j, w) : 1 for (m, n) in links}, L(i, j, w) : -4}, "=", 0)

    # Connections and non-bifurcation
    for (i, j) in pairs:
        for t in T:
            inst.add("connection_count", {XT(i, j, t) : 1, **{X(i, j, t, w) : -1 for w in Ws}}, "=", 0)
            if (i, j) != (flow[t].src, flow[t].dst):
                inst.add("connection_endpoints", {XT(i, j, t) : 1}, "=", 0)
            for w in Ws:
                inst.add("connection_continuity", {X(i, j, t, w) : 1, L(i, j, w) : -1}, "<=", 0)
    for t in T:
        inst.add("non_bifurcation", {XT(i, j, t) : 1 for (i, j) in pairs}, "<=", 1)

    # Grooming indicators
    for (i, j) in pairs:
        for t, u in itertools.combinations(T, 2):
            for w in Ws:
                g = G(i, j, t, u, w)
                inst.add("groom_pair", {g : 1, X(i, j, t, w) : -1}, "<=", 0)
                inst.add("groom_pair", {g : 1, X(i, j, u, w) : -1}, "<=", 0)
                inst.add("groom_pair", {g : 1, X(i, j, t, w) : -1, X(i, j, u, w) : -1}, ">=", -1)
            inst.add("groom_count", {GT(i, j, t, u) : 1, **{G(i, j, t, u, w) : -1 for w in Ws}}, "=", 0)
    for (i, j) in pairs:
        for w in Ws:
            z = Z(i, j, w)
            for t in T:
                inst.add("lightpath_groups", {z : 1, X(i, j, t, w) : -1}, ">=", 0)
            inst.add("lightpath_groups", {z : 1, **{X(i, j, t, w) : -1 for t in T}}, "<=", 0)
            inst.add("lightpath_groups", {z : 1, L(i, j, w) : -1}, "<=", 0)

    # Intensity and capacity
    for (m, n) in links:
        h = topo.gain((m, n))
        for w in Ws:
            used = {P(m, n, i, j, w) : 1 for (i, j) in pairs}
            if capacity_mode == "fixed":
                level = inst.fixed_level
                inst.add("wavelength_intensity", {EV(m, n, w) : 1, **{k : -level for k in used}}, "=", 0)
                inst.add("capacity_envelope", {CV(m, n, w) : 1, **{k : -capacity(h, level, B) for k in used}}, "<=", 0)
            else:
                inst.add("wavelength_intensity", {EV(m, n, w) : 1, **{k : -E for k in used}}, "<=", 0)
                if (m, n) not in inst.envelopes:
                    inst.envelopes[(m, n)] = capacity_envelope(h, B, E, breakpoints)
                for slope, icpt in inst.envelopes[(m, n)]:
                    inst.add("capacity_envelope", {CV(m, n, w) : 1, EV(m, n, w) : -slope}, "<=", icpt)
            inst.add("capacity", {CV(m, n, w) : -1, **{V(m, n, i, j, t, w) : 1 for (i, j) in pairs for t in T}}, "<=", 0)
        inst.add("link_intensity", {EV(m, n, w) : 1 for w in Ws}, "<=", E_T)
    for k in servers:
        terms = {}
        for (i, j) in pairs:
            if k in (i, j):
                for t in T:
                    terms[Y(i, j, t)] = terms.get(Y(i, j, t), 0) + 1
        inst.add("dxc_processing", terms, "<=", topo.cfg.dxc_rate)

    # Demand and products
    for (i, j) in pairs:
        for t in T:
            inst.add("demand_coupling", {Y(i, j, t) : 1, XT(i, j, t) : -flow[t].demand}, "=", 0)
            for w in Ws:
                for (m, n) in links:
                    v = V(m, n, i, j, t, w)
                    inst.add("product_bounds", {v : 1, Y(i, j, t) : -1}, "<=", 0)
                    inst.add("product_bounds", {v : 1, X(i, j, t, w) : -M}, "<=", 0)
                    inst.add("product_bounds", {v : 1, R(m, n, i, j, w) : -M}, "<=", 0)
                    inst.add("product_bounds", {v : 1, Y(i, j, t) : -1, X(i, j, t, w) : -M, R(m, n, i, j, w) : -M}, ">=", -2 * M)

    if objective == "throughput":
        inst.sense = "max"
        inst.objective = {Y(i, j, t) : 1.0 for (i, j) in pairs for t in T}
    else:
        inst.sense = "min"
        inst.objective = {EV(m, n, w) : 1.0 for (m, n) in links for w in Ws}
        for t in T:
            inst.add("admission", {XT(i, j, t) : 1 for (i, j) in pairs}, "=", 1)
    logger.debug(f"Built MILP: {len(inst.variables)} variables, {len(inst.constraints)} constraints")
    return inst

#### Candidates ####

@dataclass
class CandidateSolution:
    values : Dict[str, float]
    objective : float = 0.0

    def __getitem__(self, name : str) -> float:
        return self.values.get(name, 0.0)

@dataclass(frozen=True)
class Verdict:
    ok : bool
    constraint : Optional[str] = None
    family : Optional[str] = None
    detail : str = ""

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "PASS" if self.ok else f"{self.constraint} ({self.family}): {self.detail}"

PASS = Verdict(True)

@dataclass(frozen=True)
class PlannedLightpath:
    pair : Tuple[int, int]
    wavelength : int
    links : Tuple[Link, ...]

def objective_value(inst : MilpInstance, values : Mapping[str, float]) -> float:
    return float(sum(c * values.get(k, 0.0) for k, c in inst.objective.items()))

def assemble(
        inst : MilpInstance,
        lightpaths : Sequence[PlannedLightpath],
        assignment : Mapping[int, Optional[Tuple[Tuple[int, int], int]]],
        intensity : Mapping[Tuple[Link, int], float]
    ) -> CandidateSolution:
    """
    Complete assignment from lightpaths, flow placement ``t -> (pair, wavelength)`` (or None) and per (link, wavelength) intensity.
    """
    vals : Dict[str, float] = {}
    flow = {f.t : f for f in inst.flows}
    B = inst.topo.channel.bandwidth
    count : Dict[Tuple[int, int], int] = {}
    route = {}
    for lp in lightpaths:
        i, j = lp.pair
        for (m, n) in lp.links:
            vals[P(m, n, i, j, lp.wavelength)] = 1.0
            vals[R(m, n, i, j, lp.wavelength)] = 1.0
        vals[L(i, j, lp.wavelength)] = 1.0
        count[lp.pair] = count.get(lp.pair, 0) + 1
        route[(lp.pair, lp.wavelength)] = lp.links
    for pair, k in count.items():
        vals[LT(*pair)] = float(k)
    carried : Dict[Tuple[Tuple[int, int], int], List[int]] = {}
    for t, where in assignment.items():
        if where is None:
            continue
        (i, j), w = where
        vals[X(i, j, t, w)] = 1.0
        vals[XT(i, j, t)] = 1.0
        vals[Y(i, j, t)] = flow[t].demand
        carried.setdefault(where, []).append(t)
        for (m, n) in route[where]:
            vals[V(m, n, i, j, t, w)] = flow[t].demand
    for ((i, j), w), ts in carried.items():
        vals[Z(i, j, w)] = 1.0
        for t, u in itertools.combinations(sorted(ts), 2):
            vals[G(i, j, t, u, w)] = 1.0
            vals[GT(i, j, t, u)] = vals.get(GT(i, j, t, u), 0.0) + 1.0
    for ((m, n), w), e in intensity.items():
        vals[EV(m, n, w)] = float(e)
        vals[CV(m, n, w)] = min(capacity(inst.topo.gain((m, n)), e, B), inst.big_m)
    vals = {k : v for k, v in vals.items() if v != 0.0}
    return CandidateSolution(vals, objective_value(inst, vals))

def _compare(lhs : float, sense : str, rhs : float, tol : float) -> bool:
    if sense == "<=":
        return lhs <= rhs + tol
    if sense == ">=":
        return lhs >= rhs - tol
    return abs(lhs - rhs) <= tol

def check_solution(inst : MilpInstance, cand : CandidateSolution, tol : float=1e-9) -> Verdict:
    """
    Evaluate every constraint of ``inst`` on ``cand``.

    Variable types and bounds are checked first, then the linear families in order. The linearized capacity families are replaced by the exact test ``load <= capacity(h, E)`` on every (link, wavelength).

    Returns:
        out (`Verdict`): ``PASS`` or the first violated constraint.
    """
    vals = cand.values
    for name in vals:
        if name not in inst.variables:
            return Verdict(False, name, "declaration", "unknown variable")
    for v in inst.variables.values():
        x = vals.get(v.name, 0.0)
        scale = max(1.0, abs(v.ub) if math.isfinite(v.ub) else 1.0)
        if x < v.lb - tol * scale or x > v.ub + tol * scale:
            return Verdict(False, v.name, "bounds", f"{x} outside [{v.lb}, {v.ub}]")
        if v.kind in (BINARY, INTEGER) and abs(x - round(x)) > tol:
            return Verdict(False, v.name, "integrality", f"{x} is not integral")
    for c in inst.constraints:
        if c.family in ("capacity", "capacity_envelope"):
            continue
        lhs = sum(coef * vals.get(name, 0.0) for name, coef in c.terms.items())
        scale = max(1.0, abs(c.rhs), max((abs(coef * vals.get(n, 0.0)) for n, coef in c.terms.items()), default=0.0))
        if not _compare(lhs, c.sense, c.rhs, tol * scale):
            return Verdict(False, c.name, c.family, f"{lhs:.12g} {c.sense} {c.rhs:.12g} does not hold")
    B = inst.topo.channel.bandwidth
    for (m, n) in inst.topo.links:
        for w in range(1, inst.W + 1):
            load = sum(
                vals.get(Y(i, j, t), 0.0) * vals.get(X(i, j, t, w), 0.0) * vals.get(R(m, n, i, j, w), 0.0)
                for (i, j) in inst.pairs for t in (f.t for f in inst.flows)
            )
            if load == 0:
                continue
            cap = capacity(inst.topo.gain((m, n)), vals.get(EV(m, n, w), 0.0), B)
            if load > cap * (1 + tol) + tol:
                return Verdict(False, f"capacity_{m}_{n}_{w}", "capacity", f"load {load:.12g} exceeds capacity {cap:.12g}")
    return PASS

#### Export ####

def _fmt(x : float) -> str:
    return f"{x:.12g}"

def _expr(terms : Mapping[str, float]) -> List[str]:
    return [f"{'-' if c < 0 else '+'} {_fmt(abs(c))} {name}" for name, c in terms.items()]

def _wrap(head : str, tokens : Sequence[str], tail : str="", width : int=200) -> List[str]:
    lines, line = [], head
    for tok in tokens:
        if len(line) + len(tok) + 1 > width and line.strip():
            lines.append(line)
            line = "   "
        line += " " + tok
    line += tail
    lines.append(line)
    return lines

def export_lp(inst : MilpInstance, path : Union[str, os.PathLike]) -> Union[str, os.PathLike]:
    """
    Write the instance in CPLEX LP format. Identical instances give byte-identical files; every variable appears in the Bounds section.
    """
    out = [f"\\ fso_groom grooming model: {len(inst.variables)} variables, {len(inst.constraints)} constraints, {len(inst.flows)} flows"]
    out.append("Maximize" if inst.sense == "max" else "Minimize")
    obj = _expr(inst.objective)
    if not obj and inst.variables:
        obj = [f"0 {next(iter(inst.variables))}"]
    out += _wrap(" obj:", obj)
    out.append("Subject To")
    for c in inst.constraints:
        sense = "=" if c.sense == "=" else c.sense
        out += _wrap(f" {c.name}:", _expr(c.terms) or [f"0 {next(iter(inst.variables))}"], f" {sense} {_fmt(c.rhs)}")
    out.append("Bounds")
    for v in inst.variables.values():
        if math.isfinite(v.ub):
            out.append(f" {_fmt(v.lb)} <= {v.name} <= {_fmt(v.ub)}")
        else:
            out.append(f" {v.name} >= {_fmt(v.lb)}")
    generals = [v.name for v in inst.variables.values() if v.kind == INTEGER]
    binaries = [v.name for v in inst.variables.values() if v.kind == BINARY]
    out.append("Generals")
    if generals:
        out += _wrap("", generals)
    out.append("Binaries")
    if binaries:
        out += _wrap("", binaries)
    out.append("End")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
    return path

def dump_instance(inst : MilpInstance, path : Union[str, os.PathLike]) -> Union[str, os.PathLike]:
    """Structured JSON dump: index sets, variables, constraints and objective."""
    data = {
        "W" : inst.W,
        "E" : inst.E,
        "E_T" : inst.E_T,
        "objective_kind" : inst.objective_kind,
        "capacity_mode" : inst.capacity_mode,
        "big_m" : inst.big_m,
        "links" : [list(l) for l in inst.topo.links],
        "pairs" : [list(p) for p in inst.pairs],
        "flows" : [{"t" : f.t, "src" : f.src, "dst" : f.dst, "demand" : f.demand} for f in inst.flows],
        "variables" : [{"name" : v.name, "kind" : v.kind, "lb" : v.lb, "ub" : v.ub if math.isfinite(v.ub) else None} for v in inst.variables.values()],
        "constraints" : [{"name" : c.name, "family" : c.family, "terms" : c.terms, "sense" : c.sense, "rhs" : c.rhs} for c in inst.constraints],
        "objective" : {"sense" : inst.sense, "terms" : inst.objective},
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=1)
    return path

#### Brute force ####

def flow_choices(inst : MilpInstance, t : int) -> List[Optional[Tuple[int, int]]]:
    """Reject (None) followed by every (route index, wavelength) of the flow's server pair."""
    f = next(f for f in inst.flows if f.t == t)
    routes = inst.topo.routes(f.src, f.dst)
    return [None] + [(r, w) for r in range(len(routes)) for w in range(1, inst.W + 1)]

def _link_intensity(inst : MilpInstance, link : Link, load : float, mode : str, levels : int) -> Optional[float]:
    """Smallest admissible intensity carrying ``load`` on one wavelength, or None."""
    h = inst.topo.gain(link)
    B = inst.topo.channel.bandwidth
    if inst.capacity_mode == "fixed":
        e = inst.fixed_level
        return e if capacity(h, e, B) * (1 + 1e-12) >= load and e <= inst.E else None
    if mode == "grid":
        for k in range(1, levels + 1):
            e = inst.E * k / levels
            if capacity(h, e, B) * (1 + 1e-12) >= load:
                return e
        return None
    e = intensity_for_demand(h, load, B)
    return e if e <= inst.E * (1 + 1e-12) else None

def _evaluate(inst : MilpInstance, combo : Sequence, mode : str, levels : int):
    """Quick feasibility of one choice vector; returns (objective, lightpaths, assignment, intensity) or None."""
    flows = inst.flows
    lp_route : Dict[Tuple[Tuple[int, int], int], Tuple[Link, ...]] = {}
    load : Dict[Tuple[Tuple[int, int], int], float] = {}
    assignment = {}
    for f, choice in zip(flows, combo):
        if choice is None:
            if inst.objective_kind == "intensity":
                return None
            assignment[f.t] = None
            continue
        r, w = choice
        key = ((f.src, f.dst), w)
        links = tuple(PhysicalTopology.path_links(inst.topo.routes(f.src, f.dst)[r]))
        if lp_route.setdefault(key, links) != links:
            return None
        load[key] = load.get(key, 0.0) + f.demand
        assignment[f.t] = key
    used : Dict[Tuple[Link, int], Tuple[int, int]] = {}
    intensity : Dict[Tuple[Link, int], float] = {}
    per_link : Dict[Link, float] = {}
    for key, links in lp_route.items():
        pair, w = key
        for link in links:
            if (link, w) in used:
                return None
            used[(link, w)] = pair
            e = _link_intensity(inst, link, load[key], mode, levels)
            if e is None:
                return None
            intensity[(link, w)] = e
            per_link[link] = per_link.get(link, 0.0) + e
    if any(total > inst.E_T * (1 + 1e-12) for total in per_link.values()):
        return None
    lightpaths = [PlannedLightpath(pair, w, links) for (pair, w), links in lp_route.items()]
    if inst.objective_kind == "throughput":
        obj = sum(f.demand for f in flows if assignment.get(f.t) is not None)
    else:
        obj = sum(intensity.values())
    return obj, lightpaths, assignment, intensity

def _better(inst : MilpInstance, obj : float, best : Optional[float]) -> bool:
    if best is None:
        return True
    tol = 1e-12 * max(1.0, abs(best))
    return obj > best + tol if inst.sense == "max" else obj < best - tol

def _enumerate(inst : MilpInstance, choices : Sequence[Sequence], mode : str, levels : int):
    best, best_combo = None, None
    for combo in itertools.product(*choices):
        found = _evaluate(inst, combo, mode, levels)
        if found is None or not _better(inst, found[0], best):
            continue
        cand = assemble(inst, *found[1:])
        if check_solution(inst, cand):
            best, best_combo = found[0], combo
    return best, best_combo

def _enumerate_subtree(args):
    inst, choices, mode, levels = args
    return _enumerate(inst, choices, mode, levels)

@dataclass
class BruteForceResult:
    candidate : Optional[CandidateSolution]
    objective : Optional[float]
    choices : Optional[Tuple]

def brute_force_optimum(
        inst : MilpInstance,
        max_flows : int=6,
        max_choices : int=10,
        intensity_mode : str="exact",
        levels : int=8,
        jobs : int=1
    ) -> BruteForceResult:
    """
    Exhaustive optimum of a tiny instance.

    Each flow is rejected or placed on one (route, wavelength) of its server pair; flows sharing a pair and wavelength share one lightpath.
    Intensities are the exact minimum per used (link, wavelength) (``"exact"``), the smallest sufficient level of a grid ``E k / levels`` (``"grid"``), or the fixed level in fixed capacity mode.
    Among equal objectives the lexicographically first choice vector wins.

    Raises:
        EnumerationLimitError: If the instance has more than ``max_flows`` flows or a flow has more than ``max_choices`` placements.
    """
    if intensity_mode not in ("exact", "grid"):
        raise ConfigurationError(f"Unknown intensity mode {intensity_mode!r}.")
    if len(inst.flows) > max_flows:
        raise EnumerationLimitError(f"{len(inst.flows)} flows exceed the enumeration limit of {max_flows}.")
    choices = [flow_choices(inst, f.t) for f in inst.flows]
    widest = max((len(c) - 1 for c in choices), default=0)
    if widest > max_choices:
        raise EnumerationLimitError(f"A flow has {widest} route/wavelength placements, above the limit of {max_choices}.")
    if jobs > 1 and choices:
        tasks = [(inst, [[first]] + choices[1:], intensity_mode, levels) for first in choices[0]]
        with Pool(jobs) as pool:
            results = list(tqdm(pool.imap(_enumerate_subtree, tasks), total=len(tasks), desc="Enumerating", leave=False))
        best, best_combo = None, None
        for obj, combo in results:
            if obj is not None and _better(inst, obj, best):
                best, best_combo = obj, combo
    else:
        best, best_combo = _enumerate(inst, choices, intensity_mode, levels)
    if best_combo is None:
        return BruteForceResult(None, None, None)
    found = _evaluate(inst, best_combo, intensity_mode, levels)
    return BruteForceResult(assemble(inst, *found[1:]), float(best), tuple(best_combo))

def random_flows(topo : PhysicalTopology, count : int, rng : np.random.Generator, max_demand : float) -> List[MilpFlow]:
    """``count`` flows between random servers in distinct racks with demand uniform in ``(0, max_demand]``."""
    servers = topo.servers
    flows = []
    for t in range(count):
        s = servers[int(rng.integers(len(servers)))]
        others = [d for d in servers if topo.rack_of(d) != topo.rack_of(s)]
        d = others[int(rng.integers(len(others)))]
        flows.append(MilpFlow(t, s, d, float(max_demand * (1.0 - rng.random()))))
    return flows

#### Heuristic conversion ####

def candidate_from_policy(inst : MilpInstance, tau_h : float=1.0e-3) -> CandidateSolution:
    """
    Run rack-to-rack provisioning on the instance's demand and express its lightpaths as a candidate.

    Every flow is treated as mice traffic of its rack pair, so the MF lightpath of a pair carries the pair's total demand. Access hops (server to edge switch and back) get the minimum intensity for that demand on the same wavelength. Lightpaths without flows are left out.
    Needs one server per rack, where rack pairs and server pairs coincide. If provisioning fails every flow is rejected.
    """
    from fso_groom.grooming import FlowClass, provision_r2r

    topo = inst.topo
    if topo.cfg.S != 1:
        raise ConfigurationError("Converting the heuristic needs one server per rack (S=1).")
    N = topo.cfg.N
    demand = np.zeros((N, N))
    for f in inst.flows:
        demand[topo.rack_of(f.src), topo.rack_of(f.dst)] += f.demand
    state = ResourceState(topo, inst.E, inst.E_T)
    empty = {f.t : None for f in inst.flows}
    try:
        lightpaths = provision_r2r(topo, state, {FlowClass.MF : demand, FlowClass.CF : 0.0}, tau_h)
    except ProvisioningError as e:
        logger.warning(f"Heuristic provisioning failed, every flow is rejected: {e}")
        return assemble(inst, [], empty, {})
    B = topo.channel.bandwidth
    planned, assignment, intensity = [], dict(empty), {}
    for lp in lightpaths:
        if lp.cls is not FlowClass.MF:
            continue
        i, j = lp.racks
        s, d = topo.servers_in_rack(i)[0], topo.servers_in_rack(j)[0]
        flows = [f for f in inst.flows if (f.src, f.dst) == (s, d)]
        if not flows or sum(f.demand for f in flows) == 0:
            continue
        load = sum(f.demand for f in flows)
        links = ((s, lp.src),) + tuple(lp.links) + ((lp.dst, d),)
        for link, e in zip(lp.links, lp.intensities):
            intensity[(link, lp.wavelength)] = e
        for link in (links[0], links[-1]):
            intensity[(link, lp.wavelength)] = intensity_for_demand(topo.gain(link), load, B)
        planned.append(PlannedLightpath((s, d), lp.wavelength, links))
        for f in flows:
            assignment[f.t] = ((s, d), lp.wavelength)
    return assemble(inst, planned, assignment, intensity)
