"""
Spine-leaf (two-layer Clos) WDM-FSO topology and the mutable resource state.

Node ids are integers laid out as ``[core switches | edge switches | servers]``:

    core switch c      -> c                      0 <= c < eta*N
    edge switch of i   -> eta*N + i              0 <= i < N
    server k of rack i -> eta*N + N + i*S + k    0 <= k < S

Every edge switch has a directed link to and from every core switch, and every server has an uplink and a downlink to the edge switch of its rack.
Links are indexed in sorted ``(src, dst)`` order; wavelengths are numbered ``1..W``.
"""
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from fso_groom import logger
from fso_groom.channel import ChannelParams, calibrate_max_intensity, channel_gain
from fso_groom.config import parse_eta
from fso_groom.errors import ConfigurationError, ReservationError

SERVER = "Server"
EDGE = "EdgeSwitch"
CORE = "CoreSwitch"

Link = Tuple[int, int]

@dataclass(frozen=True)
class TopologyConfig:
    """
    Sizing and geometry of the data-center network.

    Args:
        N (`int`): Racks (edge switches), at least 2.
        eta (`Fraction`): Core/edge switch ratio, ``eta * N`` must be a positive integer.
        S (`int`): Servers per rack.
        W (`int`): Wavelengths per directed link.
        dxc_ports (`int`): DXC I/O ports per node.
        dxc_rate (`float`): DXC processing capacity per node in bits/s.
        layout (`str`): ``"uniform"``, ``"line"`` or ``"matrix"``.
        rack_pitch (`float`): Edge switch spacing for the line layout.
        core_height (`float`): Height of the core row for the line layout.
        uniform_distance (`float`): Edge-core distance for the uniform layout.
        server_distance (`float`): Server to edge switch distance.
        distances (`Optional[Tuple[Tuple[float, ...], ...]]`): N x (eta*N) edge-core distances for the matrix layout.
    """
    N : int
    eta : Fraction = Fraction(1, 2)
    S : int = 1
    W : int = 4
    dxc_ports : int = 64
    dxc_rate : float = 1.0e12
    layout : str = "uniform"
    rack_pitch : float = 0.6
    core_height : float = 3.0
    uniform_distance : float = 5.0
    server_distance : float = 1.0
    distances : Optional[Tuple[Tuple[float, ...], ...]] = None

    def __post_init__(self):
        if not isinstance(self.eta, Fraction):
            object.__setattr__(self, "eta", parse_eta(self.eta))
        if self.distances is not None:
            object.__setattr__(self, "distances", tuple(tuple(float(d) for d in row) for row in self.distances))
        if self.N < 2:
            raise ConfigurationError(f"N must be at least 2, got {self.N}.")
        if not 0 < self.eta <= 1:
            raise ConfigurationError(f"eta must be in (0, 1], got {self.eta}.")
        if (self.eta * self.N).denominator != 1:
            raise ConfigurationError(f"eta*N must be an integer, got eta={self.eta}, N={self.N}.")
        for name in ("S", "W", "dxc_ports"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1, got {getattr(self, name)}.")
        if self.layout not in ("uniform", "line", "matrix"):
            raise ConfigurationError(f"Unknown layout {self.layout!r}.")
        if self.layout == "matrix":
            if self.distances is None:
                raise ConfigurationError("The matrix layout needs DISTANCES.")
            if len(self.distances) != self.N or any(len(row) != self.num_core for row in self.distances):
                raise ConfigurationError(f"DISTANCES must be {self.N} x {self.num_core}.")
        if self.layout == "line" and not (self.rack_pitch > 0 and self.core_height > 0):
            raise ConfigurationError(f"rack_pitch and core_height must be positive, got {self.rack_pitch} and {self.core_height}.")
        if not (self.uniform_distance > 0 and self.server_distance > 0):
            raise ConfigurationError("Link distances must be positive.")
        if self.distances is not None and min(min(row) for row in self.distances) <= 0:
            raise ConfigurationError("Link distances must be positive.")

    @property
    def num_core(self) -> int:
        return int(self.eta * self.N)

    @property
    def num_servers(self) -> int:
        return self.N * self.S

    @property
    def num_nodes(self) -> int:
        return self.num_servers + self.N + self.num_core

    def edge_core_distance(self, rack : int, core : int) -> float:
        match self.layout:
            case "uniform":
                return self.uniform_distance
            case "matrix":
                return self.distances[rack][core]
            case "line":
                # Core switches are spread evenly over the span of the edge row
                x_edge = rack * self.rack_pitch
                x_core = (core + 0.5) * (self.N * self.rack_pitch / self.num_core) - self.rack_pitch / 2
                return math.hypot(x_edge - x_core, self.core_height)

    @classmethod
    def from_cfg(cls, cfg : dict) -> "TopologyConfig":
        return cls(
            N=cfg["N"],
            eta=parse_eta(cfg["ETA"]),
            S=cfg["S"],
            W=cfg["W"],
            dxc_ports=cfg["DXC_PORTS"],
            dxc_rate=float(cfg["DXC_RATE"]),
            layout=cfg["LAYOUT"],
            rack_pitch=float(cfg["RACK_PITCH"]),
            core_height=float(cfg["CORE_HEIGHT"]),
            uniform_distance=float(cfg["UNIFORM_DISTANCE"]),
            server_distance=float(cfg["SERVER_DISTANCE"]),
            distances=cfg["DISTANCES"],
        )

def min_wavelengths(N : int, eta : Union[Fraction, str, float]) -> int:
    """
    Fewest wavelengths per link that fit one CF and one MF lightpath from every rack to every other rack: ``ceil(2(N-1) / (eta N))``.
    """
    eta = eta if isinstance(eta, Fraction) else parse_eta(eta)
    if N < 2 or eta * N < 1:
        raise ConfigurationError(f"min_wavelengths needs N >= 2 and eta*N >= 1, got N={N}, eta={eta}.")
    return math.ceil(Fraction(2 * (N - 1)) / (eta * N))

class PhysicalTopology:
    """
    The directed physical graph with per-link distance and channel gain.

    Use :func:`build_topology` to construct one.
    """
    def __init__(self, cfg : TopologyConfig, channel : ChannelParams, graph : nx.DiGraph):
        self.cfg = cfg
        self.channel = channel
        self.graph = graph
        self.links : List[Link] = sorted(graph.edges())
        self._link_index : Dict[Link, int] = {link : i for i, link in enumerate(self.links)}
        self.distances = np.array([graph.edges[link]["distance"] for link in self.links], dtype=np.float64)
        self.gains = np.array([graph.edges[link]["gain"] for link in self.links], dtype=np.float64)
        self._routes : Dict[Tuple[int, int], List[List[int]]] = {}

    @property
    def W(self) -> int:
        return self.cfg.W

    @property
    def core_switches(self) -> List[int]:
        return list(range(self.cfg.num_core))

    @property
    def edge_switches(self) -> List[int]:
        return [self.edge_switch(i) for i in range(self.cfg.N)]

    @property
    def servers(self) -> List[int]:
        offset = self.cfg.num_core + self.cfg.N
        return list(range(offset, offset + self.cfg.num_servers))

    def edge_switch(self, rack : int) -> int:
        return self.cfg.num_core + rack

    def servers_in_rack(self, rack : int) -> List[int]:
        offset = self.cfg.num_core + self.cfg.N + rack * self.cfg.S
        return list(range(offset, offset + self.cfg.S))

    def role(self, node : int) -> str:
        return self.graph.nodes[node]["role"]

    def rack_of(self, node : int) -> int:
        """Rack of a server or an edge switch."""
        rack = self.graph.nodes[node].get("rack")
        if rack is None:
            raise ValueError(f"Node {node} ({self.role(node)}) does not belong to a rack.")
        return rack

    def edge_switch_of(self, server : int) -> int:
        return self.edge_switch(self.rack_of(server))

    def label(self, node : int) -> str:
        return self.graph.nodes[node]["label"]

    def exists(self, m : int, n : int) -> bool:
        return self.graph.has_edge(m, n)

    def link_index(self, link : Link) -> int:
        try:
            return self._link_index[link]
        except KeyError:
            raise KeyError(f"No physical link {link}.") from None

    def gain(self, link : Link) -> float:
        return float(self.gains[self.link_index(link)])

    def distance(self, link : Link) -> float:
        return float(self.distances[self.link_index(link)])

    def routes(self, src : int, dst : int) -> List[List[int]]:
        """
        All shortest paths from ``src`` to ``dst`` as node lists, ordered by the core switch they cross.

        Between edge switches these are the ``eta*N`` two-hop routes; between servers in different racks they are the four-hop routes server, edge, core, edge, server.
        """
        key = (src, dst)
        if key not in self._routes:
            paths = list(nx.all_shortest_paths(self.graph, src, dst))
            self._routes[key] = sorted(paths, key=lambda path: [n for n in path if self.role(n) == CORE] + path)
        return self._routes[key]

    @staticmethod
    def path_links(path : Sequence[int]) -> List[Link]:
        return list(zip(path[:-1], path[1:]))

    @staticmethod
    def core_of(path : Sequence[int], num_core : int) -> int:
        return next(n for n in path if n < num_core)

    def write_edge_list(self, path : Union[str, os.PathLike]) -> Union[str, os.PathLike]:
        """
        Write a deterministic, human readable edge list (one directed link per line).
        """
        with open(path, "w") as f:
            f.write("# src dst src_label dst_label distance_m gain\n")
            for (m, n), d, h in zip(self.links, self.distances, self.gains):
                f.write(f"{m} {n} {self.label(m)} {self.label(n)} {d:.9g} {h:.9g}\n")
        return path

def build_topology(cfg : TopologyConfig, channel : Optional[ChannelParams]=None) -> PhysicalTopology:
    """
    Build the spine-leaf physical topology.

    Args:
        cfg (`TopologyConfig`): Sizing and geometry.
        channel (`Optional[ChannelParams]`, optional): Optical parameters for the gains. Defaults to ``ChannelParams()``.

    Returns:
        out (`PhysicalTopology`): ``N*S + N + eta*N`` nodes, a full bipartite edge/core mesh in both directions and one uplink/downlink pair per server.
    """
    channel = ChannelParams() if channel is None else channel
    graph = nx.DiGraph()
    C = cfg.num_core
    for c in range(C):
        graph.add_node(c, role=CORE, label=f"cs{c}")
    for i in range(cfg.N):
        graph.add_node(C + i, role=EDGE, rack=i, label=f"es{i}")
    for i in range(cfg.N):
        for k in range(cfg.S):
            node = C + cfg.N + i * cfg.S + k
            graph.add_node(node, role=SERVER, rack=i, label=f"sv{i}.{k}")

    for i in range(cfg.N):
        es = C + i
        for c in range(C):
            d = cfg.edge_core_distance(i, c)
            h = channel_gain(channel, d)
            graph.add_edge(es, c, distance=d, gain=h)
            graph.add_edge(c, es, distance=d, gain=h)
        h = channel_gain(channel, cfg.server_distance)
        for k in range(cfg.S):
            server = C + cfg.N + i * cfg.S + k
            graph.add_edge(server, es, distance=cfg.server_distance, gain=h)
            graph.add_edge(es, server, distance=cfg.server_distance, gain=h)

    topo = PhysicalTopology(cfg, channel, graph)
    logger.debug(f"Built topology: {cfg.num_servers} servers, {cfg.N} edge switches, {C} core switches, {len(topo.links)} directed links")
    return topo

def intensity_budget(topo : PhysicalTopology, cfg : dict) -> Tuple[float, float]:
    """
    The per-wavelength cap ``E`` and per-link budget ``E_T`` from a config.

    Null values are calibrated on the weakest edge-core link so that every such link reaches ``LINK_RATE`` with ``W`` equal shares.
    """
    E, E_T = cfg.get("E"), cfg.get("E_T")
    if E_T is None:
        core = set(topo.core_switches)
        weakest = min(topo.gain(link) for link in topo.links if link[0] in core or link[1] in core)
        _, E_T = calibrate_max_intensity(float(cfg["LINK_RATE"]), weakest, topo.channel.bandwidth, topo.W)
    E = E_T if E is None else E
    if not (E > 0 and E_T > 0):
        raise ConfigurationError(f"Intensity budget must be positive, got E={E}, E_T={E_T}.")
    return float(E), float(E_T)

class ResourceState:
    """
    Residual intensity and wavelength availability of every directed link.

    ``alloc[l, w]`` is the intensity allocated on link index ``l`` and wavelength ``w + 1``; ``owner[l, w]`` is 0 when the wavelength is free and otherwise the id of the lightpath holding it.
    Residual intensity is always derived from ``alloc`` so that a reserve/release pair restores the state bit for bit.
    """
    FREE = 0
    ANONYMOUS = -1

    def __init__(self, topo : PhysicalTopology, E : float, E_T : float):
        if not (E > 0 and E_T > 0):
            raise ConfigurationError(f"Intensity budget must be positive, got E={E}, E_T={E_T}.")
        self.topo = topo
        self.W = topo.W
        self.E = float(E)
        self.E_T = float(E_T)
        self.alloc = np.zeros((len(topo.links), self.W), dtype=np.float64)
        self.owner = np.zeros((len(topo.links), self.W), dtype=np.int64)
        self._next_id = 1

    @classmethod
    def from_cfg(cls, topo : PhysicalTopology, cfg : dict) -> "ResourceState":
        return cls(topo, *intensity_budget(topo, cfg))

    @property
    def bandwidth(self) -> float:
        return self.topo.channel.bandwidth

    def gain(self, link : Link) -> float:
        return self.topo.gain(link)

    def new_lightpath_id(self) -> int:
        lid = self._next_id
        self._next_id += 1
        return lid

    def residual(self, link : Link) -> float:
        return self.E_T - float(self.alloc[self.topo.link_index(link)].sum())

    def free_mask(self, link : Link) -> np.ndarray:
        return self.owner[self.topo.link_index(link)] == self.FREE

    def free_wavelengths(self, link : Link) -> List[int]:
        return [int(w) + 1 for w in np.flatnonzero(self.free_mask(link))]

    def free_count(self, link : Link) -> int:
        return int(self.free_mask(link).sum())

    def is_free(self, link : Link, wavelength : int) -> bool:
        return bool(self.owner[self.topo.link_index(link), wavelength - 1] == self.FREE)

    def common_free(self, links : Iterable[Link]) -> np.ndarray:
        """Boolean mask of wavelengths free on every link."""
        mask = np.ones(self.W, dtype=bool)
        for link in links:
            mask &= self.free_mask(link)
        return mask

    def intensity(self, link : Link, wavelength : int) -> float:
        return float(self.alloc[self.topo.link_index(link), wavelength - 1])

    def fits(self, link : Link, intensity : float) -> bool:
        """Whether ``intensity`` respects both the per-wavelength cap and the residual budget of ``link``."""
        return intensity <= self.E * (1 + 1e-12) and intensity <= self.residual(link) + 1e-12 * self.E_T

    def reserve(self, link : Link, wavelength : int, intensity : float, owner : int=ANONYMOUS) -> "ResourceState":
        """
        Occupy ``wavelength`` on ``link`` with ``intensity``.

        Raises:
            ReservationError: If the wavelength is busy, or the intensity exceeds ``E`` or the link's residual budget. The state is unchanged.
        """
        l = self.topo.link_index(link)
        if not 1 <= wavelength <= self.W:
            raise ReservationError(f"Wavelength {wavelength} outside 1..{self.W}.", link, wavelength)
        if intensity < 0:
            raise ValueError(f"Intensity must be nonnegative, got {intensity}.")
        if owner == self.FREE:
            raise ValueError("Owner id 0 is reserved for free wavelengths.")
        if self.owner[l, wavelength - 1] != self.FREE:
            raise ReservationError(f"Wavelength {wavelength} on link {link} is already used by lightpath {self.owner[l, wavelength - 1]}.", link, wavelength)
        if not self.fits(link, intensity):
            limit = "per-wavelength cap" if intensity > self.E * (1 + 1e-12) else "residual budget"
            raise ReservationError(f"Intensity {intensity:.6g} exceeds the {limit} on link {link} (E={self.E:.6g}, residual={self.residual(link):.6g}).", link, wavelength)
        self.owner[l, wavelength - 1] = owner
        self.alloc[l, wavelength - 1] = intensity
        return self

    def release(self, link : Link, wavelength : int) -> "ResourceState":
        """Free ``wavelength`` on ``link``. Releasing a free wavelength is a no-op."""
        l = self.topo.link_index(link)
        self.owner[l, wavelength - 1] = self.FREE
        self.alloc[l, wavelength - 1] = 0.0
        return self

    def reserve_path(self, links : Sequence[Link], wavelength : int, intensities : Sequence[float], owner : int=ANONYMOUS) -> "ResourceState":
        """Reserve the same wavelength on every link of a route, all or nothing."""
        done = []
        try:
            for link, intensity in zip(links, intensities):
                self.reserve(link, wavelength, intensity, owner)
                done.append(link)
        except (ReservationError, ValueError):
            for link in done:
                self.release(link, wavelength)
            raise
        return self

    def release_path(self, links : Sequence[Link], wavelength : int) -> "ResourceState":
        for link in links:
            self.release(link, wavelength)
        return self

    def total_intensity(self) -> float:
        return float(self.alloc.sum())

    def copy(self) -> "ResourceState":
        new = ResourceState.__new__(ResourceState)
        new.__dict__.update(self.__dict__)
        new.alloc = self.alloc.copy()
        new.owner = self.owner.copy()
        return new

    def check_invariants(self) -> None:
        """
        Raise AssertionError if any link exceeds its budget or cap, or a free wavelength carries intensity.
        """
        sums = self.alloc.sum(axis=1)
        if np.any(sums > self.E_T * (1 + 1e-9)):
            l = int(np.argmax(sums))
            raise AssertionError(f"Link {self.topo.links[l]} carries {sums[l]:.6g} > E_T={self.E_T:.6g}.")
        if np.any(self.alloc > self.E * (1 + 1e-9)):
            l, w = np.unravel_index(int(np.argmax(self.alloc)), self.alloc.shape)
            raise AssertionError(f"Link {self.topo.links[l]} wavelength {w + 1} carries {self.alloc[l, w]:.6g} > E={self.E:.6g}.")
        if np.any((self.owner == self.FREE) & (self.alloc != 0)):
            raise AssertionError("A free wavelength carries intensity.")
