"""
Delay analytics for switches modelled as non-preemptive two-priority M/G/1 queues.

Packets of mice flows are always high priority. Packets of elephant flows stay low priority with probability ``bflat`` and are promoted (as mission-critical traffic) otherwise.
All times are in seconds and all rates in packets per second.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from fso_groom.errors import ConfigurationError, InstabilityError

RESIDUAL_MODES = ("baseline", "scaled")
MOMENT_MODES = ("approx", "approx_raw", "exact")

@dataclass(frozen=True)
class TrafficMix:
    """
    Arrival rates seen by one switch.

    Args:
        lam_M (`float`): Mice flow packet rate.
        lam_E (`float`): Elephant flow packet rate.
        bflat (`float`): Probability that an elephant packet stays low priority.
    """
    lam_M : float
    lam_E : float
    bflat : float = 0.2

    def __post_init__(self):
        if self.lam_M < 0 or self.lam_E < 0:
            raise ConfigurationError(f"Arrival rates must be nonnegative, got lam_M={self.lam_M}, lam_E={self.lam_E}.")
        if not 0 <= self.bflat <= 1:
            raise ConfigurationError(f"bflat must be in [0, 1], got {self.bflat}.")

    @property
    def lam_c(self) -> float:
        return (1 - self.bflat) * self.lam_E

    @property
    def lam_h(self) -> float:
        return self.lam_M + self.lam_c

    @property
    def lam_l(self) -> float:
        return self.bflat * self.lam_E

    @property
    def lam(self) -> float:
        return self.lam_M + self.lam_E

    @classmethod
    def from_load(cls, load : float, mean_service : float, shares : Sequence[float], bflat : float) -> "TrafficMix":
        """
        Split a total utilisation ``load`` by class shares ``[CF, MF, EF]``; CF and EF together form the elephant-origin stream.
        """
        cf, mf, ef = shares
        total = load / mean_service
        return cls(total * mf, total * (cf + ef), bflat)

@dataclass(frozen=True)
class ServiceModel:
    """
    Raw moments of the per-packet service time.

    Use :meth:`of` to build one from a distribution tag.
    """
    m1 : float
    m2 : float
    m3 : float
    dist : str = "general"
    k : int = 1

    def __post_init__(self):
        if not (self.m1 > 0 and self.m2 > 0 and self.m3 > 0):
            raise ConfigurationError(f"Service moments must be positive, got {self.m1}, {self.m2}, {self.m3}.")
        if self.m2 < self.m1 ** 2 * (1 - 1e-12):
            raise ConfigurationError(f"Second moment {self.m2} is below the squared mean {self.m1 ** 2}.")

    @classmethod
    def exponential(cls, mean : float) -> "ServiceModel":
        return cls(mean, 2 * mean ** 2, 6 * mean ** 3, "exponential")

    @classmethod
    def deterministic(cls, mean : float) -> "ServiceModel":
        return cls(mean, mean ** 2, mean ** 3, "deterministic")

    @classmethod
    def erlang(cls, mean : float, k : int) -> "ServiceModel":
        if k < 1:
            raise ConfigurationError(f"Erlang shape must be at least 1, got {k}.")
        return cls(mean, mean ** 2 * (k + 1) / k, mean ** 3 * (k + 1) * (k + 2) / k ** 2, "erlang", k)

    @classmethod
    def of(cls, dist : str, mean : float, k : int=2) -> "ServiceModel":
        match dist:
            case "exponential":
                return cls.exponential(mean)
            case "deterministic":
                return cls.deterministic(mean)
            case "erlang":
                return cls.erlang(mean, k)
            case _:
                raise ConfigurationError(f"Unknown service distribution {dist!r}.")

    @classmethod
    def from_cfg(cls, cfg : dict) -> "ServiceModel":
        """
        The per-switch service model of a config.

        A null ``SERVICE_MEAN`` is the transmission time of one ``PACKET_SIZE_BYTES`` packet at ``LINK_RATE``.
        """
        mean = cfg["SERVICE_MEAN"]
        if mean is None:
            if cfg["PACKET_SIZE_BYTES"] <= 0:
                raise ConfigurationError(f"PACKET_SIZE_BYTES must be positive, got {cfg['PACKET_SIZE_BYTES']}.")
            mean = cfg["PACKET_SIZE_BYTES"] * 8 / float(cfg["LINK_RATE"])
        return cls.of(cfg["SERVICE_DIST"], float(mean), cfg["ERLANG_K"])

    @property
    def variance(self) -> float:
        return max(self.m2 - self.m1 ** 2, 0.0)

    def sample(self, rng : np.random.Generator, size : int) -> np.ndarray:
        """Draw service times; only defined for the tagged distributions."""
        match self.dist:
            case "exponential":
                return rng.exponential(self.m1, size)
            case "deterministic":
                return np.full(size, self.m1)
            case "erlang":
                return rng.gamma(self.k, self.m1 / self.k, size)
            case _:
                raise ValueError(f"Cannot sample a service model without a distribution tag (got {self.dist!r}).")

@dataclass(frozen=True)
class Hop:
    mix : TrafficMix
    service : ServiceModel
    propagation : float = 0.0

@dataclass(frozen=True)
class PathModel:
    """
    A tandem of switches between source and destination.

    Args:
        hops (`Tuple[Hop, ...]`): Per switch traffic, service and outgoing propagation delay.
        t_qos (`float`): End-to-end delay threshold.
    """
    hops : Tuple[Hop, ...]
    t_qos : float

    def __post_init__(self):
        object.__setattr__(self, "hops", tuple(self.hops))
        if len(self.hops) < 1:
            raise ConfigurationError("A path needs at least one hop.")
        if any(h.propagation < 0 for h in self.hops):
            raise ConfigurationError("Propagation delays must be nonnegative.")
        if not self.t_qos >= 0:
            raise ConfigurationError(f"T_QoS must be nonnegative, got {self.t_qos}.")

    @property
    def H(self) -> int:
        return len(self.hops)

    def hop(self, i : int) -> Hop:
        """Hop ``i`` (0-based); hops past the end reuse the final one."""
        return self.hops[min(i, self.H - 1)]

    @classmethod
    def homogeneous(cls, H : int, mix : TrafficMix, service : ServiceModel, t_qos : float, propagation : float=0.0) -> "PathModel":
        return cls(tuple(Hop(mix, service, propagation) for _ in range(H)), t_qos)

    @classmethod
    def from_cfg(cls, cfg : dict) -> "PathModel":
        service = ServiceModel.from_cfg(cfg)
        mix = TrafficMix.from_load(float(cfg["LOAD"]), service.m1, cfg["CLASS_SHARES"], float(cfg["BFLAT"]))
        return cls.homogeneous(cfg["HOPS"], mix, service, float(cfg["T_QOS"]), float(cfg["PROPAGATION"]))

@dataclass(frozen=True)
class Residual:
    mean : float
    second : float

    @property
    def variance(self) -> float:
        return max(self.second - self.mean ** 2, 0.0)

def utilisations(mix : TrafficMix, svc : ServiceModel) -> Tuple[float, float]:
    return mix.lam_h * svc.m1, mix.lam_l * svc.m1

def residual_moments(mix : TrafficMix, svc : ServiceModel, mode : str="baseline", scale : float=1.0) -> Residual:
    """
    First and second moments of the residual service time seen by an arrival.

    ``baseline`` gives the standard M/G/1 residual ``rho E[X^2] / (2 E[X])`` and ``rho E[X^3] / (3 E[X])``.
    ``scaled`` multiplies them by ``scale`` and ``scale**2``.

    Raises:
        InstabilityError: If the total utilisation is 1 or more.
    """
    rho_h, rho_l = utilisations(mix, svc)
    rho = rho_h + rho_l
    if rho >= 1:
        raise InstabilityError(f"Switch is unstable: rho = {rho:.6g} >= 1.")
    if mode not in RESIDUAL_MODES:
        raise ConfigurationError(f"Unknown residual mode {mode!r}.")
    n = scale if mode == "scaled" else 1.0
    return Residual(n * rho * svc.m2 / (2 * svc.m1), n ** 2 * rho * svc.m3 / (3 * svc.m1))

def waiting_time_high(mix : TrafficMix, svc : ServiceModel, mode : str="baseline", scale : float=1.0, moments : str="approx") -> Tuple[float, float]:
    """
    Mean and second moment of the high-priority queueing delay.

    The mean is ``R / (1 - rho_h)``. With ``moments="approx"`` the second moment is ``N_h Var(X) + Var(R)`` with ``N_h = lam_h W_h`` (the packet-count variance is dropped).
    That quantity is the variance of the residual plus ``N_h`` queued services; ``moments="approx_raw"`` adds the squared mean to it.
    With ``moments="exact"`` the non-preemptive priority closed form is used instead.
    """
    R = residual_moments(mix, svc, mode, scale)
    rho_h, rho_l = utilisations(mix, svc)
    if rho_h >= 1:
        raise InstabilityError(f"High-priority queue is unstable: rho_h = {rho_h:.6g} >= 1.")
    w1 = R.mean / (1 - rho_h)
    if moments == "exact":
        lam = mix.lam_h + mix.lam_l
        w2 = lam * svc.m3 / (3 * (1 - rho_h)) + (lam * svc.m2) * (mix.lam_h * svc.m2) / (2 * (1 - rho_h) ** 2)
        return w1, w2
    _check_moments(moments)
    n_h = mix.lam_h * w1
    w2 = n_h * svc.variance + R.variance
    return w1, w2 + w1 ** 2 if moments == "approx_raw" else w2

def waiting_time_low(mix : TrafficMix, svc : ServiceModel, mode : str="baseline", scale : float=1.0, moments : str="approx") -> Tuple[float, float]:
    """
    Mean and second moment of the low-priority queueing delay.

    A low-priority packet waits for the residual, the ``N_l + N_h`` packets queued ahead of it and the ``lam_h W_l`` high-priority packets arriving while it waits: ``W_l = R / ((1 - rho_h)(1 - rho))``.
    Its second moment is ``R2 + t Var(X) + t^2 E[X]^2 + 2 t E[X] R`` with ``t = N_l + N_h + lam_h W_l`` and the count variance taken as 0.
    Without low-priority traffic (``lam_l = 0``) every packet is high priority and the high-priority pair is returned.
    """
    if mix.lam_l == 0:
        return waiting_time_high(mix, svc, mode, scale, moments)
    R = residual_moments(mix, svc, mode, scale)
    rho_h, rho_l = utilisations(mix, svc)
    rho = rho_h + rho_l
    w1 = R.mean / ((1 - rho_h) * (1 - rho))
    if moments == "exact":
        lam = mix.lam_h + mix.lam_l
        s2 = lam * svc.m2
        w2 = (
            lam * svc.m3 / (3 * (1 - rho_h) ** 2 * (1 - rho))
            + s2 * s2 / (2 * (1 - rho_h) ** 2 * (1 - rho) ** 2)
            + s2 * (mix.lam_h * svc.m2) / (2 * (1 - rho_h) ** 3 * (1 - rho))
        )
        return w1, w2
    _check_moments(moments)
    w_h, _ = waiting_time_high(mix, svc, mode, scale, moments)
    ahead = mix.lam_l * w1 + mix.lam_h * w_h + mix.lam_h * w1
    w2 = R.second + ahead * svc.variance + ahead ** 2 * svc.m1 ** 2 + 2 * ahead * svc.m1 * R.mean
    return w1, w2

def _check_moments(moments : str):
    if moments not in MOMENT_MODES:
        raise ConfigurationError(f"Unknown moment mode {moments!r}.")

def hop_delay(hop : Hop, bflat : float, **convention) -> float:
    """Mean time spent at one hop: class-weighted waiting + service + propagation."""
    w_h, _ = waiting_time_high(hop.mix, hop.service, **convention)
    w_l, _ = waiting_time_low(hop.mix, hop.service, **convention)
    return (1 - bflat) * w_h + bflat * w_l + hop.service.m1 + hop.propagation

@dataclass(frozen=True)
class HopCount:
    h_star : int
    h_shortcut : int
    h_taylor : float
    cumulative : Tuple[float, ...]

def max_hop_count(path : PathModel, bflat : Optional[float]=None, **convention) -> HopCount:
    """
    The largest hop count whose cumulative mean delay stays within ``T_QoS``.

    Hops beyond the described path reuse the final hop. Also returns the identical-switch shortcut ``floor(T_QoS / T_1)`` and the light-traffic first-order estimate ``T_QoS / (psi + tau) * (1 - rho R0 / (psi + tau))`` with ``R0 = E[X^2] / (2 E[X])``.

    Args:
        path (`PathModel`): The tandem.
        bflat (`Optional[float]`, optional): Low-priority probability. Defaults to the first hop's.
        **convention: ``mode``, ``scale`` and ``moments`` forwarded to the waiting-time functions.

    Returns:
        out (`HopCount`): ``cumulative[k]`` is the mean delay of the first ``k + 1`` hops (up to ``h_star + 1`` entries).
    """
    if not math.isfinite(path.t_qos):
        raise ValueError("The maximum hop count needs a finite T_QoS.")
    bflat = path.hops[0].mix.bflat if bflat is None else bflat
    delays = [hop_delay(hop, bflat, **convention) for hop in path.hops]
    cumulative = list(np.cumsum(delays))
    h_star = int(np.searchsorted(cumulative, path.t_qos, side="right"))
    if h_star == path.H:
        # Extend with the final hop
        extra = int(math.floor((path.t_qos - cumulative[-1]) / delays[-1]))
        while cumulative[-1] + (extra + 1) * delays[-1] <= path.t_qos:
            extra += 1
        while extra > 0 and cumulative[-1] + extra * delays[-1] > path.t_qos:
            extra -= 1
        h_star += extra
        cumulative += [cumulative[-1] + k * delays[-1] for k in range(1, extra + 2)]
    else:
        cumulative = cumulative[:h_star + 1]

    h_shortcut = int(math.floor(path.t_qos / delays[0]))
    psi_tau = float(np.mean([h.service.m1 + h.propagation for h in path.hops]))
    rho = float(np.mean([sum(utilisations(h.mix, h.service)) for h in path.hops]))
    r0 = float(np.mean([h.service.m2 / (2 * h.service.m1) for h in path.hops]))
    h_taylor = path.t_qos / psi_tau * (1 - rho * r0 / psi_tau)
    return HopCount(h_star, h_shortcut, h_taylor, tuple(float(c) for c in cumulative))

def _tail(t_qos : float, mu : float, sigma : float) -> float:
    if sigma == 0:
        return 1.0 if t_qos < mu else (0.0 if t_qos > mu else 0.5)
    return float(0.5 * (1 - erf((t_qos - mu) / (math.sqrt(2) * sigma))))

def waiting_variance(mix : TrafficMix, svc : ServiceModel, priority : str, **convention) -> Tuple[float, float]:
    """
    Mean and variance of the waiting time of class ``priority`` (``"h"`` or ``"l"``).

    The ``approx`` high-priority second moment already is a variance and is taken as is. Every other pair gives ``W2 - W^2``.
    A low class without low-priority traffic is the high class.
    """
    if priority == "l" and mix.lam_l > 0:
        w1, w2 = waiting_time_low(mix, svc, **convention)
        return w1, max(w2 - w1 ** 2, 0.0)
    w1, w2 = waiting_time_high(mix, svc, **convention)
    if convention.get("moments", "approx") == "approx":
        return w1, w2
    return w1, max(w2 - w1 ** 2, 0.0)

def path_moments(path : PathModel, **convention) -> Dict[str, Tuple[float, float]]:
    """End-to-end delay mean and standard deviation per priority class, summing independent hops."""
    out = {}
    for cls in ("h", "l"):
        mu, var = 0.0, 0.0
        for hop in path.hops:
            w1, w_var = waiting_variance(hop.mix, hop.service, cls, **convention)
            mu += hop.service.m1 + w1 + hop.propagation
            var += hop.service.variance + w_var
        out[cls] = (mu, math.sqrt(var))
    return out

def blocking_probability(path : PathModel, bflat : Optional[float]=None, **convention) -> float:
    """
    Probability that the end-to-end delay exceeds ``T_QoS`` under a normal approximation of the summed hop delays.

    ``P = (1 - bflat) Q_h + bflat Q_l`` with ``Q_p = (1 - erf((T_QoS - mu_p) / (sqrt(2) sigma_p))) / 2``. A zero standard deviation gives a step at ``mu_p``.
    """
    bflat = path.hops[0].mix.bflat if bflat is None else bflat
    moments = path_moments(path, **convention)
    p = (1 - bflat) * _tail(path.t_qos, *moments["h"]) + bflat * _tail(path.t_qos, *moments["l"])
    return float(min(max(p, 0.0), 1.0))

@dataclass
class DelayReport:
    """Per hop moments and path-level delay figures."""
    t_qos : float
    bflat : float
    W_h : List[float] = field(default_factory=list)
    W_h2 : List[float] = field(default_factory=list)
    W_l : List[float] = field(default_factory=list)
    W_l2 : List[float] = field(default_factory=list)
    R : List[float] = field(default_factory=list)
    R2 : List[float] = field(default_factory=list)
    rho_h : List[float] = field(default_factory=list)
    rho_l : List[float] = field(default_factory=list)
    h_star : int = 0
    h_taylor : float = 0.0
    mu_h : float = 0.0
    sigma_h : float = 0.0
    mu_l : float = 0.0
    sigma_l : float = 0.0
    p_blocking : float = 0.0

    def to_rows(self, **extra) -> List[dict]:
        path_level = {
            "t_qos" : self.t_qos, "bflat" : self.bflat, "h_star" : self.h_star, "h_taylor" : self.h_taylor,
            "mu_h" : self.mu_h, "sigma_h" : self.sigma_h, "mu_l" : self.mu_l, "sigma_l" : self.sigma_l,
            "p_blocking" : self.p_blocking,
        }
        return [
            {
                **extra, "hop" : i + 1,
                "rho_h" : self.rho_h[i], "rho_l" : self.rho_l[i], "R" : self.R[i], "R2" : self.R2[i],
                "W_h" : self.W_h[i], "W_h2" : self.W_h2[i], "W_l" : self.W_l[i], "W_l2" : self.W_l2[i],
                **path_level,
            }
            for i in range(len(self.W_h))
        ]

def delay_report(path : PathModel, bflat : Optional[float]=None, **convention) -> DelayReport:
    bflat = path.hops[0].mix.bflat if bflat is None else bflat
    report = DelayReport(path.t_qos, bflat)
    for hop in path.hops:
        R = residual_moments(hop.mix, hop.service, convention.get("mode", "baseline"), convention.get("scale", 1.0))
        w_h = waiting_time_high(hop.mix, hop.service, **convention)
        w_l = waiting_time_low(hop.mix, hop.service, **convention)
        rho_h, rho_l = utilisations(hop.mix, hop.service)
        report.R.append(R.mean)
        report.R2.append(R.second)
        report.W_h.append(w_h[0])
        report.W_h2.append(w_h[1])
        report.W_l.append(w_l[0])
        report.W_l2.append(w_l[1])
        report.rho_h.append(rho_h)
        report.rho_l.append(rho_l)
    moments = path_moments(path, **convention)
    report.mu_h, report.sigma_h = moments["h"]
    report.mu_l, report.sigma_l = moments["l"]
    report.p_blocking = blocking_probability(path, bflat, **convention)
    if math.isfinite(path.t_qos):
        hc = max_hop_count(path, bflat, **convention)
        report.h_star, report.h_taylor = hc.h_star, hc.h_taylor
    return report

def convention_from_cfg(cfg : dict) -> dict:
    return {"mode" : cfg["RESIDUAL_MODE"], "scale" : float(cfg["RESIDUAL_SCALE"]), "moments" : cfg["MOMENTS"]}
