"""
FSO channel model: link gain from geometry, capacity as a function of the allocated optical intensity, and the two intensity-allocation rules used by the grooming policy.

Intensities are in a normalized unit (unit noise variance), capacities in bits/s and every logarithm is base 2.
All functions accept scalars or numpy arrays.
"""
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd

from fso_groom.errors import ConfigurationError, ReservationError

if TYPE_CHECKING:
    from fso_groom.topology import PhysicalTopology, ResourceState

ArrayLike = Union[float, np.ndarray]

LN2 = math.log(2.0)

@dataclass(frozen=True)
class ChannelParams:
    """
    Optical front-end parameters shared by every link.

    Args:
        wavelength (`float`): Carrier wavelength in meters.
        tx_diameter (`float`): Transmitter lens diameter in meters.
        rx_diameter (`float`): Receiver planar beam diameter in meters.
        tx_efficiency (`float`): Transmitter optical efficiency in (0, 1].
        rx_efficiency (`float`): Receiver optical efficiency in (0, 1].
        pointing_loss (`float`): Pointing loss factor in [0, 1].
        filter_transmission (`float`): Narrowband filter transmission in (0, 1].
        bandwidth (`float`): Per-wavelength bandwidth in Hz.
    """
    wavelength : float = 1.55e-6
    tx_diameter : float = 0.01
    rx_diameter : float = 0.01
    tx_efficiency : float = 0.8
    rx_efficiency : float = 0.8
    pointing_loss : float = 0.9
    filter_transmission : float = 0.9
    bandwidth : float = 5.0e9

    def __post_init__(self):
        for name in ("wavelength", "tx_diameter", "rx_diameter", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"Channel parameter {name} must be positive, got {getattr(self, name)}.")
        for name in ("tx_efficiency", "rx_efficiency", "filter_transmission"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigurationError(f"Channel parameter {name} must be in (0, 1], got {value}.")
        # A pointing loss of 0 is a valid (fully misaligned) link
        if not 0 <= self.pointing_loss <= 1:
            raise ConfigurationError(f"Channel parameter pointing_loss must be in [0, 1], got {self.pointing_loss}.")

    @property
    def tx_gain(self) -> float:
        return 4 * self.tx_diameter / self.wavelength

    @property
    def rx_gain(self) -> float:
        return 4 * self.rx_diameter / self.wavelength

    @classmethod
    def from_cfg(cls, cfg : dict) -> "ChannelParams":
        return cls(
            wavelength=float(cfg["CARRIER_WAVELENGTH"]),
            tx_diameter=float(cfg["TX_LENS_DIAMETER"]),
            rx_diameter=float(cfg["RX_BEAM_DIAMETER"]),
            tx_efficiency=float(cfg["TX_EFFICIENCY"]),
            rx_efficiency=float(cfg["RX_EFFICIENCY"]),
            pointing_loss=float(cfg["POINTING_LOSS"]),
            filter_transmission=float(cfg["FILTER_TRANSMISSION"]),
            bandwidth=float(cfg["BANDWIDTH"]),
        )

def channel_gain(p : ChannelParams, distance : ArrayLike) -> ArrayLike:
    """
    Dimensionless channel gain of a link of the given length.

    The gain is the product of the transmit chain ``G_T * eta_T * eta_TP``, the free-space path loss ``(lambda / (4 pi d))^2`` and the receive chain ``G_R * eta_R * eta_lambda``, with ``G_T = 4 D_T / lambda`` and ``G_R = 4 D_R / lambda``.

    Args:
        p (`ChannelParams`): Optical parameters.
        distance (`ArrayLike`): Link length(s) in meters.

    Returns:
        out (`ArrayLike`): The gain(s), same shape as ``distance``.

    Raises:
        ValueError: If any distance is not strictly positive.
    """
    d = np.asarray(distance, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError(f"Link distance must be positive, got {distance}.")
    path_loss = (p.wavelength / (4 * math.pi * d)) ** 2
    gain = (p.tx_gain * p.tx_efficiency * p.pointing_loss) * path_loss * (p.rx_gain * p.rx_efficiency * p.filter_transmission)
    return float(gain) if gain.ndim == 0 else gain

def capacity(h : ArrayLike, E : ArrayLike, B : float) -> ArrayLike:
    """
    Capacity in bits/s of one wavelength with gain ``h`` driven at intensity ``E``: ``(B/2) log2(1 + e h^2 E^2 / (2 pi))``.

    Args:
        h (`ArrayLike`): Channel gain(s), ``>= 0``.
        E (`ArrayLike`): Allocated intensity, ``>= 0``.
        B (`float`): Bandwidth in Hz.

    Returns:
        out (`ArrayLike`): Capacity in bits/s.
    """
    h = np.asarray(h, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    snr = math.e * h ** 2 * E ** 2 / (2 * math.pi)
    out = 0.5 * B * np.log1p(snr) / LN2
    return float(out) if out.ndim == 0 else out

def intensity_for_demand(h : ArrayLike, demand : ArrayLike, B : float) -> ArrayLike:
    """
    Smallest intensity whose capacity equals ``demand`` (the exact inverse of :func:`capacity`).

    For a groomed size ``kappa`` that must leave within deadline ``tau`` the demand is ``kappa / tau``.
    Whether the result respects the per-wavelength cap is for the caller to decide.

    Args:
        h (`ArrayLike`): Channel gain(s), strictly positive.
        demand (`ArrayLike`): Required rate in bits/s, ``>= 0``.
        B (`float`): Bandwidth in Hz.

    Returns:
        out (`ArrayLike`): Intensity in the normalized unit.
    """
    h = np.asarray(h, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    if np.any(~(h > 0)):
        raise ValueError(f"Channel gain must be positive to carry traffic, got {h}.")
    if np.any(demand < 0):
        raise ValueError(f"Demand must be nonnegative, got {demand}.")
    snr = np.expm1(2 * demand / B * LN2)
    out = np.sqrt(2 * math.pi * snr / (math.e * h ** 2))
    return float(out) if out.ndim == 0 else out

def ef_intensity(
        state : "ResourceState",
        link : Tuple[int, int],
        size : float,
        tau : float,
        W : Optional[int]=None
    ) -> float:
    """
    Fair-share intensity for an elephant flow on one link.

    The flow gets the smaller of (a) what is left on the link after every other free wavelength keeps its ``E_T / W`` share and (b) the intensity its own demand ``size / tau`` needs.
    The result is clamped to ``[0, E]``; zero means the flow cannot use the link.

    Args:
        state (`ResourceState`): Current intensity/wavelength availability.
        link (`Tuple[int, int]`): The directed link.
        size (`float`): Flow size in bits.
        tau (`float`): Deadline of the low-priority class in seconds.
        W (`Optional[int]`, optional): Wavelengths per link. Defaults to ``state.W``.

    Returns:
        out (`float`): Intensity to reserve.

    Raises:
        ReservationError: If no wavelength is free on the link.
    """
    W = state.W if W is None else W
    free = state.free_count(link)
    if free == 0:
        raise ReservationError(f"No free wavelength on link {link}.", link=link)
    headroom = state.residual(link) - (free - 1) * state.E_T / W
    demanded = intensity_for_demand(state.gain(link), size / tau, state.bandwidth)
    return float(min(max(min(headroom, demanded), 0.0), state.E))

def calibrate_max_intensity(target_link_rate : float, h : float, B : float, W : int) -> Tuple[float, float]:
    """
    Bind the abstract intensity unit to a physical link rate.

    ``E_T`` is chosen so that ``W`` equal shares of ``E_T / W`` together carry ``target_link_rate``; the per-wavelength cap ``E`` defaults to ``E_T``.

    Returns:
        out (`Tuple[float, float]`): ``(E, E_T)``.
    """
    if not target_link_rate > 0:
        raise ValueError(f"Target link rate must be positive, got {target_link_rate}.")
    if W < 1:
        raise ValueError(f"W must be at least 1, got {W}.")
    share = intensity_for_demand(h, target_link_rate / W, B)
    E_T = W * share
    return E_T, E_T

@dataclass(frozen=True)
class LinkBudget:
    """Gain and intensity cap of one directed link."""
    gain : float
    E : float
    bandwidth : float

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"Link gain must be positive, got {self.gain}.")

    @property
    def max_capacity(self) -> float:
        return capacity(self.gain, self.E, self.bandwidth)

    @property
    def capacity_fn(self) -> Callable[[ArrayLike], ArrayLike]:
        return lambda E: capacity(self.gain, E, self.bandwidth)

def link_budget_table(topo : "PhysicalTopology", E : float) -> pd.DataFrame:
    """
    One row per directed link: endpoints, distance, gain and capacity at the per-wavelength cap.

    Args:
        topo (`PhysicalTopology`): The topology.
        E (`float`): Per-wavelength intensity cap.

    Returns:
        out (`pd.DataFrame`): Columns ``link, src, dst, distance_m, gain, max_capacity_bps``.
    """
    rows = []
    for (m, n) in topo.links:
        budget = LinkBudget(topo.gain((m, n)), E, topo.channel.bandwidth)
        rows.append({
            "link" : f"{topo.label(m)}->{topo.label(n)}",
            "src" : m,
            "dst" : n,
            "distance_m" : topo.distance((m, n)),
            "gain" : budget.gain,
            "max_capacity_bps" : budget.max_capacity,
        })
    return pd.DataFrame(rows, columns=["link", "src", "dst", "distance_m", "gain", "max_capacity_bps"])
