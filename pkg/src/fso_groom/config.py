import copy
import os
from collections import OrderedDict
from fractions import Fraction
from typing import Any, Iterable, List, Union

import yaml

from fso_groom import logger

# Keep key order when dumping with the safe dumper
yaml.add_representer(OrderedDict, lambda dumper, data: dumper.represent_dict(data.items()), Dumper=yaml.SafeDumper)

NUMBER = (int, float)
OPTIONAL_NUMBER = (int, float, type(None))

CFG_PARAMS = [
    # Topology
    "N",
    "ETA",
    "S",
    "W",
    "DXC_PORTS",
    "DXC_RATE",
    "LAYOUT",
    "RACK_PITCH",
    "CORE_HEIGHT",
    "UNIFORM_DISTANCE",
    "SERVER_DISTANCE",
    "DISTANCES",
    # Channel
    "CARRIER_WAVELENGTH",
    "TX_LENS_DIAMETER",
    "RX_BEAM_DIAMETER",
    "TX_EFFICIENCY",
    "RX_EFFICIENCY",
    "POINTING_LOSS",
    "FILTER_TRANSMISSION",
    "BANDWIDTH",
    "LINK_RATE",
    "E",
    "E_T",
    # Workload
    "SEED",
    "DURATION",
    "WORKLOAD",
    "FLOW_RATE",
    "CLASS_SHARES",
    "CF_SIZE_BYTES",
    "MF_SIZE_BYTES",
    "EF_SIZE_BYTES",
    "TAU_H",
    "TAU_L",
    "BFLAT",
    "GROOMING_WINDOW",
    "MF_RATE",
    "CF_RATE",
    "SHUFFLE_MICE",
    "SWITCH_LATENCY",
    "TICK",
    # Queueing
    "HOPS",
    "SERVICE_MEAN",
    "SERVICE_DIST",
    "ERLANG_K",
    "PROPAGATION",
    "PACKETS",
    "PACKET_SIZE_BYTES",
    "T_QOS",
    "QUEUE_CAP",
    "RESIDUAL_MODE",
    "RESIDUAL_SCALE",
    "MOMENTS",
    # Simulation
    "MODE",
    "POLICY",
    "DISCIPLINE",
    "LOAD",
    "CHECK_INVARIANTS",
    # Experiment
    "SCENARIO",
    "POLICIES",
    "SWEEP_LOAD",
    "SWEEP_BFLAT",
    "SWEEP_W",
    "SWEEP_T_QOS",
    # MILP
    "MILP_OBJECTIVE",
    "MILP_CAPACITY_MODE",
    "MILP_BREAKPOINTS",
    "MILP_FIXED_INTENSITY",
    "MILP_INTENSITY_MODE",
    "MILP_INTENSITY_LEVELS",
    "MILP_MAX_FLOWS",
    "MILP_MAX_CHOICES",
]

CFG_DESCRIPTION = {
    "N": "Number of racks, i.e. edge (leaf) switches.",
    "ETA": "Core/edge switch ratio. A rational string such as '1/2' or a number; ETA*N must be an integer.",
    "S": "Servers per rack.",
    "W": "Wavelengths per directed FSO link.",
    "DXC_PORTS": "Digital cross-connect I/O ports per node, bounds the lightpaths a node may originate or terminate.",
    "DXC_RATE": "Digital processing capacity per node in bits/s.",
    "LAYOUT": "Geometry generator: 'uniform' (every edge-core link has UNIFORM_DISTANCE), 'line' (edge switches on a line, core switches centered above) or 'matrix' (DISTANCES).",
    "RACK_PITCH": "Spacing between neighbouring edge switches in meters ('line' layout).",
    "CORE_HEIGHT": "Height of the core switch row above the edge switch row in meters ('line' layout).",
    "UNIFORM_DISTANCE": "Edge-core link distance in meters ('uniform' layout).",
    "SERVER_DISTANCE": "Server to edge switch distance in meters (all layouts).",
    "DISTANCES": "N x (ETA*N) nested list of edge-core distances in meters ('matrix' layout).",
    "CARRIER_WAVELENGTH": "Optical carrier wavelength in meters.",
    "TX_LENS_DIAMETER": "Transmitter lens diameter in meters.",
    "RX_BEAM_DIAMETER": "Receiver planar beam diameter in meters.",
    "TX_EFFICIENCY": "Transmitter optical efficiency in (0, 1].",
    "RX_EFFICIENCY": "Receiver optical efficiency in (0, 1].",
    "POINTING_LOSS": "Pointing loss factor in [0, 1].",
    "FILTER_TRANSMISSION": "Narrowband filter transmission factor in (0, 1].",
    "BANDWIDTH": "Per-wavelength bandwidth in Hz.",
    "LINK_RATE": "Target rate in bits/s of a link whose intensity budget is split in W equal shares; used to calibrate E and E_T when they are null.",
    "E": "Per-wavelength intensity cap (normalized unit). Null means calibrated (equal to E_T).",
    "E_T": "Per-link total intensity budget (normalized unit). Null means calibrated from LINK_RATE.",
    "SEED": "Master seed; every stochastic source gets its own stream derived from it.",
    "DURATION": "Simulated arrival horizon in seconds (network mode and queueing mode without PACKETS).",
    "WORKLOAD": "'poisson' flow arrivals per ordered rack pair or 'shuffle' rounds of mice flows plus Poisson elephants.",
    "FLOW_RATE": "Flow arrivals per second per ordered rack pair at LOAD=1.",
    "CLASS_SHARES": "Fractions [CF, MF, EF] of arriving flows (network mode) or of offered packet load (queueing mode, CF+EF form the elephant-origin stream).",
    "CF_SIZE_BYTES": "Mission-critical flow size in bytes.",
    "MF_SIZE_BYTES": "Mice flow size in bytes.",
    "EF_SIZE_BYTES": "Elephant flow size in bytes.",
    "TAU_H": "High-priority (CF/MF) deadline in seconds.",
    "TAU_L": "Low-priority (EF) deadline in seconds.",
    "BFLAT": "Probability that an elephant-origin packet stays low priority.",
    "GROOMING_WINDOW": "Grooming epoch length in seconds.",
    "MF_RATE": "Override of the MF rack-to-rack lightpath capacity in bits/s (null derives it from the workload).",
    "CF_RATE": "Override of the CF rack-to-rack lightpath capacity in bits/s (null derives it from the workload).",
    "SHUFFLE_MICE": "Mice flows per ordered rack pair per shuffle round.",
    "SWITCH_LATENCY": "Fixed processing delay per traversed switch in seconds (network mode).",
    "TICK": "Occupancy sampling period in seconds.",
    "HOPS": "Switches in the queueing-validation tandem.",
    "SERVICE_MEAN": "Mean packet service time per switch in seconds. Null means one PACKET_SIZE_BYTES packet at LINK_RATE.",
    "SERVICE_DIST": "Service time law: 'exponential', 'deterministic' or 'erlang'.",
    "ERLANG_K": "Shape of the Erlang service law.",
    "PROPAGATION": "Propagation delay per hop in seconds (queueing mode).",
    "PACKETS": "Number of packets to inject in queueing mode (null uses DURATION).",
    "PACKET_SIZE_BYTES": "Packet size in bytes; sets the service time when SERVICE_MEAN is null.",
    "T_QOS": "End-to-end delay threshold in seconds.",
    "QUEUE_CAP": "Queue length that aborts a run as unstable.",
    "RESIDUAL_MODE": "'baseline' (standard M/G/1 residual) or 'scaled' (residual moments multiplied by RESIDUAL_SCALE and its square).",
    "RESIDUAL_SCALE": "Multiplier used when RESIDUAL_MODE is 'scaled'.",
    "MOMENTS": "Waiting-time second moments: 'approx' (high class N_h Var(X) + Var(R), count variance dropped), 'approx_raw' (the same variance plus the squared mean) or 'exact' (non-preemptive priority closed form).",
    "MODE": "'network' (policy, lightpaths and flows) or 'queueing' (isolated tandem of switches).",
    "POLICY": "'TG-FSO', 'ECMP-FSO' or 'ECMP-legacy'.",
    "DISCIPLINE": "'two-priority' or 'single-queue'.",
    "LOAD": "Offered load as a fraction of capacity.",
    "CHECK_INVARIANTS": "Assert resource and queue invariants after every event. Slow.",
    "SCENARIO": "Experiment name used in output files.",
    "POLICIES": "Policies compared by an experiment.",
    "SWEEP_LOAD": "Load axis of a sweep.",
    "SWEEP_BFLAT": "BFLAT axis of a sweep.",
    "SWEEP_W": "Wavelength-count axis of a sweep (empty keeps W).",
    "SWEEP_T_QOS": "Delay threshold axis of a sweep (empty keeps T_QOS).",
    "MILP_OBJECTIVE": "'throughput' (maximize admitted demand) or 'intensity' (minimize allocated intensity).",
    "MILP_CAPACITY_MODE": "'pwl' (piecewise-linear overestimate of the capacity curve) or 'fixed' (intensity preassigned).",
    "MILP_BREAKPOINTS": "Breakpoints of the piecewise-linear capacity overestimate.",
    "MILP_FIXED_INTENSITY": "Preassigned per-wavelength intensity in 'fixed' mode (null uses E_T/W).",
    "MILP_INTENSITY_MODE": "Brute-force intensity handling: 'exact' minimum intensity or a 'grid' of levels.",
    "MILP_INTENSITY_LEVELS": "Grid levels per link-wavelength in 'grid' mode.",
    "MILP_MAX_FLOWS": "Largest flow count the brute-force oracle accepts.",
    "MILP_MAX_CHOICES": "Largest number of route/wavelength choices per flow the brute-force oracle accepts.",
}

DEFAULT_CFG = {
    "N": 12,
    "ETA": "1/2",
    "S": 25,
    "W": 4,
    "DXC_PORTS": 64,
    "DXC_RATE": 1.0e12,
    "LAYOUT": "uniform",
    "RACK_PITCH": 0.6,
    "CORE_HEIGHT": 3.0,
    "UNIFORM_DISTANCE": 5.0,
    "SERVER_DISTANCE": 1.0,
    "DISTANCES": None,
    "CARRIER_WAVELENGTH": 1.55e-6,
    "TX_LENS_DIAMETER": 0.01,
    "RX_BEAM_DIAMETER": 0.01,
    "TX_EFFICIENCY": 0.8,
    "RX_EFFICIENCY": 0.8,
    "POINTING_LOSS": 0.9,
    "FILTER_TRANSMISSION": 0.9,
    "BANDWIDTH": 5.0e9,
    "LINK_RATE": 1.0e10,
    "E": None,
    "E_T": None,
    "SEED": 0,
    "DURATION": 1.0,
    "WORKLOAD": "poisson",
    "FLOW_RATE": 100.0,
    "CLASS_SHARES": [0.0, 0.8, 0.2],
    "CF_SIZE_BYTES": 100_000,
    "MF_SIZE_BYTES": 100_000,
    "EF_SIZE_BYTES": 100_000_000,
    "TAU_H": 1.0e-3,
    "TAU_L": 1.0,
    "BFLAT": 0.2,
    "GROOMING_WINDOW": 1.0e-3,
    "MF_RATE": None,
    "CF_RATE": None,
    "SHUFFLE_MICE": 4,
    "SWITCH_LATENCY": 0.0,
    "TICK": 1.0e-3,
    "HOPS": 1,
    "SERVICE_MEAN": 1.0e-3,
    "SERVICE_DIST": "exponential",
    "ERLANG_K": 2,
    "PROPAGATION": 0.0,
    "PACKETS": None,
    "PACKET_SIZE_BYTES": 1500,
    "T_QOS": 1.0e-2,
    "QUEUE_CAP": 10**7,
    "RESIDUAL_MODE": "baseline",
    "RESIDUAL_SCALE": 1.0,
    "MOMENTS": "approx",
    "MODE": "network",
    "POLICY": "TG-FSO",
    "DISCIPLINE": "two-priority",
    "LOAD": 1.0,
    "CHECK_INVARIANTS": False,
    "SCENARIO": "default",
    "POLICIES": ["TG-FSO", "ECMP-FSO", "ECMP-legacy"],
    "SWEEP_LOAD": [0.25, 0.5, 0.75, 1.0],
    "SWEEP_BFLAT": [0.2],
    "SWEEP_W": [],
    "SWEEP_T_QOS": [],
    "MILP_OBJECTIVE": "throughput",
    "MILP_CAPACITY_MODE": "pwl",
    "MILP_BREAKPOINTS": 16,
    "MILP_FIXED_INTENSITY": None,
    "MILP_INTENSITY_MODE": "exact",
    "MILP_INTENSITY_LEVELS": 8,
    "MILP_MAX_FLOWS": 6,
    "MILP_MAX_CHOICES": 10,
}

CFG_CHOICES = {
    "LAYOUT": ("uniform", "line", "matrix"),
    "WORKLOAD": ("poisson", "shuffle"),
    "SERVICE_DIST": ("exponential", "deterministic", "erlang"),
    "RESIDUAL_MODE": ("baseline", "scaled"),
    "MOMENTS": ("approx", "approx_raw", "exact"),
    "MODE": ("network", "queueing"),
    "POLICY": ("TG-FSO", "ECMP-FSO", "ECMP-legacy"),
    "DISCIPLINE": ("two-priority", "single-queue"),
    "MILP_OBJECTIVE": ("throughput", "intensity"),
    "MILP_CAPACITY_MODE": ("pwl", "fixed"),
    "MILP_INTENSITY_MODE": ("exact", "grid"),
}

def get_type_def(
        obj : Any,
        numbers_interchangeable : bool=True
    ) -> Union[Any, List[Any]]:
    """
    Generates a type definition for an object.

    Lists and tuples become ``[(tuple, list), element_type]`` where the element type is taken from the first element (the configuration only holds homogeneous sequences).
    With ``numbers_interchangeable`` floats also accept ints, since YAML writes ``1.0`` and ``1`` interchangeably in hand-written files.

    Args:
        obj (`Any`): The object to describe.
        numbers_interchangeable (`bool`, optional): Let float fields accept ints. Defaults to True.

    Returns:
        out (`Union[Any, List[Any]]`): The type definition.
    """
    if isinstance(obj, (tuple, list)):
        element = get_type_def(obj[0], numbers_interchangeable) if len(obj) > 0 else (int, float, str)
        return [(tuple, list), element]
    if isinstance(obj, bool):
        return bool
    if numbers_interchangeable and isinstance(obj, float):
        return NUMBER
    return type(obj)

CFG_TYPES = {k : get_type_def(v) for k, v in DEFAULT_CFG.items() if v is not None}
CFG_TYPES.update({
    "ETA": (str, int, float),
    "DISTANCES": (type(None), [(tuple, list), [(tuple, list), NUMBER]]),
    "E": OPTIONAL_NUMBER,
    "E_T": OPTIONAL_NUMBER,
    "MF_RATE": OPTIONAL_NUMBER,
    "CF_RATE": OPTIONAL_NUMBER,
    "PACKETS": (int, type(None)),
    "SERVICE_MEAN": OPTIONAL_NUMBER,
    "MILP_FIXED_INTENSITY": OPTIONAL_NUMBER,
    "SWEEP_W": [(tuple, list), int],
    "SWEEP_T_QOS": [(tuple, list), NUMBER],
    "QUEUE_CAP": int,
})

def check_types(
        value : Any,
        expected_type : Union[List[Any], Iterable[Any], type],
        key : str="<Not specified>",
        strict : bool=True
    ) -> bool:
    """
    Recursively check a value against a type definition.

    A type definition is either a type, a tuple of alternative definitions, or a two element list ``[container_type, element_definition]``.
    ``bool`` is never accepted where a number is expected.

    Args:
        value (`Any`): The value to check.
        expected_type (`Union[List[Any], Iterable[Any], type]`): The type definition.
        key (`str`, optional): Name used in error messages. Defaults to "\\<Not specified\\>".
        strict (`bool`, optional): If True, raise on failure, otherwise return False. Defaults to True.

    Returns:
        out (`bool`): True if the check passes.

    Raises:
        TypeError: If the value does not match and strict is True.
        ValueError: If a list type definition does not have exactly 2 elements.
    """
    try:
        if isinstance(expected_type, list):
            if len(expected_type) != 2:
                raise ValueError(f"Expected type list must have exactly 2 elements, got {len(expected_type)} for key: {key}.")
            check_types(value, expected_type[0], key, True)
            for item in value:
                check_types(item, expected_type[1], key, True)
        elif isinstance(expected_type, tuple):
            if not any(check_types(value, e, key, False) for e in expected_type):
                raise TypeError(f"Expected one of {expected_type}, got {type(value)} for key: {key}.")
        elif isinstance(expected_type, type):
            if isinstance(value, bool) and expected_type is not bool:
                raise TypeError(f"Expected {expected_type}, got {type(value)} for key: {key}.")
            if not isinstance(value, expected_type):
                raise TypeError(f"Expected {expected_type}, got {type(value)} for key: {key}.")
        elif expected_type is Any:
            pass
        else:
            raise TypeError(f"Invalid type definition {expected_type} for key: {key}.")
        return True
    except (TypeError, ValueError) as e:
        if strict:
            raise e
        return False

def check_cfg_types(
        cfg : dict,
        strict : bool = False
    ) -> bool:
    """
    Check that the config is a dictionary with correctly typed values and valid choices.

    Args:
        cfg (`dict`): The config dictionary to check.
        strict (`bool`, optional): If True, raise a KeyError on unknown keys. Defaults to False.

    Returns:
        out (`bool`): True if all checks pass, raises an error otherwise.
    """
    if not isinstance(cfg, dict):
        raise TypeError(f"Invalid config type. Expected dict, got {type(cfg)}.")
    for key in cfg:
        if key not in CFG_TYPES:
            if strict:
                raise KeyError(f"Config parameter {key} not recognized.")
            continue
        check_types(cfg[key], CFG_TYPES[key], key)
        if key in CFG_CHOICES and cfg[key] not in CFG_CHOICES[key]:
            raise ValueError(f"Invalid value {cfg[key]!r} for {key}. Expected one of {CFG_CHOICES[key]}.")
    for key in ("POLICIES",):
        for policy in cfg.get(key, []):
            if policy not in CFG_CHOICES["POLICY"]:
                raise ValueError(f"Invalid policy {policy!r} in {key}. Expected one of {CFG_CHOICES['POLICY']}.")
    return True

def parse_eta(value : Union[str, int, float, Fraction]) -> Fraction:
    """Parse the core/edge ratio, e.g. ``"1/2"`` or ``0.5``, into an exact fraction."""
    try:
        eta = Fraction(value) if not isinstance(value, float) else Fraction(value).limit_denominator(1000)
    except (ValueError, ZeroDivisionError) as e:
        raise ValueError(f"Cannot parse ETA={value!r} as a ratio.") from e
    return eta

def default_cfg(**overrides) -> dict:
    """A deep copy of the defaults with ``overrides`` applied and type checked."""
    return with_overrides(DEFAULT_CFG, **overrides)

def with_overrides(cfg : dict, **overrides) -> dict:
    """
    Copy a config and replace some of its values.

    Args:
        cfg (`dict`): The base config.
        **overrides: UPPER_CASE keys and their new values.

    Returns:
        out (`dict`): A new, type checked config.
    """
    new_cfg = copy.deepcopy(cfg)
    new_cfg.update(copy.deepcopy(overrides))
    check_cfg_types(new_cfg, strict=True)
    return new_cfg

def read_cfg(
        path : Union[str, os.PathLike],
        strict : bool=False
    ) -> dict:
    """
    Load and validate a config file. Missing keys are replaced with default values.

    Args:
        path (`Union[str, os.PathLike]`): The path to the YAML config file.
        strict (`bool`, optional): If True, raise an error if a key is not recognized. Defaults to False.

    Returns:
        out (`dict`): The config dictionary.
    """
    if not isinstance(path, (str, os.PathLike)):
        raise TypeError(f"Invalid config location. Expected str or os.PathLike, got {type(path)}.")
    path = os.fspath(path)
    if not (path.endswith(".yaml") or path.endswith(".yml")):
        raise ValueError(f"Cannot read config. Expected YAML file, got {path}.")
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file {path} not found.")
    with open(path, "r") as f:
        cfg = yaml.safe_load(f)
    # An empty file means "all defaults"
    if cfg is None:
        cfg = {}
    check_cfg_types(cfg, strict)
    for key in DEFAULT_CFG:
        if key not in cfg:
            cfg[key] = copy.deepcopy(DEFAULT_CFG[key])
    logger.debug(f"Read config {path} ({len(cfg)} keys)")
    return cfg

def write_cfg(
        cfg : dict,
        path : Union[str, os.PathLike],
        overwrite : bool=False
    ) -> Union[str, os.PathLike]:
    """
    Save a config dictionary to a YAML file, known keys first in ``CFG_PARAMS`` order.

    Args:
        cfg (`dict`): The config dictionary to save.
        path (`Union[str, os.PathLike]`): Destination YAML file.
        overwrite (`bool`, optional): If True, overwrite an existing file. Defaults to False.

    Returns:
        out (`Union[str, os.PathLike]`): The path to the saved config YAML file.
    """
    if not isinstance(path, (str, os.PathLike)):
        raise TypeError(f"Invalid config location. Expected str or os.PathLike, got {type(path)}.")
    if not (os.fspath(path).endswith(".yaml") or os.fspath(path).endswith(".yml")):
        raise ValueError(f"Cannot save config. Expected YAML file, got {path}.")
    if not overwrite and os.path.exists(path):
        raise FileExistsError(f"Config file {path} already exists.")
    check_cfg_types(cfg)
    with open(path, "w") as f:
        yaml.safe_dump(ordered_cfg(cfg), f, sort_keys=False, default_flow_style=None)
    return path

def ordered_cfg(cfg : dict) -> OrderedDict:
    """The config with known keys in ``CFG_PARAMS`` order followed by any extra keys, tuples as lists."""
    sorted_cfg = OrderedDict()
    for key in CFG_PARAMS:
        if key in cfg:
            sorted_cfg[key] = _plain(cfg[key])
    for key in cfg:
        if key not in sorted_cfg:
            sorted_cfg[key] = _plain(cfg[key])
    return sorted_cfg

def _plain(value : Any) -> Any:
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value

if __name__ == "__main__":
    logger.info(
        "\n####################################################################"
        "\n###################### fso_groom configuration #####################"
        "\n####################################################################"
        "\nConfigurable parameters:"
    )
    logger.info(
        "\n".join([f"\t- {key} ({CFG_TYPES[key]}): {CFG_DESCRIPTION[key]}" for key in CFG_PARAMS])
    )
    logger.info(
        "\nParameters are given in a YAML file passed with `--config <YML_PATH>` to any fg_* script."
        "\nAny parameters not specified will be set to default values."
    )
