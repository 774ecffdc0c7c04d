"""
Experiment commands: provisioning tables, simulation sweeps, analytic reports, MILP export and policy comparison.

Every command writes its tables as CSV into the output directory together with a ``manifest.json``. Sweep points are independent and run in a bounded worker pool; results are collected in sweep order, so reruns with the same seed give byte-identical files.
"""
import argparse
import itertools
import math
import os
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from fso_groom import logger, set_log_level
from fso_groom.channel import link_budget_table
from fso_groom.config import CFG_CHOICES, default_cfg, read_cfg, with_overrides, write_cfg
from fso_groom.errors import ConfigurationError, InstabilityError, ProvisioningError
from fso_groom.grooming import DecisionLog, FlowClass, lightpath_table, provision_r2r
from fso_groom.milp import (brute_force_optimum, build_instance, candidate_from_policy, check_solution, dump_instance,
                            export_lp, random_flows)
from fso_groom.queueing import DelayReport, convention_from_cfg, delay_report
from fso_groom.report import format_table, write_csv, write_manifest
from fso_groom.simulator import (SimConfig, build_network, compare_disciplines, compare_policies, expected_demand, rng_streams,
                                 run)
from fso_groom.topology import ResourceState, intensity_budget

@dataclass
class ExperimentSpec:
    """
    A scenario: base config, policies and sweep axes.

    ``SWEEP_LOAD`` and ``SWEEP_BFLAT`` are always swept (an empty axis means an empty sweep); ``SWEEP_W`` and ``SWEEP_T_QOS`` fall back to the base ``W`` and ``T_QOS`` when empty.
    """
    scenario : str
    cfg : Dict[str, Any]
    policies : List[str]
    sweep_load : List[float]
    sweep_bflat : List[float]
    sweep_w : List[int] = field(default_factory=list)
    sweep_t_qos : List[float] = field(default_factory=list)
    out : str = "results"
    jobs : int = 1

    def __post_init__(self):
        for policy in self.policies:
            if policy not in CFG_CHOICES["POLICY"]:
                raise ConfigurationError(f"Unknown policy {policy!r}, expected one of {CFG_CHOICES['POLICY']}.")
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be at least 1, got {self.jobs}.")

    @property
    def seed(self) -> int:
        return self.cfg["SEED"]

    @property
    def mode(self) -> str:
        return self.cfg["MODE"]

    @classmethod
    def from_cfg(
            cls,
            cfg : dict,
            out : str="results",
            seed : Optional[int]=None,
            jobs : int=1,
            policies : Optional[Sequence[str]]=None,
            mode : Optional[str]=None
        ) -> "ExperimentSpec":
        overrides = {}
        if seed is not None:
            overrides["SEED"] = int(seed)
        if mode is not None:
            overrides["MODE"] = mode
        cfg = with_overrides(cfg, **overrides)
        return cls(
            scenario=cfg["SCENARIO"],
            cfg=cfg,
            policies=list(policies) if policies else list(cfg["POLICIES"]),
            sweep_load=[float(v) for v in cfg["SWEEP_LOAD"]],
            sweep_bflat=[float(v) for v in cfg["SWEEP_BFLAT"]],
            sweep_w=[int(v) for v in cfg["SWEEP_W"]],
            sweep_t_qos=[float(v) for v in cfg["SWEEP_T_QOS"]],
            out=out,
            jobs=jobs,
        )

    @classmethod
    def from_file(cls, path : Optional[str], **kwargs) -> "ExperimentSpec":
        cfg = read_cfg(path) if path is not None else default_cfg()
        return cls.from_cfg(cfg, **kwargs)

    def points(self) -> List[Dict[str, Any]]:
        """Config overrides of every sweep point, in sweep order."""
        axes = (
            self.sweep_load,
            self.sweep_bflat,
            self.sweep_w or [self.cfg["W"]],
            self.sweep_t_qos or [float(self.cfg["T_QOS"])],
        )
        return [
            {"LOAD" : load, "BFLAT" : bflat, "W" : w, "T_QOS" : t_qos}
            for load, bflat, w, t_qos in itertools.product(*axes)
        ]

    def point_cfg(self, overrides : Dict[str, Any]) -> dict:
        return with_overrides(self.cfg, **overrides)

    def path(self, name : str) -> str:
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

def _point_columns(index : int, overrides : Dict[str, Any]) -> Dict[str, Any]:
    return {"point" : index, "load" : overrides["LOAD"], "bflat" : overrides["BFLAT"], "W" : overrides["W"], "t_qos" : overrides["T_QOS"]}

def _map(fn : Callable, tasks : Sequence, jobs : int, desc : str) -> List:
    if jobs > 1 and len(tasks) > 1:
        with Pool(min(jobs, len(tasks))) as pool:
            return list(tqdm(pool.imap(fn, tasks), total=len(tasks), desc=desc, leave=False))
    return [fn(t) for t in tqdm(tasks, desc=desc, leave=False)]

def _finish(spec : ExperimentSpec, outputs : List[str]):
    write_cfg(spec.cfg, spec.path("config.yaml"), overwrite=True)
    write_manifest(spec.out, spec.cfg, spec.seed, [os.path.basename(p) for p in outputs] + ["config.yaml"])

#### Provisioning ####

def cmd_provision(spec : ExperimentSpec, lp_file : bool=False) -> pd.DataFrame:
    """
    Provision the R2R lightpaths of the base config and write the lightpath, link budget and topology tables.

    Raises:
        ProvisioningError: With the failing pair and link, if provisioning fails.
    """
    sim = SimConfig.from_cfg(spec.cfg)
    topo = build_network(sim)
    E, E_T = intensity_budget(topo, spec.cfg)
    state = ResourceState(topo, E, E_T)
    log = DecisionLog()
    lightpaths = provision_r2r(
        topo, state, expected_demand(sim, topo.cfg.N), sim.tau_h, sim.window,
        {FlowClass.MF : sim.mf_rate, FlowClass.CF : sim.cf_rate}, log
    )
    state.check_invariants()
    logger.info(f"Provisioned {len(lightpaths)} R2R lightpaths, total intensity {state.total_intensity():.6g}")
    table = lightpath_table(topo, lightpaths)
    outputs = [
        write_csv(table, spec.path("lightpaths.csv")),
        write_csv(link_budget_table(topo, E), spec.path("link_budget.csv")),
        topo.write_edge_list(spec.path("topology.txt")),
        log.write(spec.path("decisions.tsv")),
    ]
    if lp_file and len(topo.servers) > 16:
        logger.warning(f"Skipping the LP export: {len(topo.servers)} servers are too many for the exact model")
    elif lp_file:
        flows = {}
        for lp in lightpaths:
            if lp.cls is FlowClass.MF:
                s, d = topo.servers_in_rack(lp.racks[0])[0], topo.servers_in_rack(lp.racks[1])[0]
                flows[(s, d)] = [lp.capacity]
        inst = build_instance(topo, flows, E, E_T, spec.cfg["MILP_OBJECTIVE"], spec.cfg["MILP_CAPACITY_MODE"], spec.cfg["MILP_BREAKPOINTS"], spec.cfg["MILP_FIXED_INTENSITY"])
        outputs.append(export_lp(inst, spec.path("model.lp")))
    _finish(spec, outputs)
    return table

#### Simulation ####

def _simulate_point(task) -> pd.DataFrame:
    index, cfg, overrides, policy = task
    columns = _point_columns(index, overrides)
    sim = SimConfig.from_cfg(cfg)
    try:
        if sim.mode == "queueing":
            result = run(sim)
            table = result.classes.assign(discipline=sim.discipline, violations=result.violations)
        else:
            table = run(replace(sim, policy=policy)).summary()
    except InstabilityError as e:
        logger.warning(f"Sweep point {index} ({policy}) is unstable: {e}")
        return pd.DataFrame([{**columns, "policy" : policy, "status" : "unstable"}])
    table.insert(0, "status", "ok")
    for k, v in reversed(list(columns.items())):
        table.insert(0, k, v)
    if "policy" not in table.columns:
        table.insert(len(columns), "policy", policy)
    return table

def cmd_simulate(spec : ExperimentSpec) -> pd.DataFrame:
    """
    Run the simulation at every sweep point (and, in network mode, for every policy).

    An unstable point yields a row with ``status == "unstable"`` and the sweep continues. An empty sweep writes nothing.
    """
    points = spec.points()
    if not points:
        logger.info("Empty sweep, nothing to simulate")
        return pd.DataFrame()
    policies = spec.policies if spec.mode == "network" else [spec.cfg["POLICY"]]
    tasks = [(k, spec.point_cfg(p), p, policy) for k, p in enumerate(points) for policy in policies]
    table = pd.concat(_map(_simulate_point, tasks, spec.jobs, f"Simulating {spec.scenario}"), ignore_index=True)
    path = write_csv(table, spec.path(f"{spec.mode}_metrics.csv"))
    _finish(spec, [path])
    return table

#### Analysis ####

def _analyze_point(cfg : dict, bflat : float) -> DelayReport:
    return delay_report(SimConfig.from_cfg(cfg).path_model(), bflat, **convention_from_cfg(cfg))

def _relative(a : float, b : float) -> float:
    return abs(a - b) / abs(b) if b else (0.0 if a == b else math.inf)

def cmd_analyze(spec : ExperimentSpec, metrics : Optional[pd.DataFrame]=None) -> pd.DataFrame:
    """
    Analytic delay report at every sweep point, next to the simulated values when queueing-mode metrics are available.

    ``metrics`` defaults to ``queueing_metrics.csv`` in the output directory. Points without simulated data are kept as analytic-only rows.
    """
    if metrics is None and os.path.exists(os.path.join(spec.out, "queueing_metrics.csv")):
        metrics = pd.read_csv(os.path.join(spec.out, "queueing_metrics.csv"))
    points = spec.points()
    if not points:
        logger.info("Empty sweep, nothing to analyze")
        return pd.DataFrame()
    hop_rows, rows = [], []
    for k, overrides in enumerate(tqdm(points, desc="Analyzing", leave=False)):
        columns = _point_columns(k, overrides)
        cfg = spec.point_cfg(overrides)
        try:
            report = _analyze_point(cfg, overrides["BFLAT"])
        except InstabilityError as e:
            logger.warning(f"Sweep point {k} is unstable: {e}")
            rows.append({**columns, "status" : "unstable"})
            continue
        hop_rows += report.to_rows(**columns)
        row = {
            **columns, "status" : "ok", "hops" : len(report.W_h),
            "W_h" : float(sum(report.W_h)), "W_l" : float(sum(report.W_l)),
            "mu_h" : report.mu_h, "mu_l" : report.mu_l,
            "h_star" : report.h_star, "h_taylor" : report.h_taylor, "p_blocking" : report.p_blocking,
            "sim_available" : False,
        }
        sim = metrics[(metrics["point"] == k) & (metrics["status"] == "ok")] if metrics is not None and "point" in metrics else None
        if sim is not None and {"high", "low"} <= set(sim["class"]):
            by_class = sim.set_index("class")
            high, low = by_class.loc["high"], by_class.loc["low"]
            w_l_sim = float(low["mean_wait"]) if low["packets"] > 0 else float(high["mean_wait"])
            late_l = float(low["late_fraction"]) if low["packets"] > 0 else float(high["late_fraction"])
            p_sim = (1 - overrides["BFLAT"]) * float(high["late_fraction"]) + overrides["BFLAT"] * late_l
            row.update({
                "sim_available" : True,
                "W_h_sim" : float(high["mean_wait"]), "W_l_sim" : w_l_sim, "p_blocking_sim" : p_sim,
                "W_h_rel_error" : _relative(row["W_h"], float(high["mean_wait"])),
                "W_l_rel_error" : _relative(row["W_l"], w_l_sim),
                "p_blocking_abs_error" : abs(row["p_blocking"] - p_sim),
            })
        else:
            logger.warning(f"No simulated data for sweep point {k}, reporting analytic values only")
        rows.append(row)
    table = pd.DataFrame(rows)
    outputs = [write_csv(table, spec.path("analysis.csv")), write_csv(pd.DataFrame(hop_rows), spec.path("delay_report.csv"))]
    _finish(spec, outputs)
    return table

#### MILP ####

def cmd_milp(spec : ExperimentSpec, brute_force : bool=True, heuristic : bool=True, draws : int=1) -> pd.DataFrame:
    """
    Build the MILP of a tiny instance, export it and optionally compare the exhaustive optimum with the heuristic.

    Each of ``draws`` random demand draws (seeded from ``SEED``) gives one row; the LP and JSON files hold the first draw.
    """
    cfg = spec.cfg
    topo = build_network(SimConfig.from_cfg(cfg))
    if len(topo.servers) > 16:
        raise ConfigurationError(f"The MILP is meant for tiny instances; {len(topo.servers)} servers give too many server pairs.")
    E, E_T = intensity_budget(topo, cfg)
    rng = rng_streams(cfg["SEED"], ("milp",))["milp"]
    rows, outputs = [], []
    for draw in range(draws):
        flows = random_flows(topo, cfg["MILP_MAX_FLOWS"], rng, float(cfg["LINK_RATE"]) / topo.W)
        inst = build_instance(topo, flows, E, E_T, cfg["MILP_OBJECTIVE"], cfg["MILP_CAPACITY_MODE"], cfg["MILP_BREAKPOINTS"], cfg["MILP_FIXED_INTENSITY"])
        if draw == 0:
            outputs += [export_lp(inst, spec.path("model.lp")), dump_instance(inst, spec.path("model.json"))]
        row = {"draw" : draw, "flows" : len(flows), "variables" : len(inst.variables), "constraints" : len(inst.constraints)}
        if brute_force:
            best = brute_force_optimum(inst, cfg["MILP_MAX_FLOWS"], cfg["MILP_MAX_CHOICES"], cfg["MILP_INTENSITY_MODE"], cfg["MILP_INTENSITY_LEVELS"], spec.jobs)
            row["optimum"] = best.objective if best.objective is not None else np.nan
            row["optimum_check"] = str(check_solution(inst, best.candidate)) if best.candidate is not None else "infeasible"
        if heuristic and topo.cfg.S == 1:
            cand = candidate_from_policy(inst, float(cfg["TAU_H"]))
            row["heuristic"] = cand.objective
            row["heuristic_check"] = str(check_solution(inst, cand))
            if brute_force and best.objective:
                row["gap"] = (best.objective - cand.objective) / best.objective if inst.sense == "max" else (cand.objective - best.objective) / best.objective
        rows.append(row)
    table = pd.DataFrame(rows)
    if "gap" in table:
        logger.info(f"Mean optimality gap of the heuristic over {len(table)} draws: {table['gap'].mean():.4g}")
    outputs.append(write_csv(table, spec.path("milp.csv")))
    _finish(spec, outputs)
    return table

#### Comparison ####

def _compare_point(task) -> pd.DataFrame:
    index, cfg, overrides, policies = task
    sim = SimConfig.from_cfg(cfg)
    columns = _point_columns(index, overrides)
    try:
        table = compare_disciplines(sim) if sim.mode == "queueing" else compare_policies(sim, policies)
    except InstabilityError as e:
        logger.warning(f"Sweep point {index} is unstable: {e}")
        return pd.DataFrame([{**columns, "status" : "unstable"}])
    table.insert(0, "status", "ok")
    for k, v in reversed(list(columns.items())):
        table.insert(0, k, v)
    return table

def cmd_compare(spec : ExperimentSpec, show : bool=True) -> pd.DataFrame:
    """
    Policy comparison per sweep point in network mode (TG-FSO against the ECMP baselines on one workload), discipline comparison in queueing mode.
    """
    points = spec.points()
    if not points:
        logger.info("Empty sweep, nothing to compare")
        return pd.DataFrame()
    tasks = [(k, spec.point_cfg(p), p, spec.policies) for k, p in enumerate(points)]
    table = pd.concat(_map(_compare_point, tasks, spec.jobs, f"Comparing {spec.scenario}"), ignore_index=True)
    path = write_csv(table, spec.path("compare.csv"))
    _finish(spec, [path])
    if show:
        print(format_table(table))
    return table

#### Command line ####

EXIT_PROVISIONING = 2
EXIT_INSTABILITY = 3

def common_args(description : str) -> argparse.ArgumentParser:
    """The argument vocabulary shared by every ``fg_*`` script."""
    args_parse = argparse.ArgumentParser(description=description, formatter_class=argparse.RawTextHelpFormatter)
    args_parse.add_argument("--config", type=str, default=None,
                            help="The YAML config file. Missing keys take their default values.")
    args_parse.add_argument("-o", "--out", type=str, default="results",
                            help="The result directory. Default is 'results'.")
    args_parse.add_argument("--seed", type=int, default=None,
                            help="Master seed, overriding SEED in the config.")
    args_parse.add_argument("-j", "--jobs", type=int, default=1,
                            help="Worker processes for sweep points. Default is 1.")
    args_parse.add_argument("--policy", type=str, action="append", dest="policies", default=None, choices=CFG_CHOICES["POLICY"],
                            help="Policy to run (repeatable). Default is POLICIES from the config.")
    args_parse.add_argument("--mode", type=str, default=None, choices=CFG_CHOICES["MODE"],
                            help="Simulation mode, overriding MODE in the config.")
    args_parse.add_argument("-v", "--verbose", action="store_true", help="Verbose mode.")
    return args_parse

def spec_from_args(args : argparse.Namespace) -> ExperimentSpec:
    if args.verbose:
        set_log_level("DEBUG")
    return ExperimentSpec.from_file(args.config, out=args.out, seed=args.seed, jobs=args.jobs, policies=args.policies, mode=args.mode)

def exit_code(command : Callable[[], Any]) -> int:
    """Run a command and map domain failures to exit codes: 2 for provisioning, 3 for instability."""
    try:
        command()
    except ProvisioningError as e:
        logger.error(f"Provisioning failed (pair={e.pair}, link={e.link}): {e}")
        return EXIT_PROVISIONING
    except InstabilityError as e:
        logger.error(f"Unstable configuration: {e}")
        return EXIT_INSTABILITY
    except Exception as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise
    return 0
