import unittest

import json, os, tempfile

import pandas as pd

from fso_groom.config import default_cfg, write_cfg
from fso_groom.errors import ConfigurationError, InstabilityError, ProvisioningError
from fso_groom.experiment import (EXIT_INSTABILITY, EXIT_PROVISIONING, ExperimentSpec, cmd_analyze, cmd_compare, cmd_milp,
                                  cmd_provision, cmd_simulate, common_args, exit_code, spec_from_args)

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "..", "..", "scripts", "experiments")

def tiny_cfg(**overrides):
    base = dict(N=2, S=1, W=2, DURATION=0.01, FLOW_RATE=50.0, SWEEP_LOAD=[1.0], SCENARIO="tiny")
    base.update(overrides)
    return default_cfg(**base)

def queueing_cfg(**overrides):
    base = dict(MODE="queueing", PACKETS=50_000, SWEEP_LOAD=[0.5], SCENARIO="queueing")
    base.update(overrides)
    return default_cfg(**base)

def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()

class TestExperimentSpec(unittest.TestCase):
    def test_points(self):
        spec = ExperimentSpec.from_cfg(default_cfg(SWEEP_LOAD=[0.25, 0.5], SWEEP_BFLAT=[0.2, 0.4]))
        points = spec.points()
        self.assertEqual(len(points), 4)
        self.assertDictEqual(points[0], {"LOAD" : 0.25, "BFLAT" : 0.2, "W" : 4, "T_QOS" : 1.0e-2})
        self.assertDictEqual(points[1], {"LOAD" : 0.25, "BFLAT" : 0.4, "W" : 4, "T_QOS" : 1.0e-2})
        self.assertEqual(spec.point_cfg(points[3])["LOAD"], 0.5)
        spec = ExperimentSpec.from_cfg(default_cfg(SWEEP_W=[4, 6], SWEEP_T_QOS=[0.01, 0.02, 0.03]))
        self.assertEqual(len(spec.points()), 4 * 2 * 3)
        self.assertEqual(ExperimentSpec.from_cfg(default_cfg(SWEEP_BFLAT=[])).points(), [])

    def test_overrides(self):
        spec = ExperimentSpec.from_cfg(default_cfg(), seed=11, mode="queueing", policies=["ECMP-FSO"], jobs=2)
        self.assertEqual(spec.seed, 11)
        self.assertEqual(spec.mode, "queueing")
        self.assertListEqual(spec.policies, ["ECMP-FSO"])
        self.assertListEqual(ExperimentSpec.from_cfg(default_cfg()).policies, ["TG-FSO", "ECMP-FSO", "ECMP-legacy"])
        with self.assertRaises(ConfigurationError):
            ExperimentSpec.from_cfg(default_cfg(), policies=["OSPF"])
        with self.assertRaises(ConfigurationError):
            ExperimentSpec.from_cfg(default_cfg(), jobs=0)

    def test_shipped_scenarios(self):
        if not os.path.isdir(SCENARIO_DIR):
            self.skipTest("Scenario directory not available in this installation")
        files = sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith(".yaml"))
        self.assertGreater(len(files), 0)
        for name in files:
            spec = ExperimentSpec.from_file(os.path.join(SCENARIO_DIR, name))
            self.assertEqual(spec.scenario, name[:-len(".yaml")])
            self.assertGreater(len(spec.points()), 0, f"{name} has an empty sweep")

    def test_command_line(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = write_cfg(tiny_cfg(SEED=3), os.path.join(tmpdir, "tiny.yaml"))
            args = common_args("test").parse_args(["--config", config, "-o", tmpdir, "--seed", "7", "--policy", "ECMP-FSO", "--policy", "TG-FSO", "--mode", "queueing"])
            spec = spec_from_args(args)
        self.assertEqual(spec.seed, 7)
        self.assertEqual(spec.mode, "queueing")
        self.assertListEqual(spec.policies, ["ECMP-FSO", "TG-FSO"])
        self.assertEqual(spec.cfg["N"], 2)
        self.assertEqual(spec.out, tmpdir)
        defaults = spec_from_args(common_args("test").parse_args([]))
        self.assertEqual(defaults.cfg["N"], 12)
        self.assertEqual(defaults.out, "results")
        with self.assertRaises(SystemExit):
            common_args("test").parse_args(["--policy", "OSPF"])

class TestCommands(unittest.TestCase):
    def test_empty_sweep_writes_nothing(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            out = os.path.join(tmpdir, "empty")
            spec = ExperimentSpec.from_cfg(tiny_cfg(SWEEP_LOAD=[]), out=out)
            self.assertTrue(cmd_simulate(spec).empty)
            self.assertTrue(cmd_analyze(spec).empty)
            self.assertTrue(cmd_compare(spec, show=False).empty)
            self.assertFalse(os.path.exists(out))

    def test_provision(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            spec = ExperimentSpec.from_cfg(tiny_cfg(), out=tmpdir)
            table = cmd_provision(spec, lp_file=True)
            self.assertEqual(len(table), 4)
            for name in ("lightpaths.csv", "link_budget.csv", "topology.txt", "decisions.tsv", "model.lp", "config.yaml", "manifest.json"):
                self.assertTrue(os.path.exists(os.path.join(tmpdir, name)), f"Missing output {name}")
            with open(os.path.join(tmpdir, "manifest.json")) as f:
                manifest = json.load(f)
            self.assertEqual(manifest["seed"], 0)
            self.assertIn("lightpaths.csv", manifest["outputs"])
            self.assertEqual(len(pd.read_csv(os.path.join(tmpdir, "lightpaths.csv"))), 4)

    def test_exit_codes(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            spec = ExperimentSpec.from_cfg(tiny_cfg(W=1), out=tmpdir)
            self.assertEqual(exit_code(lambda: cmd_provision(spec)), EXIT_PROVISIONING)
            spec = ExperimentSpec.from_cfg(tiny_cfg(), out=tmpdir)
            self.assertEqual(exit_code(lambda: cmd_provision(spec)), 0)
        def unstable():
            raise InstabilityError("rho >= 1")
        def failing():
            raise ProvisioningError("no room", pair=(0, 1), link=(2, 0))
        self.assertEqual(exit_code(unstable), EXIT_INSTABILITY)
        self.assertEqual(exit_code(failing), EXIT_PROVISIONING)
        with self.assertRaises(KeyError):
            exit_code(lambda: {}["missing"])

    def test_simulation_reruns_are_identical(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            outs = [os.path.join(tmpdir, name) for name in ("a", "b")]
            for out in outs:
                cmd_simulate(ExperimentSpec.from_cfg(queueing_cfg(PACKETS=10_000, SWEEP_LOAD=[0.3, 0.6]), out=out))
            for name in ("queueing_metrics.csv", "config.yaml", "manifest.json"):
                self.assertEqual(read_bytes(os.path.join(outs[0], name)), read_bytes(os.path.join(outs[1], name)), f"{name} differs between reruns")
            other = os.path.join(tmpdir, "c")
            cmd_simulate(ExperimentSpec.from_cfg(queueing_cfg(PACKETS=10_000, SWEEP_LOAD=[0.3, 0.6]), out=other, seed=1))
            self.assertNotEqual(read_bytes(os.path.join(outs[0], "queueing_metrics.csv")), read_bytes(os.path.join(other, "queueing_metrics.csv")))

    def test_parallel_sweep_matches_serial(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            serial, parallel = os.path.join(tmpdir, "serial"), os.path.join(tmpdir, "parallel")
            cmd_simulate(ExperimentSpec.from_cfg(queueing_cfg(PACKETS=5_000, SWEEP_LOAD=[0.2, 0.4, 0.6]), out=serial))
            cmd_simulate(ExperimentSpec.from_cfg(queueing_cfg(PACKETS=5_000, SWEEP_LOAD=[0.2, 0.4, 0.6]), out=parallel, jobs=2))
            self.assertEqual(read_bytes(os.path.join(serial, "queueing_metrics.csv")), read_bytes(os.path.join(parallel, "queueing_metrics.csv")))

    def test_analysis_against_simulation(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            spec = ExperimentSpec.from_cfg(queueing_cfg(), out=tmpdir)
            metrics = cmd_simulate(spec)
            self.assertTrue((metrics["status"] == "ok").all())
            self.assertTrue((metrics["violations"] == 0).all())
            table = cmd_analyze(spec)
            self.assertTrue(os.path.exists(os.path.join(tmpdir, "delay_report.csv")))
        row = table.iloc[0]
        self.assertTrue(row["sim_available"])
        self.assertLess(row["W_h_rel_error"], 0.2)
        self.assertLess(row["W_l_rel_error"], 0.25)
        self.assertLessEqual(row["p_blocking"], 1.0)

    def test_unstable_points_are_reported(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            table = cmd_analyze(ExperimentSpec.from_cfg(queueing_cfg(SWEEP_LOAD=[0.5, 1.5]), out=tmpdir))
        self.assertListEqual(list(table["status"]), ["ok", "unstable"])
        self.assertFalse(table.iloc[0]["sim_available"])

    def test_network_sweep(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            spec = ExperimentSpec.from_cfg(tiny_cfg(), out=tmpdir, policies=["TG-FSO", "ECMP-FSO"])
            table = cmd_simulate(spec)
            self.assertTrue(os.path.exists(os.path.join(tmpdir, "network_metrics.csv")))
            compared = cmd_compare(spec, show=False)
        self.assertSetEqual(set(table["policy"]), {"TG-FSO", "ECMP-FSO"})
        self.assertTrue((table["status"] == "ok").all())
        self.assertSetEqual(set(compared["policy"]), {"TG-FSO", "ECMP-FSO"})

    def test_milp(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            spec = ExperimentSpec.from_cfg(tiny_cfg(MILP_MAX_FLOWS=3, MILP_BREAKPOINTS=4), out=tmpdir)
            table = cmd_milp(spec, draws=2)
            for name in ("model.lp", "model.json", "milp.csv", "manifest.json"):
                self.assertTrue(os.path.exists(os.path.join(tmpdir, name)), f"Missing output {name}")
        self.assertEqual(len(table), 2)
        self.assertTrue((table["optimum_check"] == "PASS").all())
        self.assertTrue((table["heuristic_check"] == "PASS").all())
        self.assertTrue((table["heuristic"] <= table["optimum"] * (1 + 1e-12)).all())
        with self.assertRaises(ConfigurationError):
            cmd_milp(ExperimentSpec.from_cfg(default_cfg()))

if __name__ == '__main__':
    unittest.main()
