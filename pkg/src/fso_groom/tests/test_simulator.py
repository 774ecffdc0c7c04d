import unittest

import os

import numpy as np
import pandas as pd

from fso_groom.config import default_cfg
from fso_groom.errors import ConfigurationError, InstabilityError
from fso_groom.grooming import Flow, FlowClass
from fso_groom.queueing import PathModel, ServiceModel, TrafficMix, blocking_probability, path_moments, waiting_time_high, waiting_time_low
from fso_groom.simulator import (EventKind, EventQueue, NetworkSimulation, SimConfig, SwitchQueues, build_network, compare_disciplines,
                                 compare_policies, count_violations, expected_demand, generate_packets, generate_workload,
                                 mc_blocking, rng_streams, run, simulate_switch, simulate_tandem)
from fso_groom.topology import ResourceState

SLOW = bool(os.environ.get("FSO_GROOM_SLOW_TESTS"))
MEAN = 1.0e-3

def network_cfg(**overrides):
    base = dict(N=4, S=2, W=4, DURATION=0.01, FLOW_RATE=200.0)
    base.update(overrides)
    return SimConfig.from_cfg(default_cfg(**base))

def queueing_cfg(**overrides):
    base = dict(MODE="queueing", PACKETS=50_000, CHECK_INVARIANTS=True)
    base.update(overrides)
    return SimConfig.from_cfg(default_cfg(**base))

class TestEventQueue(unittest.TestCase):
    def test_order(self):
        q = EventQueue()
        q.push(1.0, EventKind.TICK, "tick")
        q.push(1.0, EventKind.ARRIVAL, "a1")
        q.push(1.0, EventKind.ARRIVAL, "a2")
        q.push(1.0, EventKind.COMPLETE, "done")
        q.push(0.5, EventKind.TICK, "early")
        self.assertListEqual([q.pop()[2] for _ in range(len(q))], ["early", "done", "a1", "a2", "tick"])
        self.assertEqual(q.now, 1.0)
        with self.assertRaises(ValueError):
            q.push(0.9, EventKind.TICK)

    def test_streams(self):
        a, b = rng_streams(7), rng_streams(7)
        for name in a:
            self.assertEqual(a[name].random(), b[name].random())
        c = rng_streams(7)
        self.assertNotEqual(c["arrivals"].random(), c["classes"].random())

class TestSimConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            network_cfg(CLASS_SHARES=[0.5, 0.5, 0.5])
        with self.assertRaises(ConfigurationError):
            network_cfg(DURATION=0.0)
        cfg = network_cfg()
        self.assertEqual(cfg.mf_size, 8.0e5)
        self.assertEqual(cfg.deadlines[FlowClass.EF], cfg.tau_l)

    def test_expected_demand(self):
        cfg = network_cfg(CLASS_SHARES=[0.1, 0.7, 0.2])
        demand = expected_demand(cfg, 4)
        self.assertAlmostEqual(demand[FlowClass.MF], 200.0 * 0.7 * 8.0e5)
        self.assertAlmostEqual(demand[FlowClass.CF], 200.0 * 0.1 * 8.0e5)
        shuffle = expected_demand(network_cfg(WORKLOAD="shuffle"), 4)
        self.assertAlmostEqual(shuffle[FlowClass.MF], 4 * 8.0e5 / 1.0e-3)

class TestSwitch(unittest.TestCase):
    def test_priority_order(self):
        arrivals = np.array([0.0, 0.5, 0.6])
        service = np.ones(3)
        high = np.array([False, False, True])
        prio = simulate_switch(arrivals, high, service, check_invariants=True)
        self.assertListEqual(prio.start.tolist(), [0.0, 2.0, 1.0])
        self.assertAlmostEqual(prio.area_high, 0.4)
        self.assertAlmostEqual(prio.area_low, 1.5)
        self.assertEqual(prio.end_time, 3.0)
        self.assertEqual(prio.violations, 0)
        fifo = simulate_switch(arrivals, high, service, "single-queue")
        self.assertListEqual(fifo.start.tolist(), [0.0, 1.0, 2.0])
        with self.assertRaises(ConfigurationError):
            simulate_switch(arrivals, high, service, "round-robin")

    def test_switch_queues(self):
        queues = SwitchQueues()
        queues.push(0, False)
        queues.advance(1.0)
        queues.push(1, True)
        queues.advance(3.0)
        self.assertEqual(len(queues), 2)
        self.assertEqual(queues.pop(), 1)
        self.assertEqual(queues.pop(), 0)
        self.assertFalse(queues)
        self.assertAlmostEqual(queues.area_high, 2.0)
        self.assertAlmostEqual(queues.area_low, 3.0)
        fifo = SwitchQueues("single-queue")
        fifo.push(0, False)
        fifo.push(1, True)
        self.assertListEqual(list(fifo.high), [0, 1])
        with self.assertRaises(ConfigurationError):
            SwitchQueues("round-robin")

    def test_idle_periods(self):
        trace = simulate_switch(np.array([0.0, 5.0]), np.array([True, True]), np.array([1.0, 1.0]))
        self.assertListEqual(trace.start.tolist(), [0.0, 5.0])
        self.assertEqual(trace.area_high, 0.0)
        empty = simulate_switch(np.empty(0), np.empty(0, dtype=bool), np.empty(0))
        self.assertEqual(empty.end_time, 0.0)

    def test_violations_are_detected(self):
        arrivals = np.array([0.0, 0.5, 0.6])
        high = np.array([False, False, True])
        start = np.array([0.0, 1.0, 2.0])
        depart = start + 1.0
        self.assertGreater(count_violations(arrivals, high, start, depart), 0)
        self.assertGreater(count_violations(arrivals, np.ones(3, dtype=bool), np.array([0.0, 1.5, 2.5]), np.array([1.0, 2.5, 3.5])), 0)

    def test_queue_cap(self):
        arrivals = np.linspace(0.0, 1.0, 100)
        with self.assertRaises(InstabilityError):
            simulate_switch(arrivals, np.ones(100, dtype=bool), np.ones(100), queue_cap=10)

    def test_random_trace_has_no_violations(self):
        cfg = queueing_cfg(LOAD=0.9, PACKETS=20_000)
        streams = rng_streams(3)
        packets = generate_packets(cfg.mix, cfg.packets, 0.0, streams)
        service = cfg.service.sample(streams["service"], len(packets.arrivals))
        trace = simulate_switch(packets.arrivals, packets.high, service, check_invariants=True)
        self.assertEqual(trace.violations, 0)
        waits = trace.start - packets.arrivals
        self.assertTrue(np.all(waits >= 0))
        self.assertAlmostEqual((trace.area_high + trace.area_low) / waits.sum(), 1.0, places=6)

class TestQueueingMode(unittest.TestCase):
    def test_deterministic(self):
        cfg = queueing_cfg(PACKETS=5_000, HOPS=2)
        a, b = simulate_tandem(cfg), simulate_tandem(cfg)
        pd.testing.assert_frame_equal(a.hops, b.hops)
        pd.testing.assert_frame_equal(a.classes, b.classes)
        self.assertTrue(np.array_equal(a.delays, b.delays))

    def test_littles_law_and_invariants(self):
        cfg = queueing_cfg(LOAD=0.7, HOPS=3, PROPAGATION=1.0e-5)
        metrics = simulate_tandem(cfg)
        self.assertEqual(metrics.violations, 0)
        self.assertEqual(len(metrics.hops), 6)
        for row in metrics.hops.itertuples():
            if row.packets:
                self.assertAlmostEqual(row.little_L / row.little_lambda_W, 1.0, delta=0.03)
        self.assertTrue(np.all(metrics.delays >= 3 * 1.0e-5))
        self.assertEqual(len(metrics.delays), cfg.packets)

    def test_matches_priority_formulas(self):
        packets = 1_000_000 if SLOW else 200_000
        tolerance = 0.05 if SLOW else 0.15
        for load in (0.25, 0.5, 0.7):
            cfg = queueing_cfg(LOAD=load, PACKETS=packets, CLASS_SHARES=[0.0, 0.5, 0.5], BFLAT=0.5, CHECK_INVARIANTS=False)
            hops = simulate_tandem(cfg).hops.set_index("queue")
            w_h, _ = waiting_time_high(cfg.mix, cfg.service)
            w_l, _ = waiting_time_low(cfg.mix, cfg.service)
            self.assertAlmostEqual(hops.loc["high", "mean_wait"] / w_h, 1.0, delta=tolerance, msg=f"high priority at load {load}")
            self.assertAlmostEqual(hops.loc["low", "mean_wait"] / w_l, 1.0, delta=tolerance, msg=f"low priority at load {load}")

    def test_two_priority_helps_mission_critical_traffic(self):
        cfg = queueing_cfg(LOAD=0.75, PACKETS=100_000, CLASS_SHARES=[0.0, 0.0, 1.0], BFLAT=0.95, CHECK_INVARIANTS=False)
        table = compare_disciplines(cfg).set_index("class")
        self.assertGreaterEqual(table.loc["CF", "ratio"], 1.5)
        self.assertLess(table.loc["EF", "two_priority_delay"] / table.loc["EF", "single_queue_delay"], 1.1)
        self.assertEqual(table.loc["MF", "packets"], 0)

    def test_monte_carlo_blocking(self):
        svc = ServiceModel.exponential(MEAN)
        if SLOW:
            samples, tolerance = 1_000_000, 0.02
            points = [(H, bflat) for H in (1, 3, 5) for bflat in (0.0, 0.2, 1.0)]
        else:
            samples, tolerance = 20_000, 0.04
            points = [(1, 0.0), (3, 0.2), (5, 1.0), (1, 1.0), (5, 0.0)]
        for H, bflat in points:
            mix = TrafficMix.from_load(0.5, MEAN, [0.0, 0.8, 0.2], bflat)
            # 1.3 sigma past the mean of the dominant class, where the normal tail tracks the sojourn tail
            cls = "l" if bflat == 1.0 else "h"
            mu, sigma = path_moments(PathModel.homogeneous(H, mix, svc, 1.0), moments="exact")[cls]
            path = PathModel.homogeneous(H, mix, svc, mu + 1.3 * sigma)
            analytic = blocking_probability(path, moments="exact")
            simulated = mc_blocking(path, samples, seed=3)
            self.assertGreater(analytic, 0.0)
            self.assertAlmostEqual(analytic, simulated, delta=tolerance, msg=f"H={H}, bflat={bflat}")

    def test_run_dispatches_on_mode(self):
        metrics = run(queueing_cfg(PACKETS=1_000))
        self.assertEqual(len(metrics.delays), 1_000)
        self.assertGreaterEqual(metrics.blocking_fraction(0.2), 0.0)

class TestNetworkMode(unittest.TestCase):
    def test_workload(self):
        cfg = network_cfg()
        topo = build_network(cfg)
        flows = generate_workload(cfg, topo)
        self.assertListEqual([f.id for f in flows], list(range(len(flows))))
        self.assertTrue(all(a.arrival <= b.arrival for a, b in zip(flows, flows[1:])))
        self.assertTrue(all(topo.rack_of(f.src) != topo.rack_of(f.dst) for f in flows))
        again = generate_workload(cfg, topo)
        self.assertListEqual(flows, again)

    def test_deterministic_and_complete(self):
        cfg = network_cfg(CHECK_INVARIANTS=True)
        a, b = run(cfg), run(cfg)
        pd.testing.assert_frame_equal(a.flows, b.flows)
        self.assertFalse(a.flows["completion"].isna().any())
        self.assertTrue((a.flows["fct"] >= a.flows["network_fct"]).all())
        self.assertGreaterEqual(len(a.occupancy), 10)
        self.assertEqual(len(a.lightpaths), 2 * 4 * 3)

    def test_policies(self):
        summary = compare_policies(network_cfg())
        self.assertEqual(len(summary), 9)
        self.assertListEqual(sorted(summary["policy"].unique()), ["ECMP-FSO", "ECMP-legacy", "TG-FSO"])
        legacy = summary[summary["policy"] == "ECMP-legacy"]
        self.assertTrue(legacy["mean_total_intensity"].isna().all())
        with self.assertRaises(ConfigurationError):
            NetworkSimulation(SimConfig(policy="OSPF"), build_network(network_cfg()), [])

    def test_mice_meet_deadline_on_5gbps_wavelengths(self):
        cfg = network_cfg(WORKLOAD="shuffle", MF_RATE=5.0e9, DURATION=0.02, FLOW_RATE=10.0)
        metrics = run(cfg)
        mice = metrics.flows[metrics.flows["class"] == "MF"]
        self.assertGreater(len(mice), 0)
        self.assertTrue(mice["met_deadline"].all())
        self.assertTrue((mice["network_fct"] < cfg.tau_h).all())

    def test_express_lightpaths_beat_fixed_channels(self):
        cfg = network_cfg(S=1, CLASS_SHARES=[0.0, 0.0, 1.0], TAU_L=0.1, FLOW_RATE=2.0, DURATION=0.5)
        summary = compare_policies(cfg, ("TG-FSO", "ECMP-FSO")).set_index(["policy", "class"])
        self.assertGreater(summary.loc[("TG-FSO", "EF"), "completed"], 0)
        self.assertGreater(summary.loc[("TG-FSO", "EF"), "throughput_bps"], summary.loc[("ECMP-FSO", "EF"), "throughput_bps"])
        self.assertLess(summary.loc[("ECMP-FSO", "EF"), "throughput_bps"], 2.5e9)

    def test_blocked_elephant_is_retried_and_reported(self):
        cfg = network_cfg(N=2, S=1, W=2, CLASS_SHARES=[0.0, 0.0, 1.0], DURATION=0.005)
        topo = build_network(cfg)
        flow = Flow(0, topo.servers_in_rack(0)[0], topo.servers_in_rack(1)[0], FlowClass.EF, 8.0e6, 0.0, cfg.tau_l)

        def saturated():
            state = ResourceState.from_cfg(topo, cfg.raw)
            for link in topo.links:
                for w in range(1, topo.W + 1):
                    state.reserve(link, w, 0.0)
            return state

        metrics = NetworkSimulation(cfg, topo, [flow], state=saturated(), lightpaths=[]).run()
        ef = metrics.summary().set_index("class").loc["EF"]
        self.assertEqual(ef["never_started"], 1)
        self.assertEqual(ef["completed"], 0)
        self.assertEqual(metrics.ef_blocked, 1)
        self.assertTrue(np.isnan(metrics.flows.loc[0, "start"]))

        state = saturated()
        sim = NetworkSimulation(cfg, topo, [flow], state=state, lightpaths=[])
        sim._record(flow)
        sim._on_arrival(0.0, flow)
        self.assertListEqual(sim.waiting, [flow])
        for link in topo.links:
            for w in range(1, topo.W + 1):
                state.release(link, w)
        sim._on_epoch(cfg.window)
        self.assertListEqual(sim.waiting, [])
        self.assertEqual(sim.ef_active, 1)
        self.assertEqual(sim.records[0]["start"], cfg.window)

if __name__ == '__main__':
    unittest.main()
