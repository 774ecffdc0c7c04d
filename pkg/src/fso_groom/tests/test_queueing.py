import unittest

import math

import numpy as np

from fso_groom.config import default_cfg
from fso_groom.errors import ConfigurationError, InstabilityError
from fso_groom.queueing import (Hop, PathModel, ServiceModel, TrafficMix, blocking_probability, convention_from_cfg,
                                delay_report, hop_delay, max_hop_count, path_moments, residual_moments, waiting_time_high,
                                waiting_time_low, waiting_variance)

MEAN = 1.0e-3

def mgl_fcfs(lam, svc):
    """Mean and second moment of the FCFS M/G/1 waiting time."""
    rho = lam * svc.m1
    w1 = lam * svc.m2 / (2 * (1 - rho))
    return w1, 2 * w1 ** 2 + lam * svc.m3 / (3 * (1 - rho))

class TestTrafficAndService(unittest.TestCase):
    def test_mix(self):
        mix = TrafficMix.from_load(0.5, MEAN, [0.0, 0.8, 0.2], 0.2)
        self.assertAlmostEqual(mix.lam_M, 400.0)
        self.assertAlmostEqual(mix.lam_E, 100.0)
        self.assertAlmostEqual(mix.lam_h, 480.0)
        self.assertAlmostEqual(mix.lam_l, 20.0)
        self.assertAlmostEqual(mix.lam, 500.0)
        with self.assertRaises(ConfigurationError):
            TrafficMix(-1.0, 0.0)
        with self.assertRaises(ConfigurationError):
            TrafficMix(1.0, 1.0, bflat=1.5)

    def test_service_moments(self):
        exp = ServiceModel.exponential(MEAN)
        self.assertEqual(ServiceModel.erlang(MEAN, 1), ServiceModel(exp.m1, exp.m2, exp.m3, "erlang", 1))
        det = ServiceModel.of("deterministic", MEAN)
        self.assertEqual(det.variance, 0.0)
        self.assertAlmostEqual(ServiceModel.of("erlang", MEAN, 4).variance, MEAN ** 2 / 4)
        self.assertTrue(np.all(det.sample(np.random.default_rng(0), 5) == MEAN))
        self.assertEqual(len(exp.sample(np.random.default_rng(0), 7)), 7)
        with self.assertRaises(ConfigurationError):
            ServiceModel.of("pareto", MEAN)
        with self.assertRaises(ConfigurationError):
            ServiceModel(MEAN, MEAN ** 2 / 2, MEAN ** 3)
        with self.assertRaises(ConfigurationError):
            ServiceModel.erlang(MEAN, 0)
        with self.assertRaises(ValueError):
            ServiceModel(MEAN, MEAN ** 2, MEAN ** 3).sample(np.random.default_rng(0), 1)

    def test_path(self):
        mix, svc = TrafficMix(100.0, 100.0), ServiceModel.exponential(MEAN)
        path = PathModel.homogeneous(3, mix, svc, 1.0e-2, propagation=1.0e-6)
        self.assertEqual(path.H, 3)
        self.assertIs(path.hop(10), path.hops[-1])
        with self.assertRaises(ConfigurationError):
            PathModel((), 1.0)
        with self.assertRaises(ConfigurationError):
            PathModel((Hop(mix, svc, -1.0),), 1.0)
        cfg_path = PathModel.from_cfg(default_cfg(MODE="queueing", HOPS=4, LOAD=0.5))
        self.assertEqual(cfg_path.H, 4)
        self.assertAlmostEqual(cfg_path.hops[0].mix.lam * MEAN, 0.5)

    def test_service_from_packet_size(self):
        self.assertEqual(ServiceModel.from_cfg(default_cfg()).m1, MEAN)
        derived = ServiceModel.from_cfg(default_cfg(SERVICE_MEAN=None))
        self.assertAlmostEqual(derived.m1 / 1.2e-6, 1.0, places=12)
        self.assertEqual(derived.dist, "exponential")
        jumbo = default_cfg(SERVICE_MEAN=None, PACKET_SIZE_BYTES=9000, LINK_RATE=1.0e9, SERVICE_DIST="deterministic")
        self.assertAlmostEqual(ServiceModel.from_cfg(jumbo).m1 / 7.2e-5, 1.0, places=12)
        path = PathModel.from_cfg(default_cfg(MODE="queueing", SERVICE_MEAN=None, LOAD=0.5))
        self.assertAlmostEqual(path.hops[0].mix.lam * 1.2e-6, 0.5)
        with self.assertRaises(ConfigurationError):
            ServiceModel.from_cfg(default_cfg(SERVICE_MEAN=None, PACKET_SIZE_BYTES=0))

class TestWaitingTimes(unittest.TestCase):
    def setUp(self):
        self.svc = ServiceModel.exponential(MEAN)

    def test_no_elephants_gives_equal_classes(self):
        mix = TrafficMix(600.0, 0.0, bflat=0.2)
        for moments in ("approx", "exact"):
            self.assertEqual(waiting_time_low(mix, self.svc, moments=moments), waiting_time_high(mix, self.svc, moments=moments))
        mix = TrafficMix(300.0, 300.0, bflat=0.0)
        self.assertEqual(waiting_time_low(mix, self.svc), waiting_time_high(mix, self.svc))

    def test_single_class_is_mg1(self):
        for svc in (self.svc, ServiceModel.deterministic(MEAN), ServiceModel.erlang(MEAN, 3)):
            for rho in (0.1, 0.5, 0.9):
                lam = rho / MEAN
                expected = mgl_fcfs(lam, svc)
                high = waiting_time_high(TrafficMix(lam, 0.0), svc, moments="exact")
                low = waiting_time_low(TrafficMix(0.0, lam, bflat=1.0), svc, moments="exact")
                for got in (high, low):
                    self.assertAlmostEqual(got[0] / expected[0], 1.0, places=9)
                    self.assertAlmostEqual(got[1] / expected[1], 1.0, places=9)

    def test_low_waits_longer_and_gap_grows(self):
        gaps = []
        for load in np.linspace(0.1, 0.9, 9):
            mix = TrafficMix.from_load(load, MEAN, [0.0, 0.8, 0.2], 0.5)
            for moments in ("approx", "approx_raw", "exact"):
                w_h, w_h2 = waiting_time_high(mix, self.svc, moments=moments)
                w_l, w_l2 = waiting_time_low(mix, self.svc, moments=moments)
                self.assertGreater(w_l, w_h)
                self.assertGreater(w_h2, 0.0)
                self.assertGreaterEqual(w_l2, w_l ** 2)
                if moments != "approx":
                    self.assertGreaterEqual(w_h2, w_h ** 2)
            gaps.append(w_l - w_h)
        self.assertTrue(np.all(np.diff(gaps) > 0))

    def test_high_second_moment_drops_count_variance(self):
        # lam_h = 500/s, exponential 1 ms: R = 0.5 ms, W_h = 1 ms, N_h Var(X) = 0.5e-6, Var(R) = 1e-6 - 0.25e-6
        mix = TrafficMix(500.0, 0.0)
        w_h, w_h2 = waiting_time_high(mix, self.svc)
        self.assertAlmostEqual(w_h / 1.0e-3, 1.0, places=12)
        self.assertAlmostEqual(w_h2 / 1.25e-6, 1.0, places=12)
        _, raw = waiting_time_high(mix, self.svc, moments="approx_raw")
        self.assertAlmostEqual(raw / 2.25e-6, 1.0, places=12)
        self.assertEqual(waiting_time_high(mix, self.svc, moments="approx"), (w_h, w_h2))

    def test_waiting_variance_per_mode(self):
        mix = TrafficMix.from_load(0.9, MEAN, [0.0, 0.8, 0.2], 0.5)
        for moments in ("approx", "approx_raw"):
            w_h, var_h = waiting_variance(mix, self.svc, "h", moments=moments)
            self.assertAlmostEqual(var_h / waiting_time_high(mix, self.svc)[1], 1.0, places=9)
        w_h, w_h2 = waiting_time_high(mix, self.svc, moments="exact")
        self.assertAlmostEqual(waiting_variance(mix, self.svc, "h", moments="exact")[1], w_h2 - w_h ** 2)
        w_l, w_l2 = waiting_time_low(mix, self.svc)
        self.assertAlmostEqual(waiting_variance(mix, self.svc, "l")[1], w_l2 - w_l ** 2)
        no_low = TrafficMix(300.0, 0.0)
        self.assertEqual(waiting_variance(no_low, self.svc, "l"), waiting_variance(no_low, self.svc, "h"))

    def test_residual(self):
        mix = TrafficMix(250.0, 250.0, bflat=0.5)
        base = residual_moments(mix, self.svc)
        self.assertAlmostEqual(base.mean, 0.5 * MEAN)
        self.assertAlmostEqual(base.second, 0.5 * 6 * MEAN ** 3 / (3 * MEAN))
        scaled = residual_moments(mix, self.svc, mode="scaled", scale=2.0)
        self.assertAlmostEqual(scaled.mean, 2 * base.mean)
        self.assertAlmostEqual(scaled.second, 4 * base.second)
        with self.assertRaises(ConfigurationError):
            residual_moments(mix, self.svc, mode="other")

    def test_instability(self):
        with self.assertRaises(InstabilityError):
            waiting_time_high(TrafficMix(1000.0, 0.0), self.svc)
        with self.assertRaises(InstabilityError):
            waiting_time_low(TrafficMix(600.0, 600.0), self.svc)
        with self.assertRaises(ConfigurationError):
            waiting_time_high(TrafficMix(100.0, 0.0), self.svc, moments="other")

    def test_convention_from_cfg(self):
        cfg = default_cfg(RESIDUAL_MODE="scaled", RESIDUAL_SCALE=1.5, MOMENTS="exact")
        self.assertDictEqual(convention_from_cfg(cfg), {"mode" : "scaled", "scale" : 1.5, "moments" : "exact"})

class TestBlocking(unittest.TestCase):
    def setUp(self):
        self.mix = TrafficMix.from_load(0.6, MEAN, [0.0, 0.8, 0.2], 0.2)
        self.svc = ServiceModel.exponential(MEAN)

    def test_infinite_threshold(self):
        path = PathModel.homogeneous(4, self.mix, self.svc, math.inf)
        self.assertEqual(blocking_probability(path), 0.0)

    def test_zero_variance_step(self):
        det = ServiceModel.deterministic(MEAN)
        idle = TrafficMix(0.0, 0.0)
        self.assertAlmostEqual(blocking_probability(PathModel.homogeneous(1, idle, det, MEAN)), 0.5)
        self.assertAlmostEqual(blocking_probability(PathModel.homogeneous(1, idle, det, 2 * MEAN)), 0.0)
        self.assertAlmostEqual(blocking_probability(PathModel.homogeneous(1, idle, det, MEAN / 2)), 1.0)

    def test_monotone_in_threshold(self):
        probs = [blocking_probability(PathModel.homogeneous(3, self.mix, self.svc, t)) for t in np.linspace(1e-3, 5e-2, 20)]
        self.assertTrue(np.all(np.diff(probs) <= 0))
        self.assertTrue(all(0.0 <= p <= 1.0 for p in probs))

    def test_moments_add_up(self):
        path = PathModel.homogeneous(3, self.mix, self.svc, 1e-2, propagation=1e-6)
        one = path_moments(PathModel.homogeneous(1, self.mix, self.svc, 1e-2, propagation=1e-6))
        three = path_moments(path)
        for cls in ("h", "l"):
            self.assertAlmostEqual(three[cls][0], 3 * one[cls][0])
            self.assertAlmostEqual(three[cls][1], math.sqrt(3) * one[cls][1])

    def test_sigma_same_for_both_approximations(self):
        path = PathModel.homogeneous(3, self.mix, self.svc, 1e-2)
        approx = path_moments(path, moments="approx")
        raw = path_moments(path, moments="approx_raw")
        for cls in ("h", "l"):
            self.assertAlmostEqual(approx[cls][0], raw[cls][0])
            self.assertAlmostEqual(approx[cls][1] / raw[cls][1], 1.0, places=9)
        self.assertAlmostEqual(blocking_probability(path, moments="approx"), blocking_probability(path, moments="approx_raw"))

    def test_report(self):
        path = PathModel.homogeneous(2, self.mix, self.svc, 1e-2)
        report = delay_report(path)
        rows = report.to_rows(point=0)
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1]["hop"], 2)
        self.assertEqual(rows[0]["point"], 0)
        self.assertAlmostEqual(rows[0]["p_blocking"], blocking_probability(path))
        self.assertGreater(report.W_l[0], report.W_h[0])
        self.assertEqual(report.h_star, max_hop_count(path).h_star)

class TestHopCount(unittest.TestCase):
    def setUp(self):
        self.svc = ServiceModel.exponential(MEAN)

    def test_brackets_threshold(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            H = int(rng.integers(1, 8))
            hops = tuple(
                Hop(TrafficMix(float(rng.uniform(0, 300)), float(rng.uniform(0, 300)), float(rng.uniform(0, 1))), self.svc, float(rng.uniform(0, 1e-4)))
                for _ in range(H)
            )
            path = PathModel(hops, float(rng.uniform(1e-4, 5e-2)))
            hc = max_hop_count(path)
            self.assertEqual(len(hc.cumulative), hc.h_star + 1)
            self.assertGreater(hc.cumulative[hc.h_star], path.t_qos)
            if hc.h_star > 0:
                self.assertLessEqual(hc.cumulative[hc.h_star - 1], path.t_qos)

    def test_identical_switches_match_shortcut(self):
        mix = TrafficMix(200.0, 100.0, 0.2)
        d = hop_delay(Hop(mix, self.svc), 0.2)
        path = PathModel.homogeneous(3, mix, self.svc, 10.5 * d)
        hc = max_hop_count(path)
        self.assertEqual(hc.h_star, 10)
        self.assertEqual(hc.h_shortcut, 10)
        short = max_hop_count(PathModel.homogeneous(20, mix, self.svc, 10.5 * d))
        self.assertEqual(short.h_star, 10)

    def test_light_traffic_estimate(self):
        mix = TrafficMix(1.0e-3, 1.0e-3, 0.2)
        path = PathModel.homogeneous(2, mix, self.svc, 20.5 * MEAN)
        hc = max_hop_count(path)
        self.assertEqual(hc.h_star, 20)
        self.assertAlmostEqual(hc.h_taylor, 20.5, places=2)

    def test_infinite_threshold(self):
        with self.assertRaises(ValueError):
            max_hop_count(PathModel.homogeneous(2, TrafficMix(1.0, 1.0), self.svc, math.inf))

if __name__ == '__main__':
    unittest.main()
