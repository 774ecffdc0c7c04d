import unittest

import os, tempfile

import numpy as np
import pandas as pd

from fso_groom.config import default_cfg
from fso_groom.report import config_digest, format_cell, format_row, format_table, manifest, write_csv

class TestReport(unittest.TestCase):
    def test_format_cell(self):
        self.assertEqual(format_cell(0.123456789), "0.1235")
        self.assertEqual(format_cell(3.0), "3.0")
        self.assertEqual(format_cell(12), "12")
        self.assertEqual(format_cell(np.nan), "nan")
        long = format_cell("x" * 100, max_length=11)
        self.assertEqual(len(long), 11)
        self.assertIn("...", long)

    def test_format_table(self):
        df = pd.DataFrame({"policy" : ["TG-FSO", "ECMP-FSO"], "mean_fct" : [1.5e-3, 2.25e-3]})
        table = format_table(df).splitlines()
        self.assertEqual(len(table), 6)
        self.assertEqual(len(set(len(line) for line in table)), 1)
        self.assertIn("TG-FSO", table[3])
        self.assertEqual(format_table(pd.DataFrame()), "(empty table)")
        with self.assertRaises(ValueError):
            format_row(["a"], [3], align="justify")

    def test_csv_is_deterministic(self):
        df = pd.DataFrame({"load" : [0.25, 0.5], "wait" : [1 / 3, 2 / 3]})
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = [write_csv(df, os.path.join(tmpdir, f"{k}.csv")) for k in range(2)]
            contents = []
            for path in paths:
                with open(path, "rb") as f:
                    contents.append(f.read())
        self.assertEqual(contents[0], contents[1])
        self.assertEqual(contents[0].decode().splitlines()[1], "0.25,0.333333333")
        self.assertNotIn(b"\r", contents[0])

    def test_manifest(self):
        cfg = default_cfg()
        self.assertEqual(config_digest(cfg), config_digest(default_cfg()))
        self.assertNotEqual(config_digest(cfg), config_digest(default_cfg(SEED=1)))
        record = manifest(cfg, outputs=["b.csv", "a.csv"])
        self.assertEqual(record["seed"], 0)
        self.assertListEqual(record["outputs"], ["a.csv", "b.csv"])
        self.assertEqual(len(record["config_sha256"]), 64)
        self.assertEqual(manifest(cfg, seed=9)["seed"], 9)

if __name__ == '__main__':
    unittest.main()
