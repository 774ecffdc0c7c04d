#!/usr/bin/env python3
"""
Analytic delay report CLI script for ``fso_groom``.

Computes per hop waiting times, the maximum hop count and the blocking probability at every sweep point, and compares them with queueing-mode simulation results found in the output directory.

Usage:
    ``fg_analyze [--config CONFIG] [-o OUT] [OPTIONS]``

Options:
    --metrics METRICS     A queueing_metrics.csv from fg_simulate. Default is the one in the output directory, if any.

Exit codes: 0 on success, 3 if the configuration is unstable.
"""
import sys

import pandas as pd

from fso_groom.experiment import cmd_analyze, common_args, exit_code, spec_from_args


def cli_args():
    args_parse = common_args(__doc__.split("\n\n")[1])
    args_parse.add_argument("--metrics", type=str, default=None, help="A queueing_metrics.csv from fg_simulate.")
    return args_parse.parse_args()

def main():
    args = cli_args()
    spec = spec_from_args(args)
    metrics = pd.read_csv(args.metrics) if args.metrics is not None else None
    sys.exit(exit_code(lambda: cmd_analyze(spec, metrics)))

if __name__ == "__main__":
    main()
