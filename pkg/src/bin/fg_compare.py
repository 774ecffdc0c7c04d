#!/usr/bin/env python3
"""
Comparison CLI script for ``fso_groom``.

In network mode runs every policy on one workload per sweep point; in queueing mode pushes one packet stream through single-queue and two-priority switches. Writes compare.csv and prints it as a table.

Usage:
    ``fg_compare [--config CONFIG] [-o OUT] [--mode {network,queueing}] [--policy NAME ...]``

Exit codes: 0 on success, 2 if provisioning fails, 3 if the configuration is unstable.
"""
import sys

from fso_groom.experiment import cmd_compare, common_args, exit_code, spec_from_args


def cli_args():
    return common_args(__doc__.split("\n\n")[1]).parse_args()

def main():
    spec = spec_from_args(cli_args())
    sys.exit(exit_code(lambda: cmd_compare(spec)))

if __name__ == "__main__":
    main()
