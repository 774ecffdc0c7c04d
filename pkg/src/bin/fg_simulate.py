#!/usr/bin/env python3
"""
Simulation sweep CLI script for ``fso_groom``.

Runs the discrete-event simulation at every point of the configured sweep, for every policy in network mode or through the switch tandem in queueing mode, and writes one metrics table.

Usage:
    ``fg_simulate [--config CONFIG] [-o OUT] [--mode {network,queueing}] [--policy NAME ...] [-j JOBS]``

Exit codes: 0 on success (unstable sweep points are reported as rows), 2 if provisioning fails.
"""
import sys

from fso_groom.experiment import cmd_simulate, common_args, exit_code, spec_from_args


def cli_args():
    return common_args(__doc__.split("\n\n")[1]).parse_args()

def main():
    spec = spec_from_args(cli_args())
    sys.exit(exit_code(lambda: cmd_simulate(spec)))

if __name__ == "__main__":
    main()
