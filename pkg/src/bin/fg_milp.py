#!/usr/bin/env python3
"""
Exact model CLI script for ``fso_groom``.

Builds the mixed-integer model of a tiny instance with random demand, writes it in CPLEX LP format and as JSON, and optionally compares the exhaustive optimum with the provisioning heuristic.

Usage:
    ``fg_milp [--config CONFIG] [-o OUT] [OPTIONS]``

Options:
    -n DRAWS, --draws DRAWS
                          Number of random demand draws. Default is 1.
    --no-brute-force      Skip the exhaustive optimum.
    --no-heuristic        Skip the heuristic comparison.

Exit codes: 0 on success, 2 if provisioning fails.
"""
import sys

from fso_groom.experiment import cmd_milp, common_args, exit_code, spec_from_args


def cli_args():
    args_parse = common_args(__doc__.split("\n\n")[1])
    args_parse.add_argument("-n", "--draws", type=int, default=1, help="Number of random demand draws. Default is 1.")
    args_parse.add_argument("--no-brute-force", action="store_true", help="Skip the exhaustive optimum.")
    args_parse.add_argument("--no-heuristic", action="store_true", help="Skip the heuristic comparison.")
    return args_parse.parse_args()

def main():
    args = cli_args()
    spec = spec_from_args(args)
    sys.exit(exit_code(lambda: cmd_milp(spec, brute_force=not args.no_brute_force, heuristic=not args.no_heuristic, draws=args.draws)))

if __name__ == "__main__":
    main()
