#!/usr/bin/env python3
"""
Rack-to-rack provisioning CLI script for ``fso_groom``.

Provisions one CF and one MF lightpath per ordered rack pair for the configured topology and writes the lightpath table, the link budget table, the topology edge list and the decision trace.

Usage:
    ``fg_provision [--config CONFIG] [-o OUT] [OPTIONS]``

Options:
    --lp                  Also export the exact model of the provisioned demand in CPLEX LP format (tiny topologies only).

Exit codes: 0 on success, 2 if provisioning fails.
"""
import sys

from fso_groom.experiment import cmd_provision, common_args, exit_code, spec_from_args


def cli_args():
    args_parse = common_args(__doc__.split("\n\n")[1])
    args_parse.add_argument("--lp", action="store_true", help="Also export the exact model in CPLEX LP format (tiny topologies only).")
    return args_parse.parse_args()

def main():
    args = cli_args()
    spec = spec_from_args(args)
    sys.exit(exit_code(lambda: cmd_provision(spec, lp_file=args.lp)))

if __name__ == "__main__":
    main()
