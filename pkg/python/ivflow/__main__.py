#!/usr/bin/env python3

#
# Copyright (C) 2026 The ivflow authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#


import argparse
import logging
import sys

from rich.console import Console
from rich.table import Table

from ivflow import coeffs
from ivflow.config import ExperimentConfig, load_experiment, validate
from ivflow.errors import ConfigError, NumericalFailure
from ivflow.reporting import table_dump_row


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def run(args):
    from ivflow.runner import run as run_experiment
    config = ExperimentConfig.from_file(_config_path(args))
    run_experiment(config, out_dir=args.out, workers=args.workers,
                   quiet=args.quiet)


def check(args):
    from ivflow.experiments import estimate_map_applications
    raw = load_experiment(_config_path(args))
    problems = validate(raw)
    if problems:
        for problem in problems:
            print(f'Config error: {problem}', file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    config = ExperimentConfig(raw, source=args.config)
    cost = estimate_map_applications(config)
    print(f'{args.config}: valid {config.kind} experiment, '
          f'about {cost:.3g} map applications')


def coeff_table(args):
    console = Console()
    for n in args.orders or [2]:
        table = coeffs.coeff_table(n)
        if args.out is not None:
            coeffs.dump_csv(table, f'{args.out}/coeffs_n{n}.csv')
            continue
        rich_table = Table(title=f'p_nk, n = {n}')
        rich_table.add_column('k', justify='right')
        rich_table.add_column('p_nk', justify='right')
        rich_table.add_column('exact', justify='right')
        for k, value, exact in coeffs.csv_rows(table):
            if k > 0:
                rich_table.add_row(str(k), repr(value), exact)
        rich_table.add_section()
        table_dump_row(rich_table, 'sum |p_nk|', coeffs.abs_sum(table))
        table_dump_row(rich_table, 'sum p_nk', coeffs.signed_sum(table))
        console.print(rich_table)


def _config_path(args):
    if args.config is None:
        raise ConfigError([f'{args.command} needs --config'])
    return args.config


commands = {
  'run'      : ['Run an experiment and write its artifacts', run],
  'validate' : ['Check a configuration and estimate its cost', check],
  'coeffs'   : ['Show the interpolation coefficients p_nk', coeff_table],
}

commandHelp = """Available commands:
"""

for name, cmd in commands.items():
    commandHelp += '  %-10s %s\n' % (name, cmd[0])

parser = argparse.ArgumentParser(
    prog='ivflow',
    description='Interpolating vector fields of near-identity maps',
    epilog=commandHelp,
    formatter_class=argparse.RawDescriptionHelpFormatter
)

parser.add_argument('command', metavar='CMD', type=str,
                    choices=list(commands.keys()),
                    help='the command to be executed (see below)')

parser.add_argument(
    "--config", dest="config", default=None, metavar="PATH",
    help="Experiment configuration (JSON or YAML)"
)
parser.add_argument(
    "--out", dest="out", default=None, metavar="DIR",
    help="Output directory. Default: the config's output entry"
)
parser.add_argument(
    "--workers", dest="workers", default=None, type=int,
    help="Number of worker threads, 0 for one per CPU. "
    "Default: the config's workers entry"
)
parser.add_argument(
    "--quiet", dest="quiet", action="store_true",
    help="No progress display and no summary table"
)
parser.add_argument(
    "--n", dest="orders", action="append", type=int, default=None,
    help="Interpolation order for the coeffs command (repeatable)"
)
parser.add_argument(
    '--py-stack', dest='py_stack', action="store_true",
    help='Show python exception stack.'
)
parser.add_argument('--verbose', dest='verbose', action="store_true",
                    help='Enable verbose mode.')


args = parser.parse_args()

if args.verbose:
    logging.basicConfig(level=logging.DEBUG,
                        format='%(asctime)s - %(levelname)s - %(message)s')
else:
    logging.basicConfig(level=logging.WARNING,
                        format='%(levelname)s - %(message)s')

try:
    commands[args.command][1](args)

except ConfigError as e:
    if args.py_stack:
        raise
    for problem in e.problems:
        print(f'Config error: {problem}', file=sys.stderr)
    sys.exit(EXIT_CONFIG)

except NumericalFailure as e:
    if args.py_stack:
        raise
    print(f'Numerical failure: {e}', file=sys.stderr)
    sys.exit(EXIT_NUMERICAL)

except OSError as e:
    if args.py_stack:
        raise
    print(f'I/O error: {e}', file=sys.stderr)
    sys.exit(EXIT_IO)

except (RuntimeError, ValueError) as e:
    if args.py_stack:
        raise
    print('Input error: ' + str(e), file=sys.stderr)
    sys.exit(1)
