import argparse
import logging
import os
import sys

from calibrate import calibrate_gllr
from evaluate import evaluate
from models.load_model import load_model_file
from mppt_io.scenario import read_scenario
from simulate import bench, simulate
from sweep import sweep
from train import train
from util import InvalidInput, MpptLabError, convert_yaml_config, load_config, parse_int_list, result_dir, setup_logging

logger = logging.getLogger(__name__)

ROOT = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(ROOT, 'config', 'config_default.yaml')
DEFAULT_SCENARIO = os.path.join(ROOT, 'config', 'scenarios', 'small_sp1_sp2.json')

# CLI spelling -> network mode
MODE_ALIASES = {'vi': 'vi', 'irr': 'irradiance', 'irradiance': 'irradiance',
                'vi-single': 'vi-single', 'irr-single': 'irr-single'}


def args_argument(argv=None):
    parser = argparse.ArgumentParser(prog='mppt-lab')
    parser.add_argument('-c', '--config', type=str, default=DEFAULT_CONFIG, help='Configuration file of the project')
    parser.add_argument('-o', '--out', type=str, default=None,
                        help='Output directory (default: result_rootdir/exp_name)')
    parser.add_argument('-e', '--exp_name', type=str, default=None,
                        help='Name of experiment (subfolder in result_rootdir)')
    parser.add_argument('--seed', type=int, default=None, help='Base seed, overrides the config')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    command = commands.add_parser('sweep', help='P-V curves and oracle GMPP of every scenario pattern')
    command.add_argument('--scenario', type=str, default=DEFAULT_SCENARIO)
    command.add_argument('--points', type=int, default=2001, help='Sweep resolution')

    command = commands.add_parser('calibrate-gllr', help='Calibrate the GLLR and difference thresholds')
    command.add_argument('--scenario', type=str, default=None, help='Derive sigma_nu from this plant')
    command.add_argument('--runs', type=int, default=None, help='Monte-Carlo runs')
    command.add_argument('--study', action='store_true', help='Also run the false-alarm period study')
    command.add_argument('--b', type=float, default=None, help='GLLR drift parameter b')
    command.add_argument('--sigma-nu', dest='sigma_nu', type=float, default=None, help='Power noise std (W)')
    command.add_argument('--gamma', type=float, default=None, help='Target false-alarm period (s)')
    command.add_argument('--fs', type=float, default=None, help='Sampling frequency (Hz)')

    command = commands.add_parser('train-ann', help='Train a GMPP network')
    command.add_argument('--mode', type=str, default='irr', choices=sorted(MODE_ALIASES))
    command.add_argument('--arch', type=str, default=None, help='Layer sizes, e.g. 8,20,10,1')
    command.add_argument('--epochs', type=int, default=None)
    command.add_argument('--optimizer', type=str, default=None, choices=['gd', 'lbfgs'])
    command.add_argument('--scenario', type=str, default=DEFAULT_SCENARIO, help='Plant the network serves')

    command = commands.add_parser('eval-pqi', help='Prediction quality index of a trained network')
    command.add_argument('--model', type=str, required=True, help='Model JSON written by train-ann')
    command.add_argument('--tests', type=int, default=None, help='Number of random test patterns G')
    command.add_argument('--scenario', type=str, default=DEFAULT_SCENARIO)

    command = commands.add_parser('simulate', help='Monte-Carlo comparison of the scenario controllers')
    command.add_argument('--scenario', type=str, default=DEFAULT_SCENARIO)
    command.add_argument('--replications', type=int, default=None)
    command.add_argument('--dump-particles', action='store_true', dest='dump_particles',
                         help='Write the SMC cloud of the first replication of each enhanced tracker')

    command = commands.add_parser('bench', help='Desk-scale acceptance checks')
    command.add_argument('--quick', action='store_true', help='Smaller Monte-Carlo sizes')
    return parser.parse_args(argv)


def main(args):
    config = convert_yaml_config(load_config(args.config))
    if args.exp_name is not None:
        config['exp_name'] = args.exp_name
    if args.seed is not None:
        config['seed'] = args.seed
    out = result_dir(config, args.out)
    logger.info('%s: writing to %s', args.command, out)

    if args.command == 'sweep':
        sweep(read_scenario(args.scenario), out, n_points=args.points)

    elif args.command == 'calibrate-gllr':
        if args.runs is not None:
            config['gllr']['n_runs'] = args.runs
        scenario = read_scenario(args.scenario) if args.scenario else None
        calibrate_gllr(config, out, scenario=scenario, study=args.study, b=args.b, sigma_nu=args.sigma_nu,
                       gamma=args.gamma, f_s=args.fs)

    elif args.command == 'train-ann':
        scenario = read_scenario(args.scenario)
        if args.optimizer is not None:
            config['ann']['optimizer'] = args.optimizer
        arch = parse_int_list(args.arch) if args.arch else None
        train(config, MODE_ALIASES[args.mode], scenario.topology, scenario.params, out=out, arch=arch,
              epochs=args.epochs)

    elif args.command == 'eval-pqi':
        scenario = read_scenario(args.scenario)
        evaluate(config, load_model_file(args.model), scenario.topology, scenario.params, n_tests=args.tests,
                 out=out)

    elif args.command == 'simulate':
        simulate(config, args.scenario, out, n_replications=args.replications, seed=args.seed,
                 write_particles=args.dump_particles)

    elif args.command == 'bench':
        bench(config, out, seed=config['seed'], quick=args.quick)

    logger.info('%s finished', args.command)


def run(argv=None):
    args = args_argument(argv)
    setup_logging(args.verbose)
    try:
        main(args)
    except MpptLabError as err:
        print('error: %s: %s' % (err.tag, err), file=sys.stderr)
        sys.exit(1)
    except ValueError as err:
        print('error: %s: %s' % (InvalidInput.tag, err), file=sys.stderr)
        sys.exit(1)
    sys.exit(0)


if __name__ == '__main__':
    run()
