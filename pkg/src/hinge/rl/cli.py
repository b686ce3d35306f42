"""
Command line entry point, ``hinge-rl <stage> --config <file> --seed <n> --out <dir>``.
"""
import argparse
import sys

from hinge.rl import __version__
from hinge.rl.errors import ConfigurationError, HingeError
from hinge.rl.harness import EXPERIMENTS
from hinge.rl.logger import HingeLogger
from hinge.rl.stages import ablate, evaluate, finetuneadapt, sampleenv, trainadapt, trainpolicy, trainvae

# Sub-command, stage module, help and the override flags it accepts mapped to configuration keys.
STAGES = {
    "sample-env": (sampleenv, "Sample the evaluation door sequence.", {"episodes": "episodes"}),
    "train-vae": (trainvae, "Train the environment encoder.", {}),
    "train-policy": (trainpolicy, "Train a base policy with PPO.",
                     {"mode": "mode", "steps": "steps", "window": "ppo_window"}),
    "train-adapt": (trainadapt, "Train the adaptation module.",
                    {"episodes": "adapt_episodes", "window": "adapt_window"}),
    "finetune-adapt": (finetuneadapt, "Fine-tune the adaptation module against the frozen policy.",
                       {"episodes": "adapt_finetune_episodes", "window": "adapt_window"}),
    "eval": (evaluate, "Evaluate one agent variant.", {"episodes": "episodes", "variant": "variant"}),
    "ablate": (ablate, "Run a named comparison.", {"episodes": "episodes", "experiment": "experiment"}),
}

_FLAGS = {
    "mode": dict(type=str, help="Policy mode: single_door, domain_randomized, no_encoder, six_dof or velocity."),
    "steps": dict(type=int, help="Total environment steps."),
    "episodes": dict(type=int, help="Number of episodes (doors)."),
    "window": dict(type=int, help="History window length."),
    "variant": dict(type=str, choices=evaluate.VARIANTS, help="Agent to evaluate."),
    "experiment": dict(type=str, choices=sorted(EXPERIMENTS), help="Comparison to run."),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hinge-rl", description="Door opening with adaptive hinge estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="stage", required=True)
    for name, (_, description, overrides) in STAGES.items():
        subparser = subparsers.add_parser(name, help=description, description=description)
        subparser.add_argument("--config", type=str, help="Run configuration file of key = value lines.")
        subparser.add_argument("--seed", type=int, help="Random seed, overrides the configuration's seed entry.")
        subparser.add_argument("--out", type=str, default=".", help="Output directory.")
        subparser.add_argument("--verbose", action="store_true", help="Log debug messages.")
        for flag in overrides:
            subparser.add_argument(f"--{flag}", **_FLAGS[flag])
    return parser


def run_stage(args):
    module, _, overrides = STAGES[args.stage]
    runner = module.StageRunner(args.out)
    runner.set_parameters({key: getattr(args, flag) for flag, key in overrides.items()
                           if getattr(args, flag) is not None})
    if args.config is not None and not runner.load(args.config):
        raise ConfigurationError(f"Could not load run configuration {args.config}.")

    seed = args.seed if args.seed is not None else runner.get_parameters().get("seed", 0)
    runner.set_seed(seed)
    runner.run()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger = HingeLogger.getLogger()
    if args.verbose:
        HingeLogger.setLevel("DEBUG")

    try:
        run_stage(args)
    except HingeError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
