#!/usr/bin/env python3
"""Command-line entry point for the dyadic experiment and its dual validation."""
import argparse
import sys

from src.pipeline.orchestrator import EXIT_ERROR, STAGES, resume_run, run_pipeline
from src.utils.config import RunConfig, logger
from src.utils.errors import DyadValidationError


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--config', help="JSON configuration merged over config.json")
    parser.add_argument('--stage', action='append', choices=STAGES + ("all",),
                        help="Stage to run (repeatable; default: all stages in order)")
    parser.add_argument('--out', help="Output directory (overrides output_dir)")
    parser.add_argument('--seed', type=int, help="Master seed (overrides master_seed)")
    parser.add_argument('--group-id', action='append', dest='group_ids',
                        help="Restrict the run to these configured groups (repeatable)")
    parser.add_argument('--resume', metavar='JOURNAL', help="Complete the missing dyads of a journal")
    parser.add_argument('--no-progress', action='store_true', help="Hide progress bars")
    return parser.parse_args(argv)


def build_config(args) -> RunConfig:
    """Configuration from files and command-line overrides."""
    config = RunConfig.load(args.config)
    data = config.to_dict()
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.out:
        data["output_dir"] = args.out
    if args.group_ids:
        known = [g["group_id"] for g in data["groups"]]
        missing = [g for g in args.group_ids if g not in known]
        if missing:
            raise DyadValidationError(f"unknown group id(s) {missing}; configured: {known}")
        data["groups"] = [g for g in data["groups"] if g["group_id"] in args.group_ids]
    return RunConfig.from_dict(data)


def main(argv=None):
    """Main routine."""
    args = parse_args(argv)
    try:
        config = build_config(args)
        if args.resume:
            resume_run(args.resume, config, progress=not args.no_progress)
            if not args.stage:
                return 0
    except (DyadValidationError, OSError) as e:
        logger.error(f"Error in main routine: {e}")
        return EXIT_ERROR
    return run_pipeline(config, args.stage, progress=not args.no_progress)


if __name__ == "__main__":
    sys.exit(main())
