"""
Main entry point for Spectral Ordering
"""

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from src.spectral_ordering.config import config
from src.spectral_ordering.errors import ConfigParseError, SpectralOrderingError
from src.spectral_ordering.experiment_config import ExperimentConfig, load_experiment_config
from src.spectral_ordering.experiment_runner import run_experiment
from src.spectral_ordering.geometry import write_mesh
from src.spectral_ordering.report_generator import ReportGenerator

# Setup logging
logging.basicConfig(
    level=getattr(logging, config.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "mesh": "Write the coarse mesh of the configured domain",
    "check": "Run the hypothesis checkers of the configured theorem",
    "solve": "Solve for the lowest eigenvalues",
    "verify": "Verify mu_{k+r} <= lambda_k with extrapolated error bars",
    "certify": "Build trial-subspace certificates",
    "ibp": "Check the boundary integration-by-parts identity",
    "run": "Run the experiment exactly as configured",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Spectral Ordering")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="Experiment config file")
        sub.add_argument("--output", help="Output file path for results")
        sub.add_argument("--quiet", action="store_true", help="Hide progress bars")
        if name == "solve":
            sub.add_argument("--bc", choices=["dirichlet", "neumann", "both"], default="both",
                             help="Boundary condition")
            sub.add_argument("--count", type=int, help="Number of eigenvalues")
    return parser


def main(argv=None) -> int:
    """Main function; returns the process exit code"""
    args = build_parser().parse_args(argv)

    try:
        experiment = load_experiment_config(args.config)
        if args.command == "mesh":
            mesh = experiment.domain.build_mesh()
            text = write_mesh(mesh, args.output)
            if args.output:
                print(f"Mesh saved to: {args.output}")
            else:
                print(text)
            return 0

        update = {}
        if args.command not in ("run",):
            update["task"] = args.command
        if args.command == "solve":
            update["bc"] = ["dirichlet", "neumann"] if args.bc == "both" else [args.bc]
            if args.count:
                update["count"] = args.count
            if args.output:
                update["output_csv"] = args.output
        elif args.output:
            update["output_json"] = args.output
        experiment = ExperimentConfig.model_validate({**experiment.model_dump(), **update})
    except ValidationError as e:
        message = e.errors()[0]["msg"]
        logger.error(f"Config error: {message}")
        print(f"Error: {args.command} cannot run this config: {message}", file=sys.stderr)
        return 2
    except ConfigParseError as e:
        logger.error(f"Config error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except SpectralOrderingError as e:
        logger.error(f"Error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1

    result = run_experiment(experiment, show_progress=False if args.quiet else None)

    if args.command == "check":
        stage = next((s for s in result.stages if s.name == "hypothesis_checks"), None)
        print(json.dumps(stage.payload.get("conditions", []) if stage else [], indent=2, default=str))
    elif args.command == "solve" and not args.output:
        for bc, spectrum in result.spectra.items():
            print(f"# {bc}")
            print(ReportGenerator.eigenvalue_table(spectrum).to_csv(index=False, float_format="%.15g"), end="")
    else:
        print(ReportGenerator.summary_line(result.to_dict()))
        if args.output:
            print(f"Results saved to: {args.output}")

    for name in result.failed_stages:
        print(f"Stage failed: {name}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
