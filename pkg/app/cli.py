"""
Command-line entry point.

    dualcarve --seed 7 --out runs/demo e2e
    dualcarve --config run.env carve front.nmap back.nmap --no-side-loss

Settings come from, highest priority first: flags, DUALCARVE_* environment
variables, the --config file, defaults. Exit status is 0 on success, 1 when a stage
fails and 2 when the configuration is invalid.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from app.core.artifacts import read_nmap, read_obj
from app.core.config import ENV_PREFIX, Settings, load_settings
from app.core.exceptions import DomainException, ParameterError
from app.services.pipeline_service import PipelineService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualcarve",
        description=(
            "Dual normal-map diffusion, mesh carving and multi-view refinement. "
            f"Environment overrides use the {ENV_PREFIX} prefix."
        ),
    )
    parser.add_argument("--config", type=Path, help="KEY=value config file")
    parser.add_argument("--seed", type=int, default=None, help="Run seed (required)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("synth-data", help="Write the synthetic training set")
    commands.add_parser("train", help="Train the denoiser on the cached dataset")

    generate = commands.add_parser("generate", help="Sample a front/back map pair")
    generate.add_argument(
        "--separate",
        action="store_true",
        help="Draw front and back from independent chains",
    )
    generate.add_argument("--guidance", type=float, help="Guidance strength")

    carve = commands.add_parser("carve", help="Carve the proxy into the map pair")
    carve.add_argument("front", type=Path)
    carve.add_argument("back", type=Path)
    carve.add_argument("--no-side-loss", action="store_true")

    refine = commands.add_parser("refine", help="Resample ring renders and re-carve")
    refine.add_argument("mesh", type=Path)

    guided = commands.add_parser("guided", help="Complete the back of a front map")
    guided.add_argument("front", type=Path)
    guided.add_argument(
        "--harmonization-steps", type=int, help="Repeats per timestep (U)"
    )

    render = commands.add_parser("render", help="Render a mesh over the view ring")
    render.add_argument("mesh", type=Path)

    evaluate = commands.add_parser("eval", help="Compare a mesh against a reference")
    evaluate.add_argument("mesh", type=Path)
    evaluate.add_argument("reference", type=Path, help="OBJ or NMAP directory")

    commands.add_parser("e2e", help="synth-data, train, generate, carve, refine, eval")

    sweep = commands.add_parser("sweep", help="Refinement ablation grids")
    sweep.add_argument("mesh", type=Path)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def settings_from_args(args: argparse.Namespace) -> Settings:
    """
    Raises:
        ParameterError: If the configuration is invalid or no seed is given
    """
    settings = load_settings(args.config, seed=args.seed)
    if args.out is not None:
        paths = settings.paths.model_copy(update={"out_dir": str(args.out)})
        settings = settings.model_copy(update={"paths": paths})
    return settings


def _handlers(
    service: PipelineService, args: argparse.Namespace
) -> Dict[str, Callable[[], object]]:
    return {
        "synth-data": service.synth_data,
        "train": service.train,
        "generate": lambda: service.generate(args.separate, args.guidance),
        "carve": lambda: service.carve(
            read_nmap(args.front), read_nmap(args.back), not args.no_side_loss
        ),
        "refine": lambda: service.refine(read_obj(args.mesh)),
        "guided": lambda: service.guided(
            read_nmap(args.front), args.harmonization_steps
        ),
        "render": lambda: service.render(read_obj(args.mesh)),
        "eval": lambda: service.evaluate(read_obj(args.mesh), args.reference),
        "e2e": service.e2e,
        "sweep": lambda: service.sweep(read_obj(args.mesh)),
    }


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        settings = settings_from_args(args)
    except ParameterError as exc:
        logger.error(f"Configuration error: {exc.message}")
        return EXIT_CONFIG

    service = PipelineService(settings)
    try:
        _handlers(service, args)[args.command]()
        if args.command != "e2e":
            service.finish()
    except DomainException as exc:
        logger.error(f"{args.command} failed: {exc.message}")
        return EXIT_FAILURE
    return EXIT_OK


def main() -> None:
    sys.exit(run())
