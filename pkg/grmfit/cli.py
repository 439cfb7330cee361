"""Command-line front end: simulate, fit, study, metrics, figure1.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from grmfit.core.dependency import get_estimator, get_fit_config, get_quadrature_rule, get_settings
from grmfit.core.errors import GrmError, ParseError, UsageError
from grmfit.models.schemas import Method, SimulationMeta, SimulationSpec, StudyConfig
from grmfit.services.em_service import starting_values
from grmfit.services.simulation_service import SimulationService
from grmfit.services.study_service import StudyService, emit_likelihood_figure, psi_grid
from grmfit.utils.csv_io import (
    read_item_csv,
    read_response_csv,
    write_frame,
    write_item_csv,
    write_response_csv,
)
from grmfit.utils.fit_store import read_json, write_json
from grmfit.utils.logging import configure_logging

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _pattern(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"pattern must be comma-separated integers, got {text!r}") from exc


def cmd_simulate(args: argparse.Namespace) -> None:
    spec = SimulationSpec(
        n_items=args.items,
        n_subjects=args.subjects,
        seed=args.seed,
        max_resimulations=args.max_resimulations,
    )
    items, simulated = SimulationService().simulate(spec)
    write_response_csv(simulated.data, args.out_data)
    write_item_csv(items, args.out_params)
    meta = SimulationMeta(
        seed=spec.seed,
        resimulations=simulated.resimulations,
        n_subjects=spec.n_subjects,
        n_items=spec.n_items,
    )
    meta_path = Path(f"{args.out_data}.meta.json")
    write_json(meta_path, meta.model_dump())
    print(
        f"Simulated {spec.n_subjects}x{spec.n_items} responses "
        f"({simulated.resimulations} resimulations) -> {args.out_data}"
    )


def cmd_fit(args: argparse.Namespace) -> None:
    data = read_response_csv(args.data)
    init = read_item_csv(args.params_init) if args.params_init else starting_values(data)
    config = get_fit_config(
        get_settings(),
        quadrature_points=args.quadpts,
        max_outer_iterations=args.max_iter,
    )
    result = get_estimator(Method.from_cli(args.method), config).fit(data, init)
    write_json(args.out, result.to_payload())
    print(f"{result.method.value}: {result.status.value}, loglik={result.loglik:.6f} -> {args.out}")


def _load_study_config(path: Path) -> StudyConfig:
    try:
        return StudyConfig.model_validate(read_json(path))
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(p) for p in error["loc"]) or None
        raise ParseError(error["msg"], path=str(path), field=field) from exc


def cmd_study(args: argparse.Namespace) -> None:
    config = _load_study_config(args.config)
    overrides = {
        "jobs": args.jobs,
        "output_dir": args.out,
        "include_nonconverged": True if args.include_nonconverged else None,
    }
    config = config.model_copy(update={k: v for k, v in overrides.items() if v is not None})
    manifest = StudyService(show_progress=args.progress or None).run(config)
    print(
        f"Study finished: {len(manifest.fits)} fits, "
        f"{manifest.study_wall_time_ms / 1000:.1f}s -> {config.output_dir}"
    )


def cmd_metrics(args: argparse.Namespace) -> None:
    written = StudyService(show_progress=False).aggregate(
        args.input, args.out, include_nonconverged=True if args.include_nonconverged else None
    )
    print(f"Wrote {len(written)} tables -> {args.out}")


def cmd_figure1(args: argparse.Namespace) -> None:
    items = read_item_csv(args.params)
    rule = get_quadrature_rule(args.quadpts)
    grid = psi_grid(args.psi_min, args.psi_max, args.psi_step)
    frame = emit_likelihood_figure(items, np.asarray(args.pattern), rule, grid)
    write_frame(frame, args.out)
    print(f"Figure data for pattern {','.join(map(str, args.pattern))} -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grmfit", description="Graded response model estimation and simulation studies.")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="Sample items and simulate a complete dataset")
    sim.add_argument("--items", type=int, required=True)
    sim.add_argument("--subjects", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--max-resimulations", type=int, default=1000)
    sim.add_argument("--out-data", type=Path, required=True)
    sim.add_argument("--out-params", type=Path, required=True)
    sim.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", help="Fit item parameters to a response CSV")
    fit.add_argument("--method", choices=["laplace", "ghq-em"], required=True)
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--params-init", type=Path, default=None, help="Starting values (computed if omitted)")
    fit.add_argument("--quadpts", type=int, default=None)
    fit.add_argument("--max-iter", type=int, default=None)
    fit.add_argument("--out", type=Path, required=True)
    fit.set_defaults(handler=cmd_fit)

    study = sub.add_parser("study", help="Run a simulation study from a JSON config")
    study.add_argument("--config", type=Path, required=True)
    study.add_argument("--jobs", type=int, default=None)
    study.add_argument("--out", type=Path, default=None)
    study.add_argument("--include-nonconverged", action="store_true")
    study.add_argument("--progress", action="store_true", help="Show a progress bar")
    study.set_defaults(handler=cmd_study)

    met = sub.add_parser("metrics", help="Re-aggregate a study directory")
    met.add_argument("--in", dest="input", type=Path, required=True)
    met.add_argument("--out", type=Path, required=True)
    met.add_argument("--include-nonconverged", action="store_true")
    met.set_defaults(handler=cmd_metrics)

    fig = sub.add_parser("figure1", help="Likelihood, Laplace and GHQ curves for one pattern")
    fig.add_argument("--params", type=Path, required=True)
    fig.add_argument("--pattern", type=_pattern, required=True)
    fig.add_argument("--quadpts", type=int, default=61)
    fig.add_argument("--psi-min", type=float, default=-4.0)
    fig.add_argument("--psi-max", type=float, default=4.0)
    fig.add_argument("--psi-step", type=float, default=0.01)
    fig.add_argument("--out", type=Path, required=True)
    fig.set_defaults(handler=cmd_figure1)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    configure_logging(get_settings(), level=args.log_level)
    try:
        args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GrmError, OSError, ValidationError) as exc:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
