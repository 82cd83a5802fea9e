from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from . import __version__
from .charts import line_chart_svg, rate_series, write_svg
from .coalescent import SpeciesTree3, sample_gene_trees, write_gene_trees_csv
from .estimators import ESTIMATE_HEADER, MethodId, TieBreaker, estimate, estimate_to_row
from .montecarlo import REPORT_HEADER, SEED_SCHEME, ExperimentConfig, run_experiment
from .rate_functions import (
    RATE_CURVE_HEADER,
    ChernoffPreconditionError,
    Regime,
    SolverError,
    rate_curve,
    rate_point_row,
)
from .settings import settings
from .validation import SUITES, VALIDATION_HEADER, run_suite

logger = logging.getLogger("coalrates")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class RunManifest(BaseModel):
    command: list[str]
    version: str = __version__
    seed: Optional[int] = None
    seed_scheme: Optional[str] = None
    block_size: Optional[int] = None
    parameters: dict[str, Any] = Field(default_factory=dict)
    outputs: list[str] = Field(default_factory=list)
    created_at: str = Field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )


@dataclass(frozen=True)
class FigureDefaults:
    t_min: float
    t_max: float
    steps: int
    regime: Optional[Regime]
    title: str


FIGURES = {
    1: FigureDefaults(0.005, 1.0, 200, None, "Decay rates, t in (0, 1]"),
    2: FigureDefaults(0.0005, 0.1, 200, Regime.SMALL, "Decay rates as t -> 0"),
    3: FigureDefaults(1.0, 100.0, 200, Regime.LARGE, "Decay rates for large t"),
}


def _fmt(value: float) -> str:
    return format(value, ".17g")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    _manifest_path(out).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def _methods_arg(text: str) -> tuple[MethodId, ...]:
    try:
        return tuple(MethodId.parse(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _default_out(name: str) -> Path:
    return Path(settings.output_dir) / name


def cmd_rates(
    t_min: float,
    t_max: float,
    steps: int,
    out_path: Path,
    with_asymptotes: bool,
    *,
    regime: Optional[Regime] = None,
    title: str = "Decay rates",
    argv: Sequence[str] = (),
) -> list[Path]:
    """Write the rate-curve CSV, its SVG chart and manifests."""
    points = rate_curve(t_min, t_max, steps)
    if with_asymptotes and regime is None:
        regime = Regime.SMALL if t_max <= 1.0 else Regime.LARGE
    if not with_asymptotes:
        regime = None

    svg = line_chart_svg(
        rate_series(points, regime),
        title=title,
        x_label="internal branch length t (coalescent units)",
        y_label="decay rate",
    )
    rows = [[_fmt(v) for v in rate_point_row(p)] for p in points]

    # Nothing is written until every output has been rendered.
    csv_path = out_path
    svg_path = out_path.with_suffix(".svg")
    _write_csv(csv_path, RATE_CURVE_HEADER, rows)
    write_svg(svg_path, svg)

    parameters = {
        "t_min": t_min,
        "t_max": t_max,
        "steps": steps,
        "with_asymptotes": with_asymptotes,
        "regime": regime.value if regime else None,
    }
    for path in (csv_path, svg_path):
        _write_manifest(
            path,
            RunManifest(command=list(argv), parameters=parameters, outputs=[path.name]),
        )
    logger.info("Wrote %s and %s (%d points)", csv_path, svg_path, len(points))
    return [csv_path, svg_path]


def cmd_figure(number: int, out_dir: Path, *, argv: Sequence[str] = ()) -> list[Path]:
    defaults = FIGURES[number]
    return cmd_rates(
        defaults.t_min,
        defaults.t_max,
        defaults.steps,
        out_dir / f"figure{number}.csv",
        defaults.regime is not None,
        regime=defaults.regime,
        title=defaults.title,
        argv=argv,
    )


def cmd_simulate(
    t: float,
    loci: int,
    replicates: int,
    methods: Sequence[MethodId],
    seed: int,
    out_path: Path,
    *,
    argv: Sequence[str] = (),
) -> Path:
    cfg = ExperimentConfig(SpeciesTree3.from_branch(t), loci, replicates, tuple(methods), seed)
    logger.info(
        "Simulating t=%g L=%d replicates=%d methods=%s seed=%d",
        t,
        loci,
        replicates,
        ",".join(m.value for m in cfg.methods),
        seed,
    )
    results = run_experiment(cfg)
    _write_csv(out_path, REPORT_HEADER, (r.to_row() for r in results))
    _write_manifest(
        out_path,
        RunManifest(
            command=list(argv),
            seed=seed,
            seed_scheme=SEED_SCHEME,
            block_size=settings.block_size,
            parameters={
                "t": t,
                "L": loci,
                "replicates": replicates,
                "methods": [m.value for m in cfg.methods],
            },
            outputs=[out_path.name],
        ),
    )
    for r in results:
        logger.info(
            "%s: failures=%d p_hat=%.6g ci=[%.6g, %.6g]",
            r.method.value,
            r.failures,
            r.p_hat,
            r.ci_low,
            r.ci_high,
        )
    return out_path


def cmd_dump_dataset(
    t: float,
    loci: int,
    methods: Sequence[MethodId],
    seed: int,
    out_dir: Path,
    *,
    argv: Sequence[str] = (),
) -> list[Path]:
    """Write one sample dataset and every method's estimate on it.

    The dataset has its own stream derived from ``seed``; it is not one of
    the Monte Carlo replicates.
    """
    methods = tuple(dict.fromkeys(methods))
    species = SpeciesTree3.from_branch(t)
    trees = sample_gene_trees(species, loci, np.random.default_rng([seed, 0]))
    tie = TieBreaker(rng=np.random.default_rng([seed, 1]))
    rows = [estimate_to_row(m, estimate(m, trees, tie.copy())) for m in methods]

    trees_path = out_dir / "gene_trees.csv"
    estimates_path = out_dir / "estimates.csv"
    write_gene_trees_csv(trees_path, trees)
    _write_csv(estimates_path, ESTIMATE_HEADER, rows)
    parameters = {"t": t, "L": loci, "methods": [m.value for m in methods]}
    for path in (trees_path, estimates_path):
        _write_manifest(
            path,
            RunManifest(command=list(argv), seed=seed, parameters=parameters, outputs=[path.name]),
        )
    logger.info("Wrote sample dataset to %s", out_dir)
    return [trees_path, estimates_path]


def cmd_validate(
    suite: str,
    seed: int,
    out_path: Path,
    *,
    replicates: Optional[int] = None,
    argv: Sequence[str] = (),
) -> int:
    results = run_suite(suite, seed, replicates=replicates)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"[{status}] {r.suite}/{r.name}: {r.detail}")
    _write_csv(out_path, VALIDATION_HEADER, (r.to_row() for r in results))
    _write_manifest(
        out_path,
        RunManifest(
            command=list(argv),
            seed=seed,
            seed_scheme=SEED_SCHEME,
            block_size=settings.block_size,
            parameters={"suite": suite, "replicates": replicates},
            outputs=[out_path.name],
        ),
    )
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coalrates",
        description="Decay rates of three-taxon species tree estimators",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    rates = sub.add_parser("rates", help="Rate curves on a uniform grid (CSV + SVG)")
    rates.add_argument("--t-min", type=float, default=0.005)
    rates.add_argument("--t-max", type=float, default=1.0)
    rates.add_argument("--steps", type=int, default=200)
    rates.add_argument("--out", type=Path, default=None, help="CSV path; SVG is written beside it")
    rates.add_argument("--with-asymptotes", action="store_true")

    figure = sub.add_parser("figure", help="Reproduce one of the three rate figures")
    figure.add_argument("number", type=int, choices=sorted(FIGURES))
    figure.add_argument("--out", type=Path, default=None, help="Output directory")

    simulate = sub.add_parser("simulate", help="Monte Carlo failure probabilities")
    simulate.add_argument("--t", type=float, required=True)
    simulate.add_argument("--L", dest="loci", type=int, required=True)
    simulate.add_argument("--replicates", type=int, default=100_000)
    simulate.add_argument(
        "--methods",
        type=_methods_arg,
        default=tuple(MethodId),
        help="Comma list of: " + ", ".join(m.value for m in MethodId),
    )
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", type=Path, default=None)
    simulate.add_argument(
        "--dump",
        type=Path,
        default=None,
        help="Directory for one sample dataset and its per-method estimates",
    )

    validate = sub.add_parser("validate", help="Run validation suites")
    validate.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    validate.add_argument("--seed", type=int, default=1)
    validate.add_argument("--replicates", type=int, default=None)
    validate.add_argument("--out", type=Path, default=None)
    return parser


def _check_args(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "rates":
        if not (0.0 <= args.t_min < args.t_max):
            parser.error("--t-min must be >= 0 and below --t-max")
        if args.steps < 2:
            parser.error("--steps must be >= 2")
    if args.command == "simulate":
        if not (args.t >= 0.0):
            parser.error("--t must be >= 0")
        if args.loci < 1 or args.replicates < 1:
            parser.error("--L and --replicates must be >= 1")
        if args.seed < 0:
            parser.error("--seed must be >= 0")
        if not args.methods:
            parser.error("--methods needs at least one method")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_args(parser, args)
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "rates":
            cmd_rates(
                args.t_min,
                args.t_max,
                args.steps,
                args.out or _default_out("rates.csv"),
                args.with_asymptotes,
                argv=argv,
            )
        elif args.command == "figure":
            cmd_figure(args.number, args.out or Path(settings.output_dir), argv=argv)
        elif args.command == "simulate":
            cmd_simulate(
                args.t,
                args.loci,
                args.replicates,
                args.methods,
                args.seed,
                args.out or _default_out("simulate.csv"),
                argv=argv,
            )
            if args.dump is not None:
                cmd_dump_dataset(args.t, args.loci, args.methods, args.seed, args.dump, argv=argv)
        else:
            return cmd_validate(
                args.suite,
                args.seed,
                args.out or _default_out("validate.csv"),
                replicates=args.replicates,
                argv=argv,
            )
    except OSError as exc:
        logger.error("I/O error on %s: %s", exc.filename or "output", exc)
        return EXIT_FAILED
    except (SolverError, ChernoffPreconditionError) as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_FAILED
    return EXIT_OK
