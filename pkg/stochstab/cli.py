"""Command line: `python -m stochstab <command> ...`.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError as PydanticValidationError

from .errors import StochStabError, ValidationError
from .experiment_config import (
    BUILTIN_NAMES,
    OutputFormat,
    builtin_config,
    config_reference,
    parse_config,
)
from .experiments import ExperimentRunner
from .montecarlo import EnsembleConfig, EnsembleRunner, fit_decay_rate
from .operators import SpectrumKind, build_spectrum, spectrum_frame
from .plotting import plot_curves_svg
from .sde_engine import (
    Discretization,
    InitialKind,
    generate_path,
    project_initial_condition,
    simulate_path,
    trajectory_frame,
)
from .settings import Settings, configure_logging, load_settings
from .stability import ModelParams, RegionKind, classify, region_boundary, region_frame, symmetric_samples

logger = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors turned into exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default STOCHSTAB_SEED)")
    common.add_argument("--out-dir", default=None, help="output root (default STOCHSTAB_OUT_DIR)")
    common.add_argument("--format", choices=[f.value for f in OutputFormat], default=None, help="figure output")
    common.add_argument("--config", default=None, help="experiment config file, see the key reference below")
    common.add_argument("--workers", type=int, default=None, help="ensemble threads (default STOCHSTAB_WORKERS)")
    common.add_argument("--log-level", default=None, help="logging level (default STOCHSTAB_LOG_LEVEL)")
    common.add_argument("--paper-scale", action="store_true", help="use the published experiment sizes")
    return common


def _model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta0", type=float, required=True, help="drift coefficient")
    parser.add_argument("--beta1", type=float, required=True, help="noise intensity")
    parser.add_argument("--p", type=float, default=2.0, help="moment order (default 2)")


def _operator_options(parser: argparse.ArgumentParser, n_modes: int) -> None:
    parser.add_argument("--operator", choices=[k.value for k in SpectrumKind], default=SpectrumKind.HEAT.value)
    parser.add_argument("--n-modes", type=int, default=n_modes, help=f"spectral modes (default {n_modes})")
    parser.add_argument("--s", type=float, default=None, help="fractional power")
    parser.add_argument("--alpha", type=float, default=None, help="degeneracy exponent")
    parser.add_argument("--grid-points", type=int, default=4096, help="degenerate eigenvalue grid")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(
        prog="stochstab",
        description="Stability lab for linear evolution equations with multiplicative noise.",
        epilog=config_reference(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    sub = commands.add_parser("classify", parents=[common], help="moment and almost sure verdicts")
    _model_options(sub)
    sub.add_argument("--lambda1", type=float, required=True, help="principal eigenvalue")
    sub.set_defaults(handler=_classify)

    sub = commands.add_parser("region", parents=[common], help="stability region boundary as CSV")
    sub.add_argument("--kind", choices=[k.value for k in RegionKind], default=RegionKind.MOMENT.value)
    sub.add_argument("--lambda1", type=float, required=True)
    sub.add_argument("--p", type=float, default=2.0)
    sub.add_argument("--beta1-max", type=float, default=10.0)
    sub.add_argument("--samples", type=int, default=21)
    sub.set_defaults(handler=_region)

    sub = commands.add_parser("eigen", parents=[common], help="operator spectrum as CSV")
    _operator_options(sub, n_modes=5)
    sub.set_defaults(handler=_eigen)

    for name, handler, help_text in (
        ("simulate", _simulate, "one scheme trajectory"),
        ("ensemble", _ensemble, "Monte Carlo moments of the scheme"),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        _model_options(sub)
        _operator_options(sub, n_modes=16)
        sub.add_argument("--tau", type=float, default=1e-3)
        sub.add_argument("--horizon", type=float, default=0.2)
        if name == "simulate":
            sub.add_argument("--include-coeffs", action="store_true", help="add Y_1..Y_N columns")
        else:
            sub.add_argument("--n-paths", type=int, default=2000)
            sub.add_argument("--stride", type=int, default=1)
            sub.add_argument("--normalize", action="store_true")
        sub.set_defaults(handler=handler)

    sub = commands.add_parser(
        "experiment",
        parents=[common],
        help="run a built-in or custom experiment",
        epilog=config_reference(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub.add_argument("name", nargs="?", default=None, help=f"one of {', '.join(BUILTIN_NAMES)}")
    sub.set_defaults(handler=_experiment)

    sub = commands.add_parser("convergence", parents=[common], help="strong error and rate convergence study")
    sub.set_defaults(handler=_experiment, name="convergence")
    return parser


# -- handlers -----------------------------------------------------------------

def _out_dir(args, settings: Settings) -> Path:
    return Path(args.out_dir or settings.out_dir)


def _spectrum(args):
    return build_spectrum(args.operator, n_modes=args.n_modes, s=args.s, alpha=args.alpha, grid_points=args.grid_points)


def _classify(args, settings: Settings) -> int:
    params = ModelParams(beta0=args.beta0, beta1=args.beta1, p=args.p)
    verdict = classify(params, args.lambda1)
    moment = f"yes, mu_p = {verdict.mu_p:.6g}" if verdict.moment_stable else "not guaranteed"
    almost_sure = f"yes, mu_as = {verdict.mu_as:.6g}" if verdict.as_stable else "not guaranteed"
    print(f"lambda1 = {args.lambda1:g}, beta0 = {params.beta0:g}, beta1 = {params.beta1:g}, p = {params.p:g}")
    print(f"p-th moment exponentially stable: {moment}")
    print(f"almost surely exponentially stable: {almost_sure}")
    return 0


def _region(args, settings: Settings) -> int:
    samples = symmetric_samples(args.beta1_max, args.samples)
    points = region_boundary(args.kind, args.lambda1, args.p, samples)
    sys.stdout.write(region_frame(points).to_csv(index=False, lineterminator="\n"))
    return 0


def _eigen(args, settings: Settings) -> int:
    sys.stdout.write(spectrum_frame(_spectrum(args)).to_csv(index=False, lineterminator="\n"))
    return 0


def _scheme_inputs(args):
    spectrum = _spectrum(args)
    params = ModelParams(beta0=args.beta0, beta1=args.beta1, p=args.p)
    disc = Discretization(n_modes=spectrum.n_modes, tau=args.tau, horizon=args.horizon)
    y0 = project_initial_condition(InitialKind.PAPER_POLYNOMIAL, spectrum.n_modes)
    return spectrum, params, disc, y0


def _simulate(args, settings: Settings) -> int:
    spectrum, params, disc, y0 = _scheme_inputs(args)
    seed = settings.seed if args.seed is None else args.seed
    trajectory = simulate_path(y0, params, spectrum, disc, generate_path(seed, disc))
    frame = trajectory_frame(trajectory, include_coeffs=args.include_coeffs)

    out_dir = _out_dir(args, settings)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / "simulate.csv", index=False, lineterminator="\n")
    print(out_dir / "simulate.csv")
    if args.format in (OutputFormat.SVG.value, OutputFormat.BOTH.value):
        curves = [("norm_sq", frame["t"].to_numpy(), frame["norm_sq"].to_numpy())]
        print(plot_curves_svg(out_dir / "simulate.svg", "sample path energy", curves, "t", "||Y_n||^2", logy=True))
    return 0


def _ensemble(args, settings: Settings) -> int:
    spectrum, params, disc, y0 = _scheme_inputs(args)
    cfg = EnsembleConfig(
        n_paths=args.n_paths,
        master_seed=settings.seed if args.seed is None else args.seed,
        output_stride=args.stride,
        normalize=args.normalize,
    )
    runner = EnsembleRunner(workers=args.workers or settings.workers)
    series = runner.run_ensemble(y0, params, spectrum, disc, cfg)

    out_dir = _out_dir(args, settings)
    out_dir.mkdir(parents=True, exist_ok=True)
    series.to_frame().to_csv(out_dir / "ensemble.csv", index=False, lineterminator="\n")
    print(out_dir / "ensemble.csv")
    if args.format in (OutputFormat.SVG.value, OutputFormat.BOTH.value):
        curves = [(f"p={params.p:g}", series.times, series.values)]
        print(plot_curves_svg(out_dir / "ensemble.svg", "moment estimate", curves, "t", "E||Y_n||^p", logy=True))
    fit = fit_decay_rate(series)
    print(f"fitted decay rate {fit.rate:.6g} +/- {fit.stderr:.2g} (r^2 = {fit.r_squared:.4f})")
    return 0


def _experiment(args, settings: Settings) -> int:
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        config = parse_config(text, paper_scale=args.paper_scale)
        if args.name and args.name != config.name:
            raise ValidationError(f"config file names experiment {config.name!r}, command line asks for {args.name!r}")
    elif args.name:
        config = builtin_config(args.name, paper_scale=args.paper_scale)
    else:
        raise ValidationError("name an experiment or pass --config")

    runner = ExperimentRunner(out_root=_out_dir(args, settings), workers=args.workers or settings.workers)
    seed = settings.seed if args.seed is None else args.seed
    result = runner.run(config, seed=seed, output_format=args.format)
    for name in result.files:
        print(result.out_dir / name)
    return 0


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    try:
        settings = load_settings()
        configure_logging(args.log_level or settings.log_level)
        return args.handler(args, settings)
    except (ValidationError, PydanticValidationError) as e:
        logger.error(f"Invalid input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (StochStabError, OSError) as e:
        logger.error(f"Run failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
