"""Experiment runner: resolves a config, runs it and writes CSVs, figures and a manifest."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from .errors import ValidationError
from .experiment_config import (
    ExperimentConfig,
    ExperimentMode,
    OutputFormat,
    to_flat,
)
from .montecarlo import (
    EnsembleConfig,
    EnsembleRunner,
    clamp_underflow,
    discrete_second_moment_series,
    exact_pathwise_exponents,
    fit_decay_rate,
    pathwise_exponent,
)
from .operators import EigenSpectrum, build_spectrum, spectrum_frame
from .plotting import plot_curves_svg, write_plot_script
from .sde_engine import (
    Discretization,
    InitialKind,
    discrete_second_moment_rate,
    generate_path,
    project_initial_condition,
    simulate_path,
    strong_error_study,
    trajectory_frame,
)
from .stability import (
    ModelParams,
    RegionKind,
    as_decay_rate,
    classify,
    moment_decay_rate,
    noise_threshold,
    region_boundary,
    region_frame,
    stability_map,
    symmetric_samples,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


def _num(value: float) -> str:
    """Shortest round-trip text for a manifest value."""
    return repr(float(value))


def variant_label(params: ModelParams) -> str:
    return f"b0_{params.beta0:g}_b1_{params.beta1:g}_p_{params.p:g}"


@dataclass
class ExperimentResult:
    name: str
    out_dir: Path
    files: list[str] = field(default_factory=list)
    manifest: dict[str, str] = field(default_factory=dict)


class ExperimentRunner:
    """Runs one ExperimentConfig into `<out_root>/<name>/`.

    The worker count only affects speed; it is not written anywhere.
    """

    def __init__(self, out_root: str | Path = "output", workers: int = 1):
        self.out_root = Path(out_root)
        self.ensembles = EnsembleRunner(workers=workers)

    def resolve(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        output_format: Optional[OutputFormat | str] = None,
    ) -> ExperimentConfig:
        """Apply command-line overrides and re-validate."""
        data = config.model_dump()
        if seed is not None:
            data["ensemble"]["master_seed"] = seed
        if output_format is not None:
            data["outputs"]["format"] = output_format
        try:
            return ExperimentConfig.model_validate(data)
        except PydanticValidationError as e:
            error = e.errors()[0]
            key = ".".join(str(part) for part in error["loc"][:2])
            raise ValidationError(f"{key}: {error['msg']}") from e

    def run(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        output_format: Optional[OutputFormat | str] = None,
    ) -> ExperimentResult:
        config = self.resolve(config, seed, output_format)
        out_dir = Path(config.outputs.dir) / config.name if config.outputs.dir else self.out_root / config.name
        out_dir.mkdir(parents=True, exist_ok=True)
        result = ExperimentResult(name=config.name, out_dir=out_dir)
        logger.info(f"Running experiment {config.name} | mode={config.analysis.mode.value} out_dir={out_dir}")

        spectrum = build_spectrum(
            config.operator.kind,
            n_modes=config.disc.n_modes,
            s=config.operator.s,
            alpha=config.operator.alpha,
            grid_points=config.operator.grid_points,
        )
        if spectrum.n_modes != config.disc.n_modes:
            raise ValidationError(
                f"the {spectrum.kind.value} operator provides {spectrum.n_modes} mode(s); set disc.n_modes = {spectrum.n_modes}"
            )
        derived = {"derived.lambda1": _num(spectrum.lambda1)}
        self._write_csv(result, "spectrum.csv", spectrum_frame(spectrum))

        mode = config.analysis.mode
        if mode is ExperimentMode.MOMENTS:
            self._run_moments(config, spectrum, result, derived)
        elif mode is ExperimentMode.PATHS:
            self._run_paths(config, spectrum, result, derived)
        elif mode is ExperimentMode.REGIONS:
            self._run_regions(config, spectrum, result, derived)
        else:
            self._run_convergence(config, spectrum, result, derived)

        result.manifest = {**to_flat(config), **dict(sorted(derived.items()))}
        manifest_text = "".join(f"{key} = {value}\n".replace(" \n", "\n") for key, value in result.manifest.items())
        (out_dir / MANIFEST_NAME).write_text(manifest_text, encoding="utf-8")
        result.files.append(MANIFEST_NAME)
        result.files.sort()
        logger.info(f"Experiment {config.name} finished | files={len(result.files)}")
        return result

    # -- shared helpers -------------------------------------------------------

    def _write_csv(self, result: ExperimentResult, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(result.out_dir / name, index=False, lineterminator="\n")
        result.files.append(name)
        logger.info(f"Wrote {name} | Shape: {frame.shape}")

    def _write_figure(
        self,
        config: ExperimentConfig,
        result: ExperimentResult,
        stem: str,
        title: str,
        csv_files: list[str],
        x: str,
        y: str,
        ylabel: str,
        logy: bool,
    ) -> None:
        output_format = config.outputs.format
        if output_format in (OutputFormat.CSV, OutputFormat.BOTH):
            write_plot_script(result.out_dir / f"plot_{stem}.py", title, csv_files, x, y, ylabel, logy)
            result.files.append(f"plot_{stem}.py")
        if output_format in (OutputFormat.SVG, OutputFormat.BOTH):
            curves = []
            for name in csv_files:
                frame = pd.read_csv(result.out_dir / name)
                curves.append((name[:-4], frame[x].to_numpy(), frame[y].to_numpy()))
            plot_curves_svg(result.out_dir / f"{stem}.svg", title, curves, x, ylabel, logy)
            result.files.append(f"{stem}.svg")

    @staticmethod
    def _verdict_keys(prefix: str, params: ModelParams, lambda1: float) -> dict[str, str]:
        verdict = classify(params, lambda1)
        return {
            f"{prefix}.moment_stable": str(verdict.moment_stable).lower(),
            f"{prefix}.as_stable": str(verdict.as_stable).lower(),
            f"{prefix}.mu_p": _num(verdict.mu_p) if verdict.mu_p is not None else "none",
            f"{prefix}.mu_as": _num(verdict.mu_as) if verdict.mu_as is not None else "none",
        }

    def _initial_state(self, config: ExperimentConfig):
        return project_initial_condition(InitialKind.PAPER_POLYNOMIAL, config.disc.n_modes)

    def _discretization(self, config: ExperimentConfig) -> Discretization:
        return Discretization(n_modes=config.disc.n_modes, tau=config.disc.tau, horizon=config.disc.horizon)

    # -- modes ----------------------------------------------------------------

    def _run_moments(self, config, spectrum: EigenSpectrum, result: ExperimentResult, derived: dict) -> None:
        disc = self._discretization(config)
        y0 = self._initial_state(config)
        ensemble = EnsembleConfig(
            n_paths=config.ensemble.n_paths,
            master_seed=config.ensemble.master_seed,
            output_stride=config.ensemble.output_stride,
            normalize=config.ensemble.normalize,
        )
        window = config.analysis.fit_window
        csv_files = []

        for beta0 in config.params.beta0:
            for beta1 in config.params.beta1:
                base = ModelParams(beta0=beta0, beta1=beta1)
                all_series = self.ensembles.run_ensemble_orders(y0, base, spectrum, disc, ensemble, config.params.p)
                for p, series in all_series.items():
                    params = ModelParams(beta0=beta0, beta1=beta1, p=p)
                    label = variant_label(params)
                    prefix = f"derived.{label}"
                    name = f"moments_{label}.csv"
                    self._write_csv(result, name, series.to_frame())
                    csv_files.append(name)

                    fit = fit_decay_rate(series, window)
                    peak = int(np.argmax(series.values))
                    derived.update(self._verdict_keys(prefix, params, spectrum.lambda1))
                    derived.update(
                        {
                            f"{prefix}.rate": _num(fit.rate),
                            f"{prefix}.rate_stderr": _num(fit.stderr),
                            f"{prefix}.r_squared": _num(fit.r_squared),
                            f"{prefix}.initial_value": _num(series.values[0]),
                            f"{prefix}.final_value": _num(series.values[-1]),
                            f"{prefix}.peak_value": _num(series.values[peak]),
                            f"{prefix}.peak_time": _num(series.times[peak]),
                        }
                    )

                    if p == 2.0:
                        exact = discrete_second_moment_series(y0, params, spectrum, disc, ensemble.output_stride)
                        if ensemble.normalize:
                            exact.values = exact.values / exact.values[0]
                        exact_name = f"moments_{label}_discrete.csv"
                        self._write_csv(result, exact_name, exact.to_frame())
                        positive = (series.times > 0.0) & (series.stderr > 0.0)
                        z_max = (
                            float(np.max(np.abs(series.values - exact.values)[positive] / series.stderr[positive]))
                            if np.any(positive)
                            else 0.0
                        )
                        derived[f"{prefix}.discrete_rate"] = _num(fit_decay_rate(exact, window).rate)
                        derived[f"{prefix}.max_z_vs_discrete"] = _num(z_max)

        ylabel = "E||Y_n||^p / E||Y_0||^p" if config.ensemble.normalize else "E||Y_n||^p"
        self._write_figure(config, result, "moments", config.name, csv_files, "t", "value", ylabel, logy=True)

    def _run_paths(self, config, spectrum: EigenSpectrum, result: ExperimentResult, derived: dict) -> None:
        disc = self._discretization(config)
        y0 = self._initial_state(config)
        seed = config.ensemble.master_seed
        stride = config.ensemble.output_stride
        tail = config.analysis.tail_fraction
        csv_files = []

        for beta0 in config.params.beta0:
            for beta1 in config.params.beta1:
                # one set of realizations per (beta0, beta1), shared by every p
                base = ModelParams(beta0=beta0, beta1=beta1)
                if config.outputs.include_coeffs:
                    frames = [
                        trajectory_frame(
                            simulate_path(y0, base, spectrum, disc, generate_path(seed + r, disc)), include_coeffs=True
                        ).iloc[::stride].reset_index(drop=True)
                        for r in range(config.analysis.realizations)
                    ]
                else:
                    paths = self.ensembles.sample_paths(y0, base, spectrum, disc, seed, config.analysis.realizations, stride)
                    frames = [pd.DataFrame({"t": times, "norm_sq": norm_sq}) for times, norm_sq in paths]

                for p in config.params.p:
                    params = ModelParams(beta0=beta0, beta1=beta1, p=p)
                    label = variant_label(params)
                    prefix = f"derived.{label}"
                    derived.update(self._verdict_keys(prefix, params, spectrum.lambda1))
                    threshold = noise_threshold(beta0, spectrum.lambda1)
                    derived[f"{prefix}.noise_threshold"] = _num(threshold) if threshold is not None else "none"
                    derived[f"{prefix}.predicted_exponent"] = _num(-as_decay_rate(params, spectrum.lambda1))

                    for r, base_frame in enumerate(frames):
                        norm_sq = base_frame["norm_sq"].to_numpy()
                        frame = base_frame.copy()
                        frame.insert(2, "norm_p", norm_sq ** (p / 2.0))
                        name = f"path_{label}_r{r}.csv"
                        self._write_csv(result, name, frame)
                        csv_files.append(name)

                        energy, clamped = clamp_underflow((norm_sq / norm_sq[0]) ** (p / 2.0))
                        derived[f"{prefix}.r{r}.seed"] = str(seed + r)
                        derived[f"{prefix}.r{r}.exponent"] = _num(pathwise_exponent(frame["t"].to_numpy(), energy, tail))
                        derived[f"{prefix}.r{r}.clamped"] = str(clamped)

                    exponents, exact_clamped = exact_pathwise_exponents(
                        y0, params, spectrum, disc.horizon, disc.tau, config.analysis.exact_paths, seed, tail
                    )
                    stderr = float(np.std(exponents, ddof=1) / math.sqrt(exponents.size)) if exponents.size > 1 else 0.0
                    derived[f"{prefix}.exact_exponent_mean"] = _num(np.mean(exponents))
                    derived[f"{prefix}.exact_exponent_stderr"] = _num(stderr)
                    derived[f"{prefix}.exact_clamped"] = str(exact_clamped)

        self._write_figure(config, result, "paths", config.name, csv_files, "t", "norm_p", "||Y_n||^p", logy=True)

    def _run_regions(self, config, spectrum: EigenSpectrum, result: ExperimentResult, derived: dict) -> None:
        regions = config.regions
        lambda1 = regions.lambda1 if regions.lambda1 is not None else spectrum.lambda1
        samples = symmetric_samples(regions.beta1_max, regions.samples)
        derived["derived.regions.lambda1"] = _num(lambda1)
        csv_files = []

        for p in regions.p_values:
            points = region_boundary(RegionKind.MOMENT, lambda1, p, samples)
            name = f"region_moment_p_{p:g}.csv"
            self._write_csv(result, name, region_frame(points))
            csv_files.append(name)
            intercept = dict(points).get(0.0)
            derived[f"derived.regions.moment_p_{p:g}.intercept"] = _num(intercept)

        as_points = region_boundary(RegionKind.ALMOST_SURE, lambda1, 2.0, samples)
        self._write_csv(result, "region_as.csv", region_frame(as_points))
        csv_files.append("region_as.csv")

        map_p = 2.0 if 2.0 in regions.p_values else regions.p_values[0]
        beta0_grid = np.linspace(regions.beta0_min, regions.beta0_max, regions.map_samples)
        beta1_grid = symmetric_samples(regions.beta1_max, regions.map_samples)
        grid = stability_map(lambda1, map_p, beta1_grid, beta0_grid)
        self._write_csv(result, "region_map.csv", grid)
        derived["derived.regions.map_p"] = _num(map_p)
        derived["derived.regions.map_moment_stable_share"] = _num(grid["moment_stable"].mean())
        derived["derived.regions.map_as_stable_share"] = _num(grid["as_stable"].mean())

        self._write_figure(config, result, "regions", config.name, csv_files, "beta1", "beta0", "beta0", logy=False)

    def _run_convergence(self, config, spectrum: EigenSpectrum, result: ExperimentResult, derived: dict) -> None:
        params = config.params.variants()[0]
        y0 = self._initial_state(config)
        study = config.convergence

        strong, order = strong_error_study(
            y0, params, spectrum, config.disc.horizon, study.taus, study.n_paths, config.ensemble.master_seed
        )
        self._write_csv(result, "convergence_strong.csv", strong)
        derived["derived.strong_order"] = _num(order)

        second_moment = ModelParams(beta0=params.beta0, beta1=params.beta1, p=2.0)
        mu_2 = moment_decay_rate(second_moment, spectrum.lambda1)
        rates = [discrete_second_moment_rate(second_moment, spectrum.lambda1, tau) for tau in study.rate_taus]
        table = pd.DataFrame(
            {
                "tau": study.rate_taus,
                "discrete_rate": rates,
                "mu_p": mu_2,
                "gap": [abs(rate - mu_2) for rate in rates],
            }
        )
        self._write_csv(result, "convergence_rate.csv", table)
        derived["derived.mu_2"] = _num(mu_2)
        if mu_2 != 0.0:
            derived["derived.final_gap_relative"] = _num(table["gap"].iloc[-1] / abs(mu_2))
        derived.update(self._verdict_keys("derived.verdict", params, spectrum.lambda1))

        self._write_figure(
            config, result, "convergence", config.name, ["convergence_strong.csv"], "tau", "error", "strong error", logy=True
        )
