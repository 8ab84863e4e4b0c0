"""Experiment configuration: pydantic models, built-in presets and the flat key-value format.

Format: one `section.key = value` per line, `#` starts a comment, blank lines
are ignored, lists are comma separated and an empty value means unset. Keys a
file does not mention keep the defaults of the preset named by `name`.
"""

import logging
import types
from enum import Enum
from typing import Optional, Union, get_args, get_origin

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .errors import ConfigError, TimeStepTooLargeError
from .operators import SpectrumKind, build_spectrum
from .stability import ModelParams

logger = logging.getLogger(__name__)

BUILTIN_NAMES = (
    "test1_noise_intensity",
    "test2_moment_orders",
    "test3_pathwise_stabilization",
    "test4_power_sensitivity",
    "test5_sharpness",
    "regions",
    "convergence",
)
CUSTOM_NAME = "custom"


class ExperimentMode(str, Enum):
    MOMENTS = "moments"
    PATHS = "paths"
    REGIONS = "regions"
    CONVERGENCE = "convergence"


class OutputFormat(str, Enum):
    CSV = "csv"
    SVG = "svg"
    BOTH = "both"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class OperatorSection(_Section):
    kind: SpectrumKind = Field(default=SpectrumKind.HEAT, description="Operator A whose spectrum drives the modes")
    s: Optional[float] = Field(default=None, description="Fractional power, fractional operator only")
    alpha: Optional[float] = Field(default=None, description="Degeneracy exponent of a(x) = x^alpha, degenerate operator only")
    grid_points: int = Field(default=4096, ge=64, description="Finite-difference grid for the degenerate eigenvalue")


class ParamsSection(_Section):
    beta0: list[float] = Field(default=[0.0], min_length=1, description="Drift coefficients")
    beta1: list[float] = Field(default=[0.0], min_length=1, description="Noise intensities")
    p: list[float] = Field(default=[2.0], min_length=1, description="Moment orders or powers, each >= 1")

    @field_validator("p")
    @classmethod
    def _orders_at_least_one(cls, value: list[float]) -> list[float]:
        if any(p < 1.0 for p in value):
            raise ValueError("every p must be >= 1")
        return value

    def variants(self) -> list[ModelParams]:
        """Every (beta0, beta1, p) combination, beta0 outermost and p innermost."""
        return [
            ModelParams(beta0=beta0, beta1=beta1, p=p)
            for beta0 in self.beta0
            for beta1 in self.beta1
            for p in self.p
        ]


class DiscSection(_Section):
    n_modes: int = Field(default=16, ge=1, description="Number of spectral modes N")
    tau: float = Field(default=1e-3, gt=0.0, description="Time step")
    horizon: float = Field(default=0.2, ge=0.0, description="Time horizon T, rounded up to whole steps")


class EnsembleSection(_Section):
    n_paths: int = Field(default=2000, ge=1, description="Monte Carlo sample paths")
    master_seed: int = Field(default=7, ge=0, lt=2**64, description="Master seed; --seed overrides it")
    output_stride: int = Field(default=1, ge=1, description="Record every m-th step")
    normalize: bool = Field(default=False, description="Divide moments by their t=0 value")


class AnalysisSection(_Section):
    mode: ExperimentMode = Field(default=ExperimentMode.MOMENTS, description="What the experiment computes")
    fit_window: Optional[tuple[float, float]] = Field(
        default=None, description="Decay fit window t_lo, t_hi; unset means the second half of the horizon"
    )
    tail_fraction: float = Field(default=0.5, gt=0.0, lt=1.0, description="Share of recorded times averaged by pathwise exponents")
    realizations: int = Field(default=1, ge=1, description="Scheme sample paths per variant, seeded master_seed + r")
    exact_paths: int = Field(default=32, ge=1, description="Exact-solution paths averaged for the pathwise exponent")


class RegionsSection(_Section):
    p_values: list[float] = Field(default=[1.0, 2.0, 3.0, 4.0], min_length=1, description="Moment orders with a boundary curve each")
    lambda1: Optional[float] = Field(default=None, gt=0.0, description="Principal eigenvalue; unset means lambda_1 of the operator")
    beta1_max: float = Field(default=10.0, gt=0.0, description="Boundary curves span beta1 in [-beta1_max, beta1_max]")
    samples: int = Field(default=201, ge=1, description="beta1 samples per boundary curve")
    beta0_min: float = Field(default=-50.0, description="Lower beta0 edge of the classification grid")
    beta0_max: float = Field(default=60.0, description="Upper beta0 edge of the classification grid")
    map_samples: int = Field(default=41, ge=2, description="Grid points per axis of the classification grid")

    @model_validator(mode="after")
    def _ordered_range(self) -> "RegionsSection":
        if self.beta0_min >= self.beta0_max:
            raise ValueError("beta0_min must be smaller than beta0_max")
        return self


class ConvergenceSection(_Section):
    taus: list[float] = Field(
        default=[2.0 ** -8, 2.0 ** -9, 2.0 ** -10, 2.0 ** -11],
        min_length=2,
        description="Step sizes of the strong error study, each a multiple of the smallest",
    )
    n_paths: int = Field(default=8, ge=1, description="Shared paths averaged by the strong error study")
    rate_taus: list[float] = Field(
        default=[1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5],
        min_length=1,
        description="Step sizes of the discrete second-moment rate table",
    )


class OutputsSection(_Section):
    dir: Optional[str] = Field(default=None, description="Output root; unset means --out-dir or STOCHSTAB_OUT_DIR")
    format: OutputFormat = Field(default=OutputFormat.CSV, description="csv writes data and plot scripts, svg also renders figures")
    include_coeffs: bool = Field(default=False, description="Add Y_1..Y_N columns to trajectory CSVs")


_SECTIONS: dict[str, type[_Section]] = {
    "operator": OperatorSection,
    "params": ParamsSection,
    "disc": DiscSection,
    "ensemble": EnsembleSection,
    "analysis": AnalysisSection,
    "regions": RegionsSection,
    "convergence": ConvergenceSection,
    "outputs": OutputsSection,
}


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(description="A built-in experiment name or custom")
    operator: OperatorSection = OperatorSection()
    params: ParamsSection = ParamsSection()
    disc: DiscSection = DiscSection()
    ensemble: EnsembleSection = EnsembleSection()
    analysis: AnalysisSection = AnalysisSection()
    regions: RegionsSection = RegionsSection()
    convergence: ConvergenceSection = ConvergenceSection()
    outputs: OutputsSection = OutputsSection()

    @field_validator("name")
    @classmethod
    def _known_name(cls, value: str) -> str:
        if value not in BUILTIN_NAMES and value != CUSTOM_NAME:
            raise ValueError(f"unknown experiment {value!r}; expected one of {', '.join(BUILTIN_NAMES)} or {CUSTOM_NAME}")
        return value

    @model_validator(mode="after")
    def _steps_invertible(self) -> "ExperimentConfig":
        if self.analysis.mode is ExperimentMode.CONVERGENCE and len(self.params.variants()) != 1:
            raise ValueError("a convergence study takes exactly one (beta0, beta1, p) variant")
        if self.analysis.mode is ExperimentMode.REGIONS:
            return self

        # lambda_1 bounds every lambda_k from below, so mode 1 has the smallest denominator
        lambda1 = self.lambda1()
        taus = [self.disc.tau]
        if self.analysis.mode is ExperimentMode.CONVERGENCE:
            taus += self.convergence.taus + self.convergence.rate_taus
        for params in self.params.variants():
            for tau in taus:
                if 1.0 + tau * (lambda1 - params.beta0) <= 0.0:
                    raise TimeStepTooLargeError(1, lambda1, params.beta0, tau)
        return self

    def lambda1(self) -> float:
        spectrum = build_spectrum(
            self.operator.kind,
            n_modes=1,
            s=self.operator.s,
            alpha=self.operator.alpha,
            grid_points=self.operator.grid_points,
        )
        return spectrum.lambda1


# -- built-in presets ---------------------------------------------------------

def _test1(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.BIHARMONIC_HINGED},
        "params": {"beta0": [1.0], "beta1": [2.0, 6.0, 9.0], "p": [2.0]},
        "disc": {"n_modes": 100 if published else 16, "tau": 1e-4 if published else 1e-3, "horizon": 0.2},
        "ensemble": {"n_paths": 50000 if published else 2000, "output_stride": 10 if published else 1},
        "analysis": {"mode": ExperimentMode.MOMENTS, "fit_window": (0.0, 0.01)},
    }


def _test2(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.BIHARMONIC_HINGED},
        "params": {"beta0": [1.0], "beta1": [11.0], "p": [1.0, 2.0, 3.0]},
        "disc": {"n_modes": 100 if published else 16, "tau": 1e-4 if published else 1e-3, "horizon": 0.2},
        "ensemble": {"n_paths": 100000 if published else 2000, "output_stride": 10 if published else 1, "normalize": True},
        "analysis": {"mode": ExperimentMode.MOMENTS, "fit_window": (0.0, 0.01)},
    }


def _test3(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.BIHARMONIC_HINGED},
        "params": {"beta0": [100.0], "beta1": [2.4, 6.0], "p": [2.0]},
        "disc": {"n_modes": 100 if published else 16, "tau": 1e-4 if published else 1e-3, "horizon": 8.0},
        "ensemble": {"n_paths": 1, "output_stride": 10 if published else 1},
        "analysis": {"mode": ExperimentMode.PATHS, "realizations": 3},
    }


def _test4(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.BIHARMONIC_HINGED},
        "params": {"beta0": [100.0], "beta1": [2.7], "p": [1.0, 2.0, 3.0]},
        "disc": {"n_modes": 100 if published else 16, "tau": 1e-4 if published else 1e-3, "horizon": 3.0},
        "ensemble": {"n_paths": 1, "output_stride": 10 if published else 1},
        "analysis": {"mode": ExperimentMode.PATHS, "realizations": 1},
    }


def _test5(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.BIHARMONIC_HINGED},
        "params": {"beta0": [97.8], "beta1": [0.5, 1.5], "p": [1.0]},
        "disc": {"n_modes": 100 if published else 16, "tau": 1e-4 if published else 1e-3, "horizon": 8.0 if published else 50.0},
        "ensemble": {"n_paths": 1, "output_stride": 10},
        "analysis": {"mode": ExperimentMode.PATHS, "realizations": 1},
    }


def _regions(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.HEAT},
        "disc": {"n_modes": 1},
        "analysis": {"mode": ExperimentMode.REGIONS},
        "regions": {"samples": 2001 if published else 201, "map_samples": 201 if published else 41},
    }


def _convergence(published: bool) -> dict:
    return {
        "operator": {"kind": SpectrumKind.HEAT},
        "params": {"beta0": [1.0], "beta1": [1.0], "p": [2.0]},
        "disc": {"n_modes": 1, "tau": 2.0 ** -11, "horizon": 1.0},
        "analysis": {"mode": ExperimentMode.CONVERGENCE},
        "convergence": {"n_paths": 64 if published else 8},
    }


_PRESETS = {
    "test1_noise_intensity": _test1,
    "test2_moment_orders": _test2,
    "test3_pathwise_stabilization": _test3,
    "test4_power_sensitivity": _test4,
    "test5_sharpness": _test5,
    "regions": _regions,
    "convergence": _convergence,
}


def builtin_config(name: str, paper_scale: bool = False) -> ExperimentConfig:
    """Preset for a built-in experiment at desk scale, or at the published scale."""
    if name == CUSTOM_NAME:
        return ExperimentConfig(name=CUSTOM_NAME)
    if name not in _PRESETS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(BUILTIN_NAMES)}")
    return ExperimentConfig(name=name, **_PRESETS[name](paper_scale))


# -- flat key-value format ----------------------------------------------------

def _is_sequence(annotation) -> bool:
    origin = get_origin(annotation)
    if origin in (list, tuple):
        return True
    if origin in (Union, types.UnionType):
        return any(_is_sequence(arg) for arg in get_args(annotation))
    return False


def _known_keys() -> dict[str, bool]:
    keys = {"name": False}
    for section, model in _SECTIONS.items():
        for field, info in model.model_fields.items():
            keys[f"{section}.{field}"] = _is_sequence(info.annotation)
    return keys


_KNOWN_KEYS = _known_keys()


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(item) for item in value)
    return str(value)


def to_flat(config: ExperimentConfig) -> dict[str, str]:
    """Dotted key -> formatted value, in the documented key order."""
    flat = {"name": config.name}
    for section in _SECTIONS:
        values = getattr(config, section)
        for field in type(values).model_fields:
            flat[f"{section}.{field}"] = _format_value(getattr(values, field))
    return flat


def serialize_config(config: ExperimentConfig) -> str:
    lines = [f"{key} = {value}".rstrip() for key, value in to_flat(config).items()]
    return "\n".join(lines) + "\n"


def _parse_value(raw: str, is_sequence: bool):
    if raw == "":
        return None
    if is_sequence:
        return [item.strip() for item in raw.split(",")]
    return raw


def parse_config(text: str, paper_scale: bool = False) -> ExperimentConfig:
    """Parse the flat format; errors carry the 1-based line of the offending key."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}, first set on line {entries[key][1]}", lineno)
        entries[key] = (value, lineno)

    if "name" not in entries:
        raise ConfigError("missing required key 'name'")
    name, name_line = entries.pop("name")
    if name not in BUILTIN_NAMES and name != CUSTOM_NAME:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(BUILTIN_NAMES)} or {CUSTOM_NAME}", name_line)

    data = builtin_config(name, paper_scale).model_dump()
    for key, (value, _) in entries.items():
        section, field = key.split(".", 1)
        data[section][field] = _parse_value(value, _KNOWN_KEYS[key])

    try:
        config = ExperimentConfig.model_validate(data)
    except PydanticValidationError as e:
        error = e.errors()[0]
        location = [str(part) for part in error["loc"][:2]]
        key = ".".join(location)
        line = entries[key][1] if key in entries else None
        message = f"{key}: {error['msg']}" if key else error["msg"]
        raise ConfigError(message, line) from e

    logger.info(f"Loaded experiment config | name={config.name} keys_set={len(entries) + 1}")
    return config


def _type_label(annotation) -> str:
    args = [arg for arg in get_args(annotation) if arg is not type(None)]
    origin = get_origin(annotation)
    if origin in (Union, types.UnionType):
        return f"optional {_type_label(args[0])}"
    if origin in (list, tuple):
        return "list"
    if isinstance(annotation, type) and issubclass(annotation, Enum):
        return " | ".join(member.value for member in annotation)
    return getattr(annotation, "__name__", str(annotation))


def config_reference() -> str:
    """Key reference rendered from the field descriptions, shown by --help."""
    lines = ["config keys (flat `section.key = value`, lists comma separated, empty value = unset):",
             f"  name  (str)  {ExperimentConfig.model_fields['name'].description}"]
    for section, model in _SECTIONS.items():
        for field, info in model.model_fields.items():
            default = _format_value(info.default) or "unset"
            lines.append(f"  {section}.{field}  ({_type_label(info.annotation)}, default {default})  {info.description}")
    return "\n".join(lines)
