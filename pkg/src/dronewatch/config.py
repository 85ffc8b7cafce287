"""Run configuration: a flat key = value file, overridable by CLI flags."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentationPolicy
from .fusion import FusionParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # fusion
    alpha1: float = 0.5
    beta1: float = 10.0
    alpha2: float = 0.5
    beta2: float = 10.0
    accept_floor: float = 0.5
    lost_patience: int = 5
    reseed_from_detector: bool = True
    # augmentation
    rotation_min: float = -30.0
    rotation_max: float = 30.0
    scale_min: float = 0.02
    scale_max: float = 0.20
    shadow_prob: float = 0.0
    monochrome_prob: float = 0.0
    blur_prob: float = 0.0
    seed: int = 0
    sprites_per_sample: int = 1
    # residual
    compensate: bool = False
    window: int = 8
    # plugins
    detector: str = "template"
    tracker: str = "blob"
    detector_cmd: str = ""
    tracker_cmd: str = ""
    templates: str = ""
    stride: int = 1
    scales: str = "1.0"
    top_k: int = 5
    timeout: float = 10.0
    # paths
    backgrounds: str = ""
    assets: str = ""

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            alpha1=self.alpha1,
            beta1=self.beta1,
            alpha2=self.alpha2,
            beta2=self.beta2,
            accept_floor=self.accept_floor,
            lost_patience=self.lost_patience,
            reseed_from_detector=self.reseed_from_detector,
        )

    def augmentation_policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(
            rotation_range=(self.rotation_min, self.rotation_max),
            scale_range=(self.scale_min, self.scale_max),
            shadow_probability=self.shadow_prob,
            monochrome_probability=self.monochrome_prob,
            blur_probability=self.blur_prob,
            seed=self.seed,
            sprites_per_sample=self.sprites_per_sample,
        )

    def scale_list(self) -> tuple[float, ...]:
        try:
            values = tuple(float(s) for s in self.scales.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"bad scales list {self.scales!r}") from None
        if not values:
            raise ConfigError("scales must name at least one factor")
        return values


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    try:
        if kind == "bool":
            word = raw.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError as err:
        raise ConfigError(f"config key {name}: {err}") from None


def parse_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys fail."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """File values (when given) overlaid by non-None overrides."""
    values = parse_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config override {key!r}")
        values[key] = value
    return RunConfig(**values)
