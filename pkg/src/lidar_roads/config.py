"""Flat key=value run configuration.

One dataclass holds every tunable of the extraction pipeline.  Files use
`key = value` lines with `#` comments; keys must match field names exactly
and unknown keys are an error, so typos fail fast instead of silently
running with defaults.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or malformed config lines."""


@dataclass
class PipelineConfig:
    # preprocessing
    voxel: float = 0.0            # pre-pipeline downsample, 0 disables
    knn: int = 8                  # neighbours for the outlier filter
    alpha: float = 2.0            # outlier sigma multiplier
    eps: float = 2.0              # clustering radius
    min_pts: int = 10             # core-point threshold
    min_cluster: int = 10         # clusters below this size are dropped
    # ground filtering
    chunk_size: float = 10.0
    ransac_dist: float = 0.3
    ransac_iters: int = 200
    max_tilt: float = 60.0        # degrees, chunks steeper than this drop
    z_percentile: float = 0.10
    z_band: float = 0.30
    min_inlier_ratio: float = 0.8
    # rasterization and skeleton
    pixel_size: float = 0.5
    sigma: float = 5.0            # blur radius in pixels
    threshold: float = 0.2        # binarization cut after normalization
    max_bridge_gap: float = 20.0  # pixels
    min_branch_len: int = 20      # pixels
    # centreline fitting
    savgol_window: int = 11
    savgol_order: int = 3
    backproject_radius: float = 1.5
    half_width: float = 6.0       # region growing reach across the line
    z_tol: float = 0.3
    sample_step: float = 1.0
    # run control
    seed: int = 0
    threads: int = 0              # 0 means all available cores
    figures: bool = True          # render report figures on extract

    def __post_init__(self) -> None:
        positive = (
            "alpha", "eps", "chunk_size", "ransac_dist", "max_tilt",
            "z_band", "pixel_size", "sigma", "backproject_radius",
            "half_width", "z_tol", "sample_step",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        non_negative = ("voxel", "max_bridge_gap")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("knn", "min_pts", "min_cluster", "ransac_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.min_branch_len < 1:
            raise ConfigError("min_branch_len must be at least 1")
        if not 0 <= self.z_percentile <= 1:
            raise ConfigError("z_percentile must lie in [0, 1]")
        if not 0 < self.min_inlier_ratio <= 1:
            raise ConfigError("min_inlier_ratio must lie in (0, 1]")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.savgol_window % 2 == 0 or self.savgol_window < 3:
            raise ConfigError("savgol_window must be odd and at least 3")
        if not 0 <= self.savgol_order < self.savgol_window:
            raise ConfigError("savgol_order must lie in [0, savgol_window)")
        if self.threads < 0:
            raise ConfigError("threads must be non-negative")


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, raw: str) -> object:
    field = _FIELDS[name]
    text = raw.strip()
    try:
        if field.type == "bool":
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if field.type == "int":
            return int(text)
        if field.type == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None
    raise ConfigError(f"unsupported field type for {name}")


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse `key = value` lines into a config.

    Later lines override earlier ones; keys not mentioned keep the values
    from ``base`` (or the defaults).  Unknown keys raise ConfigError naming
    the key.
    """
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return PipelineConfig(**values)


def load_config(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    config = parse_config(text, base)
    logger.info("loaded config from %s", path)
    return config


def dump_config(config: PipelineConfig) -> str:
    """Render a config as parseable `key = value` lines."""
    lines = []
    for field in dataclasses.fields(PipelineConfig):
        value = getattr(config, field.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{field.name} = {rendered}")
    return "\n".join(lines) + "\n"
