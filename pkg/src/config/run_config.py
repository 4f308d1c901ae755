"""
Configuration for a preprocessing run.

This module provides the `RunConfig` model and its flat ``key = value``
text format. The same text is echoed into every run report, so a report
alone is enough to reproduce the run.
"""
from pathlib import Path
from typing import Dict, Any, List, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.utils.error_handling import ConfigError


def _split_triple(value: Any) -> Any:
    """Accept ``1.5``, ``"1.5"`` or ``"1.5, 1.5, 3"``; a single value is broadcast."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        value = parts[0] if len(parts) == 1 else parts
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value, value, value)


class RunConfig(BaseModel):
    """
    Parameters of the preprocessing pipeline and the batch runner.

    Defaults follow the reconstruction documented in DESIGN.md:
    1.5 mm isotropic voxels, lung window [-1000, 400] HU, a 160-voxel
    cube crop, -320 HU air threshold and a radius-2 closing.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    target_spacing_mm: Tuple[float, float, float] = Field(
        default=(1.5, 1.5, 1.5),
        description="Resampling target voxel spacing (dz, dy, dx) in mm"
    )

    window_lo_hu: int = Field(
        default=-1000,
        description="Lower bound of the radiodensity window"
    )

    window_hi_hu: int = Field(
        default=400,
        description="Upper bound of the radiodensity window"
    )

    crop_size: Tuple[int, int, int] = Field(
        default=(160, 160, 160),
        description="Output crop size (depth, height, width) in voxels"
    )

    segmentation_threshold_hu: int = Field(
        default=-320,
        description="Voxels strictly below this HU value count as air"
    )

    close_radius: int = Field(
        default=2,
        ge=0,
        description="Radius in voxels of the ball used by the closing step"
    )

    connectivity: int = Field(
        default=6,
        description="Voxel adjacency for connected components (6 or 26)"
    )

    threads: int = Field(
        default=1,
        ge=1,
        description="Number of batch workers"
    )

    seed: int = Field(
        default=0,
        ge=0,
        description="Run seed"
    )

    @field_validator("target_spacing_mm", "crop_size", mode="before")
    @classmethod
    def _broadcast_triples(cls, value: Any) -> Any:
        return _split_triple(value)

    @field_validator("target_spacing_mm")
    @classmethod
    def _positive_spacing(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(v <= 0 for v in value):
            raise ValueError("target_spacing_mm components must be > 0")
        return value

    @field_validator("crop_size")
    @classmethod
    def _positive_crop(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(v <= 0 for v in value):
            raise ValueError("crop_size components must be > 0")
        return value

    @field_validator("connectivity")
    @classmethod
    def _known_connectivity(cls, value: int) -> int:
        if value not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")
        return value

    @model_validator(mode="after")
    def _ordered_window(self) -> "RunConfig":
        if self.window_lo_hu >= self.window_hi_hu:
            raise ValueError("window_lo_hu must be below window_hi_hu")
        return self

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "RunConfig":
        """
        Create a configuration from a dictionary.

        Args:
            config_dict: Configuration dictionary

        Returns:
            RunConfig: Configuration object

        Raises:
            ConfigError: If a key is unknown or a value is invalid
        """
        try:
            return cls(**config_dict)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
                for err in e.errors()
            )
            raise ConfigError(f"Invalid run configuration: {problems}",
                              details={"errors": problems}) from e

    @classmethod
    def create_default(cls) -> "RunConfig":
        """
        Create a default configuration.

        Returns:
            RunConfig: Default configuration object
        """
        return cls()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """
        Parse the flat ``key = value`` format.

        ``#`` starts a comment, blank lines are skipped, tuple values are
        comma separated. Repeated keys are an error.
        """
        values: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}",
                                  details={"line": lineno})
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"line {lineno}: missing key", details={"line": lineno})
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}",
                                  details={"line": lineno, "key": key})
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Read a config file; a missing file is a ConfigError."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        return cls.from_text(text)

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert configuration to a dictionary.

        Returns:
            dict: Configuration dictionary
        """
        return self.model_dump()

    def to_items(self) -> List[Tuple[str, str]]:
        """(key, rendered value) pairs in field order; tuples are comma joined."""
        items = []
        for key, value in self.to_dict().items():
            if isinstance(value, tuple):
                rendered = ",".join(repr(v) for v in value)
            else:
                rendered = repr(value)
            items.append((key, rendered))
        return items

    def to_text(self) -> str:
        """Serialize to the ``key = value`` format; `from_text` inverts it exactly."""
        return "".join(f"{key} = {value}\n" for key, value in self.to_items())


# Default configuration instance
DEFAULT_CONFIG = RunConfig.create_default()
