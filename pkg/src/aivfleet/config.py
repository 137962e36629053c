"""Run configuration: defaults, JSON config files and flat ``key=value`` overrides."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .allocation import AllocationParams, normalize_scenario
from .vehicle import BatteryModel

__all__ = [
    "ConfigError",
    "FixedInterval",
    "PiecewisePoisson",
    "BatteryConfig",
    "ThresholdConfig",
    "SimConfig",
    "load_config",
    "apply_overrides",
    "burst_profile",
]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FixedInterval(_Strict):
    kind: Literal["fixed-interval"] = "fixed-interval"
    period: float = Field(18.0, gt=0)


class PiecewisePoisson(_Strict):
    kind: Literal["piecewise-poisson"] = "piecewise-poisson"
    segments: list[tuple[float, float]]

    @field_validator("segments")
    @classmethod
    def _ordered(cls, segs):
        if not segs:
            raise ValueError("at least one (start, rate) segment is required")
        starts = [s for s, _ in segs]
        if starts[0] != 0:
            raise ValueError("first segment must start at t=0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segments must be strictly time-ordered")
        if any(r <= 0 for _, r in segs):
            raise ValueError("rates must be strictly positive")
        return segs


ArrivalSpec = Union[FixedInterval, PiecewisePoisson]


class BatteryConfig(_Strict):
    discharge_per_m: float = Field(2.5e-3, ge=0)
    idle_discharge_per_s: float = Field(0.0, ge=0)
    charge_rate_per_s: float = Field(0.05, gt=0)
    speed_exponent: float = Field(2.0, ge=0)
    enabled: bool = True

    def model(self) -> BatteryModel:
        return BatteryModel(**self.model_dump())


class ThresholdConfig(_Strict):
    recharge_threshold: float = Field(0.35, ge=0, le=1)
    recharge_decision_cut: float = Field(0.5, ge=0, le=1)
    full_target_cut: float = Field(0.9, ge=0, le=1)
    partial_target: float = Field(0.8, gt=0, le=1)
    p_max: float = Field(10.0, gt=0)
    w_ref: float = Field(60.0, gt=0)
    d_safe: float = Field(5.0, ge=0)
    t_ref: float = Field(120.0, gt=0)
    reserve_margin: float = Field(1.1, ge=0)
    default_episode_s: float = Field(15.0, gt=0)

    def params(self) -> AllocationParams:
        return AllocationParams(**self.model_dump())


class ModelPaths(_Strict):
    cost: Optional[str] = None
    recharge: Optional[str] = None
    station: Optional[str] = None
    rate: Optional[str] = None
    speed: Optional[str] = None


class SimConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    scenario: str = "Sc1"
    n_bags: int = Field(100, ge=0)
    n_aivs: int = Field(5, ge=1)
    dt: float = Field(0.1, gt=0)
    nominal_speed: float = Field(1.0, gt=0)
    handling_s: float = Field(5.0, ge=0)
    arrivals: ArrivalSpec = Field(default_factory=FixedInterval, discriminator="kind")
    graph: Optional[str] = None
    models: ModelPaths = Field(default_factory=ModelPaths)
    battery: BatteryConfig = Field(default_factory=BatteryConfig)
    thresholds: ThresholdConfig = Field(default_factory=ThresholdConfig)
    wall_limit_s: float = Field(20000.0, gt=0)

    @field_validator("scenario")
    @classmethod
    def _scenario(cls, v):
        return normalize_scenario(v)

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def burst_profile() -> PiecewisePoisson:
    """Calm flow, then a sustained rush that outpaces the fleet."""
    return PiecewisePoisson(segments=[(0.0, 1 / 20), (400.0, 1 / 10)])


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Apply flat dotted keys (``battery.charge_rate_per_s``) onto a nested dict."""
    doc = json.loads(json.dumps(base))
    for key, value in overrides.items():
        if isinstance(value, str):
            value = _parse_value(value)
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return doc


def build_config(doc: Mapping[str, Any]) -> SimConfig:
    try:
        return SimConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> SimConfig:
    """Precedence: overrides > file > defaults."""
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    return build_config(apply_overrides(doc, overrides or {}))
