"""Domain types, drain-time/rate conversions, validation and JSON (de)serialization.

Battery quantities are percentage points of charge; times are minutes unless a
name says otherwise (``elapsed`` on :class:`BatteryState` is seconds).
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, dataclass, field, fields
from typing import Any, Iterable, Mapping, Optional

from .errors import InvalidArgument, ValidationError

#: Every per-component drain time in a registry is the time to lose this many points.
DRAIN_PCT = 5.0

#: Float slack used when comparing simulated levels against integer thresholds.
LEVEL_EPS = 1e-9

CATEGORIES = ("hardware", "software", "network")

Registry = Mapping[str, "ComponentSpec"]


def rate_from_drain_time(drain_pct: float, minutes: float) -> float:
    """Percent per minute needed to lose ``drain_pct`` points in ``minutes``."""
    if not _is_num(minutes) or minutes <= 0:
        raise InvalidArgument(f"minutes must be positive, got {minutes!r}")
    if not _is_num(drain_pct) or drain_pct < 0:
        raise InvalidArgument(f"drain_pct must be non-negative, got {drain_pct!r}")
    return drain_pct / minutes


def drain_time_from_rate(drain_pct: float, rate: float) -> float:
    """Minutes needed to lose ``drain_pct`` points at ``rate`` percent per minute."""
    if not _is_num(rate) or rate <= 0:
        raise InvalidArgument(f"rate must be positive, got {rate!r}")
    if not _is_num(drain_pct) or drain_pct < 0:
        raise InvalidArgument(f"drain_pct must be non-negative, got {drain_pct!r}")
    return drain_pct / rate


def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_str(x: Any) -> bool:
    return isinstance(x, str) and x != ""


@dataclass(frozen=True)
class ComponentSpec:
    """One drainable element with its calibrated 5%-drain time distribution."""

    id: str
    drain_time_mean: float
    drain_time_sd: float
    drain_time_min: float
    drain_time_max: float
    category: str
    required_setting: Optional[str] = None
    required_permission: Optional[str] = None
    permission_required_even_if_setting_enabled: bool = False
    stealth_level: Optional[int] = 4
    display_class: bool = False
    web_accessible: bool = False
    full_drain_minutes: Optional[float] = None

    @property
    def mean_rate(self) -> float:
        return rate_from_drain_time(DRAIN_PCT, self.drain_time_mean)


@dataclass(frozen=True)
class PowerModel:
    """Global calibrated parameters applied on top of per-component rates.

    ``interference_overrides`` maps an exact active set to its own coefficient;
    every other set of two or more components uses ``interference_eta``.
    """

    baseline_rate: float = 0.0
    interference_eta: float = 1.0
    interference_overrides: Mapping[frozenset, float] = field(default_factory=dict)
    dim_threshold: float = 5.0
    dim_factor_phi: float = 1.0
    charging_supply: float = 0.0
    poll_interval: float = 2.0
    drain_threshold: float = 5.0

    def eta_for(self, active: Iterable[str]) -> float:
        key = frozenset(active)
        if len(key) < 2:
            return 1.0
        return self.interference_overrides.get(key, self.interference_eta)


@dataclass(frozen=True)
class DeviceProfile:
    granted_permissions: frozenset = frozenset()
    enabled_settings: frozenset = frozenset()
    initial_battery: float = 100.0
    charging: bool = False
    battery_report_granularity: int = 1


def reported_level(level: float, granularity: int = 1) -> int:
    """Integer percent an on-device observer sees for a continuous ``level``.

    The reading only drops once a full step has actually drained, so a device
    starting at exactly 100 keeps reporting 100 until it reaches 99.
    """
    steps = math.ceil(level / granularity - LEVEL_EPS)
    return max(0, int(steps) * granularity)


@dataclass(frozen=True)
class BatteryState:
    level: float
    charging: bool = False
    elapsed: float = 0.0
    granularity: int = 1

    @property
    def reported_level(self) -> int:
        return reported_level(self.level, self.granularity)


# -- validation ---------------------------------------------------------------


def _validate_component(c: ComponentSpec) -> list[str]:
    v = []
    if not _is_str(c.id):
        v.append("id must be a non-empty string")
    times = {
        "drain_time_mean": c.drain_time_mean,
        "drain_time_min": c.drain_time_min,
        "drain_time_max": c.drain_time_max,
    }
    ok = True
    for name, x in times.items():
        if not _is_num(x) or x <= 0:
            v.append(f"{name} must be a positive number (got {x!r})")
            ok = False
    if not _is_num(c.drain_time_sd) or c.drain_time_sd < 0:
        v.append(f"drain_time_sd must be ≥ 0 (got {c.drain_time_sd!r})")
    if ok:
        if c.drain_time_min > c.drain_time_max:
            v.append(f"drain times: min ≤ max violated (min={c.drain_time_min}, max={c.drain_time_max})")
        if c.drain_time_min > c.drain_time_mean:
            v.append(f"drain times: min ≤ mean violated (min={c.drain_time_min}, mean={c.drain_time_mean})")
        if c.drain_time_mean > c.drain_time_max:
            v.append(f"drain times: mean ≤ max violated (mean={c.drain_time_mean}, max={c.drain_time_max})")
    if c.category not in CATEGORIES:
        v.append(f"category must be one of {CATEGORIES} (got {c.category!r})")
    for name in ("required_setting", "required_permission"):
        x = getattr(c, name)
        if x is not None and not _is_str(x):
            v.append(f"{name} must be a non-empty string or null")
    for name in ("permission_required_even_if_setting_enabled", "display_class", "web_accessible"):
        if not isinstance(getattr(c, name), bool):
            v.append(f"{name} must be a boolean")
    if c.permission_required_even_if_setting_enabled is True and not _is_str(c.required_permission):
        v.append("permission_required_even_if_setting_enabled requires required_permission")
    s = c.stealth_level
    if s is not None and (isinstance(s, bool) or s not in (0, 1, 2, 3, 4)):
        v.append(f"stealth_level must be in 0..4 (got {s!r})")
    f = c.full_drain_minutes
    if f is not None and (not _is_num(f) or f <= 0):
        v.append(f"full_drain_minutes must be positive (got {f!r})")
    return v


def _in_unit(x: Any) -> bool:
    return _is_num(x) and 0 < x <= 1


def _validate_model(m: PowerModel) -> list[str]:
    v = []
    if not _in_unit(m.interference_eta):
        v.append(f"interference_eta must be in (0, 1] (got {m.interference_eta!r})")
    if not isinstance(m.interference_overrides, Mapping):
        v.append("interference_overrides must be a mapping")
    else:
        for key, eta in m.interference_overrides.items():
            label = "+".join(sorted(map(str, key))) if isinstance(key, (set, frozenset)) else repr(key)
            if not isinstance(key, frozenset) or len(key) < 2:
                v.append(f"interference override key {label} must name at least two components")
            if not _in_unit(eta):
                v.append(f"interference override {label} must be in (0, 1] (got {eta!r})")
    if not _in_unit(m.dim_factor_phi):
        v.append(f"dim_factor_phi must be in (0, 1] (got {m.dim_factor_phi!r})")
    if not _is_num(m.dim_threshold) or not 0 <= m.dim_threshold <= 100:
        v.append(f"dim_threshold must be in [0, 100] (got {m.dim_threshold!r})")
    for name in ("charging_supply", "baseline_rate"):
        x = getattr(m, name)
        if not _is_num(x) or x < 0:
            v.append(f"{name} must be ≥ 0 (got {x!r})")
    for name in ("poll_interval", "drain_threshold"):
        x = getattr(m, name)
        if not _is_num(x) or x <= 0:
            v.append(f"{name} must be > 0 (got {x!r})")
    return v


def _validate_profile(p: DeviceProfile) -> list[str]:
    v = []
    for name in ("granted_permissions", "enabled_settings"):
        x = getattr(p, name)
        if not isinstance(x, (set, frozenset)) or not all(_is_str(i) for i in x):
            v.append(f"{name} must be a set of non-empty strings")
    if not _is_num(p.initial_battery) or not 0 <= p.initial_battery <= 100:
        v.append(f"initial_battery must be in [0, 100] (got {p.initial_battery!r})")
    if not isinstance(p.charging, bool):
        v.append("charging must be a boolean")
    g = p.battery_report_granularity
    if isinstance(g, bool) or not isinstance(g, int) or g < 1 or 100 % g:
        v.append(f"battery_report_granularity must be a positive divisor of 100 (got {g!r})")
    return v


def _validate_state(s: BatteryState) -> list[str]:
    v = []
    if not _is_num(s.level) or not 0 <= s.level <= 100:
        v.append(f"level must be in [0, 100] (got {s.level!r})")
    if not _is_num(s.elapsed) or s.elapsed < 0:
        v.append(f"elapsed must be ≥ 0 (got {s.elapsed!r})")
    if not isinstance(s.charging, bool):
        v.append("charging must be a boolean")
    return v


_VALIDATORS = {
    ComponentSpec: _validate_component,
    PowerModel: _validate_model,
    DeviceProfile: _validate_profile,
    BatteryState: _validate_state,
}


def validate(obj: Any) -> list[str]:
    """Return every violated invariant of ``obj``; an empty list means valid.

    Accepts the core types plus anything registered through
    :func:`register_validator`. Never raises for malformed field values.
    """
    check = _VALIDATORS.get(type(obj))
    if check is None:
        return [f"no validator for {type(obj).__name__}"]
    try:
        return check(obj)
    except Exception as exc:  # totality: malformed fields become violations
        return [f"malformed {type(obj).__name__}: {exc}"]


def register_validator(cls, fn) -> None:
    _VALIDATORS[cls] = fn


def ensure_valid(obj: Any, context: str = "") -> Any:
    violations = validate(obj)
    if violations:
        raise ValidationError(violations, context or type(obj).__name__)
    return obj


# -- JSON ---------------------------------------------------------------------


def _overrides_to_json(overrides: Mapping[frozenset, float]) -> dict[str, float]:
    return {"+".join(sorted(k)): overrides[k] for k in sorted(overrides, key=lambda k: sorted(k))}


def _overrides_from_json(raw: Any) -> dict[frozenset, float]:
    if not isinstance(raw, Mapping):
        raise ValidationError(["interference_overrides must be an object"], "PowerModel")
    return {frozenset(k.split("+")): v for k, v in raw.items()}


def to_dict(obj: Any) -> dict[str, Any]:
    """Plain-JSON form of a core type, with field names as declared."""
    out = {}
    for f in fields(obj):
        x = getattr(obj, f.name)
        if isinstance(x, (set, frozenset)):
            x = sorted(x)
        elif f.name == "interference_overrides":
            x = _overrides_to_json(x)
        out[f.name] = x
    return out


def from_dict(cls, data: Any):
    """Build and validate ``cls`` from a JSON object, rejecting unknown fields."""
    name = cls.__name__
    if not isinstance(data, Mapping):
        raise ValidationError([f"expected a JSON object, got {type(data).__name__}"], name)
    known = {f.name: f for f in fields(cls)}
    problems = [f"unknown field {k!r}" for k in data if k not in known]
    required = [n for n, f in known.items() if f.default is MISSING and f.default_factory is MISSING]
    problems += [f"missing field {n!r}" for n in required if n not in data]
    if problems:
        raise ValidationError(problems, name)
    kwargs = dict(data)
    for n in ("granted_permissions", "enabled_settings"):
        if n in kwargs and isinstance(kwargs[n], list):
            kwargs[n] = frozenset(kwargs[n])
    if "interference_overrides" in kwargs:
        kwargs["interference_overrides"] = _overrides_from_json(kwargs["interference_overrides"])
    return ensure_valid(cls(**kwargs), name)



def registry_from_json(text: str) -> dict[str, ComponentSpec]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValidationError(["registry must be a JSON array of components"], "registry")
    registry: dict[str, ComponentSpec] = {}
    for item in data:
        spec = from_dict(ComponentSpec, item)
        if spec.id in registry:
            raise ValidationError([f"duplicate component id {spec.id!r}"], "registry")
        registry[spec.id] = spec
    return registry


def registry_to_json(registry: Registry) -> str:
    return json.dumps([to_dict(registry[k]) for k in sorted(registry)], indent=2) + "\n"


def model_from_json(text: str) -> PowerModel:
    return from_dict(PowerModel, json.loads(text))


def model_to_json(model: PowerModel) -> str:
    return json.dumps(to_dict(model), indent=2) + "\n"


def profile_from_json(text: str) -> DeviceProfile:
    return from_dict(DeviceProfile, json.loads(text))


def profile_to_json(profile: DeviceProfile) -> str:
    return json.dumps(to_dict(profile), indent=2) + "\n"
