"""Fit component rates and power-model parameters from drain-time measurements."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

from .core import (
    DRAIN_PCT,
    ComponentSpec,
    DeviceProfile,
    PowerModel,
    Registry,
    _is_num,
    ensure_valid,
    rate_from_drain_time,
    register_validator,
)
from .errors import CalibrationError, SuperAdditiveWarning, ValidationError
from .plan import AttackPlan

CONTEXTS = ("unplugged", "charging")
CSV_HEADER = ("component", "drain_pct", "avg", "sd", "max", "min", "full_drain", "context")


@dataclass(frozen=True)
class MeasurementRecord:
    """Drain-time statistics for one component or a ``+``-joined combination.

    ``sd``/``max``/``min`` may be missing for single-run observations; they then
    read as zero spread around ``avg``.
    """

    component_id: str
    drain_pct: float
    avg: float
    sd: Optional[float] = None
    max: Optional[float] = None
    min: Optional[float] = None
    full_drain_minutes: Optional[float] = None
    context: str = "unplugged"

    @property
    def members(self) -> frozenset:
        return frozenset(self.component_id.split("+"))

    @property
    def is_combination(self) -> bool:
        return len(self.members) > 1


def _validate_record(r: MeasurementRecord) -> list[str]:
    v = []
    if not isinstance(r.component_id, str) or not r.component_id or "" in r.component_id.split("+"):
        v.append("component_id must be a non-empty id or '+'-joined ids")
    if not _is_num(r.drain_pct) or r.drain_pct <= 0:
        v.append(f"drain_pct must be > 0 (got {r.drain_pct!r})")
    if not _is_num(r.avg) or r.avg <= 0:
        v.append(f"avg must be > 0 (got {r.avg!r})")
        return v
    if r.sd is not None and (not _is_num(r.sd) or r.sd < 0):
        v.append(f"sd must be ≥ 0 (got {r.sd!r})")
    lo = r.avg if r.min is None else r.min
    hi = r.avg if r.max is None else r.max
    for name, x in (("min", lo), ("max", hi)):
        if not _is_num(x) or x <= 0:
            v.append(f"{name} must be > 0 (got {x!r})")
            return v
    if lo > hi:
        v.append(f"min ≤ max violated (min={lo}, max={hi})")
    if lo > r.avg:
        v.append(f"min ≤ avg violated (min={lo}, avg={r.avg})")
    if r.avg > hi:
        v.append(f"avg ≤ max violated (avg={r.avg}, max={hi})")
    f = r.full_drain_minutes
    if f is not None and (not _is_num(f) or f <= 0):
        v.append(f"full_drain must be > 0 (got {f!r})")
    if r.context not in CONTEXTS:
        v.append(f"context must be one of {CONTEXTS} (got {r.context!r})")
    return v


register_validator(MeasurementRecord, _validate_record)


# -- CSV ---------------------------------------------------------------------------


def _opt(cell: str) -> Optional[float]:
    cell = cell.strip()
    return None if cell == "" else float(cell)


def read_measurements(text: str) -> list[MeasurementRecord]:
    """Parse a measurement table with header ``component,drain_pct,avg,sd,max,min,full_drain,context``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ValidationError([f"expected header {','.join(CSV_HEADER)}"], "measurements")
    records, problems = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            problems.append(f"line {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
            continue
        comp, pct, avg, sd, mx, mn, full, ctx = (c.strip() for c in row)
        try:
            rec = MeasurementRecord(comp, float(pct), float(avg), _opt(sd), _opt(mx), _opt(mn), _opt(full),
                                    ctx or "unplugged")
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        problems += [f"line {lineno}: {p}" for p in _validate_record(rec)]
        records.append(rec)
    if problems:
        raise ValidationError(problems, "measurements")
    return records


def write_measurements(records: Iterable[MeasurementRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    fmt = lambda x: "" if x is None else f"{x:g}"  # noqa: E731
    for r in records:
        w.writerow([r.component_id, fmt(r.drain_pct), fmt(r.avg), fmt(r.sd), fmt(r.max), fmt(r.min),
                    fmt(r.full_drain_minutes), r.context])
    return buf.getvalue()


# -- fits ------------------------------------------------------------------------------


def calibrate_components(
    records: Sequence[MeasurementRecord],
    attributes: Optional[Mapping[str, Mapping]] = None,
) -> dict[str, ComponentSpec]:
    """Build a registry carrying each record's time statistics.

    Times are rescaled to a 5-point drain when a record covers a different
    amount (a 100% record of 164 minutes becomes a mean of 8.2). ``attributes``
    supplies the non-timing fields (category, permissions, flags) per id; ids
    without an entry default to an unrestricted software component.
    """
    from .dataset import component_attributes

    attributes = component_attributes() if attributes is None else attributes
    registry: dict[str, ComponentSpec] = {}
    for rec in records:
        ensure_valid(rec, f"measurement {rec.component_id}")
        if rec.is_combination:
            raise CalibrationError(f"{rec.component_id}: combined records are fitted with fit_interference")
        if rec.component_id in registry:
            raise CalibrationError(f"duplicate component_id {rec.component_id!r}")
        k = DRAIN_PCT / rec.drain_pct
        sd = 0.0 if rec.sd is None else rec.sd
        lo = rec.avg if rec.min is None else rec.min
        hi = rec.avg if rec.max is None else rec.max
        full = rec.full_drain_minutes
        if full is None and rec.drain_pct == 100:
            full = rec.avg
        attrs = {"category": "software", **attributes.get(rec.component_id, {})}
        spec = ComponentSpec(rec.component_id, rec.avg * k, sd * k, lo * k, hi * k,
                             full_drain_minutes=full, **attrs)
        registry[spec.id] = ensure_valid(spec, spec.id)
    return registry


def fit_interference(combined: MeasurementRecord, members: Iterable[str], registry: Registry) -> float:
    """Coefficient scaling the summed standalone rates onto the measured combined rate.

    A value above 1 means the set drains faster together than apart; it is
    returned with a :class:`SuperAdditiveWarning`.
    """
    members = frozenset(members)
    if len(members) < 2:
        raise CalibrationError("interference needs at least two members")
    missing = sorted(m for m in members if m not in registry)
    if missing:
        raise CalibrationError("uncalibrated members: " + ", ".join(missing))
    ensure_valid(combined, "combined measurement")
    combined_rate = rate_from_drain_time(combined.drain_pct, combined.avg)
    eta = combined_rate / math.fsum(registry[m].mean_rate for m in sorted(members))
    if eta > 1:
        warnings.warn(
            f"{'+'.join(sorted(members))}: interference {eta:.4f} > 1 (super-additive)",
            SuperAdditiveWarning,
            stacklevel=2,
        )
    return eta


def with_interference(model: PowerModel, members: Iterable[str], eta: float, as_default: bool = True) -> PowerModel:
    """Record ``eta`` for the exact member set (and as the multi-component default)."""
    overrides = dict(model.interference_overrides)
    overrides[frozenset(members)] = eta
    kw = {"interference_overrides": overrides}
    if as_default:
        kw["interference_eta"] = eta
    return replace(model, **kw)


def fit_dim_factor(full_drain: float, component_id: str, model: PowerModel, registry: Registry) -> float:
    """Auto-dim multiplier explaining a full drain longer than the linear prediction.

    Assumes the run starts at 100% and drains at the undimmed rate down to
    ``model.dim_threshold``; the rest of ``full_drain`` is the dimmed tail.
    """
    spec = registry.get(component_id)
    if spec is None:
        raise CalibrationError(f"unknown component {component_id!r}")
    if not spec.display_class:
        raise CalibrationError(f"{component_id} is not display-class; auto-dim does not apply")
    thr = model.dim_threshold
    if thr <= 0:
        raise CalibrationError("dim_threshold is 0; there is no dimmed tail to fit")
    rate = spec.mean_rate
    above = (100.0 - thr) / rate
    tail = full_drain - above
    if tail <= 0 or full_drain <= 100.0 / rate:
        raise CalibrationError(
            f"full drain {full_drain} min is not longer than the undimmed linear time {100.0 / rate:.4f} min"
        )
    return (thr / tail) / rate


def fit_charging_supply(unplugged: MeasurementRecord, plugged: MeasurementRecord) -> float:
    """Percent per minute the charger restores, from the same attack run unplugged and plugged in."""
    ensure_valid(unplugged, "unplugged measurement")
    ensure_valid(plugged, "plugged measurement")
    if unplugged.members != plugged.members:
        raise CalibrationError("unplugged and plugged records cover different component sets")
    if unplugged.drain_pct != plugged.drain_pct:
        raise CalibrationError("unplugged and plugged records cover different drain amounts")
    if plugged.avg < unplugged.avg:
        raise CalibrationError("plugged run drained faster than unplugged; charging cannot speed drain")
    return (rate_from_drain_time(unplugged.drain_pct, unplugged.avg)
            - rate_from_drain_time(plugged.drain_pct, plugged.avg))


# -- cross-validation ----------------------------------------------------------------


@dataclass(frozen=True)
class HeldOutCase:
    """A scenario to predict; ``plan`` is None when it cannot be expressed."""

    name: str
    plan: Optional[AttackPlan]
    expected_minutes: float
    profile: DeviceProfile = DeviceProfile()
    in_sample: bool = False
    note: str = ""


@dataclass(frozen=True)
class CrossValidationRow:
    name: str
    expected_minutes: float
    predicted_minutes: Optional[float]
    relative_error: Optional[float]
    label: str  # "in_sample" | "held_out"
    skipped: Optional[str] = None
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "expected_minutes": self.expected_minutes,
            "predicted_minutes": self.predicted_minutes,
            "relative_error": self.relative_error,
            "label": self.label,
            "skipped": self.skipped,
            "note": self.note,
        }


def cross_validate(
    model: PowerModel,
    registry: Registry,
    heldout: Sequence[HeldOutCase],
    step_size: float = 1.0,
) -> list[CrossValidationRow]:
    """Simulate each case deterministically and report |predicted − expected| / expected."""
    from .engine import simulate

    rows = []
    for case in heldout:
        label = "in_sample" if case.in_sample else "held_out"
        if case.plan is None:
            rows.append(CrossValidationRow(case.name, case.expected_minutes, None, None, label,
                                           skipped=case.note or "scenario not expressible as a plan"))
            continue
        unknown = sorted(c for c in case.plan.components() if c not in registry)
        if unknown:
            rows.append(CrossValidationRow(case.name, case.expected_minutes, None, None, label,
                                           skipped="uncalibrated components: " + ", ".join(unknown)))
            continue
        trace = simulate(case.plan, case.profile, model, registry, step_size=step_size, force=True)
        if trace.terminal not in ("goal_met", "battery_dead"):
            rows.append(CrossValidationRow(case.name, case.expected_minutes, None, None, label,
                                           skipped=f"run ended with {trace.terminal}"))
            continue
        pred = trace.minutes
        err = abs(pred - case.expected_minutes) / case.expected_minutes
        rows.append(CrossValidationRow(case.name, case.expected_minutes, pred, err, label, note=case.note))
    return rows
