"""Emulation of the on-device measurement protocol and regeneration of the published results tables.

The protocol starts every component, reads the integer battery percent, then
polls every ``poll_interval`` seconds until the reading has dropped by
``drain_threshold`` points. Per-trial times are kept both as raw seconds and as
whole minutes (rounded to nearest).
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .calibration import CrossValidationRow, cross_validate
from .core import LEVEL_EPS, DeviceProfile, PowerModel, Registry, reported_level
from .engine import (
    DEFAULT_STEP,
    draw_rates,
    net_rate,
    reported_levels,
    run_batch,
    simulate,
)
from .errors import InfeasiblePlan, InvalidArgument
from .plan import AttackPlan, Goal, check_feasibility, simple_plan

DEFAULT_CAP_MINUTES = 24 * 60.0
ROUNDING_SLACK_SECONDS = 30.0
SD_NOTE = "sd uses the n-1 (sample) denominator"


@dataclass(frozen=True)
class TrialStats:
    """Summary of repeated protocol runs; statistics are over raw minutes."""

    id: str
    trials: int
    avg: float
    sd: float
    max: float
    min: float
    raw_seconds: tuple = ()
    whole_minutes: tuple = ()
    non_terminating: int = 0

    @classmethod
    def from_seconds(cls, id: str, seconds: Sequence[float], non_terminating: int = 0) -> "TrialStats":
        seconds = tuple(float(s) for s in seconds)
        whole = tuple(int(math.floor(s / 60.0 + 0.5)) for s in seconds)
        if not seconds:
            nan = float("nan")
            return cls(id, 0, nan, nan, nan, nan, (), (), non_terminating)
        minutes = [s / 60.0 for s in seconds]
        sd = statistics.stdev(minutes) if len(minutes) > 1 else 0.0
        return cls(id, len(seconds), statistics.fmean(minutes), sd, max(minutes), min(minutes),
                   seconds, whole, non_terminating)

    def rounded(self) -> "TrialStats":
        """Same trials summarised over whole-minute records, as a lab notebook would."""
        if not self.whole_minutes:
            return self
        w = [float(m) for m in self.whole_minutes]
        sd = statistics.stdev(w) if len(w) > 1 else 0.0
        return replace(self, avg=statistics.fmean(w), sd=sd, max=max(w), min=min(w))


def stats_to_csv(stats: Sequence[TrialStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "avg", "sd", "max", "min"])
    for s in stats:
        w.writerow([s.id, f"{s.avg:.6g}", f"{s.sd:.6g}", f"{s.max:.6g}", f"{s.min:.6g}"])
    return buf.getvalue()


class _Poller:
    """Poll schedule shared by the batch and per-trace protocol paths."""

    def __init__(self, poll_interval: float):
        self.interval = poll_interval
        self.next = 0.0

    def next_step_time(self, step_size: float) -> float:
        """First step boundary at or after the next scheduled poll."""
        return math.ceil(self.next / step_size - 1e-9) * step_size

    def due(self, t: float) -> bool:
        if t + 1e-9 < self.next:
            return False
        while self.next <= t + 1e-9:
            self.next += self.interval
        return True


def _protocol_batch(plan, profile, model, registry, rate_arrays, n, step_size, cap_minutes):
    gran = profile.battery_report_granularity
    start = reported_level(float(profile.initial_battery), gran)
    target = start - model.drain_threshold
    detected = np.full(n, np.nan)
    failed = np.zeros(n, dtype=bool)
    poller = _Poller(model.poll_interval)
    stuck = False
    if not any(p.duration is not None for p in plan.steps):
        # constant active set: a zero net rate at the start stays zero forever
        active = plan.steps[0].activate if plan.steps else frozenset()
        level0 = np.full(n, float(profile.initial_battery))
        net = net_rate(level0, active, profile.charging, model, registry, rate_arrays)
        stuck = bool(np.all(np.asarray(net) == 0))

    def observe(t, level):
        if poller.due(t):
            pending = np.isnan(detected) & ~failed
            hit = pending & (reported_levels(level, gran) <= target + LEVEL_EPS)
            detected[hit] = t
            failed[pending & ~hit & (level <= LEVEL_EPS)] = True
        return stuck or bool(np.all(~np.isnan(detected) | failed))

    run_batch(plan, profile, model, registry, rate_arrays, observe, step_size, cap_minutes)
    return detected


def _protocol_trace(trace, profile, model) -> Optional[float]:
    gran = profile.battery_report_granularity
    start = reported_level(float(profile.initial_battery), gran)
    target = start - model.drain_threshold
    poller = _Poller(model.poll_interval)
    for s in trace.samples:
        if poller.due(s.t_seconds) and s.reported_level <= target + LEVEL_EPS:
            return s.t_seconds
    if trace.terminal == "battery_dead" and 0 <= target + LEVEL_EPS:
        # a dead battery keeps reading 0 until the next poll
        return poller.next_step_time(trace.step_size)
    return None


def run_protocol(
    plan: AttackPlan,
    profile: DeviceProfile,
    model: PowerModel,
    registry: Registry,
    trials: int = 10,
    seed: int = 0,
    mode: str = "deterministic",
    step_size: float = DEFAULT_STEP,
    cap_minutes: float = DEFAULT_CAP_MINUTES,
    sampler: str = "beta",
    force: bool = False,
) -> TrialStats:
    """Time how long ``plan`` takes to lower the reported level by ``model.drain_threshold``.

    Trial ``i`` uses seed ``seed + i``. Stochastic trigger-free plans run all
    trials in one vectorised batch; plans with triggers run trial by trial
    through :func:`simulate`, and deterministic plans run once. Trials that never cross the threshold before
    ``cap_minutes`` are excluded and counted in ``non_terminating``.
    """
    if trials < 1:
        raise InvalidArgument("trials must be ≥ 1")
    if mode not in ("deterministic", "stochastic"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if not force:
        report = check_feasibility(plan, profile, registry)
        if not report.feasible:
            raise InfeasiblePlan(report)
    name = plan.name or "+".join(sorted(plan.components()))
    ids = sorted(plan.components())

    if mode == "stochastic" and not plan.triggers:
        draws = [draw_rates(ids, registry, np.random.default_rng(seed + i), sampler) for i in range(trials)]
        rate_arrays = {cid: np.array([d[cid] for d in draws]) for cid in ids}
        detected = _protocol_batch(plan, profile, model, registry, rate_arrays, trials, step_size, cap_minutes)
        seconds = [float(s) for s in detected if not np.isnan(s)]
        return TrialStats.from_seconds(name, seconds, int(np.isnan(detected).sum()))

    # deterministic trials are identical, so one scalar run stands for all of them
    runs = 1 if mode == "deterministic" else trials
    observed = replace(plan, goal=Goal("event_controlled"))
    seconds, missing = [], 0
    for i in range(runs):
        poller = _Poller(model.poll_interval)
        target = reported_level(float(profile.initial_battery), profile.battery_report_granularity) \
            - model.drain_threshold

        def until(sample, poller=poller, target=target):
            return poller.due(sample.t_seconds) and sample.reported_level <= target + LEVEL_EPS

        trace = simulate(observed, profile, model, registry, mode=mode, seed=seed + i, step_size=step_size,
                         time_limit=cap_minutes, force=True, sampler=sampler, until=until)
        t = _protocol_trace(trace, profile, model)
        if t is None:
            missing += 1
        else:
            seconds.append(t)
    if runs < trials:
        seconds, missing = seconds * trials, missing * trials
    return TrialStats.from_seconds(name, seconds, missing)


def protocol_time(trace, profile: DeviceProfile, model: PowerModel) -> Optional[float]:
    """Protocol reading (seconds) extracted from an already simulated trace."""
    return _protocol_trace(trace, profile, model)


# -- drain curves ---------------------------------------------------------------------


@dataclass(frozen=True)
class DrainCurve:
    id: str
    points: tuple  # (reported level, elapsed minutes, minutes since previous checkpoint)
    terminal: str
    start_level: int = 100

    @property
    def deltas(self) -> list[float]:
        return [p[2] for p in self.points]

    @property
    def total_minutes(self) -> float:
        return self.points[-1][1] if self.points else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "elapsed_min", "delta_min"])
        for level, t, d in self.points:
            w.writerow([level, repr(t), repr(d)])
        return buf.getvalue()


def drain_curve(
    plan: AttackPlan,
    profile: DeviceProfile,
    model: PowerModel,
    registry: Registry,
    checkpoint: float = 2,
    step_size: float = DEFAULT_STEP,
    cap_minutes: float = DEFAULT_CAP_MINUTES,
    force: bool = True,
) -> DrainCurve:
    """Deterministic full drain logged every ``checkpoint`` points of reported drop.

    Readings happen on the protocol's poll schedule, so elapsed times carry the
    same quantisation as a real logging app.
    """
    if not checkpoint > 0:
        raise InvalidArgument("checkpoint must be > 0")
    full = replace(plan, goal=Goal("full_drain"))
    trace = simulate(full, profile, model, registry, step_size=step_size, time_limit=cap_minutes, force=force)
    start = trace.samples[0].reported_level
    marks = []
    k = 1
    while start - k * checkpoint >= -LEVEL_EPS:
        marks.append(start - k * checkpoint)
        k += 1
    poller = _Poller(model.poll_interval)
    points = []
    prev_t = 0.0
    i = 0
    for s in trace.samples:
        if i >= len(marks):
            break
        if not poller.due(s.t_seconds):
            continue
        while i < len(marks) and s.reported_level <= marks[i] + LEVEL_EPS:
            t = s.t_seconds / 60.0
            points.append((marks[i], t, t - prev_t))
            prev_t = t
            i += 1
    if i < len(marks) and trace.terminal == "battery_dead":
        t = poller.next_step_time(trace.step_size) / 60.0
        while i < len(marks):
            points.append((marks[i], t, t - prev_t))
            prev_t = t
            i += 1
    if not points and trace.terminal != "battery_dead":
        raise InvalidArgument(f"plan did not reach the first checkpoint within {cap_minutes} minutes")
    marks_fmt = [(int(lv) if float(lv).is_integer() else lv, t, d) for lv, t, d in points]
    return DrainCurve(plan.name or "+".join(sorted(plan.components())), tuple(marks_fmt), trace.terminal, start)


# -- reproduction of the published results tables ----------------------------------------------


def full_access_profile(registry: Registry, **kw) -> DeviceProfile:
    """A device granting every permission and enabling every setting in ``registry``."""
    perms = frozenset(c.required_permission for c in registry.values() if c.required_permission)
    settings = frozenset(c.required_setting for c in registry.values() if c.required_setting)
    return DeviceProfile(perms, settings, **kw)


@dataclass(frozen=True)
class TableRow:
    component: str
    paper_minutes: float
    simulated_minutes: float
    abs_error_seconds: float
    within_tolerance: bool


@dataclass
class ReproductionReport:
    dataset_version: str
    tolerance_seconds: float
    table: list = field(default_factory=list)
    cross_validation: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def all_in_sample_match(self) -> bool:
        return all(r.within_tolerance for r in self.table)

    def to_dict(self) -> dict:
        return {
            "dataset_version": self.dataset_version,
            "tolerance_seconds": self.tolerance_seconds,
            "in_sample": [
                {
                    "component": r.component,
                    "paper_minutes": r.paper_minutes,
                    "simulated_minutes": r.simulated_minutes,
                    "abs_error_seconds": r.abs_error_seconds,
                    "within_tolerance": r.within_tolerance,
                }
                for r in self.table
            ] + [c.as_dict() for c in self.cross_validation if c.label == "in_sample"],
            "held_out": [c.as_dict() for c in self.cross_validation if c.label == "held_out"],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"{'component':<16}{'measured':>9}{'simulated':>11}{'err (s)':>9}  ok"]
        for r in self.table:
            lines.append(f"{r.component:<16}{r.paper_minutes:>9.2f}{r.simulated_minutes:>11.3f}"
                         f"{r.abs_error_seconds:>9.2f}  {'yes' if r.within_tolerance else 'NO'}")
        lines.append("")
        lines.append(f"{'scenario':<28}{'label':<11}{'measured':>9}{'model':>9}{'rel.err':>9}")
        for c in self.cross_validation:
            if c.skipped:
                lines.append(f"{c.name:<28}{c.label:<11}{c.expected_minutes:>9.1f}   skipped: {c.skipped}")
            else:
                lines.append(f"{c.name:<28}{c.label:<11}{c.expected_minutes:>9.1f}"
                             f"{c.predicted_minutes:>9.2f}{c.relative_error:>9.1%}")
        return "\n".join(lines) + "\n"


def reproduce_paper(
    registry: Optional[Registry] = None,
    model: Optional[PowerModel] = None,
    step_size: float = DEFAULT_STEP,
) -> ReproductionReport:
    """Rerun the per-component 5% table and every whole-plan datum under ``model``."""
    from .dataset import dataset_version, load_dataset, paper_heldout_cases, paper_model, paper_registry

    registry = paper_registry() if registry is None else registry
    model = paper_model() if model is None else model
    profile = full_access_profile(registry)
    report = ReproductionReport(dataset_version(), model.poll_interval, notes=[SD_NOTE])
    for cid, avg, *_ in load_dataset()["results_table"]["rows"]:
        stats = run_protocol(simple_plan([cid], name=cid), profile, model, registry, trials=1,
                             step_size=step_size)
        err = abs(stats.avg - avg) * 60.0
        report.table.append(TableRow(cid, avg, stats.avg, err, err <= model.poll_interval + 1e-9))
    report.cross_validation = cross_validate(model, registry, paper_heldout_cases(), step_size)
    return report


__all__ = [
    "DrainCurve",
    "ReproductionReport",
    "TableRow",
    "TrialStats",
    "drain_curve",
    "full_access_profile",
    "protocol_time",
    "reproduce_paper",
    "run_protocol",
    "stats_to_csv",
]
