"""Discrete-time drain simulation of attack plans.

The same rate law drives two paths: :func:`simulate` steps one device and records
a full trace (triggers, phases, charging schedule); :func:`run_batch` steps many
independent trials at once with numpy for trigger-free plans. Both evaluate
identical float64 expressions in the same order, so a batch row matches the
scalar run bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .core import (
    DRAIN_PCT,
    LEVEL_EPS,
    BatteryState,
    DeviceProfile,
    PowerModel,
    Registry,
    ComponentSpec,
    reported_level,
)
from .errors import InfeasiblePlan, InvalidArgument
from .plan import AttackPlan, check_feasibility

TERMINAL_REASONS = ("goal_met", "battery_dead", "time_limit", "plan_exhausted")
SAMPLERS = ("beta", "truncnorm")

DEFAULT_STEP = 1.0  # seconds
DEFAULT_TIME_LIMIT = 24 * 60.0  # minutes


# -- stochastic drain times ---------------------------------------------------------


def beta_shape(spec: ComponentSpec) -> Optional[tuple[float, float]]:
    """Beta(a, b) shape on [min, max] whose mean and sd equal the configured ones.

    Returns None when the distribution is degenerate (zero spread).
    """
    lo, hi, mean, sd = spec.drain_time_min, spec.drain_time_max, spec.drain_time_mean, spec.drain_time_sd
    if sd == 0 or hi == lo:
        return None
    x = (mean - lo) / (hi - lo)
    var = (sd / (hi - lo)) ** 2
    if not 0 < x < 1 or var >= x * (1 - x):
        raise InvalidArgument(
            f"{spec.id}: sd {sd} is too large for mean {mean} within [{lo}, {hi}]"
        )
    common = x * (1 - x) / var - 1
    return x * common, (1 - x) * common


def draw_drain_time(spec: ComponentSpec, rng: np.random.Generator, sampler: str = "beta") -> float:
    """One per-trial 5%-drain time in minutes, always inside [min, max].

    ``beta`` matches the configured mean and sd exactly. ``truncnorm`` treats
    them as the parameters of a normal cut to [min, max], which shifts both
    moments for the measured rows.
    """
    lo, hi = spec.drain_time_min, spec.drain_time_max
    if sampler == "beta":
        shape = beta_shape(spec)
        if shape is None:
            return float(spec.drain_time_mean)
        return float(lo + (hi - lo) * rng.beta(*shape))
    if sampler == "truncnorm":
        if spec.drain_time_sd == 0 or hi == lo:
            return float(spec.drain_time_mean)
        a = ndtr((lo - spec.drain_time_mean) / spec.drain_time_sd)
        b = ndtr((hi - spec.drain_time_mean) / spec.drain_time_sd)
        z = ndtri(a + (b - a) * rng.random())
        return float(min(max(spec.drain_time_mean + spec.drain_time_sd * z, lo), hi))
    raise InvalidArgument(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")


def draw_rates(
    component_ids: Iterable[str], registry: Registry, rng: np.random.Generator, sampler: str = "beta"
) -> dict[str, float]:
    """Frozen per-trial rates, drawn once per component in sorted id order."""
    return {cid: DRAIN_PCT / draw_drain_time(registry[cid], rng, sampler) for cid in sorted(component_ids)}


def mean_rates(component_ids: Iterable[str], registry: Registry) -> dict[str, float]:
    return {cid: registry[cid].mean_rate for cid in sorted(component_ids)}


# -- the rate law -------------------------------------------------------------------


def gross_rate(level, active, model: PowerModel, registry: Registry, rates=None, scales=None):
    """Percent per minute drained by ``active`` before any charging.

    ``level`` may be a float or an array of per-trial levels; ``rates`` then maps
    ids to floats or arrays of the same shape.
    """
    if not active:
        return model.baseline_rate
    total = 0.0
    for cid in sorted(active):
        r = registry[cid].mean_rate if rates is None else rates[cid]
        if scales:
            r = r * scales.get(cid, 1.0)
        if registry[cid].display_class:
            if isinstance(level, np.ndarray):
                r = r * np.where(level <= model.dim_threshold, model.dim_factor_phi, 1.0)
            elif level <= model.dim_threshold:
                r = r * model.dim_factor_phi
        total = total + r
    return model.eta_for(active) * total


def net_rate(level, active, charging, model, registry, rates=None, scales=None):
    gross = gross_rate(level, active, model, registry, rates, scales)
    if isinstance(charging, np.ndarray):
        return gross - np.where(charging, model.charging_supply, 0.0)
    return gross - model.charging_supply if charging else gross


def _advance(level, net, dt):
    new = level - net * (dt / 60.0)
    if isinstance(new, np.ndarray):
        return np.minimum(np.maximum(new, 0.0), 100.0)
    return min(max(new, 0.0), 100.0)


def step(
    state: BatteryState,
    active: Iterable[str],
    model: PowerModel,
    registry: Registry,
    dt: float = DEFAULT_STEP,
    rates: Optional[Mapping[str, float]] = None,
    scales: Optional[Mapping[str, float]] = None,
) -> BatteryState:
    """Advance one step of ``dt`` seconds with ``active`` components running."""
    active = frozenset(active)
    net = net_rate(state.level, active, state.charging, model, registry, rates, scales)
    return BatteryState(_advance(state.level, net, dt), state.charging, state.elapsed + dt, state.granularity)


# -- traces ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    t_seconds: float
    level: float
    reported_level: int
    active: tuple
    charging: bool
    events: tuple = ()


@dataclass(frozen=True)
class SimulationTrace:
    samples: tuple
    terminal: str
    step_size: float

    @property
    def elapsed_seconds(self) -> float:
        return self.samples[-1].t_seconds

    @property
    def minutes(self) -> float:
        return self.elapsed_seconds / 60.0

    @property
    def initial_level(self) -> float:
        return self.samples[0].level

    @property
    def final_level(self) -> float:
        return self.samples[-1].level

    def rows(self) -> list[dict]:
        return [
            {
                "t_seconds": s.t_seconds,
                "level": s.level,
                "reported_level": s.reported_level,
                "active": "+".join(s.active),
                "charging": s.charging,
                "event": ";".join(s.events),
            }
            for s in self.samples
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_seconds", "level", "reported_level", "active", "charging", "event"])
        for r in self.rows():
            w.writerow([_num(r["t_seconds"]), repr(float(r["level"])), r["reported_level"], r["active"],
                        int(r["charging"]), r["event"]])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"terminal": self.terminal, "step_size": self.step_size, "samples": self.rows()}
        return json.dumps(doc, indent=1) + "\n"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# -- the scalar simulator -------------------------------------------------------------


def _condition_holds(cond, reported: int, charging: bool, t: float) -> bool:
    if cond.kind == "battery_below":
        return reported < cond.value
    if cond.kind == "battery_above":
        return reported > cond.value
    if cond.kind == "charging_became":
        return charging is cond.value
    return t > cond.value * 60.0


def evaluate_triggers(state: BatteryState, triggers, active, scales=None, memory=None):
    """Apply every trigger whose condition just became true, in declaration order.

    Conditions read the observer's integer ``reported_level``. Each trigger is
    edge-sensitive: it fires when its condition flips from false to true, and a
    ``once`` trigger never fires again. ``memory`` carries the previous condition
    values and fired flags between calls; ``scales`` is updated in place.

    Returns the new active set and the list of fired event labels.
    """
    memory = memory if memory is not None else TriggerMemory.initial(triggers, state)
    scales = scales if scales is not None else {}
    active = set(active)
    fired = []
    rep = state.reported_level
    for i, trig in enumerate(triggers):
        holds = _condition_holds(trig.condition, rep, state.charging, state.elapsed)
        rising = holds and not memory.previous[i]
        memory.previous[i] = holds
        if not rising or (trig.once and memory.fired[i]):
            continue
        memory.fired[i] = True
        act = trig.action
        ids = "+".join(sorted(act.components))
        if act.kind == "start":
            active |= act.components
            fired.append(f"start:{ids}")
        elif act.kind == "stop":
            active -= act.components
            fired.append(f"stop:{ids}")
        elif act.kind == "stop_all":
            active.clear()
            fired.append("stop_all")
        else:
            for cid in act.components:
                scales[cid] = scales.get(cid, 1.0) * act.factor
            fired.append(f"scale:{ids}:x{act.factor:g}")
    return frozenset(active), fired


@dataclass
class TriggerMemory:
    previous: list
    fired: list

    @classmethod
    def initial(cls, triggers, state: BatteryState) -> "TriggerMemory":
        # a charging flag that is already set at launch is not a flip
        prev = [t.condition.kind == "charging_became" and state.charging is t.condition.value for t in triggers]
        return cls(prev, [False] * len(triggers))


def _live_start_triggers(plan: AttackPlan, memory: TriggerMemory) -> bool:
    return any(
        t.action.kind in ("start", "scale") and not (t.once and memory.fired[i])
        for i, t in enumerate(plan.triggers)
    )


def simulate(
    plan: AttackPlan,
    profile: DeviceProfile,
    model: PowerModel,
    registry: Registry,
    mode: str = "deterministic",
    seed: int = 0,
    step_size: float = DEFAULT_STEP,
    time_limit: float = DEFAULT_TIME_LIMIT,
    force: bool = False,
    charging_schedule: Sequence[tuple[float, bool]] = (),
    sampler: str = "beta",
    until: Optional[Callable[[Sample], bool]] = None,
) -> SimulationTrace:
    """Run ``plan`` on one device and return the per-step trace.

    ``time_limit`` and ``charging_schedule`` times are minutes; ``step_size`` is
    seconds. ``charging_schedule`` lists (minute, plugged_in) changes to the
    charging flag. ``until`` is an extra stop condition checked on every sample
    (used by the measurement harness); it ends the run as ``goal_met``.
    """
    if not step_size > 0:
        raise InvalidArgument(f"step_size must be positive, got {step_size!r}")
    if mode not in ("deterministic", "stochastic"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if not force:
        report = check_feasibility(plan, profile, registry)
        if not report.feasible:
            raise InfeasiblePlan(report)

    ids = plan.components()
    if mode == "stochastic":
        rates = draw_rates(ids, registry, np.random.default_rng(seed), sampler)
    else:
        rates = mean_rates(ids, registry)

    gran = profile.battery_report_granularity
    level = float(profile.initial_battery)
    initial = level
    charging = profile.charging
    schedule = sorted(charging_schedule)
    sched_i = 0
    scales: dict[str, float] = {}
    phase_i = 0
    phase_start = 0.0
    active = frozenset(plan.steps[0].activate) if plan.steps else frozenset()
    memory = TriggerMemory.initial(plan.triggers, BatteryState(level, charging, 0.0, gran))
    limit_s = time_limit * 60.0
    goal = plan.goal

    samples = []
    n = 0
    terminal = None
    # the net rate only moves with these inputs; reusing it keeps floats identical
    cache_key, net = None, 0.0
    while terminal is None:
        t = n * step_size
        events = ["phase:0"] if n == 0 and plan.steps else []
        while sched_i < len(schedule) and schedule[sched_i][0] * 60.0 <= t:
            if schedule[sched_i][1] != charging:
                charging = schedule[sched_i][1]
                events.append("charging:on" if charging else "charging:off")
            sched_i += 1
        while phase_i < len(plan.steps) and plan.steps[phase_i].duration is not None:
            end = phase_start + plan.steps[phase_i].duration * 60.0
            if t < end:
                break
            active = active - plan.steps[phase_i].activate
            phase_i += 1
            phase_start = end
            if phase_i < len(plan.steps):
                active = active | plan.steps[phase_i].activate
                events.append(f"phase:{phase_i}")
            else:
                events.append("phases_done")

        if plan.triggers:
            state = BatteryState(level, charging, t, gran)
            active, fired = evaluate_triggers(state, plan.triggers, active, scales, memory)
            events.extend(fired)
            if fired:
                cache_key = None

        sample = Sample(t, level, reported_level(level, gran), tuple(sorted(active)), charging, tuple(events))
        samples.append(sample)

        if level <= LEVEL_EPS:
            terminal = "battery_dead"
        elif goal.kind == "partial_drain" and initial - level >= goal.delta - LEVEL_EPS:
            terminal = "goal_met"
        elif until is not None and until(sample):
            terminal = "goal_met"
        elif (
            not active
            and (phase_i >= len(plan.steps) or plan.steps[phase_i].duration is None)
            and not _live_start_triggers(plan, memory)
            and sched_i >= len(schedule)
            and model.baseline_rate == 0
            and not (charging and model.charging_supply > 0 and level < 100)
        ):
            terminal = "plan_exhausted"
        elif t >= limit_s:
            terminal = "time_limit"
        else:
            key = (active, charging, level <= model.dim_threshold)
            if key != cache_key:
                net = net_rate(level, active, charging, model, registry, rates, scales)
                cache_key = key
            level = _advance(level, net, step_size)
            n += 1
    return SimulationTrace(tuple(samples), terminal, step_size)


# -- the batch runner --------------------------------------------------------------


def run_batch(
    plan: AttackPlan,
    profile: DeviceProfile,
    model: PowerModel,
    registry: Registry,
    rates: Mapping[str, np.ndarray],
    observe: Callable[[float, np.ndarray], bool],
    step_size: float = DEFAULT_STEP,
    time_limit: float = DEFAULT_TIME_LIMIT,
) -> float:
    """Step many trials of a trigger-free plan in lockstep.

    ``rates`` maps each component id to a per-trial rate array. ``observe(t, levels)``
    is called on every step (including t = 0) and returns True once the caller
    has seen enough. Returns the simulated seconds at which stepping stopped.
    """
    if plan.triggers:
        raise InvalidArgument("run_batch does not evaluate triggers; use simulate")
    if not step_size > 0:
        raise InvalidArgument(f"step_size must be positive, got {step_size!r}")
    n_trials = len(next(iter(rates.values()))) if rates else 1
    level = np.full(n_trials, float(profile.initial_battery))
    charging = profile.charging
    phase_i = 0
    phase_start = 0.0
    active = frozenset(plan.steps[0].activate) if plan.steps else frozenset()
    limit_s = time_limit * 60.0
    n = 0
    while True:
        t = n * step_size
        while phase_i < len(plan.steps) and plan.steps[phase_i].duration is not None:
            end = phase_start + plan.steps[phase_i].duration * 60.0
            if t < end:
                break
            active = active - plan.steps[phase_i].activate
            phase_i += 1
            phase_start = end
            if phase_i < len(plan.steps):
                active = active | plan.steps[phase_i].activate
        if observe(t, level) or t >= limit_s:
            return t
        net = net_rate(level, active, charging, model, registry, rates)
        level = _advance(level, net, step_size)
        n += 1


def reported_levels(level: np.ndarray, granularity: int = 1) -> np.ndarray:
    """Vectorised :func:`drainsim.core.reported_level`."""
    return np.maximum(np.ceil(level / granularity - LEVEL_EPS), 0).astype(np.int64) * granularity


__all__ = [
    "BatteryState",
    "Sample",
    "SimulationTrace",
    "TriggerMemory",
    "beta_shape",
    "draw_drain_time",
    "draw_rates",
    "evaluate_triggers",
    "gross_rate",
    "mean_rates",
    "net_rate",
    "reported_level",
    "reported_levels",
    "run_batch",
    "simulate",
    "step",
]
