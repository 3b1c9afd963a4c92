"""Attack plans: schema, parsing, feasibility against a device, stealth and efficacy.

A plan runs its phases one after another; every component listed in a phase runs
concurrently with the others in that phase. Triggers react to what an on-device
observer can see (integer battery percent, charging flag, elapsed time).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .core import DeviceProfile, PowerModel, Registry, _is_num
from .errors import InvalidArgument, StealthNotConfigured, UnsupportedGoal, ValidationError

GOAL_KINDS = ("full_drain", "partial_drain", "event_controlled")
UNSUPPORTED_GOALS = ("degradation", "battery_degradation")
LAUNCH_LOCATIONS = ("app", "web", "proximity", "remote")
CONTROL_MODES = ("controlled", "uncontrolled")
CONDITION_KINDS = ("battery_below", "battery_above", "charging_became", "elapsed_exceeds")
ACTION_KINDS = ("start", "stop", "stop_all", "scale")


@dataclass(frozen=True)
class Goal:
    kind: str
    delta: Optional[float] = None

    def __str__(self):
        return f"partial_drain({self.delta:g})" if self.kind == "partial_drain" else self.kind


@dataclass(frozen=True)
class Phase:
    activate: frozenset
    duration: Optional[float] = None  # minutes; None runs until goal or a trigger stops it


@dataclass(frozen=True)
class Condition:
    kind: str
    value: Any


@dataclass(frozen=True)
class Action:
    kind: str
    components: frozenset = frozenset()
    factor: Optional[float] = None


@dataclass(frozen=True)
class Trigger:
    condition: Condition
    action: Action
    once: bool = False


@dataclass(frozen=True)
class PlanMetadata:
    """Taxonomy fields carried along for reporting; they do not affect simulation."""

    targets: str = ""
    control: str = "controlled"
    process: str = ""


@dataclass(frozen=True)
class AttackPlan:
    goal: Goal
    steps: tuple = ()
    triggers: tuple = ()
    launch_location: str = "app"
    metadata: PlanMetadata = field(default_factory=PlanMetadata)
    name: str = ""

    def components(self) -> frozenset:
        ids = set()
        for phase in self.steps:
            ids |= phase.activate
        for trig in self.triggers:
            ids |= trig.action.components
        return frozenset(ids)


# -- parsing -------------------------------------------------------------------


def _ids(raw: Any, where: str, registry: Registry, v: list[str]) -> frozenset:
    if not isinstance(raw, list) or not raw or not all(isinstance(x, str) for x in raw):
        v.append(f"{where}: expected a non-empty list of component ids")
        return frozenset()
    for cid in raw:
        if cid not in registry:
            v.append(f"{where}: unknown component id {cid!r}")
    return frozenset(raw)


def _check_keys(obj: Mapping, allowed: Iterable[str], where: str, v: list[str]) -> None:
    allowed = set(allowed)
    for k in obj:
        if k not in allowed:
            v.append(f"{where}: unknown field {k!r}")


def _parse_goal(raw: Any, v: list[str]) -> Optional[Goal]:
    if isinstance(raw, str):
        kind, params = raw, {}
    elif isinstance(raw, Mapping):
        _check_keys(raw, ("type", "delta"), "goal", v)
        kind, params = raw.get("type"), raw
    else:
        v.append("goal: expected a string or an object with 'type'")
        return None
    if kind in UNSUPPORTED_GOALS:
        raise UnsupportedGoal(
            [f"unsupported goal {kind!r}: battery degradation is not modeled"], "plan"
        )
    if kind not in GOAL_KINDS:
        v.append(f"goal: unknown goal {kind!r}")
        return None
    if kind == "partial_drain":
        delta = params.get("delta")
        if not _is_num(delta) or not 0 < delta <= 100:
            v.append(f"goal: partial_drain delta must be in (0, 100] (got {delta!r})")
            return None
        return Goal(kind, float(delta))
    if "delta" in params:
        v.append(f"goal: {kind} takes no delta")
    return Goal(kind)


def _parse_trigger(raw: Any, i: int, registry: Registry, v: list[str]) -> Optional[Trigger]:
    where = f"triggers[{i}]"
    if not isinstance(raw, Mapping):
        v.append(f"{where}: expected an object")
        return None
    _check_keys(raw, ("condition", "action", "once"), where, v)
    once = raw.get("once", False)
    if not isinstance(once, bool):
        v.append(f"{where}.once: expected a boolean")
    cond_raw, act_raw = raw.get("condition"), raw.get("action")
    cond = act = None
    if not isinstance(cond_raw, Mapping):
        v.append(f"{where}.condition: expected an object")
    else:
        _check_keys(cond_raw, ("type", "value"), f"{where}.condition", v)
        kind, value = cond_raw.get("type"), cond_raw.get("value")
        if kind not in CONDITION_KINDS:
            v.append(f"{where}.condition: unknown trigger condition {kind!r}")
        elif kind == "charging_became":
            if not isinstance(value, bool):
                v.append(f"{where}.condition: charging_became needs a boolean value")
            else:
                cond = Condition(kind, value)
        elif kind == "elapsed_exceeds":
            if not _is_num(value) or value < 0:
                v.append(f"{where}.condition: elapsed_exceeds needs minutes ≥ 0")
            else:
                cond = Condition(kind, float(value))
        elif not _is_num(value) or not 0 <= value <= 100:
            v.append(f"{where}.condition: {kind} threshold must be in [0, 100]")
        else:
            cond = Condition(kind, float(value))
    if not isinstance(act_raw, Mapping):
        v.append(f"{where}.action: expected an object")
    else:
        _check_keys(act_raw, ("type", "components", "factor"), f"{where}.action", v)
        kind = act_raw.get("type")
        if kind not in ACTION_KINDS:
            v.append(f"{where}.action: unknown action {kind!r}")
        elif kind == "stop_all":
            act = Action(kind)
        else:
            ids = _ids(act_raw.get("components"), f"{where}.action", registry, v)
            factor = None
            if kind == "scale":
                factor = act_raw.get("factor")
                if not _is_num(factor) or factor <= 0:
                    v.append(f"{where}.action: scale factor must be > 0")
                    factor = None
            act = Action(kind, ids, None if factor is None else float(factor))
    if cond is None or act is None:
        return None
    return Trigger(cond, act, once)


def plan_from_dict(doc: Any, registry: Registry) -> AttackPlan:
    if not isinstance(doc, Mapping):
        raise ValidationError(["plan must be a JSON object"], "plan")
    v: list[str] = []
    _check_keys(doc, ("name", "goal", "steps", "triggers", "launch_location", "metadata"), "plan", v)
    if "goal" not in doc:
        v.append("plan: missing field 'goal'")
    goal = _parse_goal(doc.get("goal"), v) if "goal" in doc else None

    steps = []
    raw_steps = doc.get("steps", [])
    if not isinstance(raw_steps, list):
        v.append("steps: expected a list")
        raw_steps = []
    for i, s in enumerate(raw_steps):
        if not isinstance(s, Mapping):
            v.append(f"steps[{i}]: expected an object")
            continue
        _check_keys(s, ("activate", "duration"), f"steps[{i}]", v)
        ids = _ids(s.get("activate"), f"steps[{i}].activate", registry, v)
        dur = s.get("duration")
        if dur is not None and (not _is_num(dur) or dur <= 0):
            v.append(f"steps[{i}].duration: expected minutes > 0 or null")
            dur = None
        steps.append(Phase(ids, None if dur is None else float(dur)))

    triggers = []
    raw_triggers = doc.get("triggers", [])
    if not isinstance(raw_triggers, list):
        v.append("triggers: expected a list")
        raw_triggers = []
    for i, t in enumerate(raw_triggers):
        trig = _parse_trigger(t, i, registry, v)
        if trig is not None:
            triggers.append(trig)

    if not steps and not any(t.action.kind == "start" for t in triggers):
        v.append("plan: no activation (needs at least one phase or a trigger that starts components)")

    loc = doc.get("launch_location", "app")
    if loc not in LAUNCH_LOCATIONS:
        v.append(f"launch_location: expected one of {LAUNCH_LOCATIONS} (got {loc!r})")

    meta = PlanMetadata()
    raw_meta = doc.get("metadata")
    if raw_meta is not None:
        if not isinstance(raw_meta, Mapping):
            v.append("metadata: expected an object")
        else:
            _check_keys(raw_meta, ("targets", "control", "process"), "metadata", v)
            for k in ("targets", "process"):
                if not isinstance(raw_meta.get(k, ""), str):
                    v.append(f"metadata.{k}: expected text")
            control = raw_meta.get("control", "controlled")
            if control not in CONTROL_MODES:
                v.append(f"metadata.control: expected one of {CONTROL_MODES}")
            if not v:
                meta = PlanMetadata(raw_meta.get("targets", ""), control, raw_meta.get("process", ""))

    name = doc.get("name", "")
    if not isinstance(name, str):
        v.append("name: expected a string")
    if v:
        raise ValidationError(v, "plan")
    return AttackPlan(goal, tuple(steps), tuple(triggers), loc, meta, name)


def parse_plan(document: str, registry: Registry) -> AttackPlan:
    """Parse and validate a plan JSON document against ``registry``.

    Raises :class:`ValidationError` carrying every schema violation found.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"invalid JSON: {exc}"], "plan") from None
    return plan_from_dict(doc, registry)


def plan_to_dict(plan: AttackPlan) -> dict:
    goal: Any = plan.goal.kind
    if plan.goal.kind == "partial_drain":
        goal = {"type": "partial_drain", "delta": plan.goal.delta}
    triggers = []
    for t in plan.triggers:
        action: dict = {"type": t.action.kind}
        if t.action.kind != "stop_all":
            action["components"] = sorted(t.action.components)
        if t.action.kind == "scale":
            action["factor"] = t.action.factor
        triggers.append(
            {"condition": {"type": t.condition.kind, "value": t.condition.value}, "action": action, "once": t.once}
        )
    return {
        "name": plan.name,
        "goal": goal,
        "steps": [{"activate": sorted(p.activate), "duration": p.duration} for p in plan.steps],
        "triggers": triggers,
        "launch_location": plan.launch_location,
        "metadata": {
            "targets": plan.metadata.targets,
            "control": plan.metadata.control,
            "process": plan.metadata.process,
        },
    }


def serialize_plan(plan: AttackPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2) + "\n"


def simple_plan(components: Iterable[str], goal: Goal | str = "full_drain", **kw) -> AttackPlan:
    """One-phase plan running ``components`` together; handy for tests and reports."""
    if isinstance(goal, str):
        goal = Goal(goal)
    return AttackPlan(goal, (Phase(frozenset(components)),), **kw)


# -- feasibility ------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentVerdict:
    permission_ok: bool
    setting_ok: bool
    web_ok: bool = True

    @property
    def feasible(self) -> bool:
        return self.permission_ok and self.setting_ok and self.web_ok


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    missing_permissions: frozenset
    missing_settings: frozenset
    web_inaccessible: frozenset
    verdicts: Mapping[str, ComponentVerdict]

    def summary(self) -> str:
        if self.feasible:
            return "feasible"
        parts = []
        if self.missing_permissions:
            parts.append("missing permissions: " + ", ".join(sorted(self.missing_permissions)))
        if self.missing_settings:
            parts.append("missing settings: " + ", ".join(sorted(self.missing_settings)))
        if self.web_inaccessible:
            parts.append("not reachable from web: " + ", ".join(sorted(self.web_inaccessible)))
        return "infeasible (" + "; ".join(parts) + ")"


def check_feasibility(plan: AttackPlan, profile: DeviceProfile, registry: Registry) -> FeasibilityReport:
    """Decide whether ``profile`` lets ``plan`` use every component it references.

    Web launches skip permission checks entirely but can only reach
    web-accessible components. Elsewhere a granted permission also counts as
    the right to switch the component's setting on.
    """
    verdicts = {}
    perms, settings, web = set(), set(), set()
    for cid in sorted(plan.components()):
        c = registry[cid]
        if plan.launch_location == "web":
            verdicts[cid] = ComponentVerdict(True, True, c.web_accessible)
            if not c.web_accessible:
                web.add(cid)
            continue
        granted = c.required_permission is not None and c.required_permission in profile.granted_permissions
        perm_ok = not c.permission_required_even_if_setting_enabled or granted
        setting_ok = c.required_setting is None or c.required_setting in profile.enabled_settings or granted
        verdicts[cid] = ComponentVerdict(perm_ok, setting_ok)
        if not perm_ok:
            perms.add(c.required_permission)
        if not setting_ok:
            settings.add(c.required_setting)
    feasible = not (perms or settings or web)
    return FeasibilityReport(feasible, frozenset(perms), frozenset(settings), frozenset(web), verdicts)


# -- scoring ------------------------------------------------------------------


def stealth_score(plan: AttackPlan, registry: Registry) -> int:
    """Stealth level of the plan: its most detectable component sets the bound."""
    ids = plan.components()
    if not ids:
        raise StealthNotConfigured("plan references no components")
    missing = sorted(c for c in ids if registry[c].stealth_level is None)
    if missing:
        raise StealthNotConfigured("stealth not configured for: " + ", ".join(missing))
    return min(registry[c].stealth_level for c in ids)


def efficacy(trace) -> float:
    """Net percent per minute drained over the whole trace."""
    samples = trace.samples
    if not samples:
        raise InvalidArgument("empty trace")
    minutes = (samples[-1].t_seconds - samples[0].t_seconds) / 60.0
    if minutes <= 0:
        raise InvalidArgument("trace has zero elapsed time")
    return (samples[0].level - samples[-1].level) / minutes


@dataclass(frozen=True)
class RankedPlan:
    name: str
    plan: AttackPlan
    feasible: bool
    efficacy: float
    minutes: float
    terminal: str


def rank_plans(
    plans: Sequence[AttackPlan],
    profile: DeviceProfile,
    model: PowerModel,
    registry: Registry,
    time_limit: float = 24 * 60,
) -> list[RankedPlan]:
    """Order plans feasible-first, then by descending deterministic efficacy.

    Ties fall back to plan name. Infeasible plans are still simulated (forced)
    so they are ordered among themselves too.
    """
    from .engine import simulate

    ranked = []
    for p in plans:
        feasible = check_feasibility(p, profile, registry).feasible
        trace = simulate(p, profile, model, registry, time_limit=time_limit, force=True)
        eff = efficacy(trace) if trace.elapsed_seconds > 0 else 0.0
        ranked.append(RankedPlan(p.name, p, feasible, eff, trace.elapsed_seconds / 60.0, trace.terminal))
    ranked.sort(key=lambda r: (not r.feasible, -r.efficacy if math.isfinite(r.efficacy) else 0.0, r.name))
    return ranked
