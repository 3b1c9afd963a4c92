import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drainsim.core import DeviceProfile
from drainsim.dataset import TRIO, paper_registry
from drainsim.engine import simulate
from drainsim.errors import StealthNotConfigured, UnsupportedGoal, ValidationError
from drainsim.plan import (
    Action,
    AttackPlan,
    Condition,
    Goal,
    Phase,
    PlanMetadata,
    Trigger,
    check_feasibility,
    efficacy,
    parse_plan,
    plan_from_dict,
    rank_plans,
    serialize_plan,
    simple_plan,
    stealth_score,
)

REG = paper_registry()
IDS = sorted(REG)


def test_parse_trio_plan(registry):
    doc = {"goal": "full_drain", "steps": [{"activate": ["brightness", "cpu", "camera_flash"]}],
           "launch_location": "app"}
    plan = parse_plan(json.dumps(doc), registry)
    assert plan.goal == Goal("full_drain")
    assert plan.steps == (Phase(frozenset(TRIO)),)
    assert plan.launch_location == "app"


def test_parse_no_activation(registry):
    with pytest.raises(ValidationError) as exc:
        parse_plan('{"goal": "full_drain", "steps": [], "triggers": []}', registry)
    assert any("no activation" in v for v in exc.value.violations)


def test_parse_partial_drain(registry):
    plan = parse_plan('{"goal": {"type": "partial_drain", "delta": 5}, "steps": [{"activate": ["vibration"]}]}',
                      registry)
    assert plan.goal == Goal("partial_drain", 5.0)


def test_parse_reports_all_violations(registry):
    doc = {
        "goal": {"type": "partial_drain", "delta": 150},
        "steps": [{"activate": ["warp_drive"], "duration": -1}],
        "triggers": [{"condition": {"type": "moon_phase", "value": 1}, "action": {"type": "stop_all"}}],
        "launch_location": "orbit",
        "colour": "red",
    }
    with pytest.raises(ValidationError) as exc:
        plan_from_dict(doc, registry)
    text = " | ".join(exc.value.violations)
    for needle in ("delta", "warp_drive", "duration", "moon_phase", "launch_location", "colour"):
        assert needle in text


def test_parse_rejects_degradation_goal(registry):
    with pytest.raises(UnsupportedGoal, match="unsupported goal"):
        parse_plan('{"goal": "degradation", "steps": [{"activate": ["cpu"]}]}', registry)


def test_parse_rejects_bad_json(registry):
    with pytest.raises(ValidationError, match="invalid JSON"):
        parse_plan("{goal", registry)


def test_parse_trigger_only_plan(registry):
    doc = {"goal": "event_controlled",
           "triggers": [{"condition": {"type": "charging_became", "value": True},
                         "action": {"type": "start", "components": list(TRIO)}, "once": True}]}
    plan = plan_from_dict(doc, registry)
    assert plan.steps == ()
    assert plan.triggers[0] == Trigger(Condition("charging_became", True), Action("start", frozenset(TRIO)), True)


@pytest.mark.parametrize(
    "trigger, needle",
    [
        ({"condition": {"type": "battery_below", "value": 120}, "action": {"type": "stop_all"}}, "threshold"),
        ({"condition": {"type": "battery_below", "value": 20},
          "action": {"type": "scale", "components": ["cpu"], "factor": 0}}, "factor"),
        ({"condition": {"type": "battery_below", "value": 20},
          "action": {"type": "stop", "components": []}}, "non-empty"),
        ({"condition": {"type": "charging_became", "value": "yes"}, "action": {"type": "stop_all"}}, "boolean"),
        ({"condition": {"type": "battery_below", "value": 20}, "action": {"type": "explode"}}, "unknown action"),
    ],
)
def test_parse_trigger_violations(registry, trigger, needle):
    doc = {"goal": "full_drain", "steps": [{"activate": ["cpu"]}], "triggers": [trigger]}
    with pytest.raises(ValidationError) as exc:
        plan_from_dict(doc, registry)
    assert any(needle in v for v in exc.value.violations)


# -- round trip ---------------------------------------------------------------------

ids = st.frozensets(st.sampled_from(IDS), min_size=1, max_size=4)
goals = st.one_of(
    st.sampled_from([Goal("full_drain"), Goal("event_controlled")]),
    st.builds(Goal, st.just("partial_drain"), st.floats(min_value=0.5, max_value=100).map(lambda x: round(x, 3))),
)
conditions = st.one_of(
    st.builds(Condition, st.sampled_from(["battery_below", "battery_above"]), st.integers(0, 100).map(float)),
    st.builds(Condition, st.just("charging_became"), st.booleans()),
    st.builds(Condition, st.just("elapsed_exceeds"), st.integers(0, 500).map(float)),
)
actions = st.one_of(
    st.builds(Action, st.sampled_from(["start", "stop"]), ids),
    st.just(Action("stop_all")),
    st.builds(Action, st.just("scale"), ids, st.floats(min_value=0.1, max_value=10)),
)
plans = st.builds(
    AttackPlan,
    goal=goals,
    steps=st.lists(st.builds(Phase, ids, st.one_of(st.none(), st.integers(1, 60).map(float))),
                   min_size=1, max_size=3).map(tuple),
    triggers=st.lists(st.builds(Trigger, conditions, actions, st.booleans()), max_size=3).map(tuple),
    launch_location=st.sampled_from(["app", "web", "proximity", "remote"]),
    metadata=st.builds(PlanMetadata, st.text(max_size=8), st.sampled_from(["controlled", "uncontrolled"]),
                       st.text(max_size=8)),
    name=st.text(max_size=8),
)


@given(plans)
def test_parse_serialize_round_trip(plan):
    once = parse_plan(serialize_plan(plan), REG)
    assert once == plan
    assert serialize_plan(once) == serialize_plan(plan)


# -- feasibility --------------------------------------------------------------------


def test_gps_needs_fine_location(registry, bare_profile):
    r = check_feasibility(simple_plan(["gps"]), bare_profile, registry)
    assert not r.feasible
    assert "ACCESS_FINE_LOCATION" in r.missing_permissions


def test_gps_setting_alone_is_not_enough(registry):
    r = check_feasibility(simple_plan(["gps"]), DeviceProfile(enabled_settings=frozenset({"gps_enabled"})), registry)
    assert r.missing_permissions == {"ACCESS_FINE_LOCATION"}
    assert r.missing_settings == frozenset()


def test_unrestricted_components_always_feasible(registry, bare_profile):
    r = check_feasibility(simple_plan(["cpu", "brightness"]), bare_profile, registry)
    assert r.feasible and r.summary() == "feasible"


def test_wifi_with_setting_needs_no_permission(registry):
    profile = DeviceProfile(enabled_settings=frozenset({"wifi_enabled"}))
    assert check_feasibility(simple_plan(["wifi_down"]), profile, registry).feasible


def test_wifi_permission_authorises_setting(registry):
    profile = DeviceProfile(granted_permissions=frozenset({"CHANGE_WIFI_STATE"}))
    assert check_feasibility(simple_plan(["wifi_down"]), profile, registry).feasible


def test_wifi_without_setting_or_permission(registry, bare_profile):
    r = check_feasibility(simple_plan(["wifi_down"]), bare_profile, registry)
    assert r.missing_settings == {"wifi_enabled"}
    assert "wifi_enabled" in r.summary()


def test_web_launch_skips_permissions_but_limits_reach(registry, bare_profile):
    ok = simple_plan(["wifi_down", "cpu"], launch_location="web")
    assert check_feasibility(ok, bare_profile, registry).feasible
    r = check_feasibility(simple_plan(["gps", "cpu"], launch_location="web"), bare_profile, registry)
    assert not r.feasible
    assert r.web_inaccessible == {"gps"}
    assert r.missing_permissions == frozenset()


def test_feasible_iff_nothing_missing(registry, bare_profile):
    for cid in IDS:
        r = check_feasibility(simple_plan([cid]), bare_profile, registry)
        assert r.feasible == (not r.missing_permissions and not r.missing_settings and not r.web_inaccessible)


PERMS = sorted({c.required_permission for c in REG.values() if c.required_permission})
SETTINGS = sorted({c.required_setting for c in REG.values() if c.required_setting})


@given(
    comps=ids,
    perms=st.frozensets(st.sampled_from(PERMS)),
    settings_=st.frozensets(st.sampled_from(SETTINGS)),
    extra_perm=st.sampled_from(PERMS),
    extra_setting=st.sampled_from(SETTINGS),
    loc=st.sampled_from(["app", "web", "remote"]),
)
def test_feasibility_monotone_in_grants(comps, perms, settings_, extra_perm, extra_setting, loc):
    plan = simple_plan(comps, launch_location=loc)
    before = check_feasibility(plan, DeviceProfile(perms, settings_), REG)
    more = [DeviceProfile(perms | {extra_perm}, settings_), DeviceProfile(perms, settings_ | {extra_setting})]
    for profile in more:
        after = check_feasibility(plan, profile, REG)
        if before.feasible:
            assert after.feasible
        assert after.missing_permissions <= before.missing_permissions
        assert after.missing_settings <= before.missing_settings


# -- stealth ------------------------------------------------------------------------


def _with_levels(levels):
    return {cid: replace(REG["cpu"], id=cid, stealth_level=lv) for cid, lv in levels.items()}


@pytest.mark.parametrize(
    "levels, expected",
    [({"a": 2, "b": 4}, 2), ({"a": 3}, 3), ({"a": 0, "b": 4}, 0)],
)
def test_stealth_is_minimum(levels, expected):
    reg = _with_levels(levels)
    assert stealth_score(simple_plan(levels), reg) == expected


def test_stealth_not_configured():
    reg = _with_levels({"a": 2, "b": None})
    with pytest.raises(StealthNotConfigured, match="stealth not configured"):
        stealth_score(simple_plan(["a", "b"]), reg)


def test_stealth_counts_trigger_components():
    reg = _with_levels({"a": 4, "b": 1})
    plan = AttackPlan(Goal("full_drain"), (Phase(frozenset({"a"})),),
                      (Trigger(Condition("battery_below", 50.0), Action("start", frozenset({"b"}))),))
    assert stealth_score(plan, reg) == 1


@given(st.dictionaries(st.sampled_from("abcdef"), st.integers(0, 4), min_size=2))
def test_stealth_monotone_under_adding_components(levels):
    reg = _with_levels(levels)
    names = sorted(levels)
    for k in range(1, len(names)):
        assert stealth_score(simple_plan(names[: k + 1]), reg) <= stealth_score(simple_plan(names[:k]), reg)


# -- efficacy and ranking ------------------------------------------------------------


def test_efficacy_trio_five(registry, model, trio_five, flash_profile):
    trace = simulate(trio_five, flash_profile, model, registry)
    assert efficacy(trace) == pytest.approx(1.0417, abs=1e-2)


def test_efficacy_brightness_full(registry, model, flash_profile):
    trace = simulate(simple_plan(["brightness"]), flash_profile, model, registry)
    assert efficacy(trace) == pytest.approx(100 / 204, rel=2 / (204 * 60))
    assert efficacy(trace) == pytest.approx(0.4902, abs=1e-4)


def test_efficacy_no_drain(registry, model):
    # vibration alone drains slower than the charger refills, so a full battery stays full
    plan = simple_plan(["vibration"], "event_controlled")
    trace = simulate(plan, DeviceProfile(charging=True), model, registry, time_limit=5, force=True)
    assert trace.terminal == "time_limit"
    assert efficacy(trace) == 0


def test_efficacy_rejects_zero_elapsed(registry, model):
    trace = simulate(simple_plan(["cpu"]), DeviceProfile(initial_battery=0), model, registry)
    with pytest.raises(ValueError):
        efficacy(trace)


def _top3():
    return [
        simple_plan(["brightness"], name="brightness"),
        simple_plan(["web_composite"], launch_location="web", name="web"),
        simple_plan(TRIO, name="trio"),
    ]


def test_rank_reproduces_top3(registry, model, open_profile):
    ranked = rank_plans(_top3(), open_profile, model, registry)
    assert [r.name for r in ranked] == ["trio", "web", "brightness"]
    assert [round(r.minutes) for r in ranked] == [99, 164, 204]


def test_rank_single_plan(registry, model, open_profile):
    (only,) = rank_plans(_top3()[:1], open_profile, model, registry)
    assert only.name == "brightness"


def test_rank_infeasible_last(registry, model, bare_profile):
    plans = [simple_plan(["cpu"], name="slow"), simple_plan(["gps", "brightness", "cpu"], name="fast")]
    ranked = rank_plans(plans, bare_profile, model, registry)
    assert [r.name for r in ranked] == ["slow", "fast"]
    assert ranked[1].efficacy > ranked[0].efficacy


def test_rank_ties_break_on_name(registry, model, open_profile):
    plans = [simple_plan(["cpu"], name=n) for n in ("b", "c", "a")]
    assert [r.name for r in rank_plans(plans, open_profile, model, registry)] == ["a", "b", "c"]


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=0.5, max_value=4))
def test_rank_invariant_under_rate_scaling(k):
    from drainsim.dataset import paper_model
    from drainsim.harness import full_access_profile

    model = paper_model()
    scaled = {cid: replace(c, drain_time_mean=c.drain_time_mean / k) for cid, c in REG.items()}
    profile = full_access_profile(REG)
    plans = _top3() + [simple_plan(["vibration"], name="vibration")]
    base = [r.name for r in rank_plans(plans, profile, model, REG)]
    assert [r.name for r in rank_plans(plans, profile, model, scaled)] == base
