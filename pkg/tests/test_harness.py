import csv
import io
import json
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drainsim.core import DeviceProfile
from drainsim.dataset import TRIO, load_dataset, paper_model, paper_registry
from drainsim.engine import draw_rates
from drainsim.errors import InfeasiblePlan, InvalidArgument
from drainsim.harness import (
    ROUNDING_SLACK_SECONDS,
    TrialStats,
    drain_curve,
    full_access_profile,
    protocol_time,
    reproduce_paper,
    run_protocol,
    stats_to_csv,
)
from drainsim.engine import simulate
from drainsim.plan import Action, AttackPlan, Condition, Goal, Phase, Trigger, simple_plan

REG = paper_registry()
MODEL = paper_model()
OPEN = full_access_profile(REG)
ROWS = load_dataset()["results_table"]["rows"]


def test_brightness_protocol_deterministic():
    stats = run_protocol(simple_plan(["brightness"]), OPEN, MODEL, REG, trials=1)
    assert stats.raw_seconds == (444.0,)
    assert stats.whole_minutes == (7,)
    assert stats.avg == pytest.approx(7.4)
    assert stats.rounded().avg == 7.0
    assert stats.id == "brightness"


@pytest.mark.parametrize("cid, avg, sd, mx, mn", ROWS)
def test_every_row_deterministic(cid, avg, sd, mx, mn):
    stats = run_protocol(simple_plan([cid]), OPEN, MODEL, REG, trials=3)
    assert stats.trials == 3 and len(set(stats.raw_seconds)) == 1
    assert abs(stats.avg * 60 - avg * 60) <= MODEL.poll_interval


def test_stochastic_brightness_converges():
    stats = run_protocol(simple_plan(["brightness"]), OPEN, MODEL, REG, trials=10000, seed=0, mode="stochastic")
    assert stats.trials == 10000
    assert abs(stats.avg - 7.4) / 7.4 < 0.02
    assert abs(stats.sd - 1.075) / 1.075 < 0.10
    assert 6 <= stats.min and stats.max <= 10 + MODEL.poll_interval / 60


def test_zero_rate_plan_never_terminates():
    plan = AttackPlan(Goal("partial_drain", 5.0), (Phase(frozenset()),))
    stats = run_protocol(plan, OPEN, MODEL, REG, trials=3)
    assert stats.trials == 0 and stats.non_terminating == 3
    assert math.isnan(stats.avg) and stats.raw_seconds == ()


def test_cap_marks_slow_trials_non_terminating():
    stats = run_protocol(simple_plan(["vibration"]), replace(OPEN, charging=True), MODEL, REG, trials=2,
                         cap_minutes=30)
    assert stats.non_terminating == 2


def test_protocol_requires_feasibility():
    with pytest.raises(InfeasiblePlan):
        run_protocol(simple_plan(["gps"]), DeviceProfile(), MODEL, REG)
    with pytest.raises(InvalidArgument):
        run_protocol(simple_plan(["cpu"]), OPEN, MODEL, REG, trials=0)


def test_trigger_path_matches_batch_path():
    idle = Trigger(Condition("elapsed_exceeds", 10_000.0), Action("stop_all"))
    for mode in ("deterministic", "stochastic"):
        plain = simple_plan(TRIO, name="trio")
        triggered = replace(plain, triggers=(idle,))
        a = run_protocol(plain, OPEN, MODEL, REG, trials=5, seed=11, mode=mode)
        b = run_protocol(triggered, OPEN, MODEL, REG, trials=5, seed=11, mode=mode)
        assert a == b


def test_trigger_plan_protocol():
    # the attack starts only once two minutes have passed
    start = Trigger(Condition("elapsed_exceeds", 2.0), Action("start", frozenset({"brightness"})), once=True)
    plan = AttackPlan(Goal("event_controlled"), (), (start,))
    stats = run_protocol(plan, OPEN, MODEL, REG, trials=1)
    assert stats.raw_seconds[0] == pytest.approx(121 + 444, abs=MODEL.poll_interval)


def test_seeded_reproducibility():
    plan = simple_plan(["bluetooth"])
    a = run_protocol(plan, OPEN, MODEL, REG, trials=20, seed=5, mode="stochastic")
    b = run_protocol(plan, OPEN, MODEL, REG, trials=20, seed=5, mode="stochastic")
    assert a == b
    c = run_protocol(plan, OPEN, MODEL, REG, trials=20, seed=6, mode="stochastic")
    assert c.raw_seconds != a.raw_seconds
    # trial i is seeded with seed + i
    assert c.raw_seconds[:19] == a.raw_seconds[1:]


@settings(max_examples=100)
@given(st.lists(st.floats(min_value=0, max_value=1e5), min_size=1, max_size=40))
def test_stats_match_reference(seconds):
    s = TrialStats.from_seconds("x", seconds)
    minutes = [x / 60 for x in seconds]
    assert s.trials == len(seconds) == len(s.raw_seconds) == len(s.whole_minutes)
    assert s.avg == pytest.approx(statistics.mean(minutes), rel=1e-9, abs=1e-9)
    ref_sd = statistics.stdev(minutes) if len(minutes) > 1 else 0.0
    assert s.sd == pytest.approx(ref_sd, rel=1e-9, abs=1e-9)
    assert s.max == max(minutes) and s.min == min(minutes)
    assert s.min <= s.avg + 1e-9 and s.avg <= s.max + 1e-9 and s.sd >= 0
    assert all(w == math.floor(x / 60 + 0.5) for w, x in zip(s.whole_minutes, seconds))


def test_rounding_is_to_nearest():
    assert TrialStats.from_seconds("x", [89.9, 90, 149.9]).whole_minutes == (1, 2, 2)


def test_stats_csv_schema():
    text = stats_to_csv([TrialStats.from_seconds("cpu", [570, 600])])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["component", "avg", "sd", "max", "min"]
    assert rows[1][0] == "cpu" and float(rows[1][1]) == 9.75


@settings(max_examples=30, deadline=None)
@given(
    cid=st.sampled_from([r[0] for r in ROWS]),
    seed=st.integers(0, 1000),
    initial=st.floats(min_value=20, max_value=100),
    dt=st.sampled_from([0.5, 1.0, 1.5]),
)
def test_protocol_quantization_bounds(cid, seed, initial, dt):
    profile = replace(OPEN, initial_battery=initial)
    stats = run_protocol(simple_plan([cid]), profile, MODEL, REG, trials=1, seed=seed, mode="stochastic",
                         step_size=dt)
    rate = draw_rates([cid], REG, np.random.default_rng(seed))[cid]
    target = math.ceil(initial - 1e-9) - MODEL.drain_threshold
    true_seconds = (initial - target) / rate * 60
    (raw,) = stats.raw_seconds
    assert raw >= true_seconds - 1e-6
    assert raw - true_seconds < MODEL.poll_interval + dt + 1e-6
    assert abs(stats.whole_minutes[0] * 60 - true_seconds) < MODEL.poll_interval + dt + ROUNDING_SLACK_SECONDS


@pytest.mark.parametrize("cid", ["bluetooth", "video", "4g_down"])
def test_stochastic_draws_stay_within_configured_bounds(cid):
    spec = REG[cid]
    rates = [draw_rates([cid], REG, np.random.default_rng(s))[cid] for s in range(3000)]
    times = [5 / r for r in rates]
    assert min(times) >= spec.drain_time_min - 1e-12
    assert max(times) <= spec.drain_time_max + 1e-12


def test_protocol_time_from_trace():
    trace = simulate(simple_plan(["cpu"]), OPEN, MODEL, REG)
    assert protocol_time(trace, OPEN, MODEL) == 570.0


def test_protocol_time_on_dead_battery():
    profile = replace(OPEN, initial_battery=4.2)
    stats = run_protocol(simple_plan(["cpu"]), profile, MODEL, REG, trials=1)
    # the device dies before the reading can fall five points; it then reads 0
    assert stats.trials == 1
    assert stats.raw_seconds[0] >= 4.2 / (5 / 9.5) * 60


# -- curves ---------------------------------------------------------------------------


def test_trio_curve():
    curve = drain_curve(simple_plan(TRIO, name="trio"), OPEN, MODEL, REG, checkpoint=2)
    assert len(curve.points) == 50
    assert curve.points[-1][0] == 0
    assert curve.total_minutes == pytest.approx(98.5, abs=0.1)
    # near-linear until the dim threshold
    head = [d for lv, _, d in curve.points if lv >= 6]
    assert max(head) - min(head) <= 2 * MODEL.poll_interval / 60
    assert curve.terminal == "battery_dead"


def test_brightness_curve_tail_spike():
    curve = drain_curve(simple_plan(["brightness"]), OPEN, MODEL, REG, checkpoint=1)
    head = [d for lv, _, d in curve.points if lv >= 5]
    tail = [d for lv, _, d in curve.points if lv < 5]
    assert len(tail) == 5
    ratio = statistics.fmean(tail) / statistics.fmean(head)
    assert ratio == pytest.approx(1 / MODEL.dim_factor_phi, rel=0.05)
    assert 1 / MODEL.dim_factor_phi == pytest.approx(8.57, abs=0.01)
    assert curve.total_minutes == pytest.approx(204, abs=1)


def test_brightness_curve_two_point_checkpoints():
    curve = drain_curve(simple_plan(["brightness"]), OPEN, MODEL, REG, checkpoint=2)
    by_level = {lv: d for lv, _, d in curve.points}
    assert by_level[2] / by_level[50] == pytest.approx(1 / MODEL.dim_factor_phi, rel=0.05)


def test_curve_single_checkpoint():
    curve = drain_curve(simple_plan(TRIO), OPEN, MODEL, REG, checkpoint=100)
    assert len(curve.points) == 1
    level, t, d = curve.points[0]
    assert level == 0 and t == d == curve.total_minutes
    assert t == pytest.approx(98.5, abs=0.1)


def test_curve_rejects_bad_checkpoint():
    with pytest.raises(InvalidArgument):
        drain_curve(simple_plan(TRIO), OPEN, MODEL, REG, checkpoint=0)


def test_curve_csv():
    curve = drain_curve(simple_plan(["cpu"]), OPEN, MODEL, REG, checkpoint=25)
    rows = list(csv.reader(io.StringIO(curve.to_csv())))
    assert rows[0] == ["level", "elapsed_min", "delta_min"]
    assert [r[0] for r in rows[1:]] == ["75", "50", "25", "0"]
    assert sum(float(r[2]) for r in rows[1:]) == pytest.approx(float(rows[-1][1]))


def test_curve_partial_when_capped():
    curve = drain_curve(simple_plan(["vibration"]), OPEN, MODEL, REG, checkpoint=10, cap_minutes=100)
    assert curve.terminal == "time_limit"
    # 100 min at 5/19.4 %/min leaves the level near 74
    assert [p[0] for p in curve.points] == [90, 80]


# -- reproduction -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def report():
    return reproduce_paper()


def test_reproduction_table(report):
    assert len(report.table) == 14
    assert report.all_in_sample_match
    rows = {r.component: r for r in report.table}
    assert rows["vibration"].paper_minutes == 19.4
    assert rows["vibration"].simulated_minutes == pytest.approx(19.4, abs=2 / 60)
    assert rows["4g_down"].simulated_minutes == pytest.approx(11.1, abs=2 / 60)
    assert max(r.abs_error_seconds for r in report.table) <= 2


def test_reproduction_labels(report):
    doc = json.loads(report.to_json())
    held = {r["name"]: r for r in doc["held_out"]}
    inside = {r.get("name", r.get("component")) for r in doc["in_sample"]}
    assert held["trio_full_drain"]["relative_error"] == pytest.approx(0.053, abs=0.001)
    assert {"trio_5pct", "trio_5pct_charging", "brightness_full_drain", "web_full_drain"} <= inside
    assert {"trio_full_drain", "photo_full_drain", "web_5pct", "encryption_full_drain"} <= set(held)
    assert held["most_efficient_full_drain"]["skipped"]
    assert "n-1" in " ".join(doc["notes"])


def test_reproduction_text(report):
    text = report.to_text()
    assert "vibration" in text and "trio_full_drain" in text and "skipped" in text
