"""Command-line entry point: ``drainsim {simulate,calibrate,check,rank,reproduce,curve}``.

Exit codes: 0 success (or feasible plan), 1 usage/parse error, 2 infeasible
plan, 3 model or calibration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .calibration import (
    calibrate_components,
    fit_charging_supply,
    fit_dim_factor,
    fit_interference,
    read_measurements,
    with_interference,
)
from .core import (
    PowerModel,
    ensure_valid,
    model_from_json,
    model_to_json,
    profile_from_json,
    registry_from_json,
    registry_to_json,
)
from .errors import CalibrationError, DrainSimError, InfeasiblePlan, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_MODEL = 0, 1, 2, 3
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class ModelError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _registry(args):
    if getattr(args, "registry", None):
        return registry_from_json(_read(args.registry))
    from .dataset import paper_registry

    return paper_registry()


def _model(path: str) -> PowerModel:
    text = _read(path)
    try:
        return model_from_json(text)
    except (ValidationError, json.JSONDecodeError) as exc:
        raise ModelError(f"invalid power model {path}: {exc}") from None


def _plan(path: str, registry):
    from .plan import parse_plan

    plan = parse_plan(_read(path), registry)
    if not plan.name:
        plan = replace(plan, name=Path(path).stem)
    return plan


def _emit(text: str, out: str | None) -> None:
    if out:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _charge_schedule(raw: str | None):
    if not raw:
        return ()
    out = []
    for item in raw.split(","):
        minute, _, state = item.partition(":")
        if state not in ("on", "off"):
            raise UsageError(f"bad --charge-schedule entry {item!r}; expected MINUTE:on|off")
        try:
            out.append((float(minute), state == "on"))
        except ValueError:
            raise UsageError(f"bad --charge-schedule minute {minute!r}") from None
    return tuple(out)


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .engine import simulate

    registry = _registry(args)
    plan = _plan(args.plan, registry)
    profile = profile_from_json(_read(args.profile))
    model = _model(args.model)
    trace = simulate(plan, profile, model, registry, mode=args.mode, seed=args.seed, step_size=args.step,
                     time_limit=args.time_limit, force=args.force, sampler=args.sampler,
                     charging_schedule=_charge_schedule(args.charge_schedule))
    _emit(trace.to_json() if args.format == "json" else trace.to_csv(), args.out)
    print(f"{plan.name}: {trace.terminal} after {trace.minutes:.3f} min", file=sys.stderr)
    return EXIT_OK


def _combined_row(records, members, context, pct=None):
    key = "+".join(sorted(members))
    rows = [r for r in records if r.component_id == key and r.context == context
            and (pct is None or r.drain_pct == pct)]
    if not rows:
        raise CalibrationError(f"no {context} measurement for {key}")
    if len(rows) > 1:
        raise CalibrationError(f"several {context} measurements for {key}; add @DRAIN_PCT to choose")
    return rows[0]


def _split_spec(spec: str):
    ids, _, pct = spec.partition("@")
    members = [m for m in ids.split("+") if m]
    return members, (float(pct) if pct else None)


def cmd_calibrate(args) -> int:
    records = read_measurements(_read(args.measurements))
    singles = [r for r in records if not r.is_combination and r.context == "unplugged"]
    seen = {r.component_id for r in singles}
    combos = [r for r in records if r.is_combination or r.context != "unplugged"]
    registry = calibrate_components(singles)
    model = _model(args.base_model) if args.base_model else PowerModel()

    for spec in args.fit_interference or ():
        members, pct = _split_spec(spec)
        row = _combined_row(combos, members, "unplugged", pct)
        eta = fit_interference(row, members, registry)
        model = with_interference(model, members, eta)
        print(f"interference {'+'.join(sorted(members))}: {eta:.6f}", file=sys.stderr)
    if args.fit_dim:
        cid, _, minutes = args.fit_dim.partition("=")
        if minutes:
            full = float(minutes)
        else:
            if cid not in seen or registry[cid].full_drain_minutes is None:
                raise CalibrationError(f"no full_drain measurement for {cid}")
            full = registry[cid].full_drain_minutes
        phi = fit_dim_factor(full, cid, model, registry)
        model = replace(model, dim_factor_phi=phi)
        print(f"dim factor {cid}: {phi:.6f}", file=sys.stderr)
    if args.fit_charging:
        members, pct = _split_spec(args.fit_charging)
        unplugged = _combined_row(combos, members, "unplugged", pct)
        plugged = _combined_row(combos, members, "charging", pct)
        supply = fit_charging_supply(unplugged, plugged)
        model = replace(model, charging_supply=supply)
        print(f"charging supply: {supply:.6f} %/min", file=sys.stderr)

    try:
        ensure_valid(model, "fitted model")
    except ValidationError as exc:
        raise CalibrationError(str(exc)) from None
    _emit(model_to_json(model), args.out)
    if args.registry_out:
        _emit(registry_to_json(registry), args.registry_out)
    return EXIT_OK


def cmd_check(args) -> int:
    from .plan import check_feasibility

    registry = _registry(args)
    plan = _plan(args.plan, registry)
    profile = profile_from_json(_read(args.profile))
    report = check_feasibility(plan, profile, registry)
    doc = {
        "plan": plan.name,
        "feasible": report.feasible,
        "missing_permissions": sorted(report.missing_permissions),
        "missing_settings": sorted(report.missing_settings),
        "web_inaccessible": sorted(report.web_inaccessible),
        "components": {
            cid: {"permission_ok": v.permission_ok, "setting_ok": v.setting_ok, "web_ok": v.web_ok}
            for cid, v in sorted(report.verdicts.items())
        },
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    if not report.feasible:
        print(f"{plan.name}: {report.summary()}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_rank(args) -> int:
    from .plan import rank_plans

    registry = _registry(args)
    paths = sorted(Path(args.plans).glob("*.json"))
    if not paths:
        raise UsageError(f"no plan files (*.json) in {args.plans}")
    plans = [_plan(str(p), registry) for p in paths]
    profile = profile_from_json(_read(args.profile))
    model = _model(args.model)
    ranked = rank_plans(plans, profile, model, registry)
    if args.format == "json":
        text = json.dumps([
            {"rank": i + 1, "plan": r.name, "feasible": r.feasible, "efficacy": r.efficacy,
             "minutes": r.minutes, "terminal": r.terminal}
            for i, r in enumerate(ranked)
        ], indent=2) + "\n"
    else:
        lines = ["rank,plan,feasible,efficacy,minutes,terminal"]
        lines += [f"{i + 1},{r.name},{int(r.feasible)},{r.efficacy:.6f},{r.minutes:.4f},{r.terminal}"
                  for i, r in enumerate(ranked)]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    if args.figure:
        from .plotting import plot_ranking

        plot_ranking(ranked, args.figure)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .harness import drain_curve, reproduce_paper, run_protocol, stats_to_csv

    report = reproduce_paper(step_size=args.step)
    if args.format == "text":
        _emit(report.to_text(), args.out)
    else:
        _emit(report.to_json(), args.out)
    if args.figures:
        from .dataset import TRIO, paper_model, paper_registry, trio_profile
        from .plan import simple_plan
        from .plotting import plot_drain_curve, plot_reproduction

        out = Path(args.figures)
        registry, model = paper_registry(), paper_model()
        plot_reproduction(report, out / "table_reproduction.png")
        curves = {
            "brightness": (simple_plan(["brightness"], name="brightness"), trio_profile()),
            "trio": (simple_plan(TRIO, name="trio"), trio_profile()),
        }
        for name, (plan, profile) in curves.items():
            curve = drain_curve(plan, profile, model, registry, checkpoint=2, step_size=args.step)
            (out / f"curve_{name}.csv").write_text(curve.to_csv(), encoding="utf-8")
            plot_drain_curve(curve, out / f"curve_{name}.png")
    if not report.all_in_sample_match:
        print("reproduce: some in-sample rows exceed tolerance", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


def cmd_curve(args) -> int:
    from .harness import drain_curve

    registry = _registry(args)
    plan = _plan(args.plan, registry)
    profile = profile_from_json(_read(args.profile))
    model = _model(args.model)
    curve = drain_curve(plan, profile, model, registry, checkpoint=args.checkpoint, step_size=args.step)
    _emit(curve.to_csv(), args.out)
    if args.figure:
        from .plotting import plot_drain_curve

        plot_drain_curve(curve, args.figure)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drainsim", description="Simulate and calibrate battery-exhaustion attacks.")
    p.add_argument("--version", action="version", version=f"drainsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def registry_opt(sp):
        sp.add_argument("--registry", help="component registry JSON (default: bundled registry)")

    s = sub.add_parser("simulate", help="run one plan and write its trace")
    s.add_argument("--plan", required=True, help="attack plan JSON")
    s.add_argument("--profile", required=True, help="device profile JSON")
    s.add_argument("--model", required=True, help="power model JSON")
    registry_opt(s)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for stochastic mode (default 0)")
    s.add_argument("--mode", choices=("deterministic", "stochastic"), default="deterministic",
                   help="mean rates, or rates drawn once per run from each component's spread")
    s.add_argument("--sampler", choices=("beta", "truncnorm"), default="beta",
                   help="per-trial drain-time distribution in stochastic mode")
    s.add_argument("--step", type=float, default=1.0, help="step size in seconds (default 1)")
    s.add_argument("--time-limit", type=float, default=24 * 60.0, help="minutes of simulated time (default 1440)")
    s.add_argument("--charge-schedule", help="charging flag changes, e.g. '30:on,90:off' (minutes)")
    s.add_argument("--force", action="store_true", help="run even if the profile makes the plan infeasible")
    s.add_argument("--out", help="output file (default: stdout)")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="trace format (default csv)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="fit a power model from a measurement CSV")
    c.add_argument("--measurements", required=True,
                   help="CSV with header component,drain_pct,avg,sd,max,min,full_drain,context")
    c.add_argument("--out", required=True, help="fitted power model JSON")
    c.add_argument("--base-model", help="start from this model instead of the defaults")
    c.add_argument("--fit-interference", action="append", metavar="IDS[@PCT]",
                   help="'+'-joined component set whose unplugged combined row fits interference; repeatable")
    c.add_argument("--fit-dim", metavar="ID[=MINUTES]",
                   help="display component whose full drain fits the dim factor")
    c.add_argument("--fit-charging", metavar="IDS[@PCT]",
                   help="component set with both unplugged and charging rows")
    c.add_argument("--registry-out", help="also write the calibrated component registry JSON")
    c.set_defaults(func=cmd_calibrate)

    k = sub.add_parser("check", help="check a plan's feasibility against a device profile")
    k.add_argument("--plan", required=True, help="attack plan JSON")
    k.add_argument("--profile", required=True, help="device profile JSON")
    registry_opt(k)
    k.add_argument("--out", help="feasibility report JSON (default: stdout)")
    k.set_defaults(func=cmd_check)

    r = sub.add_parser("rank", help="rank every plan in a directory")
    r.add_argument("--plans", required=True, help="directory of plan JSON files")
    r.add_argument("--profile", required=True, help="device profile JSON")
    r.add_argument("--model", required=True, help="power model JSON")
    registry_opt(r)
    r.add_argument("--out", help="output file (default: stdout)")
    r.add_argument("--format", choices=("csv", "json"), default="csv", help="ranking format (default csv)")
    r.add_argument("--figure", help="also render a PNG bar chart here")
    r.set_defaults(func=cmd_rank)

    q = sub.add_parser("reproduce", help="regenerate the published results tables from the bundled dataset")
    q.add_argument("--out", help="report file (default: stdout)")
    q.add_argument("--format", choices=("json", "text"), default="json", help="report format (default json)")
    q.add_argument("--step", type=float, default=1.0, help="step size in seconds (default 1)")
    q.add_argument("--figures", help="directory for drain-curve CSVs and PNG figures")
    q.set_defaults(func=cmd_reproduce)

    v = sub.add_parser("curve", help="log a deterministic full drain every N points")
    v.add_argument("--plan", required=True, help="attack plan JSON; its goal is replaced by a full drain")
    v.add_argument("--profile", required=True, help="device profile JSON")
    v.add_argument("--model", required=True, help="power model JSON")
    registry_opt(v)
    v.add_argument("--checkpoint", type=float, default=2.0, help="points of drop between log lines")
    v.add_argument("--step", type=float, default=1.0, help="step size in seconds (default 1)")
    v.add_argument("--out", help="curve CSV level,elapsed_min,delta_min (default: stdout)")
    v.add_argument("--figure", help="also render a PNG here")
    v.set_defaults(func=cmd_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InfeasiblePlan as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ModelError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (UsageError, DrainSimError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
