"""Loader for the bundled measurement dataset and the registry/model fitted from it."""

from __future__ import annotations

import json
from dataclasses import replace
from functools import lru_cache
from importlib import resources

from .calibration import (
    HeldOutCase,
    MeasurementRecord,
    calibrate_components,
    fit_charging_supply,
    fit_dim_factor,
    fit_interference,
    with_interference,
)
from .core import DeviceProfile, PowerModel
from .plan import Goal, simple_plan

TRIO = ("brightness", "camera_flash", "cpu")

_CATEGORY = {
    "vibration": "hardware",
    "cpu": "hardware",
    "camera_flash": "hardware",
    "brightness": "hardware",
    "video": "hardware",
    "gps": "hardware",
    "rotation": "hardware",
    "photo": "hardware",
    "wifi_down": "network",
    "bluetooth": "network",
    "phone": "network",
    "4g_down": "network",
    "notification": "software",
    "encryption": "software",
    "web_composite": "software",
    "db_data": "software",
    "db_table": "software",
    "db_encrypted": "software",
}

WEB_ACCESSIBLE = frozenset(
    {"cpu", "video", "encryption", "wifi_down", "4g_down", "web_composite", "db_data", "db_table", "db_encrypted"}
)
DISPLAY_CLASS = frozenset({"brightness"})
DEFAULT_STEALTH = 4


@lru_cache(maxsize=1)
def load_dataset() -> dict:
    text = resources.files("drainsim").joinpath("data/paper_dataset.json").read_text(encoding="utf-8")
    return json.loads(text)


def dataset_version() -> str:
    return load_dataset()["version"]


def component_attributes() -> dict[str, dict]:
    """Non-timing ComponentSpec fields for every bundled component id."""
    data = load_dataset()
    perms = {row[0]: row[1:] for row in data["permissions_table"]["rows"]}
    ids = [r[0] for r in data["results_table"]["rows"]] + [r[0] for r in data["composites"]["rows"]]
    out = {}
    for cid in ids:
        setting, permission, required = perms.get(cid, (None, None, False))
        out[cid] = {
            "category": _CATEGORY.get(cid, "software"),
            "required_setting": setting,
            "required_permission": permission,
            "permission_required_even_if_setting_enabled": bool(required),
            "stealth_level": DEFAULT_STEALTH,
            "display_class": cid in DISPLAY_CLASS,
            "web_accessible": cid in WEB_ACCESSIBLE,
        }
    return out


def paper_records() -> list[MeasurementRecord]:
    """One calibration record per registry component (table rows, then composites)."""
    data = load_dataset()
    pct = data["results_table"]["drain_pct"]
    full = data["full_drain_minutes"]
    recs = [
        MeasurementRecord(cid, pct, avg, sd, mx, mn, full.get(cid))
        for cid, avg, sd, mx, mn in data["results_table"]["rows"]
    ]
    recs += [MeasurementRecord(cid, 100, minutes, full_drain_minutes=minutes)
             for cid, minutes in data["composites"]["rows"]]
    return recs


def combination_records() -> list[MeasurementRecord]:
    """Measurements of plans rather than single components (trio runs, web 5%, most efficient)."""
    out = []
    for ids, pct, avg, ctx in load_dataset()["combinations"]["rows"]:
        out.append(MeasurementRecord("+".join(sorted(ids)), pct, avg, context=ctx))
    return out


def _combo(members, pct, context):
    key = "+".join(sorted(members))
    for r in combination_records():
        if r.component_id == key and r.drain_pct == pct and r.context == context:
            return r
    raise KeyError((key, pct, context))


@lru_cache(maxsize=1)
def paper_registry() -> dict:
    return calibrate_components(paper_records(), component_attributes())


@lru_cache(maxsize=1)
def paper_model() -> PowerModel:
    """Model fitted on the trio 5% runs and the brightness full drain."""
    registry = paper_registry()
    trio_5 = _combo(TRIO, 5, "unplugged")
    trio_plugged = _combo(TRIO, 5, "charging")
    model = PowerModel()
    eta = fit_interference(trio_5, TRIO, registry)
    model = with_interference(model, TRIO, eta)
    phi = fit_dim_factor(registry["brightness"].full_drain_minutes, "brightness", model, registry)
    supply = fit_charging_supply(trio_5, trio_plugged)
    return replace(model, dim_factor_phi=phi, charging_supply=supply)


def trio_profile(charging: bool = False) -> DeviceProfile:
    return DeviceProfile(granted_permissions=frozenset({"FLASHLIGHT"}), charging=charging)


def paper_heldout_cases() -> list[HeldOutCase]:
    """Every whole-plan datum in the dataset, labeled by whether a fit consumed it."""
    reg = paper_registry()
    full = Goal("full_drain")
    five = Goal("partial_drain", 5.0)
    cases = [
        HeldOutCase("trio_full_drain", simple_plan(TRIO, full, name="trio"),
                    _combo(TRIO, 100, "unplugged").avg, trio_profile()),
        HeldOutCase("trio_5pct", simple_plan(TRIO, five, name="trio"),
                    _combo(TRIO, 5, "unplugged").avg, trio_profile(), in_sample=True,
                    note="interference fitted on this datum"),
        HeldOutCase("trio_5pct_charging", simple_plan(TRIO, five, name="trio"),
                    _combo(TRIO, 5, "charging").avg, trio_profile(charging=True), in_sample=True,
                    note="charging supply fitted on this datum"),
        HeldOutCase("brightness_full_drain", simple_plan(["brightness"], full, name="brightness"),
                    reg["brightness"].full_drain_minutes, in_sample=True,
                    note="dim factor fitted on this datum"),
        HeldOutCase("web_full_drain", simple_plan(["web_composite"], full, launch_location="web", name="web"),
                    reg["web_composite"].full_drain_minutes, in_sample=True,
                    note="composite rate calibrated from this datum"),
        HeldOutCase("web_5pct", simple_plan(["web_composite"], five, launch_location="web", name="web"),
                    _combo(["web_composite"], 5, "unplugged").avg,
                    note="separate 5% datum, not reconciled with the full drain"),
        HeldOutCase("photo_full_drain", simple_plan(["photo"], full, name="photo"),
                    reg["photo"].full_drain_minutes, DeviceProfile(frozenset({"CAMERA"}))),
        HeldOutCase("encryption_full_drain", simple_plan(["encryption"], full, name="encryption"),
                    reg["encryption"].full_drain_minutes),
        HeldOutCase("most_efficient_full_drain", None, _combo(["most_efficient"], 100, "unplugged").avg,
                    note="element-level composition not given"),
    ]
    return cases
