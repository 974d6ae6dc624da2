"""Bundled disk/controller presets and golden result files."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .disk import DiskParams
from .raid import ControllerParams

DISKS = ("wd-250gb", "maxtor-250gb")
CONTROLLERS = ("3ware-8506", "highpoint-1540")

# vendor labels used in the golden tables
VENDOR_DISKS = {"WD": "wd-250gb", "Maxtor": "maxtor-250gb"}


def _data(*parts: str):
    return resources.files("sataperf").joinpath("data", *parts)


def _read_json(ref) -> dict:
    return json.loads(ref.read_text())


def _resolve(kind: str, name: str):
    """A bundled file by short name, or ``name`` itself if it is a path."""
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return path
    stem = name[:-5] if name.endswith(".json") else name
    ref = _data(kind, f"{stem}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled {kind[:-1]} named {name!r}")
    return ref


def load_disk(name: str) -> DiskParams:
    return DiskParams.from_dict(_read_json(_resolve("disks", name)))


def load_disk_targets(name: str) -> dict:
    return _read_json(_resolve("disks", f"{name}.targets"))


def load_controller(name: str) -> ControllerParams:
    return ControllerParams.from_dict(_read_json(_resolve("controllers", name)))


def golden(name: str) -> dict:
    """Raw golden document, e.g. ``golden("table3")`` or ``golden("appendix")``."""
    return _read_json(_resolve("golden", name))


def data_path(*parts: str) -> Path:
    return Path(str(_data(*parts)))
