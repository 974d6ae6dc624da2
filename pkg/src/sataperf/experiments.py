"""Sweeps that regenerate the single-volume tables and the controller scaling
data from the presets, and the calibration of rebuild shares against them."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from . import presets
from .disk import DiskParams
from .profiles import KiB, IoProfile, Pattern, profile_by_name
from .raid import (ControllerParams, MirrorConfig, MirrorKind, RebuildModel, RebuildState,
                   Volume, apply_rebuild, simulate_array, simulate_volume)
from .report import COLUMNS, ResultRow, ResultTable
from .stats import IoStats

TABLES = (1, 2, 3, 4, 5, 6)

# simulated seconds per table cell; results are duration-insensitive and a
# 300 s sequential sweep takes longer than the table runtime budget
TABLE_DURATION_S = 60.0

# coarse fallback shares used where no per-workload share was calibrated
COARSE_SHARES = {
    MirrorKind.SOFTWARE: (0.40, 0.62),
    MirrorKind.HARDWARE: (0.37, 0.43),
    MirrorKind.NONE: (1.0, 1.0),
}

# group spread (minimax relative error) beyond which shares are kept per drive
SPLIT_TOL = 0.10

# sequential block size per controller for the scaling sweep; the 3ware rows
# imply 256 KiB transfers and the Highpoint rows 64 KiB
APPENDIX_SEQ_BLOCK = {"3ware-8506": 256 * KiB, "highpoint-1540": 64 * KiB}
APPENDIX_DISK = "wd-250gb"


def table_profile(doc: dict, duration: float | None = TABLE_DURATION_S) -> IoProfile:
    profile = profile_by_name(doc["profile"])
    return profile.replace(duration=duration) if duration else profile


def _metric(stats: IoStats, unit: str) -> float:
    return stats.mbps if unit == "MBps" else stats.iops


@dataclass(frozen=True)
class SimulatedRow:
    vendor: str
    mirror: MirrorKind
    normal: IoStats
    ctlr_rebuild: IoStats | None
    vol_rebuild: IoStats | None


def simulate_table_rows(n: int, *, duration: float | None = TABLE_DURATION_S, seed: int = 0,
                        controller: ControllerParams | None = None,
                        rows: list[tuple[str, MirrorKind]] | None = None) -> list[SimulatedRow]:
    doc = presets.golden(f"table{n}")
    ctrl = controller or presets.load_controller(doc["controller"])
    profile = table_profile(doc, duration)
    wanted = None if rows is None else {(v, MirrorKind(k)) for v, k in rows}
    out = []
    for r in doc["rows"]:
        vendor, kind = r["vendor"], MirrorKind(r["mirror"])
        if wanted is not None and (vendor, kind) not in wanted:
            continue
        disk = presets.load_disk(presets.VENDOR_DISKS[vendor])
        normal = simulate_volume(profile, disk, MirrorConfig(kind), ctrl, seed)
        model = ctrl.rebuild_model(kind)
        ctlr = apply_rebuild(Volume(disk, MirrorConfig(kind, RebuildState.CTLR_REBUILD), ctrl),
                             model, normal, profile)
        vol = None
        if kind is not MirrorKind.NONE:
            vol = apply_rebuild(Volume(disk, MirrorConfig(kind, RebuildState.VOL_REBUILD), ctrl),
                                model, normal, profile)
        out.append(SimulatedRow(vendor, kind, normal, ctlr, vol))
    return out


def simulate_table(n: int, *, duration: float | None = TABLE_DURATION_S, seed: int = 0,
                   controller: ControllerParams | None = None,
                   rows: list[tuple[str, MirrorKind]] | None = None) -> ResultTable:
    """Regenerate table ``n`` (1-6); rebuild columns scale the Normal run."""
    if n not in TABLES:
        raise ValueError(f"table must be one of {TABLES}, got {n}")
    doc = presets.golden(f"table{n}")
    unit = doc["unit"]
    result = ResultTable(label=doc["label"], unit=unit, hardware_label=doc["hardware_label"],
                         profile=doc["profile"])
    for sr in simulate_table_rows(n, duration=duration, seed=seed, controller=controller,
                                  rows=rows):
        values = [_metric(s, unit) if s is not None else 0.0
                  for s in (sr.normal, sr.ctlr_rebuild, sr.vol_rebuild)]
        result.rows.append(ResultRow(sr.vendor, sr.mirror, *values))
    return result


def reference_table(n: int) -> ResultTable:
    return ResultTable.from_dict(presets.golden(f"table{n}"))


def _excluded(doc: dict) -> set[tuple[str, str, str]]:
    return {(e["vendor"], e["mirror"], e["column"]) for e in doc.get("errata", ())}


def fit_rebuild_models(controller: ControllerParams, *, duration: float = TABLE_DURATION_S,
                       split_tol: float = SPLIT_TOL) -> dict[MirrorKind, RebuildModel]:
    """Calibrate rebuild shares from the stored reference tables.

    For every measured rebuild cell the share is the stored value over the
    simulated Normal value of the same volume.  Cells are grouped by
    (mirror kind, rebuild state, workload) across drives; a group gets the
    share minimising the worst relative error, unless that error exceeds
    ``split_tol``, in which case each drive keeps its own share.  Cells listed
    as errata are skipped.
    """
    ctrl = dataclasses.replace(controller, rebuild={})
    groups: dict[tuple[MirrorKind, str], list[tuple[str, float]]] = {}
    for n in TABLES:
        doc = presets.golden(f"table{n}")
        profile = table_profile(doc, duration)
        skip = _excluded(doc)
        for r in doc["rows"]:
            kind = MirrorKind(r["mirror"])
            cells = [(c, r[c]) for c in COLUMNS[1:] if r[c] > 0
                     and (r["vendor"], r["mirror"], c) not in skip]
            if not cells:
                continue
            disk = presets.load_disk(presets.VENDOR_DISKS[r["vendor"]])
            normal = _metric(simulate_volume(profile, disk, MirrorConfig(kind), ctrl, 0),
                             doc["unit"])
            for column, value in cells:
                key = f"{column}/{profile.workload}"
                groups.setdefault((kind, key), []).append((disk.name, value / normal))

    models = {}
    for kind in MirrorKind:
        shares: dict[str, float] = {}
        vendor_shares: dict[str, dict[str, float]] = {}
        ctlr_logs = []
        for (k, key), ratios in sorted(groups.items(), key=lambda g: (g[0][0].value, g[0][1])):
            if k is not kind:
                continue
            lo = min(r for _, r in ratios)
            hi = max(r for _, r in ratios)
            share = 2 * lo * hi / (lo + hi)
            if (hi - lo) / (hi + lo) > split_tol:
                for vendor, r in ratios:
                    vendor_shares.setdefault(vendor, {})[key] = round(r, 4)
            else:
                shares[key] = round(share, 4)
            if key.startswith(RebuildState.CTLR_REBUILD.value):
                ctlr_logs.extend(math.log(r) for _, r in ratios)
        crosstalk = 0.0
        if ctlr_logs:
            crosstalk = round(max(0.0, 1 - math.exp(sum(ctlr_logs) / len(ctlr_logs))), 2)
        read, write = COARSE_SHARES[kind]
        models[kind] = RebuildModel(read, write, crosstalk, shares, vendor_shares)
    return models


def coarse_models(models: dict[MirrorKind, RebuildModel]) -> dict[MirrorKind, RebuildModel]:
    """Only the fallback fields, for controllers never measured under rebuild."""
    return {k: RebuildModel(m.foreground_share_read, m.foreground_share_write, m.ctlr_crosstalk)
            for k, m in models.items()}


def appendix_profile(controller: str, pattern: Pattern | str, op: str,
                     duration: float = 60.0) -> IoProfile:
    pattern = Pattern(pattern)
    block = APPENDIX_SEQ_BLOCK.get(controller, 64 * KiB) if pattern is Pattern.SEQUENTIAL \
        else 8 * KiB
    return IoProfile(pattern, op, block, 4, duration)


def simulate_appendix(controller: ControllerParams | str, *, disk: DiskParams | None = None,
                      duration: float = 60.0, seed: int = 0,
                      seq_block: int | None = None) -> list[dict]:
    """Rows shaped like the appendix golden file for ``n = 1..ports``."""
    ctrl = presets.load_controller(controller) if isinstance(controller, str) else controller
    disk = disk or presets.load_disk(APPENDIX_DISK)
    rows = []
    for pattern in (Pattern.RANDOM, Pattern.SEQUENTIAL):
        for op in ("read", "write"):
            profile = appendix_profile(ctrl.name, pattern, op, duration)
            if seq_block and pattern is Pattern.SEQUENTIAL:
                profile = profile.replace(block_size=seq_block)
            for n in range(1, ctrl.ports + 1):
                stats = simulate_array(ctrl, n, disk, profile, seed)
                rows.append({"controller": ctrl.name, "pattern": pattern.value, "op": op,
                             "disks": n, "mbps": stats.mbps, "iops": stats.iops,
                             "block_size": profile.block_size})
    return rows
