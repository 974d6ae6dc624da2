"""Result tables, "% of best", scaling fits, consistency checks and rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from .raid import MirrorKind
from .stats import MiB, IoStats

COLUMNS = ("normal", "ctlr_rebuild", "vol_rebuild")
COLUMN_TITLES = {"normal": "Normal", "ctlr_rebuild": "Ctlr Rebuild", "vol_rebuild": "Vol Rebuild"}
MIRROR_TITLES = {MirrorKind.SOFTWARE: "Software", MirrorKind.HARDWARE: "Hardware",
                 MirrorKind.NONE: "None"}

# block-size check tolerance and Little's-law tolerance
BLOCK_TOL = 0.02
PERCENT_TOL = 1
LITTLE_TOL = 0.05


class ReportError(ValueError):
    pass


@dataclass
class ResultRow:
    vendor: str
    mirror: MirrorKind
    normal: float = 0.0
    ctlr_rebuild: float = 0.0
    vol_rebuild: float = 0.0

    def __post_init__(self):
        self.mirror = MirrorKind(self.mirror)
        for col in COLUMNS:
            if getattr(self, col) < 0:
                raise ReportError(f"{self.vendor}/{self.mirror.value} {col} is negative")

    def value(self, column: str) -> float:
        return getattr(self, column)

    def to_dict(self) -> dict:
        return {"vendor": self.vendor, "mirror": self.mirror.value,
                **{c: getattr(self, c) for c in COLUMNS}}


@dataclass
class ResultTable:
    """Rows of Normal / Ctlr Rebuild / Vol Rebuild values.

    A zero cell means "not measured".  ``unit`` is ``IOps``, ``MBps`` or ``%``.
    """

    label: str
    unit: str
    rows: list[ResultRow] = field(default_factory=list)
    hardware_label: str = "Hardware"
    profile: str | None = None
    printed_percent: "ResultTable | None" = None
    errata: list[dict] = field(default_factory=list)

    def row(self, vendor: str, mirror: MirrorKind | str) -> ResultRow:
        mirror = MirrorKind(mirror)
        for r in self.rows:
            if r.vendor == vendor and r.mirror is mirror:
                return r
        raise KeyError(f"no row {vendor}/{mirror.value}")

    def mirror_title(self, mirror: MirrorKind) -> str:
        return self.hardware_label if mirror is MirrorKind.HARDWARE else MIRROR_TITLES[mirror]

    def scaled(self, k: float) -> "ResultTable":
        rows = [ResultRow(r.vendor, r.mirror, *(r.value(c) * k for c in COLUMNS)) for r in self.rows]
        return ResultTable(self.label, self.unit, rows, self.hardware_label, self.profile)

    def to_dict(self) -> dict:
        doc = {"label": self.label, "unit": self.unit, "profile": self.profile,
               "hardware_label": self.hardware_label,
               "rows": [r.to_dict() for r in self.rows]}
        if self.printed_percent is not None:
            doc["printed_percent"] = [r.to_dict() for r in self.printed_percent.rows]
        if self.errata:
            doc["errata"] = self.errata
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultTable":
        rows = [ResultRow(**r) for r in doc.get("rows", ())]
        printed = None
        if "printed_percent" in doc:
            printed = ResultTable(doc.get("label", ""), "%",
                                  [ResultRow(**r) for r in doc["printed_percent"]],
                                  doc.get("hardware_label", "Hardware"), doc.get("profile"))
        return cls(label=doc.get("label", ""), unit=doc.get("unit", "IOps"), rows=rows,
                   hardware_label=doc.get("hardware_label", "Hardware"),
                   profile=doc.get("profile"), printed_percent=printed,
                   errata=list(doc.get("errata", ())))


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def _percent(value: float, best: float) -> int:
    if value == 0:
        return 0
    pct = _dec(value) * 100 / _dec(best)
    return int(pct.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def percent_of_best(table: ResultTable) -> ResultTable:
    """Each cell as a percentage of the best Normal value in its mirroring class.

    Mirrored rows (software and hardware) form one class and unmirrored rows
    another; the class best is taken across vendors.  Rounded half-up.
    """
    best: dict[bool, float] = {}
    for r in table.rows:
        cls = r.mirror is not MirrorKind.NONE
        best[cls] = max(best.get(cls, 0.0), r.normal)
    for cls, b in best.items():
        if b <= 0:
            name = "mirrored" if cls else "unmirrored"
            raise ReportError(f"{name} class has no nonzero Normal value")
    rows = []
    for r in table.rows:
        b = best[r.mirror is not MirrorKind.NONE]
        rows.append(ResultRow(r.vendor, r.mirror, *(_percent(r.value(c), b) for c in COLUMNS)))
    return ResultTable(table.label, "%", rows, table.hardware_label, table.profile)


# scaling fits -----------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    saturation_point: int | None
    plateau: float | None
    n_fit: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "saturation_point": self.saturation_point, "plateau": self.plateau,
                "n_fit": self.n_fit}


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-12 else 0.0)
    return float(slope), float(intercept), r2


def fit_scaling(points: Sequence[tuple[float, float]], threshold: float = 0.95) -> FitResult:
    """Line fit over the pre-saturation prefix of ``(n_disks, rate)`` points.

    The prefix grows one point at a time; the first point whose rate falls
    below ``threshold`` times the current line's prediction is the saturation
    point, and the plateau is the mean rate from there on.
    """
    if len(points) < 3:
        raise ReportError("fit_scaling needs at least 3 points")
    pts = sorted((float(n), float(r)) for n, r in points)
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.all(x == x[0]):
        raise ReportError("fit_scaling needs at least two distinct disk counts")

    k = 2
    while k < len(pts) and x[k - 1] == x[0]:
        k += 1
    saturation = None
    while k < len(pts):
        slope, intercept, _ = _linfit(x[:k], y[:k])
        if y[k] < threshold * (slope * x[k] + intercept):
            saturation = k
            break
        k += 1
    slope, intercept, r2 = _linfit(x[:k], y[:k])
    if saturation is None:
        return FitResult(slope, intercept, r2, None, None, k)
    return FitResult(slope, intercept, r2, int(x[saturation]),
                     float(y[saturation:].mean()), k)


# consistency checks -----------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    check: str
    subject: str
    ok: bool
    detail: str
    observed: float | None = None
    expected: float | None = None

    @property
    def flagged(self) -> bool:
        return not self.ok

    def to_dict(self) -> dict:
        return {"check": self.check, "subject": self.subject,
                "status": "ok" if self.ok else "flagged", "detail": self.detail,
                "observed": self.observed, "expected": self.expected}


@dataclass(frozen=True)
class RateRow:
    """A reported (MBps, IOps) pair with the block size it claims."""

    subject: str
    mbps: float
    iops: float
    block_size: int
    decimals: int | None = None
    group: str = ""

    @property
    def implied_block(self) -> float:
        return self.mbps * MiB / self.iops if self.iops else math.nan


def _kib_label(nbytes: float) -> str:
    kib = nbytes / 1024
    return f"{kib:.0f} KiB" if abs(kib - round(kib)) < 0.05 else f"{kib:.1f} KiB"


def nearest_block(nbytes: float) -> int:
    """Closest power-of-two byte count."""
    return 2 ** round(math.log2(nbytes)) if nbytes > 0 else 0


def check_rate_row(row: RateRow) -> Finding:
    expected = row.iops * row.block_size / MiB
    slack = BLOCK_TOL * row.mbps
    if row.decimals is not None:
        slack = max(slack, 0.5 * 10 ** -row.decimals)
    ok = abs(expected - row.mbps) <= slack + 1e-12
    implied = row.implied_block
    detail = (f"implied block {implied:.0f} B ({_kib_label(implied)}), "
              f"declared {_kib_label(row.block_size)}")
    return Finding("block_size", row.subject, ok, detail, observed=implied,
                   expected=float(row.block_size))


def appendix_rows(doc: dict) -> list[RateRow]:
    """Rate rows of an appendix-style document; a row's own ``block_size``
    overrides the document-level declaration for its pattern."""
    declared = doc.get("declared_block_size", {})
    decimals = doc.get("decimals", {}).get("mbps")
    rows = []
    for r in doc["rows"]:
        group = f"{r['controller']} {r['pattern']}"
        subject = f"{r['controller']} {r['pattern']} {r['op']} x{r['disks']}"
        block = r.get("block_size", declared.get(r["pattern"]))
        if block is None:
            raise ReportError(f"no declared block size for {subject}")
        rows.append(RateRow(subject, float(r["mbps"]), float(r["iops"]), int(block),
                            decimals, group))
    return rows


def is_appendix_doc(doc: dict) -> bool:
    rows = doc.get("rows")
    return "declared_block_size" in doc or bool(
        rows and isinstance(rows[0], dict) and {"mbps", "iops", "disks"} <= rows[0].keys())


def appendix_points(doc: dict, controller: str, pattern: str, op: str,
                    metric: str) -> list[tuple[int, float]]:
    return [(r["disks"], float(r[metric])) for r in doc["rows"]
            if r["controller"] == controller and r["pattern"] == pattern and r["op"] == op]


def _check_rates(rows: Iterable[RateRow]) -> list[Finding]:
    rows = list(rows)
    findings = [check_rate_row(r) for r in rows]
    groups: dict[str, list[RateRow]] = {}
    for r in rows:
        if r.group:
            groups.setdefault(r.group, []).append(r)
    for group, members in groups.items():
        implied = float(np.median([m.implied_block for m in members]))
        declared = members[0].block_size
        ok = nearest_block(implied) == declared
        findings.append(Finding(
            "implied_block", group, ok,
            f"rows imply {_kib_label(nearest_block(implied))} blocks "
            f"(median {implied:.0f} B); declared {_kib_label(declared)}",
            observed=float(nearest_block(implied)), expected=float(declared)))
    return findings


def _check_stats(stats: IoStats) -> list[Finding]:
    findings = []
    subject = stats.label or "stats"
    if stats.block_size and stats.iops > 0:
        findings.append(check_rate_row(RateRow(subject, stats.mbps, stats.iops, stats.block_size)))
    if stats.queue_depth and stats.iops > 0:
        inflight = stats.littles_law_inflight
        err = abs(inflight - stats.queue_depth) / stats.queue_depth
        findings.append(Finding(
            "littles_law", subject, err <= LITTLE_TOL,
            f"mean latency x IOps = {inflight:.3f} vs queue depth {stats.queue_depth} "
            f"({err:.1%} off)", observed=inflight, expected=float(stats.queue_depth)))
    return findings


def _check_table(table: ResultTable) -> list[Finding]:
    if table.printed_percent is None:
        return []
    recomputed = percent_of_best(table)
    findings = []
    for printed in table.printed_percent.rows:
        mine = recomputed.row(printed.vendor, printed.mirror)
        for col in COLUMNS:
            have, want = printed.value(col), mine.value(col)
            ok = abs(have - want) <= PERCENT_TOL
            if not ok:
                subject = f"{printed.vendor}/{table.mirror_title(printed.mirror)} {COLUMN_TITLES[col]}"
                findings.append(Finding(
                    "percent", subject, False,
                    f"printed {have:g}% but {table.row(printed.vendor, printed.mirror).value(col):g}"
                    f" against the class best gives {want:g}%",
                    observed=float(have), expected=float(want)))
    if not findings:
        findings.append(Finding("percent", table.label, True,
                                "all printed percentages match the recomputed rule"))
    return findings


def consistency_check(obj) -> list[Finding]:
    """Check an IoStats, ResultTable, RateRow list or appendix document."""
    if isinstance(obj, IoStats):
        return _check_stats(obj)
    if isinstance(obj, ResultTable):
        return _check_table(obj)
    if isinstance(obj, RateRow):
        return [check_rate_row(obj)]
    if isinstance(obj, dict):
        if is_appendix_doc(obj):
            return _check_rates(appendix_rows(obj))
        if "rows" in obj and "unit" in obj:
            return _check_table(ResultTable.from_dict(obj))
        if "ops_completed" in obj:
            return _check_stats(IoStats.from_dict(obj))
        raise ReportError("unrecognised document for consistency_check")
    if isinstance(obj, (list, tuple)):
        if all(isinstance(x, RateRow) for x in obj):
            return _check_rates(obj)
        out: list[Finding] = []
        for x in obj:
            out.extend(consistency_check(x))
        return out
    raise ReportError(f"cannot check {type(obj).__name__}")


# rendering --------------------------------------------------------------------


@dataclass
class Tabular:
    """Pre-formatted rows for ``render``."""

    headers: list[str]
    rows: list[list[str]]

    def to_table(self):
        return self.headers, self.rows

    def to_dict(self) -> dict:
        return {"headers": self.headers, "rows": self.rows}


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        text = f"{v:.2f}".rstrip("0").rstrip(".")
        return "0" if text == "-0" else text
    return str(v)


def _tabulate(obj) -> tuple[list[str], list[list[str]]]:
    if isinstance(obj, ResultTable):
        if obj.unit == "%":
            headers = ["Vendor", "Mirror"] + [COLUMN_TITLES[c] for c in COLUMNS]
            cell = lambda v: f"{int(v)}%"  # noqa: E731
        else:
            headers = ["Vendor", "Mirror"] + [f"{COLUMN_TITLES[c]} {obj.unit}" for c in COLUMNS]
            cell = fmt_value
        rows = [[r.vendor, obj.mirror_title(r.mirror)] + [cell(r.value(c)) for c in COLUMNS]
                for r in obj.rows]
        return headers, rows
    if isinstance(obj, IoStats):
        lat = obj.latency
        pairs = [("label", obj.label), ("ops_completed", obj.ops_completed),
                 ("bytes_transferred", obj.bytes_transferred), ("elapsed_s", obj.elapsed),
                 ("iops", obj.iops), ("mbps", obj.mbps), ("block_size", obj.block_size),
                 ("queue_depth", obj.queue_depth), ("lat_min_us", lat.min_us),
                 ("lat_mean_us", lat.mean_us), ("lat_max_us", lat.max_us),
                 ("lat_p50_us", lat.p50_us), ("lat_p95_us", lat.p95_us),
                 ("lat_p99_us", lat.p99_us)]
        return ["Field", "Value"], [[k, fmt_value(v)] for k, v in pairs]
    if isinstance(obj, FitResult):
        return ["Field", "Value"], [[k, fmt_value(v)] for k, v in obj.to_dict().items()]
    if isinstance(obj, (list, tuple)) and all(isinstance(f, Finding) for f in obj):
        return (["Check", "Subject", "Status", "Detail"],
                [[f.check, f.subject, "ok" if f.ok else "FLAGGED", f.detail] for f in obj])
    if hasattr(obj, "to_table"):
        return obj.to_table()
    raise ReportError(f"cannot render {type(obj).__name__}")


def _jsonable(obj):
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise ReportError(f"cannot render {type(obj).__name__} as JSON")


def render(obj, fmt: str = "markdown") -> str:
    """Render a table, stats, fit or findings list as CSV, JSON or Markdown."""
    fmt = fmt.lower()
    if fmt == "json":
        return json.dumps(_jsonable(obj), indent=2) + "\n"
    headers, rows = _tabulate(obj)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(headers) + " |",
                 "|" + "|".join("---" for _ in headers) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ReportError(f"unknown format {fmt!r}")
