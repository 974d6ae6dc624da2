"""W3C extended log parsing and page classification."""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Iterable, Iterator, Mapping
from urllib.parse import parse_qsl

DEFAULT_FIELDS = ("date", "time", "cs-method", "cs-uri-stem", "cs-uri-query", "sc-status")
REQUIRED_FIELDS = ("date", "time", "cs-uri-stem")


class Page(str, Enum):
    TILE = "tile"
    IMAGE = "image"
    DOWNLOAD = "download"
    IMAGEINFO = "imageinfo"
    FAMOUS = "famous"
    OTHER = "other"


# imageinfo before image so the longer name wins
MATCH_ORDER = (Page.IMAGEINFO, Page.TILE, Page.IMAGE, Page.DOWNLOAD, Page.FAMOUS)
REPLAYED = (Page.TILE, Page.IMAGE, Page.DOWNLOAD, Page.IMAGEINFO, Page.FAMOUS)


@dataclass(frozen=True, slots=True)
class LogRecord:
    timestamp: datetime
    uri_stem: str
    uri_query: str = ""
    status: int = 0
    source_server: str = ""


@dataclass(frozen=True, slots=True)
class ReplayRequest:
    page: Page
    params: dict[str, str]
    due_time: float
    source: str = ""


class LogParser:
    """Streaming parser; ``#Fields:`` directives switch the column layout.

    Malformed lines are skipped and counted in ``malformed``.  Records earlier
    than their predecessor are kept and counted in ``out_of_order``.
    """

    def __init__(self, fields: Iterable[str] = DEFAULT_FIELDS, source: str = ""):
        self.source = source
        self.malformed = 0
        self.out_of_order = 0
        self.records = 0
        self._last: datetime | None = None
        self._set_fields(list(fields))

    def _set_fields(self, fields: list[str]) -> None:
        self.fields = fields
        self._index = {name.lower(): i for i, name in enumerate(fields)}
        self._usable = all(f in self._index for f in REQUIRED_FIELDS)

    def _get(self, parts: list[str], name: str) -> str:
        i = self._index.get(name)
        if i is None:
            return ""
        value = parts[i]
        return "" if value == "-" else value

    def parse_line(self, line: str) -> LogRecord | None:
        line = line.strip()
        if not line:
            return None
        if line.startswith("#"):
            if line[1:].lower().startswith("fields:"):
                self._set_fields(line.split(":", 1)[1].split())
            return None
        parts = line.split()
        if not self._usable or len(parts) != len(self.fields):
            self.malformed += 1
            return None
        try:
            ts = datetime.fromisoformat(f"{self._get(parts, 'date')}T{self._get(parts, 'time')}")
            ts = ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None \
                else ts.astimezone(timezone.utc)
            status_text = self._get(parts, "sc-status")
            status = int(status_text) if status_text else 0
        except ValueError:
            self.malformed += 1
            return None
        stem = self._get(parts, "cs-uri-stem")
        if not stem:
            self.malformed += 1
            return None
        if self._last is not None and ts < self._last:
            self.out_of_order += 1
        self._last = ts
        self.records += 1
        return LogRecord(ts, stem, self._get(parts, "cs-uri-query"), status,
                         self._get(parts, "s-computername") or self.source)

    def parse(self, lines: Iterable[str]) -> Iterator[LogRecord]:
        for line in lines:
            rec = self.parse_line(line)
            if rec is not None:
                yield rec


def parse_log(lines: Iterable[str], fields: Iterable[str] = DEFAULT_FIELDS,
              source: str = "") -> Iterator[LogRecord]:
    return LogParser(fields, source).parse(lines)


def load_page_params(path: str | Path | None = None) -> dict[Page, tuple[str, ...]]:
    """Required query parameters per page kind, from a JSON mapping file."""
    if path is None:
        text = resources.files("sataperf").joinpath("data", "replay", "page_params.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    out = {}
    for name, keys in doc.items():
        page = Page(name.lower())
        if page is Page.OTHER:
            raise ValueError("the catch-all page takes no parameter list")
        out[page] = tuple(k.lower() for k in keys)
    return out


@functools.lru_cache(maxsize=1)
def default_page_params() -> dict[Page, tuple[str, ...]]:
    return load_page_params()


def page_for_stem(stem: str) -> Page:
    """Page kind from the last path component, ignoring case and extension."""
    name = PurePosixPath(stem).name.lower().split(".", 1)[0]
    for page in MATCH_ORDER:
        if page.value in name:
            return page
    return Page.OTHER


@dataclass
class Classifier:
    required: Mapping[Page, tuple[str, ...]] = field(default_factory=default_page_params)
    counts: dict[Page, int] = field(default_factory=dict)
    missing_params: int = 0

    def classify(self, record: LogRecord, origin: datetime | None = None) -> ReplayRequest:
        page = page_for_stem(record.uri_stem)
        params = {k.lower(): v for k, v in parse_qsl(record.uri_query, keep_blank_values=True)}
        if page is not Page.OTHER and any(k not in params for k in self.required.get(page, ())):
            page = Page.OTHER
            self.missing_params += 1
        self.counts[page] = self.counts.get(page, 0) + 1
        due = (record.timestamp - origin).total_seconds() if origin is not None else 0.0
        return ReplayRequest(page, params, due, record.source_server)


def classify(record: LogRecord, origin: datetime | None = None,
             required: Mapping[Page, tuple[str, ...]] | None = None) -> ReplayRequest:
    cl = Classifier(required) if required is not None else Classifier()
    return cl.classify(record, origin)


def requests_from_records(records: Iterable[LogRecord], classifier: Classifier | None = None
                          ) -> Iterator[ReplayRequest]:
    """Replayable requests with due times relative to the first record.

    Other-page records are dropped (the classifier counts them); due times are
    made non-decreasing so open-loop pacing never runs backwards.
    """
    classifier = classifier or Classifier()
    origin = None
    last_due = 0.0
    for rec in records:
        if origin is None:
            origin = rec.timestamp
        req = classifier.classify(rec, origin)
        if req.page is Page.OTHER:
            continue
        if req.due_time < last_due:
            req = ReplayRequest(req.page, req.params, last_due, req.source)
        last_due = req.due_time
        yield req
