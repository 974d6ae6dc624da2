"""Fire-hose and time-synchronised replay of classified log requests.

Two clocks drive the same accounting.  The virtual clock is a discrete-event
run for backends that can be sampled without waiting; it is exact and fast.
The wall clock uses asyncio against any backend: a parser task per source
feeds its dispatcher through a bounded queue.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import time
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..report import Tabular, fmt_value
from .backends import Backend
from .logs import DEFAULT_FIELDS, REPLAYED, Classifier, LogParser, Page, ReplayRequest, \
    requests_from_records

QUEUE_FACTOR = 4
DEFAULT_INFLIGHT = 20


class ReplayError(ValueError):
    pass


@dataclass(frozen=True)
class FireHose:
    max_inflight: int = DEFAULT_INFLIGHT

    def __post_init__(self):
        if self.max_inflight < 1:
            raise ReplayError(f"max_inflight must be >= 1, got {self.max_inflight}")

    @property
    def name(self) -> str:
        return "firehose"

    @property
    def queue_bound(self) -> int:
        return QUEUE_FACTOR * self.max_inflight


@dataclass(frozen=True)
class TimeSync:
    speedup: float = 1.0

    def __post_init__(self):
        if not self.speedup > 0:
            raise ReplayError(f"speedup must be > 0, got {self.speedup}")

    @property
    def name(self) -> str:
        return "timesync"

    @property
    def queue_bound(self) -> int:
        return QUEUE_FACTOR * DEFAULT_INFLIGHT


ReplayMode = FireHose | TimeSync


class LogSource:
    """Re-iterable request stream from a log file, re-parsed on every pass."""

    def __init__(self, path: str | Path, fields: Sequence[str] = DEFAULT_FIELDS,
                 required: Mapping[Page, tuple[str, ...]] | None = None, name: str | None = None):
        self.path = Path(path)
        self.fields = tuple(fields)
        self.required = required
        self.name = name or self.path.stem
        self.parser: LogParser | None = None
        self.classifier: Classifier | None = None

    def __iter__(self):
        self.parser = LogParser(self.fields, self.name)
        self.classifier = Classifier(self.required) if self.required is not None else Classifier()
        with open(self.path, encoding="utf-8", errors="replace") as fh:
            yield from requests_from_records(self.parser.parse(fh), self.classifier)

    @property
    def malformed(self) -> int:
        return self.parser.malformed if self.parser else 0

    @property
    def skipped(self) -> int:
        return self.classifier.counts.get(Page.OTHER, 0) if self.classifier else 0


@dataclass
class PageStats:
    page: Page
    calls: int = 0
    avg_ms: float = 0.0
    max_ms: float = 0.0
    avg_of_run_maxima_ms: float = 0.0
    issued: int = 0
    failed: int = 0
    inflight_at_shutdown: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["page"] = self.page.value
        return d


@dataclass
class ReplayStats:
    source: str
    mode: str
    runs: int = 0
    issued: int = 0
    completed: int = 0
    failed: int = 0
    inflight_at_shutdown: int = 0
    skipped_other: int = 0
    malformed: int = 0
    elapsed_s: float = 0.0
    calls_per_sec: float = 0.0
    mean_latency_ms: float = 0.0
    littles_law_product: float = 0.0
    max_inflight_observed: int = 0
    lag_p50_ms: float = 0.0
    lag_p99_ms: float = 0.0
    lag_max_ms: float = 0.0
    issue_rate: float = 0.0
    arrival_rate: float = 0.0

    @property
    def conserved(self) -> bool:
        return self.issued == self.completed + self.failed + self.inflight_at_shutdown

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _PageAcc:
    __slots__ = ("issued", "completed", "failed", "inflight", "shutdown", "lat_sum", "lat_max",
                 "run_max")

    def __init__(self):
        self.issued = self.completed = self.failed = self.inflight = self.shutdown = 0
        self.lat_sum = self.lat_max = 0.0
        self.run_max: list[float] = []


class _SourceAcc:
    def __init__(self, name: str):
        self.name = name
        self.issued = self.completed = self.failed = self.inflight = self.shutdown = 0
        self.max_inflight = 0
        self.lat_sum = 0.0      # completed calls
        self.busy_sum = 0.0     # every finished call, for the Little's-law product
        self.elapsed = 0.0
        self.lags = array("d")
        self.issue_rates: list[tuple[int, float]] = []
        self.arrival_rates: list[tuple[int, float]] = []
        self.skipped = self.malformed = 0
        self._first_issue = self._last_issue = None
        self._first_due = self._last_due = None
        self._run_issued = 0

    def begin_run(self):
        self._first_issue = self._last_issue = None
        self._first_due = self._last_due = None
        self._run_issued = 0

    def end_run(self, elapsed: float, speedup: float | None):
        self.elapsed += elapsed
        if self._run_issued > 1:
            span = self._last_issue - self._first_issue
            self.issue_rates.append((self._run_issued, span))
            if speedup is not None:
                self.arrival_rates.append((self._run_issued,
                                           (self._last_due - self._first_due) / speedup))

    def on_issue(self, req: ReplayRequest, t: float, lag: float | None):
        self.issued += 1
        self._run_issued += 1
        self.inflight += 1
        self.max_inflight = max(self.max_inflight, self.inflight)
        if self._first_issue is None:
            self._first_issue, self._first_due = t, req.due_time
        self._last_issue, self._last_due = t, req.due_time
        if lag is not None:
            self.lags.append(lag)

    def on_done(self, latency: float, ok: bool):
        self.inflight -= 1
        self.busy_sum += latency
        if ok:
            self.completed += 1
            self.lat_sum += latency
        else:
            self.failed += 1


class _Accounts:
    """Shared accounting; every mutation happens on one thread or event loop."""

    def __init__(self, names: Sequence[str], mode: ReplayMode):
        self.mode = mode
        self.sources = [_SourceAcc(n) for n in names]
        self.pages = {p: _PageAcc() for p in REPLAYED}
        self.runs = 0
        self._run_max: dict[Page, float] = {}
        self.run_totals_max: list[float] = []

    def begin_run(self):
        self._run_max = {}
        for s in self.sources:
            s.begin_run()

    def end_run(self, elapsed: dict[int, float]):
        self.runs += 1
        speedup = self.mode.speedup if isinstance(self.mode, TimeSync) else None
        for i, s in enumerate(self.sources):
            s.end_run(elapsed.get(i, 0.0), speedup)
        for page, m in self._run_max.items():
            self.pages[page].run_max.append(m)
        if self._run_max:
            self.run_totals_max.append(max(self._run_max.values()))

    def issue(self, i: int, req: ReplayRequest, t: float, lag: float | None = None):
        self.sources[i].on_issue(req, t, lag)
        pa = self.pages[req.page]
        pa.issued += 1
        pa.inflight += 1

    def done(self, i: int, req: ReplayRequest, latency: float, ok: bool):
        self.sources[i].on_done(latency, ok)
        pa = self.pages[req.page]
        pa.inflight -= 1
        if ok:
            pa.completed += 1
            pa.lat_sum += latency
            pa.lat_max = max(pa.lat_max, latency)
            self._run_max[req.page] = max(self._run_max.get(req.page, 0.0), latency)
        else:
            pa.failed += 1

    def shutdown(self, i: int, req: ReplayRequest):
        """A call still outstanding when the run was cut off."""
        s = self.sources[i]
        s.inflight -= 1
        s.shutdown += 1
        pa = self.pages[req.page]
        pa.inflight -= 1
        pa.shutdown += 1

    # summaries -----------------------------------------------------------

    def _stats(self, name: str, accs: Sequence[_SourceAcc], elapsed: float) -> ReplayStats:
        st = ReplayStats(source=name, mode=self.mode.name, runs=self.runs)
        st.issued = sum(a.issued for a in accs)
        st.completed = sum(a.completed for a in accs)
        st.failed = sum(a.failed for a in accs)
        st.inflight_at_shutdown = sum(a.shutdown for a in accs)
        st.skipped_other = sum(a.skipped for a in accs)
        st.malformed = sum(a.malformed for a in accs)
        st.max_inflight_observed = max((a.max_inflight for a in accs), default=0) \
            if len(accs) == 1 else sum(a.max_inflight for a in accs)
        st.elapsed_s = elapsed
        lat_sum = sum(a.lat_sum for a in accs)
        busy = sum(a.busy_sum for a in accs)
        if elapsed > 0:
            st.calls_per_sec = st.completed / elapsed
            st.littles_law_product = busy / elapsed
        if st.completed:
            st.mean_latency_ms = 1000.0 * lat_sum / st.completed
        lags = np.concatenate([np.frombuffer(a.lags, dtype=float) for a in accs]) if accs \
            else np.empty(0)
        if lags.size:
            st.lag_p50_ms = float(np.percentile(lags, 50) * 1000)
            st.lag_p99_ms = float(np.percentile(lags, 99) * 1000)
            st.lag_max_ms = float(lags.max() * 1000)
        st.issue_rate = _rate([r for a in accs for r in a.issue_rates])
        st.arrival_rate = _rate([r for a in accs for r in a.arrival_rates])
        return st

    def result(self, backend: Backend, clock: str) -> "ReplayResult":
        servers = [self._stats(s.name, [s], s.elapsed) for s in self.sources]
        total = self._stats("total", self.sources, max((s.elapsed for s in self.sources),
                                                       default=0.0))
        if len(self.sources) > 1:
            # per-source issue spans overlap, so rates add
            total.issue_rate = sum(s.issue_rate for s in servers)
            total.arrival_rate = sum(s.arrival_rate for s in servers)
        pages = []
        for page, pa in self.pages.items():
            ps = PageStats(page, calls=pa.completed, issued=pa.issued, failed=pa.failed,
                           inflight_at_shutdown=pa.shutdown)
            if pa.completed:
                ps.avg_ms = 1000.0 * pa.lat_sum / pa.completed
                ps.max_ms = 1000.0 * pa.lat_max
            if pa.run_max:
                ps.avg_of_run_maxima_ms = 1000.0 * sum(pa.run_max) / len(pa.run_max)
            pages.append(ps)
        avg_max = 0.0
        if self.run_totals_max:
            avg_max = 1000.0 * sum(self.run_totals_max) / len(self.run_totals_max)
        return ReplayResult(total, servers, pages, backend.describe(), clock, avg_max)


def _rate(pairs: list[tuple[int, float]]) -> float:
    """Inter-arrival rate (n - 1) / span, pooled over runs."""
    n = sum(k - 1 for k, _ in pairs)
    span = sum(s for _, s in pairs)
    return n / span if span > 0 else 0.0


def _as_sources(requests) -> list[tuple[str, Iterable[ReplayRequest]]]:
    if isinstance(requests, Mapping):
        return list(requests.items())
    if isinstance(requests, LogSource):
        return [(requests.name, requests)]
    if isinstance(requests, (list, tuple)) and requests and all(
            isinstance(r, LogSource) for r in requests):
        return [(r.name, r) for r in requests]
    return [("log", requests)]


# virtual clock ---------------------------------------------------------------


def _virtual_firehose(sources, mode: FireHose, backend, acc: _Accounts, limit):
    heap = []
    seq = itertools.count()
    iters = [iter(s) for _, s in sources]
    last = {}

    def issue(i, t):
        req = next(iters[i], None)
        if req is None:
            return False
        latency, ok = backend.sample(req)
        acc.issue(i, req, t)
        heapq.heappush(heap, (t + latency, next(seq), i, req, latency, ok))
        return True

    for i in range(len(iters)):
        for _ in range(mode.max_inflight):
            if not issue(i, 0.0):
                break
    while heap:
        t, _, i, req, latency, ok = heap[0]
        if limit is not None and t > limit:
            break
        heapq.heappop(heap)
        acc.done(i, req, latency, ok)
        last[i] = t
        issue(i, t)
    for _, _, i, req, _, _ in heap:
        acc.shutdown(i, req)
        last[i] = limit
    return last


def _virtual_timesync(sources, mode: TimeSync, backend, acc: _Accounts, limit):
    merged = heapq.merge(*[((r.due_time, i, k, r) for k, r in enumerate(s))
                           for i, (_, s) in enumerate(sources)])
    pending = []  # (done, seq, i, req, latency, ok)
    seq = itertools.count()
    last = {}

    def drain(until):
        while pending and pending[0][0] <= until:
            t, _, i, req, latency, ok = heapq.heappop(pending)
            acc.done(i, req, latency, ok)
            last[i] = max(last.get(i, 0.0), t)

    for due, i, _, req in merged:
        t = due / mode.speedup
        if limit is not None and t > limit:
            break
        drain(t)
        latency, ok = backend.sample(req)
        acc.issue(i, req, t, lag=0.0)
        heapq.heappush(pending, (t + latency, next(seq), i, req, latency, ok))
    drain(limit if limit is not None else float("inf"))
    for _, _, i, req, _, _ in pending:
        acc.shutdown(i, req)
        last[i] = limit
    return last


# wall clock --------------------------------------------------------------------


async def _timed_call(backend: Backend, acc: _Accounts, i: int, req: ReplayRequest,
                      last: dict, start: float):
    t0 = time.perf_counter()
    try:
        ok = await backend.call(req)
    except asyncio.CancelledError:
        acc.shutdown(i, req)
        last[i] = time.perf_counter() - start
        raise
    except Exception:  # a backend bug must not abort the run
        ok = False
    done = time.perf_counter()
    acc.done(i, req, done - t0, bool(ok))
    last[i] = done - start


async def _producer(stream, queue: asyncio.Queue):
    for req in stream:
        await queue.put(req)
    await queue.put(None)


async def _wall_firehose(i, queue, mode: FireHose, backend, acc, last, start):
    async def worker():
        while True:
            req = await queue.get()
            if req is None:
                await queue.put(None)
                return
            acc.issue(i, req, time.perf_counter() - start)
            await _timed_call(backend, acc, i, req, last, start)

    await asyncio.gather(*(worker() for _ in range(mode.max_inflight)))


async def _wall_timesync(i, queue, mode: TimeSync, backend, acc, last, start):
    calls: set[asyncio.Task] = set()
    try:
        while True:
            req = await queue.get()
            if req is None:
                break
            target = req.due_time / mode.speedup
            delay = target - (time.perf_counter() - start)
            if delay > 0:
                await asyncio.sleep(delay)
            now = time.perf_counter() - start
            acc.issue(i, req, now, lag=max(0.0, now - target))
            task = asyncio.create_task(_timed_call(backend, acc, i, req, last, start))
            calls.add(task)
            task.add_done_callback(calls.discard)
        if calls:
            await asyncio.gather(*calls)
    except asyncio.CancelledError:
        for task in list(calls):
            task.cancel()
        await asyncio.gather(*calls, return_exceptions=True)
        raise


async def _wall_run(sources, mode, backend, acc: _Accounts, limit):
    start = time.perf_counter()
    last: dict[int, float] = {}
    tasks = []
    for i, (_, stream) in enumerate(sources):
        queue: asyncio.Queue = asyncio.Queue(maxsize=mode.queue_bound)
        tasks.append(asyncio.create_task(_producer(stream, queue)))
        dispatch = _wall_firehose if isinstance(mode, FireHose) else _wall_timesync
        tasks.append(asyncio.create_task(dispatch(i, queue, mode, backend, acc, last, start)))
    done, pending = await asyncio.wait(tasks, timeout=limit,
                                       return_when=asyncio.FIRST_EXCEPTION)
    for task in pending:
        task.cancel()
    results = await asyncio.gather(*tasks, return_exceptions=True)
    for r in results:
        if isinstance(r, BaseException) and not isinstance(r, asyncio.CancelledError):
            raise r
    if pending:
        for i in range(len(sources)):
            last[i] = limit
    return last


async def _wall_replay(sources, mode, backend, runs, limit, acc):
    try:
        for _ in range(runs):
            acc.begin_run()
            last = await _wall_run(sources, mode, backend, acc, limit)
            _finish_run(acc, sources, last)
    finally:
        await backend.aclose()


def _finish_run(acc: _Accounts, sources, last: dict):
    for i, (_, stream) in enumerate(sources):
        s = acc.sources[i]
        s.skipped += getattr(stream, "skipped", 0)
        s.malformed += getattr(stream, "malformed", 0)
    acc.end_run(last)


def replay(requests, mode: ReplayMode, backend: Backend, runs: int = 1, *,
           clock: str | None = None, time_limit: float | None = None) -> "ReplayResult":
    """Replay ``requests`` ``runs`` times.

    ``requests`` is a re-iterable of ReplayRequest, a LogSource, a list of
    LogSources, or a mapping name -> re-iterable; each source gets its own
    dispatcher.  ``clock`` is ``virtual`` (default for sampled backends) or
    ``wall``.  ``time_limit`` cuts each run off after that many seconds of
    replay time; calls still in flight are counted as such.
    """
    if runs < 1:
        raise ReplayError(f"runs must be >= 1, got {runs}")
    if clock is None:
        clock = "virtual" if backend.virtual else "wall"
    if clock == "virtual" and not backend.virtual:
        raise ReplayError("this backend needs the wall clock")
    if clock not in ("virtual", "wall"):
        raise ReplayError(f"unknown clock {clock!r}")
    sources = _as_sources(requests)
    acc = _Accounts([name for name, _ in sources], mode)
    if clock == "wall":
        asyncio.run(_wall_replay(sources, mode, backend, runs, time_limit, acc))
    else:
        run = _virtual_firehose if isinstance(mode, FireHose) else _virtual_timesync
        for _ in range(runs):
            acc.begin_run()
            last = run(sources, mode, backend, acc, time_limit)
            _finish_run(acc, sources, last)
    return acc.result(backend, clock)


@dataclass
class ReplayResult:
    total: ReplayStats
    servers: list[ReplayStats]
    pages: list[PageStats]
    backend: dict = field(default_factory=dict)
    clock: str = "virtual"
    avg_of_run_maxima_ms: float = 0.0

    def page(self, page: Page | str) -> PageStats:
        page = Page(page)
        return next(p for p in self.pages if p.page is page)

    def to_dict(self) -> dict:
        return {"clock": self.clock, "backend": self.backend, "total": self.total.to_dict(),
                "avg_of_run_maxima_ms": self.avg_of_run_maxima_ms,
                "servers": [s.to_dict() for s in self.servers],
                "pages": [p.to_dict() for p in self.pages]}

    def server_table(self) -> Tabular:
        rows = [[s.source, fmt_value(s.calls_per_sec), fmt_value(s.completed / max(s.runs, 1))]
                for s in self.servers]
        if self.servers:
            n = len(self.servers)
            rows.append(["Grand Total",
                         fmt_value(sum(s.calls_per_sec for s in self.servers) / n),
                         fmt_value(sum(s.completed / max(s.runs, 1) for s in self.servers) / n)])
        return Tabular(["Test Server", "Avg Calls per Sec", "Avg Db Calls"], rows)

    def page_table(self) -> Tabular:
        rows = [[p.page.value, str(p.calls), fmt_value(p.avg_ms), fmt_value(p.max_ms),
                 fmt_value(p.avg_of_run_maxima_ms)] for p in self.pages]
        calls = sum(p.calls for p in self.pages)
        avg = sum(p.avg_ms * p.calls for p in self.pages) / calls if calls else 0.0
        rows.append(["Totals", str(calls), fmt_value(avg),
                     fmt_value(max((p.max_ms for p in self.pages), default=0.0)),
                     fmt_value(self.avg_of_run_maxima_ms)])
        return Tabular(["Web Page", "Calls", "Avg ms", "Max ms", "Avg Max ms"], rows)

    def to_table(self):
        return self.page_table().to_table()

