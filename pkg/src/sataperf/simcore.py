"""Discrete-event core shared by the disk, volume and array simulators.

Time is kept in integer microseconds.  Every resource (a disk arm, the
controller's bus) is a FIFO single server.  A job is one host I/O; it is split
into tasks, each of which walks a route of servers and may fan out into
further tasks when its route ends.  A job completes when its last task does.
Streams are closed loops: each completion issues the next request.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, Iterator, Sequence

import numpy as np

from .profiles import IoProfile, IoRequest, Op, generate_requests
from .stats import MiB, IoStats, LatencySummary

DEFAULT_WARMUP_S = 2.0


class Server:
    __slots__ = ("name", "queue", "busy", "current")

    def __init__(self, name: str = ""):
        self.name = name
        self.queue: deque = deque()
        self.busy = False
        self.current = None

    def service(self, task: "Task") -> int:
        raise NotImplementedError

    @property
    def pending(self) -> int:
        return len(self.queue)


class Arm(Server):
    """A disk arm.  ``fn(arm, request)`` returns µs and moves ``arm.head``."""

    __slots__ = ("fn", "head", "next_offset", "served")

    def __init__(self, fn: Callable[["Arm", IoRequest], int], name: str = ""):
        super().__init__(name)
        self.fn = fn
        self.head = 0
        # end of the last request dispatched here; used for stream affinity
        self.next_offset = 0
        self.served = 0

    def service(self, task: "Task") -> int:
        self.served += 1
        return self.fn(self, task.job.req)


class Bus(Server):
    """Controller data path with separate read and write throughput caps."""

    __slots__ = ("read_us_per_byte", "write_us_per_byte", "capped_read_us_per_byte", "bytes")

    def __init__(self, read_mbps: float, write_mbps: float,
                 capped_read_mbps: float | None = None, name: str = "bus"):
        super().__init__(name)
        self.read_us_per_byte = 1e6 / (read_mbps * MiB)
        self.write_us_per_byte = 1e6 / (write_mbps * MiB)
        capped = capped_read_mbps if capped_read_mbps else read_mbps
        self.capped_read_us_per_byte = 1e6 / (min(capped, read_mbps) * MiB)
        self.bytes = 0

    def service(self, task: "Task") -> int:
        job = task.job
        length = job.req.length
        self.bytes += length
        if job.req.op is Op.WRITE:
            per_byte = self.write_us_per_byte
        elif job.capped:
            per_byte = self.capped_read_us_per_byte
        else:
            per_byte = self.read_us_per_byte
        return round(length * per_byte)


class Job:
    __slots__ = ("stream", "req", "issued", "pending", "capped")

    def __init__(self, stream: "Stream", req: IoRequest, issued: int, capped: bool):
        self.stream = stream
        self.req = req
        self.issued = issued
        self.pending = 1
        self.capped = capped


class Task:
    __slots__ = ("job", "route", "pos", "then")

    def __init__(self, job: Job, route: Sequence[Server], then=None):
        self.job = job
        self.route = route
        self.pos = 0
        self.then = then


class Target:
    """Turns a job into tasks via ``sim.enqueue``."""

    #: whether sequential reads through this target hit the capped read path
    caps_sequential_reads = False

    def submit(self, sim: "Simulation", job: Job) -> None:
        raise NotImplementedError


class SingleTarget(Target):
    def __init__(self, arm: Arm, bus: Bus | None = None):
        self.arm = arm
        self.bus = bus
        self.arms = (arm,)

    def submit(self, sim, job):
        if self.bus is None:
            route = (self.arm,)
        elif job.req.op is Op.READ:
            route = (self.arm, self.bus)
        else:
            route = (self.bus, self.arm)
        sim.enqueue(Task(job, route))


class MirrorTarget(Target):
    """Two-arm mirror.

    ``dispatch(arms, request) -> index`` picks the arm for a read.  Writes go
    to both arms.  Host (software) mirroring pushes each copy across the bus;
    controller (hardware) mirroring moves the data once and fans out behind
    the bus.
    """

    def __init__(self, arms: Sequence[Arm], bus: Bus | None, hardware: bool,
                 dispatch: Callable[[Sequence[Arm], IoRequest], int]):
        if len(arms) != 2:
            raise ValueError("a mirror needs exactly two arms")
        if hardware and bus is None:
            raise ValueError("hardware mirroring needs a controller")
        self.arms = tuple(arms)
        self.bus = bus
        self.hardware = hardware
        self.dispatch = dispatch
        self.caps_sequential_reads = hardware

    def submit(self, sim, job):
        req = job.req
        if req.op is Op.READ:
            i = self.dispatch(self.arms, req)
            arm = self.arms[i]
            arm.next_offset = req.offset + req.length
            route = (arm,) if self.bus is None else (arm, self.bus)
            sim.enqueue(Task(job, route))
            return
        for arm in self.arms:
            arm.next_offset = req.offset + req.length
        if self.bus is None:
            job.pending = 2
            for arm in self.arms:
                sim.enqueue(Task(job, (arm,)))
        elif self.hardware:
            sim.enqueue(Task(job, (self.bus,), then=[(a,) for a in self.arms]))
        else:
            job.pending = 2
            for arm in self.arms:
                sim.enqueue(Task(job, (self.bus, arm)))


class Stream:
    """Closed-loop issuer keeping ``depth`` requests outstanding."""

    def __init__(self, profile: IoProfile, seed: int, target: Target, label: str = ""):
        self.profile = profile
        self.target = target
        self.depth = profile.queue_depth
        self.requests: Iterator[IoRequest] = generate_requests(profile, seed)
        self.label = label or profile.name
        self.last_end = -1
        self.latencies: list[int] = []
        self.bytes = 0
        self.inflight = 0


class Simulation:
    """One deterministic run; statistics cover ``(warmup, duration]``."""

    def __init__(self, duration: float, warmup: float | None = None):
        if warmup is None:
            warmup = min(DEFAULT_WARMUP_S, 0.1 * duration)
        if not 0 <= warmup < duration:
            raise ValueError(f"warmup {warmup} must lie in [0, duration={duration})")
        self.end = round(duration * 1e6)
        self.warmup = round(warmup * 1e6)
        self.now = 0
        self.streams: list[Stream] = []
        self._heap: list = []
        self._seq = 0

    def add_stream(self, profile: IoProfile, seed: int, target: Target,
                   label: str = "") -> Stream:
        stream = Stream(profile, seed, target, label)
        self.streams.append(stream)
        return stream

    # event plumbing -------------------------------------------------------

    def enqueue(self, task: Task) -> None:
        server = task.route[task.pos]
        server.queue.append(task)
        if not server.busy:
            self._start(server)

    def _start(self, server: Server) -> None:
        task = server.queue.popleft()
        server.busy = True
        server.current = task
        self._seq += 1
        heapq.heappush(self._heap, (self.now + server.service(task), self._seq, server))

    def _advance(self, task: Task) -> None:
        task.pos += 1
        if task.pos < len(task.route):
            self.enqueue(task)
            return
        job = task.job
        if task.then:
            job.pending += len(task.then) - 1
            for route in task.then:
                self.enqueue(Task(job, route))
            return
        job.pending -= 1
        if job.pending == 0:
            self._complete(job)

    def _issue(self, stream: Stream) -> None:
        req = next(stream.requests)
        capped = (stream.target.caps_sequential_reads and req.op is Op.READ
                  and req.offset == stream.last_end)
        stream.last_end = req.offset + req.length
        stream.inflight += 1
        stream.target.submit(self, Job(stream, req, self.now, capped))

    def _complete(self, job: Job) -> None:
        stream = job.stream
        stream.inflight -= 1
        if self.now > self.warmup:
            stream.latencies.append(self.now - job.issued)
            stream.bytes += job.req.length
        self._issue(stream)

    def run(self) -> list[IoStats]:
        """Run to the end of the window; one IoStats per stream."""
        for stream in self.streams:
            for _ in range(stream.depth):
                self._issue(stream)
        heap, end = self._heap, self.end
        pop = heapq.heappop
        while heap:
            t, _, server = pop(heap)
            if t > end:
                break
            self.now = t
            task = server.current
            server.busy = False
            server.current = None
            self._advance(task)
            if not server.busy and server.queue:
                self._start(server)
        return [self._stats(s) for s in self.streams]

    def _stats(self, stream: Stream) -> IoStats:
        return IoStats(
            ops_completed=len(stream.latencies),
            bytes_transferred=stream.bytes,
            elapsed=(self.end - self.warmup) / 1e6,
            latency=LatencySummary.from_samples(np.asarray(stream.latencies, dtype=np.float64)),
            block_size=stream.profile.block_size,
            queue_depth=stream.depth,
            label=stream.label,
        )

    def total(self, label: str = "") -> IoStats:
        """All streams merged into one result (array runs)."""
        lat = np.concatenate([np.asarray(s.latencies, dtype=np.float64) for s in self.streams]) \
            if self.streams else np.empty(0)
        first = self.streams[0].profile
        return IoStats(
            ops_completed=int(lat.size),
            bytes_transferred=sum(s.bytes for s in self.streams),
            elapsed=(self.end - self.warmup) / 1e6,
            latency=LatencySummary.from_samples(lat),
            block_size=first.block_size,
            queue_depth=sum(s.depth for s in self.streams),
            label=label or first.name,
        )
