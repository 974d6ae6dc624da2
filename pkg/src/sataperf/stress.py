"""Closed-loop stress runs against a simulated volume or a real file.

Real-file runs keep exactly ``queue_depth`` requests outstanding with one
worker thread per slot.  A slot re-issues at the instant its previous request
completes, so each slot's timeline is a contiguous chain of requests and the
measured latency of a request runs from the previous completion on that slot
(or the start of the run) to its own completion.
"""

from __future__ import annotations

import errno
import mmap
import os
import shutil
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .profiles import IoProfile, Op, generate_requests
from .raid import Volume, simulate_volume
from .simcore import DEFAULT_WARMUP_S
from .stats import IoStats, LatencySummary

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX
    fcntl = None

_ZERO_CHUNK = 8 * 2 ** 20


class TargetError(OSError):
    pass


class InsufficientSpace(TargetError):
    pass


class DirectIOUnsupported(TargetError):
    pass


class StressIOError(TargetError):
    def __init__(self, op: Op, offset: int, length: int, cause: BaseException):
        super().__init__(f"{op.value} of {length} bytes at offset {offset} failed: {cause}")
        self.op = op
        self.offset = offset
        self.length = length
        self.__cause__ = cause


@dataclass(frozen=True)
class SimVolume:
    volume: Volume

    @property
    def kind(self) -> str:
        return "sim"


@dataclass(frozen=True)
class RealFile:
    path: Path
    size: int
    direct_io: bool = True

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        if self.size <= 0:
            raise ValueError(f"file size must be positive, got {self.size}")

    @property
    def kind(self) -> str:
        return "file"


Target = SimVolume | RealFile


@dataclass(frozen=True)
class Readiness:
    ready: bool
    kind: str
    size: int | None = None
    path: str | None = None
    direct_io_supported: bool | None = None
    allocated: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _direct_flags() -> int:
    return getattr(os, "O_DIRECT", 0)


def open_target(path: Path, writable: bool, direct: bool) -> int:
    """Open ``path``; with ``direct`` bypass the page cache or raise."""
    flags = os.O_RDWR if writable else os.O_RDONLY
    if direct:
        odirect = _direct_flags()
        if odirect:
            try:
                return os.open(path, flags | odirect)
            except OSError as exc:
                if exc.errno == errno.EINVAL:
                    raise DirectIOUnsupported(
                        f"file system holding {path} rejects O_DIRECT") from exc
                raise
        nocache = getattr(fcntl, "F_NOCACHE", None) if fcntl else None
        if nocache is None:
            raise DirectIOUnsupported(f"no unbuffered I/O mode on {sys.platform}")
        fd = os.open(path, flags)
        fcntl.fcntl(fd, nocache, 1)
        return fd
    return os.open(path, flags)


def probe_direct_io(path: Path) -> bool:
    try:
        fd = open_target(path, writable=False, direct=True)
    except DirectIOUnsupported:
        return False
    os.close(fd)
    return True


def _allocate(fd: int, size: int) -> None:
    if hasattr(os, "posix_fallocate"):
        try:
            os.posix_fallocate(fd, 0, size)
            return
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise InsufficientSpace(f"insufficient space for {size} bytes") from exc
            if exc.errno not in (errno.EOPNOTSUPP, errno.EINVAL):
                raise
    # file system without fallocate: write zeros
    current = os.fstat(fd).st_size
    zeros = bytes(_ZERO_CHUNK)
    while current < size:
        n = min(_ZERO_CHUNK, size - current)
        os.pwrite(fd, zeros[:n], current)
        current += n
    os.fsync(fd)


def prepare_target(target: Target) -> Readiness:
    """Create and physically allocate a real file; no-op for simulated volumes."""
    if isinstance(target, SimVolume):
        return Readiness(ready=True, kind="sim")
    path = target.path
    allocated = 0
    if path.exists():
        allocated = os.stat(path).st_blocks * 512
    needed = max(0, target.size - allocated)
    parent = path.parent if str(path.parent) else Path(".")
    free = shutil.disk_usage(parent).free
    if needed > free:
        raise InsufficientSpace(
            f"insufficient space: {path} needs {needed} more bytes, {free} free")
    try:
        fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o600)
    except PermissionError as exc:
        raise TargetError(f"permission denied creating {path}") from exc
    try:
        _allocate(fd, target.size)
    finally:
        os.close(fd)
    st = os.stat(path)
    return Readiness(ready=st.st_size >= target.size, kind="file", size=st.st_size,
                     path=str(path), direct_io_supported=probe_direct_io(path),
                     allocated=st.st_blocks * 512)


InflightHook = Callable[[int, float, str], None]


@dataclass
class _Accumulator:
    """Shared by the workers; every field is guarded by ``lock``."""

    depth: int
    start: float
    window_start: float
    end: float
    hook: InflightHook | None
    requests: object
    lock: threading.Lock = field(default_factory=threading.Lock)
    latencies: list[float] = field(default_factory=list)
    bytes: int = 0
    inflight: int = 0
    error: BaseException | None = None

    def phase(self, now: float) -> str:
        if now < self.window_start:
            return "start"
        return "steady" if now <= self.end else "drain"


def _worker(acc: _Accumulator, fd: int, block: int, barrier: threading.Barrier) -> None:
    buf = mmap.mmap(-1, block)
    try:
        barrier.wait()
        with acc.lock:
            req = next(acc.requests)
            acc.inflight += 1
            issued = time.perf_counter()
        while True:
            try:
                if req.op is Op.READ:
                    n = os.preadv(fd, [buf], req.offset)
                else:
                    n = os.pwritev(fd, [buf], req.offset)
                if n != req.length:
                    raise OSError(errno.EIO, f"short transfer of {n} bytes")
            except OSError as exc:
                with acc.lock:
                    acc.inflight -= 1
                    if acc.error is None:
                        acc.error = StressIOError(req.op, req.offset, req.length, exc)
                return
            with acc.lock:
                done = time.perf_counter()
                if acc.window_start <= done <= acc.end:
                    acc.latencies.append((done - issued) * 1e6)
                    acc.bytes += req.length
                if acc.hook is not None:
                    acc.hook(acc.inflight, done, acc.phase(done))
                if done >= acc.end or acc.error is not None:
                    acc.inflight -= 1
                    return
                req = next(acc.requests)
                issued = done
    finally:
        buf.close()


def _run_file(target: RealFile, profile: IoProfile, seed: int, warmup: float,
              hook: InflightHook | None) -> IoStats:
    if not target.path.exists():
        raise TargetError(f"{target.path} does not exist; prepare the target first")
    size = target.path.stat().st_size
    if size < target.size or size < profile.region_size:
        raise TargetError(
            f"{target.path} is {size} bytes; profile addresses {profile.region_size}")
    fd = open_target(target.path, profile.op is Op.WRITE, target.direct_io)
    try:
        start = time.perf_counter()
        acc = _Accumulator(depth=profile.queue_depth, start=start,
                           window_start=start + warmup, end=start + profile.duration,
                           hook=hook, requests=generate_requests(profile, seed))
        barrier = threading.Barrier(profile.queue_depth)
        threads = [threading.Thread(target=_worker, args=(acc, fd, profile.block_size, barrier),
                                    name=f"stress-slot-{i}", daemon=True)
                   for i in range(profile.queue_depth)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        os.close(fd)
    if acc.error is not None:
        raise acc.error
    return IoStats(
        ops_completed=len(acc.latencies),
        bytes_transferred=acc.bytes,
        elapsed=profile.duration - warmup,
        latency=LatencySummary.from_samples(np.asarray(acc.latencies)),
        block_size=profile.block_size,
        queue_depth=profile.queue_depth,
        label=f"{target.path.name} {profile.name}",
    )


def run_stress(target: Target, profile: IoProfile, seed: int = 0, *,
               warmup: float | None = None, hook: InflightHook | None = None) -> IoStats:
    """Run ``profile`` against ``target`` for ``profile.duration`` seconds.

    ``hook(inflight, now, phase)`` is called at every real-file completion with
    ``phase`` one of ``start``, ``steady`` or ``drain``.
    """
    if warmup is None:
        warmup = min(DEFAULT_WARMUP_S, 0.1 * profile.duration)
    if not 0 <= warmup < profile.duration:
        raise ValueError(f"warmup {warmup} must lie in [0, {profile.duration})")
    if isinstance(target, SimVolume):
        v = target.volume
        return simulate_volume(profile, v.disk, v.mirror, v.controller, seed, warmup=warmup)
    return _run_file(target, profile, seed, warmup, hook)
