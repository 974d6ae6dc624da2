"""Mechanical model of a single pre-NCQ SATA drive.

The drive serves one command at a time.  A request that starts exactly at the
head position streams at the media rate; anything else pays an average seek
plus half a revolution.  With write-back caching a random write costs a single
calibrated effective service time.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .profiles import IoProfile, IoRequest, Op
from .stats import MiB, IoStats
from . import simcore

KiB = 1024

# transfer size used when inverting random-read rates into a seek time
CALIBRATION_BLOCK = 8 * KiB


class DiskError(ValueError):
    pass


class CalibrationError(DiskError):
    def __init__(self, component: str, value: float, message: str):
        super().__init__(f"{message}: {component} = {value:.4f}")
        self.component = component
        self.value = value


@dataclass(frozen=True)
class DiskParams:
    """Drive parameters.  Times in milliseconds, rates in MiB/s."""

    name: str
    capacity: int
    avg_seek: float
    rpm: float
    media_rate: float
    cache_size: int = 8 * MiB
    write_back: bool = True
    write_cache_effective_service: float = 0.0

    def __post_init__(self):
        if self.media_rate <= 0:
            raise DiskError(f"media_rate must be positive, got {self.media_rate}")
        if self.avg_seek < 0:
            raise DiskError(f"avg_seek must be >= 0, got {self.avg_seek}")
        if self.rpm <= 0:
            raise DiskError(f"rpm must be positive, got {self.rpm}")
        if self.capacity <= 0:
            raise DiskError(f"capacity must be positive, got {self.capacity}")

    @property
    def rotational_latency(self) -> float:
        return 60000.0 / (2 * self.rpm)

    def transfer_ms(self, length: int) -> float:
        return length * 1000.0 / (self.media_rate * MiB)

    def replace(self, **changes) -> "DiskParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DiskParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise DiskError(f"unknown disk parameter(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "DiskParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DiskState:
    head_position: int = 0
    busy_until: float = 0.0


def service_time(params: DiskParams, state: DiskState, req: IoRequest) -> float:
    """Service time in ms for ``req`` given the current head position."""
    if req.offset < 0 or req.length < 0 or req.offset + req.length > params.capacity:
        raise DiskError(
            f"request [{req.offset}, {req.offset + req.length}) outside disk of "
            f"{params.capacity} bytes")
    transfer = params.transfer_ms(req.length)
    if req.offset == state.head_position:
        return transfer
    if req.op is Op.WRITE and params.write_back:
        return max(params.write_cache_effective_service, transfer)
    return params.avg_seek + params.rotational_latency + transfer


def service_fn(params: DiskParams):
    """Per-request µs service function for the event core; advances the head."""
    capacity = params.capacity
    seek_rot = params.avg_seek + params.rotational_latency
    cached = params.write_cache_effective_service if params.write_back else None
    us_per_byte = 1e6 / (params.media_rate * MiB)

    def service_us(arm, req: IoRequest) -> int:
        offset, length = req.offset, req.length
        if offset < 0 or offset + length > capacity:
            raise DiskError(f"request [{offset}, {offset + length}) outside disk")
        transfer = length * us_per_byte
        if offset == arm.head:
            t = transfer
        elif cached is not None and req.op is Op.WRITE:
            t = max(cached * 1000.0, transfer)
        else:
            t = seek_rot * 1000.0 + transfer
        arm.head = offset + length
        return round(t)

    return service_us


def simulate_disk(params: DiskParams, profile: IoProfile, seed: int,
                  warmup: float | None = None) -> IoStats:
    """Closed-loop run of ``profile`` against one drive in simulated time."""
    if profile.region_size > params.capacity:
        raise DiskError(
            f"profile region {profile.region_size} exceeds disk capacity {params.capacity}")
    sim = simcore.Simulation(profile.duration, warmup)
    arm = simcore.Arm(service_fn(params), name=params.name)
    sim.add_stream(profile, seed, simcore.SingleTarget(arm))
    return sim.run()[0]


def calibrate_disk(rand_read_iops: float, rand_write_iops: float, seq_mbps: float,
                   *, name: str = "calibrated", capacity: int = 250 * 1000 ** 3,
                   rpm: float = 7200, cache_size: int = 8 * MiB) -> DiskParams:
    """Invert measured single-drive rates into drive parameters.

    The random-read rate fixes the seek (after removing half a revolution and
    an 8 KiB transfer); the random-write rate fixes the cached write service;
    the sequential rate is the media rate.
    """
    for label, value in (("rand_read_iops", rand_read_iops),
                         ("rand_write_iops", rand_write_iops),
                         ("seq_mbps", seq_mbps)):
        if not value > 0:
            raise CalibrationError(label, value, "target must be positive")
    rotation = 60000.0 / (2 * rpm)
    transfer = CALIBRATION_BLOCK * 1000.0 / (seq_mbps * MiB)
    seek = 1000.0 / rand_read_iops - rotation - transfer
    if seek < 0:
        raise CalibrationError("avg_seek", seek, "negative seek implied by rand_read_iops")
    write_service = 1000.0 / rand_write_iops
    if write_service < transfer:
        raise CalibrationError("write_cache_effective_service", write_service,
                               "cached write faster than media transfer")
    return DiskParams(
        name=name,
        capacity=capacity,
        avg_seek=round(seek, 4),
        rpm=rpm,
        media_rate=float(seq_mbps),
        cache_size=cache_size,
        write_back=True,
        write_cache_effective_service=round(write_service, 4),
    )
