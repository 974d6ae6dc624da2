"""RAID1 volumes and multi-disk arrays behind a controller model."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import simcore
from .disk import DiskParams, service_fn
from .profiles import IoProfile, IoRequest, Op
from .stats import IoStats


class ConfigError(ValueError):
    pass


class MirrorKind(str, enum.Enum):
    NONE = "none"
    SOFTWARE = "software"
    HARDWARE = "hardware"


class RebuildState(str, enum.Enum):
    NORMAL = "normal"
    CTLR_REBUILD = "ctlr_rebuild"
    VOL_REBUILD = "vol_rebuild"


@dataclass(frozen=True)
class MirrorConfig:
    kind: MirrorKind = MirrorKind.NONE
    rebuild: RebuildState = RebuildState.NORMAL

    def __post_init__(self):
        object.__setattr__(self, "kind", MirrorKind(self.kind))
        object.__setattr__(self, "rebuild", RebuildState(self.rebuild))
        if self.kind is MirrorKind.NONE and self.rebuild is RebuildState.VOL_REBUILD:
            raise ConfigError("an unmirrored volume cannot itself be rebuilding")

    @property
    def mirrored(self) -> bool:
        return self.kind is not MirrorKind.NONE


@dataclass(frozen=True)
class RebuildModel:
    """Foreground throughput retained while a mirror is being rebuilt.

    ``shares`` maps ``"<state>/<workload>"`` (e.g. ``"vol_rebuild/random-read-d4"``)
    to a calibrated share; ``vendor_shares`` holds per-drive overrides keyed by
    ``DiskParams.name``.  Lookups fall back to the coarse fields:
    ``foreground_share_read``/``_write`` for a volume rebuild and
    ``1 - ctlr_crosstalk`` for a rebuild elsewhere on the controller.
    """

    foreground_share_read: float = 1.0
    foreground_share_write: float = 1.0
    ctlr_crosstalk: float = 0.0
    shares: dict[str, float] = field(default_factory=dict)
    vendor_shares: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("foreground_share_read", "foreground_share_write", "ctlr_crosstalk"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        everything = list(self.shares.values())
        for table in self.vendor_shares.values():
            everything.extend(table.values())
        if any(v <= 0 for v in everything):
            raise ConfigError("calibrated shares must be positive")

    def share(self, state: RebuildState, profile: IoProfile, vendor: str | None = None) -> float:
        state = RebuildState(state)
        if state is RebuildState.NORMAL:
            return 1.0
        key = f"{state.value}/{profile.workload}"
        if vendor is not None and key in self.vendor_shares.get(vendor, {}):
            return self.vendor_shares[vendor][key]
        if key in self.shares:
            return self.shares[key]
        if state is RebuildState.CTLR_REBUILD:
            return 1.0 - self.ctlr_crosstalk
        if profile.op is Op.READ:
            return self.foreground_share_read
        return self.foreground_share_write

    def to_dict(self) -> dict:
        return {
            "foreground_share_read": self.foreground_share_read,
            "foreground_share_write": self.foreground_share_write,
            "ctlr_crosstalk": self.ctlr_crosstalk,
            "shares": dict(sorted(self.shares.items())),
            "vendor_shares": {v: dict(sorted(t.items()))
                              for v, t in sorted(self.vendor_shares.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RebuildModel":
        return cls(
            foreground_share_read=float(doc.get("foreground_share_read", 1.0)),
            foreground_share_write=float(doc.get("foreground_share_write", 1.0)),
            ctlr_crosstalk=float(doc.get("ctlr_crosstalk", 0.0)),
            shares={k: float(v) for k, v in doc.get("shares", {}).items()},
            vendor_shares={v: {k: float(x) for k, x in t.items()}
                           for v, t in doc.get("vendor_shares", {}).items()},
        )


IDENTITY_REBUILD = RebuildModel()


@dataclass(frozen=True)
class ControllerParams:
    """Controller throughput model.

    Caps are aggregate MiB/s through the controller.  Beyond the disk count
    that saturates ``seq_write_cap`` each extra disk multiplies the write cap
    by ``1 - seq_write_decline``.  ``seek_scale`` and ``write_service_scale``
    shrink the drive's seek and cached-write service as seen through this
    controller (1.0 = transparent).
    """

    name: str
    ports: int
    bus_theoretical: float
    seq_read_cap: float
    seq_write_cap: float
    hw_mirror_seq_read_cap: float | None = None
    seq_write_decline: float = 0.0
    seek_scale: float = 1.0
    write_service_scale: float = 1.0
    rebuild: dict[MirrorKind, RebuildModel] = field(default_factory=dict)

    def __post_init__(self):
        if self.ports not in (4, 8):
            raise ConfigError(f"ports must be 4 or 8, got {self.ports}")
        caps = [self.seq_read_cap, self.seq_write_cap]
        if self.hw_mirror_seq_read_cap is not None:
            caps.append(self.hw_mirror_seq_read_cap)
        if any(c <= 0 or c > self.bus_theoretical for c in caps):
            raise ConfigError(
                f"caps {caps} must be positive and within bus bandwidth {self.bus_theoretical}")
        if not 0 <= self.seq_write_decline < 1:
            raise ConfigError(f"seq_write_decline must be in [0, 1), got {self.seq_write_decline}")
        if self.seek_scale <= 0 or self.write_service_scale <= 0:
            raise ConfigError("service scales must be positive")
        object.__setattr__(self, "rebuild",
                           {MirrorKind(k): v for k, v in self.rebuild.items()})

    def write_cap(self, n_disks: int, per_disk_mbps: float) -> float:
        saturating = max(1, math.ceil(self.seq_write_cap / per_disk_mbps - 1e-9))
        extra = max(0, n_disks - saturating)
        return self.seq_write_cap * (1 - self.seq_write_decline) ** extra

    def effective_disk(self, disk: DiskParams) -> DiskParams:
        """The drive as seen through this controller."""
        if self.seek_scale == 1.0 and self.write_service_scale == 1.0:
            return disk
        return disk.replace(
            avg_seek=disk.avg_seek * self.seek_scale,
            write_cache_effective_service=disk.write_cache_effective_service
            * self.write_service_scale)

    def rebuild_model(self, kind: MirrorKind) -> RebuildModel:
        return self.rebuild.get(MirrorKind(kind), IDENTITY_REBUILD)

    def bus(self, n_disks: int, disk: DiskParams, hardware_mirror: bool = False) -> simcore.Bus:
        capped = self.hw_mirror_seq_read_cap if hardware_mirror else None
        return simcore.Bus(self.seq_read_cap, self.write_cap(n_disks, disk.media_rate),
                           capped_read_mbps=capped, name=self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ports": self.ports,
            "bus_theoretical": self.bus_theoretical,
            "seq_read_cap": self.seq_read_cap,
            "seq_write_cap": self.seq_write_cap,
            "hw_mirror_seq_read_cap": self.hw_mirror_seq_read_cap,
            "seq_write_decline": self.seq_write_decline,
            "seek_scale": self.seek_scale,
            "write_service_scale": self.write_service_scale,
            "rebuild": {k.value: m.to_dict() for k, m in self.rebuild.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ControllerParams":
        doc = dict(doc)
        rebuild = {MirrorKind(k): RebuildModel.from_dict(v)
                   for k, v in doc.pop("rebuild", {}).items()}
        return cls(rebuild=rebuild, **doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "ControllerParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Volume:
    disk: DiskParams
    mirror: MirrorConfig = MirrorConfig()
    controller: ControllerParams | None = None


def dispatch_read(arms: Sequence, req: IoRequest) -> int:
    """Choose the arm that serves a mirrored read.

    A read continuing the extent last sent to an arm stays there, which keeps
    a sequential stream on one head.  Otherwise an idle arm wins, then the
    arm with the shorter queue, then arm 0.  ``arms`` need ``busy``,
    ``pending`` and ``next_offset``.
    """
    for i, arm in enumerate(arms):
        if arm.next_offset == req.offset:
            return i
    for i, arm in enumerate(arms):
        if not arm.busy and arm.pending == 0:
            return i
    return min(range(len(arms)), key=lambda i: (arms[i].pending + arms[i].busy, i))


def dispatch_write(n_arms: int) -> tuple[int, ...]:
    """Arms a mirrored write is issued to; it completes when all of them have."""
    return tuple(range(n_arms))


def apply_rebuild(volume: Volume, rebuild_model: RebuildModel, base_stats: IoStats,
                  profile: IoProfile) -> IoStats:
    """Scale Normal-state results to the volume's rebuild state."""
    state = volume.mirror.rebuild
    if state is RebuildState.NORMAL:
        raise ConfigError("apply_rebuild called on a volume in the Normal state")
    share = rebuild_model.share(state, profile, vendor=volume.disk.name)
    return base_stats.slowed(share)


def _check_fits(disk: DiskParams, profile: IoProfile) -> None:
    if profile.region_size > disk.capacity:
        raise ConfigError(
            f"profile region {profile.region_size} exceeds disk capacity {disk.capacity}")


def simulate_volume(profile: IoProfile, disk: DiskParams, mirror: MirrorConfig,
                    controller: ControllerParams | None = None, seed: int = 0, *,
                    rebuild_model: RebuildModel | None = None,
                    warmup: float | None = None) -> IoStats:
    """Simulate one (possibly mirrored) volume and apply its rebuild state."""
    _check_fits(disk, profile)
    if mirror.kind is MirrorKind.HARDWARE and controller is None:
        raise ConfigError("hardware mirroring requires a controller")
    if mirror.rebuild is not RebuildState.NORMAL and rebuild_model is None and controller is None:
        raise ConfigError("a rebuild state needs a rebuild model or a controller preset")

    eff = controller.effective_disk(disk) if controller else disk
    sim = simcore.Simulation(profile.duration, warmup)
    n_arms = 2 if mirror.mirrored else 1
    bus = controller.bus(n_arms, eff, mirror.kind is MirrorKind.HARDWARE) if controller else None
    arms = [simcore.Arm(service_fn(eff), name=f"{disk.name}:{i}") for i in range(n_arms)]
    if mirror.mirrored:
        target = simcore.MirrorTarget(arms, bus, mirror.kind is MirrorKind.HARDWARE,
                                      dispatch_read)
    else:
        target = simcore.SingleTarget(arms[0], bus)
    sim.add_stream(profile, seed, target)
    stats = sim.run()[0]
    if mirror.rebuild is RebuildState.NORMAL:
        return stats
    model = rebuild_model if rebuild_model is not None else controller.rebuild_model(mirror.kind)
    return apply_rebuild(Volume(disk, mirror, controller), model, stats, profile)


def simulate_array(controller: ControllerParams, n_disks: int, disk: DiskParams,
                   profile: IoProfile, seed: int = 0, *,
                   warmup: float | None = None) -> IoStats:
    """``n_disks`` independent single-disk targets sharing one controller."""
    if not 1 <= n_disks <= controller.ports:
        raise ConfigError(f"n_disks must be in [1, {controller.ports}], got {n_disks}")
    _check_fits(disk, profile)
    eff = controller.effective_disk(disk)
    bus = controller.bus(n_disks, eff)
    sim = simcore.Simulation(profile.duration, warmup)
    for i in range(n_disks):
        arm = simcore.Arm(service_fn(eff), name=f"{disk.name}:{i}")
        sim.add_stream(profile, seed + i, simcore.SingleTarget(arm, bus), label=f"disk{i}")
    sim.run()
    return sim.total(label=f"{controller.name} x{n_disks} {profile.name}")
