"""Synthetic I/O test configurations and their request streams."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from itertools import count as _count
from typing import Iterator

import numpy as np

KiB = 1024
GB = 1000 ** 3

DEFAULT_DURATION_S = 300.0
DEFAULT_REGION = 250 * GB

# random offsets are drawn in fixed-size chunks so streams do not depend on
# how many requests a consumer pulls at a time
_CHUNK = 4096


class Pattern(str, enum.Enum):
    SEQUENTIAL = "sequential"
    RANDOM = "random"


class Op(str, enum.Enum):
    READ = "read"
    WRITE = "write"


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class IoProfile:
    pattern: Pattern
    op: Op
    block_size: int
    queue_depth: int
    duration: float = DEFAULT_DURATION_S
    region_size: int = DEFAULT_REGION

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        object.__setattr__(self, "op", Op(self.op))
        if self.block_size <= 0:
            raise ProfileError(f"block_size must be positive, got {self.block_size}")
        if self.block_size > self.region_size:
            raise ProfileError(
                f"block_size {self.block_size} exceeds region_size {self.region_size}")
        if self.queue_depth < 1:
            raise ProfileError(f"queue_depth must be >= 1, got {self.queue_depth}")
        if self.duration <= 0:
            raise ProfileError(f"duration must be positive, got {self.duration}")

    @property
    def name(self) -> str:
        """Short label such as ``rand-read-8k-d4``."""
        pat = "seq" if self.pattern is Pattern.SEQUENTIAL else "rand"
        size = f"{self.block_size // KiB}k" if self.block_size % KiB == 0 else f"{self.block_size}b"
        return f"{pat}-{self.op.value}-{size}-d{self.queue_depth}"

    @property
    def workload(self) -> str:
        """Block-size independent key, e.g. ``random-read-d4``."""
        return f"{self.pattern.value}-{self.op.value}-d{self.queue_depth}"

    @property
    def blocks(self) -> int:
        return self.region_size // self.block_size

    def replace(self, **changes) -> "IoProfile":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "op": self.op.value,
            "block_size": self.block_size,
            "queue_depth": self.queue_depth,
            "duration_s": self.duration,
            "region_size": self.region_size,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IoProfile":
        try:
            return cls(
                pattern=Pattern(doc["pattern"]),
                op=Op(doc["op"]),
                block_size=int(doc["block_size"]),
                queue_depth=int(doc["queue_depth"]),
                duration=float(doc.get("duration_s", DEFAULT_DURATION_S)),
                region_size=int(doc.get("region_size", DEFAULT_REGION)),
            )
        except KeyError as exc:
            raise ProfileError(f"profile document missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IoProfile":
        return cls.from_dict(json.loads(text))


def standard_profiles(duration: float = DEFAULT_DURATION_S,
                      region_size: int = DEFAULT_REGION) -> list[IoProfile]:
    """The six single-volume stress configurations, in table order."""
    seq, rnd = Pattern.SEQUENTIAL, Pattern.RANDOM
    rd, wr = Op.READ, Op.WRITE
    specs = [
        (seq, rd, 64 * KiB, 4),
        (seq, wr, 64 * KiB, 4),
        (rnd, rd, 8 * KiB, 1),
        (rnd, wr, 8 * KiB, 1),
        (rnd, rd, 8 * KiB, 4),
        (rnd, wr, 8 * KiB, 4),
    ]
    return [IoProfile(p, o, b, d, duration, region_size) for p, o, b, d in specs]


def profile_by_name(name: str, **overrides) -> IoProfile:
    """Look up a standard profile by its :attr:`IoProfile.name`."""
    for profile in standard_profiles():
        if profile.name == name:
            return profile.replace(**overrides) if overrides else profile
    known = ", ".join(p.name for p in standard_profiles())
    raise ProfileError(f"unknown profile {name!r} (known: {known})")


@dataclass(frozen=True, slots=True)
class IoRequest:
    offset: int
    length: int
    op: Op
    sequence_id: int


def generate_offsets(profile: IoProfile, seed: int) -> Iterator[int]:
    """Endless block-aligned offset stream for ``profile``."""
    block, nblocks = profile.block_size, profile.blocks
    if nblocks < 1:
        raise ProfileError(
            f"block_size {block} exceeds region_size {profile.region_size}")
    if profile.pattern is Pattern.SEQUENTIAL:
        for i in _count():
            yield (i % nblocks) * block
    else:
        rng = np.random.default_rng(seed)
        while True:
            for idx in rng.integers(0, nblocks, size=_CHUNK).tolist():
                yield idx * block


def generate_requests(profile: IoProfile, seed: int,
                      count: int | None = None) -> Iterator[IoRequest]:
    """Deterministic request stream; ``count=None`` yields forever."""
    if count is not None and count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if profile.blocks < 1:
        raise ProfileError(
            f"block_size {profile.block_size} exceeds region_size {profile.region_size}")
    return _requests(profile, seed, count)


def _requests(profile, seed, count):
    offsets = generate_offsets(profile, seed)
    block, op = profile.block_size, profile.op
    for seq_id, offset in enumerate(offsets):
        if count is not None and seq_id >= count:
            return
        yield IoRequest(offset, block, op, seq_id)
