"""Measured or simulated I/O results."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MiB = 2 ** 20


@dataclass(frozen=True)
class LatencySummary:
    """Latency distribution in microseconds.

    ``buckets`` is a list of ``(upper_bound_us, count)`` pairs with power-of-two
    upper bounds; a sample ``x`` lands in the first bucket with ``x <= bound``.
    """

    count: int = 0
    min_us: float = 0.0
    mean_us: float = 0.0
    max_us: float = 0.0
    p50_us: float = 0.0
    p95_us: float = 0.0
    p99_us: float = 0.0
    buckets: tuple[tuple[int, int], ...] = ()

    @classmethod
    def from_samples(cls, samples_us: Sequence[float] | np.ndarray) -> "LatencySummary":
        arr = np.asarray(samples_us, dtype=np.float64)
        if arr.size == 0:
            return cls()
        p50, p95, p99 = np.percentile(arr, [50, 95, 99])
        top = max(0, math.ceil(math.log2(max(arr.max(), 1.0))))
        bounds = np.array([2 ** k for k in range(top + 1)], dtype=np.float64)
        idx = np.searchsorted(bounds, arr, side="left")
        counts = np.bincount(idx, minlength=len(bounds))
        buckets = tuple((int(b), int(c)) for b, c in zip(bounds, counts) if c)
        return cls(
            count=int(arr.size),
            min_us=float(arr.min()),
            mean_us=float(arr.mean()),
            max_us=float(arr.max()),
            p50_us=float(p50),
            p95_us=float(p95),
            p99_us=float(p99),
            buckets=buckets,
        )

    def scaled(self, factor: float) -> "LatencySummary":
        """Every sample multiplied by ``factor`` (bucket counts re-binned)."""
        buckets: dict[int, int] = {}
        for bound, n in self.buckets:
            new = 2 ** max(0, math.ceil(math.log2(max(bound * factor, 1.0))))
            buckets[new] = buckets.get(new, 0) + n
        return LatencySummary(
            count=self.count,
            min_us=self.min_us * factor,
            mean_us=self.mean_us * factor,
            max_us=self.max_us * factor,
            p50_us=self.p50_us * factor,
            p95_us=self.p95_us * factor,
            p99_us=self.p99_us * factor,
            buckets=tuple(sorted(buckets.items())),
        )

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "min_us": self.min_us,
            "mean_us": self.mean_us,
            "max_us": self.max_us,
            "p50_us": self.p50_us,
            "p95_us": self.p95_us,
            "p99_us": self.p99_us,
            "buckets": [{"le_us": b, "count": c} for b, c in self.buckets],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatencySummary":
        buckets = tuple((int(b["le_us"]), int(b["count"])) for b in doc.get("buckets", ()))
        keys = ("min_us", "mean_us", "max_us", "p50_us", "p95_us", "p99_us")
        return cls(count=int(doc.get("count", 0)), buckets=buckets,
                   **{k: float(doc.get(k, 0.0)) for k in keys})


@dataclass(frozen=True)
class IoStats:
    """Result of one stress run.

    ``iops`` and ``mbps`` are derived from the counters so the identities
    ``iops = ops / elapsed`` and ``mbps = bytes / (2**20 * elapsed)`` hold by
    construction.  ``block_size`` and ``queue_depth`` are carried for the
    consistency checks; either may be ``None`` for foreign results.
    """

    ops_completed: int
    bytes_transferred: int
    elapsed: float
    latency: LatencySummary = field(default_factory=LatencySummary)
    block_size: int | None = None
    queue_depth: int | None = None
    label: str = ""

    @property
    def iops(self) -> float:
        return self.ops_completed / self.elapsed if self.elapsed > 0 else 0.0

    @property
    def mbps(self) -> float:
        return self.bytes_transferred / (MiB * self.elapsed) if self.elapsed > 0 else 0.0

    @property
    def mean_latency_s(self) -> float:
        return self.latency.mean_us / 1e6

    @property
    def littles_law_inflight(self) -> float:
        """Average in-flight count implied by throughput and mean latency."""
        return self.mean_latency_s * self.iops

    def slowed(self, share: float) -> "IoStats":
        """The same work delivered at ``share`` times the original rate."""
        if share <= 0:
            raise ValueError(f"share must be positive, got {share}")
        if share == 1:
            return self
        return dataclasses.replace(
            self, elapsed=self.elapsed / share, latency=self.latency.scaled(1 / share))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "ops_completed": self.ops_completed,
            "bytes_transferred": self.bytes_transferred,
            "elapsed_s": self.elapsed,
            "iops": self.iops,
            "mbps": self.mbps,
            "block_size": self.block_size,
            "queue_depth": self.queue_depth,
            "latency": self.latency.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IoStats":
        return cls(
            ops_completed=int(doc["ops_completed"]),
            bytes_transferred=int(doc["bytes_transferred"]),
            elapsed=float(doc["elapsed_s"]),
            latency=LatencySummary.from_dict(doc.get("latency", {})),
            block_size=doc.get("block_size"),
            queue_depth=doc.get("queue_depth"),
            label=doc.get("label", ""),
        )
