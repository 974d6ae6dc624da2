"""Backends answer replayed calls: a seeded latency model or a real HTTP service."""

from __future__ import annotations

import asyncio
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import httpx
import numpy as np

from .logs import REPLAYED, Page, ReplayRequest

# per-page mean latency of the production pages, milliseconds
PAGE_MEANS_MS = {
    Page.TILE: 39.0,
    Page.IMAGE: 63.0,
    Page.DOWNLOAD: 160.0,
    Page.IMAGEINFO: 42.0,
    Page.FAMOUS: 9.0,
}
DEFAULT_CV = 0.5
DEFAULT_TIMEOUT_S = 30.0


class BackendError(ValueError):
    pass


class Backend:
    """Base class.  ``virtual`` backends can also be sampled without waiting."""

    virtual = False

    async def call(self, req: ReplayRequest) -> bool:
        raise NotImplementedError

    async def aclose(self) -> None:
        pass

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class SimulatedBackend(Backend):
    """Per-page latency drawn from a lognormal with the configured mean.

    Draws come from one seeded generator in call order, so a run is
    reproducible whenever the call order is.  ``cv = 0`` gives constant
    latencies.  Cold-start spikes are not modelled, so run maxima are not
    comparable with measured production maxima.
    """

    virtual = True

    def __init__(self, means_ms: Mapping[Page, float], cv: float = DEFAULT_CV, seed: int = 0,
                 failure_rate: float = 0.0):
        if cv < 0 or not math.isfinite(cv):
            raise BackendError(f"coefficient of variation must be >= 0, got {cv}")
        if not 0 <= failure_rate < 1:
            raise BackendError(f"failure rate must lie in [0, 1), got {failure_rate}")
        self.means_ms = {}
        for page, mean in means_ms.items():
            page = Page(page)
            if page is Page.OTHER:
                raise BackendError("the catch-all page is never replayed")
            if not mean > 0:
                raise BackendError(f"mean latency for {page.value} must be > 0, got {mean}")
            self.means_ms[page] = float(mean)
        missing = [p.value for p in REPLAYED if p not in self.means_ms]
        if missing:
            raise BackendError(f"no latency for pages: {', '.join(missing)}")
        self.cv = float(cv)
        self.seed = seed
        self.failure_rate = failure_rate
        self._sigma = math.sqrt(math.log1p(cv * cv))
        self._rng = np.random.default_rng(seed)

    def sample(self, req: ReplayRequest) -> tuple[float, bool]:
        """(latency in seconds, success) for the next call."""
        mean = self.means_ms[req.page] / 1000.0
        if self.cv == 0:
            latency = mean
        else:
            mu = math.log(mean) - self._sigma ** 2 / 2
            latency = float(self._rng.lognormal(mu, self._sigma))
        ok = True
        if self.failure_rate:
            ok = bool(self._rng.random() >= self.failure_rate)
        return latency, ok

    async def call(self, req: ReplayRequest) -> bool:
        latency, ok = self.sample(req)
        await asyncio.sleep(latency)
        return ok

    def describe(self) -> dict:
        return {"kind": "simulated", "cv": self.cv, "seed": self.seed,
                "means_ms": {p.value: m for p, m in self.means_ms.items()},
                "failure_rate": self.failure_rate,
                "note": "cold-start latency spikes not modelled"}


def simulated_backend(model: Mapping[Page | str, float] | float | None = None, *,
                      cv: float = DEFAULT_CV, constant: bool = False, seed: int = 0,
                      failure_rate: float = 0.0) -> SimulatedBackend:
    """A single number means that latency for every page; ``None`` means the
    production per-page means."""
    if model is None:
        means = dict(PAGE_MEANS_MS)
    elif isinstance(model, (int, float)):
        means = {p: float(model) for p in REPLAYED}
    else:
        means = {Page(k): v for k, v in model.items()}
    return SimulatedBackend(means, 0.0 if constant else cv, seed, failure_rate)


@dataclass
class EndpointSpec:
    base_url: str
    templates: dict[Page, str]
    timeout_s: float = DEFAULT_TIMEOUT_S

    @classmethod
    def from_dict(cls, doc: dict) -> "EndpointSpec":
        try:
            templates = {Page(k.lower()): v for k, v in doc["templates"].items()}
            spec = cls(doc.get("base_url", ""), templates,
                       float(doc.get("timeout_s", DEFAULT_TIMEOUT_S)))
        except (KeyError, ValueError, AttributeError) as exc:
            raise BackendError(f"bad endpoint spec: {exc}") from exc
        if spec.timeout_s <= 0:
            raise BackendError("timeout must be positive")
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "EndpointSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def url(self, req: ReplayRequest) -> str:
        template = self.templates.get(req.page)
        if template is None:
            raise KeyError(f"no template for page {req.page.value}")
        return self.base_url + template.format_map(req.params)


@dataclass
class ExternalBackend(Backend):
    """GET per call; latency runs to the last body byte; non-2xx fails."""

    spec: EndpointSpec
    transport: object = None
    _client: object = field(default=None, repr=False)

    def _get_client(self):
        if self._client is None:
            kwargs = {"timeout": self.spec.timeout_s}
            if self.transport is not None:
                kwargs["transport"] = self.transport
            self._client = httpx.AsyncClient(**kwargs)
        return self._client

    async def call(self, req: ReplayRequest) -> bool:
        try:
            url = self.spec.url(req)
        except (KeyError, IndexError, ValueError):
            return False
        client = self._get_client()
        try:
            async with client.stream("GET", url) as resp:
                async for _ in resp.aiter_bytes():
                    pass
                return 200 <= resp.status_code < 300
        except (httpx.HTTPError, OSError):
            return False

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None

    def describe(self) -> dict:
        return {"kind": "external", "base_url": self.spec.base_url,
                "timeout_s": self.spec.timeout_s}


def external_backend(spec: EndpointSpec | dict | str | Path, **kwargs) -> ExternalBackend:
    if isinstance(spec, (str, Path)):
        spec = EndpointSpec.load(spec)
    elif isinstance(spec, dict):
        spec = EndpointSpec.from_dict(spec)
    return ExternalBackend(spec, **kwargs)
