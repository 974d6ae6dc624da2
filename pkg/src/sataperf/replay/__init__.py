"""Web-log replay against a simulated or real backend."""

from .backends import (PAGE_MEANS_MS, Backend, BackendError, EndpointSpec, ExternalBackend,
                       SimulatedBackend, external_backend, simulated_backend)
from .engine import (FireHose, LogSource, PageStats, ReplayError, ReplayResult, ReplayStats,
                     TimeSync, replay)
from .logs import (DEFAULT_FIELDS, Classifier, LogParser, LogRecord, Page, ReplayRequest,
                   classify, load_page_params, parse_log, requests_from_records)

__all__ = [
    "PAGE_MEANS_MS", "Backend", "BackendError", "EndpointSpec", "ExternalBackend",
    "SimulatedBackend", "external_backend", "simulated_backend", "FireHose", "LogSource",
    "PageStats", "ReplayError", "ReplayResult", "ReplayStats", "TimeSync", "replay",
    "DEFAULT_FIELDS", "Classifier", "LogParser", "LogRecord", "Page", "ReplayRequest",
    "classify", "load_page_params", "parse_log", "requests_from_records",
]
