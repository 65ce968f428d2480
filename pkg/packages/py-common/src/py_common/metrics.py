"""Prometheus metrics for castle constructions and certificate checks."""

import time
from collections.abc import Iterator
from contextlib import contextmanager

from prometheus_client import REGISTRY, CollectorRegistry, Counter, Histogram, write_to_textfile

# Wall time of a whole construction (ow_castle, quasitile, match, ...)
CONSTRUCTION_SECONDS = Histogram(
    "castleforge_construction_seconds",
    "Construction wall time in seconds",
    ["operation"],
    buckets=[0.01, 0.05, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0],
)

CLAIMS_TOTAL = Counter(
    "castleforge_claims_total",
    "Certificate claims evaluated",
    ["operation", "outcome"],
)

ATOMS_SWEPT = Counter(
    "castleforge_atoms_swept_total",
    "Atoms visited by greedy sweeps",
    ["operation"],
)


@contextmanager
def timed(operation: str) -> Iterator[None]:
    """Observe the duration of the enclosed block under `operation`."""
    start = time.perf_counter()
    try:
        yield
    finally:
        CONSTRUCTION_SECONDS.labels(operation=operation).observe(time.perf_counter() - start)


def record_claims(operation: str, passed: int, failed: int) -> None:
    if passed:
        CLAIMS_TOTAL.labels(operation=operation, outcome="pass").inc(passed)
    if failed:
        CLAIMS_TOTAL.labels(operation=operation, outcome="fail").inc(failed)


def write_metrics(path: str, registry: CollectorRegistry = REGISTRY) -> None:
    """Dump the registry in the node-exporter textfile format."""
    write_to_textfile(path, registry)
