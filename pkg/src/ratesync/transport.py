"""In-process transport: ordered lossless channels, parameter store, pacing.

Channels here are the single-process realization of the backend contract:
every consumer of an endpoint observes the producer's messages exactly
once, in emission order, with a per-channel sequence number to prove it.
In synchronized mode a channel delay never withholds delivery -- the
expected-count gating accounts for it -- while in asynchronous mode the
delay is realized as a wall-clock delivery offset scaled by the target
real-time factor.
"""

from __future__ import annotations

import heapq
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

from .errors import ConfigurationError, ParameterNotFound, TransportContractError, TypedAccessError

__all__ = [
    "Envelope",
    "ClockMode",
    "Throttle",
    "ChannelEndpoint",
    "ParameterStore",
    "DeliveryScheduler",
]

# Buffered-message count above which a channel logs a high-water warning.
HIGH_WATER_MARK = 10_000


@dataclass(frozen=True)
class Envelope:
    """One transported message."""

    payload: Any
    seq: int
    sim_time_sent: float


@dataclass(frozen=True)
class ClockMode:
    """Synchronization mode plus the target real-time factor (0 = unlimited)."""

    mode: str = "synchronized"
    target_rtf: float = 0.0

    def __post_init__(self):
        if self.mode not in ("synchronized", "asynchronous"):
            raise ConfigurationError(f"unknown clock mode {self.mode!r}")
        if self.target_rtf < 0:
            raise ConfigurationError("target_rtf must be >= 0")
        if self.mode == "asynchronous" and self.target_rtf == 0:
            raise ConfigurationError("asynchronous mode requires a positive target_rtf")

    @property
    def synchronized(self) -> bool:
        return self.mode == "synchronized"


class Throttle:
    """Paces simulated time against the wall clock.

    The engine node calls :meth:`throttle` once per callback; with a
    positive target real-time factor the call sleeps until
    ``wall_elapsed >= sim_elapsed / target_rtf``.  Factor 0 returns
    immediately (unthrottled).
    """

    def __init__(self, mode: ClockMode):
        self.mode = mode
        self._wall_start = time.monotonic()

    def restart(self) -> None:
        self._wall_start = time.monotonic()

    def throttle(self, sim_time: float) -> None:
        rtf = self.mode.target_rtf
        if rtf <= 0:
            return
        lag = self._wall_start + sim_time / rtf - time.monotonic()
        if lag > 0:
            time.sleep(lag)

    @property
    def wall_elapsed(self) -> float:
        return time.monotonic() - self._wall_start


class DeliveryScheduler:
    """Background thread delivering callbacks at requested wall instants."""

    def __init__(self):
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._counter = 0
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name="delivery", daemon=True)
        self._thread.start()

    def schedule(self, due_wall: float, deliver: Callable[[], None]) -> None:
        with self._cond:
            if self._stopped:
                return
            self._counter += 1
            heapq.heappush(self._heap, (due_wall, self._counter, deliver))
            self._cond.notify()

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._stopped and (
                    not self._heap or self._heap[0][0] > time.monotonic()
                ):
                    if self._heap:
                        self._cond.wait(timeout=max(0.0, self._heap[0][0] - time.monotonic()))
                    else:
                        self._cond.wait()
                if self._stopped:
                    return
                _, _, deliver = heapq.heappop(self._heap)
            deliver()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._heap.clear()
            self._cond.notify_all()
        self._thread.join(timeout=2.0)


class ChannelEndpoint:
    """One producer port fanning out to any number of consumer listeners.

    Sequence numbers are assigned here, under the endpoint lock, so all
    consumers observe the identical ordered stream.
    """

    def __init__(
        self,
        producer: str,
        delay: Fraction | float = 0,
        clock: ClockMode | None = None,
        scheduler: DeliveryScheduler | None = None,
        latency_fn: Callable[[], float] | None = None,
    ):
        self.producer = producer
        self.delay = Fraction(delay)
        self.clock = clock or ClockMode()
        self.scheduler = scheduler
        # Test hook: artificial delivery latency in seconds, used to prove
        # that synchronized results do not depend on delivery timing.
        self.latency_fn = latency_fn
        self._consumers: list[Callable[[Envelope], None]] = []
        self._seq = 0
        self._lock = threading.Lock()
        self._closed = False

    def subscribe(self, listener: Callable[[Envelope], None]) -> None:
        self._consumers.append(listener)

    @property
    def next_seq(self) -> int:
        return self._seq

    def publish(self, payload: Any, sim_time_sent: float = 0.0) -> Envelope:
        with self._lock:
            if self._closed:
                raise TransportContractError(
                    f"publish on closed channel from {self.producer!r}"
                )
            env = Envelope(payload, self._seq, sim_time_sent)
            self._seq += 1
            consumers = list(self._consumers)

        if not self.clock.synchronized and self.delay > 0:
            if self.scheduler is None:
                raise ConfigurationError("asynchronous delayed channel needs a scheduler")
            due = time.monotonic() + float(self.delay) / self.clock.target_rtf
            for listener in consumers:
                self.scheduler.schedule(due, lambda l=listener: l(env))
        elif self.latency_fn is not None and self.scheduler is not None:
            for listener in consumers:
                due = time.monotonic() + max(0.0, self.latency_fn())
                self.scheduler.schedule(due, lambda l=listener: l(env))
        else:
            for listener in consumers:
                listener(env)
        return env

    def close(self) -> None:
        with self._lock:
            self._closed = True


@dataclass
class _Entry:
    value: Any
    version: int


class ParameterStore:
    """Namespaced key/value store readable and writable by any node.

    Writes are atomic per key and totally ordered by a version counter;
    reads return the latest committed value.
    """

    def __init__(self):
        self._data: dict[str, _Entry] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _check_key(key: str) -> None:
        if not isinstance(key, str) or not key or key.startswith("/") or key.endswith("/"):
            raise ConfigurationError(f"malformed parameter key {key!r}")

    def set(self, key: str, value: Any) -> None:
        self._check_key(key)
        with self._lock:
            entry = self._data.get(key)
            version = entry.version + 1 if entry else 1
            self._data[key] = _Entry(value, version)

    def get(self, key: str, expected_type: type | None = None) -> Any:
        self._check_key(key)
        with self._lock:
            entry = self._data.get(key)
        if entry is None:
            raise ParameterNotFound(key)
        if expected_type is not None and not isinstance(entry.value, expected_type):
            raise TypedAccessError(
                f"parameter {key!r} holds {type(entry.value).__name__}, "
                f"not {expected_type.__name__}"
            )
        return entry.value

    def get_versioned(self, key: str) -> tuple[Any, int]:
        self._check_key(key)
        with self._lock:
            entry = self._data.get(key)
        if entry is None:
            raise ParameterNotFound(key)
        return entry.value, entry.version

    def contains(self, key: str) -> bool:
        with self._lock:
            return key in self._data

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {k: e.value for k, e in self._data.items()}
