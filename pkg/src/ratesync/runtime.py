"""Per-node runtime: buffering listeners, gated event loop, reset.

Each node owns one event loop and one listener per input channel.  The
listener buffers arrivals and wakes the loop; the loop computes how many
messages every input channel must hold before the next callback may run,
and fires only when all of them do.  Nothing here consults a global
clock: a node's own callback index is its only notion of time.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

from .errors import ConfigurationError, EpisodeFault, TransportContractError
from .protocol import ChannelTiming, Rate, expected_count
from .transport import HIGH_WATER_MARK, ChannelEndpoint, Envelope

__all__ = [
    "ChannelSpec",
    "NodeSpec",
    "NodeLogic",
    "Fired",
    "NodeRuntime",
    "NodeLoop",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelSpec:
    """Consumer-side description of one input channel."""

    name: str
    timing: ChannelTiming
    window: int = 1
    default: Any = None

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"channel {self.name!r}: window must be >= 1")


@dataclass(frozen=True)
class NodeSpec:
    """A node's declared rate, input channels, output ports, and states."""

    name: str
    rate: Rate
    inputs: tuple[ChannelSpec, ...]
    outputs: tuple[str, ...] = ()
    states: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.inputs:
            raise ConfigurationError(f"node {self.name!r} declares no input channel")
        names = [c.name for c in self.inputs]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"node {self.name!r} has duplicate input channels")


class NodeLogic:
    """Extension API implemented by user code.

    ``callback`` receives the callback index and, per input channel, the
    window of most recent payloads (oldest first, length fixed at the
    channel's window size).  It must return one payload for every
    declared output port.  ``reset`` is invoked at episode start with the
    values sampled for this node's registered states.
    """

    states: dict[str, Any] = {}

    def reset(self, values: dict[str, Any]) -> None:
        pass

    def callback(self, k: int, inputs: dict[str, list[Any]]) -> dict[str, Any]:
        raise NotImplementedError


@dataclass
class Fired:
    """Result of a successful callback: what was consumed and emitted."""

    k: int
    consumed: dict[str, list[Envelope]]
    outputs: dict[str, Envelope] = field(default_factory=dict)


class NodeRuntime:
    """Live protocol state of one node.

    All buffer mutation and fire evaluation happens under ``self.cond``;
    the user callback itself runs outside the lock so distinct nodes can
    execute truly in parallel and arrivals during a callback are simply
    buffered for the next evaluation.
    """

    def __init__(
        self,
        spec: NodeSpec,
        logic: NodeLogic,
        outputs: dict[str, ChannelEndpoint] | None = None,
        fault_handler: Callable[[EpisodeFault], None] | None = None,
    ):
        self.spec = spec
        self.logic = logic
        self.outputs = dict(outputs or {})
        unknown = set(self.outputs) - set(spec.outputs)
        if unknown:
            raise ConfigurationError(f"node {spec.name!r}: unknown output ports {sorted(unknown)}")
        self.fault_handler = fault_handler

        self.cond = threading.Condition()
        self.phase = "resetting"
        self.pending = False
        self.k = 0
        self.buffers: dict[str, deque[Envelope]] = {c.name: deque() for c in spec.inputs}
        self.windows: dict[str, deque[Any]] = {
            c.name: deque(maxlen=c.window) for c in spec.inputs
        }
        self._last_seq: dict[str, int] = {c.name: -1 for c in spec.inputs}
        self._delta_cache: dict[str, tuple[int, int]] = {}
        self._channels = {c.name: c for c in spec.inputs}
        self.consumed_total: dict[str, int] = {c.name: 0 for c in spec.inputs}
        self.fires = 0
        self.fault: EpisodeFault | None = None
        # Measurement hooks: called as hook(k, sim_time, wall_time) after
        # each callback, outside the node lock.
        self.fire_hooks: list[Callable[[int, float, float], None]] = []

    # -- simulated-time helpers -------------------------------------------

    @property
    def period(self) -> Fraction:
        return self.spec.rate.period

    def sim_time(self, k: int) -> float:
        return float(k * self.period)

    # -- message intake ----------------------------------------------------

    def on_message(self, channel: str, env: Envelope) -> None:
        """Buffer an arrival and wake the event loop (edge-triggered)."""
        problem = None
        with self.cond:
            if self.phase == "stopped":
                return
            if channel not in self.buffers:
                problem = f"message on unknown channel {channel!r}"
            else:
                expected = self._last_seq[channel] + 1
                if env.seq != expected:
                    problem = (
                        f"channel {channel!r} violated order/loss contract: "
                        f"got seq {env.seq}, expected {expected}"
                    )
            if problem is None:
                self._last_seq[channel] = env.seq
                buf = self.buffers[channel]
                buf.append(env)
                if len(buf) == HIGH_WATER_MARK:
                    log.warning(
                        "node %s channel %s buffered %d messages",
                        self.spec.name,
                        channel,
                        len(buf),
                    )
                self.pending = True
                self.cond.notify_all()
        if problem is not None:
            self._fail(problem)
            raise TransportContractError(f"node {self.spec.name!r}: {problem}")

    # -- firing ------------------------------------------------------------

    def _expected(self, channel: ChannelSpec) -> int:
        cached = self._delta_cache.get(channel.name)
        if cached is not None and cached[0] == self.k:
            return cached[1]
        delta = expected_count(self.k, channel.timing)
        self._delta_cache[channel.name] = (self.k, delta)
        return delta

    def try_fire(self) -> Fired | None:
        """Run one gate-evaluate-fire cycle; None means still waiting.

        Pops exactly the expected number of oldest messages from every
        input buffer, runs the callback with the updated windows, and
        publishes one envelope per output port stamped with this
        callback's simulated time.
        """
        with self.cond:
            if self.phase != "running":
                return None
            deltas = {c.name: self._expected(c) for c in self.spec.inputs}
            if any(len(self.buffers[name]) < d for name, d in deltas.items()):
                return None
            consumed: dict[str, list[Envelope]] = {}
            inputs: dict[str, list[Any]] = {}
            for chan in self.spec.inputs:
                taken = [self.buffers[chan.name].popleft() for _ in range(deltas[chan.name])]
                consumed[chan.name] = taken
                self.consumed_total[chan.name] += len(taken)
                self.windows[chan.name].extend(e.payload for e in taken)
                inputs[chan.name] = self._window_view(chan)
            fire_k = self.k
            self.k += 1
            self.fires += 1

        try:
            payloads = self.logic.callback(fire_k, inputs)
        except Exception as exc:  # noqa: BLE001 - converted into a structured fault
            raise self._fail(f"callback {fire_k} raised {exc!r}", cause=exc)

        result = Fired(fire_k, consumed)
        if payloads is None:
            payloads = {}
        if set(payloads) != set(self.spec.outputs):
            raise self._fail(
                f"callback {fire_k} returned ports {sorted(payloads)}, "
                f"declared {sorted(self.spec.outputs)}"
            )
        stamp = self.sim_time(fire_k)
        for port in self.spec.outputs:
            endpoint = self.outputs.get(port)
            if endpoint is not None:
                result.outputs[port] = endpoint.publish(payloads[port], stamp)
        wall = time.monotonic()
        for hook in self.fire_hooks:
            hook(fire_k, stamp, wall)
        return result

    def _window_view(self, chan: ChannelSpec) -> list[Any]:
        msgs = list(self.windows[chan.name])
        if not msgs:
            if chan.default is None:
                return []
            return [chan.default] * chan.window
        if len(msgs) < chan.window:
            msgs = [msgs[0]] * (chan.window - len(msgs)) + msgs
        return msgs

    # -- lifecycle ---------------------------------------------------------

    def reset_node(self, values: dict[str, Any] | None = None) -> None:
        """Fresh episode state: index 0, empty buffers, user reset hook."""
        values = dict(values or {})
        unknown = set(values) - set(self.spec.states)
        if unknown:
            raise ConfigurationError(
                f"node {self.spec.name!r}: unknown state keys {sorted(unknown)}"
            )
        with self.cond:
            self.k = 0
            self.fires = 0
            for name in self.buffers:
                self.buffers[name].clear()
                self.windows[name].clear()
                self._last_seq[name] = -1
                self.consumed_total[name] = 0
            self._delta_cache.clear()
            self.fault = None
            self.logic.reset(values)
            self.phase = "running"
            self.pending = True
            self.cond.notify_all()

    def stop(self) -> None:
        with self.cond:
            self.phase = "stopped"
            self.cond.notify_all()

    def wait_for_k(self, k: int, timeout: float) -> bool:
        """Block until this node's callback index reaches ``k``."""
        deadline = time.monotonic() + timeout
        with self.cond:
            while self.k < k:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or self.phase == "stopped":
                    return self.k >= k
                self.cond.wait(timeout=min(remaining, 0.2))
            return True

    # -- faults -------------------------------------------------------------

    def _fail(self, message: str, cause: BaseException | None = None) -> EpisodeFault:
        fault = EpisodeFault(self.spec.name, message, cause)
        with self.cond:
            self.phase = "stopped"
            self.fault = fault
            self.cond.notify_all()
        if self.fault_handler is not None:
            self.fault_handler(fault)
        return fault

class NodeLoop:
    """The event-loop execution unit driving one NodeRuntime."""

    def __init__(self, runtime: NodeRuntime):
        self.runtime = runtime
        self.thread = threading.Thread(
            target=self._run, name=f"loop-{runtime.spec.name}", daemon=True
        )

    def start(self) -> None:
        self.thread.start()

    def join(self, timeout: float | None = None) -> None:
        self.thread.join(timeout=timeout)

    def _run(self) -> None:
        rt = self.runtime
        while True:
            with rt.cond:
                while rt.phase == "running" and not rt.pending:
                    rt.cond.wait()
                if rt.phase != "running":
                    return
                rt.pending = False
            try:
                fired = rt.try_fire()
            except (EpisodeFault, TransportContractError):
                return
            if fired is not None:
                with rt.cond:
                    rt.pending = True


