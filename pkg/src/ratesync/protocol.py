"""Expected-message-count protocol arithmetic.

A consumer node firing callbacks at rate ``f_n`` receives messages from a
producer at rate ``f_i``, shifted by a simulated delay ``tau``.  The
functions here answer one question: how many messages must the consumer
hold on that channel before callback ``k`` may fire?

Two independent mechanizations are provided:

* :func:`expected_count_acyclic` / :func:`expected_count_cyclic` -- the
  closed-form floor arithmetic used by the live runtime, evaluated on an
  exact rational grid so results are reproducible bit-for-bit.
* :func:`oracle_expected_schedule` -- an explicit event timeline that
  sorts emission/arrival instants on an integer tick grid and counts
  them per callback window.  It shares no floor expressions with the
  closed forms and exists to validate them.

All values are snapped to rationals with bounded denominator (default
one microsecond of simulated time) before any arithmetic happens, so a
message landing exactly on a callback instant is resolved the same way
everywhere: closed lower bound for ordinary channels, postponed by one
callback for cycle-breaking channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "TICK_RESOLUTION",
    "Rate",
    "ChannelTiming",
    "expected_count_acyclic",
    "expected_count_cyclic",
    "oracle_expected_schedule",
]

# Denominator bound used when snapping user-supplied rates and delays to
# exact rationals: 10**6 corresponds to a one-microsecond grid.
TICK_RESOLUTION = 10**6

# Callback indices are nominally 64-bit; anything beyond is a caller bug.
MAX_CALLBACK_INDEX = 2**64 - 1


def snap(value: float | int | Fraction, resolution: int = TICK_RESOLUTION) -> Fraction:
    """Return ``value`` as an exact Fraction with denominator <= resolution.

    Recovers intended rationals from binary floats (0.1 -> 1/10) so that
    boundary coincidences behave as written, not as rounded.
    """
    frac = Fraction(value)
    if frac.denominator > resolution:
        frac = frac.limit_denominator(resolution)
    return frac


@dataclass(frozen=True)
class Rate:
    """A strictly positive callback/message frequency in Hz."""

    hz: Fraction

    def __init__(self, hz: float | int | Fraction):
        if isinstance(hz, float) and not math.isfinite(hz):
            raise ValueError(f"rate must be finite, got {hz!r}")
        snapped = snap(hz)
        if snapped <= 0:
            raise ValueError(f"rate must be positive, got {hz!r}")
        object.__setattr__(self, "hz", snapped)

    @property
    def period(self) -> Fraction:
        return 1 / self.hz

    def __float__(self) -> float:
        return float(self.hz)


@dataclass(frozen=True)
class ChannelTiming:
    """Timing contract of one directed channel as seen by its consumer."""

    consumer_rate: Rate
    producer_rate: Rate
    delay: Fraction = Fraction(0)
    cyclic: bool = False

    def __post_init__(self):
        if isinstance(self.delay, float) and not math.isfinite(self.delay):
            raise ValueError(f"delay must be finite, got {self.delay!r}")
        snapped = snap(self.delay)
        if snapped < 0:
            raise ValueError(f"delay must be non-negative, got {self.delay!r}")
        object.__setattr__(self, "delay", snapped)

    def with_delay(self, delay: float | Fraction) -> "ChannelTiming":
        return ChannelTiming(self.consumer_rate, self.producer_rate, delay, self.cyclic)


def timing(
    consumer_hz: float | Fraction,
    producer_hz: float | Fraction,
    delay: float | Fraction = 0,
    cyclic: bool = False,
) -> ChannelTiming:
    """Shorthand constructor used heavily by tests and the runtime."""
    return ChannelTiming(Rate(consumer_hz), Rate(producer_hz), snap(delay), cyclic)


def _check_index(k: int) -> None:
    if not isinstance(k, int) or isinstance(k, bool):
        raise TypeError(f"callback index must be an int, got {type(k).__name__}")
    if k < 0:
        raise ValueError(f"callback index must be non-negative, got {k}")
    if k > MAX_CALLBACK_INDEX:
        raise ValueError(f"callback index {k} exceeds the 64-bit contract")


def expected_count_acyclic(k: int, timing: ChannelTiming) -> int:
    """Messages to receive between callbacks ``k-1`` and ``k`` on an ordinary channel.

    Callback 0 always expects exactly one message regardless of delay;
    later callbacks follow the floor schedule of producer emissions with a
    correction term that holds messages back while the delay keeps them
    in flight.  All divisions are exact floor-toward-negative-infinity on
    rationals, so negative numerators (large delays, small ``k``) are safe.
    """
    _check_index(k)
    if timing.cyclic:
        raise ValueError("expected_count_acyclic called on a cyclic channel")
    if k == 0:
        return 1
    fn = timing.consumer_rate.hz
    fi = timing.producer_rate.hz
    shift = fn * fi * timing.delay
    n_prev = (fi * (k - 1) - shift) // fn
    n_curr = (fi * k - shift) // fn
    delta = n_curr - n_prev
    c = (fi * k - fn * delta - shift) // fn
    return delta - min(delta, max(0, -c))


def expected_count_cyclic(k: int, timing: ChannelTiming, epsilon: float = 1e-9) -> int:
    """Messages to receive between callbacks ``k-1`` and ``k`` on a cycle-breaking channel.

    Callback 0 expects zero messages so one node in every dependency
    cycle can fire first; later callbacks evaluate the schedule at an
    index shifted by the rate ratio, postponing a coincident emission to
    the next callback.  On the exact rational grid the fudge term only
    has to be positive; its magnitude cannot change the result.
    """
    _check_index(k)
    if not timing.cyclic:
        raise ValueError("expected_count_cyclic called on a non-cyclic channel")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    if k == 0:
        return 0
    fn = timing.consumer_rate.hz
    fi = timing.producer_rate.hz
    if fn > fi:
        # Exact form of floor((fn - eps)/fi) for any 0 < eps < grid spacing.
        ratio = fn / fi
        offset = ratio.numerator // ratio.denominator
        if ratio.denominator == 1:
            offset -= 1
    else:
        offset = -1
    shift = fn * fi * timing.delay
    n_prev = (fi * (k - 1 + offset) - shift) // fn
    n_curr = (fi * (k + offset) - shift) // fn
    delta = n_curr - n_prev
    c = (fi * k - fn * (delta - 1) - shift) // fn
    return delta - min(delta, max(0, -c))


def expected_count(k: int, timing: ChannelTiming, epsilon: float = 1e-9) -> int:
    """Dispatch on the channel's cyclic flag."""
    if timing.cyclic:
        return expected_count_cyclic(k, timing, epsilon)
    return expected_count_acyclic(k, timing)


def _common_tick(timing: ChannelTiming) -> Fraction:
    """A tick length that measures both periods and the delay in whole ticks."""
    values = [timing.consumer_rate.period, timing.producer_rate.period]
    if timing.delay:
        values.append(timing.delay)
    num = math.gcd(*(v.numerator for v in values))
    den = math.lcm(*(v.denominator for v in values))
    return Fraction(num, den)


def oracle_expected_schedule(timing: ChannelTiming, k_max: int) -> list[int]:
    """Per-callback message deltas derived from an explicit event timeline.

    Emission ``m`` leaves the producer at ``m * period_i`` and becomes
    consumable at ``m * period_i + delay``; the consumer's callback ``k``
    happens at ``k * period_n``.  Events are laid out on an integer tick
    grid and counted with plain comparisons -- no reuse of the closed-form
    floor expressions.

    Ordinary channels: entry 0 is the forced initial message (emission 0
    is handed to callback 0 no matter when it lands); entry ``k`` counts
    later emissions that became consumable in ``((k-1)*p_n, k*p_n]``.

    Cycle-breaking channels: entry 0 is 0.  Each later callback takes the
    emissions of its postponed schedule window -- the window shifted by
    however many whole consumer periods fit strictly inside one producer
    period (or back by one when the producer is the faster side) -- but
    never more than have physically arrived by the callback instant.
    """
    if not isinstance(k_max, int) or k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max!r}")

    tick = _common_tick(timing)
    p_n = int(timing.consumer_rate.period / tick)
    p_i = int(timing.producer_rate.period / tick)
    d = int(timing.delay / tick)

    callback_times = [k * p_n for k in range(k_max + 1)]
    horizon = callback_times[-1]

    if not timing.cyclic:
        # Arrival instants of emissions 1, 2, ... up to the horizon
        # (emission 0 is pre-consumed by the forced initial count).
        arrivals = []
        t = p_i + d
        while t <= horizon:
            arrivals.append(t)
            t += p_i
        deltas = [1]
        consumed = 0
        for k in range(1, k_max + 1):
            due = 0
            while consumed + due < len(arrivals) and arrivals[consumed + due] <= callback_times[k]:
                due += 1
            deltas.append(due)
            consumed += due
        return deltas

    # Whole consumer periods fitting strictly inside one producer period.
    if p_n < p_i:
        shift = 0
        t = p_n
        while t < p_i:
            shift += 1
            t += p_n
    else:
        shift = -1

    # Real arrivals (emissions m >= 0), for the availability cap.
    arrivals = []
    t = d
    while t <= horizon:
        arrivals.append(t)
        t += p_i

    # Cursor over the arrival lattice extended to emissions before the
    # episode start; positioned at the first slot past the first window's
    # lower edge, then swept forward (the windows tile contiguously).
    slot = d
    first_lo = shift * p_n
    while slot > first_lo:
        slot -= p_i
    while slot <= first_lo:
        slot += p_i

    deltas = [0]
    available = 0
    for k in range(1, k_max + 1):
        window_hi = (k + shift) * p_n
        quota = 0
        while slot <= window_hi:
            quota += 1
            slot += p_i
        while available < len(arrivals) and arrivals[available] <= callback_times[k]:
            available += 1
        deltas.append(min(quota, available))
    return deltas
