"""Transport-layer tests: channels, parameter store, throttling."""

import threading
import time

import pytest

from ratesync.errors import ConfigurationError, ParameterNotFound, TransportContractError, TypedAccessError
from ratesync.transport import (
    ChannelEndpoint,
    ClockMode,
    DeliveryScheduler,
    ParameterStore,
    Throttle,
)


class Collector:
    def __init__(self):
        self.seqs = []
        self.wall_times = []

    def __call__(self, env):
        self.seqs.append(env.seq)
        self.wall_times.append(time.monotonic())


class TestChannelEndpoint:
    def test_fan_out_preserves_order(self):
        ep = ChannelEndpoint("prod.out")
        a, b = Collector(), Collector()
        ep.subscribe(a)
        ep.subscribe(b)
        for i in range(3):
            ep.publish(payload=i)
        assert a.seqs == [0, 1, 2]
        assert b.seqs == [0, 1, 2]

    def test_sync_mode_delivers_immediately_despite_delay(self):
        # The delay is honored by count gating, not by withholding delivery.
        ep = ChannelEndpoint("prod.out", delay=0.1, clock=ClockMode("synchronized", 0))
        got = Collector()
        ep.subscribe(got)
        t0 = time.monotonic()
        ep.publish(payload="x", sim_time_sent=0.25)
        assert got.seqs == [0]
        assert time.monotonic() - t0 < 0.05

    def test_async_mode_delays_delivery_by_scaled_wall_time(self):
        sched = DeliveryScheduler()
        try:
            ep = ChannelEndpoint(
                "prod.out",
                delay=0.1,
                clock=ClockMode("asynchronous", 1.0),
                scheduler=sched,
            )
            got = Collector()
            ep.subscribe(got)
            t0 = time.monotonic()
            ep.publish(payload="x")
            deadline = t0 + 2.0
            while not got.seqs and time.monotonic() < deadline:
                time.sleep(0.005)
            assert got.seqs == [0]
            elapsed = got.wall_times[0] - t0
            assert 0.05 < elapsed < 0.5
        finally:
            sched.stop()

    def test_publish_after_close_faults(self):
        ep = ChannelEndpoint("prod.out")
        ep.close()
        with pytest.raises(TransportContractError):
            ep.publish(payload=1)

    def test_async_mode_requires_positive_rtf(self):
        with pytest.raises(ConfigurationError):
            ClockMode("asynchronous", 0)


class TestThrottle:
    def test_unlimited_factor_adds_no_latency(self):
        th = Throttle(ClockMode("synchronized", 0))
        t0 = time.monotonic()
        for i in range(100):
            th.throttle(i * 10.0)
        assert time.monotonic() - t0 < 0.05

    def test_real_time_factor_one(self):
        th = Throttle(ClockMode("synchronized", 1.0))
        t0 = time.monotonic()
        th.throttle(1.0)
        assert time.monotonic() - t0 >= 0.99

    def test_real_time_factor_five(self):
        th = Throttle(ClockMode("synchronized", 5.0))
        t0 = time.monotonic()
        th.throttle(1.0)
        elapsed = time.monotonic() - t0
        assert elapsed >= 0.18


class TestParameterStore:
    def test_set_then_get(self):
        store = ParameterStore()
        store.set("pendulum/mass", 0.033)
        assert store.get("pendulum/mass") == 0.033

    def test_absent_key(self):
        store = ParameterStore()
        with pytest.raises(ParameterNotFound):
            store.get("pendulum/mass")

    def test_typed_access(self):
        store = ParameterStore()
        store.set("pendulum/mass", 0.033)
        assert store.get("pendulum/mass", expected_type=float) == 0.033
        with pytest.raises(TypedAccessError):
            store.get("pendulum/mass", expected_type=str)

    def test_malformed_key(self):
        store = ParameterStore()
        with pytest.raises(ConfigurationError):
            store.set("/leading", 1)

    def test_concurrent_writers_observe_one_total_order(self):
        store = ParameterStore()
        writes_per_thread = 500

        def writer(tag):
            for i in range(writes_per_thread):
                store.set("shared/key", (tag, i))

        readers_saw = []

        def reader():
            seen = []
            for _ in range(1000):
                try:
                    seen.append(store.get_versioned("shared/key"))
                except ParameterNotFound:
                    pass
            readers_saw.append(seen)

        threads = [threading.Thread(target=writer, args=(t,)) for t in range(2)]
        threads += [threading.Thread(target=reader) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        _, final_version = store.get_versioned("shared/key")
        assert final_version == 2 * writes_per_thread
        # A version uniquely determines a value across all observers.
        version_to_value = {}
        for seen in readers_saw:
            for value, version in seen:
                assert version_to_value.setdefault(version, value) == value
            versions = [v for _, v in seen]
            assert versions == sorted(versions)
