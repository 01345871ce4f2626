"""Node-runtime tests: gating, buffering, reset, faults, interleaving."""

import threading
import time

import pytest

from ratesync.errors import ConfigurationError, EpisodeFault, TransportContractError
from ratesync.protocol import Rate, expected_count_acyclic, timing
from ratesync.runtime import ChannelSpec, NodeLoop, NodeLogic, NodeRuntime, NodeSpec
from ratesync.transport import ChannelEndpoint, Envelope


class Recorder(NodeLogic):
    """Emits nothing; records every callback's inputs."""

    def __init__(self):
        self.calls = []

    def callback(self, k, inputs):
        self.calls.append((k, {name: list(win) for name, win in inputs.items()}))
        return {}


def make_node(consumer_hz=10, producer_hz=10, delay=0.0, cyclic=False, window=1,
              default=None, logic=None, outputs=(), **kw):
    spec = NodeSpec(
        name="n",
        rate=Rate(consumer_hz),
        inputs=(
            ChannelSpec("in", timing(consumer_hz, producer_hz, delay, cyclic), window, default),
        ),
        outputs=tuple(outputs),
        **kw,
    )
    rt = NodeRuntime(spec, logic if logic is not None else Recorder())
    rt.reset_node()
    return rt


def feed(rt, channel, payloads, start_seq=0):
    for i, p in enumerate(payloads):
        rt.on_message(channel, Envelope(p, start_seq + i, 0.0))


class TestTryFire:
    def test_waiting_when_buffer_short(self):
        rt = make_node()
        assert rt.try_fire() is None
        assert rt.k == 0

    def test_fires_consuming_oldest_only(self):
        rt = make_node()
        feed(rt, "in", ["a", "b"])
        fired = rt.try_fire()
        assert fired is not None
        assert fired.k == 0
        assert [e.payload for e in fired.consumed["in"]] == ["a"]
        assert rt.k == 1
        assert len(rt.buffers["in"]) == 1

    def test_sensor_burst_consumed_on_second_callback(self):
        # 60 Hz producer into a 20 Hz consumer: callback 0 takes the forced
        # single message, callback 1 takes the next three.
        rt = make_node(consumer_hz=20, producer_hz=60)
        feed(rt, "in", list(range(4)))
        first = rt.try_fire()
        assert [e.payload for e in first.consumed["in"]] == [0]
        second = rt.try_fire()
        assert [e.payload for e in second.consumed["in"]] == [1, 2, 3]
        assert rt.try_fire() is None

    def test_cyclic_channel_bootstraps_with_default(self):
        rt = make_node(cyclic=True, default=0.0)
        logic = rt.logic
        fired = rt.try_fire()
        assert fired.k == 0
        assert fired.consumed["in"] == []
        assert logic.calls[0][1]["in"] == [0.0]

    def test_outputs_published_with_sim_timestamp(self):
        class Emitter(NodeLogic):
            def callback(self, k, inputs):
                return {"out": k * 10}

        ep = ChannelEndpoint("n.out")
        got = []
        ep.subscribe(got.append)
        spec = NodeSpec(
            name="n",
            rate=Rate(4),
            inputs=(ChannelSpec("in", timing(4, 4)),),
            outputs=("out",),
        )
        rt = NodeRuntime(spec, Emitter(), outputs={"out": ep})
        rt.reset_node()
        feed(rt, "in", ["x", "y"])
        rt.try_fire()
        rt.try_fire()
        assert [e.payload for e in got] == [0, 10]
        assert [e.seq for e in got] == [0, 1]
        assert [e.sim_time_sent for e in got] == [0.0, 0.25]

    def test_missing_output_port_is_a_fault(self):
        class Bad(NodeLogic):
            def callback(self, k, inputs):
                return {}

        rt = make_node(logic=Bad(), outputs=("out",))
        feed(rt, "in", [1])
        with pytest.raises(EpisodeFault):
            rt.try_fire()
        assert rt.phase == "stopped"

    def test_callback_exception_stops_node_and_propagates(self):
        class Boom(NodeLogic):
            def callback(self, k, inputs):
                raise RuntimeError("boom")

        faults = []
        rt = make_node(logic=Boom())
        rt.fault_handler = faults.append
        feed(rt, "in", [1])
        with pytest.raises(EpisodeFault):
            rt.try_fire()
        assert rt.phase == "stopped"
        assert len(faults) == 1 and "boom" in str(faults[0])


class TestOnMessage:
    def test_in_order_buffering(self):
        rt = make_node()
        feed(rt, "in", ["a", "b", "c"])
        assert [e.payload for e in rt.buffers["in"]] == ["a", "b", "c"]
        assert [e.seq for e in rt.buffers["in"]] == [0, 1, 2]

    def test_sequence_gap_faults(self):
        rt = make_node()
        rt.on_message("in", Envelope("a", 0, 0.0))
        with pytest.raises(TransportContractError):
            rt.on_message("in", Envelope("c", 2, 0.0))
        assert rt.phase == "stopped"

    def test_arrival_during_callback_is_deferred(self):
        release = threading.Event()
        seen = []

        class Slow(NodeLogic):
            def callback(self, k, inputs):
                seen.append((k, list(inputs["in"])))
                if k == 0:
                    release.wait(timeout=2.0)
                return {}

        rt = make_node(logic=Slow())
        loop = NodeLoop(rt)
        loop.start()
        feed(rt, "in", ["first"])
        time.sleep(0.05)  # loop is now inside callback 0
        feed(rt, "in", ["second"], start_seq=1)
        assert len(seen) == 1
        release.set()
        assert rt.wait_for_k(2, timeout=2.0)
        rt.stop()
        loop.join(1.0)
        assert seen == [(0, ["first"]), (1, ["second"])]


class TestReset:
    def test_reset_clears_buffers_and_index(self):
        rt = make_node()
        feed(rt, "in", [1, 2, 3, 4, 5])
        rt.try_fire()
        assert rt.k == 1
        rt.reset_node({})
        assert rt.k == 0
        assert len(rt.buffers["in"]) == 0
        assert rt.phase == "running"

    def test_reset_applies_registered_state(self):
        class WithState(NodeLogic):
            states = {"mass": 0.05}

            def __init__(self):
                self.mass = self.states["mass"]

            def reset(self, values):
                self.mass = values.get("mass", self.states["mass"])

            def callback(self, k, inputs):
                return {}

        logic = WithState()
        rt = make_node(logic=logic, states=("mass",))
        rt.reset_node({"mass": 0.033})
        assert logic.mass == 0.033
        rt.reset_node({})
        assert logic.mass == 0.05

    def test_unknown_state_key_names_offender(self):
        rt = make_node()
        with pytest.raises(ConfigurationError, match="bogus"):
            rt.reset_node({"bogus": 1})


class TestWindows:
    def test_window_left_pads_with_oldest(self):
        rt = make_node(window=3)
        logic = rt.logic
        feed(rt, "in", ["a"])
        rt.try_fire()
        assert logic.calls[0][1]["in"] == ["a", "a", "a"]
        feed(rt, "in", ["b"], start_seq=1)
        rt.try_fire()
        assert logic.calls[1][1]["in"] == ["a", "a", "b"]

    def test_window_keeps_most_recent(self):
        rt = make_node(consumer_hz=20, producer_hz=60, window=2)
        logic = rt.logic
        feed(rt, "in", list(range(4)))
        rt.try_fire()
        rt.try_fire()
        assert logic.calls[1][1]["in"] == [2, 3]


class TestInstrumentation:
    def test_consumption_totals_match_delta_schedule(self):
        rt = make_node(consumer_hz=20, producer_hz=60)
        feed(rt, "in", list(range(10)))
        while rt.try_fire() is not None:
            pass
        tm = timing(20, 60)
        assert rt.consumed_total["in"] == sum(
            expected_count_acyclic(k, tm) for k in range(rt.k)
        )

    def test_no_spurious_fires(self):
        rt = make_node(consumer_hz=10, producer_hz=10)
        assert rt.try_fire() is None
        feed(rt, "in", [1])
        assert rt.try_fire() is not None
        assert rt.try_fire() is None
        assert rt.fires == 1
