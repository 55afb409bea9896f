import socket
import threading

import pytest

from fds.core import Term
from fds.transport import (
    CodecError,
    Scheduler,
    SimNet,
    SimNetConfig,
    SocketTransport,
    Trace,
    decode_envelope,
    encode_envelope,
    make_envelope,
    read_frame,
    write_frame,
)


def _env(**overrides):
    kwargs = dict(kind="lgi-message", sender_name="a", sender_division="D1",
                  sender_path=("h1", "h2"), target="b",
                  payload=Term("m", (1, "x")), sent_at=7)
    kwargs.update(overrides)
    return make_envelope(
        kwargs["kind"], kwargs["sender_name"], kwargs["sender_division"],
        kwargs["sender_path"], kwargs["target"], kwargs["payload"],
        kwargs["sent_at"])


class TestCodec:
    def test_round_trip(self):
        env = _env()
        assert decode_envelope(encode_envelope(env)) == env

    def test_sender_law_is_path_tail(self):
        assert _env().sender_law == "h2"

    def test_unknown_kind_rejected(self):
        with pytest.raises(CodecError):
            _env(kind="smuggle")

    def test_empty_path_rejected(self):
        with pytest.raises(CodecError):
            _env(sender_path=())

    def test_missing_field_rejected(self):
        data = encode_envelope(_env())
        trimmed = b"\n".join(line for line in data.splitlines()
                             if not line.startswith(b"target=")) + b"\n"
        with pytest.raises(CodecError, match="fields"):
            decode_envelope(trimmed)

    def test_tampered_sender_law_rejected(self):
        data = encode_envelope(_env()).replace(b'senderLaw="h2"', b'senderLaw="h9"')
        with pytest.raises(CodecError, match="inconsistent-envelope"):
            decode_envelope(data)

    def test_non_json_value_rejected(self):
        data = encode_envelope(_env()).replace(b'"lgi-message"', b"not-json")
        with pytest.raises(CodecError):
            decode_envelope(data)


class TestScheduler:
    def test_time_order_with_stable_ties(self):
        sched = Scheduler()
        out = []
        sched.schedule(5, lambda: out.append("b"))
        sched.schedule(3, lambda: out.append("a"))
        sched.schedule(5, lambda: out.append("c"))
        sched.run()
        assert out == ["a", "b", "c"]

    def test_tickers_run_on_time_advance_before_due_items(self):
        sched = Scheduler()
        out = []
        sched.add_ticker(lambda now: out.append(("tick", now)))
        sched.schedule(2, lambda: out.append(("item", sched.now)))
        sched.run()
        assert out == [("tick", 2), ("item", 2)]

    def test_run_until_advances_clock_to_bound(self):
        sched = Scheduler()
        sched.schedule(100, lambda: None)
        sched.run(until=10)
        assert sched.now == 10


class TestSimNet:
    def _net(self, **cfg):
        sched = Scheduler()
        trace = Trace(lambda: sched.now)
        net = SimNet(sched, SimNetConfig(**cfg), trace)
        return sched, trace, net

    def test_seeded_delivery_is_reproducible(self):
        def run():
            sched, trace, net = self._net(seed=5, latency=(1, 9))
            got = []
            net.register("b", lambda env, seq: got.append((sched.now, env.payload)))
            for i in range(20):
                net.send(_env(payload=Term("m", (i,)), sent_at=i))
            sched.run()
            return got

        assert run() == run()

    def test_fifo_per_pair_preserves_order(self):
        sched, trace, net = self._net(seed=1, latency=(1, 20))
        got = []
        net.register("b", lambda env, seq: got.append(env.payload_term().args[0]))
        for i in range(30):
            net.send(_env(payload=Term("m", (i,)), sent_at=0))
        sched.run()
        assert got == list(range(30))

    def test_unknown_target_dead_letters(self):
        sched, trace, net = self._net()
        assert net.send(_env(target="ghost")) is None
        assert trace.of_type("dead-letter")

    def test_firewall_blocks_rogue_channel(self):
        sched, trace, net = self._net(firewall=True)
        hits = []

        class A:
            def receive_rogue(self, s, p):
                hits.append(p)

        net.register_actor("b", A())
        assert net.rogue_send("x", "b", Term("covert")) is False
        assert hits == []
        assert trace.of_type("rogue-blocked")

    def test_open_rogue_channel_reaches_actor(self):
        sched, trace, net = self._net(firewall=False)
        hits = []

        class A:
            def receive_rogue(self, s, p):
                hits.append((s, p))

        net.register_actor("b", A())
        assert net.rogue_send("x", "b", Term("covert")) is True
        assert hits == [("x", Term("covert"))]
        assert trace.of_type("rogue")


class TestSocketTransport:
    def test_frames_round_trip_over_loopback(self):
        received = []
        done = threading.Event()

        def on_env(env):
            received.append(env)
            if len(received) == 3:
                done.set()

        transport = SocketTransport("127.0.0.1", 0, on_env)
        try:
            conn = socket.create_connection(transport.address)
            sent = [_env(payload=Term("m", (i,))) for i in range(3)]
            for env in sent:
                write_frame(conn, encode_envelope(env))
            assert done.wait(timeout=5.0)
            conn.close()
            assert received == sent
        finally:
            transport.close()

    def test_read_frame_reassembles_partial_writes(self):
        a, b = socket.socketpair()
        try:
            data = encode_envelope(_env())
            frame = len(data).to_bytes(4, "big") + data
            a.sendall(frame[:5])
            a.sendall(frame[5:])
            assert read_frame(b) == data
        finally:
            a.close()
            b.close()
