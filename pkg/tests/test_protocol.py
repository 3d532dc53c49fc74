"""Wire protocol tests: frame layout vectors, codec fuzzing, alignment,
and the lock-step cursor discipline under injected faults."""

import hashlib
import socket
import struct
import threading

import numpy as np
import pytest

from fedsplit.errors import ProtocolError
from fedsplit.protocol import (
    MSG_ACT,
    MSG_ERROR,
    MSG_GRAD,
    MSG_HELLO,
    MSG_TERM,
    MESSAGE_NAMES,
    Connection,
    EvalRequest,
    Hello,
    Schedule,
    TensorPayload,
    align,
    decode_error,
    decode_frame,
    encode_error,
    encode_frame,
    expect_tensor,
    hash_id,
)
from fedsplit.rng import SplitMix64


class TestFrameLayout:
    def test_term_frame_is_13_bytes(self):
        frame = encode_frame(MSG_TERM, b"")
        assert len(frame) == 13
        assert frame[:4] == b"CFL1"
        assert frame[4] == 0x08
        assert frame[5:] == b"\x00" * 8

    def test_act_payload_of_1x2_tensor_is_24_bytes(self):
        payload = TensorPayload(0, 0, np.array([[1.0, 2.0]], dtype=np.float32)).encode()
        assert len(payload) == 4 + 4 + 4 + 4 + 8
        decoded = TensorPayload.decode(payload)
        assert np.array_equal(decoded.values, [[1.0, 2.0]])

    def test_bad_magic_rejected(self):
        frame = bytearray(encode_frame(MSG_TERM, b""))
        frame[0] = ord("X")
        with pytest.raises(ProtocolError, match="magic"):
            decode_frame(bytes(frame))

    def test_truncated_frame_rejected(self):
        frame = encode_frame(MSG_ACT, b"\x01" * 24)
        with pytest.raises(ProtocolError):
            decode_frame(frame[:-3])

    def test_length_overflow_rejected(self):
        header = struct.pack("<4sBQ", b"CFL1", MSG_ACT, 1 << 40)
        with pytest.raises(ProtocolError, match="limit"):
            decode_frame(header)

    def test_unknown_type_rejected(self):
        header = struct.pack("<4sBQ", b"CFL1", 42, 0)
        with pytest.raises(ProtocolError, match="unknown"):
            decode_frame(header)


class TestCodecFuzz:
    def test_ten_thousand_random_frames_round_trip(self):
        rng = SplitMix64(2718)
        for _ in range(10_000):
            msg_type = rng.next_below(10)
            payload = rng.next_bytes(rng.next_below(64))
            decoded_type, decoded_payload = decode_frame(encode_frame(msg_type, payload))
            assert decoded_type == msg_type
            assert decoded_payload == payload

    def test_tensor_payload_round_trip_preserves_every_f32_bit_pattern(self):
        specials = np.array([[0.0, -0.0, np.inf, -np.inf],
                             [np.nan, 1e-45, -1e-45, 3.4e38]], dtype=np.float32)
        decoded = TensorPayload.decode(TensorPayload(3, 4, specials).encode())
        assert decoded.values.tobytes() == specials.tobytes()
        assert (decoded.epoch, decoded.batch_index) == (3, 4)

    def test_typed_payload_round_trips(self):
        rng = SplitMix64(31337)
        for _ in range(200):
            hello = Hello(config_digest=rng.next_bytes(32), salt=rng.next_bytes(16),
                          shared_seed=rng.next_u64())
            assert Hello.decode(hello.encode()) == hello
            short = Hello(config_digest=rng.next_bytes(32))
            assert Hello.decode(short.encode()) == short
            sched = Schedule(epoch=rng.next_below(100),
                             train_digests=tuple(rng.next_bytes(32)
                                                 for _ in range(rng.next_below(5))))
            assert Schedule.decode(sched.encode()) == sched
            req = EvalRequest(epoch=rng.next_below(10), batch_index=rng.next_below(10),
                              digests=tuple(rng.next_bytes(32)
                                            for _ in range(1 + rng.next_below(4))))
            assert EvalRequest.decode(req.encode()) == req

    def test_error_payload_round_trip(self):
        code, message = decode_error(encode_error(3, "cursor (1,2) != (1,1)"))
        assert code == 3 and "cursor" in message


class TestHashAlignment:
    def test_deterministic(self):
        assert hash_id(b"s" * 16, "abc") == hash_id(b"s" * 16, "abc")

    def test_sha256_empty_reference_vector(self):
        # published SHA-256 vector, checked against the stdlib implementation
        assert hashlib.sha256(b"").hexdigest() == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
        assert hash_id(b"", "") == hashlib.sha256(b"\x00").digest()

    def test_salt_changes_digest(self):
        assert hash_id(b"a" * 16, "id1") != hash_id(b"b" * 16, "id1")

    def test_intersection(self):
        salt = b"z" * 16
        remote = [hash_id(salt, x) for x in ("b", "c", "d")]
        result = align(["a", "b", "c"], remote, salt)
        assert len(result) == 2
        assert {result.local_id(d) for d in result.ordered_digests} == {"b", "c"}
        assert result.ordered_digests == sorted(result.ordered_digests)

    def test_disjoint_sets_abort(self):
        salt = b"z" * 16
        with pytest.raises(ProtocolError, match="overlap"):
            align(["a"], [hash_id(salt, "b")], salt)

    def test_both_endpoints_derive_identical_ordering(self):
        salt = b"q" * 16
        ids_a = [f"s{i}" for i in range(10)]
        ids_b = [f"s{i}" for i in range(5, 15)]
        a_view = align(ids_a, [hash_id(salt, x) for x in ids_b], salt)
        b_view = align(ids_b, [hash_id(salt, x) for x in ids_a], salt)
        assert b"".join(a_view.ordered_digests) == b"".join(b_view.ordered_digests)


def conn_pair(timeout=5.0, recorder_a=None, recorder_b=None):
    sa, sb = socket.socketpair()
    return (Connection(sa, timeout=timeout, recorder=recorder_a),
            Connection(sb, timeout=timeout, recorder=recorder_b))


class TestLockstep:
    def test_two_batch_epoch_trace(self):
        """The only legal order is ACT(e,b) then GRAD(e,b), batch by batch."""
        conn_a, conn_b = conn_pair()
        trace = []

        def party_b():
            for b in range(2):
                conn_b.send(MSG_ACT, TensorPayload(
                    0, b, np.ones((2, 3), dtype=np.float32)).encode())
                grad = expect_tensor(conn_b, MSG_GRAD, 0, b)
                trace.append(("GRAD", 0, b, grad.shape))

        thread = threading.Thread(target=party_b)
        thread.start()
        for b in range(2):
            act = expect_tensor(conn_a, MSG_ACT, 0, b)
            trace.append(("ACT", 0, b, act.shape))
            conn_a.send(MSG_GRAD, TensorPayload(0, b, np.zeros_like(act)).encode())
        thread.join()
        acts = [t for t in trace if t[0] == "ACT"]
        assert [(t[1], t[2]) for t in acts] == [(0, 0), (0, 1)]

    def test_out_of_order_cursor_rejected(self):
        conn_a, conn_b = conn_pair()
        conn_b.send(MSG_ACT, TensorPayload(0, 1, np.ones((1, 1), dtype=np.float32)).encode())
        with pytest.raises(ProtocolError, match="out-of-order"):
            expect_tensor(conn_a, MSG_ACT, 0, 0)
        # the offender got an ERROR frame back
        msg_type, payload = conn_b.recv()
        assert msg_type == MSG_ERROR
        assert b"cursor" in payload

    def test_duplicate_cursor_rejected(self):
        conn_a, conn_b = conn_pair()
        payload = TensorPayload(0, 0, np.ones((1, 1), dtype=np.float32)).encode()
        conn_b.send(MSG_ACT, payload)
        expect_tensor(conn_a, MSG_ACT, 0, 0)
        conn_b.send(MSG_ACT, payload)  # duplicate of a consumed cursor
        with pytest.raises(ProtocolError, match="out-of-order"):
            expect_tensor(conn_a, MSG_ACT, 0, 1)

    def test_grad_before_act_rejected(self):
        conn_a, conn_b = conn_pair()
        conn_b.send(MSG_GRAD, TensorPayload(0, 0, np.ones((1, 1), dtype=np.float32)).encode())
        with pytest.raises(ProtocolError, match="unexpected GRAD"):
            conn_a.expect(MSG_ACT)

    def test_truncated_frame_aborts(self):
        conn_a, conn_b = conn_pair()
        conn_b._sock.sendall(encode_frame(MSG_ACT, b"\x00" * 24)[:10])
        conn_b._sock.close()
        with pytest.raises(ProtocolError, match="closed mid-frame"):
            conn_a.recv()

    def test_unknown_type_triggers_error_reply_and_close(self):
        conn_a, conn_b = conn_pair()
        conn_b._sock.sendall(struct.pack("<4sBQ", b"CFL1", 99, 0))
        with pytest.raises(ProtocolError, match="unknown message type"):
            conn_a.recv()
        msg_type, payload = conn_b.recv()
        assert msg_type == MSG_ERROR

    def test_timeout_aborts(self):
        conn_a, conn_b = conn_pair(timeout=0.2)
        with pytest.raises(ProtocolError, match="timed out"):
            conn_a.recv()

    def test_peer_error_is_surfaced(self):
        conn_a, conn_b = conn_pair()
        conn_b.send(MSG_ERROR, encode_error(5, "boom"))
        with pytest.raises(ProtocolError, match="peer error 5: boom"):
            conn_a.expect(MSG_ACT)


class TestStateMachine:
    """Every message type that is invalid for a waiting state is refused."""

    @pytest.mark.parametrize("bad_type", sorted(set(MESSAGE_NAMES) - {MSG_HELLO, MSG_ERROR}))
    def test_handshake_accepts_only_hello(self, bad_type):
        conn_a, conn_b = conn_pair()
        conn_b.send(bad_type, b"")
        with pytest.raises(ProtocolError, match="expected HELLO"):
            conn_a.expect(MSG_HELLO)
        msg_type, _ = conn_b.recv()
        assert msg_type == MSG_ERROR
