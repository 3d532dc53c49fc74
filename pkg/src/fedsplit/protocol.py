"""Wire protocol: framing, payload codecs, sample alignment, and the
lock-step exchange helpers both party runtimes are built on.

Frame layout (normative, see PROTOCOL.md): magic "CFL1", type u8, payload
length u64 LE, payload bytes.  Tensor payloads are raw little-endian float32,
row-major, rows ordered exactly as the agreed batch schedule orders sample
digests.  Nothing but activations, their gradients, digests, and control
data ever crosses the wire.
"""

from __future__ import annotations

import hashlib
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError

MAGIC = b"CFL1"
HEADER = struct.Struct("<4sBQ")
MAX_PAYLOAD = 1 << 30

MSG_HELLO = 0
MSG_ALIGN_REQ = 1
MSG_ALIGN_RESP = 2
MSG_SCHEDULE_ACK = 3
MSG_ACT = 4
MSG_GRAD = 5
MSG_EVAL_REQ = 6
MSG_EVAL_RESP = 7
MSG_TERM = 8
MSG_ERROR = 9

MESSAGE_NAMES = {
    MSG_HELLO: "HELLO", MSG_ALIGN_REQ: "ALIGN_REQ", MSG_ALIGN_RESP: "ALIGN_RESP",
    MSG_SCHEDULE_ACK: "SCHEDULE_ACK", MSG_ACT: "ACT", MSG_GRAD: "GRAD",
    MSG_EVAL_REQ: "EVAL_REQ", MSG_EVAL_RESP: "EVAL_RESP", MSG_TERM: "TERM",
    MSG_ERROR: "ERROR",
}

DIGEST_LEN = 32
DEFAULT_PORT = 7361


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in MESSAGE_NAMES:
        raise ProtocolError(f"unknown message type {msg_type}")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds limit")
    return HEADER.pack(MAGIC, msg_type, len(payload)) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes]:
    """Decode one complete frame; encode/decode round-trip bitwise."""
    if len(buf) < HEADER.size:
        raise ProtocolError("frame shorter than header")
    magic, msg_type, payload_len = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if msg_type not in MESSAGE_NAMES:
        raise ProtocolError(f"unknown message type {msg_type}")
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {payload_len} bytes exceeds limit")
    if len(buf) != HEADER.size + payload_len:
        raise ProtocolError("frame length does not match declared payload length")
    return msg_type, buf[HEADER.size:]


# ---------------------------------------------------------------------------
# payloads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hello:
    config_digest: bytes                 # 32 bytes
    salt: bytes | None = None            # PartyA only, 16 bytes
    shared_seed: int | None = None       # PartyA only

    def encode(self) -> bytes:
        if (self.salt is None) != (self.shared_seed is None):
            raise ProtocolError("salt and shared_seed travel together")
        if self.salt is None:
            return b"\x01" + self.config_digest
        return b"\x00" + self.config_digest + self.salt + struct.pack("<Q", self.shared_seed)

    @staticmethod
    def decode(payload: bytes) -> "Hello":
        if len(payload) < 1 + DIGEST_LEN:
            raise ProtocolError("HELLO payload too short")
        role, digest = payload[0], payload[1:1 + DIGEST_LEN]
        rest = payload[1 + DIGEST_LEN:]
        if role == 0x01:
            if rest:
                raise ProtocolError("unexpected trailing bytes in HELLO")
            return Hello(config_digest=digest)
        if role != 0x00 or len(rest) != 16 + 8:
            raise ProtocolError("malformed HELLO payload")
        (seed,) = struct.unpack("<Q", rest[16:])
        return Hello(config_digest=digest, salt=rest[:16], shared_seed=seed)


def encode_digests(digests: list[bytes]) -> bytes:
    out = [struct.pack("<I", len(digests))]
    for d in digests:
        if len(d) != DIGEST_LEN:
            raise ProtocolError(f"digest must be {DIGEST_LEN} bytes, got {len(d)}")
        out.append(d)
    return b"".join(out)


def decode_digests(payload: bytes, offset: int = 0) -> tuple[list[bytes], int]:
    if len(payload) - offset < 4:
        raise ProtocolError("digest list truncated")
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    end = offset + count * DIGEST_LEN
    if end > len(payload):
        raise ProtocolError("digest list truncated")
    digests = [payload[i:i + DIGEST_LEN] for i in range(offset, end, DIGEST_LEN)]
    return digests, end


@dataclass(frozen=True)
class Schedule:
    epoch: int
    train_digests: tuple[bytes, ...] = ()   # sent once, in the first frame

    def encode(self) -> bytes:
        return struct.pack("<I", self.epoch) + encode_digests(list(self.train_digests))

    @staticmethod
    def decode(payload: bytes) -> "Schedule":
        if len(payload) < 4:
            raise ProtocolError("SCHEDULE_ACK payload too short")
        (epoch,) = struct.unpack_from("<I", payload, 0)
        digests, end = decode_digests(payload, 4)
        if end != len(payload):
            raise ProtocolError("unexpected trailing bytes in SCHEDULE_ACK")
        return Schedule(epoch=epoch, train_digests=tuple(digests))


@dataclass(frozen=True)
class TensorPayload:
    """(epoch, batch) cursor plus a dense float32 matrix."""

    epoch: int
    batch_index: int
    values: np.ndarray   # (rows, cols) float32

    def encode(self) -> bytes:
        v = np.ascontiguousarray(self.values, dtype="<f4")
        if v.ndim != 2:
            raise ProtocolError(f"tensor payload must be rank-2, got {v.ndim}")
        head = struct.pack("<IIII", self.epoch, self.batch_index, v.shape[0], v.shape[1])
        return head + v.tobytes()

    @staticmethod
    def decode(payload: bytes) -> "TensorPayload":
        if len(payload) < 16:
            raise ProtocolError("tensor payload header truncated")
        epoch, batch_index, rows, cols = struct.unpack_from("<IIII", payload, 0)
        body = payload[16:]
        if len(body) != 4 * rows * cols:
            raise ProtocolError(
                f"tensor payload body is {len(body)} bytes, expected {4 * rows * cols}")
        values = np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()
        return TensorPayload(epoch=epoch, batch_index=batch_index, values=values)


@dataclass(frozen=True)
class EvalRequest:
    epoch: int
    batch_index: int
    digests: tuple[bytes, ...]

    def encode(self) -> bytes:
        return struct.pack("<II", self.epoch, self.batch_index) + \
            encode_digests(list(self.digests))

    @staticmethod
    def decode(payload: bytes) -> "EvalRequest":
        if len(payload) < 8:
            raise ProtocolError("EVAL_REQ payload too short")
        epoch, batch_index = struct.unpack_from("<II", payload, 0)
        digests, end = decode_digests(payload, 8)
        if end != len(payload):
            raise ProtocolError("unexpected trailing bytes in EVAL_REQ")
        return EvalRequest(epoch=epoch, batch_index=batch_index, digests=tuple(digests))


def encode_error(code: int, message: str) -> bytes:
    msg = message.encode("utf-8")
    return struct.pack("<H", code) + msg


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError("ERROR payload too short")
    (code,) = struct.unpack_from("<H", payload, 0)
    return code, payload[2:].decode("utf-8", errors="replace")


ERR_CONFIG_MISMATCH = 1
ERR_EMPTY_INTERSECTION = 2
ERR_BAD_CURSOR = 3
ERR_BAD_STATE = 4
ERR_INTERNAL = 5


# ---------------------------------------------------------------------------
# sample alignment
# ---------------------------------------------------------------------------

def hash_id(salt: bytes, sample_id: str) -> bytes:
    """SHA-256(salt || 0x00 || utf8(id)); 32-byte digest."""
    return hashlib.sha256(salt + b"\x00" + sample_id.encode("utf-8")).digest()


@dataclass
class AlignmentSet:
    """The overlap, in canonical ascending-digest order, with the local map."""

    salt: bytes
    ordered_digests: list[bytes]
    local_by_digest: dict[bytes, str]

    def __len__(self) -> int:
        return len(self.ordered_digests)

    def local_id(self, digest: bytes) -> str:
        try:
            return self.local_by_digest[digest]
        except KeyError:
            raise ProtocolError("peer referenced a sample outside the overlap") from None


def digest_ids(local_ids: list[str], salt: bytes) -> dict[bytes, str]:
    return {hash_id(salt, rid): rid for rid in local_ids}


def align(local_ids: list[str], remote_digests: list[bytes], salt: bytes) -> AlignmentSet:
    """Intersect salted digests; abort on an empty overlap."""
    mine = digest_ids(local_ids, salt)
    overlap = sorted(set(mine) & set(remote_digests))
    if not overlap:
        raise ProtocolError("no overlapping samples between the parties")
    return AlignmentSet(salt=salt,
                        ordered_digests=overlap,
                        local_by_digest={d: mine[d] for d in overlap})


def schedule_checksum(shared_seed: int, ordered_digests: list[bytes]) -> bytes:
    h = hashlib.sha256(struct.pack("<Q", shared_seed))
    for d in ordered_digests:
        h.update(d)
    return h.digest()


# ---------------------------------------------------------------------------
# framed connection
# ---------------------------------------------------------------------------

class Connection:
    """One long-lived framed byte stream; blocking reads with a timeout.

    An optional recorder callback sees every frame in both directions; the
    privacy acceptance test uses it to audit payload contents.
    """

    def __init__(self, sock: socket.socket, timeout: float = 60.0, recorder=None):
        self._sock = sock
        self._sock.settimeout(timeout)
        self._recorder = recorder
        self._closed = False

    def send(self, msg_type: int, payload: bytes = b"") -> None:
        if self._closed:
            raise ProtocolError("send on a closed connection")
        frame = encode_frame(msg_type, payload)
        if self._recorder is not None:
            self._recorder("send", msg_type, payload)
        try:
            self._sock.sendall(frame)
        except (OSError, socket.timeout) as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout as exc:
                raise ProtocolError("timed out waiting for peer") from exc
            except OSError as exc:
                raise ProtocolError(f"receive failed: {exc}") from exc
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self) -> tuple[int, bytes]:
        header = self._recv_exact(HEADER.size)
        magic, msg_type, payload_len = HEADER.unpack(header)
        if magic != MAGIC:
            raise ProtocolError(f"bad frame magic {magic!r}")
        if msg_type not in MESSAGE_NAMES:
            # reply then drop the connection, per the framing contract
            self.send_error(ERR_BAD_STATE, f"unknown message type {msg_type}")
            self.close()
            raise ProtocolError(f"unknown message type {msg_type}")
        if payload_len > MAX_PAYLOAD:
            raise ProtocolError(f"declared payload of {payload_len} bytes exceeds limit")
        payload = self._recv_exact(payload_len)
        if self._recorder is not None:
            self._recorder("recv", msg_type, payload)
        return msg_type, payload

    def expect(self, *allowed: int) -> tuple[int, bytes]:
        """Receive one frame that must be of an allowed type.

        A peer ERROR is surfaced as-is; any other unexpected type gets an
        ERROR reply and the connection is closed.
        """
        msg_type, payload = self.recv()
        if msg_type == MSG_ERROR:
            code, message = decode_error(payload)
            self.close()
            raise ProtocolError(f"peer error {code}: {message}")
        if msg_type not in allowed:
            names = "/".join(MESSAGE_NAMES[t] for t in allowed)
            self.send_error(ERR_BAD_STATE,
                            f"got {MESSAGE_NAMES[msg_type]}, expected {names}")
            self.close()
            raise ProtocolError(
                f"unexpected {MESSAGE_NAMES[msg_type]} (expected {names})")
        return msg_type, payload

    def send_error(self, code: int, message: str) -> None:
        try:
            self.send(MSG_ERROR, encode_error(code, message))
        except ProtocolError:
            pass  # already broken; the local abort carries the diagnosis

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.close()
            except OSError:
                pass


def expect_tensor(conn: Connection, msg_type: int, epoch: int,
                  batch_index: int) -> np.ndarray:
    """Receive one ACT/GRAD/EVAL_RESP and enforce the lock-step cursor."""
    _, payload = conn.expect(msg_type)
    tp = TensorPayload.decode(payload)
    if (tp.epoch, tp.batch_index) != (epoch, batch_index):
        conn.send_error(
            ERR_BAD_CURSOR,
            f"cursor ({tp.epoch},{tp.batch_index}) != expected ({epoch},{batch_index})")
        conn.close()
        raise ProtocolError(
            f"out-of-order {MESSAGE_NAMES[msg_type]}: got "
            f"({tp.epoch},{tp.batch_index}), expected ({epoch},{batch_index})")
    return tp.values


class FrameLog:
    """Recorder for instrumented runs: keeps (direction, type, payload)."""

    def __init__(self):
        self.frames: list[tuple[str, int, bytes]] = []

    def __call__(self, direction: str, msg_type: int, payload: bytes) -> None:
        self.frames.append((direction, msg_type, payload))

    def sent(self, msg_type: int | None = None) -> list[bytes]:
        return [p for d, t, p in self.frames
                if d == "send" and (msg_type is None or t == msg_type)]
