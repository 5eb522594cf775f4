"""Binary wire protocol (MBSP) and the .mbr recording container.

Frame layout, all little-endian:

    magic "MBSP" | version u8 = 1 | msg_type u8 | payload_len u32 | payload

Message types: 0x01 HELLO (UTF-8 JSON StreamInfo), 0x02 CHUNK, 0x03
CLOCK_PING, 0x04 CLOCK_PONG, 0x05 MARKER, 0x06 BYE. A CHUNK payload is
stream_id u16, n_samples u16, n_channels u16, then n_samples f64 timestamps
followed by n_samples*n_channels f32 samples in row-major order.

A recording file (.mbr) is the ASCII header "MBSR1\n" followed by the
session's frames verbatim, in arrival order. Readers tolerate a truncated
final frame (a crash mid-write loses at most that frame) but reject any
malformed magic at a frame boundary.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError
from .streams import Chunk, StreamInfo, StreamKind, dejitter_timestamps

MAGIC = b"MBSP"
VERSION = 1
_HEADER = struct.Struct("<4sBBI")

MSG_HELLO = 0x01
MSG_CHUNK = 0x02
MSG_CLOCK_PING = 0x03
MSG_CLOCK_PONG = 0x04
MSG_MARKER = 0x05
MSG_BYE = 0x06

_KNOWN_TYPES = {MSG_HELLO, MSG_CHUNK, MSG_CLOCK_PING, MSG_CLOCK_PONG, MSG_MARKER, MSG_BYE}

MBR_HEADER = b"MBSR1\n"


class _Incomplete(Exception):
    """Internal: buffer ends before the frame does."""


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(f"unknown msg_type 0x{msg_type:02x}")
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def decode_frame(buf: bytes, offset: int = 0):
    """Decode one frame at `offset`; returns (msg_type, payload, next_offset).

    Raises _Incomplete when the buffer holds only part of a frame, and
    ProtocolError on bad magic, version or message type.
    """
    if len(buf) - offset < _HEADER.size:
        raise _Incomplete
    magic, version, msg_type, plen = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r} at offset {offset}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(f"unknown msg_type 0x{msg_type:02x}")
    end = offset + _HEADER.size + plen
    if len(buf) < end:
        raise _Incomplete
    return msg_type, bytes(buf[offset + _HEADER.size:end]), end


def iter_frames(buf: bytes, tolerate_truncation: bool = False):
    """Yield (msg_type, payload, raw_frame) over a byte buffer."""
    off = 0
    while off < len(buf):
        try:
            msg_type, payload, end = decode_frame(buf, off)
        except _Incomplete:
            if tolerate_truncation:
                return
            raise ProtocolError("truncated frame")
        yield msg_type, payload, bytes(buf[off:end])
        off = end


class FrameAssembler:
    """Incremental frame parser for a byte stream (socket reads)."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        """Absorb bytes; returns a list of completed (msg_type, payload)."""
        self._buf.extend(data)
        out = []
        off = 0
        while True:
            try:
                msg_type, payload, off = decode_frame(self._buf, off)
            except _Incomplete:
                break
            out.append((msg_type, payload))
        del self._buf[:off]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# payload codecs

def encode_hello(info: StreamInfo) -> bytes:
    return json.dumps(info.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def decode_hello(payload: bytes) -> StreamInfo:
    try:
        return StreamInfo.from_dict(json.loads(payload.decode()))
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise ProtocolError(f"bad HELLO payload: {e}") from e


def encode_chunk(stream_id: int, timestamps, samples) -> bytes:
    ts = np.ascontiguousarray(timestamps, dtype="<f8")
    sm = np.ascontiguousarray(samples, dtype="<f4")
    if sm.ndim == 1:
        sm = sm[:, None]
    n, c = sm.shape
    if len(ts) != n:
        raise ProtocolError(f"chunk has {len(ts)} timestamps for {n} sample rows")
    if not (0 <= stream_id <= 0xFFFF and n <= 0xFFFF and c <= 0xFFFF):
        raise ProtocolError("chunk field exceeds u16 range")
    return struct.pack("<HHH", stream_id, n, c) + ts.tobytes() + sm.tobytes()


def decode_chunk(payload: bytes):
    if len(payload) < 6:
        raise ProtocolError("CHUNK payload too short")
    stream_id, n, c = struct.unpack_from("<HHH", payload)
    expect = 6 + 8 * n + 4 * n * c
    if len(payload) != expect:
        raise ProtocolError(f"CHUNK payload length {len(payload)}, expected {expect}")
    ts = np.frombuffer(payload, dtype="<f8", count=n, offset=6).copy()
    sm = np.frombuffer(payload, dtype="<f4", count=n * c, offset=6 + 8 * n)
    return stream_id, ts, sm.reshape(n, c).copy()


def encode_clock_ping(t0: float) -> bytes:
    return struct.pack("<d", t0)


def decode_clock_ping(payload: bytes) -> float:
    if len(payload) != 8:
        raise ProtocolError("CLOCK_PING payload must be 8 bytes")
    return struct.unpack("<d", payload)[0]


def encode_clock_pong(t0: float, t1: float, t2: float) -> bytes:
    return struct.pack("<ddd", t0, t1, t2)


def decode_clock_pong(payload: bytes):
    if len(payload) != 24:
        raise ProtocolError("CLOCK_PONG payload must be 24 bytes")
    return struct.unpack("<ddd", payload)


def encode_marker(timestamp: float, text: str) -> bytes:
    raw = text.encode()
    if len(raw) > 0xFFFF:
        raise ProtocolError("marker text exceeds u16 length")
    return struct.pack("<dH", timestamp, len(raw)) + raw


def decode_marker(payload: bytes):
    if len(payload) < 10:
        raise ProtocolError("MARKER payload too short")
    t, ln = struct.unpack_from("<dH", payload)
    if len(payload) != 10 + ln:
        raise ProtocolError("MARKER payload length mismatch")
    try:
        return t, payload[10:].decode()
    except UnicodeDecodeError as e:
        raise ProtocolError(f"marker text is not UTF-8: {e}") from e


def hello_frame(info: StreamInfo) -> bytes:
    return encode_frame(MSG_HELLO, encode_hello(info))


def chunk_frame(stream_id: int, timestamps, samples) -> bytes:
    return encode_frame(MSG_CHUNK, encode_chunk(stream_id, timestamps, samples))


def marker_frame(timestamp: float, text: str) -> bytes:
    return encode_frame(MSG_MARKER, encode_marker(timestamp, text))


def bye_frame() -> bytes:
    return encode_frame(MSG_BYE, b"")


# ---------------------------------------------------------------------------
# recording container

class MbrWriter:
    """Append-only .mbr recording writer. Frames must be written whole;
    writes are locked so several producer threads can share one file."""

    def __init__(self, path):
        self._lock = threading.Lock()
        self._f = open(path, "wb")
        self._f.write(MBR_HEADER)

    def write_frame(self, frame: bytes):
        with self._lock:
            self._f.write(frame)

    def write(self, msg_type: int, payload: bytes):
        self.write_frame(encode_frame(msg_type, payload))

    def flush(self):
        self._f.flush()

    def close(self):
        if not self._f.closed:
            self._f.flush()
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_mbr(path):
    """Yield (msg_type, payload, raw_frame) from a recording.

    A truncated final frame is silently dropped; corrupt data at a frame
    boundary raises ProtocolError.
    """
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MBR_HEADER):
        raise ProtocolError(f"{path}: not an .mbr recording")
    yield from iter_frames(data[len(MBR_HEADER):], tolerate_truncation=True)


@dataclass
class Recording:
    """Decoded .mbr content, keyed by the stream ids declared in HELLOs."""

    infos: dict[int, StreamInfo] = field(default_factory=dict)
    chunks: dict[int, list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    markers: list[tuple[float, str]] = field(default_factory=list)
    frame_count: int = 0

    def stream_arrays(self, stream_id: int):
        """All chunks of one stream concatenated to (timestamps, samples)."""
        parts = self.chunks.get(stream_id, [])
        if not parts:
            info = self.infos[stream_id]
            return np.empty(0), np.empty((0, info.channel_count), dtype=np.float32)
        ts = np.concatenate([p[0] for p in parts])
        xs = np.concatenate([p[1] for p in parts])
        return ts, xs

    def as_session_streams(self):
        """Recording content shaped for align_streams."""
        out = []
        for sid, info in sorted(self.infos.items()):
            if info.kind is StreamKind.MARKER:
                chs = [Chunk(sid, np.array([t for t, _ in self.markers]),
                             np.empty((len(self.markers), 0), dtype=np.float32),
                             markers=list(self.markers))]
            else:
                chs = [Chunk(sid, ts, xs) for ts, xs in self.chunks.get(sid, [])]
            out.append((info, chs))
        return out


def load_recording(path) -> Recording:
    rec = Recording()
    for msg_type, payload, _ in read_mbr(path):
        rec.frame_count += 1
        if msg_type == MSG_HELLO:
            info = decode_hello(payload)
            if info.stream_id is None:
                raise ProtocolError("HELLO without stream_id in recording")
            rec.infos[info.stream_id] = info
            rec.chunks.setdefault(info.stream_id, [])
        elif msg_type == MSG_CHUNK:
            sid, ts, xs = decode_chunk(payload)
            if sid not in rec.infos:
                raise ProtocolError(f"CHUNK for undeclared stream {sid}")
            rec.chunks[sid].append((ts, xs))
        elif msg_type == MSG_MARKER:
            rec.markers.append(decode_marker(payload))
        # clock frames and BYE carry no session payload to keep
    return rec


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name) or "stream"


def export_csv(rec: Recording, out_dir, apply_dejitter: bool = True) -> list[str]:
    """One CSV per stream: header = channel labels, first column = corrected
    timestamp (dejittered unless disabled). Markers go to markers.csv."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    used = set()
    for sid, info in sorted(rec.infos.items()):
        if info.kind is StreamKind.MARKER:
            continue
        base = _safe_name(info.name)
        name = base if base not in used else f"{base}_{sid}"
        used.add(name)
        path = os.path.join(out_dir, f"{name}.csv")
        ts, xs = rec.stream_arrays(sid)
        if apply_dejitter and ts.size:
            ts = dejitter_timestamps(ts, info.nominal_rate_hz)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["timestamp"] + list(info.channel_labels))
            for i in range(len(ts)):
                w.writerow([repr(float(ts[i]))] + [repr(float(v)) for v in xs[i]])
        written.append(path)
    if rec.markers:
        path = os.path.join(out_dir, "markers.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["timestamp", "text"])
            for t, text in rec.markers:
                w.writerow([repr(float(t)), text])
        written.append(path)
    return written
