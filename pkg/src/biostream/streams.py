"""Stream model: metadata, chunks, the session registry, and the timebase
operations (dejitter, multi-rate alignment) that sit right above it.

A Session owns the stream_id namespace. Chunks are treated as immutable once
pushed; they fan out to any number of subscriber queues. Timestamps are
seconds on the sender's clock until a clock offset has been applied.
"""

from __future__ import annotations

import enum
import queue
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ChunkError, RegistrationError


class StreamKind(str, enum.Enum):
    EEG = "EEG"
    PPG = "PPG"
    ACC = "ACC"
    GAZE = "GAZE"
    GSR = "GSR"
    ECG = "ECG"
    MARKER = "MARKER"


@dataclass
class StreamInfo:
    """Identity and shape of one sensor stream.

    nominal_rate_hz is 0 exactly for irregular (marker) streams. stream_id
    is None until the stream is registered with a Session.
    """

    name: str
    kind: StreamKind
    channel_count: int
    nominal_rate_hz: float
    channel_labels: list[str] = field(default_factory=list)
    units: list[str] = field(default_factory=list)
    source_id: str = ""
    stream_id: int | None = None

    def __post_init__(self):
        if isinstance(self.kind, str) and not isinstance(self.kind, StreamKind):
            self.kind = StreamKind(self.kind)
        if not self.channel_labels:
            self.channel_labels = [f"ch{i}" for i in range(self.channel_count)]
        if not self.units:
            self.units = ["au"] * self.channel_count
        self.validate()

    def validate(self):
        if self.channel_count < 0:
            raise ValueError("channel_count must be non-negative")
        if len(self.channel_labels) != self.channel_count:
            raise ValueError(
                f"channel_labels length {len(self.channel_labels)} "
                f"!= channel_count {self.channel_count}"
            )
        if self.nominal_rate_hz < 0:
            raise ValueError("nominal_rate_hz must be non-negative")
        if (self.nominal_rate_hz == 0) != (self.kind is StreamKind.MARKER):
            raise ValueError("nominal_rate_hz is 0 exactly for MARKER streams")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "channel_count": self.channel_count,
            "nominal_rate_hz": self.nominal_rate_hz,
            "channel_labels": list(self.channel_labels),
            "units": list(self.units),
            "source_id": self.source_id,
            "stream_id": self.stream_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamInfo":
        return cls(
            name=d["name"],
            kind=StreamKind(d["kind"]),
            channel_count=int(d["channel_count"]),
            nominal_rate_hz=float(d["nominal_rate_hz"]),
            channel_labels=list(d.get("channel_labels") or []),
            units=list(d.get("units") or []),
            source_id=d.get("source_id", ""),
            stream_id=d.get("stream_id"),
        )


@dataclass
class Chunk:
    """A time-stamped block of samples from one stream.

    samples is [n_samples x channel_count] float32. For marker streams the
    payload lives in `markers` as (timestamp, text) pairs and samples has
    zero columns.
    """

    stream_id: int
    timestamps: np.ndarray
    samples: np.ndarray
    markers: list[tuple[float, str]] | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]

    @property
    def n_samples(self) -> int:
        return len(self.timestamps)

    def validate(self, info: StreamInfo | None = None):
        ts = self.timestamps
        if ts.ndim != 1:
            raise ChunkError("timestamps must be one-dimensional")
        if len(ts) > 1 and np.any(np.diff(ts) < 0):
            raise ChunkError("chunk timestamps must be non-decreasing")
        if self.samples.shape[1] > 0 and self.samples.shape[0] != len(ts):
            raise ChunkError(
                f"samples rows {self.samples.shape[0]} != timestamps {len(ts)}"
            )
        if info is not None:
            if info.kind is not StreamKind.MARKER and self.samples.shape[1] != info.channel_count:
                raise ChunkError(
                    f"chunk has {self.samples.shape[1]} channels, "
                    f"stream declares {info.channel_count}"
                )


class Session:
    """Registry of streams plus chunk fan-out.

    One writer per stream, any number of readers; registration and push are
    thread-safe. Chunks are stored in arrival order and also copied into
    every subscriber queue.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._infos: dict[int, StreamInfo] = {}
        self._by_source: dict[str, int] = {}
        self._chunks: dict[int, list[Chunk]] = {}
        self._subs: dict[int, list[queue.Queue]] = {}
        self._global_subs: list[queue.Queue] = []
        self._markers: list[tuple[float, str]] = []
        self._next_id = 0

    def register(self, info: StreamInfo) -> int:
        with self._lock:
            if info.source_id in self._by_source:
                raise RegistrationError(
                    f"source_id {info.source_id!r} already registered"
                )
            sid = self._next_id
            self._next_id += 1
            stored = replace(info, stream_id=sid)
            self._infos[sid] = stored
            self._by_source[info.source_id] = sid
            self._chunks[sid] = []
            self._subs[sid] = []
            return sid

    def adopt(self, info: StreamInfo) -> int:
        """Register a stream that already carries a stream_id (wire HELLO)."""
        with self._lock:
            if info.stream_id is None:
                raise RegistrationError("adopt requires a stream_id")
            if info.source_id in self._by_source:
                raise RegistrationError(
                    f"source_id {info.source_id!r} already registered"
                )
            if info.stream_id in self._infos:
                raise RegistrationError(f"stream_id {info.stream_id} already in use")
            self._infos[info.stream_id] = info
            self._by_source[info.source_id] = info.stream_id
            self._chunks[info.stream_id] = []
            self._subs[info.stream_id] = []
            self._next_id = max(self._next_id, info.stream_id + 1)
            return info.stream_id

    def resolve(self, source_id: str) -> StreamInfo:
        with self._lock:
            return self._infos[self._by_source[source_id]]

    def info(self, stream_id: int) -> StreamInfo:
        with self._lock:
            return self._infos[stream_id]

    def streams(self) -> list[StreamInfo]:
        with self._lock:
            return [self._infos[k] for k in sorted(self._infos)]

    def push_chunk(self, stream_id: int, chunk: Chunk) -> int:
        """Validate and queue a chunk; returns its index within the stream."""
        with self._lock:
            info = self._infos.get(stream_id)
            if info is None:
                raise ChunkError(f"unknown stream_id {stream_id}")
            subs = list(self._subs[stream_id]) + list(self._global_subs)
        chunk.validate(info)
        with self._lock:
            self._chunks[stream_id].append(chunk)
            idx = len(self._chunks[stream_id]) - 1
        for q in subs:
            q.put(chunk)
        return idx

    def subscribe(self, stream_id: int | None = None) -> queue.Queue:
        """A queue that receives every future chunk of one stream, or of all
        streams when stream_id is None."""
        with self._lock:
            q: queue.Queue = queue.Queue()
            if stream_id is None:
                self._global_subs.append(q)
                return q
            if stream_id not in self._infos:
                raise ChunkError(f"unknown stream_id {stream_id}")
            self._subs[stream_id].append(q)
            return q

    def chunks(self, stream_id: int) -> list[Chunk]:
        with self._lock:
            return list(self._chunks[stream_id])

    def record_marker(self, timestamp: float, text: str):
        """Append to the session-level marker log (tags, protocol events)."""
        with self._lock:
            self._markers.append((float(timestamp), str(text)))

    def markers(self) -> list[tuple[float, str]]:
        with self._lock:
            return list(self._markers)


DEJITTER_WINDOW = 500


def dejitter_timestamps(timestamps, nominal_rate_hz, window: int = DEJITTER_WINDOW):
    """Replace noisy per-sample timestamps with least-squares fitted ones.

    A line t = a + b*index is fitted over consecutive windows of up to
    `window` samples and the fitted values are returned. The fit preserves
    the window mean exactly. Irregular streams (rate 0) pass through
    unchanged, as does anything shorter than two samples.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if nominal_rate_hz == 0 or ts.size < 2:
        return ts.copy()
    out = np.empty_like(ts)
    starts = list(range(0, ts.size, window))
    # never leave a final window of one sample: fold it into the previous fit
    if len(starts) > 1 and ts.size - starts[-1] < 2:
        starts.pop()
    for w, s in enumerate(starts):
        e = ts.size if w == len(starts) - 1 else s + window
        idx = np.arange(e - s, dtype=np.float64)
        b, a = np.polyfit(idx, ts[s:e], 1)
        out[s:e] = a + b * idx
    return out


@dataclass
class AlignedFrame:
    """Streams resampled onto one uniform grid.

    data maps stream_id to [n_grid x channels] float64; valid flags grid
    points inside that stream's observed span; markers maps stream_id to
    (grid index, text) pairs.
    """

    grid_timestamps: np.ndarray
    data: dict[int, np.ndarray] = field(default_factory=dict)
    valid: dict[int, np.ndarray] = field(default_factory=dict)
    markers: dict[int, list[tuple[int, str]]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.grid_timestamps.size == 0


def _snap_to_grid(t: float, start: float, rate: float, n: int) -> int:
    """Nearest grid index for time t, ties toward the earlier point."""
    x = (t - start) * rate
    k = int(np.floor(x))
    frac = x - k
    idx = k if frac <= 0.5 else k + 1
    return min(max(idx, 0), n - 1)


def align_streams(streams, output_rate_hz: float, span) -> AlignedFrame:
    """Linearly interpolate regular streams onto a uniform grid.

    streams is a list of (StreamInfo, list of Chunk). Per-stream clock
    offsets are assumed already applied. Grid spacing is exactly
    1/output_rate_hz starting at span[0]. Regular streams are interpolated
    channel-wise; grid points outside a stream's span are masked invalid.
    Markers are never interpolated: each in-span marker snaps to the nearest
    grid point (ties toward earlier).
    """
    if output_rate_hz <= 0:
        raise ValueError("output_rate_hz must be positive")
    start, stop = float(span[0]), float(span[1])
    if stop <= start:
        return AlignedFrame(grid_timestamps=np.empty(0))
    n = int(np.floor((stop - start) * output_rate_hz + 1e-9)) + 1
    grid = start + np.arange(n, dtype=np.float64) / output_rate_hz
    frame = AlignedFrame(grid_timestamps=grid)
    for info, chunks in streams:
        sid = info.stream_id if info.stream_id is not None else -1
        if info.kind is StreamKind.MARKER:
            events = []
            for ch in chunks:
                for t, text in ch.markers or []:
                    if start <= t <= stop:
                        events.append((_snap_to_grid(t, start, output_rate_hz, n), text))
            frame.markers[sid] = sorted(events, key=lambda e: e[0])
            continue
        if not chunks:
            frame.data[sid] = np.full((n, info.channel_count), np.nan)
            frame.valid[sid] = np.zeros(n, dtype=bool)
            continue
        ts = np.concatenate([c.timestamps for c in chunks])
        xs = np.concatenate([c.samples for c in chunks]).astype(np.float64)
        mat = np.empty((n, xs.shape[1]))
        for c in range(xs.shape[1]):
            mat[:, c] = np.interp(grid, ts, xs[:, c])
        eps = 1e-9
        frame.data[sid] = mat
        frame.valid[sid] = (grid >= ts[0] - eps) & (grid <= ts[-1] + eps)
    return frame
