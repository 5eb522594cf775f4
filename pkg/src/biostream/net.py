"""Transport and session I/O: TCP sensor/collector endpoints, deterministic
simulated recording, and replay.

The collector is the session host: sensors connect, announce their streams
(HELLO) and push chunks; the collector optionally runs clock-sync bursts
against each connection and corrects chunk timestamps by the latest offset
before queueing and recording them. Simulated sessions bypass sockets
entirely and are generated frame by frame in timestamp order, which makes
record/replay byte-deterministic.
"""

from __future__ import annotations

import socket
import threading
import time

import numpy as np

from . import simgen, wire
from .config import SessionConfig
from .errors import ProtocolError
from .streams import Chunk, Session, StreamInfo, StreamKind
from .sync import BURST_SIZE, ClockExchange, OffsetTracker

CHUNK_SECONDS = 0.1


# ---------------------------------------------------------------------------
# simulated sessions

def _sim_arrays(spec, cfg: SessionConfig):
    """(timestamps, samples) for one sim-source stream spec."""
    sim = simgen.SimConfig(seed=cfg.seed)
    dur = cfg.duration_s
    if spec.source == "sim:ecg":
        x, _ = simgen.synth_ecg(sim, dur)
        ts = np.arange(len(x)) / sim.ecg_rate_hz
        return ts, x[:, None]
    if spec.source.startswith("sim:ppg:"):
        scenario = spec.source.rsplit(":", 1)[1]
        ppg, _, _, _ = simgen.synth_ppg_with_motion(sim, dur, scenario)
        ts = np.arange(len(ppg)) / sim.ppg_rate_hz
        return ts, ppg[:, None]
    if spec.source.startswith("sim:acc:"):
        scenario = spec.source.rsplit(":", 1)[1]
        _, acc, _, _ = simgen.synth_ppg_with_motion(sim, dur, scenario)
        ts = np.arange(len(acc)) / sim.ppg_rate_hz
        return ts, acc
    if spec.source == "sim:eeg":
        X, _, _ = simgen.synth_eeg_mixture(sim, dur, spec.channel_count)
        ts = np.arange(len(X)) / sim.eeg_rate_hz
        return ts, X
    if spec.source == "sim:gaze":
        rng = np.random.default_rng(sim.seed)
        tmap = simgen.make_truth_map(rng, sim.screen)
        grid = simgen.calibration_grid(sim.screen)
        times, rows = [], []
        t = 0.0
        while t < dur:
            trial = simgen.synth_gaze(sim, grid, truth_map=tmap, rng=rng, t_start=t)
            keep = trial.times < dur
            times.append(trial.times[keep])
            rows.append(np.column_stack([trial.pupil[keep],
                                         trial.confidence[keep]]))
            t = trial.times[-1] + 1.0 / sim.gaze_rate_hz
        return np.concatenate(times), np.concatenate(rows)
    raise ProtocolError(f"no generator for source {spec.source!r}")


def build_sim_events(cfg: SessionConfig) -> list[tuple[float, str]]:
    events = [(0.0, "session start")]
    if cfg.duration_s > 0:
        events.append((cfg.duration_s, "session stop"))
    return events


def record_simulated(cfg: SessionConfig, out_path) -> Session:
    """Generate every configured sim stream and write a deterministic .mbr.

    HELLO frames come first in declaration order; chunk and marker frames
    follow sorted by timestamp (declaration order breaks ties). Returns the
    populated in-memory session.
    """
    session = Session()
    frames: list[tuple[float, int, bytes]] = []
    order = 0
    with wire.MbrWriter(out_path) as w:
        for spec in cfg.streams:
            info = StreamInfo(name=spec.name, kind=spec.kind,
                              channel_count=spec.channel_count,
                              nominal_rate_hz=spec.nominal_rate_hz,
                              channel_labels=spec.channel_labels,
                              units=spec.units, source_id=spec.name)
            sid = session.register(info)
            registered = session.info(sid)
            w.write_frame(wire.hello_frame(registered))
            if spec.kind is StreamKind.MARKER:
                for t, text in build_sim_events(cfg):
                    frames.append((t, order, wire.marker_frame(t, text)))
                    order += 1
                continue
            ts, xs = _sim_arrays(spec, cfg)
            step = max(1, int(round(CHUNK_SECONDS * spec.nominal_rate_hz)))
            for s in range(0, len(ts), step):
                sub_t, sub_x = ts[s:s + step], xs[s:s + step]
                session.push_chunk(sid, Chunk(sid, sub_t, sub_x))
                frames.append((float(sub_t[0]), order,
                               wire.chunk_frame(sid, sub_t, sub_x)))
                order += 1
        frames.sort(key=lambda f: (f[0], f[1]))
        for _, _, frame in frames:
            w.write_frame(frame)
        w.write_frame(wire.bye_frame())
    return session


def adopt_recording_streams(path, session: Session, writer=None):
    """Adopt every HELLO in the file into the session, in file order.

    Tees the HELLO frames to the writer when one is given. Returns the
    adopted StreamInfo list.
    """
    infos = []
    for msg_type, payload, raw in wire.read_mbr(path):
        if msg_type == wire.MSG_HELLO:
            info = wire.decode_hello(payload)
            session.adopt(info)
            infos.append(info)
            if writer is not None:
                writer.write_frame(raw)
    return infos


def replay_data_frames(path, session: Session, speed: float = 1.0, writer=None):
    """Push a recording's CHUNK and MARKER frames into a populated session.

    speed scales the original inter-frame spacing (2.0 plays twice as fast);
    0 means as fast as possible. Frames are teed to the writer when given.
    Returns the markers seen.
    """
    if speed < 0:
        raise ValueError("speed must be >= 0")
    markers: list[tuple[float, str]] = []
    last_t = None
    for msg_type, payload, raw in wire.read_mbr(path):
        if msg_type == wire.MSG_CHUNK:
            sid, ts, xs = wire.decode_chunk(payload)
            t = float(ts[0]) if len(ts) else None
            _pace(last_t, t, speed)
            session.push_chunk(sid, Chunk(sid, ts, xs))
            if t is not None:
                last_t = t
        elif msg_type == wire.MSG_MARKER:
            t, text = wire.decode_marker(payload)
            _pace(last_t, t, speed)
            session.record_marker(t, text)
            markers.append((t, text))
            last_t = t
        else:
            continue
        if writer is not None:
            writer.write_frame(raw)
    return markers


def replay_to_session(path, session: Session | None = None, speed: float = 1.0):
    """Re-publish a whole recording into a session.

    Returns (session, markers). See replay_data_frames for pacing.
    """
    session = session or Session()
    adopt_recording_streams(path, session)
    markers = replay_data_frames(path, session, speed=speed)
    return session, markers


def _pace(last_t, t, speed):
    if speed > 0 and last_t is not None and t is not None and t > last_t:
        time.sleep((t - last_t) / speed)


def copy_recording(path_in, path_out) -> int:
    """Rewrite a recording frame by frame; returns the frame count."""
    n = 0
    with wire.MbrWriter(path_out) as w:
        for _, _, raw in wire.read_mbr(path_in):
            w.write_frame(raw)
            n += 1
    return n


# ---------------------------------------------------------------------------
# TCP transport

def _read_exact_loop(sock, assembler, on_frame, stop_event):
    while not stop_event.is_set():
        try:
            data = sock.recv(65536)
        except OSError:
            break
        if not data:
            break
        for msg_type, payload in assembler.feed(data):
            on_frame(msg_type, payload)


class SensorClient:
    """A sensor-side endpoint: announces streams and pushes data.

    Responds to collector clock pings using its own time_fn, which tests can
    skew to emulate an unsynchronized device clock.
    """

    def __init__(self, host: str, port: int, time_fn=time.monotonic):
        self.time_fn = time_fn
        self._sock = socket.create_connection((host, port))
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._assembler = wire.FrameAssembler()
        self._reader = threading.Thread(target=_read_exact_loop,
                                        args=(self._sock, self._assembler,
                                              self._on_frame, self._stop),
                                        daemon=True)
        self._reader.start()

    def _send(self, frame: bytes):
        with self._lock:
            self._sock.sendall(frame)

    def _on_frame(self, msg_type, payload):
        if msg_type == wire.MSG_CLOCK_PING:
            t1 = self.time_fn()
            t0 = wire.decode_clock_ping(payload)
            t2 = self.time_fn()
            self._send(wire.encode_frame(wire.MSG_CLOCK_PONG,
                                         wire.encode_clock_pong(t0, t1, t2)))

    def announce(self, info: StreamInfo):
        if info.stream_id is None:
            raise ProtocolError("announce requires a registered stream_id")
        self._send(wire.hello_frame(info))

    def send_chunk(self, stream_id: int, timestamps, samples):
        self._send(wire.chunk_frame(stream_id, timestamps, samples))

    def send_marker(self, timestamp: float, text: str):
        self._send(wire.marker_frame(timestamp, text))

    def close(self):
        try:
            self._send(wire.bye_frame())
        except OSError:
            pass
        self._stop.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class CollectorServer:
    """Session host: accepts sensor connections, records, syncs clocks."""

    def __init__(self, session: Session | None = None, host: str = "127.0.0.1",
                 port: int = 0, writer: wire.MbrWriter | None = None,
                 clock_sync: bool = False, time_fn=time.monotonic):
        self.session = session or Session()
        self.writer = writer
        self.clock_sync = clock_sync
        self.time_fn = time_fn
        self.offsets = OffsetTracker()
        self.markers: list[tuple[float, str]] = []
        self._listener = socket.create_server((host, port))
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._wlock = threading.Lock()
        self._conns: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                break
            self._conns.append(conn)
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _record(self, frame: bytes):
        if self.writer is not None:
            with self._wlock:
                self.writer.write_frame(frame)

    def _serve_conn(self, conn: socket.socket):
        state = {"sources": [], "pongs": {}, "synced": False}
        lock = threading.Lock()

        def on_frame(msg_type, payload):
            if msg_type == wire.MSG_HELLO:
                info = wire.decode_hello(payload)
                self.session.adopt(info)
                state["sources"].append(info.source_id)
                self._record(wire.hello_frame(info))
                if self.clock_sync and not state["synced"]:
                    state["synced"] = True
                    threading.Thread(target=self._sync_burst,
                                     args=(conn, state, lock), daemon=True).start()
            elif msg_type == wire.MSG_CHUNK:
                sid, ts, xs = wire.decode_chunk(payload)
                off = self._conn_offset(state)
                if off:
                    ts = ts - off
                self.session.push_chunk(sid, Chunk(sid, ts, xs))
                self._record(wire.chunk_frame(sid, ts, xs))
            elif msg_type == wire.MSG_MARKER:
                t, text = wire.decode_marker(payload)
                off = self._conn_offset(state)
                if off:
                    t -= off
                self.markers.append((t, text))
                self._record(wire.marker_frame(t, text))
            elif msg_type == wire.MSG_CLOCK_PONG:
                t0, t1, t2 = wire.decode_clock_pong(payload)
                t3 = self.time_fn()
                with lock:
                    state["pongs"][t0] = ClockExchange(t0=t0, t1=t1, t2=t2, t3=t3)

        assembler = wire.FrameAssembler()
        _read_exact_loop(conn, assembler, on_frame, self._stop)
        conn.close()

    def _conn_offset(self, state) -> float:
        for source in state["sources"]:
            if self.offsets.known(source):
                return self.offsets.offset_for(source)
        return 0.0

    def _sync_burst(self, conn, state, lock):
        sent = []
        for _ in range(BURST_SIZE):
            t0 = self.time_fn()
            sent.append(t0)
            try:
                conn.sendall(wire.encode_frame(wire.MSG_CLOCK_PING,
                                               wire.encode_clock_ping(t0)))
            except OSError:
                return
            time.sleep(0.005)
        deadline = time.monotonic() + 1.0
        while time.monotonic() < deadline:
            with lock:
                done = all(t0 in state["pongs"] for t0 in sent)
            if done:
                break
            time.sleep(0.005)
        with lock:
            exchanges = [state["pongs"][t0] for t0 in sent if t0 in state["pongs"]]
        if exchanges:
            for source in state["sources"]:
                self.offsets.record_burst(source, exchanges)

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for c in self._conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            c.close()
        for t in self._threads:
            t.join(timeout=1.0)
