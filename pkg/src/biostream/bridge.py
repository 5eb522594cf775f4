"""WebSocket bridge between a live session and dashboard clients.

Serves a JSON message protocol: server to client "info", "samples"
(decimated), "marker", "scalp", "ack", "error" and "calib_result"; client to
server "calib_start", "calib_point_shown", "tag" and "session_cmd". Every
client command gets an ack or an error reply. Clock-sensitive commands
(tags, calibration markers) are stamped with the server's session clock,
never the client's.

The calibration flow is driven by the client but computed here: calib_start
hands back the 9-target grid plus 20 seeded test targets, each
calib_point_shown injects a MARKER and (when a simulated gaze driver is
attached) a burst of pupil samples fixating that target, and the final
session_cmd "calib_fit" fits the degree-2 model on the grid points and
replies with accuracy/precision over the test points.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time

import numpy as np

from . import wire
from .gaze import (ScreenGeometry, fit_calibration, gaze_accuracy,
                   gaze_precision, map_points)
from .ica import ica_init, ica_update, ring_positions, scalp_grid
from .simgen import SimConfig, calibration_grid, make_truth_map, scatter_targets
from .streams import Chunk, Session, StreamKind

MAX_POINTS_PER_SECOND = 50.0
CALIB_SAMPLES_PER_TARGET = 12
SCALP_GRID_RESOLUTION = 16
SCALP_PUBLISH_INTERVAL_S = 1.0


def decimate_for_display(timestamps, samples, rate_hz: float):
    """Keep at most MAX_POINTS_PER_SECOND samples per second per channel."""
    if rate_hz <= MAX_POINTS_PER_SECOND:
        return timestamps, samples
    stride = int(np.ceil(rate_hz / MAX_POINTS_PER_SECOND))
    return timestamps[::stride], samples[::stride]


def _msg(msg_type: str, payload, stream_id=None) -> str:
    out = {"type": msg_type, "payload": payload}
    if stream_id is not None:
        out["stream_id"] = int(stream_id)
    return json.dumps(out)


class SimGazeDriver:
    """Synthesizes pupil samples fixating whatever target is on screen.

    Stands in for a human subject during the calibration flow: the pupil
    positions come from inverting the same ground-truth map the session's
    simulated gaze stream was built from.
    """

    def __init__(self, seed: int, screen: ScreenGeometry, jitter_deg: float = 0.0,
                 rate_hz: float = 30.0):
        self.screen = screen
        self.rate_hz = rate_hz
        self.jitter_deg = jitter_deg
        self._rng = np.random.default_rng(seed)
        self.truth_map = make_truth_map(self._rng, screen)

    def look_at(self, x_px: float, y_px: float, t0: float,
                n: int = CALIB_SAMPLES_PER_TARGET):
        """(timestamps, pupil xy array) for n samples fixating the target."""
        target = np.array([float(x_px), float(y_px)])
        pupil = np.tile(self.truth_map.invert(target), (n, 1))
        if self.jitter_deg > 0:
            px_per_deg = (self.screen.viewing_distance_mm * np.pi / 180.0
                          / self.screen.pixel_pitch_mm)
            sigma = self.jitter_deg / np.sqrt(2.0) * px_per_deg
            jittered = target + self._rng.normal(0.0, sigma, size=(n, 2))
            pupil = np.array([self.truth_map.invert(p) for p in jittered])
        ts = t0 + np.arange(n) / self.rate_hz
        return ts, pupil


class _CalibState:
    def __init__(self):
        self.calib_targets = None
        self.test_targets = None
        self.samples: dict[int, np.ndarray] = {}

    def reset(self):
        self.calib_targets = None
        self.test_targets = None
        self.samples = {}


class DashboardBridge:
    """Owns the WebSocket endpoint for one session.

    Runs its own asyncio loop on a background thread; chunks pushed into the
    session by any thread are fanned out to every connected client after
    decimation. Pass a writer to also record injected markers and driver
    chunks into the session's .mbr file.
    """

    def __init__(self, session: Session, port: int = 0, seed: int = 0,
                 screen: ScreenGeometry | None = None,
                 writer: wire.MbrWriter | None = None,
                 now_fn=None, gaze_driver: SimGazeDriver | None = None):
        self.session = session
        self.seed = seed
        self.screen = screen or SimConfig().screen
        self.writer = writer
        self._wlock = threading.Lock()
        self._t0 = time.monotonic()
        self.now_fn = now_fn or (lambda: time.monotonic() - self._t0)
        self.gaze_driver = gaze_driver
        self._requested_port = port
        self.port = None
        self._calib = _CalibState()
        self._clients: set = set()
        self._loop = None
        self._ready = threading.Event()
        self._thread = None
        self._stop_async = None
        self._gaze_stream_id = self._find_stream(StreamKind.GAZE)
        self._eeg_stream_id = self._find_stream(StreamKind.EEG)

    def _find_stream(self, kind: StreamKind):
        for info in self.session.streams():
            if info.kind is kind:
                return info.stream_id
        return None

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        if not self._ready.wait(timeout=10.0):
            raise RuntimeError("bridge failed to start")
        return self.port

    def stop(self):
        if self._loop is not None:
            self._loop.call_soon_threadsafe(self._stop_async.set)
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def _run(self):
        asyncio.run(self._main())

    async def _main(self):
        import websockets

        self._loop = asyncio.get_running_loop()
        self._stop_async = asyncio.Event()
        pump = asyncio.create_task(self._pump_session())
        scalp = None
        if self._eeg_stream_id is not None:
            scalp = asyncio.create_task(self._pump_scalp())
        async with websockets.serve(self._handle_client, "127.0.0.1",
                                    self._requested_port) as server:
            self.port = server.sockets[0].getsockname()[1]
            self._ready.set()
            await self._stop_async.wait()
        pump.cancel()
        if scalp is not None:
            scalp.cancel()

    # -- session fan-out ---------------------------------------------------

    async def _pump_session(self):
        q = self.session.subscribe()
        loop = asyncio.get_running_loop()
        while True:
            try:
                item = await loop.run_in_executor(None, lambda: _q_get(q, 0.2))
            except asyncio.CancelledError:
                raise
            if item is None:
                continue
            chunk = item
            info = self.session.info(chunk.stream_id)
            ts, xs = decimate_for_display(chunk.timestamps, chunk.samples,
                                          info.nominal_rate_hz)
            msg = _msg("samples", {"timestamps": [float(t) for t in ts],
                                   "data": [[float(v) for v in row] for row in xs]},
                       stream_id=chunk.stream_id)
            self._broadcast(msg)
            for t, text in chunk.markers:
                self._broadcast(_msg("marker", {"t": float(t), "text": text}))

    async def _pump_scalp(self):
        """Feed the EEG stream through online ICA, publish scalp snapshots."""
        sid = self._eeg_stream_id
        info = self.session.info(sid)
        n = info.channel_count
        q = self.session.subscribe(stream_id=sid)
        loop = asyncio.get_running_loop()
        buf = []
        state = None
        last_pub = 0.0
        positions = ring_positions(n)
        while True:
            item = await loop.run_in_executor(None, lambda: _q_get(q, 0.2))
            if item is None:
                continue
            X = np.asarray(item.samples, dtype=float)
            if state is None:
                buf.append(X)
                stacked = np.concatenate(buf, axis=0)
                if len(stacked) >= 10 * n:
                    state = ica_init(stacked)
                    buf = None
                continue
            ica_update(state, X)
            now = time.monotonic()
            if now - last_pub >= SCALP_PUBLISH_INTERVAL_S:
                last_pub = now
                A = state.mixing_estimate()
                for k in range(n):
                    col = A[:, k]
                    denom = np.max(np.abs(col))
                    if denom > 0:
                        col = col / denom
                    smap = scalp_grid(positions, col,
                                      resolution=SCALP_GRID_RESOLUTION)
                    g = [[None if not np.isfinite(v) else float(v)
                          for v in row] for row in smap.grid]
                    self._broadcast(_msg("scalp", {
                        "component": k,
                        "grid": g,
                        "positions": [[float(a), float(b)] for a, b in positions],
                    }))

    def _broadcast(self, text: str):
        for client_q in list(self._clients):
            if client_q.full():
                try:
                    client_q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            client_q.put_nowait(text)

    # -- per-client --------------------------------------------------------

    async def _handle_client(self, ws):
        out_q: asyncio.Queue = asyncio.Queue(maxsize=4096)
        for info in self.session.streams():
            await ws.send(_msg("info", info.to_dict(),
                               stream_id=info.stream_id))
        self._clients.add(out_q)
        sender = asyncio.create_task(self._send_loop(ws, out_q))
        try:
            async for raw in ws:
                reply = self._handle_command(raw)
                for r in reply:
                    await ws.send(r)
        except Exception:
            pass
        finally:
            self._clients.discard(out_q)
            sender.cancel()

    async def _send_loop(self, ws, out_q):
        while True:
            await ws.send(await out_q.get())

    # -- command handling ----------------------------------------------------

    def _handle_command(self, raw: str) -> list[str]:
        try:
            msg = json.loads(raw)
            cmd = msg["type"]
            payload = msg.get("payload") or {}
        except (json.JSONDecodeError, TypeError, KeyError):
            return [_msg("error", {"cmd": None, "message": "malformed message"})]
        try:
            if cmd == "tag":
                return self._cmd_tag(payload)
            if cmd == "calib_start":
                return self._cmd_calib_start(payload)
            if cmd == "calib_point_shown":
                return self._cmd_calib_point(payload)
            if cmd == "session_cmd":
                return self._cmd_session(payload)
        except (KeyError, TypeError, ValueError) as exc:
            return [_msg("error", {"cmd": cmd, "message": str(exc)})]
        return [_msg("error", {"cmd": cmd, "message": f"unknown command {cmd!r}"})]

    def _inject_marker(self, t: float, text: str):
        self.session.record_marker(t, text)
        if self.writer is not None:
            with self._wlock:
                self.writer.write_frame(wire.marker_frame(t, text))
        self._broadcast(_msg("marker", {"t": t, "text": text}))

    def _cmd_tag(self, payload) -> list[str]:
        label = payload.get("label", "")
        if not isinstance(label, str) or not label.strip():
            return [_msg("error", {"cmd": "tag", "message": "empty label"})]
        t = self.now_fn()
        self._inject_marker(t, label)
        return [_msg("ack", {"cmd": "tag", "t": t, "label": label})]

    def _cmd_calib_start(self, payload) -> list[str]:
        self._calib.reset()
        grid = calibration_grid(self.screen)
        rng = np.random.default_rng(self.seed + 1)
        test = scatter_targets(20, self.screen, rng)
        self._calib.calib_targets = grid
        self._calib.test_targets = test
        t = self.now_fn()
        self._inject_marker(t, "calib start")
        return [_msg("ack", {
            "cmd": "calib_start",
            "calib_targets": grid.tolist(),
            "test_targets": test.tolist(),
            "screen": {"width_px": self.screen.width_px,
                       "height_px": self.screen.height_px},
        })]

    def _cmd_calib_point(self, payload) -> list[str]:
        if self._calib.calib_targets is None:
            return [_msg("error", {"cmd": "calib_point_shown",
                                   "message": "no calibration in progress"})]
        index = int(payload["index"])
        x, y = float(payload["x_px"]), float(payload["y_px"])
        n_total = len(self._calib.calib_targets) + len(self._calib.test_targets)
        if not 0 <= index < n_total:
            return [_msg("error", {"cmd": "calib_point_shown",
                                   "message": f"index {index} out of range"})]
        t = self.now_fn()
        self._inject_marker(t, f"calib point {index} {x:.1f} {y:.1f}")
        if self.gaze_driver is not None:
            ts, pupil = self.gaze_driver.look_at(x, y, t)
            self._calib.samples[index] = pupil
            if self._gaze_stream_id is not None:
                conf = np.ones(len(ts))
                self.session.push_chunk(self._gaze_stream_id, Chunk(
                    self._gaze_stream_id, ts,
                    np.column_stack([pupil, conf])))
        return [_msg("ack", {"cmd": "calib_point_shown", "index": index, "t": t})]

    def _cmd_session(self, payload) -> list[str]:
        cmd = payload.get("cmd")
        if cmd == "calib_abort":
            self._calib.reset()
            self._inject_marker(self.now_fn(), "calib abort")
            return [_msg("ack", {"cmd": "calib_abort"})]
        if cmd == "status":
            return [_msg("ack", {"cmd": "status",
                                 "streams": [i.name for i in self.session.streams()],
                                 "t": self.now_fn()})]
        if cmd == "calib_fit":
            return self._cmd_calib_fit()
        return [_msg("error", {"cmd": "session_cmd",
                               "message": f"unknown session command {cmd!r}"})]

    def _cmd_calib_fit(self) -> list[str]:
        st = self._calib
        if st.calib_targets is None:
            return [_msg("error", {"cmd": "calib_fit",
                                   "message": "no calibration in progress"})]
        n_grid = len(st.calib_targets)
        missing = [i for i in range(n_grid) if i not in st.samples]
        if missing:
            return [_msg("error", {"cmd": "calib_fit",
                                   "message": f"missing grid points {missing}"})]
        pupil = np.concatenate([st.samples[i] for i in range(n_grid)])
        targets = np.concatenate([np.tile(st.calib_targets[i],
                                          (len(st.samples[i]), 1))
                                  for i in range(n_grid)])
        model = fit_calibration(pupil, targets)
        test_idx = [i for i in range(n_grid, n_grid + len(st.test_targets))
                    if i in st.samples]
        report = {"cmd": "calib_fit",
                  "residual_rms_px": float(model.residual_rms_px),
                  "n_calib": int(n_grid), "n_test": len(test_idx)}
        if test_idx:
            mapped = [map_points(model, st.samples[i]) for i in test_idx]
            shown = [np.tile(st.test_targets[i - n_grid], (len(m), 1))
                     for i, m in zip(test_idx, mapped)]
            acc = gaze_accuracy(np.concatenate(mapped), np.concatenate(shown),
                                self.screen)
            runs = [m for m in mapped if len(m) >= 2]
            prec = gaze_precision(runs, self.screen) if runs else 0.0
            report["accuracy_deg"] = float(acc)
            report["precision_deg"] = float(prec)
        self._calib.reset()
        self._inject_marker(self.now_fn(), "calib done")
        return [_msg("calib_result", report)]


def _q_get(q: queue.Queue, timeout: float):
    try:
        return q.get(timeout=timeout)
    except queue.Empty:
        return None
