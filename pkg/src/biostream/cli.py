"""Command-line entry point: record, replay, process, evaluate, serve.

Exit codes: 0 ok, 2 configuration or usage error, 3 I/O error, 4 protocol
error. Every command is deterministic for file inputs and fixed seeds.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import threading
import time
from dataclasses import replace

import numpy as np

from . import evalkit, net, wire
from .bridge import DashboardBridge, SimGazeDriver
from .config import SessionConfig, load_config
from .dsp import PeakConfig, anc_cancel, design_bandpass, detect_peaks, heart_rate
from .errors import ConfigError, ProtocolError
from .simgen import SimConfig
from .streams import Session, StreamInfo


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biostream",
        description="Multi-modal bio-sensing sessions: record, replay, "
                    "process, evaluate, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="run a configured session to an .mbr file")
    p.add_argument("--config", required=True, help="session JSON config")
    p.add_argument("--out", required=True, help="output .mbr path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("replay", help="re-publish a recording")
    p.add_argument("path", help="input .mbr")
    p.add_argument("--out", default=None, help="also rewrite to this .mbr")
    p.add_argument("--speed", type=float, default=1.0,
                   help="trajectory speed factor, 0 = as fast as possible")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("process", help="run the processing graph over a recording")
    p.add_argument("path", help="input .mbr")
    p.add_argument("--config", required=True, help="session JSON config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("evaluate", help="run an evaluation scenario")
    p.add_argument("target", choices=["ppg", "gaze"])
    p.add_argument("--scenario", choices=["rest", "walk"], default=None,
                   help="ppg only: which protocol condition")
    p.add_argument("--anc", choices=["on", "off", "both"], default="both")
    p.add_argument("--out", default=".", help="report output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=120.0,
                   help="ppg scenario length in seconds")
    p.add_argument("--trials", type=int, default=3, help="gaze trial count")
    p.add_argument("--plot", action="store_true", help="also write SVG figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="replay a simulated session live with the "
                                     "dashboard bridge attached")
    p.add_argument("--config", required=True, help="session JSON config")
    p.add_argument("--port", type=int, default=None,
                   help="WebSocket port (default from config)")
    p.add_argument("--out", default=None, help="record the served session here")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--run-for", type=float, default=None,
                   help="stop after this many wall seconds (default: Ctrl-C)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ProtocolError as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 0


def _load_config_args(args) -> SessionConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# record / replay

def cmd_record(args) -> int:
    cfg = _load_config_args(args)
    if all(s.source.startswith("sim:") for s in cfg.streams):
        session = net.record_simulated(cfg, args.out)
        n_chunks = sum(len(session.chunks(i.stream_id)) for i in session.streams())
        print(f"recorded {len(cfg.streams)} streams, {n_chunks} chunks "
              f"({cfg.duration_s:g} s simulated) -> {args.out}")
        return 0
    return _record_live(cfg, args.out)


def _listen_port(cfg: SessionConfig) -> int:
    for s in cfg.streams:
        if s.source.startswith("tcp:"):
            part = s.source.split(":", 1)[1]
            try:
                return int(part)
            except ValueError as e:
                raise ConfigError(f"bad tcp source {s.source!r}: {e}") from e
    raise ConfigError("no tcp stream in config")


def _record_live(cfg: SessionConfig, out_path) -> int:
    port = _listen_port(cfg)
    writer = wire.MbrWriter(out_path)
    server = net.CollectorServer(port=port, writer=writer,
                                 clock_sync=cfg.clock_sync)
    print(f"listening on {server.port}, recording to {out_path} "
          f"(Ctrl-C to stop)")
    try:
        deadline = time.monotonic() + cfg.duration_s if cfg.duration_s > 0 else None
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.1)
    finally:
        server.stop()
        writer.close()
    return 0


def cmd_replay(args) -> int:
    session, markers = net.replay_to_session(args.path, speed=args.speed)
    if args.out:
        n = net.copy_recording(args.path, args.out)
        print(f"rewrote {n} frames -> {args.out}")
    for info in session.streams():
        chunks = session.chunks(info.stream_id)
        n = sum(c.n_samples for c in chunks)
        print(f"  [{info.stream_id}] {info.name}: {len(chunks)} chunks, "
              f"{n} samples")
    print(f"{len(markers)} markers")
    return 0


# ---------------------------------------------------------------------------
# process

def _graph_over_recording(rec: wire.Recording, cfg: SessionConfig):
    """Run the configured stage graph over a loaded recording.

    Returns (processed, tables): processed maps stream name to its working
    dict once any signal stage touched it; tables maps a csv basename to
    (header, rows).
    """
    work = {}
    for sid, info in rec.infos.items():
        ts, xs = rec.stream_arrays(sid)
        work[info.name] = {"info": info, "ts": ts,
                           "x": np.asarray(xs, dtype=np.float64),
                           "touched": False, "peaks": None,
                           "peak_params": None}
    tables = {}
    for st in cfg.processing:
        if st.stream not in work:
            raise ConfigError(
                f"stage {st.stage!r}: stream {st.stream!r} not in recording")
        w = work[st.stream]
        rate = w["info"].nominal_rate_hz
        if st.stage == "bandpass":
            low = float(st.params.get("low_hz", evalkit.BAND_LOW_HZ))
            high = float(st.params.get("high_hz", evalkit.BAND_HIGH_HZ))
            order = int(st.params.get("order", evalkit.BAND_ORDER))
            out = np.empty_like(w["x"])
            for c in range(w["x"].shape[1]):
                casc = design_bandpass(low, high, order, rate)
                out[:, c] = casc.apply(w["x"][:, c])
            w["x"] = out
            w["touched"] = True
        elif st.stage == "anc":
            ref_name = st.params["references"]
            refs = work[ref_name]["x"]
            n = min(len(w["x"]), len(refs))
            kwargs = {k: st.params[k] for k in ("taps", "mu", "tau", "eps")
                      if k in st.params}
            cleaned, _ = anc_cancel(w["x"][:n, 0], refs[:n], **kwargs)
            w["x"] = cleaned[:, None]
            w["ts"] = w["ts"][:n]
            w["touched"] = True
        elif st.stage in ("peaks", "hr"):
            prom_scale = float(st.params.get("prominence_scale",
                                             evalkit.PPG_PEAK_PROM_SCALE))
            pc = PeakConfig(
                min_distance_s=float(st.params.get(
                    "min_distance_s", evalkit.PPG_PEAK_DISTANCE_S)),
                min_prominence=float(st.params.get(
                    "min_prominence", prom_scale * np.std(w["x"][:, 0]))))
            if w["peaks"] is None or w["peak_params"] != (st.stage, pc):
                w["peaks"] = detect_peaks(w["x"][:, 0], rate, pc)
                w["peak_params"] = (st.stage, pc)
            if st.stage == "peaks":
                rows = [(int(i), repr(float(w["ts"][i]))) for i in w["peaks"]]
                tables[f"{w['info'].name}_peaks"] = (["index", "time_s"], rows)
            else:
                window = float(st.params.get("window_s", evalkit.HR_WINDOW_S))
                hr = heart_rate(w["peaks"], rate, window_s=window)
                rows = [(repr(k * window), "" if v is None else repr(float(v)))
                        for k, v in enumerate(hr)]
                tables[f"{w['info'].name}_hr"] = (["window_start_s", "hr_bpm"], rows)
    processed = {name: w for name, w in work.items() if w["touched"]}
    return processed, tables


def cmd_process(args) -> int:
    cfg = _load_config_args(args)
    rec = wire.load_recording(args.path)
    processed, tables = _graph_over_recording(rec, cfg)
    os.makedirs(args.out, exist_ok=True)
    out_mbr = os.path.join(args.out, "processed.mbr")
    next_id = max(rec.infos) + 1 if rec.infos else 0
    with wire.MbrWriter(out_mbr) as w:
        for _, _, raw in wire.read_mbr(args.path):
            w.write_frame(raw)
        for name in sorted(processed):
            p = processed[name]
            src = p["info"]
            info = StreamInfo(name=f"{src.name}-proc", kind=src.kind,
                              channel_count=p["x"].shape[1],
                              nominal_rate_hz=src.nominal_rate_hz,
                              source_id=f"{src.source_id}-proc",
                              stream_id=next_id)
            next_id += 1
            w.write_frame(wire.hello_frame(info))
            step = 4096
            for s in range(0, len(p["ts"]), step):
                w.write_frame(wire.chunk_frame(
                    info.stream_id, p["ts"][s:s + step], p["x"][s:s + step]))
    written = [out_mbr]
    for base, (header, rows) in sorted(tables.items()):
        path = os.path.join(args.out, f"{wire._safe_name(base)}.csv")
        with open(path, "w", newline="") as f:
            cw = csv.writer(f)
            cw.writerow(header)
            cw.writerows(rows)
        written.append(path)
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# evaluate / serve

def cmd_evaluate(args) -> int:
    if args.target == "ppg":
        if args.scenario is None:
            raise ConfigError("evaluate ppg requires --scenario rest|walk")
        report = evalkit.run_ppg_scenario(args.scenario,
                                          duration_s=args.duration,
                                          anc=args.anc, seed=args.seed)
    else:
        report = evalkit.run_gaze_scenario(trials=args.trials, seed=args.seed)
    written = report.save(args.out, plot=args.plot)
    for key in sorted(report.summary):
        print(f"  {key}: {report.summary[key]}")
    for path in written:
        print(path)
    return 0


def cmd_serve(args) -> int:
    import shutil
    import tempfile

    cfg = _load_config_args(args)
    port = args.port if args.port is not None else cfg.dashboard_port
    tmpdir = tempfile.mkdtemp(prefix="biostream-serve-")
    src_path = os.path.join(tmpdir, "session.mbr")
    bridge = None
    writer = None
    try:
        net.record_simulated(cfg, src_path)
        session = Session()
        writer = wire.MbrWriter(args.out) if args.out else None
        net.adopt_recording_streams(src_path, session, writer=writer)
        speed = args.speed if args.speed > 0 else 1.0
        t0 = time.monotonic()
        driver = SimGazeDriver(cfg.seed, SimConfig(seed=cfg.seed).screen)
        bridge = DashboardBridge(session, port=port, seed=cfg.seed,
                                 screen=driver.screen, writer=writer,
                                 now_fn=lambda: (time.monotonic() - t0) * speed,
                                 gaze_driver=driver)
        bridge.start()
        print(f"dashboard bridge on ws://127.0.0.1:{bridge.port} "
              f"(Ctrl-C to stop)")
        replayer = threading.Thread(
            target=net.replay_data_frames, args=(src_path, session),
            kwargs={"speed": args.speed, "writer": writer}, daemon=True)
        replayer.start()
        if args.run_for is not None:
            time.sleep(args.run_for)
        else:
            while True:
                time.sleep(0.5)
    finally:
        if bridge is not None:
            bridge.stop()
        if writer is not None:
            writer.close()
        shutil.rmtree(tmpdir, ignore_errors=True)
    return 0
