"""Session configuration: a single JSON file describing streams, the
processing graph, and run parameters. Validated before anything starts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .streams import StreamKind

KNOWN_STAGES = {"bandpass", "anc", "peaks", "hr"}

SIM_SOURCES = {
    "sim:ecg": (StreamKind.ECG, 1000.0, 1),
    "sim:ppg:rest": (StreamKind.PPG, 100.0, 1),
    "sim:ppg:walk": (StreamKind.PPG, 100.0, 1),
    "sim:acc:rest": (StreamKind.ACC, 100.0, 3),
    "sim:acc:walk": (StreamKind.ACC, 100.0, 3),
    "sim:eeg": (StreamKind.EEG, 128.0, 4),
    "sim:gaze": (StreamKind.GAZE, 30.0, 3),
    "sim:markers": (StreamKind.MARKER, 0.0, 0),
}


@dataclass
class StreamSpec:
    name: str
    source: str
    kind: StreamKind
    nominal_rate_hz: float
    channel_count: int
    channel_labels: list[str] = field(default_factory=list)
    units: list[str] = field(default_factory=list)


@dataclass
class StageSpec:
    stage: str
    stream: str
    params: dict = field(default_factory=dict)


@dataclass
class SessionConfig:
    version: int = 1
    seed: int = 0
    duration_s: float = 10.0
    clock_sync: bool = False
    streams: list[StreamSpec] = field(default_factory=list)
    processing: list[StageSpec] = field(default_factory=list)
    dashboard_port: int = 8765
    out_dir: str = "."

    def stream(self, name: str) -> StreamSpec:
        for s in self.streams:
            if s.name == name:
                return s
        raise ConfigError(f"unknown stream {name!r}")


def _parse_stream(d: dict, idx: int) -> StreamSpec:
    if "name" not in d or "source" not in d:
        raise ConfigError(f"streams[{idx}] needs 'name' and 'source'")
    source = d["source"]
    if source in SIM_SOURCES:
        kind, rate, chans = SIM_SOURCES[source]
    elif source.startswith("tcp:"):
        kind, rate, chans = None, None, None
    else:
        raise ConfigError(f"streams[{idx}]: unknown source {source!r}")
    try:
        kind = StreamKind(d["kind"]) if "kind" in d else kind
        rate = float(d["rate_hz"]) if "rate_hz" in d else rate
        chans = int(d["channels"]) if "channels" in d else chans
    except (ValueError, TypeError) as e:
        raise ConfigError(f"streams[{idx}]: {e}") from e
    if kind is None or rate is None or chans is None:
        raise ConfigError(
            f"streams[{idx}]: tcp sources must declare kind, rate_hz and channels")
    labels = list(d.get("channel_labels") or [])
    if labels and len(labels) != chans:
        raise ConfigError(f"streams[{idx}]: {len(labels)} labels for {chans} channels")
    return StreamSpec(name=d["name"], source=source, kind=kind,
                      nominal_rate_hz=rate, channel_count=chans,
                      channel_labels=labels, units=list(d.get("units") or []))


def _parse_stage(d: dict, idx: int, names: set) -> StageSpec:
    stage = d.get("stage")
    if stage not in KNOWN_STAGES:
        raise ConfigError(f"processing[{idx}]: unknown stage {stage!r}")
    stream = d.get("stream")
    if stream not in names:
        raise ConfigError(f"processing[{idx}]: undeclared stream {stream!r}")
    params = dict(d.get("params") or {})
    if stage == "anc":
        refs = params.get("references")
        if refs not in names:
            raise ConfigError(
                f"processing[{idx}]: anc needs params.references naming a declared stream")
    return StageSpec(stage=stage, stream=stream, params=params)


def validate_config(raw: dict) -> SessionConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if raw.get("version") != 1:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}")
    streams = [_parse_stream(s, i) for i, s in enumerate(raw.get("streams") or [])]
    if not streams:
        raise ConfigError("config declares no streams")
    names = [s.name for s in streams]
    if len(set(names)) != len(names):
        raise ConfigError("stream names must be unique")
    stages = [_parse_stage(s, i, set(names))
              for i, s in enumerate(raw.get("processing") or [])]
    try:
        cfg = SessionConfig(
            version=1,
            seed=int(raw.get("seed", 0)),
            duration_s=float(raw.get("duration_s", 10.0)),
            clock_sync=bool(raw.get("clock_sync", False)),
            streams=streams,
            processing=stages,
            dashboard_port=int(raw.get("dashboard_port", 8765)),
            out_dir=str(raw.get("out_dir", ".")),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if cfg.duration_s < 0:
        raise ConfigError("duration_s must be non-negative")
    return cfg


def load_config(path) -> SessionConfig:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return validate_config(raw)
