"""biostream: a multi-modal bio-sensing stream platform.

Synchronized sensor streams over a small binary wire protocol, with the
signal-processing stack needed to turn them into physiology: band-passed and
ANC-cleaned PPG heart rate, online ICA for EEG with scalp maps, polynomial
gaze calibration with visual-angle metrics, and scripted evaluation
protocols. Everything runs against seeded synthetic generators, so no
hardware is required.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ProtocolError
from .streams import AlignedFrame, Chunk, Session, StreamInfo, StreamKind
from .sync import ClockExchange, estimate_clock_offset

__all__ = [
    "AlignedFrame",
    "Chunk",
    "ClockExchange",
    "ConfigError",
    "ProtocolError",
    "Session",
    "StreamInfo",
    "StreamKind",
    "estimate_clock_offset",
    "__version__",
]
