"""Clock-offset estimation between stream sources.

NTP-style two-way exchanges: the collector sends a ping at local t0, the
sensor stamps receipt t1 and reply t2 on its own clock, the collector stamps
arrival t3. Offset here always means (sensor clock - collector clock), so a
sensor timestamp is brought onto the collector clock by subtracting it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class ClockExchange:
    t0: float
    t1: float
    t2: float
    t3: float

    def rtt(self) -> float:
        return (self.t3 - self.t0) - (self.t2 - self.t1)

    def offset(self) -> float:
        return 0.5 * ((self.t1 - self.t0) + (self.t2 - self.t3))


def estimate_clock_offset(exchanges) -> tuple[float, float]:
    """Offset and round-trip time from a burst of exchanges.

    Picks the exchange with the minimal RTT (most trustworthy sample: the
    estimate's error is bounded by rtt/2 under symmetric delay) and returns
    its (offset, rtt).
    """
    exchanges = list(exchanges)
    if not exchanges:
        raise ValueError("need at least one clock exchange")
    best = min(exchanges, key=ClockExchange.rtt)
    return best.offset(), best.rtt()


BURST_SIZE = 10
BURST_INTERVAL_S = 5.0


class OffsetTracker:
    """Latest per-source clock offset, piecewise constant between bursts."""

    def __init__(self):
        self._lock = threading.Lock()
        self._est: dict[str, tuple[float, float]] = {}

    def record_burst(self, source_id: str, exchanges) -> tuple[float, float]:
        off, rtt = estimate_clock_offset(exchanges)
        with self._lock:
            self._est[source_id] = (off, rtt)
        return off, rtt

    def offset_for(self, source_id: str) -> float:
        with self._lock:
            est = self._est.get(source_id)
        return est[0] if est else 0.0

    def known(self, source_id: str) -> bool:
        with self._lock:
            return source_id in self._est
