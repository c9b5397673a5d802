"""Lossy broadcast network with fixed latency."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BroadcastBus:
    latency: float = 0.0
    drop: float = 0.0
    queue: deque = field(default_factory=deque)  # (deliver_at, seq, message)
    sent: int = 0
    delivered: int = 0
    dropped: int = 0

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.drop <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")

    def send(self, message, t: float) -> None:
        # a single FIFO with constant latency preserves per-sender order
        self.queue.append((t + self.latency, self.sent, message))
        self.sent += 1


def broadcast_deliver(bus: BroadcastBus, t: float, rng: np.random.Generator) -> list:
    """Pop every message due by ``t``; each survives with probability ``1 - drop``."""
    out = []
    while bus.queue and bus.queue[0][0] <= t + 1e-9:
        _, _, msg = bus.queue.popleft()
        if bus.drop > 0.0 and rng.random() < bus.drop:
            bus.dropped += 1
            continue
        out.append(msg)
        bus.delivered += 1
    return out
