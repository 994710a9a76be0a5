"""Discrete-event simulation core.

The virtual clock is an integer count of milliseconds starting at zero.
Events fire in (fire_time, insertion sequence) order, so runs with the same
seed replay identically. Randomness is drawn from named per-component
streams that only depend on (seed, stream_id).
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random


class InvariantViolation(Exception):
    """A core correctness property was broken; the run must abort."""


class RngStream(random.Random):
    """Deterministic random stream, stable across runs and platforms."""

    def __new__(cls, seed: int, stream_id: str):
        return super().__new__(cls)

    def __init__(self, seed: int, stream_id: str):
        digest = hashlib.sha256(f"{seed}/{stream_id}".encode()).digest()
        super().__init__(int.from_bytes(digest[:8], "big"))
        self.stream_id = stream_id


class EventHandle:
    """Pending event; also the heap entry. cancel() flips the flag."""

    __slots__ = ("fire_time", "seq", "target", "payload", "cancelled")

    def __init__(self, fire_time, seq, target, payload):
        self.fire_time = fire_time
        self.seq = seq
        self.target = target
        self.payload = payload
        self.cancelled = False

    def __lt__(self, other):
        if self.fire_time != other.fire_time:
            return self.fire_time < other.fire_time
        return self.seq < other.seq


class LinkModel:
    """Point-to-point delivery model: base latency, jitter, drop chance."""

    def __init__(self, base_ms: int = 1, jitter=None, drop_probability: float = 0.0):
        if base_ms < 0:
            raise ValueError("link base latency must be >= 0")
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")
        self.base_ms = int(base_ms)
        self.jitter = jitter
        self.drop_probability = float(drop_probability)

    def sample_latency_ms(self, rng) -> int:
        latency = float(self.base_ms)
        if self.jitter is not None:
            latency += max(0.0, self.jitter.sample(rng))
        return max(0, round(latency))


class Simulator:
    """Owns the clock, the event queue, rng streams, and the trace log."""

    def __init__(self, seed: int = 0, trace_file=None):
        self.seed = int(seed)
        self.now = 0
        self._heap: list[EventHandle] = []
        self._seq = 0
        self._handlers: dict[str, object] = {}
        self._streams: dict[str, RngStream] = {}
        self._trace_file = trace_file
        self.events_fired = 0
        self.events_dropped_dead_target = 0
        self.messages_dropped = 0

    # ------------------------------------------------------------- rng

    def rng(self, stream_id: str) -> RngStream:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = RngStream(self.seed, stream_id)
            self._streams[stream_id] = stream
        return stream

    # ------------------------------------------------------- components

    def register(self, component_id: str, handler) -> None:
        if component_id in self._handlers:
            raise ValueError(f"component {component_id!r} already registered")
        self._handlers[component_id] = handler

    def unregister(self, component_id: str) -> None:
        self._handlers.pop(component_id, None)

    def is_registered(self, component_id: str) -> bool:
        return component_id in self._handlers

    # ----------------------------------------------------------- events

    def schedule(self, delay_ms: int, target: str, payload) -> EventHandle:
        if delay_ms < 0:
            raise ValueError(f"cannot schedule {delay_ms} ms in the past")
        return self.schedule_at(self.now + int(delay_ms), target, payload)

    def schedule_at(self, fire_time: int, target: str, payload) -> EventHandle:
        if fire_time < self.now:
            raise ValueError(f"fire time {fire_time} predates clock {self.now}")
        handle = EventHandle(int(fire_time), self._seq, target, payload)
        self._seq += 1
        heapq.heappush(self._heap, handle)
        return handle

    def cancel(self, handle: EventHandle) -> None:
        # Cancelling an event that already fired is a harmless no-op.
        handle.cancelled = True

    def deliver(self, target: str, payload, link: LinkModel, rng) -> int | None:
        """Send over a lossy link. Returns the latency or None when dropped."""
        if link.drop_probability > 0.0 and rng.random() < link.drop_probability:
            self.messages_dropped += 1
            return None
        latency = link.sample_latency_ms(rng)
        self.schedule(latency, target, payload)
        return latency

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise ValueError(f"cannot run until {t_end}, clock is at {self.now}")
        heap = self._heap
        while heap and heap[0].fire_time <= t_end:
            event = heapq.heappop(heap)
            if event.cancelled:
                continue
            if event.fire_time < self.now:
                raise InvariantViolation(
                    f"event at {event.fire_time} observed after clock {self.now}"
                )
            self.now = event.fire_time
            handler = self._handlers.get(event.target)
            if handler is None:
                self.events_dropped_dead_target += 1
                continue
            self.events_fired += 1
            handler(event.payload)
        self.now = t_end
        return self.now

    def run_to_quiescence(self, hard_limit: int) -> int:
        """Drain every pending event, refusing to pass hard_limit."""
        while self._heap:
            horizon = min(self._heap[0].fire_time, hard_limit)
            self.run_until(horizon)
            if horizon >= hard_limit:
                break
        return self.now

    def pending_count(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)

    # ------------------------------------------------------------ trace

    def trace(self, component: str, kind: str, **fields) -> None:
        if self._trace_file is None:
            return
        record = {"t": self.now, "component": component, "kind": kind}
        record.update(fields)
        self._trace_file.write(json.dumps(record, sort_keys=True) + "\n")
