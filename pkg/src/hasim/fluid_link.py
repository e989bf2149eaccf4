"""Idealized fair-share bottleneck link.

Every active flow drains at ``C(t) / A(t)`` where ``A(t)`` is the number of
active flows.  Because all flows drain at the same instantaneous rate, the
link keeps a single cumulative per-flow service counter (bits delivered to
any flow that has been active since time 0) and gives each flow a finish tag
``service_at_admit + size``.  Completions then come out of a heap in tag
order and every completion time is solved analytically between events.
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field

# Completions whose times fall within this window are coalesced into one event.
COALESCE_S = 1e-12
# Requests may trail the link clock by this much after a coalesced completion.
TIME_SLACK_S = 1e-9


class LinkError(ValueError):
    """Rejected input to the fluid link."""


@dataclass(frozen=True)
class BandwidthSchedule:
    """Piecewise-constant capacity, ``breakpoints`` as ``(time_s, bits_per_s)``."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bps = tuple((float(t), float(c)) for t, c in self.breakpoints)
        if not bps:
            raise LinkError("bandwidth schedule needs at least one breakpoint")
        if bps[0][0] != 0.0:
            raise LinkError("first breakpoint must be at t=0")
        for (t0, _), (t1, _) in zip(bps, bps[1:]):
            if not t1 > t0:
                raise LinkError("breakpoint times must be strictly increasing")
        for _, c in bps:
            if not c > 0:
                raise LinkError("capacity must be positive")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "_times", [t for t, _ in bps])

    @classmethod
    def constant(cls, capacity: float) -> "BandwidthSchedule":
        return cls(((0.0, capacity),))

    def capacity_at(self, t: float) -> float:
        i = bisect.bisect_right(self._times, t) - 1
        return self.breakpoints[max(i, 0)][1]

    def next_breakpoint_after(self, t: float) -> float:
        i = bisect.bisect_right(self._times, t)
        return self._times[i] if i < len(self._times) else math.inf


@dataclass
class GapLog:
    """Intervals during which no flow is active."""

    intervals: list[tuple[float, float]] = field(default_factory=list)

    def total(self) -> float:
        return sum(b - a for a, b in self.intervals)


@dataclass(frozen=True)
class RateSegment:
    """A stretch of time with a fixed set of active flows."""

    start: float
    end: float
    rate: float  # per-flow drain rate
    flows: tuple[int, ...]


def measured_throughput(size: float, start: float, completion: float) -> float:
    """Average download rate of a transfer of ``size`` bits."""
    if not completion > start:
        raise LinkError("throughput undefined for a zero-duration download")
    return size / (completion - start)


class FluidLink:
    """Event-driven fluid model of a single shared bottleneck.

    ``record_segments`` keeps the full piecewise-constant rate history, which
    the property tests integrate to check conservation and periodicity.
    """

    def __init__(self, schedule: BandwidthSchedule, record_segments: bool = False):
        self.schedule = schedule
        self.now = 0.0
        self.capacity = schedule.capacity_at(0.0)
        self._service = 0.0
        self._heap: list[tuple[float, int]] = []
        self._flows: dict[int, tuple[int, float, float]] = {}  # id -> owner, tag, size
        self._next_id = 0
        self._gap_start: float | None = 0.0
        self._gaps = GapLog()
        self.record_segments = record_segments
        self.segments: list[RateSegment] = []
        self.owners: dict[int, int] = {}  # kept with segments, flow id -> owner

    # -- ledger views -------------------------------------------------------

    @property
    def active(self) -> int:
        return len(self._flows)

    def residual(self, flow_id: int) -> float:
        return self._flows[flow_id][1] - self._service

    def owner(self, flow_id: int) -> int:
        return self._flows[flow_id][0]

    def flows(self) -> dict[int, tuple[int, float]]:
        """Active flows as ``{flow_id: (owner, residual_bits)}``."""
        return {fid: (o, tag - self._service) for fid, (o, tag, _) in self._flows.items()}

    @property
    def gap_log(self) -> GapLog:
        intervals = list(self._gaps.intervals)
        if self._gap_start is not None and self.now > self._gap_start:
            intervals.append((self._gap_start, self.now))
        return GapLog(intervals)

    # -- operations ---------------------------------------------------------

    def admit_flow(self, owner: int, size: float, now: float) -> int:
        if not size > 0:
            raise LinkError(f"flow size must be positive, got {size!r}")
        if now < self.now - TIME_SLACK_S:
            raise LinkError(f"cannot admit at {now} before link time {self.now}")
        if now > self.now:
            self.advance_to(now)
        if self._gap_start is not None:
            if self.now > self._gap_start:
                self._gaps.intervals.append((self._gap_start, self.now))
            self._gap_start = None
        fid = self._next_id
        self._next_id += 1
        tag = self._service + size
        self._flows[fid] = (owner, tag, size)
        if self.record_segments:
            self.owners[fid] = owner
        heapq.heappush(self._heap, (tag, fid))
        return fid

    def next_completion(self) -> float:
        """Time of the next flow completion, accounting for capacity changes."""
        if not self._flows:
            return math.inf
        tag = self._heap[0][0]
        t, service, cap = self.now, self._service, self.capacity
        n = len(self._flows)
        while True:
            t_done = t + (tag - service) * n / cap
            t_bp = self.schedule.next_breakpoint_after(t)
            if t_done < t_bp:
                return t_done
            service += (t_bp - t) * (cap / n)
            t, cap = t_bp, self.schedule.capacity_at(t_bp)

    def advance_to(self, t_target: float) -> list[tuple[int, float]]:
        """Move the clock forward, returning ``(flow_id, completion_time)`` pairs."""
        if t_target < self.now - TIME_SLACK_S:
            raise LinkError(f"time runs forward only ({t_target} < {self.now})")
        done: list[tuple[int, float]] = []
        while True:
            t_bp = self.schedule.next_breakpoint_after(self.now)
            t_done = math.inf
            if self._flows:
                t_done = self.now + (self._heap[0][0] - self._service) * len(self._flows) / self.capacity
            # capacity changes win ties with completions
            if t_bp <= t_target and t_bp <= t_done:
                self._drain(t_bp)
                self.capacity = self.schedule.capacity_at(t_bp)
                continue
            if t_done <= t_target + COALESCE_S:
                done.extend(self._complete(t_done))
                continue
            break
        if t_target > self.now:
            self._drain(t_target)
        return done

    # -- internals ----------------------------------------------------------

    def _drain(self, t: float) -> None:
        if self._flows and t > self.now:
            rate = self.capacity / len(self._flows)
            if self.record_segments:
                self.segments.append(RateSegment(self.now, t, rate, tuple(sorted(self._flows))))
            self._service += (t - self.now) * rate
        self.now = t

    def _complete(self, t_done: float) -> list[tuple[int, float]]:
        n = len(self._flows)
        rate = self.capacity / n
        tag = self._heap[0][0]
        if self.record_segments and t_done > self.now:
            self.segments.append(RateSegment(self.now, t_done, rate, tuple(sorted(self._flows))))
        # pin the service counter to the finishing tag so the finishing flow
        # receives exactly its admitted size
        self._service = max(self._service, tag)
        self.now = max(self.now, t_done)
        slack = rate * COALESCE_S
        finished = []
        while self._heap and self._heap[0][0] - self._service <= slack:
            _, fid = heapq.heappop(self._heap)
            finished.append(fid)
        finished.sort()
        for fid in finished:
            del self._flows[fid]
        if not self._flows:
            self._gap_start = self.now
            # rebase to keep the counter small and exact across idle periods
            self._service = 0.0
        return [(fid, self.now) for fid in finished]
