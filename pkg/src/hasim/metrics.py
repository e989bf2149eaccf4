"""Evaluation metrics over simulated traces.

Everything is sampled on a 1 Hz grid.  The bitrate at second ``t`` is the
bitrate of the latest segment requested at or before ``t``; the buffer at
``t`` is the level reported by the latest step that ended at or before ``t``.
"""

from __future__ import annotations

import bisect
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Sequence

from .adaptation import DEFAULT_LADDER, THIN
from .client_engine import ClientSpec, StepRecord, ThinParams, run_clients
from .fluid_link import BandwidthSchedule


class MetricUndefined(ValueError):
    """The metric has no value for the given inputs."""


# -- per-instant metrics ----------------------------------------------------


def instability(series: Sequence[float | None], t: int, k: int = 20) -> float:
    """Recency-weighted bitrate switching at second ``t`` over the last ``k`` seconds."""
    if t - k < 0 or t >= len(series):
        raise MetricUndefined(f"need samples over [{t - k}, {t}]")
    window = series[t - k:t + 1]
    if any(v is None for v in window):
        raise MetricUndefined(f"missing bitrate samples in [{t - k}, {t}]")
    num = den = 0.0
    for d in range(k):
        weight = k - d
        num += abs(series[t - d] - series[t - d - 1]) * weight
        den += series[t - d] * weight
    return num / den


def inefficiency(rates: Sequence[float], capacity: float) -> float:
    if not capacity > 0:
        raise ValueError("capacity must be positive")
    return max(0.0, capacity - sum(rates)) / capacity


def jain_index(rates: Sequence[float]) -> float:
    total = sum(rates)
    return total * total / (len(rates) * sum(r * r for r in rates))


def unfairness(rates: Sequence[float]) -> float:
    if len(rates) < 2:
        raise MetricUndefined("unfairness needs at least two clients")
    if any(r <= 0 for r in rates):
        raise MetricUndefined("unfairness needs positive rates")
    # clamp rounding that pushes the index a hair above 1
    return math.sqrt(max(0.0, 1.0 - jain_index(rates)))


def percentile_nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        raise MetricUndefined("percentile of an empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def buffer_undershoot(
    series: Sequence[float], interval: tuple[int, int], b_ref: float = 30.0
) -> float:
    """90th-percentile normalized dip below ``b_ref`` over seconds ``interval`` (inclusive)."""
    lo, hi = interval
    hi = min(hi, len(series) - 1)
    if lo > hi:
        raise MetricUndefined(f"empty interval {interval}")
    samples = [max(0.0, b_ref - series[t]) / b_ref for t in range(lo, hi + 1)]
    return percentile_nearest_rank(samples, 90)


# -- trace sampling ---------------------------------------------------------


def _sample_hold(times: list[float], values: list[float], n: int, before=None) -> list:
    out = []
    for t in range(n):
        i = bisect.bisect_right(times, t) - 1
        out.append(values[i] if i >= 0 else before)
    return out


def bitrate_series(records: Sequence[StepRecord], duration: float) -> list[float | None]:
    """Fetched bitrate per second over ``[0, duration]``; None before the first request."""
    n = int(math.floor(duration)) + 1
    return _sample_hold([r.request_time for r in records], [r.r for r in records], n)


def buffer_series(records: Sequence[StepRecord], duration: float) -> list[float]:
    n = int(math.floor(duration)) + 1
    return _sample_hold([r.next_request for r in records], [r.buffer for r in records], n, 0.0)


# -- report -----------------------------------------------------------------


def _mean(values):
    return statistics.fmean(values) if values else None


@dataclass
class MetricsReport:
    times: list[int] = field(default_factory=list)
    instability: list[float | None] = field(default_factory=list)
    inefficiency: list[float | None] = field(default_factory=list)
    unfairness: list[float | None] = field(default_factory=list)
    undershoot: dict[int, float] = field(default_factory=dict)
    client_instability: dict[int, float | None] = field(default_factory=dict)
    window: tuple[int, int] = (0, 0)
    undershoot_window: tuple[int, int] | None = None

    @property
    def mean_instability(self):
        return _mean([v for v in self.instability if v is not None])

    @property
    def mean_inefficiency(self):
        return _mean([v for v in self.inefficiency if v is not None])

    @property
    def mean_unfairness(self):
        return _mean([v for v in self.unfairness if v is not None])

    @property
    def mean_undershoot(self):
        return _mean(list(self.undershoot.values()))

    def summary(self) -> dict:
        return {
            "window": list(self.window),
            "undershoot_window": list(self.undershoot_window) if self.undershoot_window else None,
            "mean_instability": self.mean_instability,
            "mean_inefficiency": self.mean_inefficiency,
            "mean_unfairness": self.mean_unfairness,
            "mean_undershoot": self.mean_undershoot,
            "client_instability": {str(k): v for k, v in sorted(self.client_instability.items())},
            "client_undershoot": {str(k): v for k, v in sorted(self.undershoot.items())},
        }


def compute_report(
    records: dict[int, Sequence[StepRecord]],
    schedule: BandwidthSchedule,
    duration: float,
    window: tuple[float, float] | None = None,
    undershoot_window: tuple[float, float] | None = None,
    b_ref: float = 30.0,
    k: int = 20,
) -> MetricsReport:
    """Per-second metrics over ``window`` and per-client undershoot over ``undershoot_window``.

    Instability time samples average over the clients with enough history;
    inefficiency and unfairness use every client that has made a request.
    """
    lo, hi = window if window is not None else (0, duration)
    lo, hi = int(math.ceil(lo)), int(math.floor(min(hi, duration)))
    rates = {cid: bitrate_series(recs, duration) for cid, recs in records.items()}
    report = MetricsReport(window=(lo, hi))
    per_client: dict[int, list[float]] = {cid: [] for cid in records}

    for t in range(lo, hi + 1):
        inst, now = [], []
        for cid, s in rates.items():
            if s[t] is not None:
                now.append(s[t])
            try:
                v = instability(s, t, k)
            except MetricUndefined:
                continue
            inst.append(v)
            per_client[cid].append(v)
        report.times.append(t)
        report.instability.append(_mean(inst))
        report.inefficiency.append(inefficiency(now, schedule.capacity_at(t)) if now else None)
        try:
            report.unfairness.append(unfairness(now))
        except MetricUndefined:
            report.unfairness.append(None)

    report.client_instability = {cid: _mean(v) for cid, v in per_client.items()}
    if undershoot_window is not None:
        ulo, uhi = int(math.ceil(undershoot_window[0])), int(math.floor(undershoot_window[1]))
        report.undershoot_window = (ulo, uhi)
        for cid, recs in records.items():
            report.undershoot[cid] = buffer_undershoot(buffer_series(recs, duration), (ulo, uhi), b_ref)
    return report


# -- bandwidth cliff --------------------------------------------------------


def cliff_point(level, k_clients, capacity, tau, duration=300.0, warmup=150.0, seed=1) -> float:
    """Mean measured throughput of thin clients, normalized by the fair share."""
    rng = random.Random(seed)
    bitrate = level * capacity / k_clients
    population = [
        ClientSpec(THIN, ThinParams(bitrate, tau), start=rng.uniform(0, tau))
        for _ in range(k_clients)
    ]
    res = run_clients(population, BandwidthSchedule.constant(capacity), duration, DEFAULT_LADDER)
    samples = [r.x_tilde for r in res.all_records() if r.request_time >= warmup]
    if not samples:
        raise MetricUndefined("no downloads after warmup")
    return statistics.fmean(samples) / (capacity / k_clients)


def cliff_curve(levels, k_clients, capacity, tau, duration=300.0, warmup=150.0, seed=1):
    """Normalized measured throughput for each link subscription level."""
    if k_clients < 2:
        raise ValueError("the cliff curve needs at least two clients")
    return [
        (level, cliff_point(level, k_clients, capacity, tau, duration, warmup, seed))
        for level in levels
    ]
