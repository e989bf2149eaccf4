"""Segment request loop for a population of clients sharing one fluid link."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .adaptation import (
    CONVENTIONAL,
    PANDA,
    THIN,
    AdaptState,
    BitrateLadder,
    ConfigError,
    ConventionalParams,
    Mode,
    PandaParams,
    adaptation_step,
    initial_state,
    thin_client_next,
)
from .fluid_link import BandwidthSchedule, FluidLink, GapLog, measured_throughput


class SimulationError(RuntimeError):
    """Internal consistency failure; the run cannot continue."""


@dataclass(frozen=True)
class ThinParams:
    """Non-adaptive client fetching ``bitrate * tau`` bits every ``tau`` seconds."""

    bitrate: float
    tau: float = 2.0

    def __post_init__(self):
        if not self.bitrate > 0:
            raise ConfigError("thin client bitrate must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


@dataclass(frozen=True)
class ClientSpec:
    algorithm: str
    params: PandaParams | ConventionalParams | ThinParams
    start: float = 0.0
    startup: bool = True
    restart_after_stall: bool = False
    playout_start: float | None = None
    resume_threshold: float | None = None

    def __post_init__(self):
        expected = {PANDA: PandaParams, CONVENTIONAL: ConventionalParams, THIN: ThinParams}
        if self.algorithm not in expected:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not isinstance(self.params, expected[self.algorithm]):
            raise ConfigError(f"{self.algorithm} client needs {expected[self.algorithm].__name__}")
        if self.start < 0:
            raise ConfigError("start offset must be non-negative")

    @property
    def tau(self) -> float:
        return self.params.tau

    def playout_threshold(self) -> float:
        if self.playout_start is not None:
            return self.playout_start
        if self.algorithm == PANDA:
            return self.params.b_min
        if self.algorithm == CONVENTIONAL:
            return self.params.b_max / 2
        return self.tau

    def resume_level(self) -> float:
        return self.resume_threshold if self.resume_threshold is not None else 2 * self.tau


STEP_FIELDS = (
    "client", "n", "request_time", "r", "t_tilde", "t_hat", "t_actual",
    "x_tilde", "x_hat", "y_hat", "buffer", "x",
)


@dataclass(frozen=True)
class StepRecord:
    client: int
    n: int
    request_time: float
    r: float
    t_tilde: float
    t_hat: float
    t_actual: float
    x_tilde: float
    x_hat: float
    y_hat: float
    buffer: float
    x: float

    @property
    def completion(self) -> float:
        return self.request_time + self.t_tilde

    @property
    def next_request(self) -> float:
        return self.request_time + self.t_actual


@dataclass
class ClientState:
    adapt: AdaptState | None = None
    buffer: float = 0.0
    playout_started: bool = False
    stalled: bool = False
    next_request: float = 0.0
    n: int = 0
    # decisions for the step currently in flight
    r: float = 0.0
    t_hat: float = 0.0
    request_time: float = math.nan
    flow: int | None = None


class Client:
    def __init__(self, cid: int, spec: ClientSpec, ladder: BitrateLadder):
        self.id = cid
        self.spec = spec
        self.ladder = ladder
        self.state = ClientState(next_request=spec.start)
        self.stalls: list[tuple[float, float | None]] = []
        if spec.algorithm == THIN:
            self.state.r = spec.params.bitrate
            self.state.t_hat = spec.tau
        else:
            # bootstrap segment at the lowest rate, requested immediately
            self.state.r = ladder.lowest
            self.state.t_hat = 0.0

    def segment_bits(self) -> float:
        return self.state.r * self.spec.tau

    def start_request(self, now: float, flow: int) -> None:
        st = self.state
        st.n += 1
        st.request_time = now
        st.flow = flow

    def on_download_complete(self, completion: float) -> StepRecord:
        st, tau = self.state, self.spec.tau
        if st.flow is None or not completion > st.request_time:
            raise SimulationError(
                f"client {self.id}: completion {completion} not after request {st.request_time}"
            )
        t_tilde = completion - st.request_time
        x_tilde = measured_throughput(st.r * tau, st.request_time, completion)
        t_actual = max(st.t_hat, t_tilde)
        b_prev = st.buffer
        st.buffer = max(0.0, b_prev + tau - t_actual)
        self._playout_stall_policy(st.request_time + t_actual)

        if self.spec.algorithm == THIN:
            x_hat = y_hat = x_tilde
        else:
            if st.adapt is None:
                st.adapt = initial_state(x_tilde, self.ladder, self.spec.algorithm, self.spec.startup)
            x_hat, y_hat = st.adapt.x_hat, st.adapt.y_hat

        rec = StepRecord(
            client=self.id, n=st.n, request_time=st.request_time, r=st.r,
            t_tilde=t_tilde, t_hat=st.t_hat, t_actual=t_actual, x_tilde=x_tilde,
            x_hat=x_hat, y_hat=y_hat, buffer=st.buffer, x=st.r * tau / t_actual,
        )

        if self.spec.algorithm == THIN:
            st.next_request = thin_client_next(st.request_time, tau, t_tilde)
        else:
            new, r, t_hat = adaptation_step(
                st.adapt, x_tilde, t_actual, st.buffer, self.spec.algorithm,
                self.spec.params, self.ladder,
            )
            st.adapt, st.r, st.t_hat = new, r, t_hat
            st.next_request = st.request_time + t_actual
        st.flow = None
        return rec

    def _playout_stall_policy(self, now: float) -> str:
        st = self.state
        if not st.playout_started:
            if st.buffer >= self.spec.playout_threshold():
                st.playout_started = True
            return "playing" if st.playout_started else "idle"
        if not st.stalled and st.buffer <= 0.0:
            st.stalled = True
            self.stalls.append((now, None))
            if self.spec.restart_after_stall and st.adapt is not None and self.spec.algorithm == PANDA:
                st.adapt = AdaptState(st.adapt.x_hat, st.adapt.y_hat, st.adapt.r, Mode.STARTUP)
        elif st.stalled and st.buffer >= self.spec.resume_level():
            st.stalled = False
            self.stalls[-1] = (self.stalls[-1][0], now)
        return "stalled" if st.stalled else "playing"


def on_download_complete(client: Client, completion: float) -> StepRecord:
    return client.on_download_complete(completion)


def playout_stall_policy(client: Client) -> str:
    """Re-evaluate a client's playout state from its current buffer."""
    return client._playout_stall_policy(client.state.next_request)


@dataclass
class SimResult:
    records: dict[int, list[StepRecord]]
    gaps: GapLog
    stalls: dict[int, list[tuple[float, float | None]]]
    link: FluidLink
    specs: list[ClientSpec] = field(default_factory=list)

    def all_records(self) -> list[StepRecord]:
        return [r for cid in sorted(self.records) for r in self.records[cid]]


def run_clients(
    population: list[ClientSpec],
    schedule: BandwidthSchedule,
    duration: float,
    ladder: BitrateLadder,
    record_segments: bool = False,
) -> SimResult:
    """Simulate every client until ``duration``.

    Requests at or after ``duration`` are not issued and downloads still in
    flight at the end are not reported.  Completions win ties with requests.
    """
    if not population:
        raise ConfigError("population is empty")
    if not duration > 0:
        raise ConfigError("duration must be positive")

    link = FluidLink(schedule, record_segments=record_segments)
    clients = [Client(i, spec, ladder) for i, spec in enumerate(population)]
    by_flow: dict[int, Client] = {}
    records: dict[int, list[StepRecord]] = {c.id: [] for c in clients}
    pending = [(c.state.next_request, c.id) for c in clients]
    heapq.heapify(pending)

    while True:
        t_req = pending[0][0] if pending else math.inf
        t_done = link.next_completion()
        if min(t_req, t_done) >= duration:
            break
        if t_done <= t_req:
            for fid, t in link.advance_to(t_done):
                c = by_flow.pop(fid)
                records[c.id].append(c.on_download_complete(t))
                heapq.heappush(pending, (c.state.next_request, c.id))
        else:
            link.advance_to(t_req)
            while pending and pending[0][0] == t_req:
                _, cid = heapq.heappop(pending)
                c = clients[cid]
                fid = link.admit_flow(cid, c.segment_bits(), t_req)
                c.start_request(t_req, fid)
                by_flow[fid] = c
    link.advance_to(max(duration, link.now))

    return SimResult(
        records=records,
        gaps=link.gap_log,
        stalls={c.id: list(c.stalls) for c in clients},
        link=link,
        specs=list(population),
    )
