"""Client rate adaptation: estimate, smooth, quantize, schedule.

Two estimator/scheduler pairs share one EWMA smoother and one dead-zone
quantizer:

* conventional: the estimate is the last measured throughput and requests
  are either back-to-back (buffer below ``b_max``) or one segment duration
  apart;
* probe-and-adapt: the target average data rate is raised additively by
  ``kappa * w`` per second and pulled down in proportion to how far the
  measured throughput falls short of it; the inter-request time is chosen so
  the average data rate tracks the smoothed target while steering the buffer
  toward ``b_min``.

All rates are bits/second and all times are seconds.
"""

from __future__ import annotations

import bisect
import warnings
from dataclasses import dataclass, replace
from enum import Enum

CONVENTIONAL = "conventional"
PANDA = "panda"
THIN = "thin"
ALGORITHMS = (CONVENTIONAL, PANDA, THIN)

# x_hat floor as a fraction of the lowest ladder rate
ESTIMATE_FLOOR = 0.05


class ConfigError(ValueError):
    """Invalid configuration or parameter set."""


class StabilityWarning(UserWarning):
    """Parameters outside the region where the control loops converge."""


@dataclass(frozen=True)
class BitrateLadder:
    rates: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if not rates:
            raise ConfigError("bitrate ladder is empty")
        if any(r <= 0 for r in rates):
            raise ConfigError("ladder rates must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("ladder rates must be strictly increasing")
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return len(self.rates)

    def __contains__(self, rate):
        return rate in self.rates

    @property
    def lowest(self) -> float:
        return self.rates[0]

    @property
    def highest(self) -> float:
        return self.rates[-1]

    def floor(self, limit: float) -> float | None:
        """Largest rate not above ``limit``, or None when every rate exceeds it."""
        i = bisect.bisect_right(self.rates, limit)
        return self.rates[i - 1] if i else None


DEFAULT_LADDER = BitrateLadder(
    tuple(k * 1000.0 for k in (459, 693, 937, 1270, 1745, 2536, 3758, 5379, 7861, 11321))
)


@dataclass(frozen=True)
class PandaParams:
    kappa: float = 0.14
    w: float = 0.3e6
    alpha: float = 0.2
    beta: float = 0.2
    epsilon: float = 0.15
    b_min: float = 26.0
    tau: float = 2.0
    # Quantization margin; None means the default choice Delta = w.
    delta: float | None = None

    def __post_init__(self):
        for name in ("kappa", "w", "alpha", "beta", "b_min", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.epsilon < 1:
            raise ConfigError("epsilon must lie in [0, 1)")
        if self.delta is not None and self.delta < 0:
            raise ConfigError("delta must be non-negative")

    @property
    def margin(self) -> float:
        return self.w if self.delta is None else self.delta

    def advisories(self) -> list[str]:
        notes = []
        if self.kappa >= 2 / self.tau:
            notes.append(
                f"kappa={self.kappa} >= 2/tau={2 / self.tau:g}: target rate will not converge"
            )
        if self.margin < self.w:
            notes.append(
                f"quantization margin {self.margin:g} < w={self.w:g}: buffer will not settle"
            )
        return notes


@dataclass(frozen=True)
class ConventionalParams:
    alpha: float = 0.2
    epsilon: float = 0.15
    b_max: float = 30.0
    tau: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "b_max", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.epsilon < 1:
            raise ConfigError("epsilon must lie in [0, 1)")


class Mode(str, Enum):
    STARTUP = "startup"
    STEADY = "steady"


@dataclass(frozen=True)
class AdaptState:
    x_hat: float
    y_hat: float
    r: float
    mode: Mode = Mode.STEADY


# -- estimating -------------------------------------------------------------


def conventional_estimate(x_tilde_prev: float) -> float:
    if not x_tilde_prev > 0:
        raise ValueError("measured throughput must be positive")
    return x_tilde_prev


def panda_estimate(x_hat_prev, x_tilde_prev, t_prev, p: PandaParams, floor=0.0):
    """One probing step: additive increase, shortfall-proportional decrease."""
    if not t_prev > 0:
        raise ValueError("inter-request time must be positive")
    if not (x_hat_prev > 0 and x_tilde_prev > 0):
        raise ValueError("rates must be positive")
    shortfall = max(0.0, x_hat_prev - x_tilde_prev)
    return max(floor, x_hat_prev + t_prev * p.kappa * (p.w - shortfall))


# -- smoothing --------------------------------------------------------------


def ewma_smooth(y_hat_prev, x_hat_now, t_prev, alpha):
    if not t_prev > 0:
        raise ValueError("inter-request time must be positive")
    if t_prev * alpha > 1:
        warnings.warn(
            f"smoother gain t*alpha={t_prev * alpha:.3g} > 1 overshoots",
            StabilityWarning,
            stacklevel=2,
        )
    return y_hat_prev - t_prev * alpha * (y_hat_prev - x_hat_now)


# -- quantizing -------------------------------------------------------------


def deadzone_quantize(y_hat, r_prev, ladder: BitrateLadder, delta_up, delta_down):
    """Hysteretic ladder selection.

    Upshift only when ``r_prev`` sits below the level reachable with the
    larger margin, downshift only when it sits above the level allowed by the
    smaller one, and hold in between.
    """
    if not len(ladder):
        raise ConfigError("bitrate ladder is empty")
    if not delta_up >= delta_down >= 0:
        raise ValueError("margins must satisfy delta_up >= delta_down >= 0")
    r_up = ladder.floor(y_hat - delta_up)
    r_down = ladder.floor(y_hat - delta_down)
    if r_down is None:
        return ladder.lowest
    if r_up is None:
        r_up = ladder.lowest
    if r_prev < r_up:
        return r_up
    if r_prev <= r_down:
        return r_prev
    return r_down


def panda_margins(y_hat, p: PandaParams) -> tuple[float, float]:
    if not y_hat > 0:
        raise ValueError("y_hat must be positive")
    return p.margin + p.epsilon * y_hat, p.margin


def conventional_margins(y_hat, epsilon) -> tuple[float, float]:
    return epsilon * y_hat, 0.0


# -- scheduling -------------------------------------------------------------


def conventional_schedule(b_prev, c: ConventionalParams) -> float:
    """Bimodal: fetch back-to-back until the buffer is full, then every tau."""
    if b_prev < 0:
        raise ValueError("buffer cannot be negative")
    return 0.0 if b_prev < c.b_max else c.tau


def panda_schedule(r, y_hat, b_prev, p: PandaParams) -> float:
    if not y_hat > 0:
        raise ValueError("y_hat must be positive")
    if b_prev < 0:
        raise ValueError("buffer cannot be negative")
    return max(0.0, r * p.tau / y_hat + p.beta * (b_prev - p.b_min))


def equilibrium_buffer(r_o, y_hat_o, p: PandaParams) -> float:
    """Buffer level at which the probing scheduler returns exactly tau."""
    return p.b_min + (1 - r_o / y_hat_o) * p.tau / p.beta


def thin_client_next(now, tau, t_tilde=0.0) -> float:
    """Next request time of a fixed-bitrate client that last requested at ``now``."""
    return now + max(tau, t_tilde)


# -- composition ------------------------------------------------------------


def initial_state(x_tilde_first, ladder: BitrateLadder, algo, startup=True) -> AdaptState:
    """State after the bootstrap segment fetched at the lowest rate."""
    mode = Mode.STARTUP if (algo == PANDA and startup) else Mode.STEADY
    return AdaptState(x_tilde_first, x_tilde_first, ladder.lowest, mode)


def adaptation_step(state: AdaptState, x_tilde_prev, t_prev, b_prev, algo, params, ladder):
    """Run estimate, smooth, quantize, schedule for the next step.

    Returns ``(new_state, r, t_hat)``.  A probing client in startup mode runs
    the conventional pipeline until the buffer reaches ``b_min`` and then
    switches to probing for good.
    """
    mode = state.mode
    floor = ESTIMATE_FLOOR * ladder.lowest
    if algo == PANDA and mode is Mode.STARTUP and b_prev >= params.b_min:
        mode = Mode.STEADY

    if algo == CONVENTIONAL or mode is Mode.STARTUP:
        x_hat = conventional_estimate(x_tilde_prev)
        y_hat = max(floor, ewma_smooth(state.y_hat, x_hat, t_prev, params.alpha))
        d_up, d_down = conventional_margins(y_hat, params.epsilon)
        r = deadzone_quantize(y_hat, state.r, ladder, d_up, d_down)
        if algo == CONVENTIONAL:
            t_hat = conventional_schedule(b_prev, params)
        else:
            t_hat = 0.0
    elif algo == PANDA:
        x_hat = panda_estimate(state.x_hat, x_tilde_prev, t_prev, params, floor)
        # long stalls push t*alpha past 1, where the smoother can overshoot below zero
        y_hat = max(floor, ewma_smooth(state.y_hat, x_hat, t_prev, params.alpha))
        d_up, d_down = panda_margins(y_hat, params)
        r = deadzone_quantize(y_hat, state.r, ladder, d_up, d_down)
        t_hat = panda_schedule(r, y_hat, b_prev, params)
    else:
        raise ConfigError(f"unknown adapting algorithm {algo!r}")

    return replace(state, x_hat=x_hat, y_hat=y_hat, r=r, mode=mode), r, t_hat
