"""Scenario configuration, presets, and on-disk run artifacts.

Config files are INI text.  The ``[scenario]`` section holds run-wide keys
and every ``[clients.<name>]`` section describes a group of identical
clients.  Rates accept ``bps``/``kbps``/``Mbps``/``Gbps`` suffixes; a bare
number is bits/second.  See README.md for the full key list.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import random
import re
import warnings
from dataclasses import asdict, dataclass, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__
from .adaptation import (
    CONVENTIONAL,
    DEFAULT_LADDER,
    PANDA,
    THIN,
    BitrateLadder,
    ConfigError,
    ConventionalParams,
    PandaParams,
    StabilityWarning,
)
from .client_engine import STEP_FIELDS, ClientSpec, StepRecord, ThinParams, run_clients
from .fluid_link import BandwidthSchedule, LinkError
from .metrics import cliff_curve, compute_report

log = logging.getLogger(__name__)

SCENARIO_KEYS = {
    "tau", "duration", "seed", "ladder", "schedule", "output", "window",
    "undershoot_window", "buffer_ref", "cliff_levels", "cliff_warmup",
}
REQUIRED_SCENARIO_KEYS = {"schedule", "duration"}
COMMON_GROUP_KEYS = {"algorithm", "count", "offsets", "playout_start", "resume_threshold"}
GROUP_KEYS = {
    PANDA: COMMON_GROUP_KEYS | {
        "kappa", "w", "alpha", "beta", "epsilon", "b_min", "delta", "startup",
        "restart_after_stall",
    },
    CONVENTIONAL: COMMON_GROUP_KEYS | {"alpha", "epsilon", "b_max"},
    THIN: COMMON_GROUP_KEYS | {"bitrate"},
}
RATE_KEYS = {"w", "delta", "bitrate"}

PRESETS = (
    "fig1", "fig4", "fig7", "fig8", "fig9", "fig12a", "fig12b",
    "tradeoff", "scale_fixed", "scale_ratio",
)

_UNITS = {"": 1, "bps": 1, "kbps": 10**3, "mbps": 10**6, "gbps": 10**9}
_RATE_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]*)\s*$")


# -- value parsing ----------------------------------------------------------


def parse_rate(text: str) -> float:
    m = _RATE_RE.match(text)
    unit = m.group(2).lower() if m else None
    if not m or unit not in _UNITS:
        raise ValueError(f"not a rate: {text!r}")
    try:
        return float(Decimal(m.group(1)) * _UNITS[unit])
    except InvalidOperation:
        raise ValueError(f"not a rate: {text!r}") from None


def parse_seconds(text: str) -> float:
    text = text.strip()
    if text.endswith("s"):
        text = text[:-1]
    return float(text)


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def fmt_number(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def _floats(text: str, parse=float) -> tuple:
    return tuple(parse(part) for part in text.split(",") if part.strip())


# -- config model -----------------------------------------------------------


@dataclass(frozen=True)
class ClientGroup:
    name: str
    algorithm: str
    params: PandaParams | ConventionalParams | ThinParams
    count: int = 1
    # "uniform" draws each start offset from [0, tau); otherwise explicit seconds
    offsets: str | tuple[float, ...] = "uniform"
    startup: bool = True
    restart_after_stall: bool = False
    playout_start: float | None = None
    resume_threshold: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    groups: tuple[ClientGroup, ...]
    schedule: BandwidthSchedule
    duration: float
    ladder: BitrateLadder = DEFAULT_LADDER
    tau: float = 2.0
    seed: int = 1
    output: str = "runs/out"
    window: tuple[float, float] | None = None
    undershoot_window: tuple[float, float] | None = None
    buffer_ref: float = 30.0
    cliff_levels: tuple[float, ...] | None = None
    cliff_warmup: float | None = None

    def __post_init__(self):
        if not self.groups:
            raise ConfigError("at least one client group is required")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_clients(self) -> int:
        return sum(g.count for g in self.groups)

    def advisories(self) -> list[str]:
        notes = []
        for g in self.groups:
            if isinstance(g.params, PandaParams):
                notes.extend(f"[clients.{g.name}] {msg}" for msg in g.params.advisories())
        return notes

    def population(self) -> list[ClientSpec]:
        """Expand groups into clients, drawing uniform start offsets from the seed."""
        rng = random.Random(self.seed)
        specs = []
        for g in self.groups:
            if g.offsets == "uniform":
                starts = [rng.uniform(0.0, self.tau) for _ in range(g.count)]
            elif len(g.offsets) == 1:
                starts = list(g.offsets) * g.count
            else:
                starts = list(g.offsets)
            for start in starts:
                specs.append(ClientSpec(
                    g.algorithm, g.params, start=start, startup=g.startup,
                    restart_after_stall=g.restart_after_stall,
                    playout_start=g.playout_start, resume_threshold=g.resume_threshold,
                ))
        return specs


# -- load / serialize -------------------------------------------------------


def _err(section, key, msg):
    return ConfigError(f"[{section}] {key}: {msg}")


def _parse_group(name, section, tau) -> ClientGroup:
    sec = f"clients.{name}"
    algo = section.get("algorithm", PANDA).strip()
    if algo not in GROUP_KEYS:
        raise _err(sec, "algorithm", f"unknown algorithm {algo!r}")
    for key in section:
        if key not in GROUP_KEYS[algo]:
            raise _err(sec, key, f"unknown key for {algo} clients")

    values = {}
    for key, raw in section.items():
        if key in ("algorithm", "offsets"):
            continue
        try:
            if key == "count":
                values[key] = int(raw)
            elif key in ("startup", "restart_after_stall"):
                values[key] = parse_bool(raw)
            elif key in RATE_KEYS:
                values[key] = parse_rate(raw)
            elif key in ("playout_start", "resume_threshold", "b_min", "b_max"):
                values[key] = parse_seconds(raw)
            else:
                values[key] = float(raw)
        except ValueError as exc:
            raise _err(sec, key, str(exc)) from None

    count = values.pop("count", 1)
    if count < 1:
        raise _err(sec, "count", "must be at least 1")
    offsets_raw = section.get("offsets", "uniform").strip()
    if offsets_raw == "uniform":
        offsets = "uniform"
    else:
        try:
            offsets = _floats(offsets_raw, parse_seconds)
        except ValueError as exc:
            raise _err(sec, "offsets", str(exc)) from None
        if len(offsets) not in (1, count):
            raise _err(sec, "offsets", f"expected 1 or {count} values")
        if any(o < 0 for o in offsets):
            raise _err(sec, "offsets", "offsets must be non-negative")

    extra = {k: values.pop(k) for k in (
        "startup", "restart_after_stall", "playout_start", "resume_threshold") if k in values}
    try:
        if algo == PANDA:
            params = PandaParams(tau=tau, **values)
        elif algo == CONVENTIONAL:
            params = ConventionalParams(tau=tau, **values)
        else:
            if "bitrate" not in values:
                raise _err(sec, "bitrate", "required for thin clients")
            params = ThinParams(tau=tau, **values)
    except ConfigError as exc:
        if str(exc).startswith("["):
            raise
        raise ConfigError(f"[{sec}] {exc}") from None
    return ClientGroup(name=name, algorithm=algo, params=params, count=count,
                       offsets=offsets, **extra)


def load_config(text: str) -> ScenarioConfig:
    """Parse and validate config text; stability advisories are emitted as warnings."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    for sec in parser.sections():
        if sec != "scenario" and not sec.startswith("clients."):
            raise ConfigError(f"[{sec}]: unknown section")
    if not parser.has_section("scenario"):
        raise ConfigError("[scenario]: section missing")
    scen = parser["scenario"]
    for key in scen:
        if key not in SCENARIO_KEYS:
            raise _err("scenario", key, "unknown key")
    for key in sorted(REQUIRED_SCENARIO_KEYS - set(scen)):
        raise _err("scenario", key, "required key missing")

    kw = {}
    try:
        for key, raw in scen.items():
            if key == "tau":
                kw["tau"] = parse_seconds(raw)
            elif key == "duration":
                kw["duration"] = parse_seconds(raw)
            elif key == "seed":
                kw["seed"] = int(raw)
            elif key == "ladder":
                kw["ladder"] = BitrateLadder(_floats(raw, parse_rate))
            elif key == "schedule":
                points = []
                for part in raw.split(","):
                    t, _, c = part.partition(":")
                    points.append((parse_seconds(t), parse_rate(c)))
                kw["schedule"] = BandwidthSchedule(tuple(points))
            elif key == "output":
                kw["output"] = raw.strip()
            elif key in ("window", "undershoot_window"):
                pair = _floats(raw, parse_seconds)
                if len(pair) != 2 or not pair[1] > pair[0]:
                    raise ValueError("expected 'start, end' with end > start")
                kw[key] = pair
            elif key == "buffer_ref":
                kw["buffer_ref"] = parse_seconds(raw)
            elif key == "cliff_levels":
                levels = _floats(raw)
                if not levels or any(v <= 0 for v in levels):
                    raise ValueError("levels must be positive")
                kw["cliff_levels"] = levels
            elif key == "cliff_warmup":
                kw["cliff_warmup"] = parse_seconds(raw)
    except (ValueError, LinkError) as exc:
        raise _err("scenario", key, str(exc)) from None

    tau = kw.get("tau", 2.0)
    if not tau > 0:
        raise _err("scenario", "tau", "must be positive")
    groups = tuple(
        _parse_group(sec.split(".", 1)[1], parser[sec], tau)
        for sec in parser.sections() if sec.startswith("clients.")
    )
    if not groups:
        raise ConfigError("[clients.*]: at least one client group is required")
    if "cliff_levels" in kw and any(g.algorithm != THIN for g in groups):
        raise _err("scenario", "cliff_levels", "cliff sweeps use thin clients only")
    try:
        config = ScenarioConfig(groups=groups, **kw)
    except ConfigError as exc:
        raise ConfigError(f"[scenario] {exc}") from None
    for note in config.advisories():
        warnings.warn(note, StabilityWarning, stacklevel=2)
    return config


def _group_lines(g: ClientGroup) -> list[str]:
    lines = [f"[clients.{g.name}]", f"algorithm = {g.algorithm}", f"count = {g.count}"]
    if g.offsets == "uniform":
        lines.append("offsets = uniform")
    else:
        lines.append("offsets = " + ", ".join(fmt_number(o) for o in g.offsets))
    p = asdict(g.params)
    p.pop("tau")
    for key, value in p.items():
        if value is None:
            continue
        lines.append(f"{key} = {fmt_number(value)}")
    if g.algorithm == PANDA:
        lines.append(f"startup = {str(g.startup).lower()}")
        lines.append(f"restart_after_stall = {str(g.restart_after_stall).lower()}")
    for key in ("playout_start", "resume_threshold"):
        if getattr(g, key) is not None:
            lines.append(f"{key} = {fmt_number(getattr(g, key))}")
    return lines


def serialize(config: ScenarioConfig) -> str:
    c = config
    lines = [
        "[scenario]",
        f"tau = {fmt_number(c.tau)}",
        f"duration = {fmt_number(c.duration)}",
        f"seed = {c.seed}",
        "ladder = " + ", ".join(fmt_number(r) for r in c.ladder.rates),
        "schedule = " + ", ".join(f"{fmt_number(t)}:{fmt_number(cap)}" for t, cap in c.schedule.breakpoints),
        f"output = {c.output}",
        f"buffer_ref = {fmt_number(c.buffer_ref)}",
    ]
    if c.window is not None:
        lines.append("window = " + ", ".join(fmt_number(v) for v in c.window))
    if c.undershoot_window is not None:
        lines.append("undershoot_window = " + ", ".join(fmt_number(v) for v in c.undershoot_window))
    if c.cliff_levels is not None:
        lines.append("cliff_levels = " + ", ".join(fmt_number(v) for v in c.cliff_levels))
    if c.cliff_warmup is not None:
        lines.append(f"cliff_warmup = {fmt_number(c.cliff_warmup)}")
    for g in c.groups:
        lines.append("")
        lines.extend(_group_lines(g))
    return "\n".join(lines) + "\n"


def apply_overrides(text: str, overrides: list[str]) -> str:
    """Apply ``section.key=value`` overrides to config text."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    parser.read_string(text)
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().rpartition(".")
        if not (sep and dot and section and key):
            raise ConfigError(f"override {item!r}: expected section.key=value")
        if not parser.has_section(section):
            raise ConfigError(f"override {item!r}: no section [{section}]")
        parser[section][key] = value.strip()
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- presets ----------------------------------------------------------------


def _mbps(x):
    return x * 1e6


def _group(algorithm, count, name="1", **params):
    tau = params.pop("tau", 2.0)
    extra = {k: params.pop(k) for k in ("startup", "offsets") if k in params}
    cls = {PANDA: PandaParams, CONVENTIONAL: ConventionalParams, THIN: ThinParams}[algorithm]
    return ClientGroup(name=name, algorithm=algorithm, params=cls(tau=tau, **params),
                       count=count, **extra)


def preset(name: str, seed: int = 1, clients: int | None = None,
           algorithm: str | None = None) -> ScenarioConfig:
    """Configurations mirroring the published experiments.

    ``clients`` and ``algorithm`` override the population of presets whose
    experiment sweeps them (``tradeoff``, ``scale_fixed``, ``scale_ratio``).
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    out = f"runs/{name}"
    const = BandwidthSchedule.constant

    def pop(default_algo, n):
        return (_group(algorithm or default_algo, clients or n),)

    if name == "fig1":
        cfg = ScenarioConfig(pop(CONVENTIONAL, 36), const(_mbps(100)), 500)
    elif name == "fig9":
        cfg = ScenarioConfig(pop(PANDA, 36), const(_mbps(100)), 500)
    elif name == "fig4":
        k = clients or 100
        cfg = ScenarioConfig(
            (_group(THIN, k, bitrate=_mbps(1)),), const(_mbps(100)), 300,
            cliff_levels=(0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 1.05, 1.1, 1.2, 1.5),
            cliff_warmup=150,
        )
    elif name == "fig7":
        sched = BandwidthSchedule(((0, _mbps(5)), (200, _mbps(2)), (300, _mbps(5))))
        cfg = ScenarioConfig(pop(PANDA, 1), sched, 500, undershoot_window=(200, 300))
    elif name == "fig8":
        cfg = ScenarioConfig(pop(PANDA, 1), const(_mbps(5)), 200)
    elif name == "fig12a":
        cfg = ScenarioConfig((_group(PANDA, 1, kappa=1.1),), const(_mbps(5)), 500)
    elif name == "fig12b":
        cfg = ScenarioConfig((_group(PANDA, 10, delta=0.0),), const(_mbps(10)), 600)
    elif name == "tradeoff":
        sched = BandwidthSchedule(((0, _mbps(10)), (400, _mbps(2.5))))
        cfg = ScenarioConfig(pop(PANDA, 5), sched, 500, window=(0, 400),
                             undershoot_window=(400, 500))
    elif name == "scale_fixed":
        cfg = ScenarioConfig(pop(PANDA, 5), const(_mbps(10)), 500)
    else:  # scale_ratio
        n = clients or 10
        cfg = ScenarioConfig(pop(PANDA, n), const(_mbps(n)), 500)
    return replace(cfg, seed=seed, output=out)


# -- run artifacts ----------------------------------------------------------


def _fmt_time(x):
    return f"{x:.6f}"


def _fmt_rate(x):
    return str(int(round(x)))


_TIME_FIELDS = {"request_time", "t_tilde", "t_hat", "t_actual", "buffer"}
_RATE_FIELDS = {"r", "x_tilde", "x_hat", "y_hat", "x"}


def write_trace(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_FIELDS)
        for rec in records:
            row = []
            for name in STEP_FIELDS:
                v = getattr(rec, name)
                if name in _TIME_FIELDS:
                    row.append(_fmt_time(v))
                elif name in _RATE_FIELDS:
                    row.append(_fmt_rate(v))
                else:
                    row.append(str(v))
            w.writerow(row)


def read_trace(path: Path) -> list[StepRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != STEP_FIELDS:
            raise ConfigError(f"{path}: unexpected trace header")
        out = []
        for row in reader:
            vals = dict(zip(header, row))
            kw = {k: (int(v) if k in ("client", "n") else float(v)) for k, v in vals.items()}
            out.append(StepRecord(**kw))
        return out


def _trace_name(cid):
    return f"trace_{cid:03d}.csv"


def write_metrics(out: Path, config: ScenarioConfig, records) -> dict:
    report = compute_report(
        records, config.schedule, config.duration, window=config.window,
        undershoot_window=config.undershoot_window, b_ref=config.buffer_ref,
    )
    summary = report.summary()
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    with open(out / "metrics_timeseries.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "instability", "inefficiency", "unfairness"))
        for row in zip(report.times, report.instability, report.inefficiency, report.unfairness):
            w.writerow([row[0]] + ["" if v is None else f"{v:.9f}" for v in row[1:]])
    return summary


def metrics_from_dir(trace_dir) -> dict:
    """Recompute the metrics files of a finished run from its traces."""
    out = Path(trace_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        config = load_config(manifest["config"])
    records = {cid: read_trace(out / _trace_name(cid)) for cid in range(manifest["clients"])}
    return write_metrics(out, config, records)


def run(config: ScenarioConfig, output: str | Path | None = None) -> int:
    """Execute a scenario and write its artifacts; returns the exit status."""
    out = Path(output if output is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "config": serialize(config),
        "advisories": config.advisories(),
    }

    if config.cliff_levels is not None:
        k = config.n_clients
        cap = config.schedule.breakpoints[0][1]
        warmup = config.cliff_warmup if config.cliff_warmup is not None else config.duration / 2
        curve = cliff_curve(config.cliff_levels, k, cap, config.tau,
                            duration=config.duration, warmup=warmup, seed=config.seed)
        with open(out / "cliff.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("subscription", "normalized_throughput"))
            for level, ratio in curve:
                w.writerow((fmt_number(level), f"{ratio:.9f}"))
        manifest.update(kind="cliff", clients=k)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("wrote cliff curve for %d levels to %s", len(curve), out)
        return 0

    population = config.population()
    result = run_clients(population, config.schedule, config.duration, config.ladder)
    for cid, recs in result.records.items():
        write_trace(out / _trace_name(cid), recs)
    with open(out / "gaps.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("start", "end"))
        for a, b in result.gaps.intervals:
            w.writerow((_fmt_time(a), _fmt_time(b)))
    with open(out / "stalls.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("client", "start", "end"))
        for cid, stalls in sorted(result.stalls.items()):
            for a, b in stalls:
                w.writerow((cid, _fmt_time(a), "" if b is None else _fmt_time(b)))
    manifest.update(
        kind="simulation",
        clients=len(population),
        offsets=[spec.start for spec in population],
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    metrics_from_dir(out)
    log.info("wrote %d traces to %s", len(population), out)
    return 0
