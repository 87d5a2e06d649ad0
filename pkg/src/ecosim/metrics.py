"""Time series recording and post-hoc statistics."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .config import ScenarioConfig, SeriesConfig
from .sensing import observation_layout, surface_light


class MetricsError(ValueError):
    pass


@dataclass
class TimeSeries:
    name: str
    ticks: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, tick: int, value: float) -> None:
        if self.ticks and tick <= self.ticks[-1]:
            raise MetricsError(f"{self.name}: tick {tick} does not increase")
        self.ticks.append(int(tick))
        self.values.append(float(value))

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)


def default_series(config: ScenarioConfig) -> list[SeriesConfig]:
    if config.series:
        return list(config.series)
    out = [SeriesConfig(name=k.type_tag, kind="object_count", target=k.type_tag)
           for k in config.objects]
    out += [SeriesConfig(name=s.name, kind="population", target=s.name) for s in config.species]
    return out


def _sample(world, s: SeriesConfig) -> float:
    if s.kind == "population":
        return float(sum(1 for o in world.organisms if o.species == s.target))
    if s.kind == "object_count":
        return float(sum(1 for o in world.inanimate if o.type_tag == s.target and not o.removed))
    if s.kind == "surface_light":
        light = world.config.light
        return float(surface_light(world.tick, light.period)) if light else 0.0
    orgs = [o for o in world.organisms if o.species == s.target]
    if s.kind == "gene_count":
        return float(sum(1 for o in orgs if s.symbol in o.genome))
    if not orgs:
        return math.nan
    pos = np.array([o.center for o in orgs])
    if s.kind == "mean_depth":
        return float(np.mean(world.space.depth(pos)))
    if s.kind == "light_exposure":
        light = world.config.light
        if light is None:
            return 0.0
        depth = np.maximum(world.space.depth(pos), 0.0)
        return float(np.mean(surface_light(world.tick, light.period)
                             * np.exp(-light.attenuation * depth)))
    raise MetricsError(f"unknown series kind {s.kind}")


class Recorder:
    """Samples every configured series each ``stride`` ticks."""

    def __init__(self, config: ScenarioConfig, stride: int | None = None):
        self.config = config
        self.stride = stride or config.stride
        self.specs = default_series(config)
        self.series = {s.name: TimeSeries(s.name) for s in self.specs}
        self.ticks: list[int] = []

    def record(self, world) -> None:
        if world.tick % self.stride:
            return
        self.ticks.append(world.tick)
        for s in self.specs:
            self.series[s.name].append(world.tick, _sample(world, s))

    def summary(self, world=None) -> "RunSummary":
        events = Counter()
        if world is not None:
            for _, kind, _, detail in world.events:
                if kind == "death":
                    cause = next((p[6:] for p in detail.split() if p.startswith("cause=")), "")
                    events[f"death:{cause}"] += 1
                else:
                    events[kind] += 1
        return RunSummary(list(self.ticks), self.series, dict(events))


def record(recorder: Recorder, world) -> None:
    recorder.record(world)


@dataclass
class RunSummary:
    ticks: list
    series: dict
    event_counts: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.series[name].array()


# -- statistics ------------------------------------------------------------------

def _values(s) -> np.ndarray:
    return s.array() if isinstance(s, TimeSeries) else np.asarray(s, dtype=float)


def pearson(a, b) -> float:
    a = _values(a)
    b = _values(b)
    if a.shape != b.shape or a.size < 3:
        raise MetricsError("pearson needs two equal-length series of at least 3 samples")
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        raise MetricsError("correlation undefined for a constant series")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def depth_light_correlation(depth, light) -> float:
    return pearson(depth, light)


def cross_correlation_lag(a, b, max_lag: int) -> int:
    """Lag k maximizing corr(a[t], b[t + k]); positive when b trails a.

    Each lag is scored by the Pearson coefficient over the overlapping
    window. Ties go to the smallest |k|.
    """
    x = _values(a)
    y = _values(b)
    n = len(x)
    if len(y) != n:
        raise MetricsError("series lengths differ")
    if n <= 2 * max_lag:
        raise MetricsError(f"series of length {n} too short for max_lag {max_lag}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricsError("cross-correlation undefined for a constant series")
    best, best_r = 0, -np.inf
    for k in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), -k)):
        xs, ys = (x[:n - k], y[k:]) if k >= 0 else (x[-k:], y[:n + k])
        if np.ptp(xs) == 0 or np.ptp(ys) == 0:
            continue
        r = pearson(xs, ys)
        if r > best_r + 1e-12:
            best, best_r = k, r
    return best


def detect_peaks(s, min_prominence: float | None = None) -> list[int]:
    """Ticks of local maxima with at least ``min_prominence``.

    Default prominence is 10% of the series range; a plateau reports its
    first sample.
    """
    v = _values(s)
    ticks = np.asarray(s.ticks) if isinstance(s, TimeSeries) else np.arange(len(v))
    if v.size < 3 or np.ptp(v) == 0:
        return []
    if min_prominence is None:
        min_prominence = 0.1 * float(np.ptp(v))
    idx, props = find_peaks(v, prominence=min_prominence, plateau_size=1)
    return [int(ticks[i]) for i in props["left_edges"]]


def peak_spacing(peaks) -> float | None:
    return float(np.mean(np.diff(peaks))) if len(peaks) >= 2 else None


# -- files -----------------------------------------------------------------------

def write_csv(summary: RunSummary, path) -> None:
    names = list(summary.series)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tick"] + names)
            for i, t in enumerate(summary.ticks):
                w.writerow([str(t)] + [format(summary.series[n].values[i], ".17g") for n in names])
    except OSError as exc:
        raise MetricsError(f"cannot write metrics CSV {path}: {exc}") from exc


def read_csv(path) -> RunSummary:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MetricsError(f"cannot read {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "tick":
        raise MetricsError(f"{path}: row 1: header must start with 'tick'")
    names = rows[0][1:]
    series = {n: TimeSeries(n) for n in names}
    ticks = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 1:
            raise MetricsError(f"{path}: row {lineno}: expected {len(names) + 1} fields, "
                               f"got {len(row)}")
        try:
            t = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise MetricsError(f"{path}: row {lineno}: {exc}") from None
        ticks.append(t)
        for n, v in zip(names, vals):
            try:
                series[n].append(t, v)
            except MetricsError as exc:
                raise MetricsError(f"{path}: row {lineno}: {exc}") from None
    return RunSummary(ticks, series)


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config.model_dump(mode="json"), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, config: ScenarioConfig, seed: int, series_names, extra=None) -> None:
    manifest = {
        "scenario": config.name,
        "scenario_kind": config.kind,
        "scenario_hash": config_hash(config),
        "seed": int(seed),
        "sensor_layouts": {sp.name: observation_layout(sp, config.dims) for sp in config.species},
        "series": list(series_names),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- scenario analyses -------------------------------------------------------------

def _finite(*arrays):
    mask = np.ones(len(arrays[0]), dtype=bool)
    for a in arrays:
        mask &= np.isfinite(a)
    return [a[mask] for a in arrays]


def analyze_predator_prey(summary: RunSummary, prey="deer", predator="wolf", food="grass",
                          min_peaks: int = 2) -> dict:
    deer = summary.series[prey]
    peaks = detect_peaks(deer)
    out = {"deer_peaks": len(peaks), "peak_ticks": peaks, "lag_grass_deer": None,
           "lag_deer_wolf": None, "max_lag": None, "cycles": len(peaks) >= min_peaks}
    n = len(deer)
    spacing = peak_spacing(peaks)
    if spacing is not None:
        stride = (summary.ticks[1] - summary.ticks[0]) if n > 1 else 1
        max_lag = max(1, int(round(spacing / stride / 2)))
    else:
        max_lag = max(1, n // 4)
    max_lag = min(max_lag, (n - 1) // 2)
    out["max_lag"] = max_lag
    try:
        out["lag_grass_deer"] = cross_correlation_lag(summary.series[food], deer, max_lag)
        out["lag_deer_wolf"] = cross_correlation_lag(deer, summary.series[predator], max_lag)
    except MetricsError as exc:
        out["error"] = str(exc)
    out["pass"] = bool(out["cycles"] and (out["lag_grass_deer"] or 0) > 0
                       and (out["lag_deer_wolf"] or 0) > 0)
    return out


def analyze_marine(summary: RunSummary, control: RunSummary | None = None,
                   r_threshold: float = -0.3, exposure_ratio: float = 0.6) -> dict:
    depth, light = _finite(summary.column("mean_depth"), summary.column("light"))
    out = {"r": None, "day_depth": None, "night_depth": None}
    try:
        out["r"] = depth_light_correlation(depth, light)
    except MetricsError as exc:
        out["error"] = str(exc)
    if len(depth):
        day = light > 0
        out["day_depth"] = float(depth[day].mean()) if day.any() else None
        out["night_depth"] = float(depth[~day].mean()) if (~day).any() else None
    ok = out["r"] is not None and out["r"] <= r_threshold
    if control is not None:
        (a,) = _finite(summary.column("light_exposure"))
        (b,) = _finite(control.column("light_exposure"))
        ratio = float(a.mean() / b.mean()) if len(a) and len(b) and b.mean() > 0 else math.inf
        out["exposure_ratio"] = ratio
        ok = ok and ratio <= exposure_ratio
    out["pass"] = bool(ok)
    return out


def extinction_events(values) -> int:
    """Number of times a count hits zero after being positive and later recovers."""
    v = np.asarray(values, dtype=float)
    events, extinct, seen = 0, False, False
    for x in v:
        if x > 0:
            if extinct:
                events += 1
                extinct = False
            seen = True
        elif seen:
            extinct = True
    return events


def analyze_goats(summary: RunSummary, genes="RYGB", population="goat") -> dict:
    pop = summary.column(population)
    out = {"first": {}, "last": {}, "reappearances": {}}
    with np.errstate(invalid="ignore", divide="ignore"):
        for g in genes:
            c = summary.column(g)
            out["first"][g] = float(c[0] / pop[0]) if pop[0] > 0 else math.nan
            out["last"][g] = float(c[-1] / pop[-1]) if pop[-1] > 0 else math.nan
            out["reappearances"][g] = extinction_events(c)
    r0, r1, b1 = out["first"]["R"], out["last"]["R"], out["last"]["B"]
    out["pass"] = bool(r1 > r0 and r1 > b1)
    return out
