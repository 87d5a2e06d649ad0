"""Observation vectors from a start-of-tick snapshot.

Sensors are evaluated per species in one vectorized pass. The snapshot is an
array index over every body in the world (inanimate objects and organisms);
during the act phase the world keeps it current by writing new organism
positions and clearing ``alive`` for consumed bodies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SensorConfig, SpeciesConfig
from .geometry import Space, ray_sphere, rotate2

BOUNDARY = "boundary"


class SensingError(ValueError):
    pass


@dataclass
class Snapshot:
    tick: int
    space: Space
    light_period: int | None
    light_k: float
    pos: np.ndarray
    rad: np.ndarray
    kind: np.ndarray
    kind_codes: dict
    refs: list
    alive: np.ndarray
    entity_of: dict = field(default_factory=dict)  # organism id -> row
    _by_kind: dict = field(default_factory=dict)

    def rows_of(self, kinds) -> np.ndarray:
        key = tuple(kinds)
        rows = self._by_kind.get(key)
        if rows is None:
            codes = [self.kind_codes[k] for k in kinds if k in self.kind_codes]
            rows = np.flatnonzero(np.isin(self.kind, codes)) if codes else np.zeros(0, int)
            self._by_kind[key] = rows
        return rows

    def live_rows_of(self, kinds) -> np.ndarray:
        rows = self.rows_of(kinds)
        return rows[self.alive[rows]]


def build_snapshot(tick, space, bodies, light_period=None, light_k=0.0) -> Snapshot:
    """``bodies``: iterable of (kind name, center, radius, ref) tuples."""
    bodies = list(bodies)
    kind_codes: dict[str, int] = {}
    kinds = []
    for b in bodies:
        kinds.append(kind_codes.setdefault(b[0], len(kind_codes)))
    n = len(bodies)
    pos = np.array([b[1] for b in bodies], dtype=float) if n else np.zeros((0, space.dims))
    rad = np.array([b[2] for b in bodies], dtype=float)
    refs = [b[3] for b in bodies]
    entity_of = {}
    for i, r in enumerate(refs):
        oid = getattr(r, "id", None)
        if oid is not None and getattr(r, "nervous", None) is not None:
            entity_of[oid] = i
    return Snapshot(tick, space, light_period, light_k, pos, rad,
                    np.array(kinds, dtype=int), kind_codes, refs, np.ones(n, dtype=bool),
                    entity_of)


# -- layout ------------------------------------------------------------------

def _vision_dir_names(sensor: SensorConfig, dims: int) -> list[str]:
    if dims == 3 or sensor.directions is not None:
        return ["dx", "dy", "dz"][:dims]
    return ["lat"]


def observation_layout(sp: SpeciesConfig, dims: int) -> list[str]:
    names = []
    for s in sp.sensors:
        if s.modality == "vision_ray":
            for t in s.targets:
                names += [f"{s.name}.{t}.dist", f"{s.name}.{t}.hit"]
                names += [f"{s.name}.{t}.{d}" for d in _vision_dir_names(s, dims)]
        else:
            names.append(s.name)
    return names


def input_scale(sp: SpeciesConfig, dims: int) -> np.ndarray:
    scale = []
    for s in sp.sensors:
        if s.modality == "vision_ray":
            per = [1.0 / s.range, 1.0] + [1.0] * len(_vision_dir_names(s, dims))
            scale += [v * s.scale for v in per] * len(s.targets)
        else:
            scale.append(s.scale)
    return np.array(scale)


def ray_directions(sensor: SensorConfig, headings: np.ndarray, dims: int) -> np.ndarray:
    """(N, R, dims) unit ray directions."""
    n = headings.shape[0]
    if sensor.directions is not None:
        d = np.asarray(sensor.directions, dtype=float)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(d, (n,) + d.shape)
    r = sensor.rays
    angles = np.array([0.0]) if r == 1 else np.linspace(-math.pi / 2, math.pi / 2, r)
    if dims == 2:
        return rotate2(headings[:, None, :], angles[None, :])
    planar = rotate2(headings[:, None, :2], angles[None, :])
    out = np.zeros((n, r, 3))
    out[..., :2] = planar
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    return out / np.where(norm > 0, norm, 1.0)


def sensor_positions(centers, headings, offset, dims, frame="body") -> np.ndarray:
    if offset is None:
        return centers
    off = np.asarray(offset, dtype=float)
    if dims == 2 and frame == "body":
        fwd = headings
        left = np.stack([-headings[:, 1], headings[:, 0]], axis=1)
        return centers + off[0] * fwd + off[1] * left
    return centers + off


# -- individual sensing operations ---------------------------------------------

def smell_kernel(d):
    return 1.0 / (1.0 + np.asarray(d) ** 2)


def smell_at(snap: Snapshot, position, target: str, range_: float | None = None,
             exclude_row: int | None = None) -> float:
    rows = snap.live_rows_of([target])
    if exclude_row is not None:
        rows = rows[rows != exclude_row]
    if rows.size == 0:
        return 0.0
    d = np.linalg.norm(snap.space.displacement(position, snap.pos[rows]), axis=-1)
    k = smell_kernel(d)
    if range_ is not None:
        k = np.where(d <= range_, k, 0.0)
    return float(k.sum())


def surface_light(tick, period: int) -> float | np.ndarray:
    # phase taken modulo the period so the night half is exactly dark
    phase = np.mod(np.asarray(tick, dtype=float), period) / period
    return np.where(phase < 0.5, np.maximum(0.0, np.sin(2.0 * math.pi * phase)), 0.0)


def light_intensity(snap: Snapshot, position, tick: int | None = None):
    if snap.light_period is None:
        return np.zeros(np.shape(position)[:-1]) if np.ndim(position) > 1 else 0.0
    t = snap.tick if tick is None else tick
    depth = np.maximum(snap.space.depth(position), 0.0)
    val = surface_light(t, snap.light_period) * np.exp(-snap.light_k * depth)
    return float(val) if np.ndim(val) == 0 else val


def ray_cast(snap: Snapshot, origin, direction, range_: float, type_filter,
             exclude_row: int | None = None):
    """Nearest sphere of a matching type hit within range, as (distance, type_tag)."""
    if isinstance(type_filter, str):
        type_filter = [type_filter]
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise SensingError("ray direction must be unit-norm")
    rows = snap.live_rows_of(type_filter)
    if exclude_row is not None:
        rows = rows[rows != exclude_row]
    if rows.size == 0:
        return None
    disp = snap.space.displacement(origin, snap.pos[rows])
    t = ray_sphere(disp, direction, snap.rad[rows])
    t = np.where(t <= range_, t, np.inf)
    best = int(np.argmin(t))
    if not np.isfinite(t[best]):
        return None
    inv = {v: k for k, v in snap.kind_codes.items()}
    return float(t[best]), inv[int(snap.kind[rows[best]])]


# -- vectorized observation -------------------------------------------------------

def _vision_block(snap, sensor, centers, headings, self_rows, dims, light_at):
    n = centers.shape[0]
    dirs = ray_directions(sensor, headings, dims)  # (N, R, d)
    n_dir = len(_vision_dir_names(sensor, dims))
    blocks = []
    eff_range = np.full(n, float(sensor.range))
    if sensor.light_scaled:
        eff_range = eff_range * light_at
    for target in sensor.targets:
        out = np.zeros((n, 2 + n_dir))
        out[:, 0] = sensor.range
        rows = snap.live_rows_of([target])
        if rows.size:
            disp = snap.space.displacement(centers[:, None, :], snap.pos[rows][None, :, :])
            dist = np.linalg.norm(disp, axis=-1)
            near = dist - snap.rad[rows][None, :] <= eff_range[:, None]
            near &= rows[None, :] != self_rows[:, None]
            oi, mi = np.nonzero(near)
            if oi.size:
                t = ray_sphere(disp[oi, mi][:, None, :], dirs[oi], snap.rad[rows][mi][:, None])
                t = np.where(t <= eff_range[oi][:, None], t, np.inf)  # (K, R)
                flat = np.full(n * dirs.shape[1], np.inf)
                key = oi[:, None] * dirs.shape[1] + np.arange(dirs.shape[1])[None, :]
                np.minimum.at(flat, key.ravel(), t.ravel())
                per_ray = flat.reshape(n, dirs.shape[1])
                best = np.argmin(per_ray, axis=1)
                bd = per_ray[np.arange(n), best]
                hit = np.isfinite(bd)
                out[hit, 0] = bd[hit]
                out[hit, 1] = 1.0
                bdir = dirs[np.arange(n), best]
                if n_dir == 1:
                    # lateral component of the best ray in the body frame
                    lat = headings[:, 0] * bdir[:, 1] - headings[:, 1] * bdir[:, 0]
                    out[hit, 2] = lat[hit]
                else:
                    out[hit, 2:] = bdir[hit]
        blocks.append(out)
    return np.concatenate(blocks, axis=1)


def observe(snap: Snapshot, orgs, sp: SpeciesConfig) -> np.ndarray:
    """Observation matrix (len(orgs), |x|) for organisms of one species."""
    dims = snap.space.dims
    n = len(orgs)
    self_rows = np.array([snap.entity_of.get(o.id, -1) for o in orgs], dtype=int)
    centers = np.array([snap.pos[r] if r >= 0 else o.center for o, r in zip(orgs, self_rows)],
                       dtype=float).reshape(n, dims)
    headings = np.array([o.heading for o in orgs], dtype=float).reshape(n, dims)
    radii = np.array([o.radius for o in orgs], dtype=float)
    light_at = None
    cols = []
    for s in sp.sensors:
        m = s.modality
        if m == "internal":
            cols.append(np.array([[o.properties.get(s.target)] for o in orgs]).reshape(n, 1))
        elif m == "light":
            cols.append(np.asarray(light_intensity(snap, centers), dtype=float).reshape(n, 1))
        elif m == "smell":
            rows = snap.live_rows_of([s.target])
            col = np.zeros(n)
            if rows.size:
                p = sensor_positions(centers, headings, s.offset, dims, s.frame)
                d = np.linalg.norm(snap.space.displacement(p[:, None, :], snap.pos[rows][None]),
                                   axis=-1)
                k = smell_kernel(d)
                if s.range is not None:
                    k = np.where(d <= s.range, k, 0.0)
                k = np.where(rows[None, :] == self_rows[:, None], 0.0, k)
                col = k.sum(axis=1)
            cols.append(col[:, None])
        elif m == "touch":
            if s.target == BOUNDARY:
                col = np.asarray(snap.space.touches_boundary(centers, radii), dtype=float)
            else:
                rows = snap.live_rows_of([s.target])
                col = np.zeros(n)
                if rows.size:
                    d = np.linalg.norm(snap.space.displacement(centers[:, None, :],
                                                               snap.pos[rows][None]), axis=-1)
                    touching = d <= radii[:, None] + snap.rad[rows][None, :]
                    touching &= rows[None, :] != self_rows[:, None]
                    col = touching.any(axis=1).astype(float)
            cols.append(np.reshape(col, (n, 1)))
        elif m == "vision_ray":
            if s.light_scaled and light_at is None:
                light_at = np.asarray(light_intensity(snap, centers), dtype=float).reshape(n)
            cols.append(_vision_block(snap, s, centers, headings, self_rows, dims, light_at))
        else:  # pragma: no cover - schema restricts modalities
            raise SensingError(f"unknown modality {m}")
    if not cols:
        return np.zeros((n, 0))
    return np.concatenate(cols, axis=1)


def read_sensors(snap: Snapshot, org, sp: SpeciesConfig) -> np.ndarray:
    return observe(snap, [org], sp)[0]
