"""Ecosystem state and the deterministic tick loop.

A tick runs: sense (all organisms, start-of-tick snapshot) -> settle the
previous transition's reward -> decide -> act in ascending id order
(move, eat, pay energy, age, die, reproduce) -> regrow/decay inanimate
objects -> tick + 1.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import genome as gen
from .config import ScenarioConfig, SpeciesConfig
from .geometry import Space, random_unit
from .learn import Learner, LearnerState, RolloutBuffer, flush, learner_step
from .nervous import (Decision, HappinessNetwork, NervousSystem, PolicyNetwork, log_softmax,
                      reflex_out, sample_actions)
from .sensing import Snapshot, build_snapshot, input_scale, observation_layout, observe

PHYSICAL = {"Temperature", "Mass", "Pressure", "Electric current", "Luminous intensity"}
GAIT_RANK = {None: -1, "stand": 0, "walk": 1, "run": 2}
GAITS = ("stand", "walk", "run")


class WorldFault(RuntimeError):
    def __init__(self, org_id, invariant: str):
        super().__init__(f"organism {org_id}: {invariant}")
        self.org_id = org_id
        self.invariant = invariant


@dataclass
class PropertyBag:
    physical: dict = field(default_factory=dict)
    chemical: dict = field(default_factory=dict)
    age: float = 0.0
    sex: str = "none"
    fertility: float = 0.0

    @classmethod
    def from_values(cls, values: dict) -> "PropertyBag":
        bag = cls()
        for k, v in values.items():
            bag.set(k, v)
        return bag

    def get(self, name: str, default: float = 0.0) -> float:
        if name == "Age":
            return self.age
        if name == "Fertility":
            return self.fertility
        if name in self.physical:
            return self.physical[name]
        return self.chemical.get(name, default)

    def set(self, name: str, value: float) -> None:
        if name == "Age":
            self.age = float(value)
        elif name == "Fertility":
            self.fertility = float(value)
        elif name in PHYSICAL:
            self.physical[name] = float(value)
        else:
            self.chemical[name] = max(0.0, float(value))

    def add(self, name: str, delta: float) -> None:
        self.set(name, self.get(name) + delta)

    def copy(self) -> "PropertyBag":
        return PropertyBag(dict(self.physical), dict(self.chemical), self.age, self.sex,
                           self.fertility)


@dataclass
class Conformation:
    center: np.ndarray
    radius: float

    def copy(self) -> "Conformation":
        return Conformation(np.array(self.center, dtype=float), self.radius)


@dataclass(eq=False)
class InanimateObject:
    type_tag: str
    properties: PropertyBag
    conformation: Conformation
    solid: bool = False
    created_tick: int = 0
    removed: bool = False

    @property
    def center(self):
        return self.conformation.center

    @property
    def radius(self):
        return self.conformation.radius


@dataclass(eq=False)
class Organism:
    id: int
    species: str
    genome: str
    properties: PropertyBag
    conformation: Conformation
    heading: np.ndarray
    nervous: NervousSystem
    hyper: object
    learner: LearnerState | None = None
    rng: np.random.Generator | None = None
    alive: bool = True
    birth_tick: int = 0
    last_birth_tick: int = -(10 ** 12)

    @property
    def center(self):
        return self.conformation.center

    @property
    def radius(self):
        return self.conformation.radius


@dataclass
class SpeciesTemplate:
    """Per-species tables compiled once from the config."""

    config: SpeciesConfig
    index: int
    obs_names: list
    scale: np.ndarray
    actions: list
    happiness: HappinessNetwork
    gait_rank: np.ndarray
    rot: np.ndarray
    translate: np.ndarray
    eat: np.ndarray
    breathe: np.ndarray
    gain_names: list
    gains: np.ndarray
    turn_cos: float = 1.0
    turn_sin: float = 0.0
    resolved: dict = field(default_factory=dict)
    diet_kinds: tuple | None = None

    @property
    def name(self):
        return self.config.name

    @property
    def n_actions(self):
        return len(self.actions)

    @property
    def obs_index(self):
        return {n: i for i, n in enumerate(self.obs_names)}

    @property
    def action_index(self):
        return {a: i for i, a in enumerate(self.actions)}


def compile_species(sp: SpeciesConfig, index: int, dims: int) -> SpeciesTemplate:
    names = observation_layout(sp, dims)
    pos = {n: i for i, n in enumerate(names)}
    w = np.zeros(len(names))
    for k, v in sp.happiness.weights.items():
        w[pos[k]] = v
    n_a = len(sp.actions)
    gains = sorted({k for a in sp.actions for k in a.gain})
    g = np.zeros((n_a, len(gains)))
    tr = np.zeros((n_a, dims))
    for i, a in enumerate(sp.actions):
        for k, v in a.gain.items():
            g[i, gains.index(k)] = v
        if a.translate is not None:
            v = np.asarray(a.translate, dtype=float)
            tr[i] = v / np.linalg.norm(v)
    return SpeciesTemplate(
        config=sp, index=index, obs_names=names, scale=input_scale(sp, dims),
        actions=[a.name for a in sp.actions], happiness=HappinessNetwork(w, sp.happiness.bias),
        gait_rank=np.array([GAIT_RANK[a.gait] for a in sp.actions]),
        rot=np.array([{None: 0, "left": 1, "right": -1}[a.rotate] for a in sp.actions]),
        translate=tr, eat=np.array([a.eat for a in sp.actions]),
        breathe=np.array([a.breathe for a in sp.actions]), gain_names=gains, gains=g,
        turn_cos=math.cos(sp.turn_angle), turn_sin=math.sin(sp.turn_angle),
    )


@dataclass(eq=False)
class World:
    config: ScenarioConfig
    space: Space
    seed: int
    rng: np.random.Generator
    templates: dict
    tick: int = 0
    dt: float = 1.0
    inanimate: list = field(default_factory=list)
    organisms: list = field(default_factory=list)
    next_id: int = 0
    events: list = field(default_factory=list)
    mode: str = "run"  # "pretrain": no reproduction, dead are replaced, shared policies
    reproduction_enabled: bool = True
    greedy: bool = False
    random_policy: bool = False
    policies: dict = field(default_factory=dict)       # species -> checkpoint/shared policy
    shared_learners: dict = field(default_factory=dict)
    by_id: dict = field(default_factory=dict)
    index: Snapshot | None = None
    has_solids: bool = False
    eat_candidates: dict = field(default_factory=dict)
    _init_counter: Counter = field(default_factory=Counter)

    def population(self, species: str) -> int:
        return sum(1 for o in self.organisms if o.species == species)

    def log(self, kind: str, org_id, detail: str = "") -> None:
        self.events.append((self.tick, kind, org_id, detail))

    def stream(self, *key) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def current_snapshot(self) -> Snapshot:
        return self.index if self.index is not None else snapshot_of(self)

    def event_lines(self) -> list[str]:
        return [f"{t}\t{k}\t{i}\t{d}" for t, k, i, d in self.events]


def snapshot_of(world: World) -> Snapshot:
    bodies = [(o.type_tag, o.center, o.radius, o) for o in world.inanimate if not o.removed]
    bodies += [(o.species, o.center, o.radius, o) for o in world.organisms]
    light = world.config.light
    return build_snapshot(world.tick, world.space, bodies,
                          light.period if light else None, light.attenuation if light else 0.0)


# -- construction -------------------------------------------------------------

def _region(world: World, region):
    if region is None:
        return world.space.lo, world.space.hi
    b = np.asarray(region, dtype=float)
    return b[:, 0], b[:, 1]


def _draw(world: World, lo, hi, step=None) -> np.ndarray:
    """Uniform position in [lo, hi], or a uniform lattice point when ``step`` is set."""
    if step is None:
        return world.rng.uniform(lo, hi)
    n = np.floor((hi - lo) / step + 1e-9).astype(int)
    return lo + world.rng.integers(0, n + 1) * step


def new_object(world: World, kind, center) -> InanimateObject:
    return InanimateObject(kind.type_tag, PropertyBag.from_values(kind.properties),
                           Conformation(np.asarray(center, dtype=float), kind.radius),
                           kind.solid, world.tick)


def build_world(config: ScenarioConfig, seed: int | None = None, mode: str = "run",
                policies: dict | None = None, random_policy: bool = False) -> World:
    """Instantiate the initial ecosystem.

    ``policies`` maps species to a PolicyNetwork: shared by every
    conspecific in pretrain mode, copied per organism in run mode.
    ``random_policy`` swaps every learned policy for the uniform control.
    """
    seed = config.seed if seed is None else int(seed)
    space = Space.from_bounds(config.bounds, config.boundary)
    templates = {sp.name: compile_species(sp, i, config.dims) for i, sp in enumerate(config.species)}
    world = World(config=config, space=space, seed=seed,
                  rng=np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed))),
                  templates=templates, dt=config.dt, mode=mode,
                  reproduction_enabled=(mode == "run"), random_policy=random_policy)
    for sp in config.species:
        t = templates[sp.name]
        if policies and sp.name in policies:
            world.policies[sp.name] = policies[sp.name]
        elif mode == "pretrain":
            world.policies[sp.name] = fresh_policy(world, t, 0)
        if mode == "pretrain" and sp.policy.mode == "learned" and not random_policy:
            cfg = sp.hyper.ppo
            world.shared_learners[sp.name] = Learner(
                world.policies[sp.name], cfg, world.stream(2, t.index),
                min_batch=cfg.pretrain_batch, minibatch=cfg.minibatch, name=sp.name)
    world.has_solids = any(k.solid for k in config.objects)
    for kind in config.objects:
        lo, hi = _region(world, kind.region)
        for _ in range(kind.initial_count):
            world.inanimate.append(new_object(world, kind, _draw(world, lo, hi, kind.grid_step)))
    for sp in config.species:
        for _ in range(sp.initial_count):
            spawn_template(world, sp.name, initial=True)
    return world


def fresh_policy(world: World, t: SpeciesTemplate, policy_seed: int) -> PolicyNetwork:
    sp = t.config
    return PolicyNetwork(len(t.obs_names), t.n_actions, sp.policy.hidden, t.scale,
                         rng=world.stream(4, t.index, policy_seed & 0xFFFFFFFF))


def make_organism(world: World, species: str, genome: str, policy: PolicyNetwork | None = None,
                  energy: float | None = None) -> Organism:
    """Unplaced organism (id assigned by spawn)."""
    t = world.templates[species]
    sp = t.config
    reflex, policy_seed, hyper = gen.decode(genome, sp.genome, t)
    props = PropertyBag.from_values(sp.properties)
    if energy is not None:
        props.set("Energy", energy)
    if hyper.reproduction.mode == "sexual":
        props.sex = "female" if world.rng.random() < 0.5 else "male"
    if policy is None and sp.policy.mode == "learned":
        if world.mode == "pretrain":
            policy = world.policies[species]
        elif species in world.policies:
            policy = world.policies[species].copy()
        else:
            policy = fresh_policy(world, t, policy_seed)
    if sp.policy.mode == "random" or world.random_policy:
        policy = None
    nervous = NervousSystem(reflex, t.happiness, policy, t.n_actions)
    heading = random_unit(world.rng, world.space.dims)
    return Organism(-1, species, genome, props, Conformation(np.zeros(world.space.dims), sp.radius),
                    heading, nervous, hyper)


def spawn_template(world: World, species: str, initial: bool = False) -> Organism | None:
    sp = world.templates[species].config
    n = world._init_counter[species]
    world._init_counter[species] += 1
    genomes = sp.genome.initial if sp.genome is not None else [""]
    child = make_organism(world, species, genomes[n % len(genomes)])
    if initial and sp.hyper.age_max > 0:
        if sp.initial_age_spread:
            child.properties.age = float(
                world.rng.uniform(0.0, sp.initial_age_spread * sp.hyper.age_max))
    return spawn(world, child, "random_unoccupied")


def _free(world: World, pos, radius, check_organisms=True) -> bool:
    if check_organisms and world.organisms:
        c = np.array([o.center for o in world.organisms])
        r = np.array([o.radius for o in world.organisms])
        d = np.linalg.norm(world.space.displacement(pos, c), axis=-1)
        if np.any(d < r + radius):
            return False
    for o in world.inanimate:
        if o.solid and not o.removed:
            if np.linalg.norm(world.space.displacement(pos, o.center)) < o.radius + radius:
                return False
    return True


def _place(world: World, child: Organism, placement: str, parent: Organism | None):
    sp = world.templates[child.species].config
    for _ in range(world.config.spawn_retries):
        if placement == "near_parent" and parent is not None:
            reach = 2.0 * (parent.radius + child.radius)
            pos = world.space.confine(parent.center + world.rng.uniform(-reach, reach, world.space.dims))
            if _free(world, pos, child.radius, check_organisms=False):
                return pos
        else:
            lo, hi = _region(world, sp.spawn_region)
            pos = _draw(world, lo, hi, sp.grid_step)
            if _free(world, pos, child.radius):
                return pos
    return None


def spawn(world: World, child: Organism, placement: str = "random_unoccupied",
          parent: Organism | None = None) -> Organism | None:
    sp = world.templates[child.species].config
    if world.population(child.species) >= sp.cap:
        world.log("spawn_skipped", -1, f"cap species={child.species}")
        return None
    pos = _place(world, child, placement, parent)
    if pos is None:
        world.log("spawn_skipped", -1, f"no_space species={child.species}")
        return None
    child.id = world.next_id
    world.next_id += 1
    child.conformation.center = np.asarray(pos, dtype=float)
    child.birth_tick = world.tick
    child.rng = world.stream(1, child.id)
    child.learner = _learner_state(world, child)
    _update_fertility(child)
    x = observe(world.current_snapshot(), [child], sp)[0]
    child.learner.buffer.last_happiness = float(x @ child.nervous.happiness.weights
                                                + child.nervous.happiness.bias)
    world.organisms.append(child)
    world.by_id[child.id] = child
    detail = f"species={child.species} genome={child.genome}"
    if parent is not None:
        detail += f" parent={parent.id}"
    world.log("birth", child.id, detail)
    return child


def _learner_state(world: World, org: Organism) -> LearnerState:
    sp = world.templates[org.species].config
    cfg = sp.hyper.ppo
    policy = org.nervous.policy
    if policy is None:
        return LearnerState(RolloutBuffer(1), None)
    if world.mode == "pretrain":
        return LearnerState(RolloutBuffer(cfg.buffer_size), world.shared_learners.get(org.species))
    if not sp.policy.online_learning:
        return LearnerState(RolloutBuffer(cfg.online_buffer_size), None)
    learner = Learner(policy, cfg, world.stream(3, org.id), lr=cfg.online_lr, min_batch=1,
                      minibatch=cfg.online_minibatch, name=f"{org.species}#{org.id}")
    return LearnerState(RolloutBuffer(cfg.online_buffer_size), learner)


# -- per-organism rules ----------------------------------------------------------

def _update_fertility(org: Organism) -> None:
    rp = org.hyper.reproduction
    org.properties.fertility = 1.0 if org.properties.age >= rp.maturity_age else 0.0


def check_death(org: Organism) -> str | None:
    props = org.properties
    if props.age > org.hyper.age_max:
        return "age"
    for name, (lo, hi) in org.hyper.survival.items():
        v = props.get(name)
        if v < lo:
            return f"{name} below lo"
        if hi is not None and v > hi:
            return f"{name} above hi"
    return None


def _happiness_of(world: World, org: Organism) -> tuple[np.ndarray, float]:
    x = observe(world.current_snapshot(), [org], world.templates[org.species].config)[0]
    hn = org.nervous.happiness
    return x, float(x @ hn.weights + hn.bias)


def kill(world: World, org_id: int, cause: str = "killed") -> World:
    org = world.by_id.get(org_id)
    if org is None or not org.alive:
        raise WorldFault(org_id, "kill: no living organism with this id")
    st = org.learner
    if st is not None and st.pending is not None and st.learner is not None:
        if world.mode == "pretrain":
            px, pdec = st.pending
            _, h = _happiness_of(world, org)
            learner_step(org, px, pdec, h, done=True, tick=world.tick, events=world.events)
        else:
            # a private policy dies with its owner, so its last update would be discarded
            st.buffer.clear()
        st.pending = None
    org.alive = False
    world.organisms.remove(org)
    del world.by_id[org_id]
    if world.index is not None:
        row = world.index.entity_of.get(org_id)
        if row is not None:
            world.index.alive[row] = False
    world.inanimate.append(InanimateObject("Carcass_" + org.species, org.properties.copy(),
                                           org.conformation.copy(), False, world.tick))
    world.log("death", org_id, f"species={org.species} cause={cause.replace(' ', '_')} "
                               f"genome={org.genome} "
                               f"age={org.properties.age:g}")
    return world


def _resolve_solids(world: World, pos, radius):
    for o in world.inanimate:
        if not o.solid or o.removed:
            continue
        d = world.space.displacement(o.center, pos)
        dist = float(np.linalg.norm(d))
        need = o.radius + radius
        if dist < need:
            n = d / dist if dist > 0 else np.eye(world.space.dims)[0]
            pos = world.space.confine(o.center + n * need)
    return pos


def max_step(world: World, species: str) -> float:
    sp = world.templates[species].config
    gait = max([v for k, v in sp.speeds.items() if k != "translate"], default=0.0)
    return (gait + sp.speeds.get("translate", 0.0)) * world.dt


def _eat_candidates(world: World, snap: Snapshot, by_species: dict) -> dict:
    """Diet bodies each organism could possibly reach during this tick."""
    out = {}
    for name, orgs in by_species.items():
        diet = t_diet(world, name)
        if not diet:
            continue
        rows = snap.live_rows_of(diet)
        if rows.size == 0:
            for o in orgs:
                out[o.id] = rows
            continue
        slack = max_step(world, name) + max(
            [max_step(world, k) for k in diet if k in world.templates], default=0.0)
        centers = np.array([o.center for o in orgs])
        d = snap.pos[rows][None, :, :] - centers[:, None, :]
        if world.space.boundary_mode == "torus":
            d -= world.space.size * np.round(d / world.space.size)
        d2 = np.einsum("nmk,nmk->nm", d, d)
        reach = np.array([o.radius for o in orgs])[:, None] + snap.rad[rows][None, :] + slack
        near = d2 <= (reach + 1e-9) ** 2
        for i, o in enumerate(orgs):
            out[o.id] = rows[near[i]]
    return out


def t_diet(world: World, species: str) -> tuple:
    t = world.templates[species]
    if t.diet_kinds is None:
        t.diet_kinds = tuple(t.config.diet)
    return t.diet_kinds


def _eat(world: World, org: Organism, snap: Snapshot | None):
    sp = world.templates[org.species].config
    if not sp.diet:
        return None
    if snap is None:
        snap = snapshot_of(world)
    cands = world.eat_candidates.get(org.id) if snap is world.index else None
    if cands is not None:
        rows = cands[snap.alive[cands]]
    else:
        rows = snap.live_rows_of(t_diet(world, org.species))
    self_row = snap.entity_of.get(org.id, -1)
    if rows.size == 0:
        return None
    d = snap.pos[rows] - org.center
    sp_ = world.space
    if sp_.boundary_mode == "torus":
        d -= sp_.size * np.round(d / sp_.size)
    d2 = np.einsum("ij,ij->i", d, d)
    reach = org.radius + snap.rad[rows]
    ok = (d2 <= reach * reach) & (rows != self_row)
    if not ok.any():
        return None
    cand = np.flatnonzero(ok)
    row = int(rows[cand[np.argmin(d2[cand])]])
    food = snap.refs[row]
    tag = food.species if isinstance(food, Organism) else food.type_tag
    entry = sp.diet[tag]
    food_e = food.properties.get("Energy")
    e_max = sp.maxima.get("Energy")
    room = math.inf if e_max is None else max(0.0, e_max - org.properties.get("Energy"))
    amount = min(food_e, room) if entry.transfer else 0.0
    if amount <= 0.0 and food_e > 0.0 and entry.transfer:
        return None  # sated: leave the food alone
    org.properties.add("Energy", amount)
    food.properties.set("Energy", food_e - amount)
    if isinstance(food, Organism):
        kill(world, food.id, f"eaten_by_{org.species}")
    elif food.properties.get("Energy") <= 1e-12:
        food.removed = True
        snap.alive[row] = False
    for k, v in entry.effects.items():
        org.properties.add(k, v)
    return ("eat", tag, amount)


@dataclass(frozen=True)
class Resolved:
    """What a multi-hot decision does once conflicts are settled."""

    gait: str | None
    rot: int
    translate: np.ndarray | None
    eat: bool
    breathe: bool
    gains: tuple


def resolve_actions(t: SpeciesTemplate, decision) -> Resolved:
    """Run > Walk > Stand; opposite rotations cancel; translations add up."""
    d = np.asarray(decision)
    if d.shape != (t.n_actions,):
        raise ValueError(f"decision has length {d.shape[0] if d.ndim else 0}, "
                         f"species has {t.n_actions} actions")
    key = d.astype(np.int8).tobytes()
    hit = t.resolved.get(key)
    if hit is not None:
        return hit
    on = np.flatnonzero(d)
    rank = int(t.gait_rank[on].max()) if on.size else -1
    left = bool(np.any(t.rot[on] == 1))
    right = bool(np.any(t.rot[on] == -1))
    rot = 1 if left and not right else (-1 if right and not left else 0)
    tv = t.translate[on].sum(axis=0) if on.size else np.zeros(t.translate.shape[1])
    norm = float(np.linalg.norm(tv))
    g = t.gains[on].sum(axis=0) if on.size else np.zeros(len(t.gain_names))
    res = Resolved(
        gait=GAITS[rank] if rank >= 0 else None, rot=rot,
        translate=tv / norm if norm > 1e-12 else None,
        eat=bool(t.config.auto_eat or t.eat[on].any()), breathe=bool(t.breathe[on].any()),
        gains=tuple((n, float(v)) for n, v in zip(t.gain_names, g) if v),
    )
    t.resolved[key] = res
    return res


def apply_decision(world: World, org: Organism, decision) -> list:
    """Apply a multi-hot decision; returns the list of effects produced."""
    t = world.templates[org.species]
    sp = t.config
    try:
        res = resolve_actions(t, decision)
    except ValueError as exc:
        raise WorldFault(org.id, str(exc)) from None
    effects = []
    props = org.properties
    hp = org.hyper
    cost = hp.metabolic_cost * world.dt

    if res.rot:
        h = org.heading
        c, s = t.turn_cos, res.rot * t.turn_sin
        x, y = float(h[0]), float(h[1])
        h = h.copy()
        h[0], h[1] = c * x - s * y, s * x + c * y
        org.heading = h / math.sqrt(float(h @ h))
        cost += hp.move_costs.get("rotate", 0.0)
        effects.append(("rotate", res.rot))

    step_vec = None
    if res.gait is not None:
        speed = sp.speeds.get(res.gait, 0.0)
        if speed:
            step_vec = speed * world.dt * org.heading
        cost += hp.move_costs.get(res.gait, 0.0)
        effects.append(("gait", res.gait))
    if res.translate is not None:
        tv = sp.speeds.get("translate", 0.0) * world.dt * res.translate
        step_vec = tv if step_vec is None else step_vec + tv
        cost += hp.move_costs.get("translate", 0.0)
        effects.append(("translate", res.translate))
    if step_vec is not None:
        pos = world.space.confine(org.center + step_vec)
        if world.has_solids:
            pos = _resolve_solids(world, pos, org.radius)
        org.conformation.center = pos
        if world.index is not None:
            row = world.index.entity_of.get(org.id)
            if row is not None:
                world.index.pos[row] = pos

    if res.eat:
        e = _eat(world, org, world.index)
        if e is not None:
            effects.append(e)
    if res.breathe:
        props.set("Oxygen", sp.maxima.get("Oxygen", props.get("Oxygen")))
        effects.append(("breathe",))
    for name, v in res.gains:
        props.add(name, v)
    if cost:
        props.add("Energy", -cost)
        effects.append(("energy", -cost))
    return effects


# -- tick --------------------------------------------------------------------------

def check_world(world: World) -> None:
    orgs = world.organisms
    if not orgs:
        return
    ids = [o.id for o in orgs]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise WorldFault(dup, "duplicate organism id")
    heads = np.array([o.heading for o in orgs])
    centers = np.array([o.center for o in orgs])
    bad = np.abs(np.sqrt(np.einsum("ij,ij->i", heads, heads)) - 1.0) > 1e-9
    if bad.any():
        raise WorldFault(ids[int(np.argmax(bad))], "heading is not unit norm")
    outside = ~np.all(np.isfinite(centers), axis=1)
    if world.space.boundary_mode == "wall":
        tol = 1e-9
        outside |= np.any((centers < world.space.lo - tol) | (centers > world.space.hi + tol), axis=1)
    if outside.any():
        raise WorldFault(ids[int(np.argmax(outside))], "center outside space")
    for o in orgs:
        p = o.properties
        if not o.alive:
            raise WorldFault(o.id, "dead organism still listed")
        if not 0.0 <= p.fertility <= 1.0:
            raise WorldFault(o.id, "Fertility outside [0, 1]")
        if p.age < 0:
            raise WorldFault(o.id, "negative Age")
        for v in p.chemical.values():
            if v < 0:
                raise WorldFault(o.id, "negative chemical concentration")


def batched_forward(policies, X):
    """Forward pass for row i of X through policies[i]; returns (logits, values)."""
    first = policies[0]
    if all(p is first for p in policies):
        logits, values, _ = first.forward(X)
        return logits, values
    same = all(p.hidden == first.hidden and p.n_inputs == first.n_inputs
               and p.n_actions == first.n_actions for p in policies)
    if not same:
        rows = [p.forward(X[i:i + 1]) for i, p in enumerate(policies)]
        return np.concatenate([r[0] for r in rows]), np.concatenate([r[1] for r in rows])
    P = [np.stack(ps) for ps in zip(*(p.params for p in policies))]
    a = X * np.stack([p.input_scale for p in policies])
    k = 2 * len(first.hidden)
    for layer in range(0, k, 2):
        a = np.tanh(np.einsum("nhi,ni->nh", P[layer], a) + P[layer + 1])
    logits = np.einsum("nai,ni->na", P[k], a) + P[k + 1]
    values = np.einsum("nai,ni->na", P[k + 2], a)[:, 0] + P[k + 3][:, 0]
    return logits, values


def _decide_species(world: World, t: SpeciesTemplate, members, X):
    """Settle pending rewards, then pick actions for one species' organisms."""
    n = len(members)
    n_a = t.n_actions
    hn = t.happiness
    H = X @ hn.weights + hn.bias
    if not np.all(np.isfinite(H)):
        raise WorldFault(members[0].id, "non-finite observation")
    logits = np.zeros((n, n_a))
    values = np.zeros(n)
    learned = [i for i, o in enumerate(members) if o.nervous.policy is not None]
    pols = [members[i].nervous.policy for i in learned]
    if learned:
        logits[learned], values[learned] = batched_forward(pols, X[learned])
    updated = []
    for i, org in enumerate(members):
        st = org.learner
        if st.learner is not None and st.pending is not None:
            px, pdec = st.pending
            if learner_step(org, px, pdec, float(H[i]), next_value=float(values[i]),
                            tick=world.tick, events=world.events) is not None:
                updated.append(i)
        else:
            st.buffer.last_happiness = float(H[i])
    if updated:
        if all(p is pols[0] for p in pols):
            lg, v, _ = pols[0].forward(X[learned])
            logits[learned], values[learned] = lg, v
        else:
            for i in updated:
                lg, v, _ = members[i].nervous.policy.forward(X[i:i + 1])
                logits[i], values[i] = lg[0], v[0]
    logp = log_softmax(logits)
    if not np.all(np.isfinite(logp)):
        raise WorldFault(members[0].id, "non-finite policy logits")
    u = np.array([o.rng.random() for o in members])
    acts = np.argmax(logits, axis=1) if world.greedy else sample_actions(np.exp(logp), u)
    Z = np.zeros((n, n_a), dtype=np.int8)
    Z[np.arange(n), acts] = 1
    Y = np.zeros((n, n_a), dtype=np.int8)
    for i, org in enumerate(members):
        W = org.nervous.reflex
        if W.weights.any():
            Y[i] = reflex_out(W, X[i])
    multi = ((Y + Z) > 0).astype(np.int8)
    out = {}
    for i, org in enumerate(members):
        a = int(acts[i])
        dec = Decision(multi[i], a, float(logp[i, a]), float(values[i]), Y[i])
        if org.learner.learner is not None:
            org.learner.pending = (X[i], dec)
        out[org.id] = dec
    return out


def sense_all(world: World, snap: Snapshot, living, threads: int = 1) -> dict:
    groups: dict[str, list] = {}
    for o in living:
        groups.setdefault(o.species, []).append(o)
    jobs = [(name, orgs) for name, orgs in groups.items()]

    def run(job):
        name, orgs = job
        return name, observe(snap, orgs, world.templates[name].config)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = dict(ex.map(run, jobs))
    else:
        results = dict(map(run, jobs))
    obs = {}
    for name, orgs in groups.items():
        X = results[name]
        for i, o in enumerate(orgs):
            obs[o.id] = X[i]
    return obs


def step(world: World, threads: int = 1, validate: bool = True) -> World:
    if validate:
        check_world(world)
    snap = snapshot_of(world)
    world.index = snap
    living = list(world.organisms)
    obs = sense_all(world, snap, living, threads)

    by_species: dict[str, list] = {}
    for o in living:
        by_species.setdefault(o.species, []).append(o)
    world.eat_candidates = _eat_candidates(world, snap, by_species)
    decisions = {}
    for name, members in by_species.items():
        X = np.array([obs[o.id] for o in members])
        decisions.update(_decide_species(world, world.templates[name], members, X))

    for org in living:
        if not org.alive:
            continue
        apply_decision(world, org, decisions[org.id].multi_hot)
        org.properties.age += world.dt
        _update_fertility(org)
        cause = check_death(org)
        if cause is not None:
            kill(world, org.id, cause)
            continue
        if world.reproduction_enabled:
            gen.reproduce(world, org)

    _update_inanimate(world)
    if world.mode == "pretrain":
        for sp in world.config.species:
            missing = sp.initial_count - world.population(sp.name)
            for _ in range(max(0, missing)):
                spawn_template(world, sp.name)
    world.index = None
    world.eat_candidates = {}
    world.tick += 1
    return world


def _update_inanimate(world: World) -> None:
    decay = world.config.carcass_decay
    keep = []
    for o in world.inanimate:
        if o.removed:
            continue
        if decay is not None and o.type_tag.startswith("Carcass_") \
                and world.tick - o.created_tick >= decay:
            continue
        keep.append(o)
    world.inanimate = keep
    counts = Counter(o.type_tag for o in keep)
    for kind in world.config.objects:
        rg = kind.regrowth
        if rg is None or rg.model != "logistic":
            continue
        n = counts.get(kind.type_tag, 0)
        cap = rg.capacity
        expected = rg.rate * n * (1.0 - n / cap) + rg.seed_rate if cap else 0.0
        k = int(world.rng.poisson(max(expected, 0.0))) if expected > 0 else 0
        k = min(k, max(cap - n, 0))
        lo, hi = _region(world, kind.region)
        for _ in range(k):
            world.inanimate.append(new_object(world, kind, _draw(world, lo, hi, kind.grid_step)))


def run(world: World, steps: int, recorder=None, threads: int = 1, validate: bool = True) -> World:
    if recorder is not None and not recorder.ticks:
        recorder.record(world)
    for _ in range(steps):
        step(world, threads, validate)
        if recorder is not None:
            recorder.record(world)
    return world
