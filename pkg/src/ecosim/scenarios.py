"""Built-in scenarios and the JSON config file format.

Every constant below is a desk-scale tuning choice, not a measured value
for any real species.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

from pydantic import ValidationError

from .config import (ActionConfig, DietEntry, GeneEffect, GenomeConfig, HappinessConfig,
                     HyperConfig, LightConfig, ObjectKindConfig, PolicyConfig, PPOConfig,
                     RegrowthConfig, ReflexEntry, ReproductionConfig, ScenarioConfig,
                     SensorConfig, SeriesConfig, SpeciesConfig)
from .sensing import BOUNDARY, observation_layout


class ConfigError(ValueError):
    pass


def _gait_rotate_actions() -> list[ActionConfig]:
    """{Stand, Walk, Run} x {NoRotate, RotateLeft, RotateRight}."""
    out = []
    for gait in ("stand", "walk", "run"):
        for rot in (None, "left", "right"):
            name = gait.capitalize() + {None: "", "left": "+RotateLeft", "right": "+RotateRight"}[rot]
            out.append(ActionConfig(name=name, gait=gait, rotate=rot))
    return out


# -- predator / prey -------------------------------------------------------------

def build_predator_prey(seed: int = 0) -> ScenarioConfig:
    size = 60.0
    grass = ObjectKindConfig(
        type_tag="Grass", radius=0.5, initial_count=200, properties={"Energy": 1.0},
        regrowth=RegrowthConfig(rate=0.05, capacity=400, seed_rate=4.0),
    )
    deer = SpeciesConfig(
        name="Deer", radius=0.5, initial_count=40, cap=150, initial_age_spread=0.5,
        properties={"Energy": 4.0}, maxima={"Energy": 10.0},
        speeds={"walk": 0.4, "run": 0.8}, turn_angle=math.pi / 6,
        sensors=[
            SensorConfig(name="eyes", modality="vision_ray", targets=["Grass", "Wolf"],
                         range=8.0, rays=7),
            SensorConfig(name="GrassSmell", modality="smell", target="Grass", range=10.0),
            SensorConfig(name="WolfSmell", modality="smell", target="Wolf", range=10.0),
            SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.1),
        ],
        actions=_gait_rotate_actions(),
        happiness=HappinessConfig(weights={"Energy": 1.0, "WolfSmell": -1.0}),
        auto_eat=True, diet={"Grass": DietEntry()},
        hyper=HyperConfig(
            age_max=2500, survival={"Energy": (0.001, None)},
            reproduction=ReproductionConfig(mode="probabilistic_spawn", birth_prob=0.03,
                                            energy_min=6.0, energy_cost=3.0, cooldown=30,
                                            maturity_age=100),
            metabolic_cost=0.01, move_costs={"walk": 0.005, "run": 0.02},
            ppo=PPOConfig(),
        ),
    )
    wolf = SpeciesConfig(
        name="Wolf", radius=0.4, initial_count=8, cap=50, initial_age_spread=0.5,
        properties={"Energy": 20.0}, maxima={"Energy": 50.0},
        speeds={"walk": 0.4, "run": 0.7}, turn_angle=math.pi / 6,
        sensors=[
            SensorConfig(name="eyes", modality="vision_ray", targets=["Deer"], range=10.0, rays=7),
            SensorConfig(name="DeerSmell", modality="smell", target="Deer", range=15.0),
            SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.05),
        ],
        actions=_gait_rotate_actions(),
        happiness=HappinessConfig(weights={"Energy": 1.0, "DeerSmell": 1.0}),
        auto_eat=True, diet={"Deer": DietEntry()},
        hyper=HyperConfig(
            age_max=4000, survival={"Energy": (0.001, None)},
            reproduction=ReproductionConfig(mode="probabilistic_spawn", birth_prob=0.002,
                                            energy_min=30.0, energy_cost=15.0, cooldown=100,
                                            maturity_age=200),
            metabolic_cost=0.1, move_costs={"walk": 0.01, "run": 0.03},
        ),
    )
    return ScenarioConfig(
        name="predator_prey", kind="predator_prey", dims=2,
        bounds=[(0.0, size), (0.0, size)], boundary="torus", seed=seed,
        objects=[grass], species=[deer, wolf], carcass_decay=0,
        pretrain_steps=50_000, run_steps=20_000,
        stride=50,  # cycles span thousands of ticks; per-tick samples are birth/death noise
        series=[
            SeriesConfig(name="grass", kind="object_count", target="Grass"),
            SeriesConfig(name="deer", kind="population", target="Deer"),
            SeriesConfig(name="wolf", kind="population", target="Wolf"),
        ],
    )


# -- marine ----------------------------------------------------------------------

AXES = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
AXIS_NAMES = ["SwimEast", "SwimWest", "SwimNorth", "SwimSouth", "SwimUp", "SwimDown"]


def _swim_actions() -> list[ActionConfig]:
    acts = [ActionConfig(name=n, translate=[float(v) for v in d]) for n, d in zip(AXIS_NAMES, AXES)]
    return acts + [ActionConfig(name="Hold")]


def build_marine(seed: int = 0) -> ScenarioConfig:
    side, depth = 16.0, 30.0
    k = math.log(20.0) / depth  # light at the floor is 5% of the surface
    axes = [[float(v) for v in d] for d in AXES]
    phyto = ObjectKindConfig(
        type_tag="Phytoplankton", radius=0.6, initial_count=150, properties={"Energy": 0.25},
        region=[(0.0, side), (0.0, side), (depth - 6.0, depth)],
        regrowth=RegrowthConfig(rate=0.02, capacity=250, seed_rate=0.2),
    )
    copepod = SpeciesConfig(
        name="Copepod", radius=0.4, initial_count=40, cap=120, initial_age_spread=0.5,
        properties={"Energy": 5.0}, maxima={"Energy": 10.0}, speeds={"translate": 0.5},
        sensors=[
            SensorConfig(name="eyes", modality="vision_ray", targets=["Phytoplankton"],
                         range=6.0, directions=axes),
            # daytime light at depth is 0.05..0.3; scaled so the policy can tell it from night
            SensorConfig(name="Light", modality="light", scale=10.0),
            SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.1),
            SensorConfig(name="TouchFood", modality="touch", target="Phytoplankton"),
            SensorConfig(name="TouchKrill", modality="touch", target="Krill"),
            SensorConfig(name="TouchBoundary", modality="touch", target=BOUNDARY),
            SensorConfig(name="TouchCopepod", modality="touch", target="Copepod"),
        ],
        actions=_swim_actions(),
        happiness=HappinessConfig(weights={"Energy": 1.0, "Light": -0.5}),
        auto_eat=True, diet={"Phytoplankton": DietEntry()},
        hyper=HyperConfig(
            age_max=6000, survival={"Energy": (0.001, None)},
            reproduction=ReproductionConfig(mode="probabilistic_spawn", birth_prob=0.01,
                                            energy_min=5.0, energy_cost=2.0, cooldown=200,
                                            maturity_age=300),
            metabolic_cost=0.004, move_costs={"translate": 0.002},
        ),
    )
    krill = SpeciesConfig(
        name="Krill", radius=0.6, initial_count=10, cap=20, initial_age_spread=0.5,
        properties={"Energy": 15.0}, maxima={"Energy": 30.0}, speeds={"translate": 0.6},
        sensors=[
            SensorConfig(name="eyes", modality="vision_ray", targets=["Copepod"], range=8.0,
                         directions=axes, light_scaled=True),
            SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.05),
        ],
        actions=_swim_actions(),
        happiness=HappinessConfig(weights={"Energy": 1.0}),
        auto_eat=True, diet={"Copepod": DietEntry()},
        hyper=HyperConfig(
            age_max=8000, survival={"Energy": (0.001, None)},
            reproduction=ReproductionConfig(mode="probabilistic_spawn", birth_prob=0.0005,
                                            energy_min=22.0, energy_cost=10.0, cooldown=400,
                                            maturity_age=500),
            metabolic_cost=0.01, move_costs={"translate": 0.002},
        ),
    )
    return ScenarioConfig(
        name="marine", kind="marine", dims=3,
        bounds=[(0.0, side), (0.0, side), (0.0, depth)], boundary="wall", seed=seed,
        light=LightConfig(period=2000, attenuation=k),
        objects=[phyto], species=[copepod, krill], carcass_decay=0,
        pretrain_steps=50_000, run_steps=10_000,
        series=[
            SeriesConfig(name="copepod", kind="population", target="Copepod"),
            SeriesConfig(name="krill", kind="population", target="Krill"),
            SeriesConfig(name="phytoplankton", kind="object_count", target="Phytoplankton"),
            SeriesConfig(name="mean_depth", kind="mean_depth", target="Copepod"),
            SeriesConfig(name="light", kind="surface_light"),
            SeriesConfig(name="light_exposure", kind="light_exposure", target="Copepod"),
        ],
    )


# -- reflex goats -------------------------------------------------------------------

GRASS_COLORS = {"R": "GrassRed", "Y": "GrassYellow", "G": "GrassGreen"}


def build_reflex_goats(seed: int = 0) -> ScenarioConfig:
    size = 40.0
    regrow = RegrowthConfig(rate=0.01, capacity=120, seed_rate=0.1)
    objects = [
        ObjectKindConfig(type_tag="GrassGreen", radius=0.5, initial_count=120,
                         properties={"Energy": 3.0}, regrowth=regrow),
        ObjectKindConfig(type_tag="GrassYellow", radius=0.5, initial_count=60,
                         properties={"Energy": 0.0},
                         regrowth=RegrowthConfig(rate=0.01, capacity=60, seed_rate=0.1)),
        ObjectKindConfig(type_tag="GrassRed", radius=0.5, initial_count=60,
                         properties={"Energy": 0.0},
                         regrowth=RegrowthConfig(rate=0.01, capacity=60, seed_rate=0.1)),
    ]
    touch = [SensorConfig(name=f"Touch{c}", modality="touch", target=c)
             for c in GRASS_COLORS.values()]
    table = {s: GeneEffect(kind="reflex", reflex=ReflexEntry(sensor=f"Touch{c}", action="Eat",
                                                             weight=-1))
             for s, c in GRASS_COLORS.items()}
    table["B"] = GeneEffect(kind="noop")
    goat = SpeciesConfig(
        name="Goat", radius=0.5, initial_count=60, cap=150, initial_age_spread=0.5,
        properties={"Energy": 6.0, "Toxin": 0.0}, maxima={"Energy": 12.0},
        speeds={"walk": 0.5}, turn_angle=math.pi / 4,
        sensors=[
            SensorConfig(name="eyes", modality="vision_ray",
                         targets=["GrassGreen", "GrassYellow", "GrassRed"], range=6.0, rays=5),
            *touch,
            SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.1),
        ],
        actions=[
            ActionConfig(name="Walk", gait="walk"),
            ActionConfig(name="WalkLeft", gait="walk", rotate="left"),
            ActionConfig(name="WalkRight", gait="walk", rotate="right"),
            ActionConfig(name="Eat", eat=True),
        ],
        happiness=HappinessConfig(weights={"Energy": 1.0}),
        diet={
            "GrassGreen": DietEntry(),
            "GrassYellow": DietEntry(effects={"Energy": -1.5}),
            "GrassRed": DietEntry(effects={"Toxin": 1.0}),
        },
        genome=GenomeConfig(alphabet="RYGB", table=table,
                            initial=["R", "Y", "G", "B"], min_length=1, max_length=6),
        hyper=HyperConfig(
            age_max=3000, survival={"Energy": (0.001, None), "Toxin": (0.0, 0.5)},
            reproduction=ReproductionConfig(mode="sexual", birth_prob=0.05, mutation_rate=0.01,
                                            energy_min=6.0, energy_cost=3.0, cooldown=50,
                                            maturity_age=100, mating_range=4.0,
                                            placement="near_parent"),
            metabolic_cost=0.01, move_costs={"walk": 0.005},
        ),
        policy=PolicyConfig(hidden=[16, 16]),
    )
    return ScenarioConfig(
        name="reflex_goats", kind="reflex_goats", dims=2,
        bounds=[(0.0, size), (0.0, size)], boundary="torus", seed=seed,
        objects=objects, species=[goat], carcass_decay=0,
        pretrain_steps=0, run_steps=20_000,
        series=[SeriesConfig(name="goat", kind="population", target="Goat")]
        + [SeriesConfig(name=s, kind="gene_count", target="Goat", symbol=s) for s in "RYGB"]
        + [SeriesConfig(name=c, kind="object_count", target=c) for c in GRASS_COLORS.values()],
    )


# -- calibration worlds ------------------------------------------------------------

def build_bandit(seed: int = 0) -> ScenarioConfig:
    """One organism, two arms; arm 0 pays a fixed happiness gain."""
    agent = SpeciesConfig(
        name="Agent", radius=0.5, initial_count=1, cap=1,
        properties={"Payoff": 0.0},
        sensors=[SensorConfig(name="Payoff", modality="internal", target="Payoff", scale=0.0)],
        actions=[ActionConfig(name="Arm0", gain={"Payoff": 1.0}), ActionConfig(name="Arm1")],
        happiness=HappinessConfig(weights={"Payoff": 1.0}),
        hyper=HyperConfig(age_max=1e12, ppo=PPOConfig(buffer_size=128, pretrain_batch=128,
                                                      minibatch=64, lr=1e-3)),
        policy=PolicyConfig(hidden=[8]),
    )
    return ScenarioConfig(name="bandit", kind="bandit", dims=2, bounds=[(0.0, 4.0), (0.0, 4.0)],
                          seed=seed, species=[agent], pretrain_steps=10_000, run_steps=1000,
                          series=[SeriesConfig(name="payoff_agents", kind="population",
                                               target="Agent")])


GRID_OFFSETS = {"SmellEast": [1.0, 0.0], "SmellWest": [-1.0, 0.0],
                "SmellNorth": [0.0, 1.0], "SmellSouth": [0.0, -1.0]}


def build_gridworld(seed: int = 0) -> ScenarioConfig:
    """5x5 lattice foraging: one food item, respawned uniformly once eaten."""
    food = ObjectKindConfig(type_tag="Food", radius=0.1, initial_count=1,
                            properties={"Energy": 1.0}, region=[(0.0, 4.0), (0.0, 4.0)],
                            grid_step=1.0,
                            regrowth=RegrowthConfig(rate=0.0, capacity=1, seed_rate=50.0))
    sensors = [SensorConfig(name="SmellHere", modality="smell", target="Food", scale=4.0)]
    sensors += [SensorConfig(name=n, modality="smell", target="Food", offset=off, frame="world",
                             scale=4.0) for n, off in GRID_OFFSETS.items()]
    sensors.append(SensorConfig(name="Energy", modality="internal", target="Energy", scale=0.0))
    moves = {"East": [1.0, 0.0], "West": [-1.0, 0.0], "North": [0.0, 1.0], "South": [0.0, -1.0]}
    forager = SpeciesConfig(
        name="Forager", radius=0.3, initial_count=1, cap=1, grid_step=1.0,
        spawn_region=[(0.0, 4.0), (0.0, 4.0)],
        properties={"Energy": 0.0}, speeds={"translate": 1.0},
        sensors=sensors,
        actions=[ActionConfig(name=n, translate=v) for n, v in moves.items()]
        + [ActionConfig(name="Stay")],
        happiness=HappinessConfig(weights={"Energy": 1.0}),
        auto_eat=True, diet={"Food": DietEntry()},
        hyper=HyperConfig(age_max=1e12, ppo=PPOConfig(buffer_size=128, pretrain_batch=512,
                                                      minibatch=128, lr=1e-3, gamma=0.9)),
        policy=PolicyConfig(hidden=[32]),
    )
    return ScenarioConfig(name="gridworld", kind="gridworld", dims=2,
                          bounds=[(0.0, 4.0), (0.0, 4.0)], seed=seed, objects=[food],
                          species=[forager], pretrain_steps=30_000, run_steps=2000,
                          series=[SeriesConfig(name="energy_holders", kind="population",
                                               target="Forager")])


BUILTINS = {
    "predator_prey": build_predator_prey,
    "marine": build_marine,
    "reflex_goats": build_reflex_goats,
    "bandit": build_bandit,
    "gridworld": build_gridworld,
}


def builtin(name: str, seed: int = 0) -> ScenarioConfig:
    try:
        return BUILTINS[name](seed)
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; built-ins: {', '.join(BUILTINS)}") from None


# -- file format ----------------------------------------------------------------------

def export_config(config: ScenarioConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def save_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(export_config(config))


def _semantic_errors(c: ScenarioConfig) -> list[str]:
    errs = []
    species = {sp.name for sp in c.species}
    objects = {k.type_tag for k in c.objects}
    carcasses = {"Carcass_" + s for s in species}
    bodies = species | objects | carcasses
    if len(species) != len(c.species):
        errs.append("species: duplicate species names")
    for i, sp in enumerate(c.species):
        base = f"species.{i}"
        if sp.initial_count > sp.cap:
            errs.append(f"{base}.cap: cap {sp.cap} is below initial_count {sp.initial_count}")
        for j, s in enumerate(sp.sensors):
            loc = f"{base}.sensors.{j}"
            if s.modality in ("smell", "touch") and s.target is None:
                errs.append(f"{loc}.target: {s.modality} sensor needs a target")
            if s.modality == "smell" and s.target not in bodies and s.target is not None:
                errs.append(f"{loc}.target: unknown sensor target {s.target!r}")
            if s.modality == "touch" and s.target not in bodies | {BOUNDARY} \
                    and s.target is not None:
                errs.append(f"{loc}.target: unknown sensor target {s.target!r}")
            if s.modality == "internal" and s.target is None:
                errs.append(f"{loc}.target: internal sensor needs a property name")
            if s.modality == "vision_ray":
                if s.range is None:
                    errs.append(f"{loc}.range: vision sensor needs a range")
                if not s.targets:
                    errs.append(f"{loc}.targets: vision sensor needs targets")
                for k, t in enumerate(s.targets):
                    if t not in bodies:
                        errs.append(f"{loc}.targets.{k}: unknown sensor target {t!r}")
                if s.directions is not None and any(len(d) != c.dims for d in s.directions):
                    errs.append(f"{loc}.directions: need {c.dims}-component vectors")
            if s.offset is not None and len(s.offset) != c.dims:
                errs.append(f"{loc}.offset: need {c.dims} components")
            if s.modality == "light" and c.light is None:
                errs.append(f"{loc}.modality: light sensor in a scenario without light")
        names = [s.name for s in sp.sensors]
        if len(set(names)) != len(names):
            errs.append(f"{base}.sensors: duplicate sensor names")
        layout = set(observation_layout(sp, c.dims)) if not errs else set()
        for k in sp.happiness.weights:
            if layout and k not in layout:
                errs.append(f"{base}.happiness.weights.{k}: not an observation entry")
        actions = {a.name for a in sp.actions}
        for j, a in enumerate(sp.actions):
            if a.translate is not None and (len(a.translate) != c.dims
                                            or not any(a.translate)):
                errs.append(f"{base}.actions.{j}.translate: need a non-zero {c.dims}-vector")
        reflexes = [(f"{base}.reflexes.{j}", r) for j, r in enumerate(sp.reflexes)]
        if sp.genome is not None:
            g = sp.genome
            for sym in g.alphabet:
                if sym not in g.table:
                    errs.append(f"{base}.genome.table: no entry for symbol {sym!r}")
            for sym, eff in g.table.items():
                loc = f"{base}.genome.table.{sym}"
                if sym not in g.alphabet:
                    errs.append(f"{loc}: symbol not in alphabet")
                if eff.kind == "reflex":
                    if eff.reflex is None:
                        errs.append(f"{loc}.reflex: reflex gene needs an entry")
                    else:
                        reflexes.append((f"{loc}.reflex", eff.reflex))
                if eff.kind == "hyper":
                    if not eff.field or eff.value is None:
                        errs.append(f"{loc}: hyper gene needs field and value")
                    else:
                        try:
                            _check_path(HyperConfig, eff.field.split("."))
                        except KeyError as exc:
                            errs.append(f"{loc}.field: unknown hyperparameter {exc.args[0]!r}")
            for j, init in enumerate(g.initial):
                if set(init) - set(g.alphabet):
                    errs.append(f"{base}.genome.initial.{j}: symbols outside alphabet")
                if not g.min_length <= len(init) <= g.max_length:
                    errs.append(f"{base}.genome.initial.{j}: length outside bounds")
            if not g.initial:
                errs.append(f"{base}.genome.initial: need at least one genome")
        for loc, r in reflexes:
            if layout and r.sensor not in layout:
                errs.append(f"{loc}.sensor: unknown sensor {r.sensor!r}")
            if r.action not in actions:
                errs.append(f"{loc}.action: unknown action {r.action!r}")
        for tag in sp.diet:
            if tag not in bodies:
                errs.append(f"{base}.diet.{tag}: unknown food type")
        for gait in list(sp.speeds) + list(sp.hyper.move_costs):
            if gait not in ("stand", "walk", "run", "translate", "rotate"):
                errs.append(f"{base}: unknown gait {gait!r}")
        if sp.spawn_region is not None and len(sp.spawn_region) != c.dims:
            errs.append(f"{base}.spawn_region: need {c.dims} axes")
    for i, k in enumerate(c.objects):
        if k.region is not None and len(k.region) != c.dims:
            errs.append(f"objects.{i}.region: need {c.dims} axes")
    if len(c.bounds) != c.dims:
        errs.append(f"bounds: need {c.dims} (min, max) pairs")
    for i, s in enumerate(c.series):
        loc = f"series.{i}.target"
        if s.kind in ("population", "mean_depth", "light_exposure", "gene_count") \
                and s.target not in species:
            errs.append(f"{loc}: unknown species {s.target!r}")
        if s.kind == "object_count" and s.target not in objects | carcasses:
            errs.append(f"{loc}: unknown object type {s.target!r}")
        if s.kind == "gene_count" and not s.symbol:
            errs.append(f"series.{i}.symbol: gene_count needs a symbol")
    return errs


def _check_path(model, path):
    fields = model.model_fields
    if path[0] not in fields:
        raise KeyError(path[0])
    if len(path) > 1:
        sub = fields[path[0]].annotation
        _check_path(sub, path[1:])


def validate_config(config: ScenarioConfig) -> ScenarioConfig:
    errs = _semantic_errors(config)
    if errs:
        raise ConfigError("invalid scenario config:\n  " + "\n  ".join(errs))
    return config


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError(f"{source}: invalid scenario config:\n  " + "\n  ".join(lines)) from None
    return validate_config(config)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(p))


def resolve(name_or_path: str, seed: int | None = None) -> ScenarioConfig:
    """Built-in scenario name or path to a JSON config."""
    if name_or_path in BUILTINS:
        return builtin(name_or_path, 0 if seed is None else seed)
    config = load_config(name_or_path)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config
