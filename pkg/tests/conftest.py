from __future__ import annotations

import numpy as np
import pytest

from ecosim.config import (ActionConfig, DietEntry, HappinessConfig, HyperConfig,
                           ObjectKindConfig, ReproductionConfig, ScenarioConfig, SensorConfig,
                           SpeciesConfig)
from ecosim.world import build_world


def bug_species(**kw) -> SpeciesConfig:
    base = dict(
        name="Bug", radius=0.5, initial_count=0, cap=10,
        properties={"Energy": 1.0}, maxima={"Energy": 100.0},
        speeds={"walk": 1.0, "run": 2.0, "translate": 1.0},
        sensors=[
            SensorConfig(name="Energy", modality="internal", target="Energy"),
            SensorConfig(name="TouchGrass", modality="touch", target="GrassGreen"),
        ],
        actions=[
            ActionConfig(name="Stand", gait="stand"),
            ActionConfig(name="Walk", gait="walk"),
            ActionConfig(name="Run", gait="run"),
            ActionConfig(name="RotateLeft", rotate="left"),
            ActionConfig(name="RotateRight", rotate="right"),
            ActionConfig(name="Eat", eat=True),
        ],
        happiness=HappinessConfig(weights={"Energy": 1.0}),
        diet={"GrassGreen": DietEntry()},
        hyper=HyperConfig(age_max=100.0, survival={"Energy": (0.0, None)},
                          move_costs={"walk": 0.1, "run": 0.3},
                          reproduction=ReproductionConfig()),
    )
    base.update(kw)
    return SpeciesConfig(**base)


def tiny_config(species=None, objects=None, **kw) -> ScenarioConfig:
    base = dict(name="tiny", dims=2, bounds=[(0.0, 20.0), (0.0, 20.0)], seed=3,
                species=species if species is not None else [bug_species()],
                objects=objects if objects is not None else [
                    ObjectKindConfig(type_tag="GrassGreen", radius=0.5, initial_count=0,
                                     properties={"Energy": 5.0})])
    base.update(kw)
    return ScenarioConfig(**base)


def place(world, species="Bug", center=(10.0, 10.0), heading=(1.0, 0.0), genome=""):
    from ecosim.world import make_organism, spawn

    org = make_organism(world, species, genome)
    org = spawn(world, org)
    org.conformation.center = np.array(center, dtype=float)
    org.heading = np.array(heading, dtype=float)
    return org


def add_object(world, kind_index=0, center=(10.0, 10.0), **props):
    from ecosim.world import new_object

    kind = world.config.objects[kind_index]
    obj = new_object(world, kind, np.array(center, dtype=float))
    for k, v in props.items():
        obj.properties.set(k, v)
    world.inanimate.append(obj)
    return obj


@pytest.fixture
def tiny_world():
    return build_world(tiny_config())


def decision(world, species, *names):
    t = world.templates[species]
    d = np.zeros(t.n_actions, dtype=np.int8)
    for n in names:
        d[t.action_index[n]] = 1
    return d


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
