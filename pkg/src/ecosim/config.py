"""Scenario configuration schema.

Every numeric constant a scenario needs lives here as data, never in the
simulation code. The JSON layout mirrors these models field for field; see
``docs/config_schema.md`` for the documented schema.
"""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

Bounds = list[tuple[float, float]]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PPOConfig(_Model):
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    clip_eps: float = Field(0.2, gt=0.0)
    epochs: int = Field(4, ge=1)
    minibatch: int = Field(256, ge=1)
    lr: float = Field(3e-4, gt=0.0)
    entropy_coef: float = Field(0.01, ge=0.0)
    value_coef: float = Field(0.5, ge=0.0)
    max_grad_norm: float = Field(0.5, gt=0.0)
    buffer_size: int = Field(256, ge=1)
    # pretraining pools conspecific buffers until this many transitions
    pretrain_batch: int = Field(1024, ge=1)
    online_buffer_size: int = Field(64, ge=1)
    online_minibatch: int = Field(64, ge=1)
    online_lr: float = Field(1e-4, gt=0.0)


class ReproductionConfig(_Model):
    mode: Literal["sexual", "asexual", "probabilistic_spawn"] = "probabilistic_spawn"
    birth_prob: float = Field(0.0, ge=0.0, le=1.0)
    mutation_rate: float = Field(0.0, ge=0.0, le=1.0)
    energy_min: float = 0.0
    energy_cost: float = Field(0.0, ge=0.0)
    cooldown: int = Field(0, ge=0)
    maturity_age: float = Field(0.0, ge=0.0)
    mating_range: float = Field(2.0, gt=0.0)
    placement: Literal["near_parent", "random_unoccupied"] = "random_unoccupied"
    policy_noise: float = Field(0.01, ge=0.0)


class HyperConfig(_Model):
    age_max: float = Field(gt=0.0)
    # property -> [lo, hi]; null hi means unbounded
    survival: dict[str, tuple[float, Optional[float]]] = {}
    reproduction: ReproductionConfig = ReproductionConfig()
    metabolic_cost: float = Field(0.0, ge=0.0)
    # gait or "translate" -> energy per tick
    move_costs: dict[str, float] = {}
    ppo: PPOConfig = PPOConfig()


class SensorConfig(_Model):
    name: str
    modality: Literal["vision_ray", "smell", "touch", "internal", "light"]
    target: Optional[str] = None
    targets: list[str] = []
    range: Optional[float] = Field(None, gt=0.0)
    # 2-D: (forward, left) in the body frame; 3-D: world-frame offset
    offset: Optional[list[float]] = None
    # "world" keeps 2-D offsets axis-aligned regardless of heading
    frame: Literal["body", "world"] = "body"
    rays: int = Field(8, ge=1)
    # explicit world-frame ray directions (3-D swimmers)
    directions: Optional[list[list[float]]] = None
    light_scaled: bool = False
    scale: float = 1.0


class ActionConfig(_Model):
    name: str
    gait: Optional[Literal["stand", "walk", "run"]] = None
    rotate: Optional[Literal["left", "right"]] = None
    translate: Optional[list[float]] = None
    eat: bool = False
    breathe: bool = False
    gain: dict[str, float] = {}


class DietEntry(_Model):
    transfer: bool = True
    effects: dict[str, float] = {}


class HappinessConfig(_Model):
    weights: dict[str, float] = {}
    bias: float = 0.0


class ReflexEntry(_Model):
    sensor: str
    action: str
    weight: Literal[-1, 1]


class GeneEffect(_Model):
    kind: Literal["reflex", "hyper", "policy_seed", "noop"] = "noop"
    reflex: Optional[ReflexEntry] = None
    field: Optional[str] = None
    value: Optional[float] = None
    offset: int = 0


class GenomeConfig(_Model):
    alphabet: str
    table: dict[str, GeneEffect]
    initial: list[str]
    min_length: int = Field(1, ge=0)
    max_length: int = Field(8, ge=1)


class PolicyConfig(_Model):
    hidden: list[int] = [32, 32]
    mode: Literal["learned", "random"] = "learned"
    online_learning: bool = True


class SpeciesConfig(_Model):
    name: str
    radius: float = Field(gt=0.0)
    initial_count: int = Field(ge=0)
    cap: int = Field(ge=0)
    spawn_region: Optional[Bounds] = None
    # snap spawn positions to a lattice of this spacing
    grid_step: Optional[float] = Field(None, gt=0.0)
    # initial organisms get Age ~ U(0, spread * age_max)
    initial_age_spread: float = Field(0.0, ge=0.0, le=1.0)
    properties: dict[str, float] = {}
    maxima: dict[str, float] = {}
    speeds: dict[str, float] = {}
    turn_angle: float = 0.5235987755982988
    sensors: list[SensorConfig]
    actions: list[ActionConfig]
    happiness: HappinessConfig = HappinessConfig()
    reflexes: list[ReflexEntry] = []
    reflex_threshold: float = Field(0.0, ge=0.0)
    auto_eat: bool = False
    diet: dict[str, DietEntry] = {}
    genome: Optional[GenomeConfig] = None
    hyper: HyperConfig
    policy: PolicyConfig = PolicyConfig()


class RegrowthConfig(_Model):
    model: Literal["logistic", "none"] = "logistic"
    rate: float = Field(0.0, ge=0.0)
    capacity: int = Field(0, ge=0)
    # immigrant patches per tick, lets an extinct type come back
    seed_rate: float = Field(0.0, ge=0.0)


class ObjectKindConfig(_Model):
    type_tag: str
    radius: float = Field(gt=0.0)
    initial_count: int = Field(0, ge=0)
    properties: dict[str, float] = {}
    region: Optional[Bounds] = None
    grid_step: Optional[float] = Field(None, gt=0.0)
    solid: bool = False
    regrowth: Optional[RegrowthConfig] = None


class LightConfig(_Model):
    period: int = Field(2000, ge=2)
    attenuation: float = Field(gt=0.0)


class SeriesConfig(_Model):
    name: str
    kind: Literal[
        "population", "object_count", "mean_depth", "surface_light",
        "light_exposure", "gene_count",
    ]
    target: Optional[str] = None
    symbol: Optional[str] = None


class ScenarioConfig(_Model):
    name: str
    kind: str = "generic"
    dims: Literal[2, 3]
    bounds: Bounds
    boundary: Literal["wall", "torus"] = "wall"
    dt: float = Field(1.0, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    light: Optional[LightConfig] = None
    objects: list[ObjectKindConfig] = []
    species: list[SpeciesConfig]
    carcass_decay: Optional[int] = Field(None, ge=0)
    spawn_retries: int = Field(20, ge=1)
    pretrain_steps: int = Field(0, ge=0)
    run_steps: int = Field(1000, ge=1)
    stride: int = Field(1, ge=1)
    series: list[SeriesConfig] = []

    def species_by_name(self, name: str) -> SpeciesConfig:
        for sp in self.species:
            if sp.name == name:
                return sp
        raise KeyError(name)
