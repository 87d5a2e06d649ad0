"""Genomes over a finite alphabet: decode, mutation, crossover, reproduction."""
from __future__ import annotations

import numpy as np

from .config import GenomeConfig, HyperConfig
from .nervous import ReflexNetwork


class GenomeError(ValueError):
    pass


def validate(g: str, cfg: GenomeConfig) -> str:
    bad = sorted(set(g) - set(cfg.alphabet))
    if bad:
        raise GenomeError(f"genome {g!r} has symbols outside the alphabet {cfg.alphabet!r}: {bad}")
    return g


def _override(model, path: list[str], value):
    head = path[0]
    if head not in type(model).model_fields:
        raise GenomeError(f"unknown hyperparameter field {head!r}")
    if len(path) == 1:
        return model.model_copy(update={head: value})
    return model.model_copy(update={head: _override(getattr(model, head), path[1:], value)})


def decode(g: str, cfg: GenomeConfig | None, template) -> tuple[ReflexNetwork, int, HyperConfig]:
    """Phenotype from a genome, starting at the species template.

    ``template`` supplies ``config`` (the species), ``obs_names`` and
    ``actions``. Reflex genes set a weight, so repeats are idempotent.
    """
    sp = template.config
    obs = {n: i for i, n in enumerate(template.obs_names)}
    act = {a: i for i, a in enumerate(template.actions)}
    W = np.zeros((len(act), len(obs)))

    def put(entry):
        try:
            W[act[entry.action], obs[entry.sensor]] = entry.weight
        except KeyError as exc:
            raise GenomeError(f"reflex refers to unknown sensor or action {exc}") from None

    for entry in sp.reflexes:
        put(entry)
    hyper = sp.hyper
    seed = 0
    if cfg is not None:
        validate(g, cfg)
        for s in g:
            eff = cfg.table.get(s)
            if eff is None:
                raise GenomeError(f"gene table has no entry for {s!r}")
            if eff.kind == "reflex":
                put(eff.reflex)
            elif eff.kind == "hyper":
                hyper = _override(hyper, eff.field.split("."), eff.value)
            elif eff.kind == "policy_seed":
                seed += eff.offset
    elif g:
        raise GenomeError("species has no genome table")
    return ReflexNetwork(W, np.full(len(act), sp.reflex_threshold)), seed, hyper


def mutate(g: str, rate: float, rng: np.random.Generator, alphabet: str,
           min_length: int = 0, max_length: int | None = None) -> str:
    """Per-symbol substitution plus one optional indel, both at ``rate``.

    A substitution always changes the symbol when the alphabet allows it.
    """
    if rate <= 0.0:
        return g
    syms = list(g)
    for i, s in enumerate(syms):
        if rng.random() < rate:
            choices = [a for a in alphabet if a != s] or [s]
            syms[i] = choices[int(rng.integers(len(choices)))]
    if rng.random() < rate:
        insert = rng.random() < 0.5
        hi = max_length if max_length is not None else len(syms) + 1
        if insert and len(syms) < hi:
            syms.insert(int(rng.integers(len(syms) + 1)), alphabet[int(rng.integers(len(alphabet)))])
        elif not insert and len(syms) > min_length:
            del syms[int(rng.integers(len(syms)))]
    return "".join(syms)


def crossover(g1: str, g2: str, rng: np.random.Generator, cut: int | None = None) -> str:
    if cut is None:
        cut = int(rng.integers(min(len(g1), len(g2)) + 1))
    return g1[:cut] + g2[cut:]


def _mate(world, org):
    """Nearest fertile conspecific of the opposite sex within mating range."""
    rp = org.hyper.reproduction
    best, best_d = None, np.inf
    for other in world.organisms:
        if other is org or other.species != org.species or not other.alive:
            continue
        if other.properties.sex == org.properties.sex or other.properties.fertility <= 0.0:
            continue
        d = float(np.linalg.norm(world.space.displacement(org.center, other.center)))
        if d <= rp.mating_range and d < best_d:
            best, best_d = other, d
    return best


def reproduce(world, parent, partner=None):
    """Try one birth for ``parent``; returns the spawned child or None."""
    from .world import make_organism, spawn

    rp = parent.hyper.reproduction
    props = parent.properties
    if rp.birth_prob <= 0.0:
        return None
    if props.fertility < 0.5 or world.tick - parent.last_birth_tick < rp.cooldown:
        return None
    if props.get("Energy") < rp.energy_min:
        return None
    sp = world.templates[parent.species].config
    gcfg = sp.genome
    if rp.mode == "sexual":
        if props.sex != "female":
            return None
        partner = partner or _mate(world, parent)
        if partner is None:
            return None
    if world.rng.random() >= rp.birth_prob:
        return None
    g = parent.genome
    if rp.mode == "sexual":
        g = crossover(g, partner.genome, world.rng)
    if gcfg is not None:
        g = mutate(g, rp.mutation_rate, world.rng, gcfg.alphabet, gcfg.min_length, gcfg.max_length)
    policy = None
    if parent.nervous.policy is not None:
        policy = parent.nervous.policy.perturbed(world.rng, rp.policy_noise)
    energy = rp.energy_cost if rp.energy_cost > 0 else None
    child = make_organism(world, parent.species, g, policy=policy, energy=energy)
    placed = spawn(world, child, rp.placement, parent)
    if placed is not None:
        props.add("Energy", -rp.energy_cost)
        parent.last_birth_tick = world.tick
        if partner is not None:
            partner.last_birth_tick = world.tick
    return placed
