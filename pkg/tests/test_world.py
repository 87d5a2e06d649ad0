import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.config import DietEntry, HyperConfig
from ecosim.scenarios import builtin
from ecosim.world import (PropertyBag, WorldFault, apply_decision, build_world, check_death,
                          kill, make_organism, run, spawn, step)

from conftest import add_object, bug_species, decision, place, tiny_config


def test_empty_world_advances_only_the_tick(tiny_world):
    w = tiny_world
    w.tick = 5
    state = w.rng.bit_generator.state
    step(w)
    assert w.tick == 6 and not w.organisms and not w.inanimate and not w.events
    assert w.rng.bit_generator.state == state


def test_age_limit_kills_and_leaves_a_carcass(tiny_world):
    w = tiny_world
    org = place(w)
    org.properties.age = 100.0 - 0.5  # one dt later Age exceeds age_max
    step(w)
    assert not w.organisms
    assert [o.type_tag for o in w.inanimate] == ["Carcass_Bug"]
    assert w.events[-1][1] == "death" and "cause=age" in w.events[-1][3]


def test_reaching_age_max_exactly_is_not_death(tiny_world):
    w = tiny_world
    org = place(w)
    org.properties.age = 99.0
    step(w)
    assert org.alive and org.properties.age == 100.0


def test_all_zero_decision_is_passive():
    w = build_world(tiny_config(species=[bug_species(
        hyper=HyperConfig(age_max=100.0, metabolic_cost=0.02))]))
    org = place(w)
    before = org.center.copy(), org.heading.copy()
    eff = apply_decision(w, org, decision(w, "Bug"))
    assert np.array_equal(org.center, before[0]) and np.array_equal(org.heading, before[1])
    assert eff == [("energy", -0.02)]
    assert org.properties.get("Energy") == pytest.approx(0.98)


def test_eat_conserves_energy(tiny_world):
    w = tiny_world
    org = place(w)
    grass = add_object(w, center=(10.6, 10.0))
    eff = apply_decision(w, org, decision(w, "Bug", "Eat"))
    assert ("eat", "GrassGreen", 5.0) in eff
    assert org.properties.get("Energy") == pytest.approx(6.0)
    assert grass.removed
    step(w)
    assert grass not in w.inanimate


def test_eat_partial_when_nearly_full():
    w = build_world(tiny_config(species=[bug_species(maxima={"Energy": 3.0})]))
    org = place(w)
    grass = add_object(w, center=(10.0, 10.5))
    apply_decision(w, org, decision(w, "Bug", "Eat"))
    assert org.properties.get("Energy") == 3.0
    assert grass.properties.get("Energy") == pytest.approx(3.0) and not grass.removed


def test_eat_needs_overlap(tiny_world):
    w = tiny_world
    org = place(w)
    add_object(w, center=(11.2, 10.0))
    assert not any(e[0] == "eat" for e in apply_decision(w, org, decision(w, "Bug", "Eat")))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.05, 0.99))
def test_transfer_conservation(e_org, e_food, gap):
    w = build_world(tiny_config(species=[bug_species(maxima={"Energy": 8.0})]))
    org = place(w)
    org.properties.set("Energy", min(e_org, 8.0))
    grass = add_object(w, center=(10.0 + gap, 10.0), Energy=e_food)
    total = org.properties.get("Energy") + grass.properties.get("Energy")
    apply_decision(w, org, decision(w, "Bug", "Eat"))
    after = org.properties.get("Energy") + grass.properties.get("Energy")
    assert after == pytest.approx(total, abs=1e-12)


def test_run_beats_walk(tiny_world):
    w = tiny_world
    org = place(w)
    eff = apply_decision(w, org, decision(w, "Bug", "Walk", "Run"))
    assert np.allclose(org.center, [12.0, 10.0])
    assert org.properties.get("Energy") == pytest.approx(1.0 - 0.3)
    assert ("gait", "run") in eff


def test_rotations_cancel_and_turn(tiny_world):
    w = tiny_world
    org = place(w)
    apply_decision(w, org, decision(w, "Bug", "RotateLeft", "RotateRight"))
    assert np.allclose(org.heading, [1.0, 0.0])
    apply_decision(w, org, decision(w, "Bug", "RotateLeft"))
    a = w.templates["Bug"].config.turn_angle
    assert np.allclose(org.heading, [math.cos(a), math.sin(a)])


def test_wrong_decision_length_faults(tiny_world):
    w = tiny_world
    org = place(w)
    with pytest.raises(WorldFault) as exc:
        apply_decision(w, org, np.zeros(3, dtype=np.int8))
    assert exc.value.org_id == org.id


def test_wall_clamps_and_torus_wraps():
    w = build_world(tiny_config())
    org = place(w, center=(19.5, 10.0))
    apply_decision(w, org, decision(w, "Bug", "Run"))
    assert org.center[0] <= 20.0
    w = build_world(tiny_config(boundary="torus"))
    org = place(w, center=(19.5, 10.0))
    apply_decision(w, org, decision(w, "Bug", "Run"))
    assert org.center[0] == pytest.approx(1.5)


def test_check_death_examples():
    w = build_world(tiny_config(species=[bug_species(
        hyper=HyperConfig(age_max=100.0, survival={"Energy": (0.01, None)}))]))
    o = place(w)
    o.properties.age = 101.0
    assert check_death(o) == "age"
    o.properties.age = 50.0
    assert check_death(o) is None
    o.properties.set("Energy", 0.0)
    assert check_death(o) == "Energy below lo"


def test_kill_bookkeeping(tiny_world):
    w = tiny_world
    org = place(w)
    org.properties.set("Energy", 0.4)
    kill(w, org.id, "test")
    assert not w.organisms and len(w.inanimate) == 1
    carcass = w.inanimate[0]
    assert carcass.type_tag == "Carcass_Bug" and carcass.properties.get("Energy") == 0.4
    assert np.array_equal(carcass.center, org.center)
    with pytest.raises(WorldFault):
        kill(w, org.id)
    step(w)
    assert sum(e[1] == "death" and e[2] == org.id for e in w.events) == 1


def test_carcass_is_edible_when_configured():
    scav = bug_species(name="Scav", diet={"Carcass_Bug": DietEntry()})
    w = build_world(tiny_config(species=[bug_species(), scav]))
    prey = place(w, center=(5.0, 5.0))
    prey.properties.set("Energy", 2.5)
    kill(w, prey.id)
    s = place(w, "Scav", center=(5.5, 5.0))
    eff = apply_decision(w, s, decision(w, "Scav", "Eat"))
    assert ("eat", "Carcass_Bug", 2.5) in eff
    assert s.properties.get("Energy") == pytest.approx(3.5)


def test_spawn_in_bounds_and_cap():
    w = build_world(tiny_config(species=[bug_species(cap=2)]))
    a = spawn(w, make_organism(w, "Bug", ""))
    assert a is not None and w.space.contains(a.center)
    spawn(w, make_organism(w, "Bug", ""))
    n_events = len(w.events)
    assert spawn(w, make_organism(w, "Bug", "")) is None
    assert len(w.organisms) == 2 and len(w.events) == n_events + 1
    assert w.events[-1][1] == "spawn_skipped" and "cap" in w.events[-1][3]


def test_spawn_without_space_is_skipped():
    big = bug_species(radius=9.0, cap=5)
    w = build_world(tiny_config(species=[big], spawn_retries=20))
    spawn(w, make_organism(w, "Bug", ""))
    assert spawn(w, make_organism(w, "Bug", "")) is None or len(w.organisms) == 2
    while len(w.organisms) < 5 and spawn(w, make_organism(w, "Bug", "")) is not None:
        pass
    assert any(e[1] == "spawn_skipped" and "no_space" in e[3] for e in w.events)


def test_spawn_positions_are_reproducible():
    def positions():
        w = build_world(tiny_config(species=[bug_species(radius=0.1, cap=100)]))
        return [spawn(w, make_organism(w, "Bug", "")).center.tolist() for _ in range(100)]

    assert positions() == positions()


def run_events(seed, steps=100, threads=1):
    w = build_world(builtin("predator_prey", seed))
    run(w, steps, threads=threads)
    return w.event_lines(), [(o.id, o.center.tolist()) for o in w.organisms]


def test_same_seed_same_events():
    a, b = run_events(7), run_events(7)
    assert a == b
    assert run_events(8)[1] != a[1]


def test_threads_do_not_change_results():
    assert run_events(3, 40, threads=1) == run_events(3, 40, threads=3)


def test_population_cap_and_death_totality():
    c = builtin("predator_prey", 2)
    w = build_world(c)
    caps = {sp.name: sp.cap for sp in c.species}
    for _ in range(150):
        step(w)
        for name, cap in caps.items():
            assert w.population(name) <= cap
        for o in w.organisms:
            assert check_death(o) is None


def test_age_is_monotonic(tiny_world):
    w = tiny_world
    org = place(w)
    ages = []
    for _ in range(5):
        step(w)
        ages.append(org.properties.age)
    assert np.allclose(np.diff(ages), w.dt)


def test_check_world_reports_bad_heading(tiny_world):
    w = tiny_world
    org = place(w)
    org.heading = np.array([2.0, 0.0])
    with pytest.raises(WorldFault) as exc:
        step(w)
    assert exc.value.org_id == org.id and "heading" in exc.value.invariant


def test_property_bag_clamps_chemicals():
    bag = PropertyBag.from_values({"Energy": 1.0, "Temperature": -3.0})
    bag.add("Energy", -5.0)
    assert bag.get("Energy") == 0.0 and bag.get("Temperature") == -3.0


def test_batched_forward_matches_individual_policies():
    from ecosim.nervous import PolicyNetwork
    from ecosim.world import batched_forward

    rng = np.random.default_rng(5)
    pols = [PolicyNetwork(4, 3, [6, 5], rng.uniform(0.5, 2.0, 4), rng=rng) for _ in range(7)]
    X = rng.normal(size=(7, 4))
    logits, values = batched_forward(pols, X)
    for i, p in enumerate(pols):
        lg, v, _ = p.forward(X[i:i + 1])
        assert np.allclose(logits[i], lg[0], atol=1e-12) and values[i] == pytest.approx(v[0])
    shared_l, shared_v = batched_forward([pols[0]] * 7, X)
    ref_l, ref_v, _ = pols[0].forward(X)
    assert np.array_equal(shared_l, ref_l) and np.array_equal(shared_v, ref_v)
