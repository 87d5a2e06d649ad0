import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.metrics import (MetricsError, Recorder, RunSummary, TimeSeries, analyze_goats,
                            analyze_predator_prey, cross_correlation_lag, depth_light_correlation,
                            detect_peaks, extinction_events, pearson, read_csv, write_csv)
from ecosim.scenarios import builtin
from ecosim.world import build_world, make_organism, run, spawn


def zero_counts(c):
    species = [s.model_copy(update={"initial_count": 0}) for s in c.species]
    objects = [k.model_copy(update={"initial_count": 0}) for k in c.objects]
    return c.model_copy(update={"species": species, "objects": objects})


def test_empty_world_records_zero_population():
    c = zero_counts(builtin("predator_prey", 1))
    w = build_world(c)
    rec = Recorder(c)
    rec.record(w)
    assert rec.series["deer"].values == [0.0] and rec.series["wolf"].values == [0.0]


def test_multi_gene_genome_counts_in_each_series():
    c = zero_counts(builtin("reflex_goats", 1))
    w = build_world(c)
    spawn(w, make_organism(w, "Goat", "RB"))
    rec = Recorder(c)
    rec.record(w)
    assert rec.series["R"].values == [1.0] and rec.series["B"].values == [1.0]
    assert rec.series["Y"].values == [0.0]


def test_mean_depth_sample():
    c = zero_counts(builtin("marine", 1))
    w = build_world(c)
    top = w.space.hi[2]
    for d in (1.0, 2.0, 3.0):
        o = spawn(w, make_organism(w, "Copepod", ""))
        o.conformation.center = np.array([5.0, 5.0, top - d])
    rec = Recorder(c)
    rec.record(w)
    assert rec.series["mean_depth"].values == [pytest.approx(2.0)]


def test_time_series_ticks_strictly_increase():
    s = TimeSeries("x")
    s.append(0, 1.0)
    with pytest.raises(MetricsError):
        s.append(0, 2.0)


def bumpy(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return np.sin(np.arange(n) / 7.0) + 0.3 * rng.normal(size=n)


def test_lag_examples():
    a = bumpy()
    b = np.roll(a, 5)
    assert cross_correlation_lag(a[10:], b[10:], 20) == 5
    assert cross_correlation_lag(a, a, 20) == 0
    t = np.arange(400)
    x, y = np.sin(2 * np.pi * t / 40), np.sin(2 * np.pi * (t - 10) / 40)
    assert abs(cross_correlation_lag(x, y, 15) - 10) <= 1


def test_lag_faults_on_constant_or_short():
    with pytest.raises(MetricsError):
        cross_correlation_lag(np.ones(50), bumpy(50), 5)
    with pytest.raises(MetricsError):
        cross_correlation_lag(bumpy(10), bumpy(10), 5)


def test_peak_examples():
    assert detect_peaks(np.arange(20.0)) == []
    t = np.linspace(0, 1, 200)
    two = np.exp(-((t - 0.3) / 0.05) ** 2) + np.exp(-((t - 0.7) / 0.05) ** 2)
    assert len(detect_peaks(two, 0.5)) == 2
    plateau = np.array([0, 1, 3, 3, 3, 1, 0], dtype=float)
    assert detect_peaks(plateau, 1.0) == [2]


def test_peaks_use_series_ticks():
    s = TimeSeries("x")
    for i, v in enumerate([0, 2, 0, 0, 3, 0]):
        s.append(10 * i, v)
    assert detect_peaks(s, 1.0) == [10, 40]


def test_pearson_examples():
    light = bumpy(100, 3)
    assert depth_light_correlation(light, light) == pytest.approx(1.0)
    assert depth_light_correlation(-light + 4.0, light) == pytest.approx(-1.0)
    with pytest.raises(MetricsError):
        pearson(np.ones(5), np.arange(5.0))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2 ** 32 - 1))
def test_pearson_matches_direct_formula(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=n)
    ma, mb = sum(a) / n, sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    assert pearson(a, b) == pytest.approx(num / den, abs=1e-12)


def test_csv_round_trip_and_line_count(tmp_path):
    c = builtin("predator_prey", 4)
    w = build_world(c)
    rec = Recorder(c, stride=1)
    run(w, 2, rec)
    p = tmp_path / "m.csv"
    write_csv(rec.summary(w), p)
    lines = p.read_text().splitlines()
    assert len(lines) == 4 and lines[0] == "tick,grass,deer,wolf"
    back = read_csv(p)
    for name, s in rec.series.items():
        assert back.series[name].values == s.values and back.series[name].ticks == s.ticks


def test_csv_is_byte_stable(tmp_path):
    def once(path):
        c = builtin("predator_prey", 9)
        w = build_world(c)
        rec = Recorder(c)
        run(w, 30, rec)
        write_csv(rec.summary(w), path)
        return path.read_bytes()

    assert once(tmp_path / "a.csv") == once(tmp_path / "b.csv")


def test_read_csv_reports_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("tick,a\n0,1\n1,x\n")
    with pytest.raises(MetricsError, match="row 3"):
        read_csv(p)


def test_write_csv_unwritable(tmp_path):
    s = RunSummary([0], {"a": TimeSeries("a", [0], [1.0])})
    with pytest.raises(MetricsError, match="nope"):
        write_csv(s, tmp_path / "nope" / "m.csv")


def synthetic_cycles(n=600, period=100, shift=8):
    t = np.arange(n)
    series = {
        "grass": 100 + 50 * np.sin(2 * np.pi * t / period),
        "deer": 50 + 20 * np.sin(2 * np.pi * (t - shift) / period),
        "wolf": 10 + 5 * np.sin(2 * np.pi * (t - 2 * shift) / period),
    }
    return RunSummary(list(t), {k: TimeSeries(k, list(t), list(v)) for k, v in series.items()})


def test_predator_prey_analysis_on_synthetic_cycles():
    rep = analyze_predator_prey(synthetic_cycles())
    assert rep["pass"] and rep["deer_peaks"] == 6
    assert rep["lag_grass_deer"] == 8 and rep["lag_deer_wolf"] == 8


def test_predator_prey_analysis_rejects_reversed_order():
    s = synthetic_cycles(shift=-8)
    assert not analyze_predator_prey(s)["pass"]


def test_extinction_events():
    assert extinction_events([3, 0, 0, 2, 0, 1]) == 2
    assert extinction_events([0, 0, 1]) == 0
    assert extinction_events([1, 0, 0]) == 0


def test_goat_analysis():
    t = [0, 1, 2]
    def ts(name, v):
        return TimeSeries(name, t, v)
    s = RunSummary(t, {"goat": ts("goat", [40, 50, 50]), "R": ts("R", [10, 30, 40]),
                       "Y": ts("Y", [10, 5, 5]), "G": ts("G", [10, 0, 2]),
                       "B": ts("B", [10, 15, 5])})
    rep = analyze_goats(s)
    assert rep["pass"] and rep["reappearances"]["G"] == 1
    assert rep["first"]["R"] == 0.25 and rep["last"]["R"] == 0.8
