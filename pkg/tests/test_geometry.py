import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim.geometry import Space, random_unit, ray_sphere, rotate2


def test_bounds_validation():
    with pytest.raises(ValueError):
        Space.from_bounds([(0, 1), (2, 2)])
    with pytest.raises(ValueError):
        Space.from_bounds([(0, 1)])
    with pytest.raises(ValueError):
        Space.from_bounds([(0, 1), (0, 1)], "mirror")


def test_wall_clamps_and_torus_wraps():
    wall = Space.from_bounds([(0, 10), (0, 10)])
    torus = Space.from_bounds([(0, 10), (0, 10)], "torus")
    assert np.allclose(wall.confine([11.0, -2.0]), [10.0, 0.0])
    assert np.allclose(torus.confine([11.0, -2.0]), [1.0, 8.0])


def test_torus_minimum_image():
    torus = Space.from_bounds([(0, 10), (0, 10)], "torus")
    assert np.allclose(torus.displacement([9.5, 5.0], [0.5, 5.0]), [1.0, 0.0])
    wall = Space.from_bounds([(0, 10), (0, 10)])
    assert np.allclose(wall.displacement([9.5, 5.0], [0.5, 5.0]), [-9.0, 0.0])


def test_touches_boundary():
    s = Space.from_bounds([(0, 10), (0, 10)])
    assert s.touches_boundary(np.array([0.4, 5.0]), 0.5)
    assert not s.touches_boundary(np.array([5.0, 5.0]), 0.5)
    many = s.touches_boundary(np.array([[0.4, 5.0], [5.0, 5.0], [5.0, 9.95]]),
                              np.array([0.5, 0.5, 0.1]))
    assert list(many) == [True, False, True]


def test_depth_from_top_of_last_axis():
    s = Space.from_bounds([(0, 4), (0, 4), (0, 30)])
    assert s.depth(np.array([1.0, 1.0, 30.0])) == 0.0
    assert s.depth(np.array([1.0, 1.0, 10.0])) == 20.0


def test_rotate2_quarter_turn():
    assert np.allclose(rotate2([1.0, 0.0], np.pi / 2), [0.0, 1.0])


def test_ray_sphere_hit_miss_inside_tangent():
    d = np.array([1.0, 0.0])
    assert ray_sphere([5.0, 0.0], d, 1.0) == pytest.approx(4.0)
    assert ray_sphere([-5.0, 0.0], d, 1.0) == np.inf  # behind
    assert ray_sphere([5.0, 3.0], d, 1.0) == np.inf
    assert ray_sphere([0.2, 0.0], d, 1.0) == 0.0  # origin inside
    assert ray_sphere([5.0, 1.0], d, 1.0) == pytest.approx(5.0)  # tangent


def _march(disp, direction, radius, step=1e-3, t_max=20.0):
    # independent oracle: walk along the ray until inside the sphere
    for t in np.arange(0.0, t_max, step):
        if np.linalg.norm(t * direction - disp) <= radius:
            return t
    return np.inf


@settings(max_examples=60, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8), st.floats(0, 2 * np.pi), st.floats(0.2, 2.0))
def test_ray_sphere_matches_marching(x, y, ang, r):
    disp = np.array([x, y])
    direction = np.array([np.cos(ang), np.sin(ang)])
    t = ray_sphere(disp, direction, r)
    ref = _march(disp, direction, r)
    if np.isfinite(ref) and np.isfinite(t):
        assert abs(t - ref) < 2e-3
    elif np.isfinite(t) != np.isfinite(ref):
        # grazing rays can disagree within the marching resolution
        closest = abs(disp[0] * direction[1] - disp[1] * direction[0])
        assert abs(closest - r) < 1e-2


def test_random_unit_norm():
    rng = np.random.default_rng(0)
    for dims in (2, 3):
        assert np.linalg.norm(random_unit(rng, dims)) == pytest.approx(1.0)
