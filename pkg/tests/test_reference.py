import numpy as np
import pytest

from simlab.dynamics import RigidBodyParams, State
from simlab.errors import ConfigError
from simlab.reference import (
    TRAJECTORY_IDS,
    ReferenceGenerator,
    TrajectoryParams,
    attitude_from_thrust,
    flat_outputs,
)


@pytest.mark.parametrize("tid", TRAJECTORY_IDS)
class TestFlatOutputs:
    def test_derivatives_match_finite_differences(self, tid):
        params = TrajectoryParams(tid, scale_x=1.2, scale_y=0.8, scale_z=0.3, period=7.0)
        h = 1e-6
        for t in np.linspace(0.1, 13.0, 17):
            p, v, a, _ = flat_outputs(params, t)
            pp = flat_outputs(params, t + h)[0]
            pm = flat_outputs(params, t - h)[0]
            assert np.max(np.abs((pp - pm) / (2 * h) - v)) < 1e-6
            vp = flat_outputs(params, t + h)[1]
            vm = flat_outputs(params, t - h)[1]
            assert np.max(np.abs((vp - vm) / (2 * h) - a)) < 1e-5

    def test_periodicity(self, tid):
        params = TrajectoryParams(tid, period=6.0)
        for t in (0.3, 1.7, 4.0):
            p1, v1, a1, _ = flat_outputs(params, t)
            p2, v2, a2, _ = flat_outputs(params, t + 6.0)
            assert np.max(np.abs(p1 - p2)) < 1e-11
            assert np.max(np.abs(v1 - v2)) < 1e-11


def test_unknown_trajectory_rejected():
    with pytest.raises(ConfigError):
        TrajectoryParams("spiral")


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        flat_outputs(TrajectoryParams("ellipse"), -0.1)


def test_lemniscate_crosses_center_twice_per_period():
    params = TrajectoryParams("lemniscate", period=4.0)
    center = params.center
    ts = np.linspace(0.5, 4.5, 4001)[:-1]  # one full period, crossings interior
    d = np.array([np.linalg.norm(flat_outputs(params, t)[0] - center) for t in ts])
    # count local minima that touch the center
    hits = 0
    for i in range(1, len(d) - 1):
        if d[i] < 1e-2 and d[i] <= d[i - 1] and d[i] <= d[i + 1]:
            hits += 1
    assert hits == 2


def test_attitude_from_thrust_hover_is_identity():
    q = attitude_from_thrust(np.zeros(3), 0.0, 9.81)
    assert np.allclose(q, [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_attitude_tilts_toward_acceleration():
    from simlab.manifold import rotate_vector

    a = np.array([2.0, 0.0, 0.0])
    q = attitude_from_thrust(a, 0.0, 9.81)
    body_z = rotate_vector(q, np.array([0.0, 0.0, 1.0]))
    expected = (a + np.array([0, 0, 9.81])) / np.linalg.norm(a + np.array([0, 0, 9.81]))
    assert np.allclose(body_z, expected, atol=1e-12)


class TestReferenceGenerator:
    def setup_method(self):
        self.rbp = RigidBodyParams()
        self.gen = ReferenceGenerator(TrajectoryParams("ellipse"), self.rbp, dt=0.05)

    def test_state_is_valid(self):
        x = self.gen.state_at(1.23)
        State.from_vec(x)  # validates unit quaternion and finiteness

    def test_hover_control_at_flat_point(self):
        gen = ReferenceGenerator(TrajectoryParams("hover"), self.rbp, dt=0.05)
        u = gen.control_at(0.0)
        assert np.allclose(u, self.rbp.hover_control(), atol=1e-12)

    def test_window_shapes_and_grid(self):
        xs, us = self.gen.window(0.25, 10)
        assert xs.shape == (11, 13)
        assert us.shape == (10, 4)
        assert np.allclose(xs[3], self.gen.state_at(0.25 + 3 * 0.05), atol=1e-12)

    def test_window_cache_consistent(self):
        a, _ = self.gen.window(0.0, 5)
        b, _ = self.gen.window(0.05, 5)
        assert np.array_equal(a[1], b[0])

    def test_body_rates_match_attitude_difference(self):
        from simlab.manifold import boxminus

        x0 = self.gen.state_at(0.4)
        x1 = self.gen.state_at(0.45)
        w = boxminus(x1[6:10], x0[6:10]) / 0.05
        assert np.max(np.abs(w - x0[10:13])) < 1e-9
