import numpy as np
import pytest

from simlab.dynamics import RigidBodyParams, State, analytic_step
from simlab.dynamics import Control
from simlab.errors import ConfigError
from simlab.sim import (
    MixedPropellersPerturbation,
    PayloadPerturbation,
    TruthSimulator,
    WindPerturbation,
)


@pytest.fixture
def rbp():
    return RigidBodyParams()


def hover_state(z=1.0):
    return State.hover(np.array([0.0, 0.0, z]))


class TestUnperturbed:
    def test_matches_analytic_step(self, rbp):
        sim = TruthSimulator(rbp, None, substeps=10, rng=np.random.default_rng(0))
        x = hover_state()
        sim.reset(x)
        u = rbp.hover_control() * 1.05
        got = sim.step(x, u, 0.05)
        # same integrator, finer grid: agree to integration accuracy
        expect = x
        for _ in range(10):
            expect = analytic_step(rbp, expect, Control(u), 0.005)
        assert np.max(np.abs(got.as_vec() - expect.as_vec())) < 1e-12


class TestMixedPropellers:
    def test_neutral_factors_identity(self, rbp):
        x = hover_state()
        a = TruthSimulator(rbp, None, substeps=10, rng=np.random.default_rng(0))
        b = TruthSimulator(
            rbp, MixedPropellersPerturbation(np.ones(4)), substeps=10, rng=np.random.default_rng(0)
        )
        a.reset(x)
        b.reset(x)
        u = rbp.hover_control() * np.array([1.1, 0.9, 1.0, 1.0])
        assert np.array_equal(a.step(x, u, 0.05).as_vec(), b.step(x, u, 0.05).as_vec())

    def test_efficiency_scales_commands(self, rbp):
        x = hover_state()
        factors = np.array([0.85, 1.1, 0.9, 1.05])
        a = TruthSimulator(rbp, MixedPropellersPerturbation(factors), substeps=10, rng=np.random.default_rng(0))
        b = TruthSimulator(rbp, None, substeps=10, rng=np.random.default_rng(0))
        a.reset(x)
        b.reset(x)
        u = rbp.hover_control()
        assert np.array_equal(a.step(x, u, 0.05).as_vec(), b.step(x, u * factors, 0.05).as_vec())

    def test_validation(self):
        with pytest.raises(ConfigError):
            MixedPropellersPerturbation(np.array([1.0, 1.0, 1.0]))


class TestPayload:
    def test_taut_hover_equilibrium_thrust(self, rbp):
        # at static hover with a taut vertical cable, thrust (m + m_p) g keeps
        # body and payload stationary
        pl = PayloadPerturbation(mass=0.075, cable_length=0.8)
        sim = TruthSimulator(rbp, pl, substeps=50, rng=np.random.default_rng(0))
        x = hover_state()
        sim.reset(x)
        # place the payload at the static-stretch equilibrium
        stretch = pl.mass * rbp.gravity / pl.stiffness
        sim.payload_pos = x.p + np.array([0.0, 0.0, -(pl.cable_length + stretch)])
        sim.payload_vel = np.zeros(3)
        u = np.full(4, (rbp.mass + pl.mass) * rbp.gravity / 4.0)
        out = sim.step(x, u, 0.5)
        assert np.max(np.abs(out.as_vec() - x.as_vec())) < 1e-6
        assert np.max(np.abs(sim.payload_vel)) < 1e-6

    def test_slack_cable_no_tension(self, rbp):
        pl = PayloadPerturbation()
        sim = TruthSimulator(rbp, pl, substeps=10, rng=np.random.default_rng(0))
        x = hover_state()
        sim.reset(x)
        # payload right below the body: cable fully slack
        sim.payload_pos = x.p + np.array([0.0, 0.0, -0.1])
        sim.payload_vel = np.zeros(3)
        ref = TruthSimulator(rbp, None, substeps=10, rng=np.random.default_rng(0))
        ref.reset(x)
        u = rbp.hover_control()
        a = sim.step(x, u, 0.05)
        b = ref.step(x, u, 0.05)
        assert np.max(np.abs(a.as_vec() - b.as_vec())) < 1e-12
        # and the payload free-falls
        assert sim.payload_vel[2] < -0.4

    def test_energy_non_increasing_without_thrust(self, rbp):
        # swinging payload: damping may only remove energy, and the RK4
        # integration error stays tiny over one second
        pl = PayloadPerturbation()
        sim = TruthSimulator(rbp, pl, substeps=50, rng=np.random.default_rng(0))
        x = hover_state(z=2.0)
        sim.reset(x)
        # swing the payload out to 30 degrees, taut
        ang = np.deg2rad(30)
        sim.payload_pos = x.p + pl.cable_length * np.array([np.sin(ang), 0.0, -np.cos(ang)])
        sim.payload_vel = np.zeros(3)
        e0 = sim.mechanical_energy(x)
        energies = [e0]
        for _ in range(20):
            x = sim.step(x, np.zeros(4), 0.05)
            energies.append(sim.mechanical_energy(x))
        increases = np.diff(energies)
        assert np.all(increases < 1e-4 * abs(e0))

    def test_validation(self):
        with pytest.raises(ConfigError):
            PayloadPerturbation(mass=-0.1)


class TestWind:
    def test_gust_process_is_seeded(self, rbp):
        w = WindPerturbation(mean_speed=3.0, gust_std=0.5)
        x = hover_state()
        runs = []
        for _ in range(2):
            sim = TruthSimulator(rbp, w, substeps=10, rng=np.random.default_rng(5))
            sim.reset(x)
            runs.append(sim.step(x, rbp.hover_control(), 0.05).as_vec())
        assert np.array_equal(runs[0], runs[1])

    def test_steady_wind_pushes_downwind(self, rbp):
        w = WindPerturbation(mean_speed=3.0, direction=np.array([1.0, 0.0, 0.0]), gust_std=0.0)
        sim = TruthSimulator(rbp, w, substeps=10, rng=np.random.default_rng(0))
        x = hover_state()
        sim.reset(x)
        out = sim.step(x, rbp.hover_control(), 0.5)
        assert out.v[0] > 0.1
        assert abs(out.v[1]) < 1e-9

    def test_drag_opposes_relative_motion(self, rbp):
        # flying into still air decelerates
        w = WindPerturbation(mean_speed=0.0, gust_std=0.0)
        sim = TruthSimulator(rbp, w, substeps=10, rng=np.random.default_rng(0))
        x = State(np.zeros(3), np.array([2.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]), np.zeros(3))
        sim.reset(x)
        out = sim.step(x, rbp.hover_control(), 0.2)
        assert out.v[0] < 2.0

    def test_direction_normalized(self):
        w = WindPerturbation(direction=np.array([3.0, 0.0, 4.0]))
        assert abs(np.linalg.norm(w.direction) - 1.0) < 1e-12

    def test_validation(self):
        with pytest.raises(ConfigError):
            WindPerturbation(direction=np.zeros(3))
