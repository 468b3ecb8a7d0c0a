import numpy as np
import pytest

from simlab import mlp
from simlab import dynamics as dyn
from simlab.errors import ConfigError, DynamicsError


@pytest.fixture
def rng():
    return np.random.default_rng(100)


@pytest.fixture
def net(rng):
    return mlp.init_params([14, 16, 12, 10], rng)


def random_state(rng, speed=1.0):
    x = np.empty(13)
    x[dyn.P] = rng.standard_normal(3)
    x[dyn.V] = speed * rng.standard_normal(3)
    q = rng.standard_normal(4)
    x[dyn.Q] = q / np.linalg.norm(q)
    x[dyn.W] = speed * rng.standard_normal(3)
    return x


class TestStateTypes:
    def test_state_requires_unit_quaternion(self):
        with pytest.raises(ValueError):
            dyn.State(np.zeros(3), np.zeros(3), np.array([1.0, 0.0, 0.1, 0.0]), np.zeros(3))

    def test_state_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            dyn.State(np.array([np.nan, 0, 0]), np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3))

    def test_state_vec_round_trip(self, rng):
        x = random_state(rng)
        assert np.array_equal(dyn.State.from_vec(x).as_vec(), x)

    def test_control_shape(self):
        with pytest.raises(ValueError):
            dyn.Control(np.zeros(3))


class TestStateBoxOps:
    def test_round_trip(self, rng):
        x = random_state(rng)
        xi = 0.3 * rng.standard_normal(12)
        back = dyn.state_boxminus(dyn.state_boxplus(x, xi), x)
        assert np.max(np.abs(back - xi)) < 1e-9

    def test_batched_matches_loop(self, rng):
        x = random_state(rng)
        xis = 0.2 * rng.standard_normal((6, 12))
        batch = dyn.state_boxplus(x, xis)
        for i in range(6):
            assert np.allclose(batch[i], dyn.state_boxplus(x, xis[i]))


class TestPredict:
    def test_euler_position_advance(self, net):
        x = dyn.State(np.zeros(3), np.array([1.0, 0, 0]), np.array([1.0, 0, 0, 0]), np.zeros(3))
        out = dyn.predict(net, x, dyn.Control(np.full(4, 0.6)), dt=0.05)
        assert np.allclose(out.p, [0.05, 0.0, 0.0], atol=1e-15)

    def test_unit_quaternion_output(self, net, rng):
        for _ in range(20):
            x = random_state(rng)
            out = dyn.predict_vec(net, x, np.abs(rng.standard_normal(4)), 0.05)
            assert abs(np.linalg.norm(out[dyn.Q]) - 1.0) < 1e-9
            assert out[6] >= 0.0  # canonical sign

    def test_position_independence(self, net, rng):
        x = random_state(rng)
        u = np.abs(rng.standard_normal(4))
        a = dyn.predict_vec(net, x, u, 0.05)
        x2 = x.copy()
        x2[dyn.P] = rng.standard_normal(3)
        b = dyn.predict_vec(net, x2, u, 0.05)
        assert np.array_equal(a[3:], b[3:])
        assert np.allclose(b[dyn.P] - x2[dyn.P], a[dyn.P] - x[dyn.P], atol=1e-15)

    def test_zero_network_degenerate_quaternion(self):
        sizes = [14, 8, 10]
        weights = tuple(np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:]))
        biases = tuple(np.zeros(o) for o in sizes[1:])
        zero_net = mlp.MlpParams(weights, biases)
        x = dyn.State.hover()
        with pytest.raises(DynamicsError):
            dyn.predict(zero_net, x, dyn.Control(np.zeros(4)), 0.05)

    def test_nonfinite_output_error(self, net):
        bad = mlp.MlpParams(
            (net.weights[0], net.weights[1], net.weights[2] * np.inf),
            net.biases,
            net.elu_alpha,
            net.in_shift,
            net.in_scale,
        )
        with pytest.raises(DynamicsError):
            dyn.predict_vec(bad, dyn.State.hover().as_vec(), np.ones(4), 0.05)

    def test_batch_matches_single(self, net, rng):
        xs = np.stack([random_state(rng) for _ in range(5)])
        us = np.abs(rng.standard_normal((5, 4)))
        batch = dyn.predict_vec(net, xs, us, 0.05)
        for i in range(5):
            assert np.allclose(batch[i], dyn.predict_vec(net, xs[i], us[i], 0.05), atol=1e-14)


class TestPredictJacobian:
    def fd_jacobians(self, net, x, u, dt, residual=False, h=1e-6):
        A = np.zeros((12, 12))
        for i in range(12):
            e = np.zeros(12)
            e[i] = h
            fp = dyn.predict_vec(net, dyn.state_boxplus(x, e), u, dt, residual=residual)
            fm = dyn.predict_vec(net, dyn.state_boxplus(x, -e), u, dt, residual=residual)
            A[:, i] = dyn.state_boxminus(fp, fm) / (2 * h)
        B = np.zeros((12, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fp = dyn.predict_vec(net, x, u + e, dt, residual=residual)
            fm = dyn.predict_vec(net, x, u - e, dt, residual=residual)
            B[:, i] = dyn.state_boxminus(fp, fm) / (2 * h)
        return A, B

    def test_matches_finite_differences(self, net, rng):
        for _ in range(20):
            x = random_state(rng)
            u = np.abs(rng.standard_normal(4))
            A, B = dyn.predict_jacobian(net, x, u, 0.05)
            Afd, Bfd = self.fd_jacobians(net, x, u, 0.05)
            scale = max(np.abs(Afd).max(), 1.0)
            assert np.max(np.abs(A - Afd)) / scale < 1e-4
            assert np.max(np.abs(B - Bfd)) / max(np.abs(Bfd).max(), 1.0) < 1e-4

    def test_euler_blocks_exact(self, net, rng):
        x = random_state(rng)
        u = np.abs(rng.standard_normal(4))
        A, B = dyn.predict_jacobian(net, x, u, 0.05)
        assert np.array_equal(A[0:3, 3:6], 0.05 * np.eye(3))
        assert np.array_equal(A[0:3, 0:3], np.eye(3))
        assert np.all(B[0:3] == 0.0)

    def test_first_order_taylor_ratio(self, net, rng):
        # halving the perturbation should shrink the linearization error ~4x
        x = random_state(rng)
        u = np.abs(rng.standard_normal(4))
        A, _ = dyn.predict_jacobian(net, x, u, 0.05)
        d = rng.standard_normal(12)
        d /= np.linalg.norm(d)
        base = dyn.predict_vec(net, x, u, 0.05)

        def taylor_err(eps):
            moved = dyn.predict_vec(net, dyn.state_boxplus(x, eps * d), u, 0.05)
            return np.linalg.norm(dyn.state_boxminus(moved, base) - A @ (eps * d))

        e1, e2 = taylor_err(1e-3), taylor_err(5e-4)
        assert e1 / e2 > 1.9

    def test_residual_mode(self, net, rng):
        x = random_state(rng)
        u = np.abs(rng.standard_normal(4))
        A, B = dyn.predict_jacobian(net, x, u, 0.05, residual=True)
        Afd, Bfd = self.fd_jacobians(net, x, u, 0.05, residual=True)
        assert np.max(np.abs(A - Afd)) / max(np.abs(Afd).max(), 1.0) < 1e-4


class TestAnalyticModel:
    def test_rejects_bad_params(self):
        with pytest.raises(ConfigError):
            dyn.RigidBodyParams(mass=-1.0)
        with pytest.raises(ConfigError):
            dyn.RigidBodyParams(inertia=np.array([1e-4, -1e-4, 1e-4]))

    def test_hover_equilibrium(self):
        rbp = dyn.RigidBodyParams()
        x = dyn.State.hover(np.array([0.5, -0.2, 1.0]))
        out = dyn.analytic_step(rbp, x, dyn.Control(rbp.hover_control()), 0.05)
        assert np.max(np.abs(out.as_vec() - x.as_vec())) < 1e-9

    def test_free_fall(self):
        rbp = dyn.RigidBodyParams()
        x = dyn.State.hover().as_vec()
        for _ in range(1000):
            x = dyn.analytic_step_vec(rbp, x, np.zeros(4), 0.001)
        assert abs(x[5] + 9.81) < 1e-6

    def test_torque_free_momentum_magnitude(self):
        # |J w| is conserved by the Euler equations without torque
        rbp = dyn.RigidBodyParams()
        x = dyn.State.hover().as_vec()
        x[dyn.W] = np.array([3.0, -2.0, 1.0])
        L0 = np.linalg.norm(rbp.inertia * x[dyn.W])
        for _ in range(1000):
            x = dyn.analytic_step_vec(rbp, x, np.full(4, rbp.hover_thrust / 4), 0.001)
        assert abs(np.linalg.norm(rbp.inertia * x[dyn.W]) - L0) < 1e-6

    def test_yaw_torque_sign(self):
        rbp = dyn.RigidBodyParams()
        # spin-weighted rotors produce pure yaw torque at balanced thrust
        u = np.array([0.1, 0.2, 0.1, 0.2])
        tau = rbp.allocation() @ u
        assert abs(tau[0]) < 1e-12 and abs(tau[1]) < 1e-12
        assert tau[2] > 0.0

    def test_analytic_jacobian_matches_slow_fd(self, rng):
        rbp = dyn.RigidBodyParams()
        x = random_state(rng, speed=0.5)
        u = np.abs(rng.standard_normal(4)) * 0.5
        A, B = dyn.analytic_jacobian(rbp, x, u, 0.05)
        h = 1e-5
        for i in range(12):
            e = np.zeros(12)
            e[i] = h
            col = dyn.state_boxminus(
                dyn.analytic_step_vec(rbp, dyn.state_boxplus(x, e), u, 0.05),
                dyn.analytic_step_vec(rbp, dyn.state_boxplus(x, -e), u, 0.05),
            ) / (2 * h)
            assert np.max(np.abs(A[:, i] - col)) < 1e-6


def test_model_input_layout(rng):
    x = random_state(rng)
    u = rng.standard_normal(4)
    inp = dyn.model_input(x, u)
    assert inp.shape == (14,)
    assert np.array_equal(inp, np.concatenate([x[dyn.V], x[dyn.W], x[dyn.Q], u]))


def test_model_target_layout(rng):
    x = random_state(rng)
    tgt = dyn.model_target(x)
    assert np.array_equal(tgt, np.concatenate([x[dyn.V], x[dyn.W], x[dyn.Q]]))
