"""Time-varying LQ gains along a trajectory, against closed-form cases."""

import numpy as np
import pytest

from dctube.dc_core import DcModel, PolyCore
from dctube.dc_fit import fit_poly_core
from dctube.tube_mpc import GainError, dp_gains, lqr_fixed_point


class LinearModel:
    """Minimal stand-in exposing f/linearize for exact linear dynamics."""

    def __init__(self, A, B):
        self.A = np.asarray(A, float)
        self.B = np.asarray(B, float)
        self.n_x = self.A.shape[0]
        self.n_u = self.B.shape[1]

    def f(self, x, u):
        return np.asarray(x) @ self.A.T + np.asarray(u) @ self.B.T

    def linearize(self, x, u):
        return self.A.copy(), self.B.copy()


def test_scalar_one_step_closed_form():
    # A = B = Q = R = terminal P = 1: delta = 2, K = -1/2, P0 = 3/2
    m = LinearModel([[1.0]], [[1.0]])
    x = np.zeros((2, 1))
    u = np.zeros((1, 1))
    K = dp_gains(m, x, u, np.eye(1), np.eye(1), np.eye(1))
    assert len(K) == 1
    assert abs(K[0][0, 0] + 0.5) < 1e-12


def test_uncontrollable_input_gets_zero_gain():
    m = LinearModel([[0.9]], [[0.0]])
    x = np.zeros((4, 1))
    u = np.zeros((3, 1))
    K = dp_gains(m, x, u, np.eye(1), np.eye(1), np.eye(1))
    for Kk in K:
        assert abs(Kk[0, 0]) < 1e-12


def test_long_horizon_matches_stationary_riccati():
    A = np.array([[1.0, 0.2], [0.0, 1.0]])
    B = np.array([[0.0], [0.2]])
    Q = np.diag([2.0, 0.5])
    R = np.array([[0.3]])
    m = LinearModel(A, B)
    N = 400
    x = np.zeros((N + 1, 2))
    u = np.zeros((N, 1))
    K = dp_gains(m, x, u, Q, R, Q)
    K_inf, P_inf = lqr_fixed_point(A, B, Q, R)
    assert np.abs(K[0] - K_inf).max() < 1e-6


def test_fixed_point_satisfies_riccati_equation():
    A = np.array([[0.8, 0.1], [0.05, 1.1]])
    B = np.array([[1.0, 0.0], [0.0, 0.5]])
    Q = np.eye(2)
    R = 0.2 * np.eye(2)
    K, P = lqr_fixed_point(A, B, Q, R)
    Acl = A + B @ K
    resid = Q + K.T @ R @ K + Acl.T @ P @ Acl - P
    assert np.abs(resid).max() < 1e-8
    # P must make the closed loop contractive in the P-metric
    assert np.all(np.abs(np.linalg.eigvals(Acl)) < 1.0)


def test_singular_delta_raises():
    m = LinearModel([[1.0]], [[1.0]])
    x = np.zeros((2, 1))
    u = np.zeros((1, 1))
    with pytest.raises(GainError, match="singular"):
        dp_gains(m, x, u, np.eye(1), np.array([[-1.0]]), np.eye(1))


def test_length_mismatch_raises():
    m = LinearModel([[1.0]], [[1.0]])
    with pytest.raises(GainError):
        dp_gains(m, np.zeros((3, 1)), np.zeros((1, 1)), np.eye(1),
                 np.eye(1), np.eye(1))


def test_gains_follow_the_anchor_linearization():
    """On a DC model with genuinely state-dependent Jacobians the gains
    must differ between anchors; sanity check they match a hand recursion
    with the model's own linearize output."""
    rng = np.random.default_rng(2)
    Z = rng.uniform(-1, 1, size=(300, 2))
    Y = np.stack([Z[:, 0] ** 2 - 0.3 * Z[:, 1] ** 3,
                  Z[:, 1] ** 2 + Z[:, 0] * Z[:, 1]], axis=1)
    core, _ = fit_poly_core(Z, Y, degree=4)
    delta = 0.3
    model = DcModel(core, n_x=2, n_u=1, x_sel=[0, 1], u_sel=[],
                    scatter=delta * np.eye(2),
                    lin_A=np.eye(2), lin_B=np.array([[0.0], [delta]]),
                    lin_c=np.zeros(2))
    x = np.array([[0.4, -0.2], [0.1, 0.3], [0.0, 0.0]])
    x[1] = model.f(x[0], np.zeros(1))
    x[2] = model.f(x[1], np.zeros(1))
    u = np.zeros((2, 1))
    Q = np.eye(2)
    R = np.eye(1)
    P_N = 2 * np.eye(2)
    K = dp_gains(model, x, u, Q, R, P_N)
    # hand recursion
    P = P_N.copy()
    K_hand = [None, None]
    for k in (1, 0):
        A, B = model.linearize(x[k], u[k])
        delta_m = B.T @ P @ B + R
        K_hand[k] = -np.linalg.solve(delta_m, B.T @ P @ A)
        P = Q + A.T @ P @ A + A.T @ P @ B @ K_hand[k]
        P = 0.5 * (P + P.T)
    for k in range(2):
        assert np.abs(K[k] - K_hand[k]).max() < 1e-12
    assert np.abs(K[0] - K[1]).max() > 1e-6   # anchors really matter
