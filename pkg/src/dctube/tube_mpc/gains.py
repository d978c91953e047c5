"""Time-varying feedback gains from a dynamic-programming recursion.

Backward Riccati sweep along a nominal trajectory, initialized with the
terminal weight: Delta_k = B_k' P_{k+1} B_k + R, K_k = -Delta_k^{-1} B_k'
P_{k+1} A_k, P_k = Q + A_k' P_{k+1} A_k - A_k' P_{k+1} B_k Delta_k^{-1}
B_k' P_{k+1} A_k, with (A_k, B_k) the model Jacobians at (x_k, u_k).
"""

from __future__ import annotations

import numpy as np


class GainError(RuntimeError):
    pass


def dp_gains(model, x_traj, u_traj, Q, R, P_N) -> list:
    """Gains K_0..K_{N-1} for the trajectory (x_traj has N+1 rows)."""
    x_traj = np.atleast_2d(np.asarray(x_traj, float))
    u_traj = np.atleast_2d(np.asarray(u_traj, float))
    N = u_traj.shape[0]
    if x_traj.shape[0] != N + 1:
        raise GainError("state trajectory must have one more row than inputs")
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    P = np.atleast_2d(np.asarray(P_N, float)).copy()
    gains = [None] * N
    for k in range(N - 1, -1, -1):
        A, B = model.linearize(x_traj[k], u_traj[k])
        BtP = B.T @ P
        delta = BtP @ B + R
        try:
            K = -np.linalg.solve(delta, BtP @ A)
        except np.linalg.LinAlgError as exc:
            raise GainError(f"singular gain system at step {k}") from exc
        gains[k] = K
        P = Q + A.T @ P @ A + A.T @ BtP.T @ K
        P = 0.5 * (P + P.T)
    return gains


def lqr_fixed_point(A, B, Q, R, P0=None, tol=1e-12, max_iter=100000):
    """Stationary gain by iterating the same recursion to convergence."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    P = Q.copy() if P0 is None else np.atleast_2d(np.asarray(P0, float)).copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = -np.linalg.solve(BtP @ B + R, BtP @ A)
        P_new = Q + A.T @ P @ A + A.T @ BtP.T @ K
        P_new = 0.5 * (P_new + P_new.T)
        if np.abs(P_new - P).max() < tol:
            return K, P_new
        P = P_new
    raise GainError("fixed-point gain iteration did not converge")
