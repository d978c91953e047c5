"""Offline synthesis of terminal ingredients for the tube controller.

Pipeline: build a linear difference inclusion (LDI) whose vertex models
cover the dynamics over a box around the reference, then solve one SDP for
the terminal gain K_hat, weight Q_hat and set radius gamma_hat such that

    ||x - xr||^2_Qhat  >=  ||f(x, K_hat (x - xr) + ur) - xr||^2_Qhat
                           + ||x - xr||^2_Q + ||K_hat (x - xr)||^2_R

holds on the terminal ellipsoid {x : ||x - xr||^2_Qhat <= gamma_hat} (a
Lyapunov descent for the terminal controller), while the ellipsoid and its
feedback inputs stay inside the validity box of the LDI.

The disturbance offset beta relaxing the descent inequality is estimated a
posteriori by sampled residual maximization (the exact synthesis lives in
external work); beta = 0 without disturbances.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .conic import ConicProblem, norm_factor, tri_indices


class LdiError(RuntimeError):
    pass


def _as_f(model_or_fn):
    """Accept a DcModel-like object (with .f) or a batched callable."""
    return model_or_fn.f if hasattr(model_or_fn, "f") else model_or_fn


class TerminalDesignError(RuntimeError):
    pass


@dataclass
class LdiModel:
    A_list: list            # vertex state Jacobians
    B_list: list            # vertex input Jacobians
    x_ref: np.ndarray
    u_ref: np.ndarray
    dx: np.ndarray          # validity half-widths around the reference
    du: np.ndarray

    @property
    def m(self):
        return len(self.A_list)


def _hull_violation(points, target):
    """L-inf distance from target to the convex hull of the points.

    points: (m, n); solves min t s.t. |sum lam_i p_i - target| <= t,
    lam in the unit simplex.
    """
    m, n = points.shape
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.zeros((2 * n, m + 1))
    A_ub[:n, :m] = points.T
    A_ub[n:, :m] = -points.T
    A_ub[:, -1] = -1.0
    b_ub = np.concatenate([target, -target])
    A_eq = np.zeros((1, m + 1))
    A_eq[0, :m] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(0, None)], method="highs")
    if not res.success:
        return np.inf
    return float(res.x[-1])


def audit_ldi(ldi: LdiModel, f_fn, n_samples=2000, seed=0, tol=1e-7):
    """Check sampled f-deviations lie in the LDI hull (Eq.-28-style audit).

    f_fn is batched: f_fn(X, U) -> next states.  Returns (worst, worst_pt);
    worst is the largest relative L-inf hull violation over the samples.
    """
    f_fn = _as_f(f_fn)
    rng = np.random.default_rng(seed)
    n_x = len(ldi.x_ref)
    X = rng.uniform(ldi.x_ref - ldi.dx, ldi.x_ref + ldi.dx,
                    size=(n_samples, n_x))
    U = rng.uniform(ldi.u_ref - ldi.du, ldi.u_ref + ldi.du,
                    size=(n_samples, len(ldi.u_ref)))
    F = np.asarray(f_fn(X, U))
    f0 = np.asarray(f_fn(ldi.x_ref[None], ldi.u_ref[None]))[0]
    worst = 0.0
    worst_pt = None
    for s in range(n_samples):
        dxs = X[s] - ldi.x_ref
        dus = U[s] - ldi.u_ref
        pts = np.stack([A @ dxs + B @ dus
                        for A, B in zip(ldi.A_list, ldi.B_list)])
        target = F[s] - f0
        scale = max(1.0, float(np.abs(target).max()))
        v = _hull_violation(pts, target) / scale
        if v > worst:
            worst = v
            worst_pt = (X[s].copy(), U[s].copy(), v)
    return worst, worst_pt


def build_ldi(model, x_ref, u_ref, dx, du, mode="corner_jacobians",
              vertices=None, inflation=1.05, audit_fns=None,
              n_audit=2000, seed=0, tol=1e-7) -> LdiModel:
    """Vertex linear models covering f over the box (x_ref +- dx, u_ref +- du).

    corner_jacobians mode: Jacobians of the model at all box corners and at
    the reference point, deduplicated, then inflated about their centroid to
    absorb non-vertex curvature.  user_supplied mode passes `vertices`
    (list of (A, B)) through.  Either way a statistical secant-containment
    audit runs for each function in audit_fns (default: the model itself);
    failure raises LdiError with the worst violating sample.
    """
    x_ref = np.asarray(x_ref, float)
    u_ref = np.asarray(u_ref, float)
    dx = np.asarray(dx, float)
    du = np.asarray(du, float)
    if mode == "corner_jacobians":
        pairs = []
        corners = itertools.product(*[(-1.0, 1.0)] * (len(dx) + len(du)))
        points = [np.zeros(len(dx) + len(du))] + [np.array(c) for c in corners]
        for c in points:
            xc = x_ref + c[:len(dx)] * dx
            uc = u_ref + c[len(dx):] * du
            pairs.append(model.linearize(xc, uc))
        seen = {}
        for A, B in pairs:
            key = (np.round(A, 12).tobytes(), np.round(B, 12).tobytes())
            seen.setdefault(key, (A, B))
        A_list = [A for A, _ in seen.values()]
        B_list = [B for _, B in seen.values()]
        if len(A_list) > 1:
            Am = np.mean(A_list, axis=0)
            Bm = np.mean(B_list, axis=0)
            A_list = [Am + inflation * (A - Am) for A in A_list]
            B_list = [Bm + inflation * (B - Bm) for B in B_list]
    elif mode == "user_supplied":
        if not vertices:
            raise ValueError("user_supplied mode needs vertices")
        A_list = [np.asarray(A, float) for A, _ in vertices]
        B_list = [np.asarray(B, float) for _, B in vertices]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    ldi = LdiModel(A_list, B_list, x_ref, u_ref, dx, du)
    for fn in (audit_fns if audit_fns is not None else [model.f]):
        worst, worst_pt = audit_ldi(ldi, fn, n_samples=n_audit, seed=seed,
                                    tol=tol)
        if worst > tol:
            raise LdiError(
                f"LDI containment audit failed: relative violation "
                f"{worst:.3e} at x={worst_pt[0]}, u={worst_pt[1]}")
    return ldi


@dataclass
class TerminalIngredients:
    K_hat: np.ndarray
    Q_hat: np.ndarray
    gamma_hat: float
    beta: float
    alpha_tradeoff: float
    S: np.ndarray                     # SDP variable, Q_hat^{-1}
    x_ref: np.ndarray
    u_ref: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dx: np.ndarray
    du: np.ndarray
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {"format": "dctube-terminal-v1",
                "K_hat": self.K_hat.tolist(), "Q_hat": self.Q_hat.tolist(),
                "gamma_hat": self.gamma_hat, "beta": self.beta,
                "alpha_tradeoff": self.alpha_tradeoff,
                "S": self.S.tolist(),
                "x_ref": self.x_ref.tolist(), "u_ref": self.u_ref.tolist(),
                "Q": self.Q.tolist(), "R": self.R.tolist(),
                "dx": self.dx.tolist(), "du": self.du.tolist(),
                "info": self.info}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @staticmethod
    def from_dict(d):
        return TerminalIngredients(
            np.array(d["K_hat"]), np.array(d["Q_hat"]), d["gamma_hat"],
            d["beta"], d["alpha_tradeoff"], np.array(d["S"]),
            np.array(d["x_ref"]), np.array(d["u_ref"]),
            np.array(d["Q"]), np.array(d["R"]),
            np.array(d["dx"]), np.array(d["du"]), d.get("info", {}))

    @staticmethod
    def load(path):
        with open(path) as fh:
            return TerminalIngredients.from_dict(json.load(fh))


def compute_terminal(ldi: LdiModel, Q, R, dx=None, du=None,
                     alpha_tradeoff=1.0, s_floor=1e-7,
                     verbose=False) -> TerminalIngredients:
    """Terminal gain/weight/radius from the vertex-LMI SDP.

    Variables S = Q_hat^{-1}, Y = K_hat S, gamma_hat^{-1}, plus an auxiliary
    matrix bounding S^{-1} whose trace is minimized; objective
    tr(Q_hat) + alpha * gamma_hat^{-1}.  The vertex LMIs are the Schur-
    complement form of the descent inequality for every LDI vertex; the
    remaining constraints keep the terminal ellipsoid inside the validity
    box and its feedback inputs inside the input box.  Square-root factors
    of Q and R are used instead of inverse blocks so Q only needs to be PSD.

    The vertex LMIs are Schur complements that only express descent when S
    is positive definite, and solvers happily return boundary points (S ~ 0)
    on problems whose strict interior is empty, so S is floored at
    s_floor * I and the recovered gain is re-checked against the vertex
    descent inequalities directly.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    n_x = Q.shape[0]
    n_u = R.shape[0]
    dx = ldi.dx if dx is None else np.asarray(dx, float)
    du = ldi.du if du is None else np.asarray(du, float)
    if np.any(dx <= 0) or np.any(du <= 0):
        raise TerminalDesignError("validity half-widths must be positive")
    # Solve in rescaled coordinates x = diag(sx) x', u = diag(su) u'.  The
    # per-coordinate scale is the smaller of the validity half-width and the
    # cost's natural length 1 / sqrt(diag weight), so neither the box rows
    # nor the cost blocks explode when the half-widths span orders of
    # magnitude.  A pure change of variables: the optimum is identical and
    # recovered below, but without it S drifts toward singular and tiny PSD
    # residua blow up through the S^{-1} recovery.
    with np.errstate(divide="ignore"):
        sx = np.minimum(dx, 1.0 / np.sqrt(np.maximum(np.diag(Q), 0.0)))
        su = np.minimum(du, 1.0 / np.sqrt(np.maximum(np.diag(R), 0.0)))
    dxs = dx / sx
    dus = du / su
    Qs = norm_factor(Q) * sx[None, :]
    Rs = norm_factor(R) * su[None, :]
    A_scaled = [A * sx[None, :] / sx[:, None] for A in ldi.A_list]
    B_scaled = [B * su[None, :] / sx[:, None] for B in ldi.B_list]

    p = ConicProblem()
    S = p.add_sym_var(n_x, "S")
    Yv = p.add_var(n_u * n_x, "Y")
    gi = p.add_var(1, "gamma_inv")
    Qh = p.add_sym_var(n_x, "Q_hat")

    for A, B in zip(A_scaled, B_scaled):
        def lmi(Sm, yf, A=A, B=B):
            Ym = yf.reshape(n_u, n_x)
            T = A @ Sm + B @ Ym
            QsS = Qs @ Sm
            RsY = Rs @ Ym
            M = np.zeros((3 * n_x + n_u, 3 * n_x + n_u))
            M[:n_x, :n_x] = Sm
            M[:n_x, n_x:2 * n_x] = T.T
            M[n_x:2 * n_x, :n_x] = T
            M[n_x:2 * n_x, n_x:2 * n_x] = Sm
            M[:n_x, 2 * n_x:3 * n_x] = QsS.T
            M[2 * n_x:3 * n_x, :n_x] = QsS
            M[:n_x, 3 * n_x:] = RsY.T
            M[3 * n_x:, :n_x] = RsY
            M[2 * n_x:3 * n_x, 2 * n_x:3 * n_x] = np.eye(n_x)
            M[3 * n_x:, 3 * n_x:] = np.eye(n_u)
            return M
        p.add_psd_from_fn([S, Yv], lmi)
    # ellipsoid inside the state box: S_ii - gamma_inv * dxs_i^2 <= 0
    tri = tri_indices(n_x)
    for i in range(n_x):
        row = np.zeros((1, S.size))
        row[0, tri.index((i, i))] = 1.0
        p.add_ineq([(S, row), (gi, [[-float(dxs[i] ** 2)]])], [0.0])
    # feedback inputs inside the input box
    for i in range(n_u):
        def u_lmi(Sm, yf, giv, i=i):
            Ym = yf.reshape(n_u, n_x)
            M = np.zeros((n_x + 1, n_x + 1))
            M[0, 0] = giv[0] * dus[i] ** 2
            M[0, 1:] = Ym[i]
            M[1:, 0] = Ym[i]
            M[1:, 1:] = Sm
            return M
        p.add_psd_from_fn([S, Yv, gi], u_lmi)
    # [[S, I], [I, Q_hat_aux]] >= 0 bounds S^{-1}; trace minimization makes
    # it tight, which the Eq.-34 audit below checks
    def bound_lmi(Sm, Qm):
        M = np.zeros((2 * n_x, 2 * n_x))
        M[:n_x, :n_x] = Sm
        M[:n_x, n_x:] = np.eye(n_x)
        M[n_x:, :n_x] = np.eye(n_x)
        M[n_x:, n_x:] = Qm
        return M
    p.add_psd_from_fn([S, Qh], bound_lmi)
    # the floor keeps its original-coordinate meaning S >= s_floor I
    floor = np.diag(s_floor / sx ** 2)
    p.add_psd_from_fn([S], lambda Sm: Sm - floor)
    # weighted trace so the objective equals tr(Q_hat) in original
    # coordinates: tr(D^{-1} Qh' D^{-1}) = sum_i Qh'_ii / sx_i^2
    trace_sel = np.array([1.0 / sx[i] ** 2 if i == j else 0.0
                          for i, j in tri])
    p.set_objective([(Qh, trace_sel), (gi, [float(alpha_tradeoff)])])

    sol = p.solve(verbose=verbose)
    if sol.status != "optimal":
        raise TerminalDesignError(
            f"terminal SDP returned {sol.status} ({sol.status_detail}); "
            f"consider shrinking the terminal box (dx, du)")
    S_scaled = sol.value(S)
    Qh_aux = sol.value(Qh)
    S_val = S_scaled * sx[:, None] * sx[None, :]
    S_inv = np.linalg.inv(S_val)
    Q_hat = 0.5 * (S_inv + S_inv.T)
    K_scaled = sol.value(Yv).reshape(n_u, n_x) @ np.linalg.inv(S_scaled)
    K_hat = K_scaled * su[:, None] / sx[None, :]
    gamma = 1.0 / float(sol.value(gi)[0])
    eq34_gap = float(np.abs(S_scaled @ Qh_aux - np.eye(n_x)).max())
    worst = -np.inf
    for A, B in zip(ldi.A_list, ldi.B_list):
        Acl = A + B @ K_hat
        D = Q_hat - Acl.T @ Q_hat @ Acl - Q - K_hat.T @ R @ K_hat
        worst = max(worst, -float(np.linalg.eigvalsh(D).min()))
    if worst > 1e-6 * max(1.0, float(np.abs(Q_hat).max())):
        raise TerminalDesignError(
            f"recovered gain violates vertex descent by {worst:.3e}; "
            f"consider shrinking the terminal box (dx, du)")
    return TerminalIngredients(
        K_hat, Q_hat, gamma, 0.0, alpha_tradeoff, S_val,
        ldi.x_ref.copy(), ldi.u_ref.copy(), Q, R, dx.copy(), du.copy(),
        info={"solver_status": sol.status_detail, "objective": sol.obj,
              "eq34_gap": eq34_gap, "n_vertices": ldi.m,
              "descent_lmi_violation": worst})


def sample_terminal_states(ing: TerminalIngredients, n_samples, seed=0):
    """Uniform samples from the terminal ellipsoid ||x - xr||^2_Qhat <= g."""
    rng = np.random.default_rng(seed)
    n = len(ing.x_ref)
    w, V = np.linalg.eigh(ing.Q_hat)
    # unit-ball samples mapped through Qhat^{-1/2} * sqrt(gamma)
    dirs = rng.normal(size=(n_samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0, 1, size=(n_samples, 1)) ** (1.0 / n)
    ball = dirs * radii
    M = V @ np.diag(1.0 / np.sqrt(w)) @ V.T * np.sqrt(ing.gamma_hat)
    return ing.x_ref + ball @ M.T


def terminal_inputs(ing: TerminalIngredients, X):
    return ing.u_ref + (X - ing.x_ref) @ ing.K_hat.T


def descent_residuals(ing: TerminalIngredients, model, X, W_points=None):
    """Residual of the terminal descent inequality at each sampled state.

    residual = ||f(x, u) + w - xr||^2_Qhat + ||x - xr||^2_Q + ||u - ur||^2_R
               - ||x - xr||^2_Qhat,  u = K_hat (x - xr) + ur.

    Negative residuals mean descent.  W_points (rows) add disturbances; the
    undisturbed case is W_points=None.
    """
    f_fn = _as_f(model)
    U = terminal_inputs(ing, X)
    Xn = np.asarray(f_fn(X, U))
    dx0 = X - ing.x_ref
    duv = U - ing.u_ref
    base = (np.einsum("mi,ij,mj->m", dx0, ing.Q, dx0)
            + np.einsum("mi,ij,mj->m", duv, ing.R, duv)
            - np.einsum("mi,ij,mj->m", dx0, ing.Q_hat, dx0))
    if W_points is None:
        W_points = np.zeros((1, X.shape[1]))
    worst = np.full(X.shape[0], -np.inf)
    for w in np.atleast_2d(W_points):
        dn = Xn + w - ing.x_ref
        r = np.einsum("mi,ij,mj->m", dn, ing.Q_hat, dn) + base
        worst = np.maximum(worst, r)
    return worst


def audit_terminal(ing: TerminalIngredients, model, n_samples=10000, seed=0,
                   x_lo=None, x_hi=None, u_lo=None, u_hi=None):
    """Sampled check of descent and containment over the terminal set."""
    X = sample_terminal_states(ing, n_samples, seed=seed)
    res = descent_residuals(ing, model, X)
    out = {"max_descent_residual": float(res.max()),
           "descent_ok": bool(res.max() <= ing.beta + 1e-6)}
    box_ok = bool(np.all(np.abs(X - ing.x_ref) <= ing.dx + 1e-9))
    U = terminal_inputs(ing, X)
    u_box_ok = bool(np.all(np.abs(U - ing.u_ref) <= ing.du + 1e-9))
    out["ellipsoid_in_box"] = box_ok
    out["inputs_in_box"] = u_box_ok
    if x_lo is not None:
        out["states_in_X"] = bool(np.all((X >= x_lo - 1e-9)
                                         & (X <= x_hi + 1e-9)))
    if u_lo is not None:
        out["inputs_in_U"] = bool(np.all((U >= u_lo - 1e-9)
                                         & (U <= u_hi + 1e-9)))
    return out


def estimate_beta(ing: TerminalIngredients, model, W_vertices,
                  n_samples=10000, seed=0, safety=1.2):
    """Sampled offset making the disturbed descent inequality hold.

    beta = safety * max(0, max residual over sampled terminal states and
    disturbance vertices).  Exact synthesis is out of scope; this is the
    documented a-posteriori approximation.
    """
    W = np.atleast_2d(np.asarray(W_vertices, float))
    if np.all(W == 0.0):
        return 0.0
    X = sample_terminal_states(ing, n_samples, seed=seed)
    res = descent_residuals(ing, model, X, W_points=W)
    return float(safety * max(0.0, float(res.max())))
