"""Assembly of the per-iteration convex tube program.

One subproblem instance corresponds to one linearization anchor (a nominal
trajectory with gains).  Decision variables are the feedforward sequence v,
the cross-section parameters q (vertices are linear in q), the per-step
worst-case-cost slacks theta/chi, representation-specific auxiliaries, and
one cost epigraph.  Constraints are per-vertex: weighted-norm cost
epigraphs, relaxed DC dynamics rows (kept-convex parts encoded exactly or
by certified majorants, concave parts replaced by tangents at the anchor),
state/input box membership, and the terminal ball.

The Gamma-row structure decides which convex part each dynamics row keeps:
a row of Gamma*scatter with positive weight on model output o carries +f_o,
so its concave part is -h_o (tangent h_o, keep g_o); negative weight
carries -f_o, so keep h_o and tangent g_o.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..conic import ConicProblem, Solution, Var, norm_factor
from ..dc_core import DcModel, NetCore, PolyCore, RbfCore
from .geometry import (TubeParam, disturbance_offsets, q_from_point,
                       vertex_matrices)


class BuildError(ValueError):
    pass


@dataclass
class NominalTrajectory:
    """Anchor trajectory: states x (N+1 rows), inputs u (N rows).

    After a solve, carries the feedforward v and gains K consistent with
    u_k = v_k + K_k x_k; after a shift/advance they are stale and cleared.
    """
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray | None = None
    K: list | None = None

    @property
    def N(self) -> int:
        return self.u.shape[0]

    def validate(self, model: DcModel, tol: float = 1e-9):
        rolled = model.f(self.x[:-1], self.u)
        gap = float(np.abs(rolled - self.x[1:]).max())
        if gap > tol:
            raise ValueError(f"trajectory violates model dynamics by {gap:.2e}")
        if self.v is not None and self.K is not None:
            for k in range(self.N):
                ulaw = self.v[k] + self.K[k] @ self.x[k]
                if np.abs(ulaw - self.u[k]).max() > tol:
                    raise ValueError(f"u != v + K x at step {k}")

    def copy(self) -> "NominalTrajectory":
        return NominalTrajectory(
            self.x.copy(), self.u.copy(),
            None if self.v is None else self.v.copy(),
            None if self.K is None else [K.copy() for K in self.K])


@dataclass
class MpcConfig:
    N: int
    delta: float
    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    tube: TubeParam
    W_vertices: np.ndarray | None = None      # None means {0}
    eps: np.ndarray | None = None             # modelling-error box half-widths
    tolerance: float = 1e-4                   # absolute delta-J stop
    max_iters: int = 1
    rho: float = 0.2
    inflate_x0: bool = False
    solver: str = "clarabel"
    solver_opts: dict = field(default_factory=dict)
    # tiny weight on the total tube size (sum of section widths).  The
    # worst-vertex cost alone leaves section sizes pinned only from below,
    # so an interior-point solver parks them mid-face instead of collapsing
    # them; this term makes the minimal tube the unique optimum.  It is
    # supported at zero on singleton tubes, so warm-start cost arguments
    # are unaffected.
    tube_reg: float = 1e-3

    def __post_init__(self):
        for name in ("Q", "R", "x_ref", "u_ref", "x_lo", "x_hi",
                     "u_lo", "u_hi"):
            setattr(self, name, np.asarray(getattr(self, name), float))
        self.Q = np.atleast_2d(self.Q)
        self.R = np.atleast_2d(self.R)
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("backtracking factor rho must be in (0, 1)")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("input weight R must be positive definite")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("state weight Q must be positive semidefinite")
        if self.W_vertices is not None:
            self.W_vertices = np.atleast_2d(np.asarray(self.W_vertices, float))
        if self.eps is not None:
            self.eps = np.asarray(self.eps, float)

    @property
    def disturbed(self) -> bool:
        has_w = self.W_vertices is not None and np.any(self.W_vertices != 0.0)
        has_e = self.eps is not None and np.any(self.eps != 0.0)
        return has_w or has_e

    def w_bar(self) -> np.ndarray:
        W = self.W_vertices
        if W is None:
            W = np.zeros((1, self.tube.n_x))
        return disturbance_offsets(self.tube, W, self.eps)


def _selectors(model: DcModel):
    """Matrices (Sx, Su) with z = Sx x + Su u."""
    n_zx = len(model.x_sel)
    n_z = n_zx + len(model.u_sel)
    Sx = np.zeros((n_z, model.n_x))
    Su = np.zeros((n_z, model.n_u))
    for r, idx in enumerate(model.x_sel):
        Sx[r, idx] = 1.0
    for r, idx in enumerate(model.u_sel):
        Su[n_zx + r, idx] = 1.0
    return Sx, Su


def concave_linearizations(model: DcModel, traj: NominalTrajectory) -> list:
    """Per-step tangent data for both DC parts at the anchor points.

    Returns one dict per step k with the anchor z0 and, for each part,
    (values, jacobians) of the global affine under-estimator at z0.  Which
    part a dynamics row actually linearizes depends on the row's sign
    structure, so both are provided.
    """
    Sx, Su = _selectors(model)
    out = []
    for k in range(traj.N):
        z0 = Sx @ traj.x[k] + Su @ traj.u[k]
        g_val, g_jac = model.core_tangent(z0, "g")
        h_val, h_jac = model.core_tangent(z0, "h")
        out.append({"z0": z0, "g": (g_val, g_jac), "h": (h_val, h_jac)})
    return out


# -- per-representation encodings of kept-convex values ----------------------
#
# Each encoder is built once per (step, vertex) pair and returns affine
# upper bounds on the core outputs g(z) and h(z) at the pair's z, which is
# itself affine in (q_k, v_k).  All encodings are exact when z sits at the
# anchor, preserving warm-start feasibility.

class _PolyEncoder:
    """Certified quadratic majorant around the anchor, one shared radius.

    value_o(z) <= value_o(z0) + grad_o (z - z0) + 0.5 mu_o ||z - z0||^2,
    with mu_o an interval bound on the largest Hessian eigenvalue over the
    constraint box, so the bound is sound for every feasible z.
    """

    def __init__(self, prob, core, lin, mu_g, mu_h, q_var, v_var, Zq, Zv):
        self.lin = lin
        self.mu = {"g": mu_g, "h": mu_h}
        self.terms_z = [(q_var, Zq), (v_var, Zv)]
        self.r = prob.add_var(1)
        prob.add_sq_epigraph(self.terms_z, -lin["z0"],
                             [(self.r, np.ones((1, 1)))], 0.0)

    def bound(self, which):
        vals, jac = self.lin[which]
        terms = [(var, jac @ M) for var, M in self.terms_z]
        terms.append((self.r, 0.5 * self.mu[which].reshape(-1, 1)))
        return terms, vals - jac @ self.lin["z0"]


class _NetEncoder:
    """Exact LP epigraph of the ReLU network activations.

    Nonnegative hidden-to-hidden and output weights make any elementwise
    upper bound on the activations propagate to the outputs, and the bound
    is attained, so the encoding is exact at the optimum.
    """

    def __init__(self, prob, core: NetCore, q_var, v_var, Zq, Zv):
        self.core = core
        self.terms_z = [(q_var, Zq), (v_var, Zv)]
        self.alphas = []
        alpha_prev = None
        for (Wz, Wx, b) in core.hidden:
            alpha = prob.add_var(Wx.shape[0])
            width = alpha.size
            # alpha >= 0
            prob.add_ineq([(alpha, -np.eye(width))], np.zeros(width))
            # alpha >= Wz alpha_prev + Wx z + b
            terms = [(q_var, Wx @ Zq), (v_var, Wx @ Zv),
                     (alpha, -np.eye(width))]
            if Wz is not None and alpha_prev is not None:
                terms.append((alpha_prev, Wz))
            prob.add_ineq(terms, b)
            alpha_prev = alpha
            self.alphas.append(alpha)
        self.alpha_last = alpha_prev

    def bound(self, which):
        core = self.core
        if which == "g":
            terms = [(self.alpha_last, core.W_pos)]
            terms += [(var, core.Wx_f @ M) for var, M in self.terms_z]
            return terms, core.b_f.copy()
        return [(self.alpha_last, core.W_neg)], np.zeros(core.n_out)


class _RbfEncoder:
    """Exact SOC epigraphs t_j >= sqrt(1 + rho_j^2 ||z - c_j||^2), shared
    between the g and h bounds (both have nonnegative weights on t)."""

    def __init__(self, prob, core: RbfCore, q_var, v_var, Zq, Zv):
        self.core = core
        m, n_z = core.centers.shape
        self.t = prob.add_var(m)
        for j in range(m):
            rho = core.rho[j]
            top = np.zeros((1 + n_z,))
            top[0] = 1.0
            top[1:] = -rho * core.centers[j]
            Mq = np.vstack([np.zeros((1, Zq.shape[1])), rho * Zq])
            Mv = np.vstack([np.zeros((1, Zv.shape[1])), rho * Zv])
            e = np.zeros((1, m))
            e[0, j] = 1.0
            prob.add_soc([(q_var, Mq), (v_var, Mv)], top,
                         [(self.t, e)], 0.0)

    def bound(self, which):
        a = self.core.alpha
        if which == "g":
            return [(self.t, np.clip(a, 0.0, None))], self.core.const.copy()
        return [(self.t, np.clip(-a, 0.0, None))], np.zeros(a.shape[0])


def _make_encoder(prob, model, lin_k, mu, q_var, v_var, Zq, Zv):
    core = model.core
    if isinstance(core, PolyCore):
        return _PolyEncoder(prob, core, lin_k, mu["g"], mu["h"],
                            q_var, v_var, Zq, Zv)
    if isinstance(core, NetCore):
        return _NetEncoder(prob, core, q_var, v_var, Zq, Zv)
    if isinstance(core, RbfCore):
        return _RbfEncoder(prob, core, q_var, v_var, Zq, Zv)
    raise BuildError(f"no subproblem encoding for {type(core).__name__}")


def _poly_curvature(model: DcModel, cfg: MpcConfig):
    """Hessian eigenvalue bounds for both parts over the constraint box."""
    Sx, Su = _selectors(model)
    z_lo = Sx @ cfg.x_lo + Su @ cfg.u_lo
    z_hi = Sx @ cfg.x_hi + Su @ cfg.u_hi
    return {"g": model.core.curvature_bound(z_lo, z_hi, "g"),
            "h": model.core.curvature_bound(z_lo, z_hi, "h")}


@dataclass
class Subproblem:
    problem: ConicProblem
    cfg: MpcConfig
    v_vars: list
    q_vars: list
    theta: Var
    chi: Var
    cost: Var
    gamma_var: Var | None
    anchor: NominalTrajectory
    w_bar: np.ndarray
    terminal: object = None
    encoders: dict = field(default_factory=dict)   # (step, vertex) -> encoder

    def solve(self, **opts) -> Solution:
        options = dict(self.cfg.solver_opts)
        options.update(opts)
        return self.problem.solve(backend=self.cfg.solver, **options)

    def extract(self, sol: Solution) -> dict:
        """Solution values plus the worst-case cost of the returned tube.

        theta/chi are re-evaluated as the actual per-step worst vertex norms
        of the solved tube rather than read from the slack variables: the two
        agree at an exact optimum (the epigraph rows are tight there), but
        slacks float above the norms by the solver's termination tolerance,
        which matters once the cost decays toward zero.
        """
        v = np.vstack([sol.value(vk) for vk in self.v_vars])
        q = np.vstack([sol.value(qk) for qk in self.q_vars])
        P = vertex_matrices(self.cfg.tube)
        Qs = norm_factor(self.cfg.Q)
        Rs = norm_factor(self.cfg.R)
        N = self.cfg.N
        theta = np.empty(N + 1)
        chi = np.empty(N)
        for k in range(N):
            theta[k] = max(np.linalg.norm(Qs @ (Pi @ q[k] - self.cfg.x_ref))
                           for Pi in P)
            chi[k] = max(
                np.linalg.norm(Rs @ (v[k] + self.anchor.K[k] @ (Pi @ q[k])
                                     - self.cfg.u_ref)) for Pi in P)
        Qhs = norm_factor(self.terminal.Q_hat)
        theta[N] = max(np.linalg.norm(Qhs @ (Pi @ q[N] - self.cfg.x_ref))
                       for Pi in P)
        J = float(theta[N] ** 2 + (theta[:-1] ** 2).sum() + (chi ** 2).sum())
        out = {"v": v, "q": q, "theta": theta, "chi": chi, "J": J}
        if self.gamma_var is not None:
            out["gamma"] = float(sol.value(self.gamma_var)[0])
        return out


def build_subproblem(cfg: MpcConfig, model: DcModel, traj: NominalTrajectory,
                     terminal, w_bar=None, relax_terminal=False) -> Subproblem:
    if traj.K is None:
        raise BuildError("trajectory carries no gains; run dp_gains first")
    N = cfg.N
    if traj.N != N or len(traj.K) != N:
        raise BuildError(f"trajectory length {traj.N} != horizon {N}")
    n_x, n_u = model.n_x, model.n_u
    param = cfg.tube
    if param.n_x != n_x:
        raise BuildError("tube dimension does not match the model")
    n_q = param.n_q
    G = param.gamma
    P_mats = vertex_matrices(param)
    n_v = param.n_vertices

    if w_bar is None:
        w_bar = cfg.w_bar()
    w_bar = np.asarray(w_bar, float)
    if w_bar.ndim == 1:
        w_bar = np.broadcast_to(w_bar, (N, n_q))

    lin = concave_linearizations(model, traj)
    Sx, Su = _selectors(model)
    mu = _poly_curvature(model, cfg) if isinstance(model.core, PolyCore) \
        else None

    C = G @ model.scatter                     # row weights on core outputs
    Cpos = np.clip(C, 0.0, None)
    Cneg = np.clip(-C, 0.0, None)
    GA = G @ model.lin_A
    GB = G @ model.lin_B
    Gc = G @ model.lin_c

    Qs = norm_factor(cfg.Q)
    Rs = norm_factor(cfg.R)
    Qhs = norm_factor(terminal.Q_hat)

    p = ConicProblem()
    v_vars = [p.add_var(n_u, f"v{k}") for k in range(N)]
    q_vars = [p.add_var(n_q, f"q{k}") for k in range(N + 1)]
    theta = p.add_var(N + 1, "theta")
    chi = p.add_var(N, "chi")
    cost = p.add_var(1, "cost")
    gamma_var = p.add_var(1, "gamma") if relax_terminal else None

    # initial cross-section: the singleton at the anchor start, optionally
    # inflated by the modelling-error box
    q0 = q_from_point(param, traj.x[0])
    if cfg.inflate_x0 and cfg.eps is not None:
        q0 = q0 + np.abs(G) @ cfg.eps
    p.add_eq([(q_vars[0], np.eye(n_q))], -q0)

    encoders = {}

    e_thetaN = np.zeros((1, N + 1))
    e_thetaN[0, N] = 1.0

    for k in range(N):
        Kk = traj.K[k]
        e_th = np.zeros((1, N + 1))
        e_th[0, k] = 1.0
        e_ch = np.zeros((1, N))
        e_ch[0, k] = 1.0
        for i in range(n_v):
            Pi = P_mats[i]
            KPi = Kk @ Pi
            if not relax_terminal:
                # worst-case stage cost epigraphs at this vertex
                p.add_weighted_norm(Qs, [(q_vars[k], Pi)], -cfg.x_ref,
                                    [(theta, e_th)], 0.0)
                p.add_weighted_norm(Rs, [(v_vars[k], np.eye(n_u)),
                                         (q_vars[k], KPi)], -cfg.u_ref,
                                    [(chi, e_ch)], 0.0)
            # relaxed dynamics rows into q_{k+1}
            Zq = (Sx + Su @ Kk) @ Pi
            Zv = Su
            enc = _make_encoder(p, model, lin[k], mu, q_vars[k], v_vars[k],
                                Zq, Zv)
            encoders[(k, i)] = enc
            h_val, h_jac = lin[k]["h"]
            g_val, g_jac = lin[k]["g"]
            z0 = lin[k]["z0"]
            T = Cpos @ h_jac + Cneg @ g_jac   # tangent row coefficients on z
            row_q = GA @ Pi + GB @ KPi - T @ Zq
            row_v = GB - T @ Zv
            const = (Gc - Cpos @ (h_val - h_jac @ z0)
                     - Cneg @ (g_val - g_jac @ z0) + w_bar[k])
            terms = [(q_vars[k], row_q), (v_vars[k], row_v),
                     (q_vars[k + 1], -np.eye(n_q))]
            g_terms, g_const = enc.bound("g")
            for var, M in g_terms:
                terms.append((var, Cpos @ M))
            const = const + Cpos @ g_const
            h_terms, h_const = enc.bound("h")
            for var, M in h_terms:
                terms.append((var, Cneg @ M))
            const = const + Cneg @ h_const
            p.add_ineq(terms, const)
            # state and input box membership
            p.add_ineq([(q_vars[k], np.vstack([Pi, -Pi]))],
                       np.concatenate([-cfg.x_hi, cfg.x_lo]))
            p.add_ineq([(v_vars[k], np.vstack([np.eye(n_u), -np.eye(n_u)])),
                        (q_vars[k], np.vstack([KPi, -KPi]))],
                       np.concatenate([-cfg.u_hi, cfg.u_lo]))

    # terminal rows
    for i in range(n_v):
        Pi = P_mats[i]
        if relax_terminal:
            p.add_sq_epigraph([(q_vars[N], Qhs @ Pi)], -Qhs @ cfg.x_ref,
                              [(gamma_var, np.ones((1, 1)))], 0.0)
        else:
            p.add_weighted_norm(Qhs, [(q_vars[N], Pi)], -cfg.x_ref,
                                [(theta, e_thetaN)], 0.0)
    # tube-size term: 1^T q is the summed section width for the box form
    # and the simplex size for the simplex form, zero exactly on singletons
    reg_terms = []
    if cfg.tube_reg > 0.0:
        reg_terms = [(q_vars[k], cfg.tube_reg * np.ones(n_q))
                     for k in range(1, N + 1)]
    if relax_terminal:
        # stage slacks are unused here; pin them so the optimal set stays
        # bounded and extraction is well defined
        p.add_eq([(theta, np.eye(N + 1))], np.zeros(N + 1))
        p.add_eq([(chi, np.eye(N))], np.zeros(N))
        p.add_eq([(cost, np.eye(1))], np.zeros(1))
        p.set_objective([(gamma_var, [1.0])] + reg_terms)
    else:
        p.add_ineq([(theta, e_thetaN)], [-np.sqrt(terminal.gamma_hat)])
        # objective epigraph: sum of squared slacks <= cost
        M_th = np.vstack([np.eye(N + 1), np.zeros((N, N + 1))])
        M_ch = np.vstack([np.zeros((N + 1, N)), np.eye(N)])
        p.add_sq_epigraph([(theta, M_th), (chi, M_ch)], np.zeros(2 * N + 1),
                          [(cost, np.ones((1, 1)))], 0.0)
        p.set_objective([(cost, [1.0])] + reg_terms)

    return Subproblem(p, cfg, v_vars, q_vars, theta, chi, cost, gamma_var,
                      traj, np.asarray(w_bar), terminal, encoders)
