"""Successive-linearization tube MPC loop with feasibility safeguards.

Each control step solves a sequence of convex subproblems, relinearizing
at the updated nominal trajectory between solves.  Infeasible subproblems
(possible after a disturbance moves the measured state) trigger nominal
interpolation back toward the most recent feasible anchor; failure to
recover within a bounded number of interpolation steps is a hard error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..dc_core import DcModel
from .gains import dp_gains
from .geometry import vertex_matrices, width
from .subproblem import (MpcConfig, NominalTrajectory, Subproblem,
                         build_subproblem)


class InitializationError(RuntimeError):
    """No feasible plan exists from the initial state (setup problem)."""


class RestorationError(RuntimeError):
    """Backtracking failed to recover feasibility within the step cap."""


class SolverError(RuntimeError):
    """The conic solver failed for a reason other than infeasibility."""


def roll_trajectory(model: DcModel, x0, v, K) -> NominalTrajectory:
    """Forward simulation of the model under u_k = v_k + K_k x_k."""
    x0 = np.asarray(x0, float)
    v = np.asarray(v, float)
    N = v.shape[0]
    x = np.empty((N + 1, x0.shape[0]))
    u = np.empty_like(v)
    x[0] = x0
    for k in range(N):
        u[k] = v[k] + K[k] @ x[k]
        x[k + 1] = model.f(x[k], u[k])
    return NominalTrajectory(x, u, v.copy(), [Kk.copy() for Kk in K])


def update_trajectory(model: DcModel, traj: NominalTrajectory,
                      v_star) -> NominalTrajectory:
    """Nominal update: keep the anchor start and gains, adopt the solved
    feedforward, re-roll states through the model."""
    return roll_trajectory(model, traj.x[0], v_star, traj.K)


def attach_gains(model: DcModel, traj: NominalTrajectory, cfg: MpcConfig,
                 terminal) -> NominalTrajectory:
    """Time-varying LQ gains along the anchor, with feedforward made
    consistent (u_k = v_k + K_k x_k)."""
    K = dp_gains(model, traj.x, traj.u, cfg.Q, cfg.R, terminal.Q_hat)
    v = np.vstack([traj.u[k] - K[k] @ traj.x[k] for k in range(traj.N)])
    return NominalTrajectory(traj.x.copy(), traj.u.copy(), v, K)


def advance(model: DcModel, traj: NominalTrajectory, terminal,
            x_meas=None) -> NominalTrajectory:
    """Shift the plan one step: drop the first input, append the terminal
    controller at the tail, restart from the measured state when given
    (multi-iteration mode) or from the nominal prediction otherwise."""
    N = traj.N
    x0 = traj.x[1] if x_meas is None else np.asarray(x_meas, float)
    x = np.empty_like(traj.x)
    u = np.empty_like(traj.u)
    x[0] = x0
    for k in range(N - 1):
        u[k] = traj.u[k + 1]
        x[k + 1] = model.f(x[k], u[k])
    u[N - 1] = terminal.K_hat @ (x[N - 1] - terminal.x_ref) + terminal.u_ref
    x[N] = model.f(x[N - 1], u[N - 1])
    return NominalTrajectory(x, u)


@dataclass
class IterationResult:
    feasible: bool
    status: str
    traj: NominalTrajectory | None      # updated anchor (feasible only)
    data: dict | None                   # extracted solution
    J: float
    solve_time: float
    width: float

    @property
    def v(self):
        return None if self.data is None else self.data["v"]


def _tube_width(cfg: MpcConfig, q) -> float:
    # solved q carries solver tolerance noise; a hair of negative slack
    # on the nonemptiness check is expected
    return max(width(cfg.tube, q[k], tol=1e-6) for k in range(q.shape[0]))


def _solve_instance(sub: Subproblem) -> tuple:
    try:
        sol = sub.solve()
    except Exception as exc:                      # solver crash, not status
        raise SolverError(f"conic solver raised: {exc}") from exc
    if sol.status in ("numerical_failure", "unbounded"):
        # these problems are never truly unbounded (cost and tube are
        # boxed), so both statuses mean the backend struggled numerically;
        # a first-order/interior-point swap usually rescues the solve
        other = "scs" if sub.cfg.solver == "clarabel" else "clarabel"
        try:
            retry = sub.problem.solve(backend=other)
        except Exception as exc:
            raise SolverError(f"conic solver failed: {sol.status} "
                              f"({sol.status_detail}); {other} raised: "
                              f"{exc}") from exc
        if retry.status in ("numerical_failure", "unbounded"):
            raise SolverError(f"conic solver failed: {sol.status} "
                              f"({sol.status_detail}); {other} retry: "
                              f"{retry.status} ({retry.status_detail})")
        return retry
    return sol


def mpc_iteration(cfg: MpcConfig, model: DcModel, traj: NominalTrajectory,
                  terminal, w_bar=None) -> IterationResult:
    """One successive-linearization step: gains, build, solve, update.

    Returns an infeasible result rather than raising, so the caller can
    decide between backtracking and aborting.
    """
    if traj.K is None or traj.v is None:
        traj = attach_gains(model, traj, cfg, terminal)
    sub = build_subproblem(cfg, model, traj, terminal, w_bar)
    sol = _solve_instance(sub)
    if sol.status != "optimal":
        return IterationResult(False, sol.status, traj, None, np.nan,
                               sol.solve_time, np.nan)
    data = sub.extract(sol)
    updated = update_trajectory(model, traj, data["v"])
    return IterationResult(True, sol.status, updated, data, data["J"],
                           sol.solve_time, _tube_width(cfg, data["q"]))


def backtrack_restore(cfg: MpcConfig, model: DcModel, terminal,
                      bar: tuple, candidate: tuple, K, w_bar=None,
                      max_steps: int = 50,
                      try_candidate: bool = True) -> tuple:
    """Interpolate the anchor pair (x0, v) from the infeasible candidate
    toward the feasibility bar until a subproblem solves; gains stay fixed.

    Returns (IterationResult, interpolation_steps); a feasible candidate
    costs zero steps.  Each interpolation contracts the candidate
    geometrically toward the bar, so in the limit the bar anchor itself
    is attempted.  The caller can skip the candidate attempt when it has
    already been proven infeasible.
    """
    x0_bar, v_bar = bar
    x0_c, v_c = candidate
    if try_candidate:
        traj = roll_trajectory(model, x0_c, v_c, K)
        res = mpc_iteration(cfg, model, traj, terminal, w_bar)
        if res.feasible:
            return res, 0
    for step in range(1, max_steps + 1):
        x0_c = x0_bar + cfg.rho * (x0_c - x0_bar)
        v_c = v_bar + cfg.rho * (v_c - v_bar)
        traj = roll_trajectory(model, x0_c, v_c, K)
        res = mpc_iteration(cfg, model, traj, terminal, w_bar)
        if res.feasible:
            return res, step
    raise RestorationError(
        f"no feasible subproblem within {max_steps} interpolation steps")


def audit_relaxation(cfg: MpcConfig, model: DcModel, traj: NominalTrajectory,
                     data: dict, w_bar=None) -> float:
    """Soundness check of the solved tube against the exact model.

    Propagates every cross-section vertex through the true DC model under
    the solved control law and measures how far the image pokes out of the
    next cross-section (after the disturbance margin).  Nonpositive up to
    solver tolerance means the convex relaxation really was an outer bound.
    """
    if w_bar is None:
        w_bar = cfg.w_bar()
    w_bar = np.asarray(w_bar, float)
    if w_bar.ndim == 1:
        w_bar = np.broadcast_to(w_bar, (cfg.N, cfg.tube.n_q))
    P = vertex_matrices(cfg.tube)
    G = cfg.tube.gamma
    q = data["q"]
    v = data["v"]
    worst = -np.inf
    for k in range(cfg.N):
        X = q[k] @ np.swapaxes(P, 1, 2)          # (n_vertices, n_x)
        U = v[k] + X @ traj.K[k].T
        img = model.f(X, U)
        lhs = img @ G.T + w_bar[k]
        worst = max(worst, float((lhs - q[k + 1]).max()))
    return worst


def find_initial_trajectory(cfg: MpcConfig, model: DcModel, terminal, x0,
                            w_bar=None, max_rounds: int = 30,
                            gamma_tol: float = 1e-9,
                            history: list | None = None) -> NominalTrajectory:
    """Feasible-plan search from a cold start.

    Seeds with a clipped terminal-controller rollout, then repeatedly
    solves the terminal-relaxed subproblem (minimize the worst terminal
    level gamma) and relinearizes, until the plan lands inside the
    terminal set.  Raises when the initial state provably cannot be
    steered there under this linearization scheme.
    """
    x0 = np.asarray(x0, float)
    d0 = x0 - terminal.x_ref
    # already inside the terminal set: terminal controller rollout works
    seed_v = np.tile(terminal.u_ref - terminal.K_hat @ terminal.x_ref,
                     (cfg.N, 1))
    seed_K = [terminal.K_hat] * cfg.N
    traj = roll_trajectory(model, x0, seed_v, seed_K)
    # clip the seed inputs into the box and re-roll without feedback
    u_clip = np.clip(traj.u, cfg.u_lo, cfg.u_hi)
    if np.any(u_clip != traj.u):
        x = np.empty_like(traj.x)
        x[0] = x0
        for k in range(cfg.N):
            x[k + 1] = model.f(x[k], u_clip[k])
        traj = NominalTrajectory(x, u_clip.copy())
    if float(d0 @ terminal.Q_hat @ d0) <= terminal.gamma_hat:
        return NominalTrajectory(traj.x.copy(), traj.u.copy())

    gamma_prev = np.inf
    for _ in range(max_rounds):
        traj = attach_gains(model, traj, cfg, terminal)
        sub = build_subproblem(cfg, model, traj, terminal, w_bar,
                               relax_terminal=True)
        sol = _solve_instance(sub)
        if sol.status != "optimal":
            raise InitializationError(
                f"terminal-relaxed subproblem {sol.status} from the "
                f"initial state; constraints cannot hold")
        data = sub.extract(sol)
        gamma = data["gamma"]
        if history is not None:
            history.append(gamma)
        traj = update_trajectory(model, traj, data["v"])
        traj = NominalTrajectory(traj.x, traj.u)    # gains go stale
        if gamma <= terminal.gamma_hat * (1.0 + 1e-9):
            return traj
        if gamma_prev - gamma <= gamma_tol:
            raise InitializationError(
                f"terminal level stalled at {gamma:.4g} > "
                f"{terminal.gamma_hat:.4g}; initial state appears "
                f"unreachable to the terminal set")
        gamma_prev = gamma
    raise InitializationError(
        f"terminal level still {gamma_prev:.4g} > {terminal.gamma_hat:.4g} "
        f"after {max_rounds} relaxed rounds")


@dataclass
class ClosedLoopLog:
    n_x: int
    n_u: int
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    x_hist: list = field(default_factory=list)
    u_hist: list = field(default_factory=list)
    J_hist: list = field(default_factory=list)

    @property
    def columns(self):
        cols = ["n", "j", "J", "status", "backtracks"]
        cols += [f"x0_{i}" for i in range(self.n_x)]
        cols += [f"u0_{i}" for i in range(self.n_u)]
        cols += ["solve_time", "width", "relax_violation"]
        return cols

    def add_row(self, n, j, J, status, backtracks, x0, u0, solve_time,
                tube_width, relax_violation):
        row = {"n": n, "j": j, "J": J, "status": status,
               "backtracks": backtracks}
        for i in range(self.n_x):
            row[f"x0_{i}"] = float(x0[i])
        for i in range(self.n_u):
            row[f"u0_{i}"] = float(u0[i])
        row["solve_time"] = solve_time
        row["width"] = tube_width
        row["relax_violation"] = relax_violation
        self.rows.append(row)

    def per_step(self) -> list:
        """Last accepted row of each control step."""
        out = {}
        for row in self.rows:
            if row["status"] != "rejected":
                out[row["n"]] = row
        return [out[n] for n in sorted(out)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for row in self.rows:
                w.writerow(row)

    @property
    def total_solve_time(self) -> float:
        return float(sum(r["solve_time"] for r in self.rows))


def run_controller(cfg: MpcConfig, model: DcModel, terminal, x_init,
                   n_steps: int, plant=None, disturbance=None,
                   log_path=None, audit: bool = False) -> ClosedLoopLog:
    """Closed-loop simulation of the tube controller.

    plant: callable (x, u) -> next state; defaults to the model itself.
    disturbance: callable (n, rng-free) -> additive state offset applied
    after the plant step, or an array of shape (n_steps, n_x).
    audit: record the relaxation-soundness margin of every accepted solve.
    """
    if plant is None:
        plant = model.f
    if disturbance is not None and not callable(disturbance):
        w_seq = np.atleast_2d(np.asarray(disturbance, float))
        if w_seq.shape[0] < n_steps:
            raise ValueError("disturbance array shorter than the run")
        disturbance = lambda n: w_seq[n]          # noqa: E731

    w_bar = cfg.w_bar()
    x = np.asarray(x_init, float).copy()
    log = ClosedLoopLog(model.n_x, model.n_u)
    log.x_hist.append(x.copy())

    traj = find_initial_trajectory(cfg, model, terminal, x, w_bar)
    prev_shift_bar = None      # (x0, v) warm pair from the previous step

    for n in range(n_steps):
        feasible_pair = None   # most recent feasible anchor pair at this n
        result = None
        for j in range(cfg.max_iters):
            traj = attach_gains(model, traj, cfg, terminal)
            res = mpc_iteration(cfg, model, traj, terminal, w_bar)
            backtracks = 0
            if not res.feasible:
                if n == 0:
                    raise InitializationError(
                        f"subproblem {res.status} at the initial state")
                bar = feasible_pair if feasible_pair is not None \
                    else prev_shift_bar
                if bar is None:
                    raise RestorationError(
                        "infeasible subproblem with no feasibility bar")
                res, backtracks = backtrack_restore(
                    cfg, model, terminal, bar, (traj.x[0], traj.v),
                    traj.K, w_bar, try_candidate=False)
            if backtracks:
                log.events.append({"n": n, "j": j,
                                   "backtracks": backtracks,
                                   "recovered": True})
            anchor = res.traj        # updated trajectory, same gains
            # cost safeguard: a relinearized resolve warm-starts at a
            # feasible plan, so a cost increase only ever reflects solver
            # noise; reject the iterate and keep the incumbent
            accepted = result is None or res.J <= result.J
            viol = audit_relaxation(cfg, model, anchor, res.data,
                                    w_bar) if (audit and accepted) else np.nan
            status = "restored" if backtracks else (
                "ok" if accepted else "rejected")
            log.add_row(n, j, res.J, status, backtracks, anchor.x[0],
                        anchor.u[0], res.solve_time, res.width, viol)
            if not accepted:
                traj = result.traj
                break
            gain = np.inf if result is None else result.J - res.J
            result = res
            feasible_pair = (anchor.x[0].copy(),
                             None if anchor.v is None else anchor.v.copy())
            traj = anchor
            if gain <= cfg.tolerance:
                break

        u_applied = traj.u[0].copy()
        log.u_hist.append(u_applied)
        log.J_hist.append(result.J)

        x_next = np.asarray(plant(x, u_applied), float).reshape(-1)
        if disturbance is not None:
            x_next = x_next + np.asarray(disturbance(n), float)
        log.x_hist.append(x_next.copy())

        # warm bar for the next step: shifted solved plan from nominal
        v_shift = np.vstack([traj.v[1:],
                             terminal.u_ref
                             - terminal.K_hat @ terminal.x_ref])
        prev_shift_bar = (traj.x[1].copy(), v_shift)

        x_meas = x_next if cfg.max_iters > 1 else None
        traj = advance(model, traj, terminal, x_meas)
        x = x_next

    log.x_hist = np.vstack(log.x_hist)
    log.u_hist = np.vstack(log.u_hist)
    log.J_hist = np.asarray(log.J_hist)
    if log_path is not None:
        log.to_csv(log_path)
    return log
