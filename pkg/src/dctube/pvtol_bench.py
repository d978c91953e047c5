"""Planar VTOL hover benchmark.

A planar vertical take-off and landing vehicle with state
(roll angle, lateral velocity, vertical velocity, roll rate) and inputs
(net thrust offset, roll torque).  The continuous dynamics are

    d/dt roll      = roll_rate
    d/dt lat_vel   = (u1 + g) * sin(roll)
    d/dt vert_vel  = (u1 + g) * cos(roll) - g
    d/dt roll_rate = u2

so only the two velocity rows are nonlinear, and both depend on (roll, u1)
alone.  The module provides the exact plant (Euler or RK4 discretization),
dataset generation for the two accelerations, model fitting for the three
decomposition families, a Newton recentering that turns the fitted model's
hover point into an exact equilibrium, terminal-ingredient construction, and
closed-loop experiment / timing-sweep drivers with on-disk caching.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time

import numpy as np

from .dc_core import DcModel
from .dc_fit import (fit_poly_core, modelling_error_box, report_mae,
                     sample_dynamics, train_net_core, train_rbf_core,
                     train_test_split)
from .terminal_design import (LdiError, TerminalIngredients, build_ldi,
                              compute_terminal)
from .tube_mpc import (MpcConfig, TubeParam, run_controller)

GRAVITY = 9.81

# operating box and cost weights for the hover task
X_LO = np.array([-3.0, -30.0, -10.0, -1.0])
X_HI = np.array([3.0, 30.0, 10.0, 1.0])
U_LO = np.array([-10.0, -10.0])
U_HI = np.array([10.0, 10.0])
Q_COST = np.diag([10.0, 1.0, 1.0, 1.0])
R_COST = np.diag([1e-4, 1e-3])
TERM_DX = np.array([3e-2, 1.0, 1.0, 1e-1])
TERM_DU = np.array([1.0, 1.0])
X_INIT_DEFAULT = (0.1, 0.0, 0.0, 0.0)
DELTA_DEFAULT = 0.5
HORIZON_DEFAULT = 50

# sampling box for the acceleration dataset: (roll, u1)
ACCEL_LO = np.array([-3.0, -10.0])
ACCEL_HI = np.array([3.0, 10.0])
N_SAMPLES_DEFAULT = 100_000


# ---------------------------------------------------------------------------
# exact plant
# ---------------------------------------------------------------------------

def pvtol_accel(Z):
    """Lateral / vertical acceleration from rows of (roll, u1)."""
    Z = np.atleast_2d(np.asarray(Z, float))
    roll = Z[:, 0]
    thrust = Z[:, 1] + GRAVITY
    return np.stack([thrust * np.sin(roll),
                     thrust * np.cos(roll) - GRAVITY], axis=1)


def pvtol_field(x, u):
    """Continuous-time vector field, batched over rows."""
    X = np.atleast_2d(np.asarray(x, float))
    U = np.atleast_2d(np.asarray(u, float))
    acc = pvtol_accel(np.stack([X[:, 0], U[:, 0]], axis=1))
    out = np.zeros_like(X)
    out[:, 0] = X[:, 3]
    out[:, 1] = acc[:, 0]
    out[:, 2] = acc[:, 1]
    out[:, 3] = U[:, 1]
    return out


def pvtol_step(state, inp, delta, w=None, method="euler"):
    """One discrete step of the plant; `w` adds to the velocity rows.

    `w` may be None, a length-2 vector (lateral, vertical) or an array of
    such rows matching a batch of states.
    """
    single = np.ndim(state) == 1
    X = np.atleast_2d(np.asarray(state, float))
    U = np.atleast_2d(np.asarray(inp, float))
    if method == "euler":
        nxt = X + delta * pvtol_field(X, U)
    elif method == "rk4":
        k1 = pvtol_field(X, U)
        k2 = pvtol_field(X + 0.5 * delta * k1, U)
        k3 = pvtol_field(X + 0.5 * delta * k2, U)
        k4 = pvtol_field(X + delta * k3, U)
        nxt = X + (delta / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown integration method {method!r}")
    if w is not None:
        W = np.atleast_2d(np.asarray(w, float))
        nxt[:, 1] += W[:, 0]
        nxt[:, 2] += W[:, 1]
    return nxt[0] if single else nxt


class PvtolPlant:
    """Discretized exact plant with the DcModel call surface (f, linearize)."""

    def __init__(self, delta=DELTA_DEFAULT, method="euler"):
        self.delta = float(delta)
        self.method = method
        self.n_x = 4
        self.n_u = 2

    def f(self, x, u):
        return pvtol_step(x, u, self.delta, method=self.method)

    def linearize(self, x, u):
        if self.method == "euler":
            roll = float(np.asarray(x)[0])
            thrust = float(np.asarray(u)[0]) + GRAVITY
            d = self.delta
            A = np.eye(4)
            A[0, 3] = d
            A[1, 0] = d * thrust * np.cos(roll)
            A[2, 0] = -d * thrust * np.sin(roll)
            B = np.zeros((4, 2))
            B[1, 0] = d * np.sin(roll)
            B[2, 0] = d * np.cos(roll)
            B[3, 1] = d
            return A, B
        # RK4: central finite differences of the step map
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        A = np.zeros((4, 4))
        B = np.zeros((4, 2))
        h = 1e-6
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            A[:, j] = (self.f(x + e, u) - self.f(x - e, u)) / (2 * h)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            B[:, j] = (self.f(x, u + e) - self.f(x, u - e)) / (2 * h)
        return A, B


# ---------------------------------------------------------------------------
# dataset and model fitting
# ---------------------------------------------------------------------------

def make_dataset(n_samples=N_SAMPLES_DEFAULT, seed=0, cache_path=None):
    """Acceleration samples over the (roll, u1) box, optionally CSV-cached."""
    if cache_path and os.path.exists(cache_path):
        data = np.loadtxt(cache_path, delimiter=",", skiprows=1)
        if data.shape == (n_samples, 4):
            return data[:, :2], data[:, 2:]
    Z, Y = sample_dynamics(pvtol_accel, ACCEL_LO, ACCEL_HI,
                           n_samples=n_samples, seed=seed)
    if cache_path:
        os.makedirs(os.path.dirname(cache_path) or ".", exist_ok=True)
        np.savetxt(cache_path, np.hstack([Z, Y]), delimiter=",",
                   header="roll,u1,lat_accel,vert_accel", comments="")
    return Z, Y


def assemble_model(core, delta=DELTA_DEFAULT, fit_report=None) -> DcModel:
    """Wire an acceleration core into the forward-Euler stepper skeleton.

    The core maps (roll, u1) to the two accelerations; the remaining rows
    (roll integrates roll rate, roll rate integrates u2) are exactly linear.
    """
    d = float(delta)
    lin_A = np.eye(4)
    lin_A[0, 3] = d
    lin_B = np.zeros((4, 2))
    lin_B[3, 1] = d
    scatter = np.zeros((4, 2))
    scatter[1, 0] = d
    scatter[2, 1] = d
    return DcModel(core, n_x=4, n_u=2, x_sel=[0], u_sel=[0],
                   scatter=scatter, lin_A=lin_A, lin_B=lin_B,
                   lin_c=np.zeros(4), fit_report=fit_report)


FIT_DEFAULTS = {
    "poly": {"degree": 3},
    "net": {"width": 64, "n_hidden_layers": 1, "epochs": 200, "batch": 32},
    "rbf": {"n_centers": 49, "epochs": 100, "batch": 64},
}


def fit_pvtol_model(kind, Z=None, Y=None, delta=DELTA_DEFAULT, seed=0,
                    verbose=False, **hyper):
    """Fit one decomposition family to the acceleration data.

    Returns the assembled 4-state model; the held-out acceleration MAE and
    the fit hyperparameters land in model.fit_report.
    """
    if Z is None or Y is None:
        Z, Y = make_dataset(seed=seed)
    params = dict(FIT_DEFAULTS[kind])
    params.update(hyper)
    Ztr, Ytr, Zte, Yte = train_test_split(Z, Y, test_frac=0.01, seed=seed)
    t0 = time.perf_counter()
    if kind == "poly":
        core, info = fit_poly_core(Ztr, Ytr, **params)
    elif kind == "net":
        core, info = train_net_core(Ztr, Ytr, seed=seed, verbose=verbose,
                                    **params)
    elif kind == "rbf":
        core, info = train_rbf_core(Ztr, Ytr, seed=seed, verbose=verbose,
                                    **params)
    else:
        raise ValueError(f"unknown decomposition kind {kind!r}")
    fit_time = time.perf_counter() - t0

    def accel(Zq):
        return core.eval_g(Zq) - core.eval_h(Zq)

    report = {"kind": kind, "seed": seed, "fit_seconds": fit_time,
              "params": {k: (float(v) if isinstance(v, (int, float)) else v)
                         for k, v in params.items()},
              "n_train": int(Ztr.shape[0])}
    report.update(report_mae(accel, Zte, Yte))
    report.update({k: v for k, v in info.items()
                   if isinstance(v, (int, float, str))})
    return assemble_model(core, delta=delta, fit_report=report)


def model_reference(model, guess=(0.0, 0.0), tol=1e-12, max_iter=60):
    """Hover point of the fitted model: Newton on the two accelerations.

    Solves accel(roll, u1) = 0 so that f(x_ref, u_ref) = x_ref holds exactly
    for the assembled model (the other residual rows vanish with zero
    velocities and zero torque).  Returns (x_ref, u_ref).
    """
    z = np.asarray(guess, float).copy()
    for _ in range(max_iter):
        val = model.core.eval_g(z[None, :])[0] - model.core.eval_h(z[None, :])[0]
        if np.max(np.abs(val)) < tol:
            break
        J = model.core.jac_g(z) - model.core.jac_h(z)
        try:
            step = np.linalg.solve(J, val)
        except np.linalg.LinAlgError as e:
            raise RuntimeError("hover Newton hit a singular Jacobian") from e
        z = z - step
    else:
        raise RuntimeError(
            f"hover Newton did not converge (residual {np.max(np.abs(val)):.2e})")
    x_ref = np.array([z[0], 0.0, 0.0, 0.0])
    u_ref = np.array([z[1], 0.0])
    if np.any(x_ref < X_LO) or np.any(x_ref > X_HI) or \
            np.any(u_ref < U_LO) or np.any(u_ref > U_HI):
        raise RuntimeError(f"hover point {z} left the operating box")
    return x_ref, u_ref


# ---------------------------------------------------------------------------
# terminal ingredients
# ---------------------------------------------------------------------------

def pvtol_terminal(model, plant=None, dx=None, du=None, alpha_tradeoff=1.0,
                   inflation=1.05, seed=0, verbose=False) -> TerminalIngredients:
    """Terminal gain / weight / level set around the fitted hover point.

    The vertex set of the local differential inclusion merges corner
    Jacobians of the fitted model and (when given) of the exact plant, so
    the terminal controller certificate covers both; the secant audit then
    runs against both step maps.
    """
    x_ref, u_ref = model_reference(model)
    dx = TERM_DX if dx is None else np.asarray(dx, float)
    du = TERM_DU if du is None else np.asarray(du, float)
    ldi = build_ldi(model, x_ref, u_ref, dx, du, inflation=1.0,
                    audit_fns=[], seed=seed)
    pairs = list(zip(ldi.A_list, ldi.B_list))
    audits = [model.f]
    if plant is not None:
        pl = build_ldi(plant, x_ref, u_ref, dx, du, inflation=1.0,
                       audit_fns=[], seed=seed)
        pairs += list(zip(pl.A_list, pl.B_list))
        audits.append(plant.f)
    # inflate the merged set about its centroid before auditing; corner
    # Jacobians miss interior kinks of piecewise-linear cores, so grow the
    # margin until the secant audit accepts
    Am = np.mean([A for A, _ in pairs], axis=0)
    Bm = np.mean([B for _, B in pairs], axis=0)
    merged = None
    for margin in (inflation, 1.1, 1.2, 1.4, 1.7, 2.0, 2.5, 3.0):
        if margin < inflation:
            continue
        blown = [(Am + margin * (A - Am), Bm + margin * (B - Bm))
                 for A, B in pairs]
        try:
            merged = build_ldi(model, x_ref, u_ref, dx, du,
                               mode="user_supplied", vertices=blown,
                               audit_fns=audits, seed=seed)
        except LdiError:
            continue
        break
    if merged is None:
        raise LdiError("no inflation factor up to 3.0 makes the merged "
                       "vertex set contain the sampled secants")
    ing = compute_terminal(merged, Q_COST, R_COST,
                           alpha_tradeoff=alpha_tradeoff, verbose=verbose)
    ing.info["n_ldi_vertices"] = len(blown)
    ing.info["ldi_inflation"] = margin
    ing.info["plant_in_ldi"] = plant is not None
    return ing


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

class ExperimentError(RuntimeError):
    """An experiment stage failed; .stage names it, __cause__ has the root."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclasses.dataclass
class ExperimentConfig:
    """Everything needed to reproduce one closed-loop run."""
    name: str = "pvtol"
    kind: str = "poly"                    # poly | net | rbf
    tube: str = "elementwise"             # elementwise | simplex
    N: int = HORIZON_DEFAULT
    delta: float = DELTA_DEFAULT
    n_steps: int = 60
    max_iters: int = 1
    tolerance: float = 1e-4
    rho: float = 0.2
    # small width pressure: enough to kill the degenerate flat-tube face,
    # small enough that the width/cost equilibrium sits far below the
    # acceptance tolerances on the objective trace
    tube_reg: float = 1e-6
    dist_halfwidth: float = 0.0           # velocity-row disturbance bound
    dist_realized_scale: float = 1.0      # realized draw relative to the bound
    include_model_error: bool = False     # widen W by a sampled model-error box
    plant: str = "model"                  # model | oracle
    integrator: str = "euler"             # oracle plant discretization
    seed: int = 0
    fit_seed: int = 0
    x_init: tuple = tuple(X_INIT_DEFAULT)
    solver: str = "clarabel"
    # the closed-loop cost sinks to ~theta^2 resolution, so run the cone
    # solves (and their reduced-accuracy fallback) well below the default
    # 1e-8 gap or late-run J values drown in solver noise
    solver_opts: dict = dataclasses.field(
        default_factory=lambda: {"tol_gap_abs": 1e-12, "tol_gap_rel": 1e-12,
                                 "tol_feas": 1e-10,
                                 "reduced_tol_gap_abs": 1e-10,
                                 "reduced_tol_gap_rel": 1e-10,
                                 "reduced_tol_feas": 1e-9})
    audit: bool = False
    cache_dir: str = ".cache/pvtol"
    outdir: str = "results"

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=1)

    @staticmethod
    def from_json(path):
        with open(path) as fh:
            d = json.load(fh)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        if "x_init" in d:
            d["x_init"] = tuple(float(v) for v in d["x_init"])
        return ExperimentConfig(**d)


def disturbance_vertices(halfwidth):
    """Corners of the velocity-row disturbance box as full-state rows."""
    h = float(halfwidth)
    verts = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            verts.append([0.0, s1 * h, s2 * h, 0.0])
    return np.array(verts)


def draw_disturbance(n_steps, halfwidth, seed):
    """Uniform velocity-row disturbance realization, one row per step."""
    rng = np.random.default_rng(seed)
    W = np.zeros((n_steps, 4))
    W[:, 1:3] = rng.uniform(-halfwidth, halfwidth, size=(n_steps, 2))
    return W


def cached_model(cfg: ExperimentConfig) -> DcModel:
    os.makedirs(cfg.cache_dir, exist_ok=True)
    path = os.path.join(cfg.cache_dir,
                        f"model_{cfg.kind}_seed{cfg.fit_seed}_d{cfg.delta}.json")
    if os.path.exists(path):
        return DcModel.load(path)
    data_path = os.path.join(cfg.cache_dir, f"accel_seed{cfg.fit_seed}.csv")
    Z, Y = make_dataset(seed=cfg.fit_seed, cache_path=data_path)
    model = fit_pvtol_model(cfg.kind, Z, Y, delta=cfg.delta, seed=cfg.fit_seed)
    model.save(path)
    return model


def cached_terminal(cfg: ExperimentConfig, model) -> TerminalIngredients:
    os.makedirs(cfg.cache_dir, exist_ok=True)
    path = os.path.join(
        cfg.cache_dir,
        f"terminal_{cfg.kind}_seed{cfg.fit_seed}_d{cfg.delta}_{cfg.integrator}.json")
    if os.path.exists(path):
        return TerminalIngredients.load(path)
    plant = PvtolPlant(cfg.delta, method=cfg.integrator)
    ing = pvtol_terminal(model, plant=plant)
    ing.save(path)
    return ing


def build_mpc_config(cfg: ExperimentConfig, model,
                     plant_fn=None) -> MpcConfig:
    """Translate an experiment description into the controller's config."""
    x_ref, u_ref = model_reference(model)
    W_vertices = None
    if cfg.dist_halfwidth > 0:
        W_vertices = disturbance_vertices(cfg.dist_halfwidth)
    eps = None
    if cfg.include_model_error:
        if plant_fn is None:
            plant_fn = PvtolPlant(cfg.delta, method=cfg.integrator).f
        eps = modelling_error_box(model, plant_fn, X_LO, X_HI, U_LO, U_HI,
                                  seed=cfg.seed)
    return MpcConfig(
        N=cfg.N, delta=cfg.delta, Q=Q_COST, R=R_COST,
        x_ref=x_ref, u_ref=u_ref,
        x_lo=X_LO, x_hi=X_HI, u_lo=U_LO, u_hi=U_HI,
        tube=TubeParam(cfg.tube, 4),
        W_vertices=W_vertices, eps=eps,
        tolerance=cfg.tolerance, max_iters=cfg.max_iters, rho=cfg.rho,
        tube_reg=cfg.tube_reg,
        solver=cfg.solver, solver_opts=dict(cfg.solver_opts))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:
        raise ExperimentError(name, e) from e


def _finite_max(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(max(vals)) if vals else None


def run_experiment(cfg: ExperimentConfig, model=None, terminal=None,
                   verbose=False):
    """Fit (or load), design the terminal set, run the loop, write reports.

    Returns a summary dict; the full per-iteration log lands in
    {outdir}/{name}_log.csv and a plain-text digest in {name}_summary.txt.
    Stage failures raise ExperimentError naming the stage.
    """
    if model is None:
        model = _stage("fit", cached_model, cfg)
    if terminal is None:
        terminal = _stage("terminal", cached_terminal, cfg, model)
    mpc = _stage("mpc-setup", build_mpc_config, cfg, model)

    if cfg.plant == "oracle":
        plant_fn = PvtolPlant(cfg.delta, method=cfg.integrator).f
    elif cfg.plant == "model":
        plant_fn = model.f
    else:
        raise ExperimentError("mpc-setup",
                              ValueError(f"unknown plant {cfg.plant!r}"))
    disturbance = None
    if cfg.dist_halfwidth > 0 and cfg.dist_realized_scale > 0:
        disturbance = draw_disturbance(
            cfg.n_steps, cfg.dist_halfwidth * cfg.dist_realized_scale,
            cfg.seed)

    os.makedirs(cfg.outdir, exist_ok=True)
    log_path = os.path.join(cfg.outdir, f"{cfg.name}_log.csv")
    t0 = time.perf_counter()
    log = _stage("closed-loop", run_controller, mpc, model, terminal,
                 np.asarray(cfg.x_init, float), cfg.n_steps,
                 plant=plant_fn, disturbance=disturbance,
                 log_path=log_path, audit=cfg.audit)
    wall = time.perf_counter() - t0

    per_step = log.per_step()
    J_trace = [row["J"] for row in per_step]
    solve_times = [row["solve_time"] for row in log.rows]
    x_final = log.x_hist[-1]
    final_err = float(np.linalg.norm(x_final - mpc.x_ref))
    summary = {
        "name": cfg.name, "kind": cfg.kind, "tube": cfg.tube,
        "N": cfg.N, "n_steps": cfg.n_steps, "max_iters": cfg.max_iters,
        "plant": cfg.plant, "seed": cfg.seed,
        "final_error": final_err,
        "J_first": float(J_trace[0]), "J_last": float(J_trace[-1]),
        "solve_time_mean": float(np.mean(solve_times)),
        "solve_time_std": float(np.std(solve_times)),
        "iterations_total": len(log.rows),
        "wall_seconds": wall,
        "n_events": len(log.events),
        "events_recovered": all(e["recovered"] for e in log.events),
        "max_relax_violation": _finite_max(
            row["relax_violation"] for row in log.rows) if cfg.audit
        else None,
        "fit_report": model.fit_report,
        "gamma_hat": terminal.gamma_hat,
        "log_path": log_path,
    }
    sum_path = os.path.join(cfg.outdir, f"{cfg.name}_summary.txt")
    with open(sum_path, "w") as fh:
        fh.write(f"experiment {cfg.name}: {cfg.kind} model, {cfg.tube} tube, "
                 f"N={cfg.N}, plant={cfg.plant}\n")
        fh.write(f"final tracking error   {final_err:.6e}\n")
        fh.write(f"objective trace        {J_trace[0]:.6e} -> "
                 f"{J_trace[-1]:.6e} over {cfg.n_steps} steps\n")
        fh.write(f"iteration solve time   {summary['solve_time_mean']:.4f} s "
                 f"(std {summary['solve_time_std']:.4f}, "
                 f"{len(solve_times)} solves)\n")
        fh.write(f"recovery events        {len(log.events)}"
                 + ("" if not log.events else
                    f" (all recovered: {summary['events_recovered']})") + "\n")
        if summary["max_relax_violation"] is not None:
            fh.write(f"relaxation audit max   "
                     f"{summary['max_relax_violation']:.3e}\n")
        fh.write(f"raw log                {log_path}\n")
    summary["summary_path"] = sum_path
    with open(os.path.join(cfg.outdir, f"{cfg.name}_summary.json"),
              "w") as fh:
        json.dump(summary, fh, indent=1)
    if verbose:
        with open(sum_path) as fh:
            print(fh.read())
    return summary, log


# ---------------------------------------------------------------------------
# timing sweep
# ---------------------------------------------------------------------------

def timing_sweep(kinds=("poly", "net", "rbf"), N_list=(10, 20, 30, 40, 50),
                 n_steps=10, base: ExperimentConfig | None = None,
                 out_path=None, verbose=False):
    """Per-iteration solve time versus horizon length for each model family.

    Runs a short undisturbed loop at each horizon and reports mean/stddev
    solve time plus the Spearman rank correlation between horizon and the
    individual iteration times.  Returns (rows, corr) where rows is a list
    of dicts and corr maps kind -> correlation.
    """
    from scipy.stats import spearmanr

    base = base or ExperimentConfig()
    rows = []
    corr = {}
    for kind in kinds:
        samples_N = []
        samples_t = []
        for N in N_list:
            cfg = dataclasses.replace(
                base, name=f"sweep_{kind}_N{N}", kind=kind, N=int(N),
                n_steps=n_steps, dist_halfwidth=0.0, audit=False)
            _, log = run_experiment(cfg)
            times = [row["solve_time"] for row in log.rows]
            rows.append({"kind": kind, "N": int(N),
                         "solve_time_mean": float(np.mean(times)),
                         "solve_time_std": float(np.std(times)),
                         "n_solves": len(times)})
            samples_N += [int(N)] * len(times)
            samples_t += times
            if verbose:
                print(f"{kind:>4} N={N:<3} mean {np.mean(times):.4f}s "
                      f"std {np.std(times):.4f}s")
        corr[kind] = float(spearmanr(samples_N, samples_t).statistic)
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w") as fh:
            fh.write("kind,N,solve_time_mean,solve_time_std,n_solves\n")
            for r in rows:
                fh.write(f"{r['kind']},{r['N']},{r['solve_time_mean']:.6f},"
                         f"{r['solve_time_std']:.6f},{r['n_solves']}\n")
    return rows, corr
