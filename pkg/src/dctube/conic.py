"""Declarative cone-program builder with pluggable numerical backends.

A ConicProblem is a flat decision vector z plus four constraint sections, kept
in the order expected by conic interior-point/splitting solvers:

    equalities        A_eq z + c_eq = 0
    nonnegative rows  A_in z + c_in <= 0
    second-order      ||A_v z + c_v|| <= a^T z + d     (one block per call)
    semidefinite      C_0 + sum_i z_i K_i >= 0         (one block per call)

Linear objectives only; quadratic costs go through `add_sq_epigraph` so the
backend interface stays purely conic.  Backends: Clarabel (interior point,
default) and SCS (first-order splitting, looser tolerances).

Rows are accumulated as COO triplets so large problems (the tube-MPC
subproblems have ~1e5 rows) assemble in milliseconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

Terms = Sequence[tuple["Var", np.ndarray]]


class Var:
    """A contiguous slice of the flat decision vector."""

    def __init__(self, offset: int, size: int, name: str = ""):
        self.offset = offset
        self.size = size
        self.name = name

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)

    def __repr__(self):
        return f"Var({self.name or self.offset}, size={self.size})"


class SymVar(Var):
    """Symmetric n x n matrix variable stored as its upper triangle.

    Free entries follow svec order (upper triangle, column-major) but are
    unscaled; `Solution.value` rebuilds the full matrix.
    """

    def __init__(self, offset: int, n: int, name: str = ""):
        super().__init__(offset, n * (n + 1) // 2, name)
        self.n = n

    def full_from_flat(self, flat: np.ndarray) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        for k, (i, j) in enumerate(tri_indices(self.n)):
            M[i, j] = flat[k]
            M[j, i] = flat[k]
        return M

    def basis_matrices(self) -> np.ndarray:
        """E_k with M = sum_k flat_k E_k (ones at (i,j) and (j,i))."""
        E = np.zeros((self.size, self.n, self.n))
        for k, (i, j) in enumerate(tri_indices(self.n)):
            E[k, i, j] = 1.0
            E[k, j, i] = 1.0
        return E


def tri_indices(n: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs in svec (column-major) order."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization: off-diagonals times sqrt(2)."""
    n = M.shape[0]
    out = np.empty(n * (n + 1) // 2)
    r2 = np.sqrt(2.0)
    for k, (i, j) in enumerate(tri_indices(n)):
        out[k] = M[i, j] * (1.0 if i == j else r2)
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of svec."""
    M = np.zeros((n, n))
    r2 = np.sqrt(2.0)
    for k, (i, j) in enumerate(tri_indices(n)):
        M[i, j] = v[k] if i == j else v[k] / r2
        M[j, i] = M[i, j]
    return M


def norm_factor(Q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Factor U with ||U x||^2 = x^T Q x for symmetric PSD Q.

    Cholesky when positive definite, eigenvalue square root (clipped at zero)
    otherwise, so weighted norms accept semidefinite weights.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    try:
        return np.linalg.cholesky(Q).T
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        if w.min() < -tol * max(1.0, abs(w.max())):
            raise ValueError("weight matrix is not PSD")
        w = np.clip(w, 0.0, None)
        return (V * np.sqrt(w)) @ V.T


@dataclass
class Solution:
    status: str                      # optimal | infeasible | unbounded | numerical_failure
    obj: float
    x: np.ndarray | None
    solve_time: float
    solver: str
    status_detail: str = ""
    reduced_accuracy: bool = False
    info: dict = field(default_factory=dict)

    def value(self, var: Var):
        if self.x is None:
            return None
        flat = self.x[var.offset:var.offset + var.size]
        if isinstance(var, SymVar):
            return var.full_from_flat(flat)
        return flat.copy()


class _Section:
    """Triplet buffer for one row section.

    Stored rows mean `A z + const (op) 0`; the compiled conic slack is
    s = b - A z with b = -const, so SOC/PSD callers (whose slack must equal
    the expression itself, not its negation) negate before storing.
    """

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.const: list[np.ndarray] = []
        self.n_rows = 0

    def add(self, rows, cols, vals, const):
        const = np.atleast_1d(np.asarray(const, dtype=float))
        m = const.shape[0]
        rows = np.asarray(rows, dtype=np.int64) + self.n_rows
        self.rows.append(rows)
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))
        self.const.append(const)
        self.n_rows += m
        return m

    def matrix(self, n_vars: int) -> tuple[sp.csc_matrix, np.ndarray]:
        if self.n_rows == 0:
            return sp.csc_matrix((0, n_vars)), np.zeros(0)
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, np.int64)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, np.int64)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_rows, n_vars))
        return A.tocsc(), np.concatenate(self.const)


def _terms_to_triplets(terms: Terms, m: int):
    """Dense/sparse (m, var.size) blocks -> global COO triplets."""
    rows_l, cols_l, vals_l = [], [], []
    for var, M in terms:
        if sp.issparse(M):
            M = M.tocoo()
            rows_l.append(M.row)
            cols_l.append(M.col + var.offset)
            vals_l.append(M.data)
        else:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.shape != (m, var.size):
                raise ValueError(
                    f"term for {var!r} has shape {M.shape}, expected {(m, var.size)}")
            r, c = np.nonzero(M)
            rows_l.append(r)
            cols_l.append(c + var.offset)
            vals_l.append(M[r, c])
    if not rows_l:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(rows_l), np.concatenate(cols_l), np.concatenate(vals_l)


class ConicProblem:
    """Cone program under construction.  See module docstring for the form."""

    def __init__(self):
        self.n_vars = 0
        self._var_names: list[str] = []
        self._eq = _Section()
        self._ineq = _Section()
        self._soc = _Section()
        self._soc_dims: list[int] = []
        self._psd = _Section()
        self._psd_dims: list[int] = []
        self._c_cols: list[np.ndarray] = []
        self._c_vals: list[np.ndarray] = []
        self.obj_const = 0.0

    # -- variables ---------------------------------------------------------

    def add_var(self, size: int = 1, name: str = "") -> Var:
        v = Var(self.n_vars, size, name)
        self.n_vars += size
        self._var_names.append(name)
        return v

    def add_sym_var(self, n: int, name: str = "") -> SymVar:
        v = SymVar(self.n_vars, n, name)
        self.n_vars += v.size
        self._var_names.append(name)
        return v

    # -- constraints -------------------------------------------------------

    def add_eq_triplets(self, rows, cols, vals, const):
        """sum A z + const = 0 with COO triplets over global indices."""
        self._eq.add(rows, cols, vals, const)

    def add_ineq_triplets(self, rows, cols, vals, const):
        """sum A z + const <= 0 with COO triplets over global indices."""
        self._ineq.add(rows, cols, vals, const)

    def add_eq(self, terms: Terms, const):
        const = np.atleast_1d(np.asarray(const, dtype=float))
        r, c, v = _terms_to_triplets(terms, const.shape[0])
        self._eq.add(r, c, v, const)

    def add_ineq(self, terms: Terms, const):
        const = np.atleast_1d(np.asarray(const, dtype=float))
        r, c, v = _terms_to_triplets(terms, const.shape[0])
        self._ineq.add(r, c, v, const)

    def add_soc(self, vec_terms: Terms, vec_const, bound_terms: Terms, bound_const: float):
        """|| sum M z + vec_const ||_2 <= sum a^T z + bound_const."""
        vec_const = np.atleast_1d(np.asarray(vec_const, dtype=float))
        m = vec_const.shape[0]
        br, bc, bv = _terms_to_triplets(bound_terms, 1)
        vr, vc, vv = _terms_to_triplets(vec_terms, m)
        rows = np.concatenate([br, vr + 1])
        cols = np.concatenate([bc, vc])
        vals = np.concatenate([bv, vv])
        const = np.concatenate([[float(bound_const)], vec_const])
        self._soc.add(rows, cols, -vals, -const)   # slack = +expression
        self._soc_dims.append(m + 1)

    def add_weighted_norm(self, weight_factor: np.ndarray, vec_terms: Terms,
                          vec_const, bound_terms: Terms, bound_const: float):
        """||U (affine vector)|| <= affine scalar, U from `norm_factor`."""
        U = np.atleast_2d(weight_factor)
        vec_const = np.atleast_1d(np.asarray(vec_const, dtype=float))
        terms = [(var, U @ np.atleast_2d(M)) for var, M in vec_terms]
        self.add_soc(terms, U @ vec_const, bound_terms, bound_const)

    def add_sq_epigraph(self, vec_terms: Terms, vec_const, bound_terms: Terms,
                        bound_const: float):
        """sum (affine vector)^2 <= affine scalar  via  ||(2w, s-1)|| <= s+1."""
        vec_const = np.atleast_1d(np.asarray(vec_const, dtype=float))
        m = vec_const.shape[0]
        top = [(var, 2.0 * np.atleast_2d(M)) for var, M in vec_terms]
        # last vector row: s - 1  (affine bound expression shifted)
        br, bc, bv = _terms_to_triplets(bound_terms, 1)
        vr, vc, vv = _terms_to_triplets(top, m)
        rows = np.concatenate([br, vr + 1, br + 1 + m])
        cols = np.concatenate([bc, vc, bc])
        vals = np.concatenate([bv, vv, bv])
        const = np.concatenate([[bound_const + 1.0], 2.0 * vec_const,
                                [bound_const - 1.0]])
        self._soc.add(rows, cols, -vals, -const)   # slack = +expression
        self._soc_dims.append(m + 2)

    def add_psd(self, terms: Sequence[tuple[Var, np.ndarray]], const: np.ndarray):
        """C0 + sum_i z_i K_i >= 0; K has shape (var.size, n, n)."""
        C0 = np.asarray(const, dtype=float)
        n = C0.shape[0]
        d = n * (n + 1) // 2
        pairs = tri_indices(n)
        r2 = np.sqrt(2.0)
        scale = np.array([1.0 if i == j else r2 for i, j in pairs])
        ii = np.array([p[0] for p in pairs])
        jj = np.array([p[1] for p in pairs])
        rows_l, cols_l, vals_l = [], [], []
        for var, K in terms:
            K = np.asarray(K, dtype=float)
            if K.shape != (var.size, n, n):
                raise ValueError(
                    f"PSD coefficient for {var!r} has shape {K.shape}, "
                    f"expected {(var.size, n, n)}")
            block = K[:, ii, jj] * scale          # (size, d)
            r, c = np.nonzero(block.T)            # rows = svec index
            rows_l.append(r)
            cols_l.append(c + var.offset)
            vals_l.append(block.T[r, c])
        rows = np.concatenate(rows_l) if rows_l else np.zeros(0, np.int64)
        cols = np.concatenate(cols_l) if cols_l else np.zeros(0, np.int64)
        vals = np.concatenate(vals_l) if vals_l else np.zeros(0)
        self._psd.add(rows, cols, -vals, -(C0[ii, jj] * scale))  # slack = svec
        self._psd_dims.append(n)

    def add_psd_from_fn(self, variables: Sequence[Var],
                        fn: Callable[..., np.ndarray]):
        """Build a PSD constraint by probing an affine matrix-valued function.

        `fn` receives one concrete value per variable (full matrices for
        SymVar, vectors otherwise) and must be affine in them.
        """
        def zero_val(v):
            return np.zeros((v.n, v.n)) if isinstance(v, SymVar) else np.zeros(v.size)

        zeros = [zero_val(v) for v in variables]
        C0 = np.asarray(fn(*zeros), dtype=float)
        terms = []
        for vi, var in enumerate(variables):
            if isinstance(var, SymVar):
                basis = var.basis_matrices()
            else:
                basis = np.eye(var.size)
            K = np.empty((var.size, C0.shape[0], C0.shape[1]))
            for k in range(var.size):
                vals = list(zeros)
                vals[vi] = basis[k]
                K[k] = np.asarray(fn(*vals), dtype=float) - C0
            terms.append((var, K))
        self.add_psd(terms, C0)

    # -- objective -----------------------------------------------------------

    def set_objective(self, terms: Terms, const: float = 0.0):
        """Minimize sum a^T z + const."""
        self._c_cols, self._c_vals = [], []
        for var, a in terms:
            a = np.asarray(a, dtype=float).reshape(-1)
            if a.shape[0] != var.size:
                raise ValueError("objective coefficient size mismatch")
            self._c_cols.append(var.indices)
            self._c_vals.append(a)
        self.obj_const = float(const)

    # -- compile and solve ---------------------------------------------------

    def _compile(self):
        n = self.n_vars
        A_eq, c_eq = self._eq.matrix(n)
        A_in, c_in = self._ineq.matrix(n)
        A_soc, c_soc = self._soc.matrix(n)
        A_psd, c_psd = self._psd.matrix(n)
        A = sp.vstack([A_eq, A_in, A_soc, A_psd], format="csc")
        b = -np.concatenate([c_eq, c_in, c_soc, c_psd])
        c = np.zeros(n)
        for cols, vals in zip(self._c_cols, self._c_vals):
            c[cols] += vals
        return c, A, b

    @property
    def n_rows(self) -> int:
        return (self._eq.n_rows + self._ineq.n_rows + self._soc.n_rows
                + self._psd.n_rows)

    def solve(self, backend: str = "clarabel", **options) -> Solution:
        c, A, b = self._compile()
        if backend == "clarabel":
            return _solve_clarabel(c, A, b, self._eq.n_rows, self._ineq.n_rows,
                                   self._soc_dims, self._psd_dims,
                                   self.obj_const, options)
        if backend == "scs":
            return _solve_scs(c, A, b, self._eq.n_rows, self._ineq.n_rows,
                              self._soc_dims, self._psd_dims,
                              self.obj_const, options)
        raise ValueError(f"unknown backend {backend!r}")


def max_cone_violation(x, A, b, n_eq, n_in, soc_dims, psd_dims):
    """Worst constraint violation of a candidate point, section by section."""
    s = b - A @ x
    worst = 0.0
    pos = 0
    if n_eq:
        worst = max(worst, float(np.abs(s[:n_eq]).max()))
        pos = n_eq
    if n_in:
        worst = max(worst, float(np.maximum(-s[pos:pos + n_in], 0.0).max()))
        pos += n_in
    for d in soc_dims:
        blk = s[pos:pos + d]
        worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        pos += d
    for d in psd_dims:
        m = d * (d + 1) // 2
        M = smat(s[pos:pos + m], d)
        worst = max(worst, float(-np.linalg.eigvalsh(M).min()))
        pos += m
    return worst


def _solve_clarabel(c, A, b, n_eq, n_in, soc_dims, psd_dims, obj_const, options):
    import clarabel

    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_in:
        cones.append(clarabel.NonnegativeConeT(n_in))
    cones.extend(clarabel.SecondOrderConeT(d) for d in soc_dims)
    cones.extend(clarabel.PSDTriangleConeT(d) for d in psd_dims)

    settings = clarabel.DefaultSettings()
    settings.verbose = bool(options.get("verbose", False))
    for key in ("max_iter", "tol_gap_abs", "tol_gap_rel", "tol_feas",
                "tol_ktratio", "reduced_tol_gap_abs", "reduced_tol_gap_rel",
                "reduced_tol_feas", "reduced_tol_ktratio", "time_limit"):
        if key in options:
            setattr(settings, key, options[key])

    P = sp.csc_matrix((len(c), len(c)))
    solver = clarabel.DefaultSolver(P, c, A, b, cones, settings)
    t0 = time.perf_counter()
    res = solver.solve()
    dt = time.perf_counter() - t0

    name = str(res.status)
    reduced = name.startswith("Almost")
    if name in ("Solved", "AlmostSolved"):
        status = "optimal"
    elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = "infeasible"
    elif name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = "unbounded"
    else:
        status = "numerical_failure"
    if status == "numerical_failure" and res.x is not None:
        # interior-point stalls near degenerate optima (e.g. objectives
        # driven to 0) still leave a usable iterate behind; accept it when
        # it verifiably satisfies every cone constraint
        cand = np.asarray(res.x)
        if cand.size == len(c) and np.all(np.isfinite(cand)):
            tol = 1e-6 * max(1.0, float(np.abs(b).max()) if len(b) else 1.0)
            if max_cone_violation(cand, A, b, n_eq, n_in,
                                  soc_dims, psd_dims) <= tol:
                status = "optimal"
                reduced = True
                name += "+feasible_iterate"
    x = np.asarray(res.x) if status == "optimal" else None
    obj = float(c @ x) + obj_const if status == "optimal" else np.nan
    return Solution(status, obj, x, dt, "clarabel", name, reduced,
                    {"iterations": res.iterations})


def _scs_psd_permutation(n: int) -> np.ndarray:
    """Map svec (upper, col-major) coordinates to SCS (lower, col-major)."""
    upper = tri_indices(n)
    lower = [(i, j) for j in range(n) for i in range(j, n)]
    pos = {pair: k for k, pair in enumerate(upper)}
    return np.array([pos[(j, i)] for i, j in lower], dtype=np.int64)


def _solve_scs(c, A, b, n_eq, n_in, soc_dims, psd_dims, obj_const, options):
    import scs

    if A.shape[0] == 0:
        # SCS needs at least one row; a vacuous 0 <= 1 changes nothing
        A = sp.csc_matrix(np.zeros((1, A.shape[1])))
        b = np.ones(1)
        n_in = 1

    # reorder each PSD block from Clarabel's upper-tri svec to SCS lower-tri
    if psd_dims:
        perm = np.arange(A.shape[0])
        base = n_eq + n_in + sum(soc_dims)
        for d in psd_dims:
            blk = d * (d + 1) // 2
            perm[base:base + blk] = base + _scs_psd_permutation(d)
            base += blk
        A = A[perm]
        b = b[perm]
    cone = {}
    if n_eq:
        cone["z"] = n_eq
    if n_in:
        cone["l"] = n_in
    if soc_dims:
        cone["q"] = list(soc_dims)
    if psd_dims:
        cone["s"] = list(psd_dims)
    data = {"A": sp.csc_matrix(A), "b": b, "c": c}
    kwargs = {"verbose": bool(options.get("verbose", False)),
              "eps_abs": options.get("eps_abs", 1e-6),
              "eps_rel": options.get("eps_rel", 1e-6)}
    if "max_iters" in options:
        kwargs["max_iters"] = options["max_iters"]
    solver = scs.SCS(data, cone, **kwargs)
    t0 = time.perf_counter()
    out = solver.solve()
    dt = time.perf_counter() - t0
    name = out["info"]["status"]
    low = name.lower()
    if "solved" in low and "infeasible" not in low:
        status = "optimal"
    elif "infeasible" in low:
        status = "infeasible"
    elif "unbounded" in low:
        status = "unbounded"
    else:
        status = "numerical_failure"
    x = np.asarray(out["x"]) if status == "optimal" else None
    obj = float(out["info"]["pobj"]) + obj_const if status == "optimal" else np.nan
    return Solution(status, obj, x, dt, "scs", name,
                    "inaccurate" in low, dict(out["info"]))
