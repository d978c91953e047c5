"""Difference-of-convex dynamics models.

A discrete-time model x+ = f(x, u) is stored as a known affine part plus a
learned nonlinear core with a difference-of-convex split:

    f(x, u) = L x + M u + c + S * (g(z) - h(z)),    z = (x[x_sel], u[u_sel])

where g and h are componentwise convex in z and S scatters the core outputs
into state rows.  Three interchangeable cores provide (g, h):

  * PolyCore  - polynomial Gram forms y(z)^T G y(z), y = monomials up to d;
                convexity is certified at fit time by an SDP on the
                Hessian Gram matrix (see dc_fit.split_dc_sdp).
  * NetCore   - ReLU network with nonnegative hidden-to-hidden weights; the
                unconstrained final layer is split by weight sign, so both
                halves are componentwise convex by composition rules.
  * RbfCore   - multiquadric radial basis expansion; each basis function
                sqrt(1 + rho^2 ||z - c||^2) is convex (a Euclidean norm of an
                affine map), so splitting the weights by sign gives g and h.

Everything evaluates batched over rows of Z; Jacobians are at a point.
"""

from __future__ import annotations

import itertools
import json

import numpy as np


# ---------------------------------------------------------------------------
# monomial basis
# ---------------------------------------------------------------------------

class MonomialBasis:
    """Monomials of n_vars variables up to total degree, graded-lex ordered."""

    def __init__(self, n_vars: int, degree: int):
        self.n_vars = n_vars
        self.degree = degree
        exps = [e for e in itertools.product(range(degree + 1), repeat=n_vars)
                if sum(e) <= degree]
        exps.sort(key=lambda e: (sum(e), tuple(-k for k in e)))
        self.exponents = np.array(exps, dtype=int)      # (b, n_vars)
        self.size = len(exps)
        self._index = {tuple(e): i for i, e in enumerate(exps)}

    def index(self, e) -> int:
        return self._index[tuple(int(k) for k in e)]

    def eval(self, Z: np.ndarray) -> np.ndarray:
        """Z (m, n_vars) -> y (m, b)."""
        Z = np.atleast_2d(Z)
        return np.prod(Z[:, None, :] ** self.exponents[None, :, :], axis=2)

    def diff_matrix(self, j: int) -> np.ndarray:
        """D_j with d y / d z_j = D_j y."""
        D = np.zeros((self.size, self.size))
        for p, e in enumerate(self.exponents):
            if e[j] > 0:
                e2 = e.copy()
                e2[j] -= 1
                D[p, self._index[tuple(e2)]] = e[j]
        return D

    def quadform_coeffs(self, M: np.ndarray):
        """Expand y^T M y into monomial coefficients.

        Returns (exponents (k, n_vars), coeffs (k,)) over the degree-2d basis.
        """
        agg: dict[tuple, float] = {}
        for p in range(self.size):
            for q in range(self.size):
                if M[p, q] == 0.0:
                    continue
                e = tuple(self.exponents[p] + self.exponents[q])
                agg[e] = agg.get(e, 0.0) + M[p, q]
        exps = np.array(list(agg.keys()), dtype=int)
        coeffs = np.array(list(agg.values()))
        return exps, coeffs


def _pow_interval(lo: float, hi: float, e: int):
    if e == 0:
        return 1.0, 1.0
    a, b = lo ** e, hi ** e
    low, high = min(a, b), max(a, b)
    if e % 2 == 0 and lo < 0.0 < hi:
        low = 0.0
    return low, high


def monomial_interval(e, lo, hi):
    """Range of prod z_i^{e_i} over the box [lo, hi]."""
    rl, rh = 1.0, 1.0
    for k in range(len(e)):
        pl, ph = _pow_interval(lo[k], hi[k], int(e[k]))
        cands = (rl * pl, rl * ph, rh * pl, rh * ph)
        rl, rh = min(cands), max(cands)
    return rl, rh


def poly_interval(exps, coeffs, lo, hi):
    """Interval bound of sum coeffs * z^exps over the box [lo, hi]."""
    total_lo, total_hi = 0.0, 0.0
    for e, c in zip(exps, coeffs):
        ml, mh = monomial_interval(e, lo, hi)
        a, b = c * ml, c * mh
        total_lo += min(a, b)
        total_hi += max(a, b)
    return total_lo, total_hi


# ---------------------------------------------------------------------------
# cores
# ---------------------------------------------------------------------------

class PolyCore:
    """g_i(z) = y(z)^T G_i y(z), h_i likewise; y = monomial vector."""

    kind = "poly"

    def __init__(self, basis: MonomialBasis, G: np.ndarray, H: np.ndarray,
                 cert_g=None, cert_h=None):
        self.basis = basis
        self.G = np.asarray(G, dtype=float)     # (n_out, b, b)
        self.H = np.asarray(H, dtype=float)
        # PSD Gram certificates of the Hessians over the tensor basis
        # {v_i (x) y}, one (n*b, n*b) matrix per output (see dc_fit)
        self.cert_g = None if cert_g is None else np.asarray(cert_g, float)
        self.cert_h = None if cert_h is None else np.asarray(cert_h, float)
        self.n_out = self.G.shape[0]
        self.n_in = basis.n_vars
        self._D = [basis.diff_matrix(j) for j in range(basis.n_vars)]

    def _eval(self, gram, Z):
        Y = self.basis.eval(Z)
        return np.einsum("mp,ipq,mq->mi", Y, gram, Y)

    def eval_g(self, Z):
        return self._eval(self.G, Z)

    def eval_h(self, Z):
        return self._eval(self.H, Z)

    def _jac(self, gram, z):
        y = self.basis.eval(z[None, :])[0]
        J = np.empty((self.n_out, self.n_in))
        for j, D in enumerate(self._D):
            Dy = D @ y
            J[:, j] = 2.0 * np.einsum("p,ipq,q->i", y, gram, Dy)
        return J

    def jac_g(self, z):
        return self._jac(self.G, z)

    def jac_h(self, z):
        return self._jac(self.H, z)

    def hessian_entry_gram(self, gram_i, j, k):
        """Gram matrix of the (j,k) Hessian entry of y^T gram_i y."""
        Dj, Dk = self._D[j], self._D[k]
        M = 2.0 * (Dk.T @ gram_i @ Dj + gram_i @ Dj @ Dk)
        return 0.5 * (M + M.T)

    def curvature_bound(self, lo, hi, which: str) -> np.ndarray:
        """mu_i >= lambda_max of the Hessian of (g or h)_i over the box.

        Gershgorin over interval bounds of each Hessian-entry polynomial;
        conservative but certified, which is what the online constraint
        relaxation needs.
        """
        gram = self.G if which == "g" else self.H
        n = self.n_in
        mu = np.empty(self.n_out)
        for i in range(self.n_out):
            ent_lo = np.zeros((n, n))
            ent_hi = np.zeros((n, n))
            for j in range(n):
                for k in range(j, n):
                    M = self.hessian_entry_gram(gram[i], j, k)
                    exps, coeffs = self.basis.quadform_coeffs(M)
                    a, b = poly_interval(exps, coeffs, lo, hi)
                    ent_lo[j, k] = ent_lo[k, j] = a
                    ent_hi[j, k] = ent_hi[k, j] = b
            rows = np.empty(n)
            for j in range(n):
                row = ent_hi[j, j]
                for k in range(n):
                    if k != j:
                        row += max(abs(ent_lo[j, k]), abs(ent_hi[j, k]))
                rows[j] = row
            mu[i] = max(rows.max(), 0.0)
        return mu

    def to_dict(self):
        d = {"kind": self.kind, "n_vars": self.basis.n_vars,
             "degree": self.basis.degree,
             "G": self.G.tolist(), "H": self.H.tolist()}
        if self.cert_g is not None:
            d["cert_g"] = self.cert_g.tolist()
            d["cert_h"] = self.cert_h.tolist()
        return d

    @staticmethod
    def from_dict(d):
        basis = MonomialBasis(d["n_vars"], d["degree"])
        cg = np.array(d["cert_g"]) if "cert_g" in d else None
        ch = np.array(d["cert_h"]) if "cert_h" in d else None
        return PolyCore(basis, np.array(d["G"]), np.array(d["H"]), cg, ch)


def relu(v):
    return np.maximum(v, 0.0)


def relu_deriv(v):
    # subgradient choice at 0 is 0
    return np.heaviside(v, 0.0)


class NetCore:
    """ReLU net, nonnegative hidden weights, final layer split by sign.

        a_1     = relu(Wx_0 z + b_0)
        a_{l+1} = relu(Wz_l a_l + Wx_l z + b_l)        Wz_l >= 0 elementwise
        out     = W a_last + Wx_f z + b_f              W unconstrained

    g = W_pos a_last + Wx_f z + b_f and h = W_neg a_last are componentwise
    convex: each a_l is convex (nonnegative combinations of convex functions
    through a convex nondecreasing relu stay convex) and W_pos, W_neg >= 0.
    """

    kind = "net"

    def __init__(self, hidden, final):
        # hidden: list of (Wz or None, Wx, b); final: (W, Wx_f, b_f)
        self.hidden = [(None if Wz is None else np.asarray(Wz, float),
                        np.asarray(Wx, float), np.asarray(b, float))
                       for Wz, Wx, b in hidden]
        W, Wx_f, b_f = final
        self.W = np.asarray(W, float)
        self.Wx_f = np.asarray(Wx_f, float)
        self.b_f = np.asarray(b_f, float)
        self.n_out = self.W.shape[0]
        self.n_in = self.hidden[0][1].shape[1]
        for Wz, _, _ in self.hidden:
            if Wz is not None and np.any(Wz < 0):
                raise ValueError("hidden-to-hidden weights must be >= 0")

    @property
    def W_pos(self):
        return np.maximum(self.W, 0.0)

    @property
    def W_neg(self):
        return np.maximum(-self.W, 0.0)

    def activations(self, Z):
        """Batched forward pass; returns list of hidden activations."""
        Z = np.atleast_2d(Z)
        acts = []
        a = None
        for Wz, Wx, b in self.hidden:
            pre = Z @ Wx.T + b
            if Wz is not None:
                pre = pre + a @ Wz.T
            a = relu(pre)
            acts.append(a)
        return acts

    def eval_g(self, Z):
        Z = np.atleast_2d(Z)
        a = self.activations(Z)[-1]
        return a @ self.W_pos.T + Z @ self.Wx_f.T + self.b_f

    def eval_h(self, Z):
        a = self.activations(Z)[-1]
        return a @ self.W_neg.T

    def _hidden_jacobian(self, z):
        J = None
        a = None
        for Wz, Wx, b in self.hidden:
            pre = Wx @ z + b
            if Wz is not None:
                pre = pre + Wz @ a
            d = relu_deriv(pre)
            J = d[:, None] * (Wx if Wz is None else (Wz @ J + Wx))
            a = relu(pre)
        return J

    def jac_g(self, z):
        return self.W_pos @ self._hidden_jacobian(z) + self.Wx_f

    def jac_h(self, z):
        return self.W_neg @ self._hidden_jacobian(z)

    def to_dict(self):
        return {"kind": self.kind,
                "hidden": [{"Wz": None if Wz is None else Wz.tolist(),
                            "Wx": Wx.tolist(), "b": b.tolist()}
                           for Wz, Wx, b in self.hidden],
                "W": self.W.tolist(), "Wx_f": self.Wx_f.tolist(),
                "b_f": self.b_f.tolist()}

    @staticmethod
    def from_dict(d):
        hidden = [(None if h["Wz"] is None else np.array(h["Wz"]),
                   np.array(h["Wx"]), np.array(h["b"])) for h in d["hidden"]]
        return NetCore(hidden, (np.array(d["W"]), np.array(d["Wx_f"]),
                                np.array(d["b_f"])))


class RbfCore:
    """f_i(z) = sum_j alpha_ij sqrt(1 + rho_j^2 ||z - c_j||^2) + const_i.

    Each basis function is ||(1, rho_j (z - c_j))||_2, convex; positive and
    negative weights go to g and h respectively (the constant sits in g).
    """

    kind = "rbf"

    def __init__(self, centers, rho, alpha, const):
        self.centers = np.asarray(centers, float)      # (m, n_in)
        self.rho = np.asarray(rho, float)              # (m,)
        self.alpha = np.asarray(alpha, float)          # (n_out, m)
        self.const = np.asarray(const, float)          # (n_out,)
        self.n_out, self.n_centers = self.alpha.shape
        self.n_in = self.centers.shape[1]

    def basis_values(self, Z):
        Z = np.atleast_2d(Z)
        d2 = np.sum((Z[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.sqrt(1.0 + self.rho[None, :] ** 2 * d2)

    def eval_g(self, Z):
        Phi = self.basis_values(Z)
        return Phi @ np.maximum(self.alpha, 0.0).T + self.const

    def eval_h(self, Z):
        Phi = self.basis_values(Z)
        return Phi @ np.maximum(-self.alpha, 0.0).T

    def _jac(self, alpha_part, z):
        diff = z[None, :] - self.centers                      # (m, n_in)
        phi = np.sqrt(1.0 + self.rho ** 2 * np.sum(diff ** 2, axis=1))
        dphi = (self.rho ** 2)[:, None] * diff / phi[:, None]  # (m, n_in)
        return alpha_part @ dphi

    def jac_g(self, z):
        return self._jac(np.maximum(self.alpha, 0.0), z)

    def jac_h(self, z):
        return self._jac(np.maximum(-self.alpha, 0.0), z)

    def to_dict(self):
        return {"kind": self.kind, "centers": self.centers.tolist(),
                "rho": self.rho.tolist(), "alpha": self.alpha.tolist(),
                "const": self.const.tolist()}

    @staticmethod
    def from_dict(d):
        return RbfCore(np.array(d["centers"]), np.array(d["rho"]),
                       np.array(d["alpha"]), np.array(d["const"]))


_CORE_KINDS = {"poly": PolyCore, "net": NetCore, "rbf": RbfCore}


def core_from_dict(d):
    return _CORE_KINDS[d["kind"]].from_dict(d)


# ---------------------------------------------------------------------------
# model wrapper
# ---------------------------------------------------------------------------

class DcModel:
    """Affine dynamics plus a scattered difference-of-convex core.

        f(x, u) = lin_A x + lin_B u + lin_c + scatter @ (g(z) - h(z))
        z = concat(x[x_sel], u[u_sel])

    `scatter` (n_x, n_out) must be elementwise >= 0 so the row-level DC split
    used by the tube constraints follows directly from the core's split.
    """

    def __init__(self, core, n_x, n_u, x_sel, u_sel, scatter,
                 lin_A, lin_B, lin_c, fit_report=None):
        self.core = core
        self.n_x = int(n_x)
        self.n_u = int(n_u)
        self.x_sel = np.asarray(x_sel, dtype=int)
        self.u_sel = np.asarray(u_sel, dtype=int)
        self.scatter = np.asarray(scatter, float)
        self.lin_A = np.asarray(lin_A, float)
        self.lin_B = np.asarray(lin_B, float)
        self.lin_c = np.asarray(lin_c, float)
        self.fit_report = fit_report or {}
        if np.any(self.scatter < 0):
            raise ValueError("scatter must be elementwise nonnegative")
        self.n_z = len(self.x_sel) + len(self.u_sel)
        if core.n_in != self.n_z:
            raise ValueError("core input size does not match selectors")
        # selector matrices z = Zx x + Zu u
        self.Zx = np.zeros((self.n_z, self.n_x))
        self.Zu = np.zeros((self.n_z, self.n_u))
        for i, j in enumerate(self.x_sel):
            self.Zx[i, j] = 1.0
        for i, j in enumerate(self.u_sel):
            self.Zu[len(self.x_sel) + i, j] = 1.0

    def core_input(self, x, u):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        return np.concatenate([x[:, self.x_sel], u[:, self.u_sel]], axis=1)

    def f(self, x, u):
        """Next state; batched over rows when given 2-D inputs."""
        single = np.ndim(x) == 1
        X = np.atleast_2d(x)
        U = np.atleast_2d(u)
        Z = np.concatenate([X[:, self.x_sel], U[:, self.u_sel]], axis=1)
        nl = self.core.eval_g(Z) - self.core.eval_h(Z)
        out = X @ self.lin_A.T + U @ self.lin_B.T + self.lin_c + nl @ self.scatter.T
        return out[0] if single else out

    def linearize(self, x, u):
        """Jacobian pair (A, B) of f at (x, u)."""
        z = np.concatenate([np.asarray(x)[self.x_sel],
                            np.asarray(u)[self.u_sel]])
        Jc = self.core.jac_g(z) - self.core.jac_h(z)
        A = self.lin_A + self.scatter @ Jc @ self.Zx
        B = self.lin_B + self.scatter @ Jc @ self.Zu
        return A, B

    def core_tangent(self, z0, which: str):
        """Value and Jacobian of the chosen convex part at anchor z0.

        The affine function v + J (z - z0) is a global under-estimator of the
        part, which is what the relaxed tube dynamics build on.
        """
        if which == "g":
            return self.core.eval_g(z0[None, :])[0], self.core.jac_g(z0)
        return self.core.eval_h(z0[None, :])[0], self.core.jac_h(z0)

    def to_dict(self):
        return {"format": "dctube-model-v1",
                "core": self.core.to_dict(),
                "n_x": self.n_x, "n_u": self.n_u,
                "x_sel": self.x_sel.tolist(), "u_sel": self.u_sel.tolist(),
                "scatter": self.scatter.tolist(),
                "lin_A": self.lin_A.tolist(), "lin_B": self.lin_B.tolist(),
                "lin_c": self.lin_c.tolist(),
                "fit_report": self.fit_report}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @staticmethod
    def from_dict(d):
        return DcModel(core_from_dict(d["core"]), d["n_x"], d["n_u"],
                       d["x_sel"], d["u_sel"], np.array(d["scatter"]),
                       np.array(d["lin_A"]), np.array(d["lin_B"]),
                       np.array(d["lin_c"]), d.get("fit_report"))

    @staticmethod
    def load(path):
        with open(path) as fh:
            return DcModel.from_dict(json.load(fh))
