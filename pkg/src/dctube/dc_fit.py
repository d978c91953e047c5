"""Fitting difference-of-convex cores from sampled dynamics data.

The polynomial route fits a Gram-form polynomial by least squares and then
splits it into certified-convex halves with a small SDP on Hessian Gram
matrices.  The net and RBF routes train by minibatch RMSprop (implemented
here; numpy only) with the structural constraints that make the DC split
free: nonnegative hidden weights for the net, sign-split output weights for
both.
"""

from __future__ import annotations

import time

import numpy as np

from .conic import ConicProblem
from .dc_core import MonomialBasis, NetCore, PolyCore, RbfCore, relu, relu_deriv


class DataError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


def sample_box(lo, hi, n, rng):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return rng.uniform(lo, hi, size=(n, len(lo)))


def sample_dynamics(fn, lo, hi, n_samples, seed=0):
    """Uniform samples of z in a box and targets fn(z) (batched oracle)."""
    rng = np.random.default_rng(seed)
    Z = sample_box(lo, hi, n_samples, rng)
    Y = np.asarray(fn(Z), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise DataError("non-finite values in sampled dynamics data")
    return Z, Y


def train_test_split(Z, Y, test_frac=0.01, seed=0):
    rng = np.random.default_rng(seed)
    n = Z.shape[0]
    idx = rng.permutation(n)
    n_test = max(1, int(round(test_frac * n)))
    te, tr = idx[:n_test], idx[n_test:]
    return Z[tr], Y[tr], Z[te], Y[te]


def report_mae(eval_fn, Z_test, Y_test):
    err = np.abs(np.asarray(eval_fn(Z_test)) - Y_test)
    per_output = err.mean(axis=0)
    return {"mae": [float(v) for v in per_output],
            "mae_mean": float(per_output.mean()),
            "n_test": int(Z_test.shape[0])}


# ---------------------------------------------------------------------------
# polynomial Gram fit + convexity split
# ---------------------------------------------------------------------------

def fit_gram_ls(basis: MonomialBasis, Z, Y):
    """Least-squares Gram matrices F_i with y^T F_i y ~= Y[:, i].

    The Gram parametrization is redundant (rank deficient by the dimension
    of the quadratic-form kernel); lstsq returns the least-norm solution,
    which is all downstream code needs since the split SDP re-gauges F.
    """
    Yb = basis.eval(Z)                       # (m, b)
    b = basis.size
    pairs = [(p, q) for p in range(b) for q in range(p, b)]
    S = np.empty((Z.shape[0], len(pairs)))
    for col, (p, q) in enumerate(pairs):
        S[:, col] = Yb[:, p] * Yb[:, q] * (1.0 if p == q else 2.0)
    coef, _, rank, _ = np.linalg.lstsq(S, Y, rcond=None)
    n_out = Y.shape[1]
    F = np.zeros((n_out, b, b))
    for col, (p, q) in enumerate(pairs):
        F[:, p, q] = coef[col]
        F[:, q, p] = coef[col]
    return F, {"rank": int(rank), "n_params": len(pairs),
               "rank_deficient": bool(rank < len(pairs))}


def hessian_gram(basis: MonomialBasis, Q: np.ndarray, D=None) -> np.ndarray:
    """Block matrix certifying convexity of y^T Q y when PSD.

    With y the monomial vector and D_j the differentiation operators,
    v^T Hess(y^T Q y)(z) v = (v (x) y(z))^T Gm (v (x) y(z)) for the returned
    Gm, so Gm >= 0 implies the Hessian is PSD everywhere.
    """
    n, b = basis.n_vars, basis.size
    if D is None:
        D = [basis.diff_matrix(j) for j in range(n)]
    Gm = np.zeros((n * b, n * b))
    for j in range(n):
        for k in range(n):
            M = 2.0 * (D[k].T @ Q @ D[j] + Q @ D[j] @ D[k])
            Gm[j * b:(j + 1) * b, k * b:(k + 1) * b] = 0.5 * (M + M.T)
    return Gm


def split_dc_sdp(basis: MonomialBasis, F: np.ndarray, sigma: float = 0.0,
                 verbose: bool = False):
    """Split fitted Grams F_i into convex-certified pairs (G_i, H_i).

    Per output row, solve an SDP in (G, F', Cg, Ch) where F' is a re-gauged
    Gram of the same polynomial as F_i and Cg, Ch are PSD certificate
    matrices over the tensor basis {v_i (x) monomials up to degree d-1}
    satisfying, per Hessian entry (i, j),

        d^2(y^T G y)/dz_i dz_j == (block i,j quadratic form of Cg)  (coeffs)

    and likewise for G - F' with Ch.  Cg >= sigma*I then certifies convexity
    of g = y^T G y (the certificate IS a PSD Gram of v^T Hess v), and the
    same for h = y^T (G - F') y.  Note the raw block matrix assembled from
    the differentiation operators cannot itself be PSD for targets of full
    degree 2d (its diagonal vanishes identically on top-degree monomial
    coordinates), which is why the certificate carries its own Gram gauge.

    Among feasible splits, minimizing tr Cg + tr Ch pins down a canonical
    least-total-curvature decomposition.

    Returns (G, H, info); info carries the certificates embedded into the
    full n*b tensor basis (zero rows on top-degree coordinates).
    """
    F = np.asarray(F, float)
    if F.ndim == 2:
        F = F[None]
    n_out, b, _ = F.shape
    n = basis.n_vars
    d = basis.degree
    D = [basis.diff_matrix(j) for j in range(n)]
    ext = MonomialBasis(n, 2 * d)
    tbasis = MonomialBasis(n, d - 1)      # certificate monomials
    bt = tbasis.size
    # graded order means the truncated basis is a prefix of the full one
    assert np.array_equal(tbasis.exponents, basis.exponents[:bt])

    from .conic import tri_indices

    def poly_vec(small_basis, M):
        exps, coeffs = small_basis.quadform_coeffs(M)
        v = np.zeros(ext.size)
        for e, c in zip(exps, coeffs):
            v[ext.index(tuple(e))] += c
        return v

    def hess_entry(Q, i, j):
        M = D[j].T @ Q @ D[i] + D[i].T @ Q @ D[j] \
            + Q @ D[i] @ D[j] + (D[i] @ D[j]).T @ Q
        return M

    # linear maps: flat sym entries of G -> Hessian entry coefficients
    tri_b = tri_indices(b)
    E_G = np.zeros((len(tri_b), b, b))
    for k2, (p, q) in enumerate(tri_b):
        E_G[k2, p, q] = 1.0
        E_G[k2, q, p] = 1.0
    nbt = n * bt
    tri_c = tri_indices(nbt)
    L = {}
    R = {}
    for i in range(n):
        for j in range(i, n):
            L[i, j] = np.stack(
                [poly_vec(basis, hess_entry(Ek, i, j)) for Ek in E_G], axis=1)
            Rk = np.zeros((ext.size, len(tri_c)))
            for k2, (p, q) in enumerate(tri_c):
                Ek = np.zeros((nbt, nbt))
                Ek[p, q] = 1.0
                Ek[q, p] = 1.0
                blk = Ek[i * bt:(i + 1) * bt, j * bt:(j + 1) * bt]
                if np.any(blk):
                    Rk[:, k2] = poly_vec(tbasis, blk)
            R[i, j] = Rk

    trace_sel = np.array([1.0 if p == q else 0.0 for p, q in tri_c])
    cert_basis = np.zeros((len(tri_c), nbt, nbt))
    for k2, (p, q) in enumerate(tri_c):
        cert_basis[k2, p, q] = 1.0
        cert_basis[k2, q, p] = 1.0

    def embed(cert):
        """Pad a truncated-basis certificate into the full n*b tensor basis."""
        full = np.zeros((n * b, n * b))
        for i in range(n):
            for j in range(n):
                full[i * b:i * b + bt, j * b:j * b + bt] = \
                    cert[i * bt:(i + 1) * bt, j * bt:(j + 1) * bt]
        return full

    G_out = np.zeros_like(F)
    H_out = np.zeros_like(F)
    info = {"min_eig_g": [], "min_eig_h": [], "status": [],
            "cert_g": [], "cert_h": []}
    for iout in range(n_out):
        prob = ConicProblem()
        Gv = prob.add_sym_var(b, "G")
        Fv = prob.add_sym_var(b, "Fp")
        Cg = prob.add_sym_var(nbt, "Cg")
        Ch = prob.add_sym_var(nbt, "Ch")
        # F' represents the same polynomial as the fitted F_i
        Cmap = np.stack([poly_vec(basis, Ek) for Ek in E_G], axis=1)
        f_coeffs = poly_vec(basis, F[iout])
        keep = np.abs(Cmap).max(axis=1) > 0
        prob.add_eq([(Fv, Cmap[keep])], -f_coeffs[keep])
        # Hessian entries match certificate blocks
        for i in range(n):
            for j in range(i, n):
                rows = (np.abs(L[i, j]).max(axis=1) > 0) \
                     | (np.abs(R[i, j]).max(axis=1) > 0)
                prob.add_eq([(Gv, L[i, j][rows]), (Cg, -R[i, j][rows])],
                            np.zeros(int(rows.sum())))
                prob.add_eq([(Gv, L[i, j][rows]), (Fv, -L[i, j][rows]),
                             (Ch, -R[i, j][rows])],
                            np.zeros(int(rows.sum())))
        prob.add_psd([(Cg, cert_basis)], -sigma * np.eye(nbt))
        prob.add_psd([(Ch, cert_basis)], -sigma * np.eye(nbt))
        prob.set_objective([(Cg, trace_sel), (Ch, trace_sel)])
        sol = prob.solve(verbose=verbose)
        if sol.status != "optimal":
            raise FitError(f"convexity split SDP failed for output {iout}: "
                           f"{sol.status} ({sol.status_detail})")
        G_out[iout] = sol.value(Gv)
        H_out[iout] = G_out[iout] - sol.value(Fv)
        cg = embed(sol.value(Cg))
        ch = embed(sol.value(Ch))
        info["cert_g"].append(cg)
        info["cert_h"].append(ch)
        info["min_eig_g"].append(float(np.linalg.eigvalsh(cg).min()))
        info["min_eig_h"].append(float(np.linalg.eigvalsh(ch).min()))
        info["status"].append(sol.status_detail)
    return G_out, H_out, info


def fit_poly_core(Z, Y, degree=3, sigma=0.0):
    """LS Gram fit of total degree 2*degree, then convexity-split SDP."""
    basis = MonomialBasis(Z.shape[1], degree)
    F, ls_info = fit_gram_ls(basis, Z, Y)
    G, H, split_info = split_dc_sdp(basis, F, sigma=sigma)
    core = PolyCore(basis, G, H, cert_g=np.stack(split_info.pop("cert_g")),
                    cert_h=np.stack(split_info.pop("cert_h")))
    # the split must not move the fitted polynomial
    probe = np.linspace(-1, 1, 7)
    Zp = np.stack(np.meshgrid(*[probe] * Z.shape[1]), -1).reshape(-1, Z.shape[1])
    Yb = basis.eval(Zp)
    want = np.einsum("mp,ipq,mq->mi", Yb, F, Yb)
    got = core.eval_g(Zp) - core.eval_h(Zp)
    gap = float(np.abs(want - got).max())
    if gap > 1e-5 * max(1.0, float(np.abs(want).max())):
        raise FitError(f"split changed the polynomial by {gap:.2e}")
    return core, {"ls": ls_info, "split": split_info, "split_gap": gap}


# ---------------------------------------------------------------------------
# minibatch RMSprop
# ---------------------------------------------------------------------------

class RmsProp:
    def __init__(self, params, lr=1e-3, decay=0.9, eps=1e-8):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.cache = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, g, c in zip(self.params, grads, self.cache):
            c *= self.decay
            c += (1.0 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(c) + self.eps)


def _minibatches(n, batch, rng):
    idx = rng.permutation(n)
    for s in range(0, n, batch):
        yield idx[s:s + batch]


# ---------------------------------------------------------------------------
# net training
# ---------------------------------------------------------------------------

def train_net_core(Z, Y, width=64, n_hidden_layers=1, epochs=200, batch=32,
                   lr=1e-3, seed=0, verbose=False):
    """Train a NetCore on (Z, Y) with MSE loss.

    Hidden-to-hidden weights are projected onto >= 0 after every step so the
    trained net is DC-splittable by construction.
    """
    rng = np.random.default_rng(seed)
    n_in, n_out = Z.shape[1], Y.shape[1]
    # (Wz, Wx, b) per hidden layer; Wz absent for the first
    params = []
    shapes = []
    for l in range(n_hidden_layers):
        if l > 0:
            params.append(rng.uniform(0, np.sqrt(2.0 / width),
                                      size=(width, width)))
            shapes.append(("Wz", l))
        fan_in = n_in if l == 0 else n_in + width
        params.append(rng.normal(scale=np.sqrt(2.0 / fan_in),
                                 size=(width, n_in)))
        shapes.append(("Wx", l))
        params.append(np.zeros(width))
        shapes.append(("b", l))
    params.append(rng.normal(scale=np.sqrt(1.0 / width), size=(n_out, width)))
    shapes.append(("W", None))
    params.append(np.zeros((n_out, n_in)))
    shapes.append(("Wxf", None))
    params.append(np.zeros(n_out))
    shapes.append(("bf", None))

    def unpack():
        hidden = []
        k = 0
        for l in range(n_hidden_layers):
            Wz = None
            if l > 0:
                Wz = params[k]; k += 1
            Wx = params[k]; k += 1
            b = params[k]; k += 1
            hidden.append((Wz, Wx, b))
        W, Wxf, bf = params[k], params[k + 1], params[k + 2]
        return hidden, (W, Wxf, bf)

    opt = RmsProp(params, lr=lr)
    n = Z.shape[0]
    history = []
    for epoch in range(epochs):
        ep_loss = 0.0
        for mb in _minibatches(n, batch, rng):
            zb, yb = Z[mb], Y[mb]
            hidden, (W, Wxf, bf) = unpack()
            # forward
            pres, acts = [], []
            a = None
            for Wz, Wx, bh in hidden:
                pre = zb @ Wx.T + bh
                if Wz is not None:
                    pre = pre + a @ Wz.T
                a = relu(pre)
                pres.append(pre)
                acts.append(a)
            out = a @ W.T + zb @ Wxf.T + bf
            err = out - yb
            m = zb.shape[0]
            ep_loss += float(np.sum(err ** 2))
            # backward
            grads = [None] * len(params)
            d_out = 2.0 * err / m
            k = len(params) - 3
            grads[k] = d_out.T @ acts[-1]          # W
            grads[k + 1] = d_out.T @ zb            # Wxf
            grads[k + 2] = d_out.sum(axis=0)       # bf
            da = d_out @ W
            k = 0
            layer_starts = []
            for l in range(n_hidden_layers):
                layer_starts.append(k)
                k += 2 if l == 0 else 3
            for l in range(n_hidden_layers - 1, -1, -1):
                dpre = da * relu_deriv(pres[l])
                k = layer_starts[l]
                if l > 0:
                    grads[k] = dpre.T @ acts[l - 1]   # Wz
                    k += 1
                grads[k] = dpre.T @ zb                # Wx
                grads[k + 1] = dpre.sum(axis=0)       # b
                if l > 0:
                    Wz = params[layer_starts[l]]
                    da = dpre @ Wz
            opt.step(grads)
            # projection keeps hidden-to-hidden weights nonnegative
            for (name, _), p in zip(shapes, params):
                if name == "Wz":
                    np.maximum(p, 0.0, out=p)
        history.append(ep_loss / n)
        if verbose and (epoch % 20 == 0 or epoch == epochs - 1):
            print(f"  epoch {epoch:4d}  mse {history[-1]:.5f}")
    hidden, final = unpack()
    return NetCore(hidden, final), {"mse_history": history[-5:],
                                    "epochs": epochs}


# ---------------------------------------------------------------------------
# RBF training
# ---------------------------------------------------------------------------

def _softplus(s):
    return np.logaddexp(0.0, s)


def _softplus_deriv(s):
    return 1.0 / (1.0 + np.exp(-s))


def init_rbf_centers(Z, n_centers, rng):
    """Grid centers when the sample box is 2-D and n_centers is square,
    otherwise a random sample subset."""
    n_in = Z.shape[1]
    side = int(round(n_centers ** (1.0 / n_in)))
    if side ** n_in == n_centers:
        axes = [np.linspace(Z[:, k].min(), Z[:, k].max(), side)
                for k in range(n_in)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    idx = rng.choice(Z.shape[0], size=n_centers, replace=False)
    return Z[idx].copy()


def fit_rbf_weights(Z, Y, centers, rho):
    """Closed-form least squares for the output weights and constant."""
    core = RbfCore(centers, rho, np.zeros((Y.shape[1], len(centers))),
                   np.zeros(Y.shape[1]))
    Phi = core.basis_values(Z)
    A = np.concatenate([Phi, np.ones((Z.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    alpha = coef[:-1].T
    const = coef[-1]
    return RbfCore(centers, rho, alpha, const)


def train_rbf_core(Z, Y, n_centers=49, epochs=100, batch=64, lr=1e-2,
                   seed=0, train_shape=True, verbose=False):
    """Multiquadric RBF core: LS-initialized weights, RMSprop refinement.

    Shape parameters train through a softplus reparametrization so they stay
    positive; weights and constant ride along.  With train_shape=False this
    reduces to plain least squares.
    """
    rng = np.random.default_rng(seed)
    centers = init_rbf_centers(Z, n_centers, rng)
    span = Z.max(axis=0) - Z.min(axis=0)
    spacing = float(np.mean(span)) / max(1.0, n_centers ** (1.0 / Z.shape[1]))
    rho0 = 1.0 / max(spacing, 1e-6)
    rho = np.full(len(centers), rho0)
    core = fit_rbf_weights(Z, Y, centers, rho)
    if not train_shape:
        return core, {"mode": "weights_ls", "rho0": rho0}

    alpha = core.alpha.copy()
    const = core.const.copy()
    s = np.log(np.expm1(rho))                 # softplus inverse
    opt = RmsProp([alpha, const, s], lr=lr)
    n = Z.shape[0]
    history = []
    for epoch in range(epochs):
        ep_loss = 0.0
        for mb in _minibatches(n, batch, rng):
            zb, yb = Z[mb], Y[mb]
            m = zb.shape[0]
            rho_v = _softplus(s)
            diff = zb[:, None, :] - centers[None, :, :]      # (m, c, d)
            d2 = np.sum(diff ** 2, axis=2)                   # (m, c)
            phi = np.sqrt(1.0 + rho_v[None, :] ** 2 * d2)
            out = phi @ alpha.T + const
            err = out - yb                                   # (m, n_out)
            ep_loss += float(np.sum(err ** 2))
            d_out = 2.0 * err / m
            g_alpha = d_out.T @ phi
            g_const = d_out.sum(axis=0)
            # dphi/drho = rho * d2 / phi
            dphi_drho = rho_v[None, :] * d2 / phi
            g_rho = np.sum((d_out @ alpha) * dphi_drho, axis=0)
            g_s = g_rho * _softplus_deriv(s)
            opt.step([g_alpha, g_const, g_s])
        history.append(ep_loss / n)
        if verbose and (epoch % 20 == 0 or epoch == epochs - 1):
            print(f"  epoch {epoch:4d}  mse {history[-1]:.5f}")
    rho = _softplus(s)
    # with the trained shape parameters fixed, the optimal weights are a
    # linear least-squares problem; re-solving it can only help
    core = fit_rbf_weights(Z, Y, centers, rho)
    return core, {"mode": "joint", "rho0": rho0, "mse_history": history[-5:]}


# ---------------------------------------------------------------------------
# model-vs-plant error bound
# ---------------------------------------------------------------------------

def modelling_error_box(model, plant_fn, x_lo, x_hi, u_lo, u_hi,
                        n_samples=20000, seed=0, safety=1.5):
    """Per-state-row bound on |f_model - f_plant| over the operating box.

    Sampled sup with a multiplicative safety margin; returned as half-widths
    of a symmetric box, ready to join the additive disturbance set.
    """
    rng = np.random.default_rng(seed)
    X = sample_box(x_lo, x_hi, n_samples, rng)
    U = sample_box(u_lo, u_hi, n_samples, rng)
    err = np.abs(model.f(X, U) - np.asarray(plant_fn(X, U)))
    return safety * err.max(axis=0)
