"""Polytopic tube cross-sections: two fixed-Gamma parameterizations.

A cross-section is {x : Gamma x <= q}.  Elementwise boxes use
Gamma = [I; -I] with q = (upper, -lower) and 2^n_x vertices; simplices use
Gamma = [-I; 1^T] with q = (alpha, beta) and n_x + 1 vertices.  Both have
vertices that are linear in q, which is what lets the online program keep q
as a decision vector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class TubeError(RuntimeError):
    pass


@dataclass(frozen=True)
class TubeParam:
    variant: str            # "elementwise" | "simplex"
    n_x: int

    def __post_init__(self):
        if self.variant not in ("elementwise", "simplex"):
            raise ValueError(f"unknown tube variant {self.variant!r}")

    @property
    def gamma(self) -> np.ndarray:
        n = self.n_x
        if self.variant == "elementwise":
            return np.vstack([np.eye(n), -np.eye(n)])
        return np.vstack([-np.eye(n), np.ones((1, n))])

    @property
    def n_q(self) -> int:
        return 2 * self.n_x if self.variant == "elementwise" else self.n_x + 1

    @property
    def n_vertices(self) -> int:
        return 2 ** self.n_x if self.variant == "elementwise" else self.n_x + 1


def vertex_matrices(param: TubeParam) -> np.ndarray:
    """P with vertices stacked as P[i] @ q, shape (n_vertices, n_x, n_q)."""
    n = param.n_x
    if param.variant == "elementwise":
        # q = (upper, -lower); vertex picks upper or lower per coordinate
        P = np.zeros((2 ** n, n, 2 * n))
        for i, picks in enumerate(itertools.product((0, 1), repeat=n)):
            for l, pick in enumerate(picks):
                if pick:
                    P[i, l, l] = 1.0          # upper bound q2_l
                else:
                    P[i, l, n + l] = -1.0     # lower bound q1_l = -q[n+l]
        return P
    # simplex: q = (alpha, beta); vertices -alpha and -alpha + e_l * sigma,
    # sigma = beta + 1^T alpha
    P = np.zeros((n + 1, n, n + 1))
    P[:, :, :n] = -np.eye(n)
    for l in range(n):
        P[l + 1, l, :n] += 1.0
        P[l + 1, l, n] += 1.0
    return P


def check_nonempty(param: TubeParam, q: np.ndarray, tol: float = 0.0):
    q = np.asarray(q, float)
    n = param.n_x
    if param.variant == "elementwise":
        if np.any(q[:n] + q[n:] < -tol):
            raise TubeError("empty cross-section: lower bound exceeds upper")
    else:
        if q[:n].sum() + q[n] < -tol:
            raise TubeError("empty cross-section: negative simplex size")


def vertices(param: TubeParam, q: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Vertex array (n_vertices, n_x) of {x : Gamma x <= q}."""
    check_nonempty(param, q, tol)
    return vertex_matrices(param) @ np.asarray(q, float)


def q_from_point(param: TubeParam, x: np.ndarray) -> np.ndarray:
    """Tightest q whose cross-section is the singleton {x}."""
    return param.gamma @ np.asarray(x, float)


def contains(param: TubeParam, q: np.ndarray, x: np.ndarray,
             tol: float = 1e-9) -> bool:
    return bool(np.all(param.gamma @ np.asarray(x, float) <= q + tol))


def width(param: TubeParam, q: np.ndarray, tol: float = 0.0) -> float:
    """Largest L-inf distance between cross-section vertices."""
    V = vertices(param, q, tol)
    diffs = V[:, None, :] - V[None, :, :]
    return float(np.abs(diffs).max())


def box_vertices(lo, hi) -> np.ndarray:
    """All corner points of a box, shape (2^n, n)."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    corners = itertools.product(*zip(lo, hi))
    return np.array(list(corners))


def minkowski_vertices(V1: np.ndarray, V2: np.ndarray) -> np.ndarray:
    """Pairwise-sum generators of the Minkowski sum of two vertex sets.

    The true vertex set is a subset, which is all the rowwise-max uses here
    need (max of a linear function over the sum splits into a sum of maxes).
    """
    V1 = np.atleast_2d(V1)
    V2 = np.atleast_2d(V2)
    return (V1[:, None, :] + V2[None, :, :]).reshape(-1, V1.shape[1])


def disturbance_offsets(param: TubeParam, W_vertices,
                        eps=None) -> np.ndarray:
    """Rowwise w_bar = max over w in W (+) eps-box of Gamma w.

    W_vertices: polytope vertex rows (use zeros((1, n_x)) for W = {0});
    eps: optional modelling-error box half-widths, Minkowski-added.
    """
    W = np.atleast_2d(np.asarray(W_vertices, float))
    G = param.gamma
    w_bar = (W @ G.T).max(axis=0)
    if eps is not None:
        eps = np.asarray(eps, float)
        w_bar = w_bar + np.abs(G) @ eps
    return w_bar
