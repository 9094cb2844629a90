"""One-dimensional spectral building blocks.

Legendre-Gauss and Legendre-Gauss-Lobatto node sets, barycentric Lagrange
interpolation and differentiation, tensor-product quadrature, and a small
demonstration of why interpolating a product on a sub-interval does not
commute with restricting the interpolant of the product.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

GAUSS = "gauss"
LOBATTO = "lobatto"
NODE_KINDS = (GAUSS, LOBATTO)

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


def legendre_and_derivative(n, x):
    """Evaluate L_n(x) and L_n'(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x), np.zeros_like(x)
    if n == 1:
        return x.copy(), np.ones_like(x)
    l_m2, l_m1 = np.ones_like(x), x.copy()
    d_m2, d_m1 = np.zeros_like(x), np.ones_like(x)
    for k in range(2, n + 1):
        l_k = ((2 * k - 1) * x * l_m1 - (k - 1) * l_m2) / k
        d_k = d_m2 + (2 * k - 1) * l_m1
        l_m2, l_m1 = l_m1, l_k
        d_m2, d_m1 = d_m1, d_k
    return l_m1, d_m1


def _lobatto_q(n, x):
    """q = L_{n+1} - L_{n-1} and q', whose roots are the Lobatto nodes."""
    lp, dp = legendre_and_derivative(n + 1, x)
    lm, dm = legendre_and_derivative(n - 1, x)
    return lp - lm, dp - dm


def _newton(fun, x0):
    x = np.array(x0, dtype=float)
    for _ in range(_NEWTON_MAXIT):
        f, df = fun(x)
        step = f / df
        # damp steps that would leave the open interval
        while np.any(np.abs(x - step) >= 1.0):
            step = np.where(np.abs(x - step) >= 1.0, 0.5 * step, step)
        x = x - step
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    return x


def _symmetrize(x):
    x = 0.5 * (x - x[::-1])
    if x.size % 2 == 1:
        x[x.size // 2] = 0.0
    return x


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Quadrature nodes, weights and barycentric weights on [-1, 1]."""

    kind: str
    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray
    _dmat: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.degree + 1

    @property
    def D(self):
        return differentiation_matrix(self)

    def __repr__(self):
        return f"NodeSet({self.kind}, N={self.degree})"


def barycentric_weights(x):
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w


_CACHE: dict[tuple[str, int], NodeSet] = {}


def build_node_set(kind, N):
    """Build the Gauss or Gauss-Lobatto node set of degree ``N``.

    Nodes are found by Newton iteration on Legendre recurrences started from
    Chebyshev-type initial guesses.  Results are cached, node sets are
    immutable.
    """
    if kind not in NODE_KINDS:
        raise ValueError(f"unknown node kind {kind!r}")
    if not isinstance(N, (int, np.integer)) or N < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {N!r}")
    if kind == LOBATTO and N < 1:
        raise ValueError("lobatto node set needs N >= 1")
    key = (kind, int(N))
    if key in _CACHE:
        return _CACHE[key]
    N = int(N)
    if kind == GAUSS:
        if N == 0:
            x = np.array([0.0])
            w = np.array([2.0])
        else:
            j = np.arange(N + 1)
            x0 = -np.cos((2 * j + 1) * np.pi / (2 * N + 2))
            x = _symmetrize(_newton(lambda t: legendre_and_derivative(N + 1, t), x0))
            _, dl = legendre_and_derivative(N + 1, x)
            w = 2.0 / ((1.0 - x**2) * dl**2)
    else:
        if N == 1:
            x = np.array([-1.0, 1.0])
        else:
            x0 = -np.cos(np.pi * np.arange(1, N) / N)
            xi = _newton(lambda t: _lobatto_q(N, t), x0)
            x = _symmetrize(np.concatenate(([-1.0], xi, [1.0])))
            x[0], x[-1] = -1.0, 1.0
        ln, _ = legendre_and_derivative(N, x)
        w = 2.0 / (N * (N + 1) * ln**2)
    w = 0.5 * (w + w[::-1])
    ns = NodeSet(kind, N, x, w, barycentric_weights(x))
    for arr in (ns.nodes, ns.weights, ns.bary):
        arr.setflags(write=False)
    _CACHE[key] = ns
    return ns


def differentiation_matrix(ns):
    """D_ij = l_j'(x_i) from the barycentric formulas; rows sum to zero."""
    if ns._dmat is not None:
        return ns._dmat
    x, w = ns.nodes, ns.bary
    n = x.size
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (w[j] / w[i]) / (x[i] - x[j])
        D[i, i] = -np.sum(D[i, :])
    D.setflags(write=False)
    object.__setattr__(ns, "_dmat", D)
    return D


def interpolation_matrix(ns, targets):
    """Matrix T with T[m, j] = l_j(targets[m]) (barycentric second form)."""
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(np.abs(t) > 1.0 + 1e-12):
        logger.debug("interpolate: %d target(s) outside [-1, 1] (extrapolation)",
                     int(np.sum(np.abs(t) > 1.0 + 1e-12)))
    x, w = ns.nodes, ns.bary
    diff = t[:, None] - x[None, :]
    # snap targets within rounding distance of a node (avoids inf/inf)
    exact = np.abs(diff) <= 4 * np.finfo(float).eps
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = w[None, :] / diff
        T = q / np.sum(q, axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    T[rows] = exact[rows].astype(float)
    return T


def interpolate(ns, nodal_values, targets):
    """Evaluate the degree-N interpolant of ``nodal_values`` at ``targets``.

    ``nodal_values`` may carry trailing axes; the first axis runs over nodes.
    """
    v = np.asarray(nodal_values, dtype=float)
    if v.shape[0] != ns.n:
        raise ValueError(f"expected {ns.n} nodal values, got {v.shape[0]}")
    return np.tensordot(interpolation_matrix(ns, targets), v, axes=(1, 0))


def boundary_interpolation_vector(ns, side):
    """Values l_j(side) of the Lagrange basis at the endpoint ``side`` = +-1."""
    if side not in (-1, 1):
        raise ValueError("side must be -1 or +1")
    return interpolation_matrix(ns, [float(side)])[0]


def apply_along(mat, arr, axis):
    """Apply a 1D operator ``mat`` (m x n) along ``axis`` of ``arr``."""
    out = np.tensordot(mat, arr, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def tensor_interpolate(arr, mats, axes):
    """Apply one 1D matrix per listed axis (tensor-product interpolation)."""
    for mat, ax in zip(mats, axes):
        arr = apply_along(mat, arr, ax)
    return arr


@dataclass(frozen=True)
class TensorGrid3:
    """Nodal values on an (N1+1) x (N2+1) x (N3+1) grid.

    ``values`` has shape (N1+1, N2+1, N3+1) + value_shape.
    """

    degrees: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(d + 1 for d in self.degrees)
        if tuple(self.values.shape[:3]) != shape:
            raise ValueError(f"values shape {self.values.shape} does not match degrees {self.degrees}")


def discrete_inner_product(A, B, ns3):
    """Tensor-product Gauss-type quadrature of A.B over the reference cube."""
    a = A.values if isinstance(A, TensorGrid3) else np.asarray(A, dtype=float)
    b = B.values if isinstance(B, TensorGrid3) else np.asarray(B, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if tuple(a.shape[:3]) != tuple(ns.n for ns in ns3):
        raise ValueError("grid shape does not match the node sets")
    w = np.einsum("j,k,l->jkl", *(ns.weights for ns in ns3))
    prod = (a * b).reshape(a.shape[:3] + (-1,)).sum(axis=-1)
    return float(np.sum(prod * w))


def product_interpolation_mismatch(U_vals, V_vals, ns, samples=1001):
    """Compare I(UV) restricted to the left half with I_L(UV) built there.

    W = I^N(UV) uses the nodal product on [-1, 1].  W_L interpolates U*V at the
    affine images s_j = (xi_j - 1)/2 of the nodes on the left half interval.
    Returns the maximum of |W((xi - 1)/2) - W_L(xi)| over ``samples``
    equispaced xi and the xi where it occurs.
    """
    U = np.asarray(U_vals, dtype=float)
    V = np.asarray(V_vals, dtype=float)
    if U.shape != (ns.n,) or V.shape != (ns.n,):
        raise ValueError("U and V need N+1 nodal values")
    W = U * V
    s_nodes = 0.5 * (ns.nodes - 1.0)
    WL = interpolate(ns, U, s_nodes) * interpolate(ns, V, s_nodes)
    xi = np.linspace(-1.0, 1.0, samples)
    diff = np.abs(interpolate(ns, W, 0.5 * (xi - 1.0)) - interpolate(ns, WL, xi))
    k = int(np.argmax(diff))
    return {"max_mismatch": float(diff[k]), "witness_point": float(xi[k])}
