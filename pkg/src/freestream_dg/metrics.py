"""Metric terms Ja^i and J, and the volume/face free-stream residuals.

Array conventions: a metric field ``Ja`` has shape (3, 3, n, n, n) where
``Ja[i, c]`` is the c-th Cartesian component of Ja^i, the scaled normal to
the coordinate surfaces xi^i = const.  Face metrics are stored as (3, n, n)
arrays oriented along +xi^axis, parameterized by the two tangential axes in
increasing order.

Curl-form metrics interpolate the products X_l grad X_m at Gauss-Lobatto
nodes of degree M and take the discrete curl there, so Ja is a polynomial of
degree M whose discrete divergence vanishes and whose face trace depends only
on the face polynomial.  That polynomial is then evaluated on whatever
solution grid is in use.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import extract_faces, face_axis_side
from .spectral import (
    LOBATTO,
    apply_along,
    boundary_interpolation_vector,
    build_node_set,
    interpolation_matrix,
)

CROSS_PRODUCT = "cross_product"
CURL_FORM = "curl_form"
PARENT_INHERITED = "parent_inherited"
OVERINTEGRATED = "overintegrated"
STRATEGIES = (CROSS_PRODUCT, CURL_FORM, PARENT_INHERITED, OVERINTEGRATED)


class MetricError(ValueError):
    """Nonpositive Jacobian or an inconsistent metric request."""


@dataclass(frozen=True, eq=False)
class MetricSet:
    ns: object
    Ja: np.ndarray  # (3, 3, n, n, n)
    J: np.ndarray  # (n, n, n)
    strategy: str

    @property
    def N(self):
        return self.ns.degree

    def check(self):
        if not np.all(self.J > 0):
            raise MetricError(f"nonpositive Jacobian {self.J.min():.3e} ({self.strategy})")
        return self


@dataclass(frozen=True, eq=False)
class FaceMetric:
    values: np.ndarray  # (3, n, n), oriented along +axis
    axis: int
    provenance: str = "parent-face"
    beta_applied: bool = False


def _grad(field, D):
    """Reference gradient of nodal field(s) with the 3 grid axes last."""
    return np.stack([apply_along(D, field, field.ndim - 3 + a) for a in range(3)])


def covariant_basis(m, ns):
    """a_i = dX/dxi^i of the degree-N interpolant of X on the grid of ``ns``.

    Returns shape (3, 3, n, n, n): a[i, c].
    """
    X = m.sample_at((ns, ns, ns))
    return np.stack([apply_along(ns.D, X, 1 + i) for i in range(3)])


def jacobian(a):
    return np.einsum("c...,c...->...", a[0], np.cross(a[1], a[2], axis=0))


def metrics_cross_product(a, ns):
    """Collocated cross products Ja^i = a_j x a_k, (i, j, k) cyclic."""
    Ja = np.stack([np.cross(a[(i + 1) % 3], a[(i + 2) % 3], axis=0) for i in range(3)])
    return MetricSet(ns, Ja, jacobian(a), CROSS_PRODUCT).check()


def curl_metric_polynomial(m, M):
    """Curl-form Ja at the degree-M Gauss-Lobatto nodes.

    Ja^i_n = -xhat_i . curl( I^M(X_l grad X_m) ), (n, m, l) cyclic.
    """
    lob = build_node_set(LOBATTO, M)
    X = m.sample_at((lob, lob, lob))
    # the curl of c grad X_m vanishes, so centering only reduces cancellation
    X = X - X.mean(axis=(1, 2, 3), keepdims=True)
    gX = _grad(X, lob.D)  # gX[p, c] = d X_c / d xi^p
    Ja = np.empty((3, 3) + X.shape[1:])
    for c in range(3):
        mm, ll = (c + 1) % 3, (c + 2) % 3
        V = X[ll][None] * gX[:, mm]  # V[p] = X_l dX_m/dxi^p
        dV = _grad(V, lob.D)  # dV[q, p] = d V_p / d xi^q
        Ja[0, c] = -(dV[1, 2] - dV[2, 1])
        Ja[1, c] = -(dV[2, 0] - dV[0, 2])
        Ja[2, c] = -(dV[0, 1] - dV[1, 0])
    return lob, Ja


def evaluate_on_grid(values, src, dst, lead=2):
    """Re-evaluate a tensor nodal field on the nodes of another node set."""
    if src is dst:
        return values
    T = interpolation_matrix(src, dst.nodes)
    for a in range(3):
        values = apply_along(T, values, lead + a)
    return values


def metrics_curl_form(m, ns, M_interp=None):
    """Curl-form metrics interpolated at degree ``M_interp`` (default N).

    J comes from the covariant basis on the solution grid, not from Ja.
    """
    M = ns.degree if M_interp is None else int(M_interp)
    if M < ns.degree:
        raise MetricError("metric interpolation degree must be >= N")
    lob, Ja = curl_metric_polynomial(m, M)
    Ja = evaluate_on_grid(Ja, lob, ns)
    tag = CURL_FORM if M == ns.degree else f"{OVERINTEGRATED}({M})"
    return MetricSet(ns, Ja, jacobian(covariant_basis(m, ns)), tag).check()


def inherit_parent_metrics(parent, sub, ns=None):
    """Child metrics evaluated from the parent's degree-N metric interpolants.

    Ja^i_child = alpha_j alpha_k Ja^i_parent(sub(xi)), J_child = alpha_1
    alpha_2 alpha_3 J_parent(sub(xi)).
    """
    ns = parent.ns if ns is None else ns
    mats = [interpolation_matrix(parent.ns, sub.alpha[d] * ns.nodes + sub.offset[d]) for d in range(3)]
    Ja = parent.Ja
    J = parent.J
    for d in range(3):
        Ja = apply_along(mats[d], Ja, 2 + d)
        J = apply_along(mats[d], J, d)
    al = np.asarray(sub.alpha, dtype=float)
    scale = np.array([al[(i + 1) % 3] * al[(i + 2) % 3] for i in range(3)])
    return MetricSet(ns, Ja * scale[:, None, None, None, None], J * np.prod(al), PARENT_INHERITED).check()


def metric_divergence(ms):
    """sum_i d I^N(Ja^i_n)/dxi^i on the solution grid, shape (3, n, n, n)."""
    D = ms.ns.D
    return sum(apply_along(D, ms.Ja[i], 1 + i) for i in range(3))


def condition_v_residual(ms):
    return float(np.max(np.abs(metric_divergence(ms))))


def residual_scale(ms):
    return float(np.max(np.abs(ms.Ja))) * max(ms.N, 1) ** 2


def volume_face_trace(ms, face):
    """Trace of the interpolant of Ja^axis on local face ``face``: (3, n, n)."""
    axis, side = face_axis_side(face)
    b = boundary_interpolation_vector(ms.ns, side)
    return np.tensordot(ms.Ja[axis], b, axes=(1 + axis, 0))


def _cyclic_sign(axis):
    return -1.0 if axis == 1 else 1.0


def face_metrics_parent(parent_face, ns, M=None):
    """Normal metric on a face computed only from the face polynomial Gamma.

    Uses the tangential part of the curl form with products interpolated at
    degree-M Gauss-Lobatto face nodes, then evaluates on the face grid of
    ``ns``.  Oriented along +axis regardless of which side the face is on.
    """
    M = ns.degree if M is None else int(M)
    lob = build_node_set(LOBATTO, M)
    T = interpolation_matrix(parent_face.node_set, lob.nodes)
    G = np.einsum("cjk,aj,bk->cab", parent_face.coords, T, T)
    G = G - G.mean(axis=(1, 2), keepdims=True)
    D = lob.D
    dG = np.stack([apply_along(D, G, 1), apply_along(D, G, 2)])  # dG[t, c]
    s = _cyclic_sign(parent_face.axis)
    out = np.empty_like(G)
    for c in range(3):
        mm, ll = (c + 1) % 3, (c + 2) % 3
        Vu = G[ll] * dG[0, mm]
        Vv = G[ll] * dG[1, mm]
        out[c] = -s * (apply_along(D, Vv, 0) - apply_along(D, Vu, 1))
    if ns is not lob:
        T2 = interpolation_matrix(lob, ns.nodes)
        out = np.einsum("cjk,aj,bk->cab", out, T2, T2)
    return FaceMetric(out, parent_face.axis)


def child_face_metric(fm, sub, ns):
    """Restrict a parent face metric to a child face and scale by beta."""
    Tu = interpolation_matrix(ns, sub.alpha[0] * ns.nodes + sub.offset[0])
    Tv = interpolation_matrix(ns, sub.alpha[1] * ns.nodes + sub.offset[1])
    vals = sub.beta * np.einsum("cjk,aj,bk->cab", fm.values, Tu, Tv)
    return FaceMetric(vals, fm.axis, fm.provenance, True)


def side_condition_f(ms, face, face_values):
    """Weighted nodal mismatch omega_u omega_v |Ja* - trace(Ja)| on one side."""
    w = ms.ns.weights
    diff = np.abs(face_values - volume_face_trace(ms, face))
    return float(np.max(diff * np.outer(w, w)[None]))


def condition_f_residual(face, volume_metrics, face_metric):
    """Condition (F) mismatch of a conforming face or a mortar.

    ``face_metric`` is the metric used by the numerical flux: for a
    conforming face it applies to both sides, for a mortar it is the parent
    face metric and the children see its beta-scaled restriction.
    """
    if hasattr(face, "children"):
        ms_p = volume_metrics[face.parent[0]]
        res = side_condition_f(ms_p, face.parent[1], face_metric.values)
        for (e, f), sub in zip(face.children, face.submaps):
            ms_c = volume_metrics[e]
            child = child_face_metric(face_metric, sub, ms_c.ns)
            res = max(res, side_condition_f(ms_c, f, child.values))
        return res
    return max(side_condition_f(volume_metrics[face.left[0]], face.left[1], face_metric.values),
               side_condition_f(volume_metrics[face.right[0]], face.right[1], face_metric.values))


@dataclass(frozen=True, eq=False)
class MeshMetrics:
    """Volume metrics per element plus the face metrics the fluxes use."""

    strategy: str
    ns: object
    M: int
    volume: tuple[MetricSet, ...]
    conforming: tuple[FaceMetric, ...]
    mortars: tuple[FaceMetric, ...]
    condV: np.ndarray  # per element, normalized by residual_scale
    condF_conforming: np.ndarray
    condF_mortar: np.ndarray

    @property
    def condV_max(self):
        return float(self.condV.max())

    @property
    def condF_max(self):
        vals = np.concatenate([self.condF_conforming, self.condF_mortar, [0.0]])
        return float(vals.max())


def element_metrics(mesh, ns, strategy, M=None):
    """Per-element metric sets for ``strategy`` on the grid of ``ns``."""
    if strategy not in STRATEGIES:
        raise MetricError(f"unknown metric strategy {strategy!r}")
    out = []
    parents = {}
    for el in mesh.elements:
        if strategy == CROSS_PRODUCT:
            ms = metrics_cross_product(covariant_basis(el.mapping, ns), ns)
        elif strategy == PARENT_INHERITED and el.level > 0:
            key = el.lattice_id
            if key not in parents:
                parents[key] = metrics_curl_form(el.parent_mapping, ns)
            ms = replace(inherit_parent_metrics(parents[key], el.submap, ns), strategy=PARENT_INHERITED)
        else:
            ms = metrics_curl_form(el.mapping, ns)
            if strategy != CURL_FORM:
                ms = replace(ms, strategy=strategy if strategy != OVERINTEGRATED else f"{OVERINTEGRATED}({ns.degree})")
        out.append(ms)
    return out


def assemble_metrics(mesh, ns, strategy=CURL_FORM):
    """Volume metrics, face metrics and normalized (V)/(F) residuals for a mesh.

    Conforming faces use the trace of the left element's metric interpolant.
    Mortars use the curl-form metric of the unrefined parent face (degree of
    ``ns``); children receive its beta-scaled restriction.  For the
    overintegrated strategy ``ns`` is the degree-M working grid.
    """
    volume = element_metrics(mesh, ns, strategy)
    conf = []
    for f in mesh.conforming:
        conf.append(FaceMetric(volume_face_trace(volume[f.left[0]], f.left[1]), f.axis, "left-volume"))
    mort = []
    for mf in mesh.mortars:
        patch = extract_faces(mesh.elements[mf.parent[0]].mapping)[mf.parent[1]]
        mort.append(face_metrics_parent(patch, ns))
    scales = np.array([residual_scale(ms) for ms in volume])
    condV = np.array([condition_v_residual(ms) for ms in volume]) / scales
    condF_c = np.array([
        condition_f_residual(f, volume, fm) / max(scales[f.left[0]], scales[f.right[0]])
        for f, fm in zip(mesh.conforming, conf)])
    condF_m = np.array([
        condition_f_residual(mf, volume, fm) / max(scales[e] for e, _ in (mf.parent,) + mf.children)
        for mf, fm in zip(mesh.mortars, mort)])
    return MeshMetrics(strategy, ns, ns.degree, tuple(volume), tuple(conf), tuple(mort),
                       condV, condF_c, condF_m)
