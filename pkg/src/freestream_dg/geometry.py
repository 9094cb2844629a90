"""Curved hexahedral element mappings, face patches and affine subdivision.

Element mappings X(xi) are tensor-product polynomials of degree Ng stored at
Gauss-Lobatto nodes.  Children produced by subdivision are sampled from the
parent polynomial at affinely mapped nodes, which keeps the mesh watertight:
a child face is the exact restriction of the parent face polynomial.

Faces are indexed 0..5 as ``2 * axis + (side > 0)``, i.e. 0 = -xi, 1 = +xi,
2 = -eta, 3 = +eta, 4 = -zeta, 5 = +zeta.  A face patch is parameterized by
the two remaining reference axes in increasing order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    LOBATTO,
    build_node_set,
    boundary_interpolation_vector,
    interpolation_matrix,
)


class InvertedElementError(ValueError):
    """Raised when a mapping has a nonpositive Jacobian at a geometry node."""


def face_index(axis, side):
    return 2 * axis + (1 if side > 0 else 0)


def face_axis_side(face):
    return face // 2, (1 if face % 2 else -1)


def tangential_axes(axis):
    return tuple(a for a in range(3) if a != axis)


@dataclass(frozen=True)
class DeformSpec:
    """Smooth periodic deformation of the unit cube.

    The general map displaces each coordinate by a product of sines in the
    other two coordinates.  The extruded variant only displaces x by a
    function of y and y by a function of x, leaving z untouched.

    ``phase`` shifts every sine argument.  With phase 0 the displacement
    vanishes on the planes x_d in {0, 1/2, 1}, so on a K=2 lattice all parent
    faces keep two affine coordinates and the face geometry degenerates.
    """

    amplitude: float = 0.05
    wavenumbers: tuple[int, int, int] = (1, 1, 1)
    extruded: bool = False
    phase: float = 0.125

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = self.amplitude
        kx, ky, kz = self.wavenumbers
        ph = self.phase
        sx = np.sin(2 * np.pi * kx * (x[0] + ph))
        sy = np.sin(2 * np.pi * ky * (x[1] + ph))
        sz = np.sin(2 * np.pi * kz * (x[2] + ph))
        if self.extruded:
            return np.stack([x[0] + a * sy, x[1] + a * sx, x[2]])
        return np.stack([x[0] + a * sy * sz, x[1] + a * sz * sx, x[2] + a * sx * sy])

    def jacobian(self, x):
        """Analytic determinant of dPhi/dx at points ``x`` (shape (3, ...))."""
        x = np.asarray(x, dtype=float)
        a = self.amplitude
        k = np.asarray(self.wavenumbers, dtype=float)
        t = [2 * np.pi * k[d] * (x[d] + self.phase) for d in range(3)]
        s = [np.sin(v) for v in t]
        c = [2 * np.pi * k[d] * np.cos(t[d]) for d in range(3)]
        one, zero = np.ones_like(x[0]), np.zeros_like(x[0])
        if self.extruded:
            g = [[one, a * c[1], zero], [a * c[0], one, zero], [zero, zero, one]]
        else:
            g = [[one, a * c[1] * s[2], a * s[1] * c[2]],
                 [a * s[2] * c[0], one, a * c[2] * s[0]],
                 [a * c[0] * s[1], a * s[0] * c[1], one]]
        g = np.array(g)
        return np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1)))


def _eval_tensor(coords, ns, points):
    """Evaluate a tensor-product nodal field at reference points (m, d)."""
    points = np.atleast_2d(points)
    mats = [interpolation_matrix(ns, points[:, d]) for d in range(points.shape[1])]
    if points.shape[1] == 3:
        return np.einsum("cjkl,mj,mk,ml->mc", coords, *mats)
    return np.einsum("cjk,mj,mk->mc", coords, *mats)


@dataclass(frozen=True, eq=False)
class FacePatch:
    """Polynomial surface Gamma(u, v) of degree Ng on one reference face."""

    degree: int
    kind: str
    coords: np.ndarray  # (3, Ng+1, Ng+1)
    axis: int = 0
    side: int = -1

    @property
    def node_set(self):
        return build_node_set(self.kind, self.degree)

    def evaluate(self, uv):
        return _eval_tensor(self.coords, self.node_set, uv)

    def corners(self):
        if self.kind == LOBATTO:
            return np.array([self.coords[:, i, j] for i in (0, -1) for j in (0, -1)])
        return self.evaluate([(u, v) for u in (-1, 1) for v in (-1, 1)])


@dataclass(frozen=True, eq=False)
class ElementMapping:
    """Tensor-product polynomial map X: [-1,1]^3 -> R^3 of degree Ng."""

    degree: int
    kind: str
    coords: np.ndarray  # (3, Ng+1, Ng+1, Ng+1)

    @property
    def node_set(self):
        return build_node_set(self.kind, self.degree)

    def evaluate(self, points):
        """Physical coordinates at reference points of shape (m, 3)."""
        return _eval_tensor(self.coords, self.node_set, points)

    def sample_at(self, ns3):
        """Nodal values of X on the tensor grid of three node sets: (3, n1, n2, n3)."""
        mats = [interpolation_matrix(self.node_set, ns.nodes) for ns in ns3]
        return np.einsum("cjkl,aj,bk,dl->cabd", self.coords, *mats)

    def covariant_basis_at_nodes(self):
        D = self.node_set.D
        X = self.coords
        return np.stack([
            np.einsum("ij,cjkl->cikl", D, X),
            np.einsum("ij,cajl->cail", D, X),
            np.einsum("ij,cakj->caki", D, X),
        ])

    def jacobian_at_nodes(self):
        a = self.covariant_basis_at_nodes()
        return np.einsum("c...,c...->...", a[0], np.cross(a[1], a[2], axis=0))

    def min_jacobian(self):
        return float(self.jacobian_at_nodes().min())

    def check_orientation(self):
        J = self.jacobian_at_nodes()
        if not np.all(J > 0):
            raise InvertedElementError(
                f"nonpositive Jacobian {J.min():.3e} at {int(np.sum(J <= 0))} geometry node(s)")
        return self


@dataclass(frozen=True)
class AffineSubmap:
    """Child-to-parent reference map r_d = alpha_d * xi_d + offset_d."""

    alpha: tuple[float, float, float]
    offset: tuple[float, float, float]

    def __post_init__(self):
        for a, c in zip(self.alpha, self.offset):
            if not 0.0 < a <= 1.0 or abs(c) + a > 1.0 + 1e-14:
                raise ValueError(f"submap image leaves the reference cube: alpha={a}, offset={c}")

    def __call__(self, xi):
        return np.asarray(xi) * np.asarray(self.alpha) + np.asarray(self.offset)

    def beta(self, axis):
        """Ratio of child to parent face-normal metric on faces normal to ``axis``."""
        u, v = tangential_axes(axis)
        return self.alpha[u] * self.alpha[v]

    def volume_scale(self):
        return float(np.prod(self.alpha))

    def face(self, axis):
        u, v = tangential_axes(axis)
        return FaceSubmap((self.alpha[u], self.alpha[v]), (self.offset[u], self.offset[v]))


@dataclass(frozen=True)
class FaceSubmap:
    """Tangential part of an affine submap restricted to a face."""

    alpha: tuple[float, float]
    offset: tuple[float, float]

    @property
    def beta(self):
        return self.alpha[0] * self.alpha[1]

    def __call__(self, uv):
        return np.asarray(uv) * np.asarray(self.alpha) + np.asarray(self.offset)


OCTANT_SUBMAPS = tuple(
    AffineSubmap((0.5, 0.5, 0.5), (-0.5 + i, -0.5 + j, -0.5 + k))
    for k in (0, 1) for j in (0, 1) for i in (0, 1)
)

# quadrant q -> (u offset, v offset); quadrant 2 maps (r, s) to ((r+1)/2, (s-1)/2)
QUADRANT_OFFSETS = {1: (-0.5, -0.5), 2: (0.5, -0.5), 3: (-0.5, 0.5), 4: (0.5, 0.5)}


def box_reference_points(box, ns):
    """Physical points of the straight-sided box at the tensor nodes of ``ns``."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    t = 0.5 * (ns.nodes + 1.0)
    axes = [lo[d] + (hi[d] - lo[d]) * t for d in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def sample_analytic_mapping(spec, box, Ng, node_kind=LOBATTO, check=True):
    """Interpolate Phi(box(xi)) at the degree-Ng tensor nodes."""
    if Ng < 1:
        raise ValueError("geometry degree must be >= 1")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if np.any(hi <= lo):
        raise ValueError(f"degenerate box {box}")
    ns = build_node_set(node_kind, Ng)
    m = ElementMapping(Ng, node_kind, spec(box_reference_points(box, ns)))
    if check:
        m.check_orientation()
    return m


def extract_faces(m):
    """The six face patches of ``m``, indexed as in :func:`face_index`."""
    ns = m.node_set
    faces = []
    for axis in range(3):
        for side in (-1, 1):
            if m.kind == LOBATTO:
                idx = [slice(None)] * 4
                idx[axis + 1] = 0 if side < 0 else -1
                coords = m.coords[tuple(idx)].copy()
            else:
                b = boundary_interpolation_vector(ns, side)
                coords = np.tensordot(m.coords, b, axes=(axis + 1, 0))
            faces.append(FacePatch(m.degree, m.kind, coords, axis, side))
    return faces


def child_face_patch(parent, quadrant):
    """Resample a quarter of ``parent`` as its own degree-Ng patch."""
    cu, cv = QUADRANT_OFFSETS[quadrant]
    return restrict_face_patch(parent, FaceSubmap((0.5, 0.5), (cu, cv)))


def restrict_face_patch(parent, sub):
    ns = parent.node_set
    Tu = interpolation_matrix(ns, sub.alpha[0] * ns.nodes + sub.offset[0])
    Tv = interpolation_matrix(ns, sub.alpha[1] * ns.nodes + sub.offset[1])
    coords = np.einsum("cjk,aj,bk->cab", parent.coords, Tu, Tv)
    return FacePatch(parent.degree, parent.kind, coords, parent.axis, parent.side)


def restrict_mapping(parent, sub):
    """Child mapping sampled from ``parent`` at the nodes mapped through ``sub``."""
    ns = parent.node_set
    mats = [interpolation_matrix(ns, sub.alpha[d] * ns.nodes + sub.offset[d]) for d in range(3)]
    coords = np.einsum("cjkl,aj,bk,dl->cabd", parent.coords, *mats)
    return ElementMapping(parent.degree, parent.kind, coords)


def subdivide_element(parent):
    """Eight octant children of ``parent`` with their submaps (alpha = 1/2)."""
    return [(restrict_mapping(parent, sub), sub) for sub in OCTANT_SUBMAPS]


def _periodic_gap(a, b, period=1.0):
    d = a - b
    if period:
        d = d - period * np.round(d / period)
    return np.abs(d)


def watertight_residual(mesh, samples=10):
    """Largest coordinate mismatch between the two sides of every face.

    Conforming faces compare both patches on a ``samples`` x ``samples``
    parameter grid; mortar children compare against the parent patch at the
    mapped parameters.  Periodic shifts by whole periods are removed.
    """
    t = np.linspace(-1.0, 1.0, samples)
    uv = np.array([(u, v) for u in t for v in t])
    worst, worst_face = 0.0, None
    faces = [extract_faces(el.mapping) for el in mesh.elements]
    for fid, f in enumerate(mesh.conforming):
        a = faces[f.left[0]][f.left[1]].evaluate(uv)
        b = faces[f.right[0]][f.right[1]].evaluate(uv)
        gap = float(_periodic_gap(a, b).max())
        if gap >= worst:
            worst, worst_face = gap, ("conforming", fid)
    for mid, mf in enumerate(mesh.mortars):
        parent = faces[mf.parent[0]][mf.parent[1]]
        for (e, s), sub in zip(mf.children, mf.submaps):
            a = faces[e][s].evaluate(uv)
            b = parent.evaluate(sub(uv))
            gap = float(_periodic_gap(a, b).max())
            if gap >= worst:
                worst, worst_face = gap, ("mortar", mid)
    return {"max_gap": worst, "worst_face": worst_face}


def dump_geometry(mesh, fh):
    """Write ``elem_id j k l x y z`` lines for every geometry node."""
    for e, el in enumerate(mesh.elements):
        X = el.mapping.coords
        n = X.shape[1]
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    x, y, z = X[:, j, k, l]
                    fh.write(f"{e} {j} {k} {l} {x:.17g} {y:.17g} {z:.17g}\n")
