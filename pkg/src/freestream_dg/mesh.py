"""Fully periodic hexahedral lattice meshes with 8:1 refined elements.

The unit cube is split into K^3 boxes, each mapped through a smooth
deformation and interpolated at degree Ng.  Refined boxes are replaced by
their eight children, which are sampled from the parent polynomial so every
4:1 mortar interface is watertight.  Faces are matched geometrically by their
centroids modulo the period.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    QUADRANT_OFFSETS,
    DeformSpec,
    ElementMapping,
    FaceSubmap,
    AffineSubmap,
    extract_faces,
    face_axis_side,
    sample_analytic_mapping,
    subdivide_element,
    watertight_residual,
)

logger = logging.getLogger(__name__)

MATCH_TOL = 1e-10
PERIOD = 1.0


class TopologyError(ValueError):
    """Faces that cannot be paired, or an invalid refinement request."""


@dataclass(frozen=True, eq=False)
class Element:
    mapping: ElementMapping
    level: int = 0
    box: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    lattice_id: int = 0
    # children only: the parent mapping and the child-to-parent submap
    parent_mapping: ElementMapping | None = None
    submap: AffineSubmap | None = None


@dataclass(frozen=True)
class ConformingFace:
    """Two equal-level faces; ``left`` is the side whose outward normal is +axis."""

    left: tuple[int, int]
    right: tuple[int, int]
    shift: tuple[int, int, int] = (0, 0, 0)
    orientation: str = "aligned"

    @property
    def axis(self):
        return self.left[1] // 2


@dataclass(frozen=True)
class MortarFace:
    """One unrefined parent face against four child faces.

    ``submaps[q]`` maps child face parameters to parent face parameters and
    ``betas[q]`` is the ratio of child to parent normal metric.
    """

    parent: tuple[int, int]
    children: tuple[tuple[int, int], ...]
    submaps: tuple[FaceSubmap, ...]

    @property
    def axis(self):
        return self.parent[1] // 2

    @property
    def parent_side(self):
        return face_axis_side(self.parent[1])[1]

    @property
    def betas(self):
        return tuple(s.beta for s in self.submaps)


@dataclass(frozen=True, eq=False)
class Mesh:
    elements: tuple[Element, ...]
    conforming: tuple[ConformingFace, ...] = ()
    mortars: tuple[MortarFace, ...] = ()
    K: int = 0
    deform: DeformSpec = field(default_factory=DeformSpec)
    Ng: int = 1
    refine_set: tuple[int, ...] = ()

    @property
    def extruded(self):
        return self.deform.extruded

    @property
    def kind(self):
        if not self.refine_set:
            return "conforming"
        return "extruded" if self.extruded else "3d"


def lattice_index(i, j, k, K):
    return i + K * (j + K * k)


def lattice_coords(eid, K):
    return eid % K, (eid // K) % K, eid // (K * K)


def face_neighbors(eid, K):
    i, j, k = lattice_coords(eid, K)
    out = set()
    for d, s in itertools.product(range(3), (-1, 1)):
        c = [i, j, k]
        c[d] = (c[d] + s) % K
        out.add(lattice_index(*c, K))
    return out


def build_mesh(K=2, refine_set=(), deform=None, Ng=4, extruded=None, connect=True):
    """Build the periodic K^3 lattice mesh with the listed boxes refined 8:1."""
    if K < 2:
        raise TopologyError("K must be >= 2 so refined elements have distinct neighbors")
    deform = deform if deform is not None else DeformSpec()
    if extruded is not None and extruded != deform.extruded:
        deform = replace(deform, extruded=bool(extruded))
    refine_set = tuple(sorted(set(int(r) for r in refine_set)))
    for r in refine_set:
        if not 0 <= r < K**3:
            raise TopologyError(f"refine id {r} outside 0..{K**3 - 1}")
    for r, q in itertools.combinations(refine_set, 2):
        if q in face_neighbors(r, K):
            raise TopologyError(f"refined elements {r} and {q} share a face")

    h = 1.0 / K
    elements = []
    for eid in range(K**3):
        i, j, k = lattice_coords(eid, K)
        lo = np.array([i, j, k], dtype=float) * h
        box = (tuple(lo), tuple(lo + h))
        m = sample_analytic_mapping(deform, box, Ng)
        if eid not in refine_set:
            elements.append(Element(m, 0, box, eid))
            continue
        for child, sub in subdivide_element(m):
            child.check_orientation()
            clo = lo + 0.5 * h * (np.asarray(sub.offset) + 0.5)
            cbox = (tuple(clo), tuple(clo + 0.5 * h))
            elements.append(Element(child, 1, cbox, eid, parent_mapping=m, submap=sub))
    mesh = Mesh(tuple(elements), K=K, deform=deform, Ng=Ng, refine_set=refine_set)
    return connect_faces(mesh) if connect else mesh


def _wrap(points):
    p = np.mod(points, PERIOD)
    p[p >= PERIOD] = 0.0
    return p


def connect_faces(mesh):
    """Pair up element faces into conforming faces and 4:1 mortars."""
    slots = []  # (elem, face)
    centers = []
    patches = []
    for e, el in enumerate(mesh.elements):
        faces = extract_faces(el.mapping)
        patches.append(faces)
        for f, patch in enumerate(faces):
            slots.append((e, f))
            centers.append(patch.evaluate([(0.0, 0.0)])[0])
    centers = np.array(centers)
    tree = cKDTree(_wrap(centers), boxsize=PERIOD)
    used = np.zeros(len(slots), dtype=bool)
    slot_index = {s: n for n, s in enumerate(slots)}

    conforming = []
    for n, (e, f) in enumerate(slots):
        if used[n]:
            continue
        axis, side = face_axis_side(f)
        hits = [m for m in tree.query_ball_point(_wrap(centers[n]), MATCH_TOL)
                if m != n and slots[m][1] == 2 * axis + (0 if side > 0 else 1)]
        if len(hits) > 1:
            raise TopologyError(f"face {(e, f)} matches {len(hits)} faces")
        if not hits:
            continue
        m = hits[0]
        if used[m]:
            raise TopologyError(f"face {slots[m]} matched twice")
        used[n] = used[m] = True
        left, right = ((e, f), slots[m]) if side > 0 else (slots[m], (e, f))
        shift = np.round(centers[slot_index[left]] - centers[slot_index[right]]).astype(int)
        conforming.append(ConformingFace(left, right, tuple(int(s) for s in shift)))

    mortars = []
    for n, (e, f) in enumerate(slots):
        if used[n] or mesh.elements[e].level != 0:
            continue
        axis, side = face_axis_side(f)
        partner = 2 * axis + (0 if side > 0 else 1)
        children, subs = [], []
        for q in (1, 2, 3, 4):
            cu, cv = QUADRANT_OFFSETS[q]
            point = patches[e][f].evaluate([(cu, cv)])[0]
            hits = [m for m in tree.query_ball_point(_wrap(point), MATCH_TOL)
                    if not used[m] and slots[m][1] == partner
                    and mesh.elements[slots[m][0]].level == 1]
            if len(hits) != 1:
                raise TopologyError(f"mortar quadrant {q} of face {(e, f)} has {len(hits)} candidates")
            children.append(slots[hits[0]])
            subs.append(FaceSubmap((0.5, 0.5), (cu, cv)))
        used[n] = True
        for c in children:
            used[slot_index[c]] = True
        mortars.append(MortarFace((e, f), tuple(children), tuple(subs)))

    if not used.all():
        bad = [slots[n] for n in np.flatnonzero(~used)]
        raise TopologyError(f"{len(bad)} unmatched face(s), first {bad[:4]}")
    conn = replace(mesh, conforming=tuple(conforming), mortars=tuple(mortars))
    gap = watertight_residual(conn)["max_gap"]
    if gap > 1e-12:
        logger.warning("mesh is not watertight: max gap %.3e", gap)
    return conn


def validate_topology(mesh):
    """Aggregate face counts, the face-slot balance, watertightness and min J."""
    slots = 2 * len(mesh.conforming) + 5 * len(mesh.mortars)
    wt = watertight_residual(mesh)
    return {
        "element_count": len(mesh.elements),
        "conforming_faces": len(mesh.conforming),
        "mortar_faces": len(mesh.mortars),
        "face_slots": slots,
        "face_slots_expected": 6 * len(mesh.elements),
        "periodic_faces": sum(1 for f in mesh.conforming if any(f.shift)),
        "min_jacobian": min(el.mapping.min_jacobian() for el in mesh.elements),
        "watertight_gap": wt["max_gap"],
        "worst_face": wt["worst_face"],
    }


SUMMARY_KEYS = ("element_count", "conforming_faces", "mortar_faces", "min_jacobian", "watertight_gap")


def format_summary(report):
    lines = []
    for key in SUMMARY_KEYS:
        v = report[key]
        lines.append(f"{key}: {v:.6e}" if isinstance(v, float) else f"{key}: {v}")
    return "\n".join(lines)
