import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freestream_dg.geometry import (
    OCTANT_SUBMAPS,
    AffineSubmap,
    DeformSpec,
    FaceSubmap,
    InvertedElementError,
    child_face_patch,
    dump_geometry,
    extract_faces,
    face_axis_side,
    face_index,
    restrict_face_patch,
    sample_analytic_mapping,
    subdivide_element,
    watertight_residual,
)
from freestream_dg.mesh import build_mesh
from freestream_dg.spectral import GAUSS, LOBATTO

BOX = ((0.0, 0.0, 0.0), (0.5, 0.5, 0.5))


def test_face_index_roundtrip():
    for f in range(6):
        assert face_index(*face_axis_side(f)) == f
    assert face_axis_side(1) == (0, 1)


@pytest.mark.parametrize("extruded", [False, True])
def test_deform_jacobian_matches_finite_differences(extruded):
    spec = DeformSpec(amplitude=0.07, extruded=extruded)
    rng = np.random.default_rng(3)
    x = rng.random((3, 5))
    h = 1e-6
    G = np.empty((3, 3, 5))
    for d in range(3):
        e = np.zeros((3, 1))
        e[d] = h
        G[:, d] = (spec(x + e) - spec(x - e)) / (2 * h)
    fd = np.linalg.det(np.moveaxis(G, (0, 1), (-2, -1)))
    np.testing.assert_allclose(spec.jacobian(x), fd, rtol=1e-8)


def test_deform_is_periodic_and_extruded_keeps_z():
    spec = DeformSpec()
    x = np.array([[0.1], [0.2], [0.3]])
    np.testing.assert_allclose(spec(x + 1.0) - 1.0, spec(x), atol=1e-14)
    ext = DeformSpec(extruded=True)
    assert ext(x)[2, 0] == 0.3


def test_zero_phase_degenerates_on_half_planes():
    # with phase 0 the displacement of y and z vanishes on x = 1/2
    spec = DeformSpec(phase=0.0)
    pts = np.array([[0.5, 0.5], [0.13, 0.71], [0.37, 0.2]])
    out = spec(pts)
    np.testing.assert_allclose(out[1:], pts[1:], atol=1e-15)
    assert np.all(np.abs(DeformSpec()(pts)[1:] - pts[1:]) > 1e-3)


def test_undeformed_box_is_affine():
    m = sample_analytic_mapping(DeformSpec(amplitude=0.0), BOX, 3)
    J = m.jacobian_at_nodes()
    np.testing.assert_allclose(J, 0.25**3, rtol=1e-13)
    np.testing.assert_allclose(m.evaluate([(0.0, 0.0, 0.0)])[0], [0.25, 0.25, 0.25], atol=1e-15)


def test_mapping_interpolates_deformation():
    spec = DeformSpec()
    m = sample_analytic_mapping(spec, BOX, 8)
    xi = np.array([[0.3, -0.2, 0.7]])
    x = 0.25 * (xi[0] + 1.0)
    assert np.max(np.abs(m.evaluate(xi)[0] - spec(x[:, None])[:, 0])) < 1e-6


def test_gauss_geometry_nodes_supported():
    m = sample_analytic_mapping(DeformSpec(), BOX, 3, node_kind=GAUSS)
    faces = extract_faces(m)
    ref = m.evaluate([(-1.0, 0.2, -0.4)])[0]
    np.testing.assert_allclose(faces[0].evaluate([(0.2, -0.4)])[0], ref, atol=1e-14)


def test_inverted_element_detected():
    with pytest.raises(InvertedElementError):
        sample_analytic_mapping(DeformSpec(amplitude=2.0), ((0, 0, 0), (1, 1, 1)), 4)
    with pytest.raises(ValueError):
        sample_analytic_mapping(DeformSpec(), BOX, 0)
    with pytest.raises(ValueError):
        sample_analytic_mapping(DeformSpec(), ((0, 0, 0), (0, 1, 1)), 2)


def test_affine_submap_factors():
    sub = OCTANT_SUBMAPS[5]
    assert sub.volume_scale() == 0.125
    assert sub.beta(0) == 0.25
    fs = sub.face(1)
    assert isinstance(fs, FaceSubmap) and fs.beta == 0.25
    np.testing.assert_allclose(sub(np.array([-1.0, -1.0, -1.0])), [0.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        AffineSubmap((0.5, 0.5, 0.5), (0.6, 0.0, 0.0))


@settings(max_examples=20, deadline=None)
@given(q=st.integers(0, 7), pts=st.lists(st.tuples(*[st.floats(-1, 1)] * 3), min_size=1, max_size=5))
def test_children_are_exact_restrictions(q, pts):
    parent = sample_analytic_mapping(DeformSpec(), BOX, 4)
    child, sub = subdivide_element(parent)[q]
    p = np.array(pts)
    np.testing.assert_allclose(child.evaluate(p), parent.evaluate(sub(p)), atol=1e-13)


def test_child_face_patch_is_watertight_with_parent():
    m = sample_analytic_mapping(DeformSpec(), BOX, 4)
    face = extract_faces(m)[1]
    uv = np.array([[0.1, -0.3], [1.0, 1.0]])
    for q, off in ((1, (-0.5, -0.5)), (4, (0.5, 0.5))):
        child = child_face_patch(face, q)
        np.testing.assert_allclose(child.evaluate(uv), face.evaluate(0.5 * uv + off), atol=1e-14)
    same = restrict_face_patch(face, FaceSubmap((1.0, 1.0), (0.0, 0.0)))
    np.testing.assert_allclose(same.coords, face.coords, atol=1e-15)


def test_watertight_refined_mesh():
    mesh = build_mesh(2, (0,), Ng=4)
    rep = watertight_residual(mesh)
    assert rep["max_gap"] <= 1e-12


def test_resampled_child_breaks_watertightness():
    mesh = build_mesh(2, (0,), Ng=4)
    # replace one child by an element resampled from the analytic geometry
    els = list(mesh.elements)
    e = next(i for i, el in enumerate(els) if el.level == 1)
    el = els[e]
    resampled = sample_analytic_mapping(mesh.deform, el.box, mesh.Ng, node_kind=LOBATTO)
    from dataclasses import replace
    els[e] = replace(el, mapping=resampled)
    broken = replace(mesh, elements=tuple(els))
    assert watertight_residual(broken)["max_gap"] > 1e-8


def test_dump_geometry_lines(tmp_path):
    mesh = build_mesh(2, (), Ng=1)
    path = tmp_path / "geo.txt"
    with open(path, "w") as fh:
        dump_geometry(mesh, fh)
    lines = path.read_text().splitlines()
    assert len(lines) == 8 * 8
    assert len(lines[0].split()) == 7
