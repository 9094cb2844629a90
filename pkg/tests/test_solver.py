import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freestream_dg.geometry import DeformSpec, FaceSubmap, sample_analytic_mapping
from freestream_dg.mesh import build_mesh
from freestream_dg.metrics import (
    CROSS_PRODUCT,
    OVERINTEGRATED,
    PARENT_INHERITED,
    covariant_basis,
    metric_divergence,
    metrics_cross_product,
    metrics_curl_form,
)
from freestream_dg.solver import (
    Discretization,
    NonphysicalStateError,
    SolverBlowUp,
    SolverConfig,
    contravariant_volume_flux,
    euler_physical_flux,
    flux_difference_volume,
    lax_friedrichs_numerical_flux,
    mortar_operators,
    mortar_surface_exchange,
    pressure,
    primitive_to_conservative,
    project_to_parent,
    rk_advance,
    semidiscrete_rhs,
    sound_speed,
    strong_divergence,
)
from freestream_dg.spectral import GAUSS, LOBATTO, build_node_set, interpolation_matrix

FREESTREAM = primitive_to_conservative(0.7, (0.2, 0.3, -0.4), 1.0)
BOX = ((0.0, 0.5, 0.0), (0.5, 1.0, 0.5))


def const_state(u, n):
    return np.broadcast_to(np.asarray(u)[:, None, None, None], (5, n, n, n)).copy()


def test_flux_at_rest_is_pure_pressure():
    u = primitive_to_conservative(1.0, (0, 0, 0), 1.0)
    f = euler_physical_flux(u)
    np.testing.assert_allclose(f[0], [0, 1, 0, 0, 0])
    np.testing.assert_allclose(f[2], [0, 0, 0, 1, 0])


def test_flux_homogeneous_degree_one():
    u = FREESTREAM
    np.testing.assert_allclose(euler_physical_flux(2 * u), 2 * euler_physical_flux(u), rtol=1e-14)


def test_pressure_and_sound_speed_roundtrip():
    assert pressure(FREESTREAM) == pytest.approx(1.0, abs=1e-14)
    assert sound_speed(FREESTREAM) == pytest.approx(np.sqrt(1.4 / 0.7), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(rL=st.floats(0.1, 3), rR=st.floats(0.1, 3), pL=st.floats(0.1, 3), pR=st.floats(0.1, 3),
       n=st.tuples(*[st.floats(-2, 2)] * 3).filter(lambda t: np.linalg.norm(t) > 1e-3))
def test_lax_friedrichs_consistency_and_antisymmetry(rL, rR, pL, pR, n):
    uL = primitive_to_conservative(rL, (0.1, -0.2, 0.3), pL)
    uR = primitive_to_conservative(rR, (-0.3, 0.1, 0.2), pR)
    n = np.array(n)
    Fc = lax_friedrichs_numerical_flux(uL, uL, n)
    np.testing.assert_allclose(Fc, np.einsum("c,cv->v", n, euler_physical_flux(uL)), rtol=1e-13, atol=1e-13)
    F1 = lax_friedrichs_numerical_flux(uL, uR, n)
    F2 = lax_friedrichs_numerical_flux(uR, uL, -n)
    np.testing.assert_allclose(F1, -F2, rtol=1e-13, atol=1e-13)


def test_lax_friedrichs_dissipation_by_hand():
    uL = primitive_to_conservative(1.0, (0, 0, 0), 1.0)
    uR = primitive_to_conservative(2.0, (0, 0, 0), 1.0)
    F = lax_friedrichs_numerical_flux(uL, uR, np.array([2.0, 0.0, 0.0]))
    lam = np.sqrt(1.4)  # larger sound speed is on the light side
    assert F[0] == pytest.approx(-0.5 * lam * 2.0 * (2.0 - 1.0))
    assert F[1] == pytest.approx(2.0 * 1.0)


def test_nonphysical_state_rejected():
    mesh = build_mesh(2, (), Ng=1)
    cfg = SolverConfig(N=2)
    disc = Discretization(mesh, cfg)
    U = disc.initial_state(FREESTREAM)
    U[3, 0, 1, 1, 1] = -1.0
    with pytest.raises(NonphysicalStateError):
        semidiscrete_rhs(mesh, U, cfg, disc)


def test_solver_config_invariants():
    for bad in (dict(N=0), dict(CFL=0.0), dict(CFL=1.5), dict(T=-1.0), dict(flux="roe"),
                dict(strategy=OVERINTEGRATED, M=4), dict(node_kind="cheb")):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def affine_metrics(ns, diag=(2.0, 3.0, 1.0)):
    lob = build_node_set(LOBATTO, 1)
    from freestream_dg.geometry import ElementMapping
    g = np.meshgrid(*(d * lob.nodes for d in diag), indexing="ij")
    return metrics_curl_form(ElementMapping(1, LOBATTO, np.stack(g)), ns)


def test_contravariant_flux_identity_and_diag_metrics():
    ns = build_node_set(GAUSS, 2)
    U = const_state(primitive_to_conservative(1.0, (0, 0, 0), 1.0), ns.n)
    ms = affine_metrics(ns, (1.0, 1.0, 1.0))
    Ft = contravariant_volume_flux(U, ms)
    np.testing.assert_allclose(Ft, euler_physical_flux(U), atol=1e-14)
    Ft = contravariant_volume_flux(U, affine_metrics(ns))
    # Ja^1 = (3, 0, 0): F~^1 = 3 f_1 = (0, 3p, 0, 0, 0)
    np.testing.assert_allclose(Ft[0, :, 1, 1, 1], [0, 3, 0, 0, 0], atol=1e-14)


def test_strong_divergence_oracles():
    ns = build_node_set(GAUSS, 4)
    n = ns.n
    Ft = np.zeros((3, 5, n, n, n))
    assert np.all(strong_divergence(Ft + 1.0, ns.D) == pytest.approx(0.0, abs=1e-13))
    Ft[0] = ns.nodes[None, :, None, None]
    np.testing.assert_allclose(strong_divergence(Ft, ns.D), 1.0, atol=1e-13)


@pytest.mark.parametrize("kind", [GAUSS, LOBATTO])
def test_flux_difference_identity_at_constant_state(kind):
    ns = build_node_set(kind, 4)
    m = sample_analytic_mapping(DeformSpec(), BOX, 4)
    ms = metrics_cross_product(covariant_basis(m, ns), ns)
    U = const_state(FREESTREAM, ns.n)
    lhs = flux_difference_volume(U, ms)
    rhs = np.einsum("cv,cxyz->vxyz", euler_physical_flux(FREESTREAM), metric_divergence(ms))
    assert np.max(np.abs(rhs)) > 1e-6  # nontrivial
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    # with curl metrics both sides vanish
    ms = metrics_curl_form(m, ns)
    assert np.max(np.abs(flux_difference_volume(U, ms))) <= 1e-11


def test_flux_difference_matches_strong_form_for_affine_metrics():
    ns = build_node_set(GAUSS, 3)
    ms = affine_metrics(ns)
    rng = np.random.default_rng(1)
    rho = 1.0 + 0.1 * rng.random((ns.n,) * 3)
    U = np.stack([rho, 0.1 * rho, 0.2 * rho, -0.1 * rho, 2.5 + 0.03 * rho])
    a = flux_difference_volume(U, ms)
    b = strong_divergence(contravariant_volume_flux(U, ms), ns.D)
    np.testing.assert_allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("kind", [GAUSS, LOBATTO])
def test_mortar_restriction_exact(kind):
    ns = build_node_set(kind, 4)
    sub = FaceSubmap((0.5, 0.5), (0.5, -0.5))
    (Ru, Rv), _ = mortar_operators(kind, 4, sub)
    x = ns.nodes
    f = np.add.outer(x**4, x**3 * 0.5)
    ref = np.add.outer((0.5 * x + 0.5) ** 4, 0.5 * (0.5 * x - 0.5) ** 3)
    np.testing.assert_allclose(Ru @ f @ Rv.T, ref, atol=1e-13)


@pytest.mark.parametrize("kind", [GAUSS, LOBATTO])
def test_mortar_projection_reproduces_polynomials(kind):
    ns = build_node_set(kind, 4)
    mesh = build_mesh(2, (0,), Ng=2)
    mf = mesh.mortars[0]
    x = ns.nodes
    f = np.add.outer(x**4, x**2 * x[0])
    children = []
    for sub in mf.submaps:
        (Ru, Rv), _ = mortar_operators(kind, 4, sub)
        children.append(sub.beta * (Ru @ f @ Rv.T))
    np.testing.assert_allclose(project_to_parent(children, mf.submaps, ns), f, atol=1e-12)


def _exact_face_integral(ns, F, G):
    q = build_node_set(GAUSS, ns.degree + 1)
    T = interpolation_matrix(ns, q.nodes)
    w = np.outer(q.weights, q.weights)
    return np.sum(w * (T @ F @ T.T) * (T @ G @ T.T))


@pytest.mark.parametrize("kind", [GAUSS, LOBATTO])
def test_mortar_conservation_identity(kind):
    ns = build_node_set(kind, 4)
    mf = build_mesh(2, (0,), Ng=2).mortars[0]
    rng = np.random.default_rng(7)
    for _ in range(10):
        children = rng.standard_normal((4, ns.n, ns.n))
        P = project_to_parent(children, mf.submaps, ns)
        for j in range(ns.n):
            for k in range(ns.n):
                phi = np.zeros((ns.n, ns.n))
                phi[j, k] = 1.0
                lhs = _exact_face_integral(ns, P, phi)
                rhs = 0.0
                for Fq, sub in zip(children, mf.submaps):
                    (Ru, Rv), _ = mortar_operators(kind, 4, sub)
                    rhs += sub.beta * _exact_face_integral(ns, Fq / sub.beta, Ru @ phi @ Rv.T)
                assert abs(lhs - rhs) <= 1e-12


def test_mortar_exchange_constant_state():
    mesh = build_mesh(2, (0,), Ng=2)
    ns = build_node_set(GAUSS, 4)
    disc = Discretization(mesh, SolverConfig(N=4))
    mf, fm = mesh.mortars[0], disc.metrics.mortars[0]
    trace = np.broadcast_to(FREESTREAM[:, None, None], (5, ns.n, ns.n))
    Fp, Fc = mortar_surface_exchange(mf, trace, np.stack([trace] * 4), fm, ns)
    ref = np.einsum("cab,cv->vab", fm.values, euler_physical_flux(FREESTREAM))
    np.testing.assert_allclose(Fp, ref, atol=1e-13)
    # children see the beta-scaled parent metric
    child_ref = np.einsum("cab,cv->vab", disc.m_nstar[0][0], euler_physical_flux(FREESTREAM))
    np.testing.assert_allclose(Fc[0], child_ref, atol=1e-13)
    assert np.max(np.abs(Fc[0])) < 0.3 * np.max(np.abs(Fp))


@pytest.mark.parametrize("kind", [GAUSS, LOBATTO])
@pytest.mark.parametrize(
    "Ng,N,strategy,extruded,preserved",
    [
        (2, 4, "curl_form", False, True),
        (4, 4, "curl_form", True, True),
        (4, 4, PARENT_INHERITED, False, True),
        (4, 4, "curl_form", False, False),
        (4, 4, CROSS_PRODUCT, False, False),
    ],
)
def test_freestream_rhs(kind, Ng, N, strategy, extruded, preserved):
    mesh = build_mesh(2, (0,), Ng=Ng, extruded=extruded)
    cfg = SolverConfig(N=N, node_kind=kind, strategy=strategy)
    disc = Discretization(mesh, cfg)
    r = semidiscrete_rhs(mesh, disc.initial_state(FREESTREAM), cfg, disc)
    if preserved:
        assert np.max(np.abs(r)) <= 1e-10
    else:
        assert np.max(np.abs(r)) > 1e-9


def test_overintegrated_rhs_preserves():
    mesh = build_mesh(2, (0,), Ng=4)
    cfg = SolverConfig(N=4, strategy=OVERINTEGRATED, M=8)
    disc = Discretization(mesh, cfg)
    assert np.max(np.abs(disc.rhs(disc.initial_state(FREESTREAM)))) <= 1e-10


def test_rhs_is_deterministic():
    mesh = build_mesh(2, (0,), Ng=3)
    disc = Discretization(mesh, SolverConfig(N=3))
    U = disc.initial_state(FREESTREAM)
    assert np.array_equal(disc.rhs(U), disc.rhs(U))


def test_rk_zero_time_unchanged():
    mesh = build_mesh(2, (), Ng=1)
    cfg = SolverConfig(N=2, T=0.0)
    disc = Discretization(mesh, cfg)
    U = disc.initial_state(FREESTREAM)
    res = rk_advance(mesh, U, cfg, disc=disc)
    assert res.steps == 0 and np.array_equal(res.states, U)


def test_rk_violation_grows_and_persists():
    mesh = build_mesh(2, (0,), Ng=4)
    cfg = SolverConfig(N=4, T=0.05)
    disc = Discretization(mesh, cfg)
    res = rk_advance(mesh, disc.initial_state(FREESTREAM), cfg, disc=disc)
    tr = res.error_trace
    assert tr[0] == 0.0
    assert tr[-1] > 1e-9 and tr[-1] >= 0.5 * tr.max()


def test_rk_blow_up_detected():
    mesh = build_mesh(2, (), Ng=1)
    cfg = SolverConfig(N=2, T=0.01)
    disc = Discretization(mesh, cfg)
    with pytest.raises(SolverBlowUp):
        rk_advance(mesh, disc.initial_state(FREESTREAM), cfg, disc=disc,
                   rhs=lambda U: np.full_like(U, np.nan))


def test_rk_fourth_order_on_linear_ode():
    mesh = build_mesh(2, (), Ng=1)
    disc = Discretization(mesh, SolverConfig(N=1))
    U0 = disc.initial_state(FREESTREAM)
    errs = []
    for cfl in (0.4, 0.2):
        cfg = SolverConfig(N=1, T=1.0, CFL=cfl)
        res = rk_advance(mesh, U0, cfg, disc=disc, rhs=lambda U: -U)
        errs.append(np.max(np.abs(res.states - U0 * np.exp(-1.0))))
    assert errs[0] / errs[1] > 12


def advect_error(N, T=0.1):
    mesh = build_mesh(2, (), Ng=1, deform=DeformSpec(amplitude=0.0))
    cfg = SolverConfig(N=N, T=T, CFL=0.3)
    disc = Discretization(mesh, cfg)
    x = disc.node_coordinates()
    vel, p = np.array([1.0, 0.5, 0.0]), 1.0

    def state(t):
        rho = 1.0 + 0.2 * np.sin(2 * np.pi * (x[:, 0] - vel[0] * t + x[:, 1] - vel[1] * t))
        U = np.empty((x.shape[0], 5) + x.shape[2:])
        U[:, 0] = rho
        U[:, 1:4] = rho[:, None] * vel[None, :, None, None, None]
        U[:, 4] = p / 0.4 + 0.5 * rho * (vel @ vel)
        return U

    res = rk_advance(mesh, state(0.0), cfg, disc=disc)
    return float(np.max(np.abs(res.states[:, 0] - state(T)[:, 0])))


def test_density_wave_converges_spectrally():
    errs = [advect_error(N) for N in range(2, 7)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-4 and errs[0] / errs[-1] > 100


def test_stable_dt_scales_with_cfl():
    mesh = build_mesh(2, (0,), Ng=2)
    disc = Discretization(mesh, SolverConfig(N=3))
    U = disc.initial_state(FREESTREAM)
    assert disc.stable_dt(U, 0.5) == pytest.approx(2 * disc.stable_dt(U, 0.25))
