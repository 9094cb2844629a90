"""Semi-discrete nodal DGSEM for the 3D compressible Euler equations.

Strong (penalty) form on curved hexahedra with a Lax-Friedrichs surface
flux, conforming faces and 4:1 mortars, plus a flux-differencing volume
operator used to check the constant-state identity.  Periodic meshes only.

State arrays are (E, 5, n, n, n) with conserved variables
(rho, rho v1, rho v2, rho v3, E) in that order.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import face_axis_side
from .metrics import (
    CURL_FORM,
    OVERINTEGRATED,
    assemble_metrics,
    child_face_metric,
)
from .spectral import (
    GAUSS,
    NODE_KINDS,
    apply_along,
    boundary_interpolation_vector,
    build_node_set,
    interpolation_matrix,
)

logger = logging.getLogger(__name__)

GAMMA = 1.4


class NonphysicalStateError(ValueError):
    pass


class SolverBlowUp(RuntimeError):
    pass


# --------------------------------------------------------------------------
# gas dynamics, state axis first: u has shape (5, ...)


def primitive_to_conservative(rho, v, p, gamma=GAMMA):
    v = np.asarray(v, dtype=float)
    E = p / (gamma - 1.0) + 0.5 * rho * np.dot(v, v)
    return np.array([rho, rho * v[0], rho * v[1], rho * v[2], E], dtype=float)


def pressure(u, gamma=GAMMA):
    return (gamma - 1.0) * (u[4] - 0.5 * (u[1] ** 2 + u[2] ** 2 + u[3] ** 2) / u[0])


def check_state(u, gamma=GAMMA):
    if not (np.all(u[0] > 0) and np.all(pressure(u, gamma) > 0)):
        raise NonphysicalStateError("nonpositive density or pressure")


def euler_physical_flux(u, gamma=GAMMA):
    """Cartesian flux components f_1, f_2, f_3 stacked as (3, 5, ...)."""
    u = np.asarray(u, dtype=float)
    rho = u[0]
    v = u[1:4] / rho
    p = pressure(u, gamma)
    f = np.empty((3,) + u.shape, dtype=float)
    for d in range(3):
        f[d, 0] = u[1 + d]
        f[d, 1:4] = u[1 + d] * v
        f[d, 1 + d] += p
        f[d, 4] = v[d] * (u[4] + p)
    return f


def sound_speed(u, gamma=GAMMA):
    return np.sqrt(gamma * pressure(u, gamma) / u[0])


def lax_friedrichs_numerical_flux(uL, uR, nvec, gamma=GAMMA):
    """Local Lax-Friedrichs flux across a scaled normal ``nvec`` (3, ...).

    1/2 (f(uL) + f(uR)).n - 1/2 lambda |n| (uR - uL), lambda the largest
    |v.nhat| + c of the two states.
    """
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    nvec = np.asarray(nvec, dtype=float)
    fL = euler_physical_flux(uL, gamma)
    fR = euler_physical_flux(uR, gamma)
    fn = 0.5 * np.einsum("c...,cv...->v...", nvec, fL + fR)
    nmag = np.sqrt(np.sum(nvec**2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        vnL = np.abs(np.einsum("c...,c...->...", nvec, uL[1:4] / uL[0])) / nmag
        vnR = np.abs(np.einsum("c...,c...->...", nvec, uR[1:4] / uR[0])) / nmag
    lam = np.maximum(vnL + sound_speed(uL, gamma), vnR + sound_speed(uR, gamma))
    return fn - 0.5 * lam * nmag * (uR - uL)


# --------------------------------------------------------------------------
# element operators, single element: U (5, n, n, n), metrics Ja (3, 3, n, n, n)


def contravariant_volume_flux(U, ms, gamma=GAMMA):
    """Ftilde^i = sum_c Ja^i_c f_c at the nodes, shape (3, 5, n, n, n)."""
    f = euler_physical_flux(U, gamma)
    return np.einsum("icxyz,cvxyz->ivxyz", ms.Ja, f)


def strong_divergence(Ft, D):
    """sum_i D applied along xi^i to Ft[i] (trailing three grid axes)."""
    return (np.einsum("aj,...jkl->...akl", D, Ft[0])
            + np.einsum("aj,...kjl->...kal", D, Ft[1])
            + np.einsum("aj,...klj->...kla", D, Ft[2]))


def flux_difference_volume(U, ms, gamma=GAMMA):
    """Split-form volume term with the arithmetic-mean two-point flux.

    2 sum_m D_im (F#(U_i, U_m) . {Ja^1}_(i,m)) + the same along eta, zeta,
    where F#(a, b) = (f(a) + f(b))/2 is consistent and symmetric.
    """
    D = ms.ns.D
    f = euler_physical_flux(U, gamma)  # (3, 5, n, n, n)
    Ja = ms.Ja
    out = np.zeros(U.shape)
    for i in range(3):
        fi = np.moveaxis(f, 2 + i, -1)  # (3, 5, ..., n)
        ji = np.moveaxis(Ja[i], 1 + i, -1)  # (3, ..., n)
        fa = 0.5 * (fi[..., :, None] + fi[..., None, :])
        ja = 0.5 * (ji[..., :, None] + ji[..., None, :])
        two_point = np.einsum("cv...im,c...im->v...im", fa, ja)
        s = 2.0 * np.einsum("im,v...im->v...i", D, two_point)
        out += np.moveaxis(s, -1, 1 + i)
    return out


def face_trace(arr, face, ns):
    """Evaluate nodal data (..., n, n, n) on local face ``face`` -> (..., n, n)."""
    axis, side = face_axis_side(face)
    b = boundary_interpolation_vector(ns, side)
    return np.tensordot(arr, b, axes=(arr.ndim - 3 + axis, 0))


# --------------------------------------------------------------------------
# mortars


@functools.lru_cache(maxsize=None)
def mortar_operators(kind, N, sub):
    """Restriction (parent face -> child nodes) and L2 projection matrices.

    Returns ((Ru, Rv), (Pu, Pv)) for the face submap ``sub``.  The projection
    uses exact quadrature: P = M^{-1} S with M_jk = int l_j l_k and
    S_jm = alpha int l_j(alpha xi + c) l_m(xi) dxi.
    """
    ns = build_node_set(kind, N)
    q = build_node_set(GAUSS, N + 1)
    Lq = interpolation_matrix(ns, q.nodes)
    M = Lq.T @ (q.weights[:, None] * Lq)
    R, P = [], []
    for a, c in zip(sub.alpha, sub.offset):
        R.append(interpolation_matrix(ns, a * ns.nodes + c))
        Lp = interpolation_matrix(ns, a * q.nodes + c)
        S = a * Lp.T @ (q.weights[:, None] * Lq)
        P.append(np.linalg.solve(M, S))
    return tuple(R), tuple(P)


def project_to_parent(child_fluxes, submaps, ns):
    """L2 projection of per-quadrant nodal face data onto the parent face space.

    Each child field is divided by its beta so the result is expressed with
    the parent's metric scaling: sum_q (Pu_q F_q Pv_q^T) / beta_q.
    """
    out = 0.0
    for F, sub in zip(child_fluxes, submaps):
        _, (Pu, Pv) = mortar_operators(ns.kind, ns.degree, sub)
        out = out + (Pu @ F @ Pv.T) / sub.beta
    return out


def mortar_surface_exchange(mortar, parent_trace, child_traces, face_metric, ns,
                            gamma=GAMMA, child_normals=None):
    """Numerical fluxes on both sides of a 4:1 mortar, oriented along +axis.

    The parent trace polynomial is restricted to each child's quarter, the
    Lax-Friedrichs flux is evaluated at the child face nodes with the
    beta-scaled parent face metric, children use those nodal fluxes as is,
    and the parent receives their L2 projection onto its face polynomials.
    ``child_normals`` optionally supplies the precomputed child face metrics.
    Returns (parent_flux (5, n, n), child_fluxes (4, 5, n, n)).
    """
    parent_left = mortar.parent_side > 0
    child_fluxes = np.empty((len(mortar.children),) + parent_trace.shape)
    for q, sub in enumerate(mortar.submaps):
        (Ru, Rv), _ = mortar_operators(ns.kind, ns.degree, sub)
        up = Ru @ parent_trace @ Rv.T
        if child_normals is None:
            nstar = child_face_metric(face_metric, sub, ns).values
        else:
            nstar = child_normals[q]
        uc = child_traces[q]
        F = lax_friedrichs_numerical_flux(up, uc, nstar, gamma) if parent_left else \
            lax_friedrichs_numerical_flux(uc, up, nstar, gamma)
        child_fluxes[q] = F
    return project_to_parent(child_fluxes, mortar.submaps, ns), child_fluxes


# --------------------------------------------------------------------------
# whole-mesh discretization


@dataclass
class SolverConfig:
    N: int = 4
    node_kind: str = GAUSS
    flux: str = "lax_friedrichs"
    CFL: float = 0.5
    T: float = 0.5
    strategy: str = CURL_FORM
    M: int | None = None
    gamma: float = GAMMA

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.node_kind not in NODE_KINDS:
            raise ValueError(f"node kind must be one of {NODE_KINDS}")
        if self.flux != "lax_friedrichs":
            raise ValueError("only the lax_friedrichs flux is implemented")
        if not 0.0 < self.CFL <= 1.0:
            raise ValueError("CFL must lie in (0, 1]")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.strategy == OVERINTEGRATED:
            if self.M is None or self.M <= self.N:
                raise ValueError("overintegration needs M > N")

    @property
    def work_degree(self):
        return self.M if self.strategy == OVERINTEGRATED else self.N


@dataclass
class Discretization:
    """Precomputed metrics, traces and face bookkeeping for one mesh."""

    mesh: object
    config: SolverConfig
    ns: object = field(init=False)
    ns_work: object = field(init=False)
    metrics: object = field(init=False)

    def __post_init__(self):
        cfg = self.config
        self.ns = build_node_set(cfg.node_kind, cfg.N)
        self.ns_work = build_node_set(cfg.node_kind, cfg.work_degree)
        self.metrics = assemble_metrics(self.mesh, self.ns_work, cfg.strategy)
        w = self.ns_work
        self.Ja = np.stack([ms.Ja for ms in self.metrics.volume])  # (E, 3, 3, n, n, n)
        self.J = np.stack([ms.J for ms in self.metrics.volume])
        self.D = w.D
        self.bvec = {s: boundary_interpolation_vector(w, s) for s in (-1, 1)}
        self.lift = {s: self.bvec[s] / w.weights for s in (-1, 1)}
        conf = self.mesh.conforming
        self.cL = np.array([f.left for f in conf], dtype=int).reshape(-1, 2)
        self.cR = np.array([f.right for f in conf], dtype=int).reshape(-1, 2)
        self.c_nstar = np.stack([fm.values for fm in self.metrics.conforming]) if conf else None
        self.m_nstar = [np.stack([child_face_metric(fm, sub, w).values for sub in mf.submaps])
                        for mf, fm in zip(self.mesh.mortars, self.metrics.mortars)]
        if self.ns_work is not self.ns:
            self.to_work = interpolation_matrix(self.ns, w.nodes)
            V = self.to_work
            mass = V.T @ (w.weights[:, None] * V)
            self.to_sol = np.linalg.solve(mass, V.T * w.weights[None, :])
        else:
            self.to_work = self.to_sol = None

    @property
    def n_elements(self):
        return len(self.mesh.elements)

    def initial_state(self, u_const):
        n = self.ns.n
        U = np.empty((self.n_elements, 5, n, n, n))
        U[:] = np.asarray(u_const, dtype=float)[None, :, None, None, None]
        return U

    def node_coordinates(self):
        return np.stack([el.mapping.sample_at((self.ns,) * 3) for el in self.mesh.elements])

    def stable_dt(self, U, CFL):
        """CFL * min node spacing / (sum_i contravariant wave speed)."""
        Uw = self._to_work(U)
        u = np.moveaxis(Uw, 1, 0)
        c = sound_speed(u, self.config.gamma)
        v = u[1:4] / u[0]
        Ja = np.moveaxis(self.Ja, 2, 0)  # (3c, E, 3i, n, n, n)
        vJ = np.abs(np.einsum("ce...,cei...->ei...", v, Ja))
        nJ = np.sqrt(np.sum(Ja**2, axis=0))
        speed = np.sum(vJ + c[:, None] * nJ, axis=1) / self.J
        dxi = float(np.min(np.diff(self.ns.nodes))) if self.ns.n > 1 else 2.0
        return CFL * dxi / float(speed.max())

    def _to_work(self, U):
        if self.to_work is None:
            return U
        T = self.to_work
        return np.einsum("aj,bk,cl,evjkl->evabc", T, T, T, U, optimize=True)

    def _to_sol(self, R):
        if self.to_sol is None:
            return R
        P = self.to_sol
        return np.einsum("aj,bk,cl,evjkl->evabc", P, P, P, R, optimize=True)

    def rhs(self, U):
        """dU/dt at every node, (E, 5, n, n, n), already divided by J."""
        g = self.config.gamma
        Uw = self._to_work(U)
        u = np.moveaxis(Uw, 1, 0)  # (5, E, n, n, n)
        f = np.swapaxes(euler_physical_flux(u, g), 1, 2)  # (3c, E, 5, ...)
        Ja = self.Ja[:, :, :, None]
        Ft = np.stack([sum(Ja[:, i, c] * f[c] for c in range(3)) for i in range(3)], axis=1)
        D = self.D
        JUt = -(apply_along(D, Ft[:, 0], 2) + apply_along(D, Ft[:, 1], 3)
                + apply_along(D, Ft[:, 2], 4))

        E = Uw.shape[0]
        n = Uw.shape[-1]
        Utr = np.empty((E, 6, 5, n, n))
        Ftr = np.empty((E, 6, 5, n, n))
        for face in range(6):
            axis, side = face_axis_side(face)
            b = self.bvec[side]
            Utr[:, face] = np.tensordot(Uw, b, axes=(2 + axis, 0))
            Ftr[:, face] = np.tensordot(Ft[:, axis], b, axes=(2 + axis, 0))

        Fstar = np.empty_like(Ftr)
        if len(self.cL):
            uL = np.moveaxis(Utr[self.cL[:, 0], self.cL[:, 1]], 1, 0)
            uR = np.moveaxis(Utr[self.cR[:, 0], self.cR[:, 1]], 1, 0)
            nst = np.moveaxis(self.c_nstar, 1, 0)
            F = np.moveaxis(lax_friedrichs_numerical_flux(uL, uR, nst, g), 0, 1)
            Fstar[self.cL[:, 0], self.cL[:, 1]] = F
            Fstar[self.cR[:, 0], self.cR[:, 1]] = F
        for mf, fm, cn in zip(self.mesh.mortars, self.metrics.mortars, self.m_nstar):
            pe, pf = mf.parent
            ctr = np.stack([Utr[e, f] for e, f in mf.children])
            Fp, Fc = mortar_surface_exchange(mf, Utr[pe, pf], ctr, fm, self.ns_work, g, cn)
            Fstar[pe, pf] = Fp
            for (e, f), Fq in zip(mf.children, Fc):
                Fstar[e, f] = Fq

        jump = Fstar - Ftr
        for face in range(6):
            axis, side = face_axis_side(face)
            lv = side * self.lift[side]
            shape = [1, 1, 1, 1, 1]
            shape[2 + axis] = lv.size
            JUt -= lv.reshape(shape) * np.expand_dims(jump[:, face], 2 + axis)
        return self._to_sol(JUt / self.J[:, None])


def semidiscrete_rhs(mesh, states, config, disc=None):
    disc = disc if disc is not None else Discretization(mesh, config)
    check_state(np.moveaxis(states, 1, 0), config.gamma)
    return disc.rhs(states)


# Carpenter & Kennedy (1994), five-stage fourth-order 2N-storage scheme
RK_A = (0.0,
        -567301805773.0 / 1357537059087.0,
        -2404267990393.0 / 2016746695238.0,
        -3550918686646.0 / 2091501179385.0,
        -1275806237668.0 / 842570457699.0)
RK_B = (1432997174477.0 / 9575080441755.0,
        5161836677717.0 / 13612068292357.0,
        1720146321549.0 / 2090206949498.0,
        3134564353537.0 / 4481467310338.0,
        2277821191437.0 / 14882151754819.0)
RK_C = (0.0,
        1432997174477.0 / 9575080441755.0,
        2526269341429.0 / 6820363183019.0,
        2006345519317.0 / 3224310063776.0,
        2802321613138.0 / 2924317926251.0)


@dataclass
class AdvanceResult:
    states: np.ndarray
    error_trace: np.ndarray
    steps: int
    dt: float

    @property
    def max_density_error(self):
        return float(self.error_trace.max()) if self.error_trace.size else 0.0


def rk_advance(mesh, states, config, T=None, disc=None, reference=None, rhs=None):
    """Integrate to time ``T`` with the low-storage RK scheme.

    The step size is frozen from the initial state.  ``reference`` is the
    density the error trace is measured against (default: the initial
    density field).  ``rhs`` overrides the right-hand side, e.g. for tests.
    """
    disc = disc if disc is not None else Discretization(mesh, config)
    T = config.T if T is None else T
    U = np.array(states, dtype=float)
    rho0 = U[:, 0].copy() if reference is None else reference
    trace = [float(np.max(np.abs(U[:, 0] - rho0)))]
    if T <= 0:
        return AdvanceResult(U, np.array(trace), 0, 0.0)
    rhs = rhs if rhs is not None else disc.rhs
    dt_max = disc.stable_dt(U, config.CFL)
    steps = max(1, math.ceil(T / dt_max - 1e-12))
    dt = T / steps
    G = np.zeros_like(U)
    t = 0.0
    for step in range(steps):
        for a, b, c in zip(RK_A, RK_B, RK_C):
            G = a * G + rhs(U) if a else rhs(U)
            U = U + b * dt * G
        t = (step + 1) * dt
        if not np.all(np.isfinite(U)) or np.any(U[:, 0] <= 0):
            raise SolverBlowUp(f"blow-up at step {step + 1}, t={t:.4g}")
        trace.append(float(np.max(np.abs(U[:, 0] - rho0))))
    return AdvanceResult(U, np.array(trace), steps, dt)
