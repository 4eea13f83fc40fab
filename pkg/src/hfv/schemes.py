"""The three hybrid finite volume schemes for advection-diffusion problems

    du/dt - div(Lambda (grad u + u grad phi)) = f   in the unit square,

with Dirichlet data g_D, conormal Neumann data g_N, initial datum u_in, and
drift velocity V = -Lambda grad phi.

* 'hmm': diffusion through the local matrices A_K plus an advective two-point
  face flux |sigma| (mu/d) [A(-s) u_K - A(s) u_sigma], s = d V_{K,sigma} / mu,
  where A is a centred, upwind or Scharfetter-Gummel flux function and
  mu_sigma normalizes the local Peclet number by the smallest eigenvalue of
  Lambda at the neighboring cell centers.
* 'expfit' / 'expfit-harmonic': exponential fitting.  With omega = e^{-phi},
  rho = u / omega solves a pure diffusion problem with tensor omega Lambda;
  the scheme assembles that diffusion problem (omega sampled per pyramid, or
  harmonically averaged over the pyramid edge midpoints) and right-scales the
  columns back to the physical unknown u = omega rho.
* 'nonlinear': positivity-preserving fluxes
  F_{K,sigma}(u) = r_K(u) sum_{sigma'} A_K^{sigma sigma'}
                    (log u_K + phi(x_K) - log u_{sigma'} - phi(x_sigma')),
  where r_K is a positive reconstruction (a mean of face/cell means); solved
  by Newton's method, amenable to the same static condensation as the linear
  schemes because cells never couple to other cells.

Boundary handling: linear schemes eliminate Dirichlet faces with the point
values g_D(x_sigma); the stationary nonlinear scheme keeps Dirichlet faces as
unknowns with the soft residual rows (1/|sigma|) int g_D - u_sigma; the
transient nonlinear scheme (thermal data) enforces u_sigma = rho_D
omega(x_sigma) strongly.  Stationary pure-Neumann problems are closed with the
mass constraint sum |K| u_K = M through a Lagrange multiplier appended as an
extra face unknown, which keeps the cell block diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import discretization as disc
from .discretization import DEFAULT_ETA, DiffusionTensor, DofVector, deltas
from .mesh import TAG_DIRICHLET, TAG_NEUMANN, tag_boundary


class SchemeError(Exception):
    """Ill-posed scheme setup (bad data/config combination)."""


# ---------------------------------------------------------------------------
# Advective flux functions
# ---------------------------------------------------------------------------
# A flux function A must satisfy A(0) = 0, A(-s) - A(s) = s and
# A(-s) + A(s) >= 0; the advective face flux is then
# |sigma| (mu/d) [A(-s) u_K - A(s) u_sigma] with s = d V / mu.

def flux_centred(s):
    s = np.asarray(s, dtype=float)
    return -0.5 * s


def flux_upwind(s):
    s = np.asarray(s, dtype=float)
    return np.maximum(-s, 0.0)


def flux_sg(s):
    """Scharfetter-Gummel: A(s) = s/(e^s - 1) - 1, evaluated stably.

    Near zero the Bernoulli ratio is replaced by its Taylor expansion
    -s/2 + s^2/12 - s^4/720; for large positive s the equivalent form
    s e^{-s}/(1 - e^{-s}) - 1 avoids overflow.
    """
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = np.abs(s) < 1e-5
    pos = ~small & (s > 0)
    neg = ~small & (s <= 0)
    ss = s[small]
    out[small] = -ss / 2 + ss ** 2 / 12 - ss ** 4 / 720
    sp_ = s[pos]
    e = np.exp(-sp_)
    out[pos] = sp_ * e / (1.0 - e) - 1.0
    sn = s[neg]
    out[neg] = sn / np.expm1(sn) - 1.0
    return out


FLUX_FUNCTIONS = {"centred": flux_centred, "upwind": flux_upwind, "sg": flux_sg}


def advective_coefficients(lengths, d, mu, v, flux_kind):
    """Per-face advective flux coefficients (c1, c2).

    The flux is F = c1 u_K - c2 u_sigma with
    c1 = |sigma| (mu/d) A(-s), c2 = |sigma| (mu/d) A(s), s = d v / mu.
    """
    try:
        A = FLUX_FUNCTIONS[flux_kind]
    except KeyError:
        raise SchemeError(
            f"unknown flux kind {flux_kind!r}; choose from "
            f"{sorted(FLUX_FUNCTIONS)}") from None
    s = np.asarray(d) * np.asarray(v) / np.asarray(mu)
    scale = np.asarray(lengths) * np.asarray(mu) / np.asarray(d)
    return scale * A(-s), scale * A(s)


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------

class ProblemData:
    """Continuous problem data on the unit square.

    Parameters
    ----------
    lam : DiffusionTensor or anything its constructor accepts
    phi : scalar field (x, y) -> float, or None for no drift
    grad_phi : optional (x, y) -> (2,) gradient; central differences with
        step 1e-6 h_K are used when omitted
    f : source field or 0
    g_dirichlet, g_neumann : boundary data fields (g_neumann is the conormal
        flux Lambda (grad u + u grad phi) . n)
    u_init : initial datum field (transient problems)
    dirichlet : list of box dicts / callables marking the Dirichlet part of
        the boundary (empty list: pure Neumann problem)
    mass : prescribed total mass (needed for stationary pure-Neumann solves)
    rho_dirichlet : thermal Dirichlet level when g_D = rho_D e^{-phi}
    """

    def __init__(self, lam, phi=None, grad_phi=None, f=0.0, g_dirichlet=None,
                 g_neumann=0.0, u_init=None, dirichlet=(), mass=None,
                 rho_dirichlet=None):
        self.lam = lam if isinstance(lam, DiffusionTensor) else DiffusionTensor(lam)
        self.phi = phi
        self.grad_phi = grad_phi
        self.f = f
        self.g_dirichlet = g_dirichlet
        self.g_neumann = g_neumann
        self.u_init = u_init
        self.dirichlet = list(dirichlet)
        self.mass = mass
        self.rho_dirichlet = rho_dirichlet

    @property
    def pure_neumann(self):
        return len(self.dirichlet) == 0

    def tag(self, mesh):
        """Tag the mesh boundary according to the Dirichlet predicates."""
        return tag_boundary(mesh, self.dirichlet)

    def phi_dof(self, mesh):
        """Point values of phi on cells and faces (zero when no drift)."""
        if self.phi is None:
            return DofVector.zeros(mesh)
        return disc.interpolate(self.phi, mesh)

    def omega_dof(self, mesh):
        """Point values of omega = e^{-phi}."""
        return self.phi_dof(mesh).map(lambda a: np.exp(-a))

    def grad_phi_at(self, points, h_fd):
        """grad phi at points (N, 2).

        grad_phi must return a pair (gx, gy) broadcastable against x; when it
        is missing, central differences with the per-point step h_fd
        (1e-6 h_K of the owner cell) are applied to phi.
        """
        x, y = points[:, 0], points[:, 1]
        if self.grad_phi is not None:
            gx, gy = self.grad_phi(x, y)
            return np.column_stack([
                np.broadcast_to(np.asarray(gx, dtype=float), x.shape),
                np.broadcast_to(np.asarray(gy, dtype=float), x.shape)])
        if self.phi is None:
            return np.zeros((points.shape[0], 2))
        h = np.asarray(h_fd, dtype=float)
        gx = (disc._evaluate(self.phi, x + h, y)
              - disc._evaluate(self.phi, x - h, y)) / (2 * h)
        gy = (disc._evaluate(self.phi, x, y + h)
              - disc._evaluate(self.phi, x, y - h)) / (2 * h)
        return np.column_stack([gx, gy])


_GAUSS2 = 1.0 / (2.0 * np.sqrt(3.0))  # offset of the 2-point Gauss rule


def _face_gauss_points(mesh, faces):
    """The two Gauss points of each face, shapes (n, 2) and (n, 2)."""
    a = mesh.vertices[mesh.face_vertices[faces, 0]]
    b = mesh.vertices[mesh.face_vertices[faces, 1]]
    mid, half = 0.5 * (a + b), (b - a) * _GAUSS2
    return mid - half, mid + half


def face_integrals(mesh, fn, faces):
    """int_sigma fn by the 2-point Gauss rule, for the given faces."""
    p1, p2 = _face_gauss_points(mesh, faces)
    v1 = disc._evaluate(fn, p1[:, 0], p1[:, 1])
    v2 = disc._evaluate(fn, p2[:, 0], p2[:, 1])
    return mesh.face_lengths[faces] * 0.5 * (v1 + v2)


def face_velocities(mesh, data):
    """Mean normal drift V_{K,sigma} = (1/|sigma|) int_sigma -Lambda grad phi . n
    per (cell, face) pair, by the 2-point Gauss rule."""
    if data.phi is None and data.grad_phi is None:
        return np.zeros(mesh.n_cf)
    faces = mesh.cf_face
    p1, p2 = _face_gauss_points(mesh, faces)
    h_fd = 1e-6 * mesh.cell_diameter[mesh.cf_cell]
    out = np.zeros(mesh.n_cf)
    for pts in (p1, p2):
        g = data.grad_phi_at(pts, h_fd)
        lam = data.lam.at(pts)
        v = -np.einsum("nab,nb->na", lam, g)
        out += 0.5 * np.einsum("na,na->n", v, mesh.cf_normal)
    return out


def face_mu(mesh, data):
    """Peclet normalization mu_sigma = min(1, min_K lambda_min(Lambda(x_K)))
    over the owner cells of each face."""
    eig = data.lam.eigmin_at(mesh.cell_center)
    mu = np.full(mesh.n_faces, np.inf)
    np.minimum.at(mu, mesh.cf_face, eig[mesh.cf_cell])
    return np.minimum(mu, 1.0)


# ---------------------------------------------------------------------------
# Scheme configuration
# ---------------------------------------------------------------------------

SCHEME_KINDS = ("hmm", "expfit", "expfit-harmonic", "nonlinear")
M_KINDS = ("arithmetic", "max", "sqrtmean", "logmean")
F_KINDS = ("mean", "max")


@dataclass
class SchemeConfig:
    kind: str = "hmm"
    flux: str = "sg"              # hmm advective flux function
    eta: float = DEFAULT_ETA
    m_kind: str = "arithmetic"    # nonlinear reconstruction: face/cell mean
    f_kind: str = "mean"          # nonlinear reconstruction: combination
    newton_eps: float = 1e-11     # positivity clamp for Newton initial guesses
    newton_tol: float = 1e-11     # relative residual tolerance
    newton_imax: int = 50

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise SchemeError(f"unknown scheme kind {self.kind!r}")
        if self.flux not in FLUX_FUNCTIONS:
            raise SchemeError(f"unknown flux function {self.flux!r}")
        if self.m_kind not in M_KINDS:
            raise SchemeError(f"unknown m_kind {self.m_kind!r}")
        if self.f_kind not in F_KINDS:
            raise SchemeError(f"unknown f_kind {self.f_kind!r}")
        if not self.eta > 0:
            raise SchemeError("eta must be positive")


def tensor_on_pyramids(mesh, data, kind):
    """Per-pyramid diffusion tensor for the requested scheme kind."""
    if kind == "hmm" or kind == "nonlinear":
        return data.lam.at(disc.pyramid_barycenters(mesh))
    if kind == "expfit":
        # Arithmetic average of omega over the 3 corners of each pyramid
        # (the trapezoid rule on a triangle, second-order accurate), times
        # Lambda at the pyramid barycenter.
        lam = data.lam.at(disc.pyramid_barycenters(mesh))
        if data.phi is None:
            return lam
        w = _pyramid_omegas(mesh, data, "corners").mean(axis=1)
        return w[:, None, None] * lam
    if kind == "expfit-harmonic":
        # Harmonic average of omega over the 3 edge midpoints of each
        # pyramid, times Lambda at the cell center.  For steep omega the
        # arithmetic mean above is dominated by the largest sample, while
        # the harmonic mean resolves the resistive (series) behaviour of
        # the weighted flux across the pyramid.
        lam = data.lam.at(mesh.cell_center[mesh.cf_cell])
        if data.phi is None:
            return lam
        w = _pyramid_omegas(mesh, data, "midpoints")
        return (3.0 / (1.0 / w).sum(axis=1))[:, None, None] * lam
    raise SchemeError(f"no pyramid tensor for scheme kind {kind!r}")


def _pyramid_omegas(mesh, data, where):
    """omega = exp(-phi) sampled on each pyramid triangle, shape (n_cf, 3).

    ``where`` selects the sample points: the triangle's "corners" (cell
    center plus the two face endpoints) or its edge "midpoints".
    """
    xk = mesh.cell_center[mesh.cf_cell]
    a = mesh.vertices[mesh.face_vertices[mesh.cf_face, 0]]
    b = mesh.vertices[mesh.face_vertices[mesh.cf_face, 1]]
    if where == "corners":
        points = (xk, a, b)
    else:
        points = ((xk + a) / 2, (a + b) / 2, (b + xk) / 2)
    cols = [np.exp(-disc._evaluate(data.phi, p[:, 0], p[:, 1])) for p in points]
    return np.stack(cols, axis=1)


def harmonic_omega(values):
    """Harmonic mean 3 / sum(1/w) of three edge-midpoint omega values."""
    values = np.asarray(values, dtype=float)
    return 3.0 / (1.0 / values).sum(axis=-1)


# ---------------------------------------------------------------------------
# Linear assembly (hmm and expfit)
# ---------------------------------------------------------------------------

class LinearScheme:
    """Assembled linear scheme in cell/face block form with Dirichlet faces
    eliminated and, for stationary pure-Neumann problems, a mass-constraint
    multiplier appended as an extra face unknown.

    Blocks: diag(d_cells), B (cells x active), C (active x cells),
    E (active x active); right-hand side parts rhs_m / rhs_e, with the
    transient mass term area/dt on the diagonal and area*u_prev/dt added by
    rhs(u_prev).
    """

    def __init__(self, mesh, cfg, data, ops, adv, d_cells, B, C, E, rhs_m,
                 rhs_e, active, dirichlet_values, lagrange, dt):
        self.mesh = mesh
        self.cfg = cfg
        self.data = data
        self.ops = ops
        self.adv = adv     # (c1, c2) per cf row, or None
        self.d_cells = d_cells
        self.B = B
        self.C = C
        self.E = E
        self.rhs_m = rhs_m
        self.rhs_e = rhs_e
        self.active = active
        self.dirichlet_values = dirichlet_values
        self.lagrange = lagrange
        self.dt = dt

    def rhs(self, u_prev_cells=None):
        s_m = self.rhs_m.copy()
        if self.dt is not None:
            s_m += self.mesh.cell_area * np.asarray(u_prev_cells) / self.dt
        return s_m, self.rhs_e.copy()

    def full_solution(self, u_m, u_e):
        """Reassemble a DofVector from cell values and active-face values."""
        faces = self.dirichlet_values.copy()
        n_act = self.active.shape[0]
        faces[self.active] = u_e[:n_act]
        return DofVector(u_m, faces)

    def energy_bilinear(self, v):
        """a(v, v) of the scheme's spatial operator, for dissipation records."""
        total = self.ops.bilinear(v, v)
        if self.adv is not None:
            c1, c2 = self.adv
            vk = v.cells[self.mesh.cf_cell]
            vs = v.faces[self.mesh.cf_face]
            total += float(((c1 * vk - c2 * vs) * (vk - vs)).sum())
        return total


def _expand_local(mesh, ops, col_scale):
    """Expand grouped local matrices into the four global blocks.

    The bilinear form sum_K delta v . A_K delta u contributes, per cell K and
    faces sigma, sigma':  (K,K) += sum A_K;  (K,sigma') -= colsum;
    (sigma,K) -= rowsum;  (sigma,sigma') += A_K^{sigma sigma'}.  col_scale
    right-scales columns (exponential fitting solves in u = omega rho).
    """
    n_c, n_f = mesh.n_cells, mesh.n_faces
    d_cells = np.zeros(n_c)
    me_r, me_c, me_v = [], [], []
    em_r, em_c, em_v = [], [], []
    ee_r, ee_c, ee_v = [], [], []
    sc_cells = col_scale.cells if col_scale is not None else None
    sc_faces = col_scale.faces if col_scale is not None else None
    for m, cells, rows, A in ops.groups:
        faces = mesh.cf_face[rows]                      # (g, m)
        rowsum = A.sum(axis=2)                          # (g, m)
        total = rowsum.sum(axis=1)                      # (g,)
        colsum = A.sum(axis=1)                          # (g, m) (A symmetric)
        if sc_cells is None:
            d_cells[cells] += total
            me_v.append(-colsum)
            em_v.append(-rowsum)
            ee_v.append(A.copy())
        else:
            d_cells[cells] += total / sc_cells[cells]
            me_v.append(-colsum / sc_faces[faces])
            em_v.append(-rowsum / sc_cells[cells][:, None])
            ee_v.append(A / sc_faces[faces][:, None, :])
        me_r.append(np.repeat(cells, m))
        me_c.append(faces.ravel())
        em_r.append(faces.ravel())
        em_c.append(np.repeat(cells, m))
        ee_r.append(np.repeat(faces, m, axis=1).ravel())
        ee_c.append(np.tile(faces, (1, m)).ravel())

    def build(rows, cols, vals, shape):
        return sp.coo_matrix(
            (np.concatenate([v.ravel() for v in vals]),
             (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()

    ME = build(me_r, me_c, me_v, (n_c, n_f))
    EM = build(em_r, em_c, em_v, (n_f, n_c))
    EE = build(ee_r, ee_c, ee_v, (n_f, n_f))
    return d_cells, ME, EM, EE


def assemble_linear(mesh, data, cfg, dt=None, mass_target=None):
    """Assemble the hmm or exponential-fitting scheme.

    dt = None gives the stationary operator; for transient problems the mass
    term area/dt sits on the cell diagonal and rhs(u_prev) completes the
    right-hand side.  Stationary pure-Neumann problems require mass_target.
    """
    if cfg.kind == "nonlinear":
        raise SchemeError("assemble_linear cannot assemble the nonlinear scheme")
    expfit = cfg.kind in ("expfit", "expfit-harmonic")

    tensor_cf = tensor_on_pyramids(mesh, data, cfg.kind)
    ops = disc.build_local_ops(mesh, tensor_cf, eta=cfg.eta)
    col_scale = data.omega_dof(mesh) if (expfit and data.phi is not None) else None
    d_cells, ME, EM, EE = _expand_local(mesh, ops, col_scale)

    adv = None
    if cfg.kind == "hmm" and (data.phi is not None or data.grad_phi is not None):
        v = face_velocities(mesh, data)
        mu = face_mu(mesh, data)[mesh.cf_face]
        c1, c2 = advective_coefficients(mesh.face_lengths[mesh.cf_face],
                                        mesh.cf_d, mu, v, cfg.flux)
        adv = (c1, c2)
        cells, faces = mesh.cf_cell, mesh.cf_face
        np.add.at(d_cells, cells, c1)
        ME = ME + sp.coo_matrix((-c2, (cells, faces)),
                                shape=ME.shape).tocsr()
        EM = EM + sp.coo_matrix((-c1, (faces, cells)),
                                shape=EM.shape).tocsr()
        EE = EE + sp.coo_matrix((c2, (faces, faces)),
                                shape=EE.shape).tocsr()

    if dt is not None:
        if dt <= 0:
            raise SchemeError("time step must be positive")
        d_cells = d_cells + mesh.cell_area / dt

    # Right-hand side: cell sources and Neumann face integrals.
    rhs_m = mesh.cell_area * disc._evaluate(
        data.f, mesh.cell_center[:, 0], mesh.cell_center[:, 1])
    rhs_e_full = np.zeros(mesh.n_faces)
    neu = mesh.neumann_faces
    if neu.size:
        rhs_e_full[neu] = face_integrals(mesh, data.g_neumann, neu)

    # Dirichlet elimination with point values g_D(x_sigma).
    dir_faces = mesh.dirichlet_faces
    dirichlet_values = np.zeros(mesh.n_faces)
    if dir_faces.size:
        if data.g_dirichlet is None:
            raise SchemeError("Dirichlet faces present but no g_dirichlet data")
        dirichlet_values[dir_faces] = disc._evaluate(
            data.g_dirichlet, mesh.face_centers[dir_faces, 0],
            mesh.face_centers[dir_faces, 1])
    active = np.setdiff1d(np.arange(mesh.n_faces), dir_faces)
    gbar = dirichlet_values[dir_faces]
    rhs_m = rhs_m - ME[:, dir_faces] @ gbar
    rhs_e = rhs_e_full[active] - EE[active][:, dir_faces] @ gbar
    B = ME[:, active].tocsr()
    C = EM[active, :].tocsr()
    E = EE[active][:, active].tocsr()

    lagrange = False
    if dt is None and dir_faces.size == 0:
        if mass_target is None:
            raise SchemeError("stationary pure-Neumann problem requires a "
                              "mass constraint (mass_target)")
        lagrange = True
        n_act = active.shape[0]
        area_col = sp.csr_matrix(mesh.cell_area[:, None])
        B = sp.hstack([B, area_col], format="csr")
        C = sp.vstack([C, sp.csr_matrix(mesh.cell_area[None, :])], format="csr")
        E = sp.bmat([[E, sp.csr_matrix((n_act, 1))],
                     [sp.csr_matrix((1, n_act)), sp.csr_matrix((1, 1))]],
                    format="csr")
        rhs_e = np.concatenate([rhs_e, [float(mass_target)]])

    return LinearScheme(mesh, cfg, data, ops, adv, d_cells, B, C, E,
                        rhs_m, rhs_e, active, dirichlet_values, lagrange, dt)


# ---------------------------------------------------------------------------
# Nonlinear scheme
# ---------------------------------------------------------------------------

def _mean_and_derivs(kind, x, y):
    """Two-point mean m(x, y) with partial derivatives, vectorized.

    Chain for positive arguments:
    logmean <= sqrtmean <= arithmetic <= max.
    """
    if kind == "arithmetic":
        m = 0.5 * (x + y)
        return m, np.full_like(m, 0.5), np.full_like(m, 0.5)
    if kind == "max":
        m = np.maximum(x, y)
        dx = (x >= y).astype(float)
        return m, dx, 1.0 - dx
    if kind == "sqrtmean":
        sx, sy = np.sqrt(x), np.sqrt(y)
        m = 0.25 * (sx + sy) ** 2
        return m, 0.25 * (sx + sy) / sx, 0.25 * (sx + sy) / sy
    if kind == "logmean":
        # m = (y - x)/ln(y/x); dm/dx = (e^t - 1 - t)/t^2 and
        # dm/dy = (t - 1 + e^{-t})/t^2 with t = ln(y/x), Taylor near t = 0.
        t = np.log(y) - np.log(x)
        small = np.abs(t) < 1e-6
        ts = np.where(small, 1.0, t)
        m = np.where(small, np.sqrt(x * y) * (1 + t * t / 24), (y - x) / ts)
        dx = np.where(small, 0.5 + t / 6 + t * t / 24,
                      (np.expm1(ts) - ts) / ts ** 2)
        dy = np.where(small, 0.5 - t / 6 + t * t / 24,
                      (ts + np.expm1(-ts)) / ts ** 2)
        return m, dx, dy
    raise SchemeError(f"unknown m_kind {kind!r}")


def reconstruction(cfg, u_k, u_f):
    """Cell reconstruction r_K(u) with derivatives.

    u_k : (g,) cell values; u_f : (g, m) face values.
    Returns r (g,), dr/du_K (g,), dr/du_sigma (g, m).  The default
    (arithmetic + mean) is r = (u_K + mean(u_sigma)) / 2.
    """
    m_vals, dmx, dmy = _mean_and_derivs(cfg.m_kind, u_k[:, None], u_f)
    if cfg.f_kind == "mean":
        w = 1.0 / m_vals.shape[1]
        r = m_vals.mean(axis=1)
        dr_k = (w * dmx).sum(axis=1)
        dr_f = w * dmy
    else:  # max
        j = np.argmax(m_vals, axis=1)
        g = np.arange(m_vals.shape[0])
        r = m_vals[g, j]
        dr_k = dmx[g, j]
        dr_f = np.zeros_like(m_vals)
        dr_f[g, j] = dmy[g, j]
    return r, dr_k, dr_f


class NonlinearProblem:
    """Residual and block Jacobian of the nonlinear scheme.

    Cell rows:  |K|(u_K - u_prev)/dt + sum_sigma F_{K,sigma}(u) - |K| f_K
    (the time term only in transient mode).  Face rows: the negative sum of
    the owner fluxes, minus int_sigma g_N on Neumann faces; Dirichlet faces
    carry either soft rows (1/|sigma|) int g_D - u_sigma (stationary) or
    strongly enforced values removed from the unknowns (transient).  A
    stationary pure-Neumann problem is closed by the mass row
    sum |K| u_K = M with multiplier lambda added to the cell rows.

    The Jacobian has a diagonal cell-cell block (cells couple only to their
    own faces), so every Newton step is solved by static condensation.
    """

    def __init__(self, mesh, ops, ell, cfg, dt=None, u_prev=None,
                 f_cells=None, gn_faces=None, soft_values=None,
                 strong_values=None, mass_target=None):
        self.mesh = mesh
        self.ops = ops
        self.ell = ell            # DofVector of phi point values
        self.cfg = cfg
        self.dt = dt
        self.u_prev = u_prev
        self.f_cells = np.zeros(mesh.n_cells) if f_cells is None else f_cells
        self.gn_faces = np.zeros(mesh.n_faces) if gn_faces is None else gn_faces
        self.mass_target = mass_target

        self.soft = np.array([], dtype=np.int64)
        self.soft_targets = np.array([])
        if soft_values is not None:
            self.soft, self.soft_targets = soft_values
        self.strong = np.array([], dtype=np.int64)
        self.strong_vals = np.array([])
        if strong_values is not None:
            self.strong, self.strong_vals = strong_values
        self.soft_flag = np.zeros(mesh.n_faces, dtype=bool)
        self.soft_flag[self.soft] = True

        self.active = np.setdiff1d(np.arange(mesh.n_faces), self.strong)
        self.face_pos = np.full(mesh.n_faces, -1, dtype=np.int64)
        self.face_pos[self.active] = np.arange(self.active.shape[0])
        self.n_extra = 1 if mass_target is not None else 0

    # -- packing ----------------------------------------------------------
    def pack(self, u, lam=0.0):
        parts = [u.cells, u.faces[self.active]]
        if self.n_extra:
            parts.append([lam])
        return np.concatenate(parts)

    def unpack(self, x):
        n_c = self.mesh.n_cells
        n_a = self.active.shape[0]
        faces = np.empty(self.mesh.n_faces)
        faces[self.active] = x[n_c:n_c + n_a]
        faces[self.strong] = self.strong_vals
        lam = x[n_c + n_a] if self.n_extra else 0.0
        return DofVector(x[:n_c], faces), lam

    def positivity_mask(self, n):
        """Entries of the packed vector that must stay positive (not lambda)."""
        mask = np.ones(n, dtype=bool)
        if self.n_extra:
            mask[-1] = False
        return mask

    # -- evaluation helpers ------------------------------------------------
    def _flux_terms(self, u):
        """Per-group flux data: (y, r, dr_k, dr_f, u_k, u_f, dw)."""
        w_c = np.log(u.cells) + self.ell.cells
        w_f = np.log(u.faces) + self.ell.faces
        out = []
        for m, cells, rows, A in self.ops.groups:
            faces = self.mesh.cf_face[rows]
            dw = w_c[cells][:, None] - w_f[faces]
            y = np.einsum("glm,gm->gl", A, dw)
            u_k = u.cells[cells]
            u_f = u.faces[faces]
            r, dr_k, dr_f = reconstruction(self.cfg, u_k, u_f)
            out.append((m, cells, rows, A, faces, y, r, dr_k, dr_f, u_k, u_f))
        return out

    def residual(self, x):
        u, lam = self.unpack(x)
        if u.cells.min() <= 0 or u.faces.min() <= 0:
            raise FloatingPointError("nonlinear residual needs positive state")
        mesh = self.mesh
        g_m = -self.f_cells.copy()
        if self.dt is not None:
            g_m += mesh.cell_area * (u.cells - self.u_prev) / self.dt
        g_f = -self.gn_faces.copy()
        for m, cells, rows, A, faces, y, r, dr_k, dr_f, u_k, u_f in \
                self._flux_terms(u):
            F = r[:, None] * y
            g_m[cells] += F.sum(axis=1)
            np.add.at(g_f, faces.ravel(), -F.ravel())
        if self.soft.size:
            g_f[self.soft] = self.soft_targets - u.faces[self.soft]
        parts = [g_m, g_f[self.active]]
        if self.n_extra:
            g_m += mesh.cell_area * lam
            parts = [g_m, g_f[self.active],
                     [float(mesh.cell_area @ u.cells - self.mass_target)]]
        return np.concatenate(parts)

    def jacobian_blocks(self, x):
        """Block Jacobian (d_cells, B, C, E) on cells + active faces (+lambda)."""
        u, _ = self.unpack(x)
        mesh = self.mesh
        n_c = mesh.n_cells
        n_a = self.active.shape[0] + self.n_extra
        d_cells = np.zeros(n_c)
        if self.dt is not None:
            d_cells += mesh.cell_area / self.dt
        b_r, b_c, b_v = [], [], []
        c_r, c_c, c_v = [], [], []
        e_r, e_c, e_v = [], [], []
        for m, cells, rows, A, faces, y, r, dr_k, dr_f, u_k, u_f in \
                self._flux_terms(u):
            sA = A.sum(axis=2)                    # (g, m) row sums = col sums
            sAA = sA.sum(axis=1)                  # (g,)
            sumy = y.sum(axis=1)                  # (g,)
            d_cells[cells] += dr_k * sumy + r * sAA / u_k

            fpos = self.face_pos[faces]           # (g, m), -1 for strong faces
            act = fpos >= 0
            # B: dG_K/du_sigma.
            bv = dr_f * sumy[:, None] - r[:, None] * sA / u_f
            b_r.append(np.broadcast_to(cells[:, None], bv.shape)[act])
            b_c.append(fpos[act])
            b_v.append(bv[act])
            # C and E rows exist for non-soft active faces.
            row_ok = act & ~self.soft_flag[faces]
            cv = -(dr_k[:, None] * y + r[:, None] * sA / u_k[:, None])
            c_r.append(fpos[row_ok])
            c_c.append(np.broadcast_to(cells[:, None], cv.shape)[row_ok])
            c_v.append(cv[row_ok])
            ev = -(dr_f[:, None, :] * y[:, :, None]
                   - r[:, None, None] * A / u_f[:, None, :])
            pair_ok = row_ok[:, :, None] & act[:, None, :]
            e_r.append(np.broadcast_to(fpos[:, :, None], ev.shape)[pair_ok])
            e_c.append(np.broadcast_to(fpos[:, None, :], ev.shape)[pair_ok])
            e_v.append(ev[pair_ok])
        if self.soft.size:
            spos = self.face_pos[self.soft]
            e_r.append(spos)
            e_c.append(spos)
            e_v.append(np.full(self.soft.shape[0], -1.0))
        if self.n_extra:
            lam_col = np.full(n_c, n_a - 1)
            b_r.append(np.arange(n_c))
            b_c.append(lam_col)
            b_v.append(mesh.cell_area)
            c_r.append(np.full(n_c, n_a - 1))
            c_c.append(np.arange(n_c))
            c_v.append(mesh.cell_area)

        def build(r, c, v, shape):
            return sp.coo_matrix(
                (np.concatenate([a.ravel() for a in v]),
                 (np.concatenate([a.ravel() for a in r]),
                  np.concatenate([a.ravel() for a in c]))), shape=shape).tocsr()

        B = build(b_r, b_c, b_v, (n_c, n_a))
        C = build(c_r, c_c, c_v, (n_a, n_c))
        E = build(e_r, e_c, e_v, (n_a, n_a))
        return d_cells, B, C, E

    def dissipation(self, u):
        """sum_K r_K(u) delta w . A_K delta w >= 0 (entropy dissipation)."""
        w_c = np.log(u.cells) + self.ell.cells
        w_f = np.log(u.faces) + self.ell.faces
        total = 0.0
        for m, cells, rows, A, faces, y, r, dr_k, dr_f, u_k, u_f in \
                self._flux_terms(u):
            dw = w_c[cells][:, None] - w_f[faces]
            total += float((r * np.einsum("gl,gl->g", dw, y)).sum())
        return total


# ---------------------------------------------------------------------------
# Entropy functionals
# ---------------------------------------------------------------------------

def phi1(s):
    """Boltzmann entropy density s log s - s + 1, with phi1(0) = 1."""
    s = np.asarray(s, dtype=float)
    if (s < 0).any():
        raise ValueError("phi1 requires nonnegative arguments")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)) - s + 1.0, 1.0)
    return out


def entropy_boltzmann(mesh, u_cells, uinf_cells):
    """sum |K| uinf_K phi1(u_K / uinf_K) (nonlinear scheme's entropy)."""
    return float(mesh.cell_area @ (uinf_cells * phi1(u_cells / uinf_cells)))


def entropy_quadratic(mesh, u_cells, uinf_cells, weight=None):
    """(1/2) sum |K| w_K (u_K - uinf_K)^2 (linear schemes' entropy)."""
    w = np.ones(mesh.n_cells) if weight is None else weight
    return float(0.5 * mesh.cell_area @ (w * (u_cells - uinf_cells) ** 2))
