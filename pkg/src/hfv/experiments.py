"""Benchmark problems and study drivers.

Named cases (all on the unit square):

* ``longtime``    -- pure-Neumann advection-diffusion with Lambda =
  diag(1e-2, 1) and phi = -x whose solution relaxes exponentially, at the
  known rate alpha = 1e-2 (pi^2 + 1/4), towards the Gibbs state
  2 C1 pi e^{x - 1/2}; the initial datum adds a zero-mass oscillatory mode.
* ``positivity``  -- pure-Neumann problem with a quadratic potential well and
  a discontinuous initial datum (1e-3 inside a ball, 1 outside) integrated
  over a few small steps; linear schemes undershoot below zero, the nonlinear
  scheme stays positive.
* ``accuracy1``   -- stationary Dirichlet problem with Lambda = I,
  phi = -(2x + 3y) and the sign-changing exact solution
  (x - e^{2(x-1)})(y - e^{3(y-1)}).  For the nonlinear scheme the problem is
  lifted by a positive constant (which leaves the source untouched because
  div(Lambda grad phi) = 0), solved in positive unknowns and shifted back.
* ``accuracy2``   -- stationary mixed problem with Lambda = diag(1, 100) and
  the steep drift phi = log(1/v + x), v = 200; the exact solution is
  positive, u = 1 on the Dirichlet sides {0,1} x (0,1), zero conormal flux on
  the other two.
* ``mixed_thermal`` -- transient mixed problem with thermal Dirichlet data
  g_D = rho_D e^{-phi}, phi = -x, relaxing from u = 1 to rho_D e^{x}.

Drivers: stationary convergence tables with orders of convergence measured
against the mesh size max |K|/|dK|, transient studies that record entropy,
dissipation and distances to the steady states, an exponential decay-rate
fit, and a positivity report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import discretization as disc
from . import schemes as sch
from . import solver as sol
from .discretization import DofVector
from .mesh import generate


# ---------------------------------------------------------------------------
# Named cases
# ---------------------------------------------------------------------------

@dataclass
class Case:
    """A benchmark problem with its default mesh and time grid."""
    name: str
    data: sch.ProblemData
    family: str
    n: int
    mesh_params: dict = field(default_factory=dict)
    dt: float | None = None
    t_final: float | None = None
    u_exact: object = None        # stationary exact solution u(x, y)
    u_time: object = None         # transient exact solution u(t, x, y)
    uinf: object = None           # long-time limit
    alpha: float | None = None    # analytic decay rate
    nonlinear_shift: float = 0.0  # constant lift added for 'nonlinear'

    def mesh(self, n=None, family=None, **params):
        kw = dict(self.mesh_params)
        kw.update(params)
        msh = generate(family or self.family, n or self.n, **kw)
        return self.data.tag(msh)


LONGTIME_C1 = 0.1
LONGTIME_LAMBDA_X = 1e-2
LONGTIME_ALPHA = LONGTIME_LAMBDA_X * (math.pi ** 2 + 0.25)


def _longtime() -> Case:
    c1, lx = LONGTIME_C1, LONGTIME_LAMBDA_X
    alpha = LONGTIME_ALPHA

    def uinf(x, y):
        return 2 * c1 * math.pi * np.exp(x - 0.5) + 0 * np.asarray(y, float)

    def u_time(t, x, y):
        osc = np.exp(x / 2) * (2 * math.pi * np.cos(math.pi * x)
                               + np.sin(math.pi * x))
        return c1 * np.exp(-alpha * t) * osc + uinf(x, y)

    data = sch.ProblemData(
        lam=(lx, 1.0),
        phi=lambda x, y: -x + 0 * np.asarray(y, float),
        grad_phi=lambda x, y: (-1.0 + 0 * np.asarray(x, float),
                               0 * np.asarray(x, float)),
        f=0.0, g_neumann=0.0,
        u_init=lambda x, y: u_time(0.0, x, y),
        dirichlet=[],
        # the oscillatory mode has exactly zero mass
        mass=2 * c1 * math.pi * math.exp(-0.5) * (math.e - 1.0))
    return Case("longtime", data, family="kershaw", n=32,
                mesh_params={"distortion": 0.6}, dt=0.1, t_final=350.0,
                u_exact=uinf, u_time=u_time, uinf=uinf, alpha=alpha)


POSITIVITY_BALL_CENTER = (0.5, 0.5)
POSITIVITY_BALL_RADIUS = 0.2
POSITIVITY_LOW = 1e-3
# 1 - (1 - 1e-3) * pi * 0.2^2
POSITIVITY_MASS = 1.0 - (1.0 - POSITIVITY_LOW) * math.pi * \
    POSITIVITY_BALL_RADIUS ** 2


def _positivity() -> Case:
    cx, cy = POSITIVITY_BALL_CENTER
    r2 = POSITIVITY_BALL_RADIUS ** 2

    def u_init(x, y):
        inside = (np.asarray(x, float) - cx) ** 2 \
            + (np.asarray(y, float) - cy) ** 2 < r2
        return np.where(inside, POSITIVITY_LOW, 1.0)

    data = sch.ProblemData(
        lam=(0.8, 1.0),
        phi=lambda x, y: -((x - 0.4) ** 2 + (y - 0.6) ** 2),
        grad_phi=lambda x, y: (-2.0 * (x - 0.4), -2.0 * (y - 0.6)),
        f=0.0, g_neumann=0.0, u_init=u_init, dirichlet=[],
        mass=POSITIVITY_MASS)
    return Case("positivity", data, family="tilted_hexagonal", n=67,
                dt=1e-5, t_final=5e-4)


def _accuracy1() -> Case:
    def F(x):
        return x - np.exp(2.0 * (x - 1.0))

    def Fp(x):
        return 1.0 - 2.0 * np.exp(2.0 * (x - 1.0))

    def Fpp(x):
        return -4.0 * np.exp(2.0 * (x - 1.0))

    def G(y):
        return y - np.exp(3.0 * (y - 1.0))

    def Gp(y):
        return 1.0 - 3.0 * np.exp(3.0 * (y - 1.0))

    def Gpp(y):
        return -9.0 * np.exp(3.0 * (y - 1.0))

    def u_exact(x, y):
        return F(x) * G(y)

    def f(x, y):
        # -Laplace(u) + 2 du/dx + 3 du/dy  (Lambda = I, grad phi = (-2, -3))
        return -(Fpp(x) * G(y) + F(x) * Gpp(y)) \
            + 2.0 * Fp(x) * G(y) + 3.0 * F(x) * Gp(y)

    data = sch.ProblemData(
        lam=1.0,
        phi=lambda x, y: -(2.0 * x + 3.0 * y),
        grad_phi=lambda x, y: (-2.0 + 0 * np.asarray(x, float),
                               -3.0 + 0 * np.asarray(x, float)),
        f=f, g_dirichlet=u_exact, dirichlet=[{}])
    return Case("accuracy1", data, family="triangular", n=16,
                u_exact=u_exact, nonlinear_shift=0.1)


ACCURACY2_V = 200.0


def _accuracy2() -> Case:
    v = ACCURACY2_V

    def u_exact(x, y):
        x = np.asarray(x, float)
        return (v / (1.0 + v * x)) * (
            (2.0 * v * x / (2.0 + v)) * (1.0 / v + x / 2.0) + 1.0 / v) \
            + 0 * np.asarray(y, float)

    data = sch.ProblemData(
        lam=(1.0, 100.0),
        phi=lambda x, y: np.log(1.0 / v + x) + 0 * np.asarray(y, float),
        grad_phi=lambda x, y: (v / (1.0 + v * x), 0 * np.asarray(x, float)),
        f=0.0, g_dirichlet=lambda x, y: np.ones_like(np.asarray(x, float)),
        g_neumann=0.0,
        dirichlet=[{"xmax": 0.0}, {"xmin": 1.0}])
    return Case("accuracy2", data, family="cartesian", n=16, u_exact=u_exact)


def _mixed_thermal() -> Case:
    def uinf(x, y):
        return np.exp(x) + 0 * np.asarray(y, float)

    data = sch.ProblemData(
        lam=1.0,
        phi=lambda x, y: -x + 0 * np.asarray(y, float),
        grad_phi=lambda x, y: (-1.0 + 0 * np.asarray(x, float),
                               0 * np.asarray(x, float)),
        f=0.0, g_dirichlet=uinf, g_neumann=0.0,
        u_init=lambda x, y: np.ones_like(np.asarray(x, float)),
        dirichlet=[{"xmax": 0.0}, {"xmin": 1.0}],
        rho_dirichlet=1.0)
    return Case("mixed_thermal", data, family="kershaw", n=16,
                dt=0.5, t_final=200.0, u_exact=uinf, uinf=uinf)


CASES = {
    "longtime": _longtime,
    "positivity": _positivity,
    "accuracy1": _accuracy1,
    "accuracy2": _accuracy2,
    "mixed_thermal": _mixed_thermal,
}


def get_case(name) -> Case:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; available: "
                       f"{', '.join(sorted(CASES))}") from None


# ---------------------------------------------------------------------------
# Stationary convergence studies
# ---------------------------------------------------------------------------

def _shifted(case: Case) -> tuple[sch.ProblemData, float]:
    """Constant positive lift of a sign-changing stationary case for the
    nonlinear scheme.  Adding a constant c to u adds the flux -c Lambda grad
    phi, which is divergence-free whenever div(Lambda grad phi) = 0 (true for
    the cases that opt in), so only the Dirichlet data shifts by c."""
    c = case.nonlinear_shift
    d = case.data
    g0 = d.g_dirichlet

    def g_shifted(x, y):
        return disc._evaluate(g0, np.asarray(x, float),
                              np.asarray(y, float)) + c

    lifted = sch.ProblemData(
        lam=d.lam, phi=d.phi, grad_phi=d.grad_phi, f=d.f,
        g_dirichlet=g_shifted, g_neumann=d.g_neumann, u_init=d.u_init,
        dirichlet=d.dirichlet, mass=d.mass, rho_dirichlet=d.rho_dirichlet)
    return lifted, c


def stationary_solution(mesh, case: Case, cfg: sch.SchemeConfig):
    """Stationary solve of a case, handling the nonlinear positivity lift.

    The nonlinear scheme solves the lifted problem when the case defines a
    positive shift and the result is shifted back, so every scheme produces
    an approximation of the same solution.
    """
    data = case.data
    shift = 0.0
    if cfg.kind == "nonlinear" and case.nonlinear_shift:
        data, shift = _shifted(case)
    u, solves = sol.solve_stationary(mesh, data, cfg)
    if shift:
        u = u - shift
    return u, solves


def stationary_errors(mesh, case: Case, cfg: sch.SchemeConfig):
    """Relative L2 (cells) and hybrid H1 errors of the stationary solution."""
    u, solves = stationary_solution(mesh, case, cfg)
    ex = disc.interpolate(case.u_exact, mesh)
    diff = u - ex
    l2 = disc.norm_l2(mesh, diff.cells) / disc.norm_l2(mesh, ex.cells)
    h1 = disc.seminorm_h1(mesh, diff) / disc.seminorm_h1(mesh, ex)
    return l2, h1, solves


def eoc(h, e):
    """Orders of convergence between consecutive levels."""
    h, e = np.asarray(h, float), np.asarray(e, float)
    return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


def run_convergence(case: Case, kinds, ns, family=None, flux="sg", eta=None):
    """Stationary convergence table for the requested scheme kinds.

    Returns {"n", "h", "theta", "cells", "schemes": {kind: {"l2", "h1",
    "eoc_l2", "eoc_h1"}}} with mesh sizes max |K|/|dK|.
    """
    meshes = [case.mesh(n=n, family=family) for n in ns]
    out = {
        "case": case.name,
        "n": list(ns),
        "h": [m.h_tilde for m in meshes],
        "theta": [m.theta for m in meshes],
        "cells": [m.n_cells for m in meshes],
        "schemes": {},
    }
    for kind in kinds:
        kw = {"kind": kind, "flux": flux}
        if eta is not None:
            kw["eta"] = eta
        cfg = sch.SchemeConfig(**kw)
        l2s, h1s = [], []
        for msh in meshes:
            l2, h1, _ = stationary_errors(msh, case, cfg)
            l2s.append(l2)
            h1s.append(h1)
        out["schemes"][kind] = {
            "l2": l2s, "h1": h1s,
            "eoc_l2": eoc(out["h"], l2s), "eoc_h1": eoc(out["h"], h1s),
        }
    return out


# ---------------------------------------------------------------------------
# Transient studies
# ---------------------------------------------------------------------------

def initial_state(mesh, data) -> DofVector:
    """Cell averages of the initial datum (16-point rule per pyramid) plus
    interpolated face values (used by the nonlinear Newton start)."""
    if data.u_init is None:
        raise sch.SchemeError("transient problem needs u_init")
    cells = disc.cell_averages(mesh, data.u_init)
    faces = disc.interpolate(data.u_init, mesh).faces
    return DofVector(cells, faces)


def discrete_steady_state(mesh, data, cfg, mass):
    """The scheme's own steady state with total mass `mass`.

    For the Gibbs-exact schemes (expfit, nonlinear) this is rho omega with
    omega = e^{-phi} point values and rho = mass / sum |K| omega_K (pure
    Neumann) or rho = rho_D (thermal Dirichlet data); the hmm scheme gets its
    steady state from its own stationary solve.
    """
    if cfg.kind != "hmm":
        omega = data.omega_dof(mesh)
        if data.pure_neumann:
            rho = mass / float(mesh.cell_area @ omega.cells)
            return omega * rho
        if data.rho_dirichlet is not None:
            return omega * data.rho_dirichlet
    steady_data = sch.ProblemData(
        lam=data.lam, phi=data.phi, grad_phi=data.grad_phi, f=0.0,
        g_dirichlet=data.g_dirichlet, g_neumann=0.0,
        dirichlet=data.dirichlet, mass=mass,
        rho_dirichlet=data.rho_dirichlet)
    u, _ = sol.solve_stationary(mesh, steady_data, cfg)
    return u


RECORD_FIELDS = ("step", "t", "entropy", "dissipation", "dist_l1_exact",
                 "dist_l1_discrete", "dist_l2", "min_cell", "min_face",
                 "negatives", "solves")


class Diagnostics:
    """Per-record diagnostics of a transient run.

    entropy/dissipation are the scheme's own Lyapunov pair: quadratic for
    hmm, omega-weighted quadratic in rho = u/omega for expfit, Boltzmann
    (phi1) with flux dissipation for the nonlinear scheme.  Distances are L1
    cell distances to the exact long-time profile and to the scheme's own
    discrete steady state; dist_l2 is the L2 distance to the latter.  The
    first record (step 0) carries no face data and no dissipation.
    """

    def __init__(self, mesh, data, cfg, steady: DofVector, uinf_cells=None):
        self.mesh = mesh
        self.cfg = cfg
        self.steady = steady
        self.uinf_cells = uinf_cells
        if cfg.kind == "hmm":
            # dt only adds the mass diagonal, which energy_bilinear ignores
            self._energy = sch.assemble_linear(mesh, data, cfg, dt=1.0)
            self._omega = None
            self._problem = None
        elif cfg.kind in ("expfit", "expfit-harmonic"):
            self._energy = sch.assemble_linear(mesh, data, cfg, dt=1.0)
            self._omega = data.omega_dof(mesh)
            self._problem = None
        else:
            tensor = sch.tensor_on_pyramids(mesh, data, "nonlinear")
            ops = disc.build_local_ops(mesh, tensor, eta=cfg.eta)
            self._problem = sch.NonlinearProblem(
                mesh, ops, data.phi_dof(mesh), cfg, dt=1.0,
                u_prev=np.zeros(mesh.n_cells))
            self._omega = None
            self._energy = None

    def entropy(self, u: DofVector):
        mesh, steady = self.mesh, self.steady
        if self.cfg.kind == "hmm":
            return sch.entropy_quadratic(mesh, u.cells, steady.cells)
        if self.cfg.kind in ("expfit", "expfit-harmonic"):
            w = self._omega
            return sch.entropy_quadratic(mesh, u.cells / w.cells,
                                         steady.cells / w.cells,
                                         weight=w.cells)
        return sch.entropy_boltzmann(mesh, u.cells, steady.cells)

    def dissipation(self, u: DofVector):
        if self.cfg.kind == "nonlinear":
            return self._problem.dissipation(u)
        if self.cfg.kind in ("expfit", "expfit-harmonic"):
            w = self._omega
            v = DofVector(u.cells / w.cells - self.steady.cells / w.cells,
                          u.faces / w.faces - self.steady.faces / w.faces)
            return self._energy.ops.bilinear(v, v)
        return self._energy.energy_bilinear(u - self.steady)

    def row(self, step, t, u: DofVector, solves):
        mesh = self.mesh
        area = mesh.cell_area
        diff_steady = u.cells - self.steady.cells
        row = {
            "step": step,
            "t": t,
            "entropy": self.entropy(u),
            "dissipation": None if step == 0 else self.dissipation(u),
            "dist_l1_exact": None if self.uinf_cells is None else
                float(area @ np.abs(u.cells - self.uinf_cells)),
            "dist_l1_discrete": float(area @ np.abs(diff_steady)),
            "dist_l2": disc.norm_l2(mesh, diff_steady),
            "min_cell": float(u.cells.min()),
            "min_face": None if step == 0 else float(u.faces.min()),
            "negatives": int((u.cells < 0).sum()) + (
                0 if step == 0 else int((u.faces < 0).sum())),
            "solves": solves,
        }
        return row


@dataclass
class StudyResult:
    rows: list
    steady: DofVector
    final: DofVector
    mass0: float
    cost: int


def run_transient_study(mesh, data, cfg, dt, t_final,
                        uinf=None) -> StudyResult:
    """Integrate a transient case, recording diagnostics at every macro step.

    The steady state used by the diagnostics carries the discrete initial
    mass sum |K| u0_K (pure-Neumann problems) or the thermal Dirichlet level.
    """
    u0 = initial_state(mesh, data)
    mass0 = float(mesh.cell_area @ u0.cells)
    steady = discrete_steady_state(mesh, data, cfg, mass0)
    uinf_cells = None
    if uinf is not None:
        uinf_cells = disc.interpolate(uinf, mesh).cells
    diag = Diagnostics(mesh, data, cfg, steady, uinf_cells)
    if cfg.kind == "nonlinear":
        stepper = sol.NonlinearStepper(mesh, data, cfg, u0)
    else:
        stepper = sol.LinearStepper(mesh, data, cfg, dt, u0)
    rows = []
    cost = sol.run_transient(
        stepper, t_final, dt,
        lambda s, t, u, k: rows.append(diag.row(s, t, u, k)))
    return StudyResult(rows, steady, stepper.state, mass0, cost)


def run_case_study(case: Case, cfg, mesh=None, dt=None,
                   t_final=None) -> StudyResult:
    """Transient study with the case's default mesh and time grid."""
    msh = mesh if mesh is not None else case.mesh()
    return run_transient_study(
        msh, case.data, cfg,
        dt if dt is not None else case.dt,
        t_final if t_final is not None else case.t_final,
        uinf=case.uinf)


# ---------------------------------------------------------------------------
# Decay-rate fit and positivity report
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    rate: float               # fitted exponential rate nu (d ~ e^{-nu t})
    plateau: float | None     # median saturation level (None: no plateau)
    knee_index: int | None    # first record index past the decay phase


def decay_fit(t, d, slope_drop=0.1, margin=100.0) -> DecayFit:
    """Fit d(t) ~ C e^{-nu t} + plateau from a recorded distance history.

    Local slopes of log d detect the knee where the decay has flattened to
    below slope_drop times the initial slope; the plateau is the median of
    the remaining values, and nu is the least-squares slope over the decay
    phase restricted to points at least `margin` times above the plateau.
    """
    t = np.asarray(t, float)
    d = np.asarray(d, float)
    keep = d > 0
    t, d = t[keep], d[keep]
    if t.size < 3:
        raise ValueError("need at least 3 positive samples to fit a decay")
    ld = np.log(d)
    slopes = np.diff(ld) / np.diff(t)
    head = max(3, t.size // 50)
    s0 = float(np.median(slopes[:head]))
    if abs(s0) < 1e-13:
        return DecayFit(rate=0.0, plateau=float(np.median(d)), knee_index=0)
    flat = np.abs(slopes) < slope_drop * abs(s0)
    knee = int(np.argmax(flat)) if flat.any() else None
    if knee is not None and knee == 0:
        return DecayFit(rate=0.0, plateau=float(np.median(d)), knee_index=0)
    if knee is None:
        sel = np.ones(t.size, dtype=bool)
        plateau = None
    else:
        plateau = float(np.median(d[knee:]))
        sel = (np.arange(t.size) < knee) & (d > margin * plateau)
    if sel.sum() < 2:
        return DecayFit(rate=0.0, plateau=plateau, knee_index=knee)
    coef = np.polyfit(t[sel], ld[sel], 1)
    return DecayFit(rate=-float(coef[0]), plateau=plateau, knee_index=knee)


def positivity_report(rows):
    """Aggregate minima and negative-value counts over the records with
    step >= 1 (the initial datum is excluded)."""
    after = [r for r in rows if r["step"] >= 1]
    if not after:
        raise ValueError("no records after the initial one")
    min_cell = min(r["min_cell"] for r in after)
    min_face = min(r["min_face"] for r in after)
    return {
        "negatives_total": int(sum(r["negatives"] for r in after)),
        "min_cell": min_cell,
        "min_face": min_face,
        "min_value": min(min_cell, min_face),
        "final_min_cell": after[-1]["min_cell"],
        "cost": after[-1]["solves"],
    }


# ---------------------------------------------------------------------------
# Data consistency check
# ---------------------------------------------------------------------------

def fd_residual(data: sch.ProblemData, u_fn, points, h=1e-4, du_dt=None):
    """Residual du/dt - div(Lambda(grad u + u grad phi)) - f at sample points
    by nested central differences (verifies that a case's exact solution,
    source and potential are mutually consistent; O(h^2) accurate, so suited
    to solutions with moderate derivatives)."""
    points = np.asarray(points, float)

    def flux(p):
        x, y = p[:, 0], p[:, 1]
        gx = (disc._evaluate(u_fn, x + h, y)
              - disc._evaluate(u_fn, x - h, y)) / (2 * h)
        gy = (disc._evaluate(u_fn, x, y + h)
              - disc._evaluate(u_fn, x, y - h)) / (2 * h)
        grad = np.column_stack([gx, gy])
        u = disc._evaluate(u_fn, x, y)
        gphi = data.grad_phi_at(p, np.full(x.shape, h))
        return np.einsum("nab,nb->na", data.lam.at(p), grad + u[:, None] * gphi)

    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    div = (flux(points + e1)[:, 0] - flux(points - e1)[:, 0]) / (2 * h) \
        + (flux(points + e2)[:, 1] - flux(points - e2)[:, 1]) / (2 * h)
    res = -div - disc._evaluate(data.f, points[:, 0], points[:, 1])
    if du_dt is not None:
        res = res + disc._evaluate(du_dt, points[:, 0], points[:, 1])
    return res
