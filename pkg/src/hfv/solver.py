"""Linear algebra and time stepping for the hybrid schemes.

All schemes lead to block systems

    [ diag(d)  B ] [ u_cells ]   [ s_m ]
    [ C        E ] [ u_faces ] = [ s_e ]

whose cell-cell block is diagonal (cells couple only to their own faces, and
the mass-constraint multiplier is carried as an extra face unknown).  Such
systems are solved by static condensation: the face Schur complement
E - C diag(1/d) B is LU-factorized once and cell values are recovered by a
diagonal backsolve.  On top of that this module provides a damped Newton
method with positivity backtracking and an adaptive-substep backward Euler
driver that halves the step on Newton failure and doubles it on success.

The reported cost of a computation is its number of linear-solve events:
one per Newton iteration (each builds and factorizes a fresh Jacobian), and
one per time step for the linear schemes (whose factorization is reused).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import DofVector
from . import discretization as disc
from . import schemes as sch


class SolverError(Exception):
    """Linear or nonlinear solve failed."""


# Absolute floor of the Newton residual target.  Residual entries are sums
# of O(1) flux terms, so their evaluation carries rounding noise of order
# 1e-16; a relative target below that noise can never be met.
ABS_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# Static condensation
# ---------------------------------------------------------------------------

@dataclass
class BlockSystem:
    """Cell/face block system with diagonal cell-cell block."""
    d: np.ndarray          # (n_cells,) diagonal of the cell-cell block
    B: sp.spmatrix         # (n_cells, n_faces)
    C: sp.spmatrix         # (n_faces, n_cells)
    E: sp.spmatrix         # (n_faces, n_faces)
    s_m: np.ndarray
    s_e: np.ndarray

    def dense_matrix(self):
        n_c, n_f = self.d.shape[0], self.E.shape[0]
        full = np.zeros((n_c + n_f, n_c + n_f))
        full[:n_c, :n_c] = np.diag(self.d)
        full[:n_c, n_c:] = self.B.toarray()
        full[n_c:, :n_c] = self.C.toarray()
        full[n_c:, n_c:] = self.E.toarray()
        return full

    def dense_solve(self):
        """Direct dense solve of the full system (reference for tests)."""
        n_c = self.d.shape[0]
        sol = np.linalg.solve(self.dense_matrix(),
                              np.concatenate([self.s_m, self.s_e]))
        return sol[:n_c], sol[n_c:]


class CondensedFactor:
    """LU factorization of the face Schur complement E - C diag(1/d) B.

    solve() performs one backsolve per call and counts it; the factorization
    itself is reusable across right-hand sides.
    """

    def __init__(self, d, B, C, E):
        d = np.asarray(d, dtype=float)
        if d.shape[0] and np.abs(d).min() == 0.0:
            raise SolverError("cell block has a zero diagonal entry")
        self.d = d
        self.B = B.tocsr()
        self.C = C.tocsr()
        schur = (E - self.C @ sp.diags(1.0 / d) @ self.B).tocsc()
        try:
            self._lu = splu(schur)
        except RuntimeError as exc:
            raise SolverError(f"singular face system: {exc}") from exc
        self.solves = 0

    def solve(self, s_m, s_e):
        rhs = s_e - self.C @ (s_m / self.d)
        u_e = self._lu.solve(rhs)
        u_m = (s_m - self.B @ u_e) / self.d
        self.solves += 1
        return u_m, u_e


def condense(system: BlockSystem):
    """Factorize a block system and solve it once."""
    factor = CondensedFactor(system.d, system.B, system.C, system.E)
    u_m, u_e = factor.solve(system.s_m, system.s_e)
    return u_m, u_e, factor


def sparse_solve(A, b):
    """Direct sparse LU solve of A x = b."""
    try:
        return splu(sp.csc_matrix(A)).solve(np.asarray(b, dtype=float))
    except RuntimeError as exc:
        raise SolverError(f"sparse solve failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Newton's method
# ---------------------------------------------------------------------------

@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    solves: int
    residual0: float
    residual: float


def newton_solve(residual, jac_solve, x0, *, tol=1e-11, imax=50,
                 positivity_mask=None, max_backtracks=30):
    """Damped Newton iteration on residual(x) = 0.

    jac_solve(x, G) must return the Newton step s with J(x) s = -G (one
    linear-solve event per call).  Steps are halved until the masked entries
    of the iterate stay positive; a monotonicity line search then halves
    further until the residual norm decreases, falling back to the full
    (positive) step when no decrease can be found so that the plain Newton
    behavior near a root is preserved.  Convergence is declared when
    ||G||_inf <= max(tol * ||G(x0)||_inf, ABS_FLOOR): the relative test is
    the criterion proper, while the absolute floor accepts residuals that
    have reached the double-precision noise of the residual evaluation,
    which a purely relative target can undercut once ||G(x0)|| is small.
    A stalled line search (no decrease found at any step size) with
    ||G||_inf <= tol also counts as converged: the iterate sits at the
    noise floor of this particular residual, which can exceed ABS_FLOOR
    for badly conditioned systems, and no further progress is possible.
    """
    x = np.asarray(x0, dtype=float).copy()
    G = residual(x)
    norm0 = float(np.abs(G).max())
    target = max(tol * norm0, ABS_FLOOR)
    solves = 0
    for it in range(imax):
        gnorm = float(np.abs(G).max())
        if gnorm <= target:
            return x, NewtonReport(True, it, solves, norm0, gnorm)
        step = jac_solve(x, G)
        solves += 1
        t = 1.0
        fallback = None
        accepted = None
        for _ in range(max_backtracks + 1):
            x_try = x + t * step
            if positivity_mask is not None and \
                    not (x_try[positivity_mask] > 0.0).all():
                t *= 0.5
                continue
            try:
                G_try = residual(x_try)
            except FloatingPointError:
                t *= 0.5
                continue
            if not np.isfinite(G_try).all():
                t *= 0.5
                continue
            if fallback is None:
                fallback = (x_try, G_try)
            g_try = float(np.abs(G_try).max())
            if g_try <= max((1.0 - 1e-4 * t) * gnorm, target):
                accepted = (x_try, G_try)
                break
            t *= 0.5
        if accepted is None:
            if gnorm <= max(tol, ABS_FLOOR):
                # Stalled at the residual's own noise floor while already
                # below the tolerance in absolute terms: converged.
                return x, NewtonReport(True, it + 1, solves, norm0, gnorm)
            if fallback is None:
                # No positive trial point at all: give up on this step size.
                return x, NewtonReport(False, it + 1, solves, norm0, gnorm)
            accepted = fallback
        x, G = accepted
    gnorm = float(np.abs(G).max())
    return x, NewtonReport(gnorm <= target, imax, solves, norm0, gnorm)


# ---------------------------------------------------------------------------
# Stationary solves
# ---------------------------------------------------------------------------

def _newton_pieces(mesh, data, cfg):
    """Shared setup for the nonlinear scheme."""
    tensor = sch.tensor_on_pyramids(mesh, data, "nonlinear")
    ops = disc.build_local_ops(mesh, tensor, eta=cfg.eta)
    ell = data.phi_dof(mesh)
    f_cells = mesh.cell_area * disc._evaluate(
        data.f, mesh.cell_center[:, 0], mesh.cell_center[:, 1])
    gn = np.zeros(mesh.n_faces)
    neu = mesh.neumann_faces
    if neu.size:
        gn[neu] = sch.face_integrals(mesh, data.g_neumann, neu)
    return ops, ell, f_cells, gn


def _jac_solve_fn(problem, counter=None):
    n_c = problem.mesh.n_cells

    def jac_solve(x, G):
        d, B, C, E = problem.jacobian_blocks(x)
        factor = CondensedFactor(d, B, C, E)
        u_m, u_e = factor.solve(-G[:n_c], -G[n_c:])
        return np.concatenate([u_m, u_e])

    return jac_solve


def solve_stationary(mesh, data, cfg):
    """Solve the stationary problem; returns (DofVector, solve count).

    Linear schemes assemble and condense once.  The nonlinear scheme runs
    Newton from the interpolated Gibbs state e^{-phi}; pure-Neumann problems
    are closed by the mass constraint (data.mass) and require f = 0 and
    g_N = 0, the only case with a positive steady state.
    """
    if cfg.kind != "nonlinear":
        scheme = sch.assemble_linear(mesh, data, cfg, dt=None,
                                     mass_target=data.mass)
        u_m, u_e, factor = condense(BlockSystem(
            scheme.d_cells, scheme.B, scheme.C, scheme.E, *scheme.rhs()))
        return scheme.full_solution(u_m, u_e), factor.solves

    ops, ell, f_cells, gn = _newton_pieces(mesh, data, cfg)
    omega = data.omega_dof(mesh)
    if data.pure_neumann:
        if data.mass is None:
            raise sch.SchemeError("stationary pure-Neumann problem requires "
                                  "a prescribed mass")
        if np.abs(f_cells).max() > 0 or np.abs(gn).max() > 0:
            raise SolverError(
                "the nonlinear scheme admits a positive pure-Neumann steady "
                "state only for f = 0 and g_N = 0")
        problem = sch.NonlinearProblem(mesh, ops, ell, cfg, f_cells=f_cells,
                                       gn_faces=gn, mass_target=data.mass)
        x0 = problem.pack(omega, lam=0.0)
    else:
        dirf = mesh.dirichlet_faces
        if data.g_dirichlet is None:
            raise sch.SchemeError("Dirichlet faces present but no "
                                  "g_dirichlet data")
        targets = sch.face_integrals(mesh, data.g_dirichlet, dirf) \
            / mesh.face_lengths[dirf]
        if (targets <= 0).any():
            raise SolverError("the nonlinear scheme needs positive "
                              "Dirichlet data")
        problem = sch.NonlinearProblem(mesh, ops, ell, cfg, f_cells=f_cells,
                                       gn_faces=gn,
                                       soft_values=(dirf, targets))
        x0 = problem.pack(omega)
    x0 = np.where(problem.positivity_mask(x0.size),
                  np.maximum(x0, cfg.newton_eps), x0)
    x, report = newton_solve(problem.residual, _jac_solve_fn(problem), x0,
                             tol=cfg.newton_tol, imax=cfg.newton_imax,
                             positivity_mask=problem.positivity_mask(x0.size))
    if not report.converged:
        raise SolverError(
            f"stationary Newton did not converge: residual {report.residual:g}"
            f" after {report.iterations} iterations")
    u, _ = problem.unpack(x)
    return u, report.solves


# ---------------------------------------------------------------------------
# Transient drivers
# ---------------------------------------------------------------------------

class LinearStepper:
    """Backward Euler for the linear schemes with a cached factorization."""

    def __init__(self, mesh, data, cfg, dt, u0):
        self.mesh = mesh
        self.data = data
        self.cfg = cfg
        self.state = u0
        self._build(dt)

    def _build(self, dt):
        self.dt = dt
        self.scheme = sch.assemble_linear(self.mesh, self.data, self.cfg,
                                          dt=dt)
        self.factor = CondensedFactor(self.scheme.d_cells, self.scheme.B,
                                      self.scheme.C, self.scheme.E)

    def advance(self, t, dt):
        if abs(dt - self.dt) > 1e-12 * self.dt:
            self._build(dt)          # only on a trailing partial step
        s_m, s_e = self.scheme.rhs(self.state.cells)
        u_m, u_e = self.factor.solve(s_m, s_e)
        self.state = self.scheme.full_solution(u_m, u_e)
        return 1


class NonlinearStepper:
    """Backward Euler for the nonlinear scheme with adaptive substeps.

    Each macro step of size dt is integrated by substeps that start at the
    carried-over size, halve whenever Newton fails, and double (capped by the
    macro step and the remaining time) after every success.  The substep
    underflows below dt * 2^-20 -> SolverError.  Newton starts from the
    previous state clamped to the positivity floor; Dirichlet faces (thermal
    data rho_D e^{-phi}) are enforced strongly and never enter Newton.
    """

    def __init__(self, mesh, data, cfg, u0):
        self.mesh = mesh
        self.data = data
        self.cfg = cfg
        self.ops, self.ell, self.f_cells, self.gn = _newton_pieces(
            mesh, data, cfg)
        dirf = mesh.dirichlet_faces
        self.strong = None
        if dirf.size:
            if data.rho_dirichlet is None:
                raise sch.SchemeError(
                    "the transient nonlinear scheme supports Dirichlet data "
                    "only in the thermal form g_D = rho_D e^{-phi} "
                    "(set rho_dirichlet)")
            omega = data.omega_dof(mesh)
            self.strong = (dirf, data.rho_dirichlet * omega.faces[dirf])
            u0 = u0.copy()
            u0.faces[dirf] = self.strong[1]
        self.state = u0
        self.dt_sub = None

    def _make_problem(self, u_prev_cells, dt):
        return sch.NonlinearProblem(
            self.mesh, self.ops, self.ell, self.cfg, dt=dt,
            u_prev=u_prev_cells, f_cells=self.f_cells, gn_faces=self.gn,
            strong_values=self.strong)

    def advance(self, t, dt):
        eps = self.cfg.newton_eps
        remaining = dt
        sub = min(self.dt_sub if self.dt_sub is not None else dt, dt)
        solves = 0
        current = self.state
        while remaining > 1e-14 * dt:
            sub = min(sub, remaining)
            problem = self._make_problem(current.cells, sub)
            guess = DofVector(np.maximum(current.cells, eps),
                              np.maximum(current.faces, eps))
            x0 = problem.pack(guess)
            x, report = newton_solve(
                problem.residual, _jac_solve_fn(problem), x0,
                tol=self.cfg.newton_tol, imax=self.cfg.newton_imax,
                positivity_mask=problem.positivity_mask(x0.size))
            solves += report.solves
            if report.converged:
                current, _ = problem.unpack(x)
                remaining -= sub
                sub = min(2.0 * sub, dt)
            else:
                sub *= 0.5
                if sub < dt * 2.0 ** -20:
                    raise SolverError(
                        f"time step underflow at t = {t + dt - remaining:g}: "
                        "Newton keeps failing")
        self.state = current
        self.dt_sub = sub
        return solves


def run_transient(stepper, t_final, dt, on_record):
    """Advance stepper.state to t_final in macro steps of dt.

    on_record(step, t, state, solves_cumulative) fires at t = 0 and after
    every macro step (exactly at multiples of dt; a shorter trailing step
    covers a non-multiple t_final).  Returns the total solve count.
    """
    if t_final < 0 or dt <= 0:
        raise SolverError("need t_final >= 0 and dt > 0")
    on_record(0, 0.0, stepper.state, 0)
    total = 0
    step = 0
    t = 0.0
    while t < t_final - 1e-12 * max(dt, 1.0):
        step_dt = min(dt, t_final - t)
        total += stepper.advance(t, step_dt)
        step += 1
        t = min(step * dt, t_final)
        on_record(step, t, stepper.state, total)
    return total
