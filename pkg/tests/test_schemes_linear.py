"""Linear schemes: assembly, exponential fitting and thermal equilibria."""

import numpy as np
import pytest

import hfv.discretization as disc
import hfv.mesh as hm
import hfv.schemes as sch
import hfv.solver as sol


def dirichlet_data(**kw):
    base = dict(lam=(1.0, 2.0), dirichlet=[{}])
    base.update(kw)
    return sch.ProblemData(**base)


def entry_gap(s1, s2):
    """Largest entrywise difference between two assembled linear schemes."""
    gaps = [np.abs(s1.d_cells - s2.d_cells).max(),
            abs(s1.B - s2.B).max() if s1.B.nnz or s2.B.nnz else 0.0,
            abs(s1.C - s2.C).max() if s1.C.nnz or s2.C.nnz else 0.0,
            abs(s1.E - s2.E).max() if s1.E.nnz or s2.E.nnz else 0.0,
            np.abs(s1.rhs_m - s2.rhs_m).max(),
            np.abs(s1.rhs_e - s2.rhs_e).max()]
    return max(float(g) for g in gaps)


def test_scheme_config_validation():
    cfg = sch.SchemeConfig(kind="hmm")
    assert cfg.flux == "sg" and cfg.eta == disc.DEFAULT_ETA
    assert sch.SchemeConfig(kind="nonlinear").m_kind == "arithmetic"
    for bad in [dict(kind="mixed"), dict(kind="hmm", flux="roe"),
                dict(kind="nonlinear", m_kind="geometric"),
                dict(kind="nonlinear", f_kind="min"),
                dict(kind="hmm", eta=-1.0)]:
        with pytest.raises(sch.SchemeError):
            sch.SchemeConfig(**bad)


def test_problem_data_tagging_and_omega():
    mesh = hm.generate("cartesian", 4)
    data = sch.ProblemData(lam=1.0, phi=lambda x, y: -x,
                           dirichlet=[{"xmax": 0.0}], g_dirichlet=1.0,
                           g_neumann=0.0)
    data.tag(mesh)
    assert mesh.dirichlet_faces.size == 4
    assert mesh.neumann_faces.size == 12
    omega = data.omega_dof(mesh)
    assert np.allclose(omega.cells, np.exp(mesh.cell_center[:, 0]))
    assert np.allclose(omega.faces, np.exp(mesh.face_centers[:, 0]))
    assert not data.pure_neumann
    neumann = sch.ProblemData(lam=1.0, g_neumann=0.0, mass=1.0)
    neumann.tag(mesh)
    assert neumann.pure_neumann


def test_face_velocities_constant_drift():
    # phi = -x with Lambda = diag(2, 1): V = -Lambda grad phi = (2, 0), so the
    # mean normal drift is 2 n_x on every (cell, face) pair; the finite
    # difference route (phi only) and the exact gradient route must agree.
    mesh = hm.generate("kershaw", 4)
    lam = (2.0, 1.0)
    by_fd = sch.face_velocities(mesh, sch.ProblemData(
        lam=lam, phi=lambda x, y: -x))
    by_grad = sch.face_velocities(mesh, sch.ProblemData(
        lam=lam, phi=lambda x, y: -x,
        grad_phi=lambda x, y: (-np.ones_like(x), np.zeros_like(y))))
    want = 2.0 * mesh.cf_normal[:, 0]
    assert np.abs(by_grad - want).max() < 1e-13
    assert np.abs(by_fd - want).max() < 1e-8
    none = sch.face_velocities(mesh, sch.ProblemData(lam=lam))
    assert (none == 0.0).all()


def test_face_mu_caps_at_one():
    mesh = hm.generate("cartesian", 3)
    mu = sch.face_mu(mesh, sch.ProblemData(lam=(0.5, 2.0)))
    assert np.allclose(mu, 0.5)
    mu = sch.face_mu(mesh, sch.ProblemData(lam=(2.0, 3.0)))
    assert np.allclose(mu, 1.0)


def test_harmonic_omega_oracle():
    # 3 / (1/1 + 1/2 + 1/4) = 12/7.
    assert abs(sch.harmonic_omega([1.0, 2.0, 4.0]) - 12.0 / 7.0) < 1e-15
    arr = sch.harmonic_omega(np.array([[1.0, 2.0, 4.0], [2.0, 2.0, 2.0]]))
    assert np.allclose(arr, [12.0 / 7.0, 2.0])


def test_tensor_on_pyramids_kinds():
    mesh = hm.generate("triangular", 3)
    data = dirichlet_data(phi=lambda x, y: 0.3)   # constant potential
    t_hmm = sch.tensor_on_pyramids(mesh, data, "hmm")
    # omega = e^{-0.3} is constant: both fitted tensors reduce to
    # omega * Lambda with the same constant Lambda.
    w = np.exp(-0.3)
    for kind in ("expfit", "expfit-harmonic"):
        t = sch.tensor_on_pyramids(mesh, data, kind)
        assert np.allclose(t, w * t_hmm, atol=1e-14)
    with pytest.raises(sch.SchemeError):
        sch.tensor_on_pyramids(mesh, data, "mixed")


@pytest.mark.parametrize("kind", ["expfit", "expfit-harmonic"])
def test_no_potential_collapses_to_hmm(kind):
    # With phi absent the fitted schemes assemble the same linear system as
    # the plain scheme, entry for entry.
    mesh = hm.generate("kershaw", 4)
    data = dirichlet_data(g_dirichlet=lambda x, y: x * y,
                          f=lambda x, y: np.sin(x))
    data.tag(mesh)
    ref = sch.assemble_linear(mesh, data, sch.SchemeConfig(kind="hmm"))
    fit = sch.assemble_linear(mesh, data, sch.SchemeConfig(kind=kind))
    assert entry_gap(ref, fit) < 1e-13


@pytest.mark.parametrize("kind", ["expfit", "expfit-harmonic"])
def test_thermal_equilibrium_is_exact(kind):
    # Thermal data (f = 0, g_N = 0, Dirichlet trace of rho_D e^{-phi} with a
    # constant rho_D): the fitted schemes reproduce u = rho_D e^{-phi} at the
    # dofs to solver precision, because constants are in the kernel of the
    # rho-form operator.
    mesh = hm.generate("kershaw", 8)
    phi = lambda x, y: -x - 0.5 * y
    rho = 0.7
    data = sch.ProblemData(
        lam=(1.0, 2.0), phi=phi, dirichlet=[{"xmax": 0.0}, {"xmin": 1.0}],
        g_dirichlet=lambda x, y: rho * np.exp(-phi(x, y)), g_neumann=0.0)
    data.tag(mesh)
    u, solves = sol.solve_stationary(mesh, data, sch.SchemeConfig(kind=kind))
    want = disc.interpolate(lambda x, y: rho * np.exp(-phi(x, y)), mesh)
    gap = max(np.abs(u.cells - want.cells).max(),
              np.abs(u.faces - want.faces).max())
    assert gap < 1e-11
    assert solves == 1


def test_plain_scheme_misses_thermal_equilibrium():
    # Same data through the unfitted scheme: the Gibbs state is *not* discrete
    # equilibrium (only fitted variants are exact), so the gap is well above
    # solver precision.  Guards against the fitted paths silently aliasing.
    mesh = hm.generate("kershaw", 8)
    phi = lambda x, y: -x - 0.5 * y
    data = sch.ProblemData(
        lam=(1.0, 2.0), phi=phi, dirichlet=[{"xmax": 0.0}, {"xmin": 1.0}],
        g_dirichlet=lambda x, y: np.exp(-phi(x, y)), g_neumann=0.0)
    data.tag(mesh)
    u, _ = sol.solve_stationary(mesh, data, sch.SchemeConfig(kind="hmm"))
    want = disc.interpolate(lambda x, y: np.exp(-phi(x, y)), mesh)
    assert np.abs(u.cells - want.cells).max() > 1e-6


def test_affine_dirichlet_solution_reproduced():
    # Pure diffusion with affine boundary data: the hybrid scheme is affine
    # exact, so the discrete solution is the interpolant on any family.
    fn = lambda x, y: 2.0 * x - y + 0.25
    for family, n in [("cartesian", 4), ("triangular", 4), ("kershaw", 8),
                      ("tilted_hexagonal", 5)]:
        mesh = hm.generate(family, n)
        data = dirichlet_data(g_dirichlet=fn, f=0.0)
        data.tag(mesh)
        u, _ = sol.solve_stationary(mesh, data, sch.SchemeConfig(kind="hmm"))
        want = disc.interpolate(fn, mesh)
        assert np.abs(u.cells - want.cells).max() < 1e-11
        assert np.abs(u.faces - want.faces).max() < 1e-11


def test_dirichlet_values_are_pinned():
    mesh = hm.generate("cartesian", 4)
    g = lambda x, y: np.cos(3 * x) + y
    data = dirichlet_data(g_dirichlet=g)
    data.tag(mesh)
    cfg = sch.SchemeConfig(kind="hmm")
    u, _ = sol.solve_stationary(mesh, data, cfg)
    dirf = mesh.dirichlet_faces
    xc = mesh.face_centers[dirf]
    assert np.allclose(u.faces[dirf], g(xc[:, 0], xc[:, 1]), atol=1e-14)


def test_missing_dirichlet_data_raises():
    mesh = hm.generate("cartesian", 2)
    data = sch.ProblemData(lam=1.0, dirichlet=[{}])
    data.tag(mesh)
    with pytest.raises(sch.SchemeError):
        sch.assemble_linear(mesh, data, sch.SchemeConfig(kind="hmm"))


def test_stationary_pure_neumann_needs_mass():
    mesh = hm.generate("cartesian", 3)
    data = sch.ProblemData(lam=1.0, g_neumann=0.0, f=0.0)
    data.tag(mesh)
    with pytest.raises(sch.SchemeError):
        sch.assemble_linear(mesh, data, sch.SchemeConfig(kind="hmm"))


def test_stationary_pure_neumann_mass_constraint():
    # The bordered system returns the unique steady state with the prescribed
    # mass; for the fitted scheme on thermal data that is rho e^{-phi} with
    # rho = M / int e^{-phi} (discrete: quadrature cell averages).
    mesh = hm.generate("cartesian", 8)
    data = sch.ProblemData(lam=1.0, phi=lambda x, y: -x, g_neumann=0.0,
                           f=0.0, mass=2.0)
    data.tag(mesh)
    u, _ = sol.solve_stationary(mesh, data, sch.SchemeConfig(kind="expfit"))
    assert abs(disc.mass(mesh, u.cells) - 2.0) < 1e-11
    omega = np.exp(-(-mesh.cell_center[:, 0]))
    rho = u.cells / omega
    assert np.abs(rho - rho[0]).max() < 1e-11


def test_reconstruction_default_and_derivatives():
    cfg = sch.SchemeConfig(kind="nonlinear")
    u_k = np.array([2.0, 1.0])
    u_f = np.array([[1.0, 3.0, 5.0], [1.0, 1.0, 1.0]])
    r, dr_k, dr_f = sch.reconstruction(cfg, u_k, u_f)
    assert np.allclose(r, [(2.0 + 3.0) / 2.0, 1.0])
    assert np.allclose(dr_k, 0.5)
    assert np.allclose(dr_f, 1.0 / 6.0)


def test_energy_bilinear_includes_advection():
    mesh = hm.generate("cartesian", 4)
    data = dirichlet_data(phi=lambda x, y: -x, g_dirichlet=1.0)
    data.tag(mesh)
    scheme = sch.assemble_linear(mesh, data, sch.SchemeConfig(kind="hmm"))
    rng = np.random.default_rng(2)
    v = disc.DofVector(rng.normal(size=mesh.n_cells),
                       rng.normal(size=mesh.n_faces))
    with_adv = scheme.energy_bilinear(v)
    assert np.isfinite(with_adv)
    assert abs(with_adv - scheme.ops.bilinear(v, v)) > 1e-10  # drift counted
