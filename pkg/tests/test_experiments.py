"""Benchmark cases, convergence tables, diagnostics and decay fitting."""

import math

import numpy as np
import pytest

import hfv.discretization as disc
import hfv.experiments as exp
import hfv.schemes as sch

INTERIOR = np.array([[x, y]
                     for x in np.linspace(0.15, 0.85, 7)
                     for y in np.linspace(0.15, 0.85, 7)])


# ---------------------------------------------------------------------------
# case catalogue


def test_case_catalogue():
    assert sorted(exp.CASES) == ["accuracy1", "accuracy2", "longtime",
                                 "mixed_thermal", "positivity"]
    with pytest.raises(KeyError):
        exp.get_case("acc1")
    for name in exp.CASES:
        case = exp.get_case(name)
        assert case.name == name
        assert case.family in ("cartesian", "triangular", "kershaw",
                               "tilted_hexagonal")


def test_frozen_constants():
    # alpha = lambda_x (pi^2 + 1/4) for the slowest nontrivial mode of the
    # drift-diffusion operator on the unit square with phi = -x.
    assert abs(exp.LONGTIME_ALPHA
               - 1e-2 * (math.pi ** 2 + 0.25)) < 1e-16
    assert abs(exp.LONGTIME_ALPHA - 0.10119604401089359) < 1e-16
    # Initial mass of the near-vacuum ball datum: 1 - (1 - low) pi r^2.
    assert abs(exp.POSITIVITY_MASS
               - (1.0 - (1.0 - 1e-3) * math.pi * 0.04)) < 1e-15
    assert abs(exp.POSITIVITY_MASS - 0.8744619575625519) < 1e-15


@pytest.mark.parametrize("name,bound", [("accuracy1", 1e-6),
                                        ("accuracy2", 1e-4)])
def test_exact_solutions_satisfy_their_equation(name, bound):
    # Nested central differences of -div(Lambda(grad u + u grad phi)) - f at
    # interior points: the case data must be mutually consistent.
    case = exp.get_case(name)
    res = exp.fd_residual(case.data, case.u_exact, INTERIOR)
    assert np.abs(res).max() < bound


def test_longtime_exact_transient_solution():
    case = exp.get_case("longtime")
    h = 1e-5

    def at_t2(x, y):
        return case.u_time(2.0, x, y)

    def du_dt(x, y):
        return (case.u_time(2.0 + h, x, y)
                - case.u_time(2.0 - h, x, y)) / (2.0 * h)

    res = exp.fd_residual(case.data, at_t2, INTERIOR, du_dt=du_dt)
    assert np.abs(res).max() < 1e-6
    # The long-time limit is the mass-matching Gibbs state.
    uinf = case.uinf(INTERIOR[:, 0], INTERIOR[:, 1])
    gibbs = np.exp(INTERIOR[:, 0])
    ratio = uinf / gibbs
    assert np.abs(ratio - ratio[0]).max() < 1e-14


def test_mixed_thermal_limit_is_stationary():
    case = exp.get_case("mixed_thermal")
    res = exp.fd_residual(case.data, case.uinf, INTERIOR)
    assert np.abs(res).max() < 1e-6


def test_initial_state_mass_matches_analytic():
    case = exp.get_case("longtime")
    mesh = case.mesh()
    u0 = exp.initial_state(mesh, case.data)
    assert abs(disc.mass(mesh, u0.cells) - 0.6548276734237143) < 1e-4
    case = exp.get_case("positivity")
    mesh = case.mesh()
    u0 = exp.initial_state(mesh, case.data)
    rel = abs(disc.mass(mesh, u0.cells) - exp.POSITIVITY_MASS) \
        / exp.POSITIVITY_MASS
    assert rel < 1e-3
    assert u0.cells.min() > 0.0          # averages of {1e-3, 1} data


def test_case_mesh_generates_and_tags():
    case = exp.get_case("longtime")
    mesh = case.mesh(n=8)
    assert mesh.neumann_faces.size == mesh.boundary_faces.size  # pure Neumann
    mesh2 = exp.get_case("accuracy1").mesh(n=4)
    assert mesh2.dirichlet_faces.size == mesh2.boundary_faces.size
    # Family overrides keep the tagging.
    mesh3 = case.mesh(n=4, family="cartesian")
    assert mesh3.n_cells == 16
    assert mesh3.neumann_faces.size == mesh3.boundary_faces.size


# ---------------------------------------------------------------------------
# convergence helpers


def test_eoc_pairs():
    rates = exp.eoc([0.5, 0.25], [1.0, 1.0 / 2.381])
    assert len(rates) == 1
    assert abs(rates[0] - math.log(2.381) / math.log(2.0)) < 1e-12
    # Halving h with quartered error: second order exactly.
    rates = exp.eoc([0.2, 0.1, 0.05], [4e-2, 1e-2, 2.5e-3])
    assert np.allclose(rates, [2.0, 2.0])


def test_stationary_errors_all_schemes():
    case = exp.get_case("accuracy1")
    mesh = case.mesh(n=4)
    for kind in sch.SCHEME_KINDS:
        l2, h1, solves = exp.stationary_errors(
            mesh, case, sch.SchemeConfig(kind=kind))
        assert 0.0 < l2 < 0.5 and 0.0 < h1 < 0.5
        assert solves >= 1
        if kind == "nonlinear":
            assert solves > 1      # Newton path, not a single backsolve


def test_run_convergence_table():
    case = exp.get_case("accuracy1")
    out = exp.run_convergence(case, ["hmm"], [4, 8])
    assert out["case"] == "accuracy1" and out["n"] == [4, 8]
    assert len(out["h"]) == 2 and out["h"][0] > out["h"][1]
    tab = out["schemes"]["hmm"]
    assert len(tab["l2"]) == 2 and len(tab["eoc_l2"]) == 1
    assert 1.5 < tab["eoc_l2"][0] < 2.5
    assert 0.7 < tab["eoc_h1"][0] < 1.3
    assert tab["l2"][1] < tab["l2"][0]


# ---------------------------------------------------------------------------
# transient studies and diagnostics


def test_run_case_study_records():
    case = exp.get_case("longtime")
    mesh = case.mesh(n=8)
    study = exp.run_case_study(case, sch.SchemeConfig(kind="hmm"),
                               mesh=mesh, dt=0.5, t_final=2.0)
    assert len(study.rows) == 5
    first, last = study.rows[0], study.rows[-1]
    assert set(first) == set(exp.RECORD_FIELDS)
    assert first["step"] == 0 and first["t"] == 0.0
    assert first["dissipation"] is None and first["min_face"] is None
    assert last["step"] == 4 and abs(last["t"] - 2.0) < 1e-12
    assert last["min_face"] is not None
    # Solve counts are cumulative; the linear stepper pays one per step.
    assert [r["solves"] for r in study.rows] == [0, 1, 2, 3, 4]
    # Mass is conserved, so the recorded steady state keeps mass0.
    assert abs(disc.mass(mesh, study.final.cells) - study.mass0) < 1e-12
    assert abs(disc.mass(mesh, study.steady.cells) - study.mass0) < 1e-10
    # Entropy decreases along the flow.
    ent = [r["entropy"] for r in study.rows]
    assert all(b <= a + 1e-12 for a, b in zip(ent, ent[1:]))
    # Distances to the steady state shrink.
    assert last["dist_l2"] < first["dist_l2"]
    assert last["dist_l1_discrete"] < first["dist_l1_discrete"]


def test_discrete_steady_state_forms():
    case = exp.get_case("longtime")
    mesh = case.mesh(n=8)
    for kind in ("expfit", "nonlinear"):
        steady = exp.discrete_steady_state(
            mesh, case.data, sch.SchemeConfig(kind=kind), 0.7)
        assert abs(disc.mass(mesh, steady.cells) - 0.7) < 1e-13
        rho = steady.cells / np.exp(mesh.cell_center[:, 0])
        assert np.abs(rho - rho[0]).max() < 1e-13
    steady = exp.discrete_steady_state(
        mesh, case.data, sch.SchemeConfig(kind="hmm"), 0.7)
    assert abs(disc.mass(mesh, steady.cells) - 0.7) < 1e-11


# ---------------------------------------------------------------------------
# decay fit


def test_decay_fit_pure_exponential():
    t = np.arange(0.0, 300.0, 1.0)
    fit = exp.decay_fit(t, 3.0 * np.exp(-0.1 * t))
    assert abs(fit.rate - 0.1) < 1e-6
    assert fit.plateau is None and fit.knee_index is None


def test_decay_fit_with_floor():
    t = np.arange(0.0, 350.0, 1.0)
    d = 3.0 * np.exp(-0.1 * t) + 1e-7
    fit = exp.decay_fit(t, d)
    assert abs(fit.rate - 0.1) < 2e-3
    assert fit.plateau is not None
    assert 0.5e-7 < fit.plateau < 2e-7
    assert fit.knee_index is not None and fit.knee_index > 10


def test_decay_fit_constant_history():
    t = np.arange(0.0, 10.0, 1.0)
    fit = exp.decay_fit(t, np.full(t.size, 5.0))
    assert fit.rate == 0.0
    assert fit.plateau == 5.0


def test_decay_fit_needs_samples():
    with pytest.raises(ValueError):
        exp.decay_fit([0.0, 1.0], [1.0, 0.5])
    # Zeros are discarded before fitting.
    with pytest.raises(ValueError):
        exp.decay_fit([0.0, 1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0])


def test_positivity_report():
    rows = [
        {"step": 0, "t": 0.0, "min_cell": 1e-3, "min_face": None,
         "negatives": 0, "solves": 0},
        {"step": 1, "t": 1.0, "min_cell": -2e-3, "min_face": -1e-3,
         "negatives": 3, "solves": 4},
        {"step": 2, "t": 2.0, "min_cell": 5e-4, "min_face": 1e-4,
         "negatives": 0, "solves": 7},
    ]
    rep = exp.positivity_report(rows)
    assert rep["negatives_total"] == 3
    assert rep["min_cell"] == -2e-3 and rep["min_face"] == -1e-3
    assert rep["min_value"] == -2e-3
    assert rep["final_min_cell"] == 5e-4
    assert rep["cost"] == 7
    with pytest.raises(ValueError):
        exp.positivity_report(rows[:1])
