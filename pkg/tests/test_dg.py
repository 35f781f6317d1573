import numpy as np
import pytest

from sweepvor import bte
from sweepvor.dg import (
    DGSpace,
    SolutionField,
    apply_permutation,
    assemble_direction,
    assemble_rhs,
    classify_facets,
    direct_solve,
    energy_norm_error,
    evaluate,
    mass_apply,
    mass_matrix,
    sweep_solve,
    unpermute_vector,
)
from sweepvor.errors import (
    NotCoercive,
    PointOutsideDomain,
    ScheduleInvalid,
    SingularDiagonalBlock,
    SizeMismatch,
)
from sweepvor.geometry import build_voronoi, lloyd_relax, random_seeds
from sweepvor.scheduler import Schedule, as_direction, directed_dual, schedule_centers


@pytest.fixture(scope="module")
def one_cell(square):
    return build_voronoi([[0.5, 0.5]], square)


@pytest.fixture(scope="module")
def two_cell(square):
    return build_voronoi([[0.25, 0.5], [0.75, 0.5]], square)


# -- facet classification -------------------------------------------------


def test_classify_unit_square_boundary(one_cell):
    roles = classify_facets(one_cell, [1.0, 0.0])
    by_side = {}
    for f in one_cell.facets:
        mid = f.midpoint
        if mid[0] == pytest.approx(0.0):
            by_side["left"] = roles.role(0, f.id)
        elif mid[0] == pytest.approx(1.0):
            by_side["right"] = roles.role(0, f.id)
        else:
            by_side.setdefault("flat", set()).add(roles.role(0, f.id))
    assert by_side["left"] == "inflow"
    assert by_side["right"] == "outflow"
    assert by_side["flat"] == {"characteristic"}


def test_classify_interior_sides_opposite(two_cell):
    roles = classify_facets(two_cell, [1.0, 0.0])
    f = next(f for f in two_cell.facets if f.kind == "interior")
    assert roles.role(0, f.id) == "outflow"
    assert roles.role(1, f.id) == "inflow"


def test_classification_matches_directed_dual(mesh100, rng):
    omega = as_direction(rng.normal(size=2))
    roles = classify_facets(mesh100, omega)
    dual = directed_dual(mesh100, omega)
    edges = set(map(tuple, dual.edges.tolist()))
    rebuilt = set()
    for f in mesh100.facets:
        if f.kind != "interior":
            continue
        i, j = f.cells
        r = roles.role(i, f.id)
        if r == "outflow":
            rebuilt.add((i, j))
        elif r == "inflow":
            rebuilt.add((j, i))
    assert rebuilt == edges


# -- assembly hand values --------------------------------------------------


def test_single_cell_p0_matrix_and_rhs(one_cell):
    space = DGSpace(one_cell, 0)
    op = assemble_direction(one_cell, space, [1.0, 0.0], 1.0)
    assert op.diag.reshape(-1) == pytest.approx([2.0], abs=1e-13)
    rhs = assemble_rhs(one_cell, space, [1.0, 0.0], 1.0, 0.0)
    assert rhs == pytest.approx([1.0], abs=1e-14)
    sched = schedule_centers(one_cell.centers(), [1.0, 0.0])
    u = sweep_solve(op, sched, rhs)
    assert u == pytest.approx([0.5], abs=1e-14)


def test_two_cell_p0_blocks_and_sweep(two_cell):
    space = DGSpace(two_cell, 0)
    op = assemble_direction(two_cell, space, [1.0, 0.0], 1.0)
    assert op.diag.reshape(-1) == pytest.approx([1.5, 1.5], abs=1e-13)
    assert set(op.offdiag) == {(1, 0)}
    assert op.offdiag[(1, 0)].reshape(-1) == pytest.approx([-1.0], abs=1e-13)
    rhs = assemble_rhs(two_cell, space, [1.0, 0.0], 1.0, 0.0)
    sched = schedule_centers(two_cell.centers(), [1.0, 0.0])
    u = sweep_solve(op, sched, rhs)
    assert u == pytest.approx([1.0 / 3.0, 5.0 / 9.0], abs=1e-13)


@pytest.mark.parametrize("p", [0, 1, 2])
def test_constant_reproduction(mesh100, p, rng):
    # g_D = c and f = Sigma_t c make the constant exactly reproducible
    space = DGSpace(mesh100, p)
    omega = as_direction(rng.normal(size=2))
    sigma_t = 2.0
    c = 3.7
    op = assemble_direction(mesh100, space, omega, sigma_t)
    rhs = assemble_rhs(mesh100, space, omega, sigma_t * c, c)
    u = sweep_solve(op, schedule_centers(mesh100.centers(), omega), rhs)
    coeffs = u.reshape(mesh100.n_cells, space.n_local)
    assert np.abs(coeffs[:, 0] - c).max() < 1e-12
    if space.n_local > 1:
        assert np.abs(coeffs[:, 1:]).max() < 1e-12


def test_nonpositive_sigma_rejected(two_cell):
    space = DGSpace(two_cell, 0)
    with pytest.raises(NotCoercive):
        assemble_direction(two_cell, space, [1.0, 0.0], -1.0)


# -- sweep vs direct -------------------------------------------------------


@pytest.mark.parametrize("p", [0, 1, 2])
def test_sweep_matches_direct(square, p, rng):
    mesh = build_voronoi(random_seeds(80, square, 31), square)
    space = DGSpace(mesh, p)
    omega = as_direction(rng.normal(size=2))
    op = assemble_direction(mesh, space, omega, 1.3)
    rhs = assemble_rhs(
        mesh, space, omega,
        lambda pts: np.sin(3 * pts[:, 0]) + pts[:, 1],
        lambda pts: np.cos(pts[:, 0] + pts[:, 1]),
    )
    sched = schedule_centers(mesh.centers(), omega)
    us = sweep_solve(op, sched, rhs)
    ud = direct_solve(op, rhs)
    scale = np.abs(ud).max()
    assert np.abs(us - ud).max() / scale < 1e-10


def test_direct_solve_permutation_similarity(two_cell):
    space = DGSpace(two_cell, 1)
    omega = as_direction([0.8, 0.6])
    op = assemble_direction(two_cell, space, omega, 1.0)
    rhs = assemble_rhs(two_cell, space, omega, 1.0, 0.5)
    sched = schedule_centers(two_cell.centers(), omega)
    swept, _ = apply_permutation(op, sched)
    from sweepvor.dg import permute_vector

    u_perm = direct_solve(swept, permute_vector(rhs, sched, space.n_local))
    u = direct_solve(op, rhs)
    assert unpermute_vector(u_perm, sched, space.n_local) == pytest.approx(u, rel=1e-12)


def test_sweep_rejects_invalid_schedule(two_cell):
    space = DGSpace(two_cell, 0)
    op = assemble_direction(two_cell, space, [1.0, 0.0], 1.0)
    rhs = assemble_rhs(two_cell, space, [1.0, 0.0], 1.0, 0.0)
    bad = schedule_centers(two_cell.centers(), [-1.0, 0.0])  # reversed order
    with pytest.raises(ScheduleInvalid):
        sweep_solve(op, bad, rhs)


def test_sweep_size_mismatch(two_cell):
    space = DGSpace(two_cell, 0)
    op = assemble_direction(two_cell, space, [1.0, 0.0], 1.0)
    sched = schedule_centers(two_cell.centers(), [1.0, 0.0])
    with pytest.raises(SizeMismatch):
        sweep_solve(op, sched, np.zeros(5))


def test_singular_block_detected(two_cell):
    space = DGSpace(two_cell, 0)
    op = assemble_direction(two_cell, space, [1.0, 0.0], 1.0)
    op.diag[0, 0, 0] = 0.0
    sched = schedule_centers(two_cell.centers(), [1.0, 0.0])
    with pytest.raises(SingularDiagonalBlock):
        sweep_solve(op, sched, np.zeros(2))


# -- permutation structure -------------------------------------------------


def test_apply_permutation_two_cell(two_cell):
    space = DGSpace(two_cell, 0)
    op = assemble_direction(two_cell, space, [1.0, 0.0], 1.0)
    good = schedule_centers(two_cell.centers(), [1.0, 0.0])
    _, rep = apply_permutation(op, good)
    assert rep.blocks_above_diagonal == 0
    assert rep.entries_above_diagonal == 0
    # an invalid (reversed) order exposes one upper block
    bad = Schedule(
        order=good.order[::-1].copy(),
        keys=good.keys[::-1].copy(),
        direction=good.direction,
        n_nodes=good.n_nodes,
    )
    _, rep_bad = apply_permutation(op, bad)
    assert rep_bad.blocks_above_diagonal == 1
    assert rep_bad.entries_above_diagonal == 1


def test_triangularity_random_mesh_all_ordinates(mesh100):
    # every permuted per-ordinate operator is strictly lower triangular at p=0
    space = DGSpace(mesh100, 0)
    for omega in bte.ordinates(4).directions:
        op = assemble_direction(mesh100, space, omega, 1.0)
        sched = schedule_centers(mesh100.centers(), omega)
        _, rep = apply_permutation(op, sched)
        assert rep.entries_above_diagonal == 0


def test_coercivity_witness(mesh100, rng):
    # v' A v >= sigma_0 v' M v for the upwind form
    space = DGSpace(mesh100, 1)
    sigma0 = 2.0
    omega = as_direction(rng.normal(size=2))
    A = assemble_direction(mesh100, space, omega, sigma0).to_csr()
    M = mass_matrix(mesh100, space)
    for _ in range(10):
        v = rng.normal(size=space.n_dofs)
        quad = float(v @ (A @ v))
        mass = float(v @ mass_apply(M, v))
        assert quad >= sigma0 * mass * (1.0 - 1e-10)


# -- energy norm and evaluation ---------------------------------------------


def test_energy_norm_zero_for_exact_constant(mesh100):
    space = DGSpace(mesh100, 0)
    coeffs = np.full(space.n_dofs, 4.2)
    u = SolutionField(coeffs, space)
    err = energy_norm_error(u, lambda pts: np.full(len(pts), 4.2), [1.0, 0.0], 1.0)
    assert err < 1e-12


def test_energy_norm_hand_value(one_cell):
    space = DGSpace(one_cell, 0)
    u = SolutionField(np.zeros(1), space)
    err = energy_norm_error(u, lambda pts: np.ones(len(pts)), [1.0, 0.0], 1.0)
    assert err == pytest.approx(np.sqrt(1.5), rel=1e-12)


def test_single_direction_eoc_p0(square):
    # transport without scattering: energy error decays like h^(1/2) at p=0
    sigma = 1.0
    omega = as_direction([0.38, 0.925])
    exact = lambda pts: bte.mms_exact(pts, omega)
    hs, errs = [], []
    for i, n in enumerate([25, 50, 100, 200]):
        seeds = lloyd_relax(random_seeds(n, square, 300 + i), square, 8)
        mesh = build_voronoi(seeds, square)
        space = DGSpace(mesh, 0)
        op = assemble_direction(mesh, space, omega, sigma)
        rhs = assemble_rhs(
            mesh, space, omega,
            lambda pts: (-2.0 * (pts @ omega) + sigma) * exact(pts),
            exact,
        )
        u = sweep_solve(op, schedule_centers(mesh.centers(), omega), rhs, space=space)
        hs.append(mesh.max_diameter)
        errs.append(energy_norm_error(u, exact, omega, sigma))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 0.3 < slope < 0.75


def test_evaluate_constant_field(mesh100, rng):
    space = DGSpace(mesh100, 1)
    coeffs = np.zeros(space.n_dofs)
    coeffs[:: space.n_local] = 2.5
    u = SolutionField(coeffs, space)
    pts = rng.random((20, 2))
    assert evaluate(u, pts) == pytest.approx(np.full(20, 2.5))


def test_evaluate_centroid_gives_degree0_coeff(mesh100, rng):
    space = DGSpace(mesh100, 1)
    u = SolutionField(rng.normal(size=space.n_dofs), space)
    c = 17
    got = evaluate(u, mesh100.cells[c].centroid)
    assert got == pytest.approx(u.coefficients[c * space.n_local], abs=1e-13)


def test_evaluate_outside_raises(mesh100):
    space = DGSpace(mesh100, 0)
    u = SolutionField(np.zeros(space.n_dofs), space)
    with pytest.raises(PointOutsideDomain):
        evaluate(u, np.array([2.0, 2.0]))


def test_evaluate_quadrature_consistency(square, rng):
    # integrating basis * field over each cell equals the mass-matrix product
    mesh = build_voronoi(random_seeds(30, square, 17), square)
    space = DGSpace(mesh, 2)
    u = SolutionField(rng.normal(size=space.n_dofs), space)
    M = mass_matrix(mesh, space)
    expected = mass_apply(M, u.coefficients)
    rules = mesh.cell_rules(6)
    for c, cell in enumerate(mesh.cells):
        pts, w = rules[c]
        vals = evaluate(u, pts)
        V = space.values(cell, pts)
        got = V.T @ (w * vals)
        assert got == pytest.approx(
            expected[space.cell_dofs(c)], rel=1e-12, abs=1e-12
        )
