import numpy as np
import pytest

from sweepvor import dg
from sweepvor.bte import (
    AngularFlux,
    IterationLog,
    ScatteringKernel,
    bochner_error,
    coercivity_check,
    mms_exact,
    mms_inflow,
    mms_source,
    ordinates,
    reduction_factor,
    scalar_flux,
    scattering_ratio,
    scattering_source,
    source_iteration,
)
from sweepvor.errors import InsufficientData, NotCoercive, NotInflow
from sweepvor.geometry import build_voronoi, lloyd_relax, random_seeds


@pytest.fixture(scope="module")
def mesh40(square):
    return build_voronoi(lloyd_relax(random_seeds(40, square, 6), square, 4), square)


def mms_problem(ords, sigma_t, kernel):
    def f(pts, k):
        return mms_source(pts, k, ords, sigma_t, kernel)

    def g(pts, k):
        return mms_inflow(pts, k, ords)

    return f, g


# -- ordinates --------------------------------------------------------------


def test_ordinate_angles_nq4():
    o = ordinates(4)
    angles = np.arctan2(o.directions[:, 1], o.directions[:, 0]) % (2 * np.pi)
    assert angles == pytest.approx([np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4])
    assert o.weights == pytest.approx([0.25] * 4)


@pytest.mark.parametrize("nq", [1, 2, 3, 8, 64])
def test_ordinate_weights_normalised(nq):
    o = ordinates(nq)
    assert abs(o.weights.sum() - 1.0) < 1e-14
    assert np.linalg.norm(o.directions, axis=1) == pytest.approx(np.ones(nq), abs=1e-14)


@pytest.mark.parametrize("nq", [2, 4, 6, 16])
def test_odd_harmonics_integrate_to_zero(nq):
    o = ordinates(nq)
    assert abs(float(o.weights @ o.directions[:, 0])) < 1e-14
    assert abs(float(o.weights @ o.directions[:, 1])) < 1e-14


def test_ordinates_avoid_axes():
    # the half-step offset keeps every multiple-of-4 set off the coordinate axes
    for nq in (4, 8, 16, 64):
        d = ordinates(nq).directions
        assert np.abs(d).min() > 1e-12


# -- coercivity --------------------------------------------------------------


def test_coercivity_constant_case():
    o = ordinates(8)
    assert coercivity_check(1.0, ScatteringKernel.isotropic(0.7), o) == pytest.approx(0.3)
    assert coercivity_check(1.0, ScatteringKernel.isotropic(0.0), o) == pytest.approx(1.0)


def test_coercivity_violation():
    o = ordinates(8)
    with pytest.raises(NotCoercive):
        coercivity_check(1.0, ScatteringKernel.isotropic(1.001), o)


def test_scattering_ratio_constant():
    o = ordinates(8)
    assert scattering_ratio(1.0, ScatteringKernel.isotropic(0.7), o) == pytest.approx(0.7)


def test_kernel_rejects_negative():
    with pytest.raises(ValueError):
        ScatteringKernel.from_callable(lambda mu: mu)  # negative for mu < 0


# -- scattering source -------------------------------------------------------


def test_scattering_source_zero_flux(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(4)
    psi = AngularFlux(np.zeros((4, space.n_dofs)), space)
    out = scattering_source(psi, ScatteringKernel.isotropic(0.7), o, 2)
    assert np.all(out == 0.0)


def test_scattering_source_isotropic_constant(mesh40):
    # constant kernel with isotropic flux: Sigma_s * c * mass vector, same for all k
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    c = 2.5
    psi = AngularFlux(np.full((8, space.n_dofs), c), space)
    M = dg.mass_matrix(mesh40, space)
    expected = 0.7 * c * dg.mass_apply(M, np.ones(space.n_dofs))
    for k in (0, 3, 7):
        out = scattering_source(psi, ScatteringKernel.isotropic(0.7), o, k)
        assert out == pytest.approx(expected, rel=1e-13)


def test_scattering_source_anisotropic_bruteforce(square, rng):
    # mu^2 kernel on a single cell against a direct (k, l) double loop
    mesh = build_voronoi([[0.5, 0.5]], square)
    space = dg.DGSpace(mesh, 1)
    o = ordinates(8)
    kernel = ScatteringKernel.from_callable(lambda mu: mu**2)
    psi = AngularFlux(rng.normal(size=(8, space.n_dofs)), space)
    M = dg.mass_matrix(mesh, space)
    for k in range(8):
        got = scattering_source(psi, kernel, o, k)
        brute = np.zeros(space.n_dofs)
        for l in range(8):
            mu = float(o.directions[k] @ o.directions[l])
            brute += o.weights[l] * mu**2 * dg.mass_apply(M, psi.coefficients[l])
        assert got == pytest.approx(brute, rel=1e-12, abs=1e-15)


# -- manufactured solution ----------------------------------------------------


def test_mms_exact_values():
    o = ordinates(16)
    for om in o.directions:
        assert mms_exact(np.zeros(2), om) == pytest.approx(1.0)
    om = np.array([1.0, 0.0])
    assert mms_exact(np.array([1.0, 0.3]), om) == pytest.approx(np.exp(-1.0))


def test_mms_gradient_finite_differences(rng):
    o = ordinates(8)
    h = 1e-6
    for _ in range(20):
        x = rng.random(2)
        k = int(rng.integers(0, 8))
        om = o.directions[k]
        fd = (mms_exact(x + h * om, om) - mms_exact(x - h * om, om)) / (2 * h)
        analytic = -2.0 * float(x @ om) * mms_exact(x, om)
        assert fd == pytest.approx(analytic, rel=1e-6, abs=1e-9)


def test_mms_source_at_origin():
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.7)
    for k in range(8):
        assert mms_source(np.zeros(2), k, o, 1.0, kernel) == pytest.approx(0.3)


def test_mms_source_no_scattering(rng):
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.0)
    x = rng.random(2)
    k = 3
    om = o.directions[k]
    psi = mms_exact(x, om)
    expected = (-2.0 * float(x @ om) + 1.0) * psi
    assert mms_source(x, k, o, 1.0, kernel) == pytest.approx(expected, rel=1e-14)


def test_mms_semidiscrete_residual(rng):
    # substitute the exact solution back into the ordinate system
    o = ordinates(16)
    kernel = ScatteringKernel.isotropic(0.7)
    worst = 0.0
    for _ in range(200):
        x = rng.random(2)
        k = int(rng.integers(0, 16))
        om = o.directions[k]
        t = float(x @ om)
        lhs = -2.0 * t * np.exp(-t * t) + 1.0 * np.exp(-t * t)
        scat = sum(
            w * 0.7 * np.exp(-float(x @ oo) ** 2)
            for oo, w in zip(o.directions, o.weights)
        )
        res = lhs - scat - mms_source(x, k, o, 1.0, kernel)
        worst = max(worst, abs(res))
    assert worst <= 1e-14


def test_mms_inflow_checks_normal():
    o = ordinates(4)
    x = np.array([0.0, 0.5])
    left_normal = np.array([-1.0, 0.0])
    # ordinate 0 travels right (enters through the left side), ordinate 1 exits it
    assert mms_inflow(x, 0, o, normal=left_normal) == pytest.approx(
        mms_exact(x, o.directions[0])
    )
    with pytest.raises(NotInflow):
        mms_inflow(x, 1, o, normal=left_normal)


# -- source iteration ---------------------------------------------------------


def test_source_iteration_pure_absorber_converges_immediately(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.0)
    f, g = mms_problem(o, 1.0, kernel)
    flux, log = source_iteration(mesh40, space, o, 1.0, kernel, f, g, tol=1e-12)
    assert log.converged
    assert log.iterations == 2
    assert log.update_norms[1] == 0.0  # second pass reproduces the first exactly


def test_source_iteration_rejects_supercritical(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(4)
    kernel = ScatteringKernel.isotropic(1.2)
    f, g = mms_problem(o, 1.0, kernel)
    with pytest.raises(NotCoercive):
        source_iteration(mesh40, space, o, 1.0, kernel, f, g)


def test_source_iteration_parallel_deterministic(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.7)
    f, g = mms_problem(o, 1.0, kernel)
    serial, log_s = source_iteration(mesh40, space, o, 1.0, kernel, f, g, tol=1e-10)
    threaded, log_t = source_iteration(
        mesh40, space, o, 1.0, kernel, f, g, tol=1e-10, parallel=True
    )
    assert np.array_equal(serial.coefficients, threaded.coefficients)
    assert log_s.update_norms == log_t.update_norms


def test_source_iteration_max_iter_reports_not_converged(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.7)
    f, g = mms_problem(o, 1.0, kernel)
    flux, log = source_iteration(mesh40, space, o, 1.0, kernel, f, g, tol=1e-14, max_iter=3)
    assert not log.converged
    assert log.iterations == 3
    assert flux.iteration == 3


def test_bochner_error_decreases_along_run(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    kernel = ScatteringKernel.isotropic(0.7)
    f, g = mms_problem(o, 1.0, kernel)
    ref, _ = source_iteration(mesh40, space, o, 1.0, kernel, f, g, tol=1e-13, max_iter=200)
    _, log = source_iteration(
        mesh40, space, o, 1.0, kernel, f, g, tol=1e-10, reference=ref
    )
    errs = log.bochner_errors
    assert all(b < a for a, b in zip(errs[1:-1], errs[2:]))  # monotone after iteration 2


def test_bochner_single_ordinate_reduces_to_energy_norm(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(1)
    coeffs = np.random.default_rng(0).normal(size=(1, space.n_dofs))
    psi = AngularFlux(coeffs, space)
    exact = lambda pts, om: mms_exact(pts, om)
    total = bochner_error(psi, exact, o, 0.3)
    single = dg.energy_norm_error(
        psi.field(0),
        lambda pts: mms_exact(pts, o.directions[0]),
        o.directions[0],
        0.3,
    )
    assert total == pytest.approx(single, rel=1e-14)


def test_scalar_flux_isotropic_and_antipodal(mesh40):
    space = dg.DGSpace(mesh40, 0)
    o = ordinates(8)
    c = 1.7
    psi = AngularFlux(np.full((8, space.n_dofs), c), space)
    phi = scalar_flux(psi, o)
    assert phi.coefficients == pytest.approx(np.full(space.n_dofs, c), rel=1e-14)
    o2 = ordinates(2)  # antipodal pair
    coeffs = np.vstack([np.ones(space.n_dofs), -np.ones(space.n_dofs)])
    phi2 = scalar_flux(AngularFlux(coeffs, space), o2)
    assert np.abs(phi2.coefficients).max() < 1e-15


def test_reduction_factor_geometric_sequence():
    log = IterationLog(update_norms=[0.5 * 0.3**n for n in range(12)])
    assert reduction_factor(log) == pytest.approx(0.3, rel=1e-12)


def test_reduction_factor_insufficient_data():
    log = IterationLog(update_norms=[1.0, 0.0])
    with pytest.raises(InsufficientData):
        reduction_factor(log)
