"""Discrete ordinates, scattering and swept source iteration for the
mono-energetic Boltzmann transport equation.

Angular integrals use an equal-weight midpoint rule on the circle with the
half-step offset theta_k = 2 pi (k - 1/2) / N_Q; the weights sum to one and
absorb the 1/|S^1| normalisation, and the offset keeps axis-aligned meshes
away from whole characteristic facet families.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dg
from .errors import InsufficientData, NotCoercive, NotInflow
from .scheduler import schedule_centers


@dataclass
class OrdinateSet:
    directions: np.ndarray  # (N_Q, 2) unit vectors
    weights: np.ndarray  # (N_Q,) positive, sum to 1

    @property
    def n_q(self):
        return len(self.weights)


def ordinates(n_q):
    """Equal-angle ordinate set with half-step offset and uniform weights."""
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    k = np.arange(1, n_q + 1)
    theta = 2.0 * np.pi * (k - 0.5) / n_q
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    return OrdinateSet(directions=dirs, weights=np.full(n_q, 1.0 / n_q))


class ScatteringKernel:
    """Differential scattering kernel Sigma_s(x, mu), mu = w . w'.

    Separable: an angular rule mu -> value and an optional spatial factor.
    """

    def __init__(self, mu_rule=None, spatial=None, constant=None):
        self.mu_rule = mu_rule
        self.spatial = None if spatial is None else dg.CoefficientField.wrap(spatial)
        self.constant = constant
        mus = np.linspace(-1.0, 1.0, 41)
        if np.any(self.mu_values(mus) < 0.0):
            raise ValueError("scattering kernel is negative on sampled mu")

    @classmethod
    def isotropic(cls, sigma_s, spatial=None):
        return cls(constant=float(sigma_s), spatial=spatial)

    @classmethod
    def from_callable(cls, mu_rule, spatial=None):
        return cls(mu_rule=mu_rule, spatial=spatial)

    def mu_values(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.constant is not None:
            return np.full(mu.shape, self.constant)
        return np.asarray(self.mu_rule(mu), dtype=float).reshape(mu.shape)

    def matrix(self, ords):
        """Angular coupling matrix K[k, l] = w_l Sigma_s(w_k . w_l)."""
        mu = ords.directions @ ords.directions.T
        return self.mu_values(mu) * ords.weights[None, :]

    def angular_sums(self, ords):
        """Per-ordinate totals sum_l w_l Sigma_s(w_k . w_l) (spatial factor excluded)."""
        return self.matrix(ords).sum(axis=1)


@dataclass
class AngularFlux:
    """One DG coefficient vector per ordinate, plus the producing iteration index."""

    coefficients: np.ndarray  # (N_Q, n_dofs)
    space: dg.DGSpace
    iteration: int = 0

    def field(self, k):
        return dg.SolutionField(self.coefficients[k], self.space)


@dataclass
class IterationLog:
    update_norms: list = field(default_factory=list)
    bochner_errors: list = None
    converged: bool = False
    iterations: int = 0
    sigma0: float = 0.0
    scattering_ratio: float = 0.0


def coercivity_check(sigma_t, kernel, ords, points=None):
    """sigma_0 = inf over samples of Sigma_t(x) - sum_l w_l Sigma_s(x, w_k.w_l).

    Constant data is handled algebraically; spatially varying data needs
    sample points.  Raises NotCoercive when the infimum is not positive.
    """
    sigma = dg.CoefficientField.wrap(sigma_t)
    sums = kernel.angular_sums(ords)
    worst_k = int(np.argmax(sums))
    if sigma.is_constant and (kernel.spatial is None or kernel.spatial.is_constant):
        sfac = 1.0 if kernel.spatial is None else kernel.spatial.constant
        sigma0 = sigma.constant - sfac * float(sums[worst_k])
        if sigma0 <= 0.0:
            raise NotCoercive(f"sigma_0 = {sigma0} at ordinate {worst_k}")
        return sigma0
    if points is None:
        raise ValueError("spatially varying cross-sections need sample points")
    points = np.atleast_2d(points)
    st = sigma(points)
    sfac = np.ones(len(points)) if kernel.spatial is None else kernel.spatial(points)
    vals = st[:, None] - sfac[:, None] * sums[None, :]
    i, k = np.unravel_index(int(np.argmin(vals)), vals.shape)
    sigma0 = float(vals[i, k])
    if sigma0 <= 0.0:
        raise NotCoercive(
            f"sigma_0 = {sigma0} at x = {points[i].tolist()}, ordinate {k}"
        )
    return sigma0


def scattering_ratio(sigma_t, kernel, ords, points=None):
    """c = sup of the angular scattering total over Sigma_t."""
    sigma = dg.CoefficientField.wrap(sigma_t)
    peak = float(kernel.angular_sums(ords).max())
    if sigma.is_constant and (kernel.spatial is None or kernel.spatial.is_constant):
        sfac = 1.0 if kernel.spatial is None else kernel.spatial.constant
        return sfac * peak / sigma.constant
    if points is None:
        raise ValueError("spatially varying cross-sections need sample points")
    points = np.atleast_2d(points)
    sfac = np.ones(len(points)) if kernel.spatial is None else kernel.spatial(points)
    return float((sfac * peak / sigma(points)).max())


def scattering_source(psi, kernel, ords, k, mass=None):
    """RHS contribution int sum_l w_l Sigma_s(w_k.w_l) psi_l v for ordinate k."""
    space = psi.space
    if mass is None:
        weight = None if kernel.spatial is None else kernel.spatial
        mass = dg.mass_matrix(space.mesh, space, weight=weight)
    combo = kernel.matrix(ords)[k] @ psi.coefficients
    return dg.mass_apply(mass, combo)


# -- manufactured solution ------------------------------------------------


def mms_exact(x, omega):
    """exp(-(x . w)^2); the angular flux used in the convergence studies."""
    t = np.asarray(x, dtype=float) @ np.asarray(omega, dtype=float)
    return np.exp(-t * t)


def mms_source(x, k, ords, sigma_t, kernel):
    """Forcing that makes mms_exact solve the semi-discrete ordinate system.

    The scattering integral is evaluated with the same ordinate quadrature as
    the solver, so the semi-discrete solution is exact and reported errors are
    purely spatial.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    om = ords.directions[k]
    t = pts @ om
    psi_k = np.exp(-t * t)
    adv = -2.0 * t * psi_k
    st = dg.CoefficientField.wrap(sigma_t)(pts)
    mus = ords.directions @ om
    coef = ords.weights * kernel.mu_values(mus)
    psis = np.exp(-((pts @ ords.directions.T) ** 2))
    scat = psis @ coef
    if kernel.spatial is not None:
        scat = scat * kernel.spatial(pts)
    out = adv + st * psi_k - scat
    if np.ndim(x) == 1:
        return float(out[0])
    return out


def mms_inflow(x, k, ords, normal=None):
    """Exact inflow trace for ordinate k; checks w . nu < 0 when a normal is given."""
    om = ords.directions[k]
    if normal is not None and float(np.asarray(normal) @ om) >= 0.0:
        raise NotInflow(f"ordinate {k} is not inflow at the given boundary normal")
    return mms_exact(x, om)


# -- source iteration ------------------------------------------------------


def source_iteration(
    mesh,
    space,
    ords,
    sigma_t,
    kernel,
    f,
    g,
    tol=1e-10,
    max_iter=100,
    schedule_provider=None,
    reference=None,
    parallel=False,
):
    """Swept source iteration for the discrete-ordinates system.

    f(points, k) and g(points, k) give the per-ordinate volume source and
    inflow data.  Each iteration lags the scattering term, then sweeps every
    ordinate independently with its own schedule; operators, right-hand
    sides and schedules are assembled once and reused.  Stops when the
    weighted L2 update norm drops below tol; hitting max_iter is reported via
    IterationLog.converged=False (the best iterate is still returned).
    """
    quad_points = np.vstack([pts for pts, _ in mesh.cell_rules(max(2, 2 * space.p + 2))])
    sigma0 = coercivity_check(sigma_t, kernel, ords, points=quad_points)
    ratio = scattering_ratio(sigma_t, kernel, ords, points=quad_points)
    if ratio >= 1.0:
        raise NotCoercive(f"scattering ratio {ratio} >= 1")
    provider = schedule_provider or (lambda om: schedule_centers(mesh.centers(), om))

    n_q = ords.n_q
    ops = []
    base_rhs = []
    schedules = []
    for k in range(n_q):
        om = ords.directions[k]
        ops.append(dg.assemble_direction(mesh, space, om, sigma_t))
        base_rhs.append(
            dg.assemble_rhs(
                mesh,
                space,
                om,
                lambda pts, kk=k: f(pts, kk),
                lambda pts, kk=k: g(pts, kk),
            )
        )
        schedules.append(provider(om))
    weight = None if kernel.spatial is None else kernel.spatial
    mass = dg.mass_matrix(mesh, space, weight=weight)
    plain_mass = mass if kernel.spatial is None else dg.mass_matrix(mesh, space)
    kmat = kernel.matrix(ords)

    prev = AngularFlux(np.zeros((n_q, space.n_dofs)), space, iteration=0)
    log = IterationLog(bochner_errors=[] if reference is not None else None)
    log.sigma0 = sigma0
    log.scattering_ratio = ratio

    def sweep_one(k, scatter_combo):
        rhs = base_rhs[k] + dg.mass_apply(mass, scatter_combo[k])
        return dg.sweep_solve(ops[k], schedules[k], rhs)

    pool = ThreadPoolExecutor(max_workers=min(8, n_q)) if parallel else None
    try:
        for n in range(1, max_iter + 1):
            scatter_combo = kmat @ prev.coefficients
            if pool is not None:
                new = np.array(
                    list(pool.map(lambda k: sweep_one(k, scatter_combo), range(n_q)))
                )
            else:
                new = np.array([sweep_one(k, scatter_combo) for k in range(n_q)])
            update = float(
                sum(
                    w * dg.l2_norm(plain_mass, new[k] - prev.coefficients[k])
                    for k, w in enumerate(ords.weights)
                )
            )
            log.update_norms.append(update)
            if reference is not None:
                err = float(
                    sum(
                        w
                        * dg.energy_norm_error(
                            dg.SolutionField(
                                reference.coefficients[k] - new[k], space
                            ),
                            None,
                            ords.directions[k],
                            sigma0,
                        )
                        for k, w in enumerate(ords.weights)
                    )
                )
                log.bochner_errors.append(err)
            prev = AngularFlux(new, space, iteration=n)
            log.iterations = n
            if update < tol:
                log.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return prev, log


def bochner_error(psi_h, exact, ords, sigma0):
    """Ordinate-weighted sum of per-direction energy-norm errors.

    exact(points, omega) evaluates the reference angular flux.
    """
    total = 0.0
    for k, w in enumerate(ords.weights):
        om = ords.directions[k]
        total += w * dg.energy_norm_error(
            psi_h.field(k), lambda pts, o=om: exact(pts, o), om, sigma0
        )
    return float(total)


def scalar_flux(psi_h, ords):
    """Angular average: coefficient-wise weighted sum across ordinates."""
    coeffs = ords.weights @ psi_h.coefficients
    return dg.SolutionField(coeffs, psi_h.space)


def reduction_factor(log):
    """Geometric-mean ratio of consecutive update norms over the last half."""
    u = np.asarray(log.update_norms, dtype=float)
    u = u[u > 0.0]
    if len(u) < 4:
        raise InsufficientData(f"only {len(u)} positive update norms logged")
    tail = u[len(u) // 2 :]
    if len(tail) < 2:
        raise InsufficientData("not enough tail iterations")
    ratios = tail[1:] / tail[:-1]
    return float(np.exp(np.mean(np.log(ratios))))
