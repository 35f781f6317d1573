"""Upwind DG assembly, sweeping solves and energy-norm errors for one direction.

The local basis on each cell is the scaled monomial set
phi_a(x) = ((x - c_T)/h_T)^a for multi-indices |a| <= p, ordered by total
degree then lexicographically, so the first coefficient is the cell value at
the centroid.  Global degrees of freedom are cell-major.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    NotCoercive,
    PointOutsideDomain,
    QuadratureFailure,
    ScheduleInvalid,
    SingularDiagonalBlock,
    SingularMatrix,
    SizeMismatch,
)
from .scheduler import CHARACTERISTIC_TOL, as_direction


class CoefficientField:
    """Scalar field on the domain: a constant or a callable of (m, 2) point arrays."""

    def __init__(self, rule, constant=None):
        self._rule = rule
        self.constant = constant

    @property
    def is_constant(self):
        return self.constant is not None

    @classmethod
    def wrap(cls, value):
        if isinstance(value, cls):
            return value
        if callable(value):
            return cls(value)
        c = float(value)
        return cls(None, constant=c)

    def __call__(self, points):
        points = np.atleast_2d(points)
        if self.is_constant:
            return np.full(len(points), self.constant)
        vals = np.asarray(self._rule(points), dtype=float).reshape(len(points))
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("coefficient field evaluated to a non-finite value")
        return vals


class DGSpace:
    """Discontinuous piecewise polynomials of total degree <= p on a mesh."""

    def __init__(self, mesh, p):
        if p < 0:
            raise ValueError("polynomial degree must be >= 0")
        self.mesh = mesh
        self.p = int(p)
        self.alpha = np.array(
            [(a, d - a) for d in range(self.p + 1) for a in range(d + 1)], dtype=np.int64
        )
        self.n_local = len(self.alpha)  # (p+1)(p+2)/2
        self.n_dofs = mesh.n_cells * self.n_local
        self._ax = self.alpha[:, 0]
        self._ay = self.alpha[:, 1]

    def cell_dofs(self, c):
        return slice(c * self.n_local, (c + 1) * self.n_local)

    def values(self, cell, points):
        """Basis values at points: (m, n_local)."""
        pts = np.atleast_2d(points)
        xi = (pts[:, 0, None] - cell.centroid[0]) / cell.diameter
        eta = (pts[:, 1, None] - cell.centroid[1]) / cell.diameter
        return xi ** self._ax[None, :] * eta ** self._ay[None, :]

    def gradients(self, cell, points):
        """Basis gradients at points: (m, n_local, 2)."""
        pts = np.atleast_2d(points)
        h = cell.diameter
        xi = (pts[:, 0, None] - cell.centroid[0]) / h
        eta = (pts[:, 1, None] - cell.centroid[1]) / h
        gx = self._ax[None, :] * xi ** np.maximum(self._ax - 1, 0)[None, :] * eta ** self._ay[None, :] / h
        gy = self._ay[None, :] * xi ** self._ax[None, :] * eta ** np.maximum(self._ay - 1, 0)[None, :] / h
        return np.stack([gx, gy], axis=-1)


@dataclass
class SolutionField:
    """Coefficient vector over a DGSpace."""

    coefficients: np.ndarray
    space: DGSpace

    def cell_coefficients(self, c):
        return self.coefficients[self.space.cell_dofs(c)]


def evaluate(u_h, x):
    """Point values of a DG field; cells are located by the nearest-seed rule."""
    space = u_h.space
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    ids = space.mesh.locate(pts)
    out = np.empty(len(pts))
    for k, (p, c) in enumerate(zip(pts, ids)):
        cell = space.mesh.cells[int(c)]
        out[k] = float(space.values(cell, p[None, :])[0] @ u_h.cell_coefficients(int(c)))
    if np.ndim(x) == 1:
        return float(out[0])
    return out


@dataclass
class FacetRoles:
    """Sign of w . nu per facet (on the facet's stored normal), with tolerance band."""

    signs: np.ndarray  # (n_facets,) in {-1, 0, +1}
    mesh: object
    direction: np.ndarray

    def role(self, cell, facet_id):
        """'inflow' | 'outflow' | 'characteristic' as seen from the given cell."""
        f = self.mesh.facets[facet_id]
        s = int(self.signs[facet_id])
        if cell not in f.cells:
            raise ValueError(f"cell {cell} does not own facet {facet_id}")
        if f.kind == "interior" and cell == f.cells[1]:
            s = -s
        if s > 0:
            return "outflow"
        if s < 0:
            return "inflow"
        return "characteristic"


def classify_facets(mesh, omega, tol=CHARACTERISTIC_TOL):
    """Classify facets as inflow/outflow/characteristic per owning cell."""
    omega = as_direction(omega)
    signs = np.zeros(mesh.n_facets, dtype=np.int64)
    s_int = mesh.interior_normals @ omega
    signs[mesh.interior_facet_ids] = np.where(
        s_int > tol, 1, np.where(s_int < -tol, -1, 0)
    )
    s_bnd = mesh.boundary_normals @ omega
    signs[mesh.boundary_facet_ids] = np.where(
        s_bnd > tol, 1, np.where(s_bnd < -tol, -1, 0)
    )
    return FacetRoles(signs=signs, mesh=mesh, direction=omega)


class BlockOperator:
    """Per-direction DG operator: dense diagonal blocks plus upwind-neighbour blocks.

    Off-diagonal blocks are keyed (downwind cell, upwind neighbour); each key
    corresponds to one non-characteristic interior facet.
    """

    def __init__(self, n_cells, block_size, direction):
        self.n_cells = n_cells
        self.block_size = block_size
        self.direction = direction
        self.diag = np.zeros((n_cells, block_size, block_size))
        self.offdiag = {}
        self._lu = None
        self._rows = None

    @property
    def n_dofs(self):
        return self.n_cells * self.block_size

    def _factorize(self):
        if self._lu is not None:
            return
        if not np.all(np.isfinite(self.diag)):
            raise SingularDiagonalBlock("non-finite diagonal block")
        if self.block_size == 1:
            d = self.diag[:, 0, 0]
            if np.any(d == 0.0):
                raise SingularDiagonalBlock(f"zero diagonal at cell {int(np.argmin(np.abs(d)))}")
            self._lu = 1.0 / d
        else:
            lus = []
            for c in range(self.n_cells):
                try:
                    lus.append(scipy.linalg.lu_factor(self.diag[c]))
                except (scipy.linalg.LinAlgError, ValueError) as exc:
                    raise SingularDiagonalBlock(f"cell {c}: {exc}") from exc
            self._lu = lus
        rows = {}
        for (t, tp), blk in self.offdiag.items():
            rows.setdefault(t, ([], []))
            rows[t][0].append(tp)
            rows[t][1].append(blk)
        self._rows = {
            t: (np.array(ups, dtype=np.int64), np.array(blks))
            for t, (ups, blks) in rows.items()
        }

    def to_coo(self):
        """Scalar COO triplets (rows, cols, values) sorted by (row, col), zeros dropped."""
        b = self.block_size
        rows = []
        cols = []
        vals = []
        base = np.arange(b)
        for c in range(self.n_cells):
            r0 = c * b
            rows.append(np.repeat(base + r0, b))
            cols.append(np.tile(base + r0, b))
            vals.append(self.diag[c].ravel())
        for (t, tp), blk in self.offdiag.items():
            rows.append(np.repeat(base + t * b, b))
            cols.append(np.tile(base + tp * b, b))
            vals.append(blk.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        srt = np.lexsort((cols, rows))
        return rows[srt], cols[srt], vals[srt]

    def to_csr(self):
        r, c, v = self.to_coo()
        return scipy.sparse.csr_matrix((v, (r, c)), shape=(self.n_dofs, self.n_dofs))


@dataclass
class TriangularityReport:
    blocks_above_diagonal: int
    entries_above_diagonal: int


def _volume_quad_order(p):
    return max(2, 2 * p + 2)


def _facet_points(p):
    return max(2, p + 2)


def assemble_direction(mesh, space, omega, sigma_t, tol=CHARACTERISTIC_TOL):
    """Assemble the upwind DG operator for one transport direction.

    Cell blocks take the volume term int_T (w.grad(u) + Sigma_t u) v plus
    |w.nu| u v on inflow facets; each inflow interior facet also couples the
    downwind cell to its upwind neighbour with -|w.nu| u_up v.
    """
    omega = as_direction(omega)
    sigma = CoefficientField.wrap(sigma_t)
    p = space.p
    op = BlockOperator(mesh.n_cells, space.n_local, omega)
    rules = mesh.cell_rules(_volume_quad_order(p))
    for c, cell in enumerate(mesh.cells):
        pts, w = rules[c]
        st = sigma(pts)
        if np.any(st <= 0.0):
            raise NotCoercive(f"Sigma_t not positive at a quadrature point of cell {c}")
        V = space.values(cell, pts)
        G = space.gradients(cell, pts)
        conv = G @ omega
        op.diag[c] = V.T @ (w[:, None] * (conv + st[:, None] * V))
    frules = mesh.facet_rules(_facet_points(p))
    for k in range(len(mesh.interior_facet_ids)):
        s = float(mesh.interior_normals[k] @ omega)
        if abs(s) <= tol:
            continue
        fid = int(mesh.interior_facet_ids[k])
        i, j = (int(v) for v in mesh.interior_pairs[k])
        down, up = (j, i) if s > 0.0 else (i, j)
        pts, w = frules[fid]
        Vd = space.values(mesh.cells[down], pts)
        Vu = space.values(mesh.cells[up], pts)
        a = abs(s)
        op.diag[down] += a * (Vd.T @ (w[:, None] * Vd))
        op.offdiag[(down, up)] = -a * (Vd.T @ (w[:, None] * Vu))
    for k in range(len(mesh.boundary_facet_ids)):
        s = float(mesh.boundary_normals[k] @ omega)
        if s >= -tol:
            continue
        fid = int(mesh.boundary_facet_ids[k])
        i = int(mesh.boundary_cells[k])
        pts, w = frules[fid]
        V = space.values(mesh.cells[i], pts)
        op.diag[i] += abs(s) * (V.T @ (w[:, None] * V))
    if not np.all(np.isfinite(op.diag)):
        raise QuadratureFailure("non-finite entries in assembled operator")
    return op


def assemble_rhs(mesh, space, omega, f, g_D, tol=CHARACTERISTIC_TOL):
    """Source plus inflow-boundary data: int_T f v + int |w.nu| g_D v on inflow."""
    omega = as_direction(omega)
    f = CoefficientField.wrap(f)
    g = CoefficientField.wrap(g_D)
    p = space.p
    rhs = np.zeros(space.n_dofs)
    rules = mesh.cell_rules(_volume_quad_order(p))
    for c, cell in enumerate(mesh.cells):
        pts, w = rules[c]
        V = space.values(cell, pts)
        rhs[space.cell_dofs(c)] = V.T @ (w * f(pts))
    frules = mesh.facet_rules(_facet_points(p))
    for k in range(len(mesh.boundary_facet_ids)):
        s = float(mesh.boundary_normals[k] @ omega)
        if s >= -tol:
            continue
        fid = int(mesh.boundary_facet_ids[k])
        i = int(mesh.boundary_cells[k])
        pts, w = frules[fid]
        V = space.values(mesh.cells[i], pts)
        rhs[space.cell_dofs(i)] += abs(s) * (V.T @ (w * g(pts)))
    if not np.all(np.isfinite(rhs)):
        raise QuadratureFailure("non-finite entries in assembled right-hand side")
    return rhs


def sweep_solve(op, schedule, rhs, space=None, check=True):
    """Solve by forward substitution in schedule order.

    Each cell's dense block system is solved once all its upwind neighbours
    have been solved; a rank check guards against invalid schedules.
    """
    rhs = np.asarray(rhs, dtype=float)
    if len(rhs) != op.n_dofs:
        raise SizeMismatch(f"rhs has {len(rhs)} entries, operator {op.n_dofs}")
    if len(schedule.order) != op.n_cells or schedule.n_nodes != op.n_cells:
        raise SizeMismatch("schedule does not cover the operator's cells")
    op._factorize()
    ranks = schedule.inverse
    b = op.block_size
    U = np.zeros((op.n_cells, b))
    R = rhs.reshape(op.n_cells, b)
    rows = op._rows
    lu = op._lu
    if b == 1:
        u1 = U[:, 0]
        r1 = R[:, 0]
        for t in schedule.order:
            t = int(t)
            acc = r1[t]
            hit = rows.get(t)
            if hit is not None:
                ups, blks = hit
                if check and np.any(ranks[ups] > ranks[t]):
                    raise ScheduleInvalid(f"cell {t} depends on unsolved upwind cells")
                acc = acc - float(blks[:, 0, 0] @ u1[ups])
            u1[t] = acc * lu[t]
    else:
        for t in schedule.order:
            t = int(t)
            acc = R[t].copy()
            hit = rows.get(t)
            if hit is not None:
                ups, blks = hit
                if check and np.any(ranks[ups] > ranks[t]):
                    raise ScheduleInvalid(f"cell {t} depends on unsolved upwind cells")
                acc -= np.einsum("kab,kb->a", blks, U[ups])
            U[t] = scipy.linalg.lu_solve(lu[t], acc)
    sol = U.reshape(-1)
    if not np.all(np.isfinite(sol)):
        raise SingularDiagonalBlock("sweep produced non-finite values")
    if space is not None:
        return SolutionField(sol, space)
    return sol


def direct_solve(op, rhs, space=None):
    """Dense-path oracle: expand the blocks to a sparse matrix and factorise."""
    rhs = np.asarray(rhs, dtype=float)
    if len(rhs) != op.n_dofs:
        raise SizeMismatch(f"rhs has {len(rhs)} entries, operator {op.n_dofs}")
    A = op.to_csr()
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.sparse.linalg.MatrixRankWarning)
        try:
            sol = scipy.sparse.linalg.spsolve(A, rhs)
        except (scipy.sparse.linalg.MatrixRankWarning, RuntimeError) as exc:
            raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularMatrix("direct solve produced non-finite values")
    if space is not None:
        return SolutionField(sol, space)
    return sol


def apply_permutation(op, schedule):
    """Reorder rows and columns by schedule rank; report blocks above the diagonal."""
    if len(schedule.order) != op.n_cells or schedule.n_nodes != op.n_cells:
        raise SizeMismatch("schedule does not cover the operator's cells")
    ranks = schedule.inverse
    out = BlockOperator(op.n_cells, op.block_size, op.direction)
    out.diag = op.diag[schedule.order]
    blocks_above = 0
    for (t, tp), blk in op.offdiag.items():
        r, c = int(ranks[t]), int(ranks[tp])
        out.offdiag[(r, c)] = blk
        if c > r and np.any(blk != 0.0):
            blocks_above += 1
    rows, cols, _ = out.to_coo()
    entries_above = int(np.count_nonzero(cols > rows))
    return out, TriangularityReport(blocks_above, entries_above)


def permute_vector(vec, schedule, block_size):
    """Reorder a cell-major coefficient vector into schedule order."""
    return vec.reshape(-1, block_size)[schedule.order].reshape(-1)


def unpermute_vector(vec, schedule, block_size):
    """Inverse of permute_vector."""
    out = np.empty_like(vec.reshape(-1, block_size))
    out[schedule.order] = vec.reshape(-1, block_size)
    return out.reshape(-1)


def mass_matrix(mesh, space, weight=None):
    """Block-diagonal mass blocks (n_cells, n_local, n_local), optionally weighted."""
    wfield = None if weight is None else CoefficientField.wrap(weight)
    rules = mesh.cell_rules(_volume_quad_order(space.p))
    M = np.empty((mesh.n_cells, space.n_local, space.n_local))
    for c, cell in enumerate(mesh.cells):
        pts, w = rules[c]
        if wfield is not None:
            w = w * wfield(pts)
        V = space.values(cell, pts)
        M[c] = V.T @ (w[:, None] * V)
    return M


def mass_apply(M, coeffs):
    """Blockwise product M @ coeffs for a cell-major coefficient vector."""
    n, b, _ = M.shape
    return np.einsum("cab,cb->ca", M, coeffs.reshape(n, b)).reshape(-1)


def l2_norm(M, coeffs):
    """L2 norm of the DG field with the given mass blocks."""
    n, b, _ = M.shape
    U = coeffs.reshape(n, b)
    return float(np.sqrt(np.einsum("cb,cab,ca->", U, M, U)))


def energy_norm_error(u_h, exact, omega, sigma0, mesh=None, space=None, quad_order=None):
    """Energy norm of (exact - u_h); pass exact=None for the norm of u_h itself.

    Accumulates sigma0 * ||e||^2 over cells, half the |w.nu|-weighted squared
    jump over inflow sides of interior facets, and half the |w.nu|-weighted
    squared trace over inflow boundary facets.  Exact-solution traces are
    evaluated pointwise at the facet quadrature nodes.
    """
    if sigma0 <= 0.0:
        raise ValueError("sigma0 must be > 0")
    space = space or u_h.space
    mesh = mesh or space.mesh
    omega = as_direction(omega)
    p = space.p
    order = quad_order or max(_volume_quad_order(p), 8)
    nfp = max(_facet_points(p), (order + 2) // 2)
    coeffs = u_h.coefficients
    acc = 0.0
    rules = mesh.cell_rules(order)
    for c, cell in enumerate(mesh.cells):
        pts, w = rules[c]
        vals = space.values(cell, pts) @ coeffs[space.cell_dofs(c)]
        e = exact(pts) - vals if exact is not None else vals
        acc += sigma0 * float(w @ (e * e))
    frules = mesh.facet_rules(nfp)
    for k in range(len(mesh.interior_facet_ids)):
        s = float(mesh.interior_normals[k] @ omega)
        if abs(s) <= CHARACTERISTIC_TOL:
            continue
        fid = int(mesh.interior_facet_ids[k])
        i, j = (int(v) for v in mesh.interior_pairs[k])
        down, up = (j, i) if s > 0.0 else (i, j)
        pts, w = frules[fid]
        vd = space.values(mesh.cells[down], pts) @ coeffs[space.cell_dofs(down)]
        vu = space.values(mesh.cells[up], pts) @ coeffs[space.cell_dofs(up)]
        if exact is not None:
            ex = exact(pts)
            jump = (ex - vd) - (ex - vu)
        else:
            jump = vd - vu
        acc += 0.5 * abs(s) * float(w @ (jump * jump))
    for k in range(len(mesh.boundary_facet_ids)):
        s = float(mesh.boundary_normals[k] @ omega)
        if s >= -CHARACTERISTIC_TOL:
            continue
        fid = int(mesh.boundary_facet_ids[k])
        i = int(mesh.boundary_cells[k])
        pts, w = frules[fid]
        vals = space.values(mesh.cells[i], pts) @ coeffs[space.cell_dofs(i)]
        e = exact(pts) - vals if exact is not None else vals
        acc += 0.5 * abs(s) * float(w @ (e * e))
    return float(np.sqrt(acc))


def write_coo(path, rows, cols, vals=None, config_hash=None):
    """Text COO dump: 'row col value' lines (17 significant digits) or 'row col'."""
    lines = []
    if config_hash:
        lines.append(f"# config={config_hash}")
    if vals is None:
        lines.extend(f"{int(r)} {int(c)}" for r, c in zip(rows, cols))
    else:
        lines.extend(
            f"{int(r)} {int(c)} {v:.17g}" for r, c, v in zip(rows, cols, vals)
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
