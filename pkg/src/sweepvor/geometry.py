"""Clipped 2-D Voronoi tessellations over strictly convex polygonal domains.

Cells are built by intersecting the domain with the perpendicular-bisector
half-planes of neighbouring seeds.  Candidate neighbours are visited in
distance order (KD-tree) and the scan stops once half the seed distance
exceeds the current seed-to-vertex radius, so no cutting plane is missed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import quadrature
from .errors import (
    DuplicateSeeds,
    NonConvexDomain,
    PointOutsideDomain,
    SamplingExhausted,
    SeedOutsideDomain,
    SweepvorError,
    VerificationFailure,
)


def _polygon_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon_centroid(v):
    x, y = v[:, 0], v[:, 1]
    cr = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cr)
    cx = np.sum((x + np.roll(x, -1)) * cr) / (6.0 * a)
    cy = np.sum((y + np.roll(y, -1)) * cr) / (6.0 * a)
    return np.array([cx, cy])


def _polygon_diameter(v):
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def _strictly_convex_ccw(v):
    e = np.roll(v, -1, axis=0) - v
    e2 = np.roll(e, -1, axis=0)
    cross = e[:, 0] * e2[:, 1] - e[:, 1] * e2[:, 0]
    return bool(np.all(cross > 0.0))


def _point_in_convex(v, p, strict=True):
    e = np.roll(v, -1, axis=0) - v
    r = p[None, :] - v
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    return bool(np.all(cross > 0.0)) if strict else bool(np.all(cross >= 0.0))


class DomainPolygon:
    """Strictly convex polygon with counter-clockwise vertices."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise NonConvexDomain("domain needs at least 3 planar vertices")
        if not np.all(np.isfinite(v)):
            raise NonConvexDomain("domain vertices must be finite")
        if not _strictly_convex_ccw(v):
            raise NonConvexDomain("domain must be strictly convex with CCW vertex order")
        self.vertices = v
        self.area = _polygon_area(v)
        self.diameter = _polygon_diameter(v)
        e = np.roll(v, -1, axis=0) - v
        t = e / np.linalg.norm(e, axis=1)[:, None]
        # outward edge normals for a CCW polygon
        self.edge_normals = np.column_stack([t[:, 1], -t[:, 0]])
        self.edge_offsets = np.einsum("ij,ij->i", self.edge_normals, v)

    def contains(self, points, tol=0.0):
        """Boolean mask of points with signed edge distance <= tol (tol<0: strict)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        s = p @ self.edge_normals.T - self.edge_offsets[None, :]
        if tol == 0.0:
            return np.all(s < 0.0, axis=1)
        return np.all(s <= tol, axis=1)


def unit_square():
    return DomainPolygon([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass
class Cell:
    id: int
    seed: np.ndarray
    vertices: np.ndarray  # CCW
    area: float
    centroid: np.ndarray
    diameter: float


@dataclass
class Facet:
    id: int
    kind: str  # "interior" | "boundary"
    cells: tuple  # (i, j) for interior, (i,) for boundary
    endpoints: np.ndarray  # (2, 2)
    length: float
    normal: np.ndarray  # unit; interior: from cells[0] toward cells[1]
    midpoint: np.ndarray


class VoronoiMesh:
    """Immutable Voronoi tessellation: cells, oriented facets and adjacency."""

    def __init__(self, domain, seeds, seed_index, cells, facets, adjacency, boundary_facets):
        self.domain = domain
        self.seeds = seeds
        self.seed_index = seed_index
        self.cells = cells
        self.facets = facets
        self.adjacency = adjacency  # per cell: list of (neighbour id, facet id)
        self.boundary_facets = boundary_facets  # per cell: list of facet ids
        interior = [f for f in facets if f.kind == "interior"]
        self.interior_facet_ids = np.array([f.id for f in interior], dtype=np.int64)
        self.interior_pairs = (
            np.array([f.cells for f in interior], dtype=np.int64).reshape(-1, 2)
        )
        self.interior_normals = (
            np.array([f.normal for f in interior], dtype=float).reshape(-1, 2)
        )
        boundary = [f for f in facets if f.kind == "boundary"]
        self.boundary_facet_ids = np.array([f.id for f in boundary], dtype=np.int64)
        self.boundary_cells = np.array([f.cells[0] for f in boundary], dtype=np.int64)
        self.boundary_normals = (
            np.array([f.normal for f in boundary], dtype=float).reshape(-1, 2)
        )
        self._seed_tree = None
        self._cell_rule_cache = {}
        self._facet_rule_cache = {}

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_facets(self):
        return len(self.facets)

    @property
    def max_diameter(self):
        return max(c.diameter for c in self.cells)

    def centers(self):
        """Voronoi centres in cell order (the scheduler's only geometric input)."""
        return self.seeds[self.seed_index]

    def seed_tree(self):
        if self._seed_tree is None:
            self._seed_tree = cKDTree(self.centers())
        return self._seed_tree

    def cell_rules(self, order):
        """Per-cell volume quadrature (points, weights), memoised by order."""
        if order not in self._cell_rule_cache:
            self._cell_rule_cache[order] = [
                quadrature.cell_quadrature(c, order) for c in self.cells
            ]
        return self._cell_rule_cache[order]

    def facet_rules(self, n_points):
        """Per-facet segment quadrature (points, weights), memoised by point count."""
        if n_points not in self._facet_rule_cache:
            self._facet_rule_cache[n_points] = [
                quadrature.facet_quadrature(f, n_points) for f in self.facets
            ]
        return self._facet_rule_cache[n_points]

    def locate(self, points):
        """Containing cell ids by the nearest-seed rule; points must lie in the domain."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ok = self.domain.contains(p, tol=1e-12 * self.domain.diameter)
        if not np.all(ok):
            bad = p[~ok][0]
            raise PointOutsideDomain(f"point {bad.tolist()} is outside the domain")
        _, ids = self.seed_tree().query(p)
        return np.atleast_1d(ids)

    def validate(self, n_probe=300, rng_seed=0):
        """Check the structural mesh invariants; raise VerificationFailure on violation."""
        dom = self.domain
        diam = dom.diameter
        total = sum(c.area for c in self.cells)
        if abs(total - dom.area) > 1e-9 * dom.area:
            raise VerificationFailure(
                f"cell areas sum to {total!r}, domain area {dom.area!r}"
            )
        pairs = set()
        for f in self.facets:
            if abs(np.linalg.norm(f.normal) - 1.0) > 1e-12:
                raise VerificationFailure(f"facet {f.id} normal is not unit")
            if f.kind == "interior":
                i, j = f.cells
                key = (min(i, j), max(i, j))
                if key in pairs:
                    raise VerificationFailure(f"duplicate facet for cell pair {key}")
                pairs.add(key)
                u = self.cells[j].seed - self.cells[i].seed
                u = u / np.linalg.norm(u)
                e = f.endpoints[1] - f.endpoints[0]
                # relative sine tolerance, with an absolute floor absorbing
                # endpoint roundoff on sliver facets
                if abs(float(e @ u)) > max(1e-9 * f.length, 1e-12 * diam):
                    raise VerificationFailure(
                        f"facet {f.id} is not perpendicular to its centre difference"
                    )
                if float(f.normal @ u) < 1.0 - 1e-9:
                    raise VerificationFailure(f"facet {f.id} normal misaligned")
            else:
                for p in f.endpoints:
                    s = p @ dom.edge_normals.T - dom.edge_offsets
                    if np.min(np.abs(s)) > 1e-9 * diam:
                        raise VerificationFailure(
                            f"boundary facet {f.id} endpoint off the domain boundary"
                        )
        for i, neigh in enumerate(self.adjacency):
            for j, fid in neigh:
                if (i, fid) not in self.adjacency[j]:
                    raise VerificationFailure(f"adjacency not symmetric for cells {i},{j}")
        for c in self.cells:
            if not _strictly_convex_ccw(c.vertices):
                raise VerificationFailure(f"cell {c.id} is not strictly convex")
            if not _point_in_convex(c.vertices, c.seed, strict=True):
                raise VerificationFailure(f"seed of cell {c.id} not strictly inside")
        if n_probe > 0:
            rng = np.random.default_rng(rng_seed)
            lo = dom.vertices.min(axis=0)
            hi = dom.vertices.max(axis=0)
            probes = []
            while len(probes) < n_probe:
                cand = lo + (hi - lo) * rng.random((4 * n_probe, 2))
                cand = cand[dom.contains(cand)]
                probes.extend(cand.tolist())
            probes = np.array(probes[:n_probe])
            d, ids = self.seed_tree().query(probes, k=min(2, self.n_cells))
            if self.n_cells > 1:
                ties = d[:, 1] - d[:, 0] <= 1e-12 * diam
                probes, ids = probes[~ties], ids[~ties, 0]
            else:
                ids = np.atleast_1d(ids).reshape(len(probes))
            for p, i in zip(probes, ids):
                if not _point_in_convex(self.cells[int(i)].vertices, p, strict=False):
                    raise VerificationFailure(
                        f"probe {p.tolist()} not inside nearest-seed cell {int(i)}"
                    )
        return True


# -- construction -------------------------------------------------------
#
# The clipping kernel runs on plain Python floats and (x, y) tuples: cell
# polygons have ~10 vertices, where scalar arithmetic beats numpy dispatch
# by a wide margin.


def _clip_labeled(verts, labels, nx, ny, c, new_label, eps):
    """Clip a labelled convex polygon against the half-plane n.x <= c.

    labels[k] tags the edge verts[k] -> verts[k+1]; new edges created on the
    clip line get new_label.  Returns (verts, labels, cut?).
    """
    s = [nx * x + ny * y - c for x, y in verts]
    if max(s) <= eps:
        return verts, labels, False
    m = len(verts)
    out_v = []
    out_l = []
    for k in range(m):
        k2 = k + 1 if k + 1 < m else 0
        sa = s[k]
        sb = s[k2]
        if sa <= eps:
            out_v.append(verts[k])
            out_l.append(labels[k])
            if sb > eps:
                t = sa / (sa - sb)
                t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
                ax, ay = verts[k]
                bx, by = verts[k2]
                out_v.append((ax + t * (bx - ax), ay + t * (by - ay)))
                out_l.append(new_label)
        elif sb <= eps:
            t = sa / (sa - sb)
            t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
            ax, ay = verts[k]
            bx, by = verts[k2]
            out_v.append((ax + t * (bx - ax), ay + t * (by - ay)))
            out_l.append(labels[k])
    return out_v, out_l, True


def _dedup(verts, labels, tol2):
    """Drop zero-length edges (and their labels) left behind by clipping."""
    m = len(verts)
    keep_v = []
    keep_l = []
    for k in range(m):
        ax, ay = verts[k]
        bx, by = verts[k + 1 if k + 1 < m else 0]
        if (bx - ax) ** 2 + (by - ay) ** 2 > tol2:
            keep_v.append(verts[k])
            keep_l.append(labels[k])
    return keep_v, keep_l


def _label_runs(verts, labels, drop_tol2):
    """Merge consecutive equal-label edges into (label, start, end) segments."""
    m = len(verts)
    start = 0
    for k in range(m):
        if labels[k - 1] != labels[k]:
            start = k
            break
    runs = []
    k = 0
    while k < m:
        lab = labels[(start + k) % m]
        j = k
        while j + 1 < m and labels[(start + j + 1) % m] == lab:
            j += 1
        a = verts[(start + k) % m]
        b = verts[(start + j + 1) % m]
        if (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 >= drop_tol2:
            runs.append((lab, a, b))
        k = j + 1
    return runs


def _cell_polygon(i, sx, sy, fetch, dom_verts, dom_labels, eps):
    """Half-plane clipping of seed i's cell, scanning neighbours in distance order."""
    vix = sx[i]
    viy = sy[i]
    verts = dom_verts
    labels = dom_labels
    r2 = max((x - vix) ** 2 + (y - viy) ** 2 for x, y in verts)
    for j, dij in fetch(i):
        if dij * dij > 4.0 * r2:
            break
        inv = 1.0 / dij
        nx = (sx[j] - vix) * inv
        ny = (sy[j] - viy) * inv
        c = nx * 0.5 * (vix + sx[j]) + ny * 0.5 * (viy + sy[j])
        verts, labels, cut = _clip_labeled(verts, labels, nx, ny, c, j, eps)
        if cut:
            r2 = max((x - vix) ** 2 + (y - viy) ** 2 for x, y in verts)
    return verts, labels


def build_voronoi(seeds, domain):
    """Voronoi tessellation of a strictly convex domain.

    Each cell is the intersection of the domain with the half-planes
    {x : (x - (v_i+v_j)/2).(v_j - v_i) < 0} over all other seeds j.
    """
    if not isinstance(domain, DomainPolygon):
        domain = DomainPolygon(domain)
    seeds = np.asarray(seeds, dtype=float)
    if seeds.ndim != 2 or seeds.shape[1] != 2 or len(seeds) < 1:
        raise ValueError("seeds must be a non-empty (n, 2) array")
    if not np.all(np.isfinite(seeds)):
        raise ValueError("seeds must be finite")
    inside = domain.contains(seeds)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise SeedOutsideDomain(f"seed {bad} at {seeds[bad].tolist()} is not strictly inside")
    n = len(seeds)
    diam = domain.diameter
    tree = cKDTree(seeds) if n > 1 else None
    if n > 1:
        dmin, _ = tree.query(seeds, k=2)
        if float(dmin[:, 1].min()) <= 1e-9 * diam:
            pair = int(np.argmin(dmin[:, 1]))
            raise DuplicateSeeds(f"seeds closer than 1e-9 * diameter near seed {pair}")

    eps = 1e-14 * diam
    dedup_tol2 = (1e-13 * diam) ** 2
    drop_tol2 = (1e-12 * diam) ** 2
    dom_verts = [(float(x), float(y)) for x, y in domain.vertices]
    dom_labels = [-(s + 1) for s in range(len(dom_verts))]
    sx = seeds[:, 0].tolist()
    sy = seeds[:, 1].tolist()

    k0 = min(n, 17)
    if n > 1:
        pre_d, pre_i = tree.query(seeds, k=k0)

    def fetch(i):
        # neighbour candidates of seed i in increasing distance, self excluded
        for col in range(1, k0):
            yield int(pre_i[i, col]), float(pre_d[i, col])
        lo = k0
        while lo < n:
            k = min(n, 2 * lo)
            d, idx = tree.query(seeds[i], k=k)
            for col in range(lo, k):
                yield int(idx[col]), float(d[col])
            lo = k

    cell_vertices = []
    runs_per_cell = []
    for i in range(n):
        if n == 1:
            verts, labels = dom_verts, list(dom_labels)
        else:
            verts, labels = _cell_polygon(i, sx, sy, fetch, dom_verts, dom_labels, eps)
        verts, labels = _dedup(verts, labels, dedup_tol2)
        if len(verts) < 3:
            raise SweepvorError(f"degenerate cell for seed {i}")
        cell_vertices.append(np.asarray(verts))
        runs_per_cell.append(_label_runs(verts, labels, drop_tol2))

    facet_primaries = _collect_facets(n, runs_per_cell, diam)
    return _finalize_mesh(domain, seeds, np.arange(n), cell_vertices, facet_primaries)


def _collect_facets(n, runs_per_cell, diam):
    match_tol2 = (1e-9 * diam) ** 2
    primaries = []
    interior = {}
    for i in range(n):
        for lab, a, b in runs_per_cell[i]:
            if lab < 0:
                primaries.append(("boundary", (i,), np.array([a, b])))
            else:
                key = (i, lab) if i < lab else (lab, i)
                interior.setdefault(key, {})[i] = (a, b)

    def d2(p, q):
        return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2

    for key in sorted(interior):
        sides = interior[key]
        i, j = key
        if len(sides) != 2:
            raise SweepvorError(f"one-sided interior facet between cells {i} and {j}")
        (a1, b1), (a2, b2) = sides[i], sides[j]
        direct = max(d2(a1, a2), d2(b1, b2))
        crossed = max(d2(a1, b2), d2(b1, a2))
        if min(direct, crossed) > match_tol2:
            raise SweepvorError(f"facet endpoints disagree between cells {i} and {j}")
        primaries.append(("interior", (i, j), np.array([a1, b1])))
    return primaries


def _finalize_mesh(domain, seeds, seed_index, cell_vertices, facet_primaries):
    """Derive cells, facets, normals and adjacency from primary data.

    Shared by the builder and the mesh reader so both paths produce
    bit-identical derived quantities from equal primary data.
    """
    seed_index = np.asarray(seed_index, dtype=np.int64)
    cells = []
    for i, verts in enumerate(cell_vertices):
        x = verts[:, 0]
        y = verts[:, 1]
        x1 = np.roll(x, -1)
        y1 = np.roll(y, -1)
        cr = x * y1 - x1 * y
        area = 0.5 * float(cr.sum())
        cx = float(((x + x1) * cr).sum() / (6.0 * area))
        cy = float(((y + y1) * cr).sum() / (6.0 * area))
        d = verts[:, None, :] - verts[None, :, :]
        diameter = float(np.sqrt((d * d).sum(-1).max()))
        cells.append(
            Cell(
                id=i,
                seed=seeds[seed_index[i]],
                vertices=verts,
                area=area,
                centroid=np.array([cx, cy]),
                diameter=diameter,
            )
        )
    facets = []
    adjacency = [[] for _ in cells]
    boundary_facets = [[] for _ in cells]
    for fid, (kind, owners, endpoints) in enumerate(facet_primaries):
        a, b = endpoints
        ex = b[0] - a[0]
        ey = b[1] - a[1]
        length = float(np.hypot(ex, ey))
        midpoint = 0.5 * (a + b)
        if kind == "interior":
            i, j = owners
            u = cells[j].seed - cells[i].seed
            normal = u / np.hypot(u[0], u[1])
            adjacency[i].append((j, fid))
            adjacency[j].append((i, fid))
        else:
            (i,) = owners
            normal = np.array([ey / length, -ex / length])
            if float(normal @ (midpoint - cells[i].seed)) < 0.0:
                normal = -normal
            boundary_facets[i].append(fid)
        facets.append(
            Facet(
                id=fid,
                kind=kind,
                cells=tuple(int(o) for o in owners),
                endpoints=np.array([a, b]),
                length=length,
                normal=normal,
                midpoint=midpoint,
            )
        )
    return VoronoiMesh(domain, seeds, seed_index, cells, facets, adjacency, boundary_facets)


# -- seed generation and smoothing ---------------------------------------


def random_seeds(n, domain, rng_seed):
    """n uniform points in the domain via rejection sampling; deterministic per seed.

    Points closer than 1e-6 * domain diameter to an already accepted point are
    rejected and redrawn (bounded retry budget).
    """
    if not isinstance(domain, DomainPolygon):
        domain = DomainPolygon(domain)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo = domain.vertices.min(axis=0)
    hi = domain.vertices.max(axis=0)
    sep2 = (1e-6 * domain.diameter) ** 2
    accepted = np.empty((n, 2))
    count = 0
    budget = 1000 + 200 * n
    drawn = 0
    while count < n:
        batch = max(64, 2 * (n - count))
        if drawn > budget:
            raise SamplingExhausted(f"accepted {count}/{n} after {drawn} draws")
        cand = lo + (hi - lo) * rng.random((batch, 2))
        drawn += batch
        cand = cand[domain.contains(cand)]
        for p in cand:
            if count == n:
                break
            d = accepted[:count] - p[None, :]
            if count and float((d * d).sum(axis=1).min()) <= sep2:
                continue
            accepted[count] = p
            count += 1
    return accepted


def lloyd_relax(seeds, domain, iterations):
    """Replace every seed by its cell centroid, `iterations` times."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    seeds = np.asarray(seeds, dtype=float)
    for _ in range(iterations):
        mesh = build_voronoi(seeds, domain)
        seeds = np.array([c.centroid for c in mesh.cells])
    return seeds
