"""Grid-sampled open sets and their rough-boundary geometry probes.

A GridDomain is a boolean occupancy lattice: cells are closed cubes of side
h, the open set is the union of the interior cells, and its boundary is
carried by the faces separating interior from non-interior cells.  Surface
measure assigns each boundary face the area h^(d-1) and all boundary
distances are measured to the face centroids, which fixes one deterministic
convention for every probe in the package.

Exterior domains (bounded boundary, unbounded set) are truncated by the
lattice box; the outer shell faces are tracked separately from the real
boundary so measure and distance never confuse the two.
"""

import struct

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

WHITNEY_DIST_FACTOR = 4.0   # accept a cube when dist(4I) >= factor * diam(I)
TILE_DIST_FACTOR = 2.0      # looser factor for the chain tiling, full coverage
BALL_RADIUS_FACTOR = 0.6    # chain balls use radius 3 delta / 5
MIN_ADR_SCALE = 4.0         # ADR and oscillation scales start at 4h


class EmptyInteriorError(ValueError):
    """The shape description produced no interior cells."""


class SpecParseError(ValueError):
    """Malformed or unsupported shape description."""


class NotABoundaryPointError(ValueError):
    """The requested point does not sit on a boundary-face centroid."""


class NoInteriorPointError(ValueError):
    """No interior cell center inside the search ball."""


class DisconnectedError(ValueError):
    """The two points live in different connected components."""


class UnreachableError(ValueError):
    """No admissible path from the boundary point to the target."""


class GridDomain:
    """Occupancy-lattice open set with explicit boundary faces.

    interior is a boolean array of shape dims; cell (i, ...) occupies
    origin + [i*h, (i+1)*h] x ... and has center origin + (i + 1/2) h.
    classify(point) -> True marks a face as truncation shell instead of
    real boundary (used by exterior domains).
    """

    def __init__(self, interior, h, origin, bounded=True, boundary_bounded=True,
                 truncation_radius=None, classify=None):
        interior = np.asarray(interior, dtype=bool)
        if interior.ndim not in (2, 3):
            raise SpecParseError("only ambient dimensions 2 and 3 are supported")
        if not interior.any():
            raise EmptyInteriorError("no interior cells")
        self.interior = interior
        self.dim = interior.ndim
        self.h = float(h)
        self.origin = np.asarray(origin, dtype=float)
        self.bounded = bool(bounded)
        self.boundary_bounded = bool(boundary_bounded)
        self.truncation_radius = truncation_radius

        self.cell_ids = np.full(interior.size, -1, dtype=np.int64)
        flat = np.flatnonzero(interior.ravel())
        self.cell_ids[flat] = np.arange(flat.size)
        self._interior_flat = flat
        self.n_cells = flat.size

        self._scan_faces(classify)
        self._centers = None
        self._delta = None
        self._boundary_tree = None
        self._all_tree = None
        self._cell_tree = None

    # -- construction ------------------------------------------------------

    def _scan_faces(self, classify):
        mask = self.interior
        cells, axes, sides = [], [], []
        for axis in range(self.dim):
            for side in (-1, 1):
                shifted = np.roll(mask, -side, axis=axis)
                edge_idx = [slice(None)] * self.dim
                edge_idx[axis] = -1 if side == 1 else 0
                shifted[tuple(edge_idx)] = False  # outside the lattice
                exposed = mask & ~shifted
                idx = np.argwhere(exposed)
                cells.append(idx)
                axes.append(np.full(idx.shape[0], axis, dtype=np.int8))
                sides.append(np.full(idx.shape[0], side, dtype=np.int8))
        cells = np.concatenate(cells)
        axes = np.concatenate(axes)
        sides = np.concatenate(sides)
        centroids = self.origin + (cells + 0.5) * self.h
        centroids[np.arange(cells.shape[0]), axes] += sides * 0.5 * self.h

        trunc = np.zeros(cells.shape[0], dtype=bool)
        if classify is not None:
            outside = centroids.copy()
            outside[np.arange(cells.shape[0]), axes] += sides * 0.5 * self.h
            trunc = classify(outside)

        order = np.lexsort(tuple(cells[:, k] for k in reversed(range(self.dim)))
                           + (axes, sides))
        cells, axes, sides = cells[order], axes[order], sides[order]
        centroids, trunc = centroids[order], trunc[order]

        self.face_cells = cells[~trunc]
        self.face_axes = axes[~trunc]
        self.face_sides = sides[~trunc]
        self.boundary_centroids = centroids[~trunc]
        self.trunc_cells = cells[trunc]
        self.trunc_axes = axes[trunc]
        self.trunc_sides = sides[trunc]
        self.trunc_centroids = centroids[trunc]
        self.n_faces = self.face_cells.shape[0]
        self.sigma_face = self.h ** (self.dim - 1)

    # -- basic geometry ----------------------------------------------------

    @property
    def cell_centers(self):
        if self._centers is None:
            idx = np.argwhere(self.interior)
            self._centers = self.origin + (idx + 0.5) * self.h
        return self._centers

    @property
    def sigma_total(self):
        return self.n_faces * self.sigma_face

    @property
    def is_exterior(self):
        return (not self.bounded) and self.boundary_bounded

    @property
    def boundary_extent(self):
        """Exact diameter of the boundary centroid cloud (via its hull)."""
        pts = self.boundary_centroids
        try:
            hull = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate cloud; bounding box is the best left
            hull = pts
        diff = hull[:, None, :] - hull[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def contains(self, points):
        """Cell-center membership test for arbitrary points."""
        points = np.atleast_2d(points)
        idx = np.floor((points - self.origin) / self.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < self.interior.shape), axis=1)
        out = np.zeros(points.shape[0], dtype=bool)
        if ok.any():
            out[ok] = self.interior[tuple(idx[ok].T)]
        return out

    def cell_id_at(self, point):
        """Compact id of the interior cell whose center is nearest to point."""
        if self._cell_tree is None:
            self._cell_tree = cKDTree(self.cell_centers)
        d, i = self._cell_tree.query(np.asarray(point, dtype=float))
        return int(i)

    def distance_field(self):
        """delta(cell center) = distance to the nearest boundary-face centroid."""
        if self._delta is None:
            tree = self.boundary_tree
            self._delta, _ = tree.query(self.cell_centers)
        return self._delta

    @property
    def boundary_tree(self):
        if self._boundary_tree is None:
            self._boundary_tree = cKDTree(self.boundary_centroids)
        return self._boundary_tree

    @property
    def all_centroids(self):
        """Real boundary plus truncation shell; the edge of the computed set."""
        if self.trunc_centroids.shape[0] == 0:
            return self.boundary_centroids
        return np.vstack([self.boundary_centroids, self.trunc_centroids])

    @property
    def all_faces_tree(self):
        if self._all_tree is None:
            if self.trunc_centroids.shape[0] == 0:
                self._all_tree = self.boundary_tree
            else:
                self._all_tree = cKDTree(self.all_centroids)
        return self._all_tree

    def delta_at(self, points):
        d, _ = self.boundary_tree.query(np.atleast_2d(points))
        return d if d.size > 1 else float(d[0])

    def delta_edge_at(self, points):
        """Distance to the edge of the computed set (boundary or shell)."""
        d, _ = self.all_faces_tree.query(np.atleast_2d(points))
        return d if d.size > 1 else float(d[0])

    def boundary_point_near(self, point):
        """(face index, centroid) of the boundary face nearest to point."""
        d, i = self.boundary_tree.query(np.asarray(point, dtype=float))
        return int(i), self.boundary_centroids[int(i)]

    def inward_ray(self, face_id, count):
        """Up to count interior cell indices stepping straight in from a face."""
        cell = self.face_cells[face_id].copy()
        step = np.zeros(self.dim, dtype=np.int64)
        step[self.face_axes[face_id]] = -int(self.face_sides[face_id])
        out = []
        for _ in range(count):
            if np.any(cell < 0) or np.any(cell >= self.interior.shape) \
                    or not self.interior[tuple(cell)]:
                break
            out.append(cell.copy())
            cell = cell + step
        return np.array(out, dtype=np.int64).reshape(len(out), self.dim)

    def require_boundary_point(self, point, tol=None):
        tol = 1e-6 * self.h if tol is None else tol
        i, c = self.boundary_point_near(point)
        if np.linalg.norm(np.asarray(point, dtype=float) - c) > tol:
            raise NotABoundaryPointError(f"{point} is not a boundary-face centroid")
        return i, c

    # -- surface measure ---------------------------------------------------

    def surface_ball_measure(self, x, r):
        """sigma of the open surface ball Delta(x, r); x must be a centroid."""
        self.require_boundary_point(x)
        return self.surface_ball_faces(x, r).size * self.sigma_face

    def surface_ball_faces(self, x, r):
        """Boundary faces with centroid strictly inside B(x, r)."""
        if r <= 0:
            raise ValueError("radius must be positive")
        x = np.asarray(x, dtype=float)
        ids = np.asarray(self.boundary_tree.query_ball_point(x, r),
                         dtype=np.int64)
        if ids.size == 0:
            return ids
        dist = np.sqrt(((self.boundary_centroids[ids] - x) ** 2).sum(1))
        # strict inequality, robust to fp noise at exact lattice distances
        return np.sort(ids[dist < r - 1e-9 * self.h])

    def dump_mask(self, path):
        """Flat binary lattice with a 32-byte header (dims, h, origin)."""
        dims = list(self.interior.shape) + [0] * (3 - self.dim)
        org = list(self.origin) + [0.0] * (3 - self.dim)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3id3f", *dims, self.h, *org))
            fh.write(np.ascontiguousarray(self.interior, dtype=np.uint8).tobytes())


def load_mask(path):
    """Inverse of GridDomain.dump_mask; returns (mask, h, origin)."""
    with open(path, "rb") as fh:
        n0, n1, n2, h, o0, o1, o2 = struct.unpack("<3id3f", fh.read(32))
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    dims = (n0, n1) if n2 == 0 else (n0, n1, n2)
    origin = np.array([o0, o1, o2][:len(dims)], dtype=float)
    return raw.reshape(dims).astype(bool), h, origin


# -- shape builders ---------------------------------------------------------

def _cells_for(lo, hi, h):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = np.round((hi - lo) / h).astype(int)
    if np.any(np.abs(n * h - (hi - lo)) > 1e-9) or np.any(n <= 0):
        raise SpecParseError(f"h={h} does not divide the box {lo}..{hi}")
    return n, lo


def _centers_grid(n, lo, h):
    axes = [lo[k] + (np.arange(n[k]) + 0.5) * h for k in range(len(n))]
    return np.meshgrid(*axes, indexing="ij")


def build_domain(spec):
    """Build a GridDomain from {"shape": ..., "h": ..., "params": {...}}."""
    try:
        shape = spec["shape"]
        h = float(spec["h"])
    except (KeyError, TypeError) as exc:
        raise SpecParseError(f"domain spec needs shape and h: {exc}") from exc
    params = dict(spec.get("params") or {})
    builder = _BUILDERS.get(shape)
    if builder is None:
        raise SpecParseError(f"unknown shape {shape!r}; known: {sorted(_BUILDERS)}")
    return builder(h, **params)


def _build_box(h, lo=None, hi=None, dim=3):
    lo = [0.0] * dim if lo is None else list(lo)
    hi = [1.0] * len(lo) if hi is None else list(hi)
    n, lo = _cells_for(lo, hi, h)
    return GridDomain(np.ones(tuple(n), dtype=bool), h, lo)


def _build_ball(h, center=None, radius=1.0, dim=3):
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    n, lo = _cells_for(center - radius, center + radius, h)
    grids = _centers_grid(n, lo, h)
    rr = sum((g - c) ** 2 for g, c in zip(grids, center))
    return GridDomain(rr < radius ** 2, h, lo)


def _build_l_shape(h, size=1.0):
    # unit square minus its closed upper-right quadrant: re-entrant corner
    # with interior angle 3 pi / 2 at (size/2, size/2)
    n, lo = _cells_for([0.0, 0.0], [size, size], h)
    gx, gy = _centers_grid(n, lo, h)
    mask = ~((gx > size / 2) & (gy > size / 2))
    return GridDomain(mask, h, lo)


def _build_box_minus_ball(h, lo=None, hi=None, center=None, radius=None, dim=3):
    lo = [0.0] * dim if lo is None else list(lo)
    hi = [1.0] * len(lo) if hi is None else list(hi)
    n, lo_arr = _cells_for(lo, hi, h)
    center = (np.asarray(lo, float) + np.asarray(hi, float)) / 2 if center is None \
        else np.asarray(center, dtype=float)
    radius = float(np.min(np.asarray(hi, float) - np.asarray(lo, float)) / 4) \
        if radius is None else float(radius)
    grids = _centers_grid(n, lo_arr, h)
    rr = sum((g - c) ** 2 for g, c in zip(grids, center))
    return GridDomain(rr > radius ** 2, h, lo_arr)


def _build_exterior_of_ball(h, radius=1.0, r_out=8.0, dim=3):
    n, lo = _cells_for([-r_out] * dim, [r_out] * dim, h)
    grids = _centers_grid(n, lo, h)
    rr = sum(g ** 2 for g in grids)
    mask = rr > radius ** 2

    def classify(points):
        # faces whose outside cell sits beyond the lattice are truncation
        return np.max(np.abs(points), axis=1) > r_out - 0.25 * h

    return GridDomain(mask, h, lo, bounded=False, boundary_bounded=True,
                      truncation_radius=r_out, classify=classify)


def _build_box_minus_needle(h, lo=None, hi=None, axis=0, start=0.25, end=0.75,
                            spine=None):
    lo = [0.0, 0.0, 0.0] if lo is None else list(lo)
    hi = [1.0, 1.0, 1.0] if hi is None else list(hi)
    if len(lo) != 3:
        raise SpecParseError("box_minus_needle is a 3d shape")
    n, lo_arr = _cells_for(lo, hi, h)
    grids = _centers_grid(n, lo_arr, h)
    spine = [(lo[k] + hi[k]) / 2 for k in range(3) if k != axis] if spine is None \
        else list(spine)
    # one cell layer (two when the spine rides a face plane) around the segment
    transverse = [g for k, g in enumerate(grids) if k != axis]
    near = (np.abs(transverse[0] - spine[0]) <= 0.55 * h) \
        & (np.abs(transverse[1] - spine[1]) <= 0.55 * h)
    along = (grids[axis] >= start - 0.55 * h) & (grids[axis] <= end + 0.55 * h)
    mask = ~(near & along)
    if mask.all():
        raise SpecParseError("needle did not remove any cells; refine h")
    return GridDomain(mask, h, lo_arr)


_BUILDERS = {
    "box": _build_box,
    "ball": _build_ball,
    "l_shape": _build_l_shape,
    "box_minus_ball": _build_box_minus_ball,
    "exterior_of_ball": _build_exterior_of_ball,
    "box_minus_needle": _build_box_minus_needle,
}


# -- Ahlfors regularity -----------------------------------------------------

class AdrReport:
    """Surface-measure vs r^(d-1) ratios over sampled centers and scales."""

    def __init__(self, rows, dim):
        self.rows = rows          # (face_id, r, sigma, ratio)
        self.dim = dim
        ratios = np.array([row[3] for row in rows]) if rows else np.array([1.0])
        self.c_upper = float(ratios.max())
        self.c_lower = float(ratios.min())
        self.c_one = float(max(self.c_upper, 1.0 / max(self.c_lower, 1e-300)))

    def to_rows(self):
        return [{"face_id": f, "r": r, "sigma": s, "ratio": q}
                for f, r, s, q in self.rows]


def check_adr(domain, scales=None, stride=1):
    """Measure sigma(Delta(x, r)) / r^(d-1) over boundary centers and scales.

    Scales start at 4h and stop below the boundary diameter; a tiny lower
    ratio at some (x, r) is how lower-content failures (needles) show up.
    """
    h, d = domain.h, domain.dim
    if scales is None:
        top = domain.boundary_extent
        ks = int(np.floor(np.log2(top / (MIN_ADR_SCALE * h)))) + 1
        scales = [MIN_ADR_SCALE * h * 2 ** k for k in range(max(ks, 1))]
    centers = domain.boundary_centroids[::stride]
    ids = np.arange(domain.n_faces)[::stride]
    rows = []
    for r in scales:
        counts = domain.boundary_tree.query_ball_point(centers, r,
                                                       return_length=True)
        sigma = counts * domain.sigma_face
        ratio = sigma / r ** (d - 1)
        rows.extend((int(f), float(r), float(s), float(q))
                    for f, s, q in zip(ids, sigma, ratio))
    return AdrReport(rows, d)


def surface_doubling_constant(domain, scales=None, stride=1):
    """max sigma(Delta(x, 2r)) / sigma(Delta(x, r)) over the sample."""
    h = domain.h
    if scales is None:
        top = domain.boundary_extent / 2
        scales = []
        r = MIN_ADR_SCALE * h
        while r <= top:
            scales.append(r)
            r *= 2
    centers = domain.boundary_centroids[::stride]
    worst = 1.0
    for r in scales:
        small = domain.boundary_tree.query_ball_point(centers, r,
                                                      return_length=True)
        big = domain.boundary_tree.query_ball_point(centers, 2 * r,
                                                    return_length=True)
        ok = small > 0
        if ok.any():
            worst = max(worst, float((big[ok] / small[ok]).max()))
    return worst


# -- Whitney decomposition --------------------------------------------------

class WhitneyCube:
    """Dyadic cube given by its lattice corner (in cells) and side (in cells)."""

    __slots__ = ("corner", "size", "diam", "dist", "dist_inflated")

    def __init__(self, corner, size, diam, dist, dist_inflated):
        self.corner = corner
        self.size = size
        self.diam = diam
        self.dist = dist
        self.dist_inflated = dist_inflated

    def lo(self, domain):
        return domain.origin + np.asarray(self.corner) * domain.h

    def hi(self, domain):
        return domain.origin + (np.asarray(self.corner) + self.size) * domain.h

    def center(self, domain):
        return domain.origin + (np.asarray(self.corner) + self.size / 2) * domain.h


class WhitneyDecomposition:
    """Maximal dyadic cubes with dist(4I) >= 4 diam(I), plus the uncovered ring.

    Every accepted cube has 4 diam(I) <= dist(4I) <= dist(I) <= 13 diam(I)
    and touching cubes have side ratio at most 4; cells too close to the
    boundary to admit such a cube are reported in uncovered_cells.
    """

    def __init__(self, domain, cubes, uncovered_cells):
        self.domain = domain
        self.cubes = cubes
        self.uncovered_cells = uncovered_cells

    def verify(self):
        """Worst W1 slacks and the touching-cube size ratio; all >= 0 is good."""
        rows = []
        for q in self.cubes:
            rows.append({
                "side": q.size * self.domain.h,
                "lower_slack": q.dist_inflated - WHITNEY_DIST_FACTOR * q.diam,
                "upper_slack": 13.0 * q.diam - q.dist,
            })
        ratio = self._touch_ratio()
        return {
            "n_cubes": len(self.cubes),
            "n_uncovered": int(len(self.uncovered_cells)),
            "min_lower_slack": min((r["lower_slack"] for r in rows), default=0.0),
            "min_upper_slack": min((r["upper_slack"] for r in rows), default=0.0),
            "max_touch_ratio": ratio,
            "violations": sum(r["lower_slack"] < -1e-9 or r["upper_slack"] < -1e-9
                              for r in rows) + (ratio > 4.0 + 1e-9),
        }

    def _touch_ratio(self):
        if len(self.cubes) < 2:
            return 1.0
        lo = np.array([q.corner for q in self.cubes], dtype=float)
        size = np.array([q.size for q in self.cubes], dtype=float)
        hi = lo + size[:, None]
        worst = 1.0
        # closed boxes touch when they overlap in every axis interval
        for i in range(len(self.cubes)):
            overlap = np.all((hi[i] >= lo - 1e-9) & (lo[i] <= hi + 1e-9), axis=1)
            overlap[i] = False
            if overlap.any():
                worst = max(worst, float((size[overlap] / size[i]).max()),
                            float((size[i] / size[overlap]).max()))
        return worst


def _region_distance(tree, centroids, lo, hi):
    """Exact distance from the box [lo, hi] to the centroid cloud."""
    center = (lo + hi) / 2
    halfdiag = float(np.linalg.norm(hi - lo) / 2)
    d0, _ = tree.query(center)
    cand = tree.query_ball_point(center, d0 + halfdiag * (1 + 1e-12))
    pts = centroids[cand]
    clamped = np.clip(pts, lo, hi)
    return float(np.sqrt(((pts - clamped) ** 2).sum(1)).min())


def _dyadic_tiles(domain, accept_factor):
    """Top-down maximal dyadic cubes of all-interior cells.

    A cube I is accepted when dist(qI) >= accept_factor * diam(I) with
    q = 4 for Whitney cubes and qI = I for the looser chain tiling.
    Distances are to the edge of the computed set (boundary plus any
    truncation shell), so the construction stays valid on exterior grids.
    Rejected unit cells come back as the leftover list.
    """
    mask = domain.interior
    h, d = domain.h, domain.dim
    tree = domain.all_faces_tree
    centroids = domain.all_centroids
    inflate = accept_factor >= WHITNEY_DIST_FACTOR - 1e-12

    # integral image for O(1) all-interior queries
    acc = mask.astype(np.int64)
    for axis in range(d):
        acc = np.cumsum(acc, axis=axis)
    acc = np.pad(acc, [(1, 0)] * d)

    def count(corner, size):
        total = 0
        for bits in range(2 ** d):
            idx, sign = [], 1
            for k in range(d):
                if (bits >> k) & 1:
                    idx.append(corner[k])
                    sign = -sign
                else:
                    idx.append(min(corner[k] + size, mask.shape[k]))
            total += sign * acc[tuple(idx)]
        return total

    side = 1
    while side < max(mask.shape):
        side *= 2
    cubes, leftover = [], []
    stack = [(tuple([0] * d), side)]
    while stack:
        corner, size = stack.pop()
        # clip cubes that stick out of the lattice bounding box
        span = [min(corner[k] + size, mask.shape[k]) - corner[k] for k in range(d)]
        if any(s <= 0 for s in span):
            continue
        n_in = count(corner, size)
        if n_in == 0:
            continue
        full = all(s == size for s in span) and n_in == size ** d
        if full:
            lo = domain.origin + np.asarray(corner) * h
            hi = lo + size * h
            diam = size * h * np.sqrt(d)
            if inflate:
                probe_lo, probe_hi = lo - 1.5 * size * h, hi + 1.5 * size * h
            else:
                probe_lo, probe_hi = lo, hi
            dist_probe = _region_distance(tree, centroids, probe_lo, probe_hi)
            if dist_probe >= accept_factor * diam:
                dist_self = dist_probe if not inflate else \
                    _region_distance(tree, centroids, lo, hi)
                cubes.append(WhitneyCube(corner, size, diam, dist_self,
                                         dist_probe))
                continue
        if size == 1:
            if full:
                leftover.append(corner)
            continue
        half = size // 2
        for bits in range(2 ** d):
            child = tuple(corner[k] + half * ((bits >> k) & 1) for k in range(d))
            stack.append((child, half))
    return cubes, leftover


def whitney_decompose(domain):
    """Interior dyadic cubes at the classical distance calibration."""
    cubes, leftover = _dyadic_tiles(domain, WHITNEY_DIST_FACTOR)
    uncovered = np.array(leftover, dtype=np.int64).reshape(len(leftover),
                                                           domain.dim)
    return WhitneyDecomposition(domain, cubes, uncovered)


# -- corkscrew points -------------------------------------------------------

class CorkscrewResult:
    __slots__ = ("point", "radius", "c0", "cell", "degenerate")

    def __init__(self, point, radius, c0, cell, degenerate):
        self.point = point
        self.radius = radius
        self.c0 = c0
        self.cell = cell
        self.degenerate = degenerate


def find_corkscrew(domain, x, r):
    """Deepest interior cell center inside B(x, r); c0 = delta / r."""
    if r <= 0:
        raise ValueError("radius must be positive")
    centers = domain.cell_centers
    delta = domain.distance_field()
    x = np.asarray(x, dtype=float)
    inside = np.sqrt(((centers - x) ** 2).sum(1)) < r
    if not inside.any():
        raise NoInteriorPointError(f"B({x}, {r}) holds no interior cell center")
    local = np.where(inside, delta, -np.inf)
    best = int(np.argmax(local))  # first max in C-order: deterministic
    return CorkscrewResult(centers[best], float(delta[best]),
                           float(delta[best] / r), best,
                           degenerate=bool(r <= 2 * domain.h))


# -- Harnack chains ---------------------------------------------------------

class HarnackChain:
    """Sequence of interior balls (center, radius) joining two points."""

    def __init__(self, balls, pi, c2, max_gap):
        self.balls = balls
        self.length = len(balls)
        self.pi = pi          # |X - Y| / min(delta X, delta Y)
        self.c2 = c2          # achieved diameter-to-boundary-distance ratio
        self.max_gap = max_gap


class _ChainTiling:
    """Relaxed dyadic tiling with single-cell fallback; covers the interior."""

    def __init__(self, domain):
        self.domain = domain
        cubes, leftover = _dyadic_tiles(domain, TILE_DIST_FACTOR)
        for corner in leftover:
            lo = domain.origin + np.asarray(corner) * domain.h
            hi = lo + domain.h
            dist = _region_distance(domain.all_faces_tree,
                                    domain.all_centroids, lo, hi)
            cubes.append(WhitneyCube(corner, 1, domain.h * np.sqrt(domain.dim),
                                     dist, dist))
        self.tiles = cubes
        self.centers = np.array([q.center(domain) for q in cubes])
        self.delta = domain.all_faces_tree.query(self.centers)[0]

        owner = np.full(domain.interior.shape, -1, dtype=np.int64)
        for t, q in enumerate(cubes):
            sl = tuple(slice(c, c + q.size) for c in q.corner)
            owner[sl] = t
        self.owner = owner
        self.adjacency = self._build_adjacency(owner)

    def _build_adjacency(self, owner):
        edges = set()
        for axis in range(owner.ndim):
            a = np.moveaxis(owner, axis, 0)
            left, right = a[:-1].ravel(), a[1:].ravel()
            ok = (left >= 0) & (right >= 0) & (left != right)
            edges.update(zip(left[ok].tolist(), right[ok].tolist()))
        adjacency = [[] for _ in self.tiles]
        for i, j in edges:
            adjacency[i].append(j)
            adjacency[j].append(i)
        return adjacency

    def tile_of_cell(self, cell_multi):
        return int(self.owner[tuple(cell_multi)])


def find_harnack_chain(domain, x, y, tiling=None):
    """Chain of interior balls from x to y with logarithmic length.

    Balls are B(Z, 3 delta(Z) / 5), so diam(B)/dist(B, boundary) = 3 for
    every ball.  Consecutive centers are face-adjacent tile centers; a
    shared-face midpoint is inserted between unit tiles so that successive
    balls genuinely overlap.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = float(domain.delta_edge_at(x)), float(domain.delta_edge_at(y))
    if min(dx, dy) <= 0:
        raise ValueError("chain endpoints must be interior points")
    gap_dist = float(np.linalg.norm(x - y))
    pi = gap_dist / min(dx, dy)
    if gap_dist <= abs(dx - dy) * 0.999 or pi <= 1.0:
        # one ball around the deeper point swallows the other, or the
        # separation is below the near-field threshold: two balls suffice
        balls = [(x, BALL_RADIUS_FACTOR * dx), (y, BALL_RADIUS_FACTOR * dy)]
        return HarnackChain(balls, pi, 3.0, _chain_max_gap(balls))

    if tiling is None:
        tiling = _ChainTiling(domain)
    cx = np.floor((x - domain.origin) / domain.h).astype(int)
    cy = np.floor((y - domain.origin) / domain.h).astype(int)
    for c, p in ((cx, x), (cy, y)):
        c[:] = np.clip(c, 0, np.asarray(domain.interior.shape) - 1)
        if not domain.interior[tuple(c)]:
            raise ValueError(f"{p} is not inside an interior cell")
    start, goal = tiling.tile_of_cell(cx), tiling.tile_of_cell(cy)

    prev = {start: start}
    frontier = [start]
    while frontier and goal not in prev:
        nxt = []
        for t in frontier:
            for u in tiling.adjacency[t]:
                if u not in prev:
                    prev[u] = t
                    nxt.append(u)
        frontier = nxt
    if goal not in prev:
        raise DisconnectedError("no tile path between the endpoints")

    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()

    balls = [(x, BALL_RADIUS_FACTOR * dx)]
    for k, t in enumerate(path):
        z, dz = tiling.centers[t], float(tiling.delta[t])
        if k > 0:
            tp = path[k - 1]
            if tiling.tiles[t].size == 1 and tiling.tiles[tp].size == 1:
                mid = (tiling.centers[tp] + z) / 2
                dm = float(domain.delta_edge_at(mid))
                balls.append((mid, BALL_RADIUS_FACTOR * dm))
        balls.append((z, BALL_RADIUS_FACTOR * dz))
    balls.append((y, BALL_RADIUS_FACTOR * dy))
    balls = _dedupe_balls(balls, domain.h)
    return HarnackChain(balls, pi, 3.0, _chain_max_gap(balls))


def _dedupe_balls(balls, h):
    out = [balls[0]]
    for z, r in balls[1:]:
        if np.linalg.norm(z - out[-1][0]) > 1e-9 * h:
            out.append((z, r))
    return out


def _chain_max_gap(balls):
    gap = -np.inf
    for (z1, r1), (z2, r2) in zip(balls, balls[1:]):
        gap = max(gap, float(np.linalg.norm(z1 - z2) - r1 - r2))
    return gap if np.isfinite(gap) else 0.0


# -- carrot (non-tangential) paths -----------------------------------------

class CarrotPath:
    """Interior lattice path from near a boundary point, with delta >= lambda * arclength."""

    def __init__(self, points, lam, lengths, delta):
        self.points = points
        self.lam = lam
        self.lengths = lengths
        self.delta = delta

    @property
    def achieved_lambda(self):
        # skip the boundary anchor itself (delta = arclength = 0 there)
        ratios = self.delta[1:] / np.maximum(self.lengths[1:], 1e-300)
        return float(ratios.min())


def find_carrot_path(domain, y, x, lam_tol=1e-3):
    """Best-lambda interior path from boundary centroid y to interior point x.

    Maximizes lam such that a 6-connected cell path from the cell behind y
    to x keeps delta(Z) >= lam * (arclength from y to Z).  Binary search
    over lam, Dijkstra feasibility check at each trial.
    """
    import heapq

    _, yc = domain.require_boundary_point(y)
    face_id, _ = domain.boundary_point_near(yc)
    start_multi = domain.face_cells[face_id]
    shape = domain.interior.shape
    d = domain.dim
    h = domain.h
    delta_all = np.full(shape, -1.0)
    idx = np.argwhere(domain.interior)
    delta_all[tuple(idx.T)] = domain.distance_field()

    x = np.asarray(x, dtype=float)
    tgt = np.floor((x - domain.origin) / h).astype(int)
    tgt = np.clip(tgt, 0, np.asarray(shape) - 1)
    if not domain.interior[tuple(tgt)]:
        raise NoInteriorPointError(f"{x} is not inside an interior cell")
    tgt = tuple(tgt)
    start = tuple(start_multi)

    steps = []
    for axis in range(d):
        for side in (-1, 1):
            e = [0] * d
            e[axis] = side
            steps.append(tuple(e))

    def reach(lam):
        best = {start: 0.5 * h}
        heap = [(0.5 * h, start)]
        while heap:
            ell, cell = heapq.heappop(heap)
            if best.get(cell, np.inf) < ell - 1e-15:
                continue
            if delta_all[cell] < lam * ell - 1e-12:
                continue
            if cell == tgt:
                return best
            for e in steps:
                nb = tuple(c + s for c, s in zip(cell, e))
                if any(c < 0 or c >= n for c, n in zip(nb, shape)):
                    continue
                if delta_all[nb] < 0:
                    continue
                ell2 = ell + h
                if ell2 < best.get(nb, np.inf) - 1e-15:
                    best[nb] = ell2
                    heapq.heappush(heap, (ell2, nb))
        return None

    best0 = reach(0.0)
    if best0 is None:
        raise UnreachableError("target not reachable through the interior")

    lo, hi = 0.0, 1.0
    best_feasible = best0
    while hi - lo > lam_tol:
        mid = (lo + hi) / 2
        got = reach(mid)
        if got is None:
            hi = mid
        else:
            lo, best_feasible = mid, got

    # backtrack from the target along strictly decreasing arclength labels,
    # stepping only through cells admissible at the achieved lambda
    best = best_feasible
    path = [tgt]
    while path[-1] != start:
        cell = path[-1]
        ell = best[cell]
        nxt = None
        for e in steps:
            nb = tuple(c + s for c, s in zip(cell, e))
            lbl = best.get(nb, np.inf)
            if lbl < ell - 1e-15 and delta_all[nb] >= lo * lbl - 1e-12:
                if nxt is None or lbl < best[nxt]:
                    nxt = nb
        if nxt is None:
            raise RuntimeError("carrot backtrack lost the label trail")
        path.append(nxt)
    path.reverse()

    pts = domain.origin + (np.array(path) + 0.5) * h
    lengths = np.array([best[c] for c in path])
    deltas = np.array([delta_all[c] for c in path])
    return CarrotPath(np.vstack([yc, pts]), lo,
                      np.concatenate([[0.0], lengths]),
                      np.concatenate([[0.0], deltas]))
