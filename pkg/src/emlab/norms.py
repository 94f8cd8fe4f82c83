"""Holder seminorms, Carleson-type energy norms, and Campanato oscillations.

All three are sups over a witness set (point pairs, or boundary points
crossed with dyadic scales).  Reductions are deterministic: candidates are
enumerated in index order and ties keep the earliest witness, so repeated
runs with the same seed reproduce the same report bit for bit.
"""

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from . import operator as op_mod

EXHAUSTIVE_MAX_POINTS = 4000   # all-pairs above this gets too expensive
SHELL_MIN_PAIRS = 64           # sampling quota per dyadic distance shell
SHELL_ROUNDS = 10
SHELL_ANCHORS = 64
PARTNERS_PER_ANCHOR = 8
NEIGHBOR_PAIRS = 8             # kNN micro-pairs always evaluated
SAMPLE_SEED = 0x5EED
MIN_OSC_CELLS = 4.0            # oscillation and Carleson scales start at 4h
MAX_SUP_CENTERS = 2048         # boundary centers kept when striding "auto"
CENTER_BLOCK = 64              # ball sums evaluated this many centers at a time
RATIO_FLAG_LO = 1.0 / 50.0
RATIO_FLAG_HI = 50.0
CAD_C0_FLOOR = 0.02            # corkscrew constant below this fails the probe
NOT_CAD_SURROGATE = "not_cad_surrogate"


class NormReport:
    """Sup-type norm value plus the witness that achieved it."""

    def __init__(self, value, method, witness, pairs, seed=None):
        self.value = float(value)
        self.method = method          # "exhaustive" | "stratified"
        self.witness = witness        # (i, j) pair or (face_id, r)
        self.pairs = int(pairs)
        self.seed = seed

    def to_json(self):
        w = [int(self.witness[0]),
             int(self.witness[1]) if isinstance(self.witness[1], (int, np.integer))
             else float(self.witness[1])]
        return {"value": self.value, "method": self.method, "witness": w,
                "pairs": self.pairs, "seed": self.seed}


# -- Holder seminorm --------------------------------------------------------

def _quotients(points, values, phi, ii, jj):
    d = np.sqrt(((points[ii] - points[jj]) ** 2).sum(1))
    ok = d > 0
    q = np.full(d.shape, -1.0)
    if ok.any():
        q[ok] = np.abs(values[ii[ok]] - values[jj[ok]]) / phi(d[ok])
    return q


def _exhaustive_sup(points, values, phi):
    n = points.shape[0]
    best, wit = -1.0, (0, min(1, n - 1))
    rows_per = max(1, 4_000_000 // n)
    count = 0
    for a in range(0, n - 1, rows_per):
        b = min(a + rows_per, n - 1)
        ii = np.arange(a, b)
        jj = np.arange(a + 1, n)
        d2 = ((points[ii, None, :] - points[None, a + 1:, :]) ** 2).sum(-1)
        upper = jj[None, :] > ii[:, None]
        d = np.sqrt(np.where(d2 > 0, d2, 1.0))
        q = np.where(upper & (d2 > 0),
                     np.abs(values[ii, None] - values[None, a + 1:]) / phi(d),
                     -1.0)
        count += int(upper.sum())
        k = int(np.argmax(q))
        if q.flat[k] > best:
            best = q.flat[k]
            wit = (int(ii[k // q.shape[1]]), int(jj[k % q.shape[1]]))
    return max(best, 0.0), wit, count


def _stratified_pairs(points, values, tree, rng):
    """kNN micro-pairs, coordinate/value extremes, and dyadic-shell samples."""
    n = points.shape[0]
    k = min(NEIGHBOR_PAIRS + 1, n)
    nb_d, nb = tree.query(points, k=k)
    out = [np.column_stack([np.repeat(np.arange(n), k - 1), nb[:, 1:].ravel()])]

    # extremes of each coordinate and of the data, paired exhaustively
    cand = [np.argmin(values), np.argmax(values)]
    for ax in range(points.shape[1]):
        cand += [int(np.argmin(points[:, ax])), int(np.argmax(points[:, ax]))]
    cand = sorted(set(cand))
    ci, cj = np.triu_indices(len(cand), k=1)
    cand = np.asarray(cand)
    out.append(np.column_stack([cand[ci], cand[cj]]))

    d_hi = float(np.linalg.norm(points.max(0) - points.min(0)))
    pos = nb_d[:, 1][nb_d[:, 1] > 0]
    d_lo = max(float(pos.min()) if pos.size else d_hi, 1e-12)
    hi = d_hi
    while hi > d_lo:
        lo = hi / 2
        got, total = [], 0
        for _ in range(SHELL_ROUNDS):
            if hi >= d_hi / 8:
                # broad shells hold a fat fraction of all pairs: rejection works
                a = rng.integers(0, n, size=4096)
                b = rng.integers(0, n, size=4096)
                dd = np.sqrt(((points[a] - points[b]) ** 2).sum(1))
                keep = (dd >= lo) & (dd < hi) & (a != b)
                got.append(np.column_stack([a[keep], b[keep]]))
            else:
                anchors = rng.integers(0, n, size=SHELL_ANCHORS)
                lists = tree.query_ball_point(points[anchors], hi)
                for a, lst in zip(anchors, lists):
                    lst = np.asarray(lst, dtype=np.int64)
                    if lst.size == 0:
                        continue
                    dd = np.sqrt(((points[lst] - points[a]) ** 2).sum(1))
                    lst = lst[(dd >= lo) & (lst != a)]
                    if lst.size > PARTNERS_PER_ANCHOR:
                        lst = rng.choice(lst, size=PARTNERS_PER_ANCHOR,
                                         replace=False)
                    if lst.size:
                        got.append(np.column_stack(
                            [np.full(lst.size, a, dtype=np.int64), lst]))
            total = sum(g.shape[0] for g in got)
            if total >= SHELL_MIN_PAIRS:
                break
        if got:
            out.append(np.vstack(got))
        hi = lo
    return np.vstack(out)


def holder_seminorm(points, values, phi, plan="auto", seed=SAMPLE_SEED,
                    extra_pairs=None):
    """sup over pairs of |u(X) - u(Y)| / phi(|X - Y|) with witness.

    Exhaustive when the point set is small (or plan="exhaustive"), else
    stratified: kNN pairs, bounding-box/value extremes, and at least
    SHELL_MIN_PAIRS sampled pairs per dyadic distance shell.  extra_pairs
    (index pairs) are always evaluated on top.  Coincident points are
    skipped.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    n = points.shape[0]
    if n < 2:
        raise ValueError("holder seminorm needs at least two points")
    if plan not in ("auto", "exhaustive", "stratified"):
        raise ValueError(f"unknown plan {plan!r}")
    if plan == "exhaustive" or (plan == "auto" and n <= EXHAUSTIVE_MAX_POINTS):
        value, wit, count = _exhaustive_sup(points, values, phi)
        if extra_pairs is not None:
            count += len(extra_pairs)   # already covered, but keep the count honest
        return NormReport(value, "exhaustive", wit, count, seed=None)

    rng = np.random.default_rng(seed)
    tree = cKDTree(points)
    pairs = _stratified_pairs(points, values, tree, rng)
    if extra_pairs is not None and len(extra_pairs):
        pairs = np.vstack([pairs, np.asarray(extra_pairs, dtype=np.int64)])
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs[pairs[:, 0] != pairs[:, 1]], axis=0)
    q = _quotients(points, values, phi, pairs[:, 0], pairs[:, 1])
    k = int(np.argmax(q))
    return NormReport(max(float(q[k]), 0.0), "stratified",
                      (int(pairs[k, 0]), int(pairs[k, 1])), pairs.shape[0],
                      seed=seed)


def closure_point_set(field):
    """Cell centers plus boundary centroids, with the field's values there."""
    dom = field.domain
    pts = np.vstack([dom.cell_centers, dom.boundary_centroids])
    vals = np.concatenate([field.values, field.boundary_values])
    return pts, vals


def holder_trace_pair(field, phi, plan="auto", seed=SAMPLE_SEED):
    """(boundary report, closure report) for one solve.

    The boundary witness pair is re-evaluated inside the closure set, so the
    closure value can never fall below the boundary value: trace pairs are
    closure pairs.
    """
    dom = field.domain
    fb = holder_seminorm(dom.boundary_centroids, field.boundary_values, phi,
                         plan=plan, seed=seed)
    off = dom.n_cells
    extra = np.array([[off + fb.witness[0], off + fb.witness[1]]])
    pts, vals = closure_point_set(field)
    fu = holder_seminorm(pts, vals, phi, plan=plan, seed=seed,
                         extra_pairs=extra)
    return fb, fu


# -- Carleson-type norm -----------------------------------------------------

def _resolve_stride(n, stride):
    if stride == "auto":
        return max(1, int(np.ceil(n / MAX_SUP_CENTERS)))
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return stride


def _dyadic_scales(domain, top=None):
    r = MIN_OSC_CELLS * domain.h
    top = domain.boundary_extent if top is None else top
    out = [r]
    while out[-1] * 2 <= top + 1e-12:
        out.append(out[-1] * 2)
    return out


def _ball_sums(centers, pts, scales, w):
    """sums[c, s] of w over pts within scales[s] of centers[c]."""
    sums = np.zeros((centers.shape[0], len(scales)))
    r2 = np.asarray(scales) ** 2
    for a in range(0, centers.shape[0], CENTER_BLOCK):
        blk = centers[a:a + CENTER_BLOCK]
        d2 = ((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        for s in range(len(scales)):
            sums[a:a + CENTER_BLOCK, s] = (d2 < r2[s]) @ w
    return sums


def carleson_norm(u, phi, stride="auto"):
    """sup over boundary x and dyadic r of the phi-normalized energy density.

    The density is (r^-n * sum over B(x,r) cells of |grad u|^2 delta h^d)
    ^ (1/2) / phi(r) with n = d - 1; gradients are face differences.
    """
    dom = u.domain
    delta = dom.distance_field()
    g = u.grad_cells()
    w = (g * g).sum(1) * delta * dom.h ** dom.dim
    stride = _resolve_stride(dom.n_faces, stride)
    ids = np.arange(dom.n_faces)[::stride]
    centers = dom.boundary_centroids[ids]
    scales = _dyadic_scales(dom)
    sums = _ball_sums(centers, dom.cell_centers, scales, w)
    n_exp = dom.dim - 1
    vals = np.sqrt(sums / np.asarray(scales) ** n_exp) \
        / np.asarray([phi(r) for r in scales])
    k = int(np.argmax(vals))
    face = int(ids[k // len(scales)])
    r = float(scales[k % len(scales)])
    method = "exhaustive" if stride == 1 else "stratified"
    return NormReport(float(vals.flat[k]), method, (face, r), vals.size,
                      seed=None)


# -- Campanato norms and oscillations ---------------------------------------

def ball_average(domain, f, x, r):
    """sigma-average of f over the surface ball Delta(x, r)."""
    ids = domain.surface_ball_faces(x, r)
    if ids.size == 0:
        raise ValueError(f"empty surface ball at {x}, r={r}")
    return float(np.mean(np.asarray(f, dtype=float)[ids]))


def ball_mean_oscillation(domain, f, x, r, p=1):
    """(average over Delta(x,r) of |f - f_Delta|^p) ^ (1/p)."""
    ids = domain.surface_ball_faces(x, r)
    if ids.size == 0:
        raise ValueError(f"empty surface ball at {x}, r={r}")
    fv = np.asarray(f, dtype=float)[ids]
    return float(np.mean(np.abs(fv - fv.mean()) ** p) ** (1.0 / p))


def _oscillation_table(domain, f, p, scales, stride):
    """vals[c, s]: p-mean oscillation of f over Delta(center_c, scales[s])."""
    f = np.asarray(f, dtype=float)
    stride = _resolve_stride(domain.n_faces, stride)
    ids = np.arange(domain.n_faces)[::stride]
    centers = domain.boundary_centroids[ids]
    pts = domain.boundary_centroids
    vals = np.zeros((centers.shape[0], len(scales)))
    r2 = np.asarray(scales) ** 2
    for a in range(0, centers.shape[0], CENTER_BLOCK):
        blk = centers[a:a + CENTER_BLOCK]
        d2 = ((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        for s in range(len(scales)):
            mask = d2 < r2[s]
            cnt = np.maximum(mask.sum(1), 1)
            m = (mask @ f) / cnt
            dev = np.abs(f[None, :] - m[:, None]) ** p
            vals[a:a + CENTER_BLOCK, s] = ((mask * dev).sum(1) / cnt) \
                ** (1.0 / p)
    return ids, vals, stride


def campanato_norm(domain, f, phi, p=1, stride="auto"):
    """sup over (x, dyadic r >= 4h) of phi(r)^-1 * p-mean oscillation.

    sigma-weighted averages over surface balls; sigma doubling is the
    geometry module's check_adr / surface_doubling_constant business and is
    assumed here.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    scales = _dyadic_scales(domain)
    ids, vals, used = _oscillation_table(domain, f, p, scales, stride)
    vals = vals / np.asarray([phi(r) for r in scales])
    k = int(np.argmax(vals))
    face = int(ids[k // len(scales)])
    r = float(scales[k % len(scales)])
    method = "exhaustive" if used == 1 else "stratified"
    return NormReport(float(vals.flat[k]), method, (face, r), vals.size,
                      seed=None)


def oscillation(domain, f, r, p=1, stride=1):
    """osc_p(f; r): sup over x and dyadic s <= r of the p-mean oscillation."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if r < MIN_OSC_CELLS * domain.h:
        raise ValueError(f"oscillation needs r >= 4h = {MIN_OSC_CELLS * domain.h}")
    scales = [s for s in _dyadic_scales(domain, top=r) if s <= r + 1e-12]
    _, vals, _ = _oscillation_table(domain, f, p, scales, stride)
    return float(vals.max())


# -- equivalence report -----------------------------------------------------

def cad_spot_check(domain, probes=4, seed=SAMPLE_SEED):
    """Corkscrew and Harnack-chain probes standing in for 1-sided CAD.

    Finitely many probes certify nothing; they catch gross failures
    (disconnection, vanishing corkscrew constants) before a norm comparison
    is taken seriously.
    """
    rng = np.random.default_rng(seed)
    n = domain.n_faces
    ids = sorted(rng.choice(n, size=min(probes, n), replace=False).tolist())
    r = domain.boundary_extent / 4
    rows, ok, deep = [], True, []
    for i in ids:
        try:
            res = geo.find_corkscrew(domain, domain.boundary_centroids[i], r)
            good = res.c0 >= CAD_C0_FLOOR
            rows.append({"probe": "corkscrew", "face_id": int(i), "r": r,
                         "value": res.c0, "pass": bool(good)})
            deep.append(res.point)
            ok &= good
        except geo.NoInteriorPointError:
            rows.append({"probe": "corkscrew", "face_id": int(i), "r": r,
                         "value": 0.0, "pass": False})
            ok = False
    for a, b in zip(deep, deep[1:]):
        try:
            ch = geo.find_harnack_chain(domain, a, b)
            good = ch.max_gap <= 1e-12
            rows.append({"probe": "harnack", "face_id": -1, "r": ch.pi,
                         "value": float(ch.length), "pass": bool(good)})
            ok &= good
        except (geo.DisconnectedError, ValueError):
            rows.append({"probe": "harnack", "face_id": -1, "r": 0.0,
                         "value": 0.0, "pass": False})
            ok = False
    return ok, rows


class EquivalenceRow:
    __slots__ = ("name", "kind", "holder", "paired", "ratio", "flagged")

    def __init__(self, name, kind, holder, paired):
        self.name = name
        self.kind = kind              # "solution" | "boundary"
        self.holder = float(holder)
        self.paired = float(paired)   # carleson or campanato value
        if holder == 0.0 and paired == 0.0:
            self.ratio = float("nan")     # constants: undefined, flagged
        elif holder == 0.0:
            self.ratio = float("inf")
        else:
            self.ratio = paired / holder
        self.flagged = not (RATIO_FLAG_LO <= self.ratio <= RATIO_FLAG_HI)

    def to_row(self):
        return {"name": self.name, "kind": self.kind, "holder": self.holder,
                "paired": self.paired, "ratio": self.ratio,
                "flagged": self.flagged}


class EquivalenceReport:
    """Carleson/Holder rows per solution, Campanato/Holder rows per datum."""

    def __init__(self, rows, cad_ok, cad_rows, doubling):
        self.rows = rows
        self.cad_ok = cad_ok
        self.cad_rows = cad_rows
        self.doubling = doubling
        self.flags = [] if cad_ok else [NOT_CAD_SURROGATE]

    @property
    def flagged(self):
        return [row for row in self.rows if row.flagged]

    def to_rows(self):
        return [row.to_row() for row in self.rows]


def builtin_suite(domain, alpha=0.4):
    """Five (name, boundary data, coefficient) entries on one domain."""
    y = domain.boundary_centroids
    a_vec = np.array([1.0, -0.7, 0.4])[:domain.dim]
    a_vec = a_vec / np.linalg.norm(a_vec)
    corner = domain.origin.copy()
    mid = domain.origin + np.asarray(domain.interior.shape) * domain.h / 2
    probe = mid.copy()
    probe[-1] = domain.origin[-1]
    _, face_pt = domain.boundary_point_near(probe)
    ident = op_mod.CoefficientField()
    jump = op_mod.CoefficientField("checkerboard", contrast=5.0, block=0.25)
    r_corner = np.sqrt(((y - corner) ** 2).sum(1))
    r_face = np.sqrt(((y - face_pt) ** 2).sum(1))
    return [
        ("affine", y @ a_vec, ident),
        ("corner_power", r_corner ** alpha, ident),
        ("face_power", r_face ** alpha, ident),
        ("corner_power_jump", r_corner ** alpha, jump),
        ("two_scale_jump", r_face ** alpha + 0.5 * (y @ a_vec), jump),
    ]


def norm_equivalence_report(domain, phi, suite=None, p=1, plan="auto",
                            seed=SAMPLE_SEED):
    """Solve each suite entry and compare Holder vs Carleson / Campanato.

    Ratios outside [1/50, 50] are flagged; a failed corkscrew/Harnack spot
    check flags the whole report (rows are still produced).
    """
    ok, cad_rows = cad_spot_check(domain)
    doubling = geo.surface_doubling_constant(
        domain, stride=max(1, domain.n_faces // 256))
    if suite is None:
        suite = builtin_suite(domain)
    rows = []
    for name, f, coeff in suite:
        u = op_mod.solve_dirichlet(domain, coeff=coeff, boundary_values=f)
        fb, fu = holder_trace_pair(u, phi, plan=plan, seed=seed)
        car = carleson_norm(u, phi)
        camp = campanato_norm(domain, f, phi, p=p)
        rows.append(EquivalenceRow(name, "solution", fu.value, car.value))
        rows.append(EquivalenceRow(name, "boundary", fb.value, camp.value))
    return EquivalenceReport(rows, ok, cad_rows, doubling)
