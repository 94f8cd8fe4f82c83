"""Divergence-form operators on grid domains: assembly, solves, local fits.

The scheme is cell-centered finite volumes.  Interior faces carry the
harmonic mean of the two cell coefficients, boundary faces couple to the
face-centroid value across half a cell, and the antisymmetric part (if any)
is discretized with tangential differences that cancel on constants.  Row
sums of the stiffness matrix equal the boundary-coupling row sums exactly,
which is what makes the discrete measure a probability measure later.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SOLVER_RTOL = 1e-10
RESIDUAL_TOL = 1e-8          # accepted relative residual after the solve
POSITIVE_OFFDIAG_TOL = 1e-12 # relative to the largest diagonal entry
MIN_FIT_RADII = 3
DEGENERATE_OSC = 1e-13       # oscillation at fp noise level


class EllipticityViolation(ValueError):
    """Coefficient field breaks uniform ellipticity or the discrete maximum principle."""


class NoConvergenceError(RuntimeError):
    """Iterative solver failed to reach the residual tolerance."""


class NonvanishingDataError(ValueError):
    """Boundary data does not vanish on the required surface ball."""


class CoefficientField:
    """Uniformly elliptic matrix field A(X), possibly with a rotation part.

    families: identity; diagonal (entries per axis); checkerboard (scalar
    jumping between 1 and contrast on blocks); rotation_perturbed
    (identity plus s(X) rotating the 01-plane, s linear or sinusoidal).
    """

    def __init__(self, family="identity", **params):
        self.family = family
        self.params = params
        if family == "diagonal":
            entries = np.asarray(params.get("entries", [1.0]), dtype=float)
            if np.any(entries <= 0):
                raise EllipticityViolation("diagonal entries must be positive")
            self.entries = entries
        elif family == "checkerboard":
            self.contrast = float(params.get("contrast", 10.0))
            self.block = float(params.get("block", 0.25))
            if self.contrast <= 0:
                raise EllipticityViolation("contrast must be positive")
        elif family == "rotation_perturbed":
            self.amplitude = float(params.get("amplitude", 0.25))
            self.mode = params.get("mode", "linear")
        elif family != "identity":
            raise ValueError(f"unknown coefficient family {family!r}")

    @classmethod
    def from_config(cls, cfg):
        if cfg is None:
            return cls()
        cfg = dict(cfg)
        return cls(cfg.pop("family", "identity"), **cfg)

    def axis_value(self, points, axis):
        """Symmetric-part coefficient seen by faces normal to axis."""
        points = np.atleast_2d(points)
        if self.family == "diagonal":
            k = min(axis, self.entries.size - 1)
            return np.full(points.shape[0], self.entries[k])
        if self.family == "checkerboard":
            blocks = np.floor(points / self.block).astype(np.int64).sum(1)
            return np.where(blocks % 2 == 0, 1.0, self.contrast)
        return np.ones(points.shape[0])

    def skew(self, points):
        """Rotation amplitude s(X) in the 01-plane, or None."""
        if self.family != "rotation_perturbed":
            return None
        points = np.atleast_2d(points)
        if self.mode == "sine":
            return self.amplitude * np.sin(2 * np.pi * points[:, 0]) \
                * np.cos(2 * np.pi * points[:, 1])
        return self.amplitude * (points[:, 0] - points[:, 1])

    def matrix(self, point, dim):
        A = np.zeros((dim, dim))
        for k in range(dim):
            A[k, k] = float(self.axis_value(point, k)[0])
        s = self.skew(point)
        if s is not None:
            A[0, 1] += float(s[0])
            A[1, 0] -= float(s[0])
        return A

    def ellipticity_bounds(self, points, dim):
        """(lambda, Lambda) over the sample; symmetric part only."""
        lams = []
        for p in np.atleast_2d(points):
            A = self.matrix(p[None, :], dim)
            sym = (A + A.T) / 2
            lams.append(np.linalg.eigvalsh(sym))
        lams = np.array(lams)
        lo, hi = float(lams.min()), float(lams.max())
        if lo <= 0:
            raise EllipticityViolation(f"symmetric part has eigenvalue {lo}")
        return lo, hi


class DiscreteOperator:
    """Assembled system: A u = B g + B_shell g_shell + source."""

    def __init__(self, domain, coeff, A, B, B_shell, shell_bc, symmetric):
        self.domain = domain
        self.coeff = coeff
        self.A = A
        self.B = B
        self.B_shell = B_shell
        self.shell_bc = shell_bc
        self.symmetric = symmetric


def _robin_shell_ratio(domain):
    """u_face / u_cell on the truncation shell for the 1/|X| far field.

    The shell is an axis-aligned box, so an axis-normal face sees the
    radial decay obliquely: du/dn = -u cos(theta)/|X| with cos(theta) the
    projection of the radial direction onto the face normal.  Using the
    full -u/|X| instead leaks ~sqrt(3) too much through diagonal faces.
    """
    cents = domain.trunc_centroids
    r_face = np.sqrt((cents ** 2).sum(1))
    cos = np.abs(cents[np.arange(cents.shape[0]), domain.trunc_axes]) / r_face
    return 1.0 / (1.0 + domain.h * cos / (2 * r_face)), r_face


def assemble(domain, coeff=None, shell_bc="robin"):
    """Finite-volume system for -div(A grad u) = f with Dirichlet data.

    shell_bc handles truncation faces of exterior grids: "dirichlet0"
    clamps them to zero, "robin" uses the projected far-field condition
    du/dn = -u cos(theta)/|X| so mass escapes to infinity without
    reflection.
    """
    coeff = coeff or CoefficientField()
    h, d = domain.h, domain.dim
    mask = domain.interior
    ids = domain.cell_ids.reshape(mask.shape)
    n = domain.n_cells
    centers = domain.cell_centers

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    # symmetric part over interior faces: harmonic mean conductance
    for axis in range(d):
        sl_lo = [slice(None)] * d
        sl_hi = [slice(None)] * d
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        both = mask[tuple(sl_lo)] & mask[tuple(sl_hi)]
        P = ids[tuple(sl_lo)][both]
        Q = ids[tuple(sl_hi)][both]
        aP = coeff.axis_value(centers[P], axis)
        aQ = coeff.axis_value(centers[Q], axis)
        g = 2 * aP * aQ / (aP + aQ) / h ** 2
        add(P, P, g)
        add(Q, Q, g)
        add(P, Q, -g)
        add(Q, P, -g)

    # boundary faces: data lives half a cell outside the center
    bP = ids[tuple(domain.face_cells.T)]
    a_b = np.empty(domain.n_faces)
    for axis in range(d):
        on = domain.face_axes == axis
        if on.any():
            a_b[on] = coeff.axis_value(centers[bP[on]], axis)
    cb = 2 * a_b / h ** 2
    add(bP, bP, cb)
    B = sp.csr_matrix((cb, (bP, np.arange(domain.n_faces))),
                      shape=(n, domain.n_faces))

    # truncation shell
    n_tr = domain.trunc_centroids.shape[0]
    if n_tr:
        tP = ids[tuple(domain.trunc_cells.T)]
        a_t = np.empty(n_tr)
        for axis in range(d):
            on = domain.trunc_axes == axis
            if on.any():
                a_t[on] = coeff.axis_value(centers[tP[on]], axis)
        if shell_bc == "dirichlet0":
            ct = 2 * a_t / h ** 2
        elif shell_bc == "robin":
            ratio, _ = _robin_shell_ratio(domain)
            ct = 2 * a_t / h ** 2 * (1.0 - ratio)
        else:
            raise ValueError(f"unknown shell_bc {shell_bc!r}")
        add(tP, tP, ct)
        B_shell = sp.csr_matrix((ct, (tP, np.arange(n_tr))), shape=(n, n_tr))
    else:
        B_shell = sp.csr_matrix((n, 0))

    symmetric = True
    if coeff.skew(centers[:1]) is not None:
        symmetric = False
        B, B_shell = _add_skew(domain, coeff, ids, centers, add, B, B_shell,
                               shell_bc)

    A = sp.csr_matrix(
        (np.concatenate([np.atleast_1d(np.asarray(v, dtype=float))
                         for v in vals]),
         (np.concatenate([np.atleast_1d(np.asarray(r)) for r in rows]),
          np.concatenate([np.atleast_1d(np.asarray(c)) for c in cols]))),
        shape=(n, n))
    A.sum_duplicates()

    _check_discrete_max_principle(A)
    if B.nnz and B.data.min() < 0:
        raise EllipticityViolation(
            "rotation part overwhelms the boundary coupling; negative "
            f"entry {B.data.min():.3e}")
    return DiscreteOperator(domain, coeff, A, B, B_shell, shell_bc, symmetric)


def _face_vn(coeff, face_pts, axes, sides, h, d):
    """Stream-function flux (v . n) / area through faces in the 01-plane.

    div(S grad u) = div(u v) with v = (d1 s, -d0 s, 0); evaluating s at the
    shared face corners makes the per-cell flux sum telescope to exactly
    zero, so constants stay harmonic no matter what s is.
    """
    vn = np.zeros(face_pts.shape[0])
    for axis, tang, sign in ((0, 1, 1.0), (1, 0, -1.0)):
        on = axes == axis
        if not on.any():
            continue
        up = face_pts[on].copy()
        dn = face_pts[on].copy()
        up[:, tang] += h / 2
        dn[:, tang] -= h / 2
        vn[on] = sign * (coeff.skew(up) - coeff.skew(dn)) / h
    return vn * sides


def _add_skew(domain, coeff, ids, centers, add, B, B_shell, shell_bc):
    """Rotation part as conservative transport with sign-split face values.

    Each face value of u is taken from whichever side keeps the matrix an
    M-matrix; both neighboring rows use the same face value, so the scheme
    stays conservative and the discrete maximum principle survives any
    rotation amplitude.
    """
    h, d = domain.h, domain.dim
    mask = domain.interior

    for axis in (0, 1):
        sl_lo = [slice(None)] * d
        sl_hi = [slice(None)] * d
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        both = mask[tuple(sl_lo)] & mask[tuple(sl_hi)]
        Pm = np.argwhere(both)
        if not Pm.size:
            continue
        P = ids[tuple(Pm.T)]
        Qm = Pm.copy()
        Qm[:, axis] += 1
        Q = ids[tuple(Qm.T)]
        fc = centers[P].copy()
        fc[:, axis] += h / 2
        vn = _face_vn(coeff, fc, np.full(P.size, axis), 1.0, h, d)
        c = -vn / h            # LHS coefficient of the face value in P's row
        cpos = np.maximum(c, 0.0)
        cneg = np.minimum(c, 0.0)
        add(P, P, cpos)
        add(P, Q, cneg)
        add(Q, Q, -cneg)
        add(Q, P, -cpos)

    # boundary faces carry the Dirichlet trace as the face value
    sel = domain.face_axes < 2
    if sel.any():
        P = ids[tuple(domain.face_cells[sel].T)]
        vn = _face_vn(coeff, domain.boundary_centroids[sel],
                      domain.face_axes[sel], domain.face_sides[sel], h, d)
        c = -vn / h
        B = B.tolil()
        fids = np.flatnonzero(sel)
        for p, f, cf in zip(P, fids, c):
            B[p, f] -= cf
        B = B.tocsr()

    n_tr = domain.trunc_centroids.shape[0]
    if n_tr:
        sel = domain.trunc_axes < 2
        if sel.any():
            P = ids[tuple(domain.trunc_cells[sel].T)]
            vn = _face_vn(coeff, domain.trunc_centroids[sel],
                          domain.trunc_axes[sel], domain.trunc_sides[sel],
                          h, d)
            c = -vn / h
            if shell_bc == "robin":
                ratio, _ = _robin_shell_ratio(domain)
                add(P, P, c * ratio[sel])
            else:
                B_shell = B_shell.tolil()
                fids = np.flatnonzero(sel)
                for p, f, cf in zip(P, fids, c):
                    B_shell[p, f] -= cf
                B_shell = B_shell.tocsr()
    return B, B_shell


def _check_discrete_max_principle(A):
    coo = A.tocoo()
    off = coo.row != coo.col
    if not off.any():
        return
    worst = coo.data[off].max(initial=0.0)
    scale = np.abs(A.diagonal()).max()
    if worst > POSITIVE_OFFDIAG_TOL * scale:
        raise EllipticityViolation(
            f"positive off-diagonal {worst:.3e} (scale {scale:.3e}); "
            "rotation part too strong for this grid")


class DiscreteField:
    """Cell values of a solve, plus the boundary data that produced them."""

    def __init__(self, domain, values, boundary_values, shell_values=None):
        self.domain = domain
        self.values = np.asarray(values, dtype=float)
        self.boundary_values = np.asarray(boundary_values, dtype=float)
        self.shell_values = shell_values
        self._tree = None

    def at_points(self, points):
        """Nearest-cell-center evaluation."""
        from scipy.spatial import cKDTree
        if self._tree is None:
            self._tree = cKDTree(self.domain.cell_centers)
        _, i = self._tree.query(np.atleast_2d(points))
        out = self.values[i]
        return out if out.size > 1 else float(out[0])

    def as_grid(self):
        g = np.full(self.domain.interior.shape, np.nan)
        g[self.domain.interior] = self.values
        return g

    def grad_cells(self):
        """Per-cell gradient from face differences, one-sided at the boundary."""
        dom = self.domain
        h, d = dom.h, dom.dim
        grid = self.as_grid()
        out = np.zeros((dom.n_cells, d))
        ids = dom.cell_ids.reshape(dom.interior.shape)
        for axis in range(d):
            acc = np.zeros(dom.interior.shape)
            cnt = np.zeros(dom.interior.shape)
            diff = (np.diff(grid, axis=axis)) / h
            ok = ~np.isnan(diff)
            diff = np.nan_to_num(diff)
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            acc[tuple(lo)] += np.where(ok, diff, 0.0)
            cnt[tuple(lo)] += ok
            acc[tuple(hi)] += np.where(ok, diff, 0.0)
            cnt[tuple(hi)] += ok
            sel = dom.face_axes == axis
            if sel.any():
                cells = dom.face_cells[sel]
                cid = ids[tuple(cells.T)]
                bd = (self.values[cid] - self.boundary_values[sel]) \
                    / (h / 2) * (-dom.face_sides[sel])
                np.add.at(acc, tuple(cells.T), bd)
                np.add.at(cnt, tuple(cells.T), 1.0)
            with np.errstate(invalid="ignore"):
                avg = acc / np.maximum(cnt, 1.0)
            out[:, axis] = avg[dom.interior]
        return out


def solve_dirichlet(domain, coeff=None, boundary_values=None, source=None,
                    shell_bc="robin", op=None, rtol=SOLVER_RTOL):
    """Solve the Dirichlet problem; boundary_values per face, source per cell."""
    if op is None:
        op = assemble(domain, coeff, shell_bc=shell_bc)
    g = np.zeros(domain.n_faces) if boundary_values is None \
        else np.asarray(boundary_values, dtype=float)
    rhs = op.B @ g
    if source is not None:
        rhs = rhs + np.asarray(source, dtype=float)
    u = _solve(op, rhs, rtol)
    shell = None
    if domain.trunc_centroids.shape[0] and op.shell_bc == "robin":
        tP = domain.cell_ids.reshape(domain.interior.shape)[
            tuple(domain.trunc_cells.T)]
        shell = u[tP] * _robin_shell_ratio(domain)[0]
    elif domain.trunc_centroids.shape[0]:
        shell = np.zeros(domain.trunc_centroids.shape[0])
    return DiscreteField(domain, u, g, shell)


def _solve(op, rhs, rtol=SOLVER_RTOL, transpose=False):
    A = op.A.T.tocsr() if transpose else op.A
    n = A.shape[0]
    if not np.any(rhs):
        return np.zeros(n)
    M = sp.diags(1.0 / A.diagonal())
    maxiter = int(50 * np.sqrt(n)) + 1000
    if op.symmetric:
        u, info = spla.cg(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    else:
        u, info = spla.bicgstab(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter,
                                M=M)
    res = np.linalg.norm(A @ u - rhs) / np.linalg.norm(rhs)
    if res > RESIDUAL_TOL:
        raise NoConvergenceError(
            f"solver info={info}, relative residual {res:.3e}")
    return u


# -- local regularity fits --------------------------------------------------

class ExponentFit:
    """Power-law fit of a radial profile: value ~ constant * r^exponent."""

    def __init__(self, radii, values, degenerate=False):
        self.radii = np.asarray(radii, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.degenerate = degenerate
        keep = self.values > 0
        if degenerate or keep.sum() < MIN_FIT_RADII:
            self.exponent, self.r_squared, self.constant = 0.0, 0.0, 0.0
            self.degenerate = True
            return
        x = np.log(self.radii[keep])
        y = np.log(self.values[keep])
        slope, icept = np.polyfit(x, y, 1)
        fitted = slope * x + icept
        ss_res = float(((y - fitted) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        self.exponent = float(slope)
        self.constant = float(np.exp(icept))
        self.r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def _radius_ladder(R, r_min, factor):
    radii = [R]
    while radii[-1] / factor >= r_min * 0.999:
        radii.append(radii[-1] / factor)
    return radii


def estimate_interior_holder(field, x0, R, r_min=None, factor=np.sqrt(2)):
    """Oscillation decay of u over shrinking balls; slope is the Holder rate.

    Radii below 4h are dominated by lattice quantization and excluded by
    default.  The L2 average over B(x0, 2R) is reported as the reference
    size; near-constant profiles are flagged degenerate, not fitted.
    """
    dom = field.domain
    r_min = 4 * dom.h if r_min is None else r_min
    centers = dom.cell_centers
    x0 = np.asarray(x0, dtype=float)
    dist = np.sqrt(((centers - x0) ** 2).sum(1))
    radii, osc = [], []
    for r in _radius_ladder(R, r_min, factor):
        sel = dist < r
        if sel.sum() < 2:
            break
        vals = field.values[sel]
        radii.append(r)
        osc.append(float(vals.max() - vals.min()))
    big = field.values[dist < 2 * R]
    l2 = float(np.sqrt((big ** 2).mean())) if big.size else 0.0
    degenerate = (not osc) or max(osc) < DEGENERATE_OSC * max(l2, 1.0)
    fit = ExponentFit(radii, osc, degenerate=degenerate)
    fit.l2_reference = l2
    return fit


def estimate_boundary_holder(field, x0, R, r_min=None, factor=np.sqrt(2)):
    """Growth of sup |u| on B(x0, r) at a boundary point with vanishing data.

    x0 may be any point on the lattice boundary surface (within a cell of
    a face centroid), e.g. the exact re-entrant corner of an L-shape.
    """
    dom = field.domain
    r_min = 4 * dom.h if r_min is None else r_min
    x0 = np.asarray(x0, dtype=float)
    dom.require_boundary_point(x0, tol=0.75 * dom.h)
    near = dom.surface_ball_faces(x0, R)
    gmax = np.abs(field.boundary_values[near]).max() if near.size else 0.0
    scale = max(np.abs(field.boundary_values).max(), 1e-300)
    if gmax > 1e-12 * scale:
        raise NonvanishingDataError(
            f"|g| reaches {gmax:.3e} on the surface ball of radius {R}")
    centers = dom.cell_centers
    dist = np.sqrt(((centers - x0) ** 2).sum(1))
    radii, sups = [], []
    for r in _radius_ladder(R, r_min, factor):
        sel = dist < r
        if not sel.any():
            break
        radii.append(r)
        sups.append(float(np.abs(field.values[sel]).max()))
    degenerate = (not sups) or max(sups) < DEGENERATE_OSC * scale
    return ExponentFit(radii, sups, degenerate=degenerate)
