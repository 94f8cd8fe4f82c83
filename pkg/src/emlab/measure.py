"""Discrete elliptic measure: rows, representation formulas, decay profiles.

A measure row is obtained from one transposed-system solve with a unit
source at the pole; the boundary couplings of the adjoint solution are the
face weights.  Exact conservation of the assembly makes each row a
probability on bounded domains and a strict sub-probability on truncated
exterior domains, where the deficit is the mass escaping to infinity.
"""

import numpy as np

from . import operator as op_mod

ROW_RTOL = 1e-12            # tighter than field solves; mass error ~ sqrt(n) rtol
NEG_WEIGHT_TOL = 1e-12      # relative; anything below this aborts
DEFAULT_DECAY_ALPHA = 0.5
DEFAULT_POLE_DEPTHS = (1, 2, 3, 4, 6, 8, 12, 16)


class NegativeWeightError(ArithmeticError):
    """Measure row came out negative beyond solver noise."""


class NotExteriorDomainError(ValueError):
    """Operation requires a truncated exterior domain."""


class ScaleOutOfRangeError(ValueError):
    """Requested scale has no room on this grid."""


class EmptyLocalDomainError(ValueError):
    """Mask intersection with the ball produced no cells."""


class EmptyConeError(ValueError):
    """Non-tangential cone contains too few cells."""


class AnchorNotOnBoundaryError(ValueError):
    """Anchor must be a boundary-face centroid."""


class MeasureRow:
    """Elliptic measure of one pole: a weight per boundary face."""

    def __init__(self, domain, pole, pole_cell, weights, shell_weights=None):
        self.domain = domain
        self.pole = np.asarray(pole, dtype=float)
        self.pole_cell = pole_cell
        self.weights = weights
        self.shell_weights = shell_weights
        self.total_mass = float(weights.sum())

    @property
    def deficit(self):
        return 1.0 - self.total_mass

    def mass_of(self, face_ids):
        return float(self.weights[np.asarray(face_ids, dtype=np.int64)].sum())

    def mass_outside(self, x, r):
        """Measure of the boundary away from the open surface ball."""
        inside = self.domain.surface_ball_faces(x, r)
        return self.total_mass - self.mass_of(inside)

    def integrate(self, f_values):
        return float(self.weights @ np.asarray(f_values, dtype=float))

    def to_rows(self):
        cents = self.domain.boundary_centroids
        z = cents[:, 2] if self.domain.dim == 3 else np.zeros(len(cents))
        return [{"face_id": i, "x": float(cents[i, 0]), "y": float(cents[i, 1]),
                 "z": float(z[i]), "weight": float(w)}
                for i, w in enumerate(self.weights)]


def _adjoint_solve(op, rhs, rtol=ROW_RTOL):
    lam = op_mod._solve(op, rhs, rtol=rtol, transpose=not op.symmetric)
    A = op.A if op.symmetric else op.A.T
    res = np.linalg.norm(A @ lam - rhs) / np.linalg.norm(rhs)
    if res > 100 * rtol:  # mass error scales like sqrt(n_cells) * residual
        raise op_mod.NoConvergenceError(f"adjoint residual {res:.3e}")
    return lam


def elliptic_measure_row(op, X):
    """One adjoint solve with a unit source at the pole cell."""
    domain = op.domain
    cell = domain.cell_id_at(X)
    pole = domain.cell_centers[cell]
    rhs = np.zeros(domain.n_cells)
    rhs[cell] = 1.0
    lam = _adjoint_solve(op, rhs)
    weights = op.B.T @ lam
    scale = max(weights.max(), 1e-300)
    if weights.min() < -NEG_WEIGHT_TOL * max(scale, 1.0):
        raise NegativeWeightError(
            f"weight {weights.min():.3e} at pole {pole}; "
            "discretization lost monotonicity")
    weights = np.maximum(weights, 0.0)
    shell = op.B_shell.T @ lam if op.B_shell.shape[1] else None
    return MeasureRow(domain, pole, cell, weights, shell)


class RepresentedSolution:
    """Representation-formula values at sampled poles, with the rows used."""

    def __init__(self, poles, values, rows, anchor=None):
        self.poles = poles
        self.values = values
        self.rows = rows
        self.anchor = anchor


def default_poles(domain, count=27, seed=0x5EED):
    """Deterministic interior pole sample spread across the domain."""
    n = domain.n_cells
    if n <= count:
        return domain.cell_centers
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=count, replace=False)
    return domain.cell_centers[np.sort(idx)]


def represent_solution(op, f, poles=None, anchor=None):
    """u(X) = sum f * weights(X), optionally anchored at a boundary point.

    The anchored form u(X) = f(y0) + sum (f - f(y0)) * weights(X) agrees
    with the plain form exactly when the row is a probability; on exterior
    domains it selects the solution with limit f(y0) at infinity.
    """
    domain = op.domain
    f = np.asarray(f, dtype=float)
    if poles is None:
        poles = default_poles(domain)
    offset = 0.0
    if anchor is not None:
        try:
            fid, _ = domain.require_boundary_point(anchor)
        except Exception as exc:
            raise AnchorNotOnBoundaryError(str(exc)) from exc
        offset = float(f[fid])
    rows, values = [], []
    for X in np.atleast_2d(poles):
        row = elliptic_measure_row(op, X)
        rows.append(row)
        values.append(offset + row.integrate(f - offset))
    return RepresentedSolution(np.atleast_2d(poles), np.array(values), rows,
                               anchor)


def anchored_solution(op, f, anchor, rtol=ROW_RTOL):
    """Dirichlet solution whose value at infinity is f(anchor).

    On the truncated exterior grid the shifted function u - f(anchor)
    carries data f - f(anchor) with the same decay-to-zero shell
    condition, so one plain solve recovers the anchored solution.
    """
    domain = op.domain
    try:
        fid, _ = domain.require_boundary_point(anchor)
    except Exception as exc:
        raise AnchorNotOnBoundaryError(str(exc)) from exc
    f = np.asarray(f, dtype=float)
    level = float(f[fid])
    shifted = op_mod.solve_dirichlet(domain, op=op,
                                     boundary_values=f - level, rtol=rtol)
    return op_mod.DiscreteField(domain, level + shifted.values, f,
                                None if shifted.shell_values is None
                                else level + shifted.shell_values)


class GapReport:
    """Non-uniqueness identity check for two anchored exterior solutions."""

    def __init__(self, gap, u_first, u_second, mass_profile, delta_f):
        self.gap = gap              # DiscreteField of the identity mismatch
        self.u_first = u_first
        self.u_second = u_second
        self.mass_profile = mass_profile
        self.delta_f = delta_f

    @property
    def max_gap(self):
        return float(np.abs(self.gap.values).max())

    def separation_at(self, X):
        i = self.gap.domain.cell_id_at(X)
        return abs(float(self.u_first.values[i] - self.u_second.values[i]))


def nonuniqueness_gap(op, f, x0, y0, rtol=ROW_RTOL):
    """Residual of u(.;x0) - u(.;y0) = (f(x0) - f(y0)) (1 - mass).

    The two anchored solutions and the mass profile come from three
    independent solves, so the returned field measures genuine solver
    consistency of the identity rather than an algebraic tautology.
    """
    domain = op.domain
    if not domain.is_exterior:
        raise NotExteriorDomainError("needs a truncated exterior domain")
    f = np.asarray(f, dtype=float)
    u_x = anchored_solution(op, f, x0, rtol=rtol)
    u_y = anchored_solution(op, f, y0, rtol=rtol)
    delta_f = float(f[domain.require_boundary_point(x0)[0]]
                    - f[domain.require_boundary_point(y0)[0]])
    mass = op_mod.solve_dirichlet(domain, op=op, rtol=rtol,
                                  boundary_values=np.ones(domain.n_faces))
    g = (u_x.values - u_y.values) - delta_f * (1.0 - mass.values)
    gap = op_mod.DiscreteField(domain, g, np.zeros(domain.n_faces))
    return GapReport(gap, u_x, u_y, mass, delta_f)


class DecayProfileReport:
    """Mass outside a window vs pole depth, fitted as a power law."""

    def __init__(self, rows, fit, phi_constant=None):
        self.rows = rows            # (scale, pole_distance, mass, bound)
        self.fit = fit
        self.exponent = fit.exponent
        self.phi_constant = phi_constant

    def to_rows(self):
        return [{"scale": s, "pole_distance": d, "mass": m, "bound": b}
                for s, d, m, b in self.rows]


def decay_profile(op, x, scales, alpha=DEFAULT_DECAY_ALPHA, phi=None,
                  pole_depths=DEFAULT_POLE_DEPTHS):
    """Mass of the boundary away from Delta(x, 4r) for poles along the normal.

    Pole depths are (k - 1/2) h down the inward ray; each pole is one
    adjoint solve, shared by all scales.  The bound column is the supplied
    (depth / r)^alpha reference.  When a growth function is given, the
    worst constant in sum phi(|y - x|) weights <= C phi(delta(X)) over the
    poles is reported alongside.
    """
    domain = op.domain
    h = domain.h
    fid, xc = domain.require_boundary_point(x)
    scales = [float(r) for r in np.atleast_1d(scales)]
    for r in scales:
        if r < 2 * h or 4 * r >= domain.boundary_extent:
            raise ScaleOutOfRangeError(f"scale {r} outside [2h, extent/4)")
    max_k = max(pole_depths)
    ray = domain.inward_ray(fid, max_k)
    rows, lhs_constants = [], []
    delta = domain.distance_field()
    for k in pole_depths:
        if k > ray.shape[0]:
            break
        cell = ray[k - 1]
        pole = domain.origin + (cell + 0.5) * h
        d = float(np.linalg.norm(pole - xc))
        row = elliptic_measure_row(op, pole)
        if phi is not None:
            dist_f = np.sqrt(((domain.boundary_centroids - xc) ** 2).sum(1))
            lhs = float(row.weights @ phi(np.maximum(dist_f, h / 2)))
            lhs_constants.append(lhs / float(phi(delta[row.pole_cell])))
        for r in scales:
            if d >= r:
                continue
            mass = row.mass_outside(xc, 4 * r)
            rows.append((r, d, mass, (d / r) ** alpha))
    ratios = np.array([d / s for s, d, m, b in rows])
    masses = np.array([m for s, d, m, b in rows])
    fit = op_mod.ExponentFit(ratios, masses)
    phi_c = max(lhs_constants) if lhs_constants else None
    return DecayProfileReport(rows, fit, phi_c)


class FarFieldReport:
    def __init__(self, rows, fit):
        self.rows = rows            # (pole_distance, ratio, mass, total_mass)
        self.fit = fit
        self.exponent = fit.exponent

    def to_rows(self):
        return [{"pole_distance": d, "ratio": q, "mass": m, "total_mass": t}
                for d, q, m, t in self.rows]


def far_field_decay(op, a, r, poles):
    """Mass of Delta(a, r) seen from distant poles; decays like distance^(1-d).

    The fitted exponent against |X - a| / r is the fundamental-solution
    rate 2 - d (= -1 in 3d).  Poles must sit outside B(a, 2r) so the
    window is genuinely local; when the window already covers the whole
    boundary that locality condition is vacuous and is skipped (no pole
    can be 2 diameters away from every covering center).
    """
    domain = op.domain
    if not domain.is_exterior:
        raise NotExteriorDomainError("needs a truncated exterior domain")
    _, ac = domain.require_boundary_point(a)
    ball = domain.surface_ball_faces(ac, r)
    covering = ball.size == domain.n_faces
    rows = []
    for X in np.atleast_2d(poles):
        d = float(np.linalg.norm(np.asarray(X, dtype=float) - ac))
        if not covering and d <= 2 * r:
            raise ScaleOutOfRangeError(f"pole {X} inside B(a, 2r)")
        row = elliptic_measure_row(op, X)
        rows.append((d, d / r, row.mass_of(ball), row.total_mass))
    ratios = np.array([q for d, q, m, t in rows])
    masses = np.array([m for d, q, m, t in rows])
    fit = op_mod.ExponentFit(ratios, masses)
    return FarFieldReport(rows, fit)


class MeasureDecayReport:
    """Global and local decay constants at a supplied exponent."""

    def __init__(self, alpha, m_global, m_local, alpha_fit_global,
                 alpha_fit_local, consistency_min_slack, rows):
        self.alpha = alpha
        self.m_global = m_global
        self.m_local = m_local
        self.alpha_fit_global = alpha_fit_global
        self.alpha_fit_local = alpha_fit_local
        self.consistency_min_slack = consistency_min_slack
        self.rows = rows


def _local_subdomain(domain, x, r):
    """Mask intersection with B(x, r); boundary split into wall and cap."""
    from . import geometry as geo
    centers_all = domain.origin + (np.indices(domain.interior.shape)
                                   .reshape(domain.dim, -1).T + 0.5) * domain.h
    inside = ((centers_all - x) ** 2).sum(1) < r ** 2
    mask = domain.interior & inside.reshape(domain.interior.shape)
    if not mask.any():
        raise EmptyLocalDomainError(f"no cells in B({x}, {r})")
    sub = geo.GridDomain(mask, domain.h, domain.origin)
    # faces inherited from the original boundary carry data 0; the
    # spherical cap (new faces) carries data 1
    tree = domain.boundary_tree
    d, _ = tree.query(sub.boundary_centroids)
    cap = d > domain.h / 4
    return sub, cap


def measure_decay_constants(op, x, r, poles, alpha=DEFAULT_DECAY_ALPHA):
    """Worst-case global and local decay constants over the pole set.

    Global: mass of the boundary outside B(x, r), scaled by the alpha
    power of r / |X - x|.  Local: the same for the measure of the cap in
    the subdomain formed by intersecting with B(x, r).  Poles outside the
    ball contribute to the global constant only.
    """
    domain = op.domain
    _, xc = domain.require_boundary_point(x)
    if r >= domain.boundary_extent:
        raise ScaleOutOfRangeError(f"r={r} at or beyond the boundary diameter")
    sub, cap = _local_subdomain(domain, xc, r)
    sub_op = op_mod.assemble(sub, op.coeff)
    cap_data = cap.astype(float)
    rows = []
    m_g, m_l = 0.0, 0.0
    slack = np.inf
    g_ratios, g_masses, l_ratios, l_masses = [], [], [], []
    for X in np.atleast_2d(poles):
        X = np.asarray(X, dtype=float)
        drel = float(np.linalg.norm(X - xc)) / r
        row = elliptic_measure_row(op, X)
        out_mass = row.mass_outside(xc, r)
        m_g = max(m_g, out_mass * drel ** (-alpha))
        if out_mass > 0:
            g_ratios.append(drel)
            g_masses.append(out_mass)
        local_mass = None
        if drel < 1.0 and sub.contains(X[None, :])[0]:
            lrow = elliptic_measure_row(sub_op, X)
            local_mass = lrow.integrate(cap_data)
            m_l = max(m_l, local_mass * drel ** (-alpha))
            slack = min(slack, local_mass - out_mass)
            if local_mass > 0:
                l_ratios.append(drel)
                l_masses.append(local_mass)
        rows.append((drel, out_mass, local_mass))
    fit_g = op_mod.ExponentFit(g_ratios, g_masses)
    fit_l = op_mod.ExponentFit(l_ratios, l_masses)
    return MeasureDecayReport(alpha, m_g, m_l, fit_g.exponent, fit_l.exponent,
                              float(slack) if np.isfinite(slack) else 0.0,
                              rows)


class TraceEstimate:
    def __init__(self, value, oscillation, n_cells):
        self.value = value
        self.oscillation = oscillation
        self.n_cells = n_cells


def nontangential_trace(field, y, theta=2.0):
    """u at the cone cell nearest y, with the first-ring oscillation.

    y is used verbatim (no snapping): at a convex corner the cone
    |X - y| < theta delta(X) is genuinely empty for theta near 1.
    """
    dom = field.domain
    yc = np.asarray(y, dtype=float)
    centers = dom.cell_centers
    delta = dom.distance_field()
    dist = np.sqrt(((centers - yc) ** 2).sum(1))
    cone = dist < theta * delta
    if cone.sum() < 3:
        raise EmptyConeError(f"cone theta={theta} at {yc} holds "
                             f"{int(cone.sum())} cells")
    order = np.argsort(dist[cone])
    vals = field.values[cone][order]
    dists = dist[cone][order]
    ring = dists < 2 * dists[0] + dom.h
    return TraceEstimate(float(vals[0]),
                         float(vals[ring].max() - vals[ring].min()),
                         int(cone.sum()))
