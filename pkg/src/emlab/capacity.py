"""Condenser capacity on fresh ball lattices, CDC ratios, and Lemma-style
potential/measure inequalities.

Capacity solves happen on their own uniform grid over the outer ball,
independent of any GridDomain bounding box; membership of the inner set is
a cell-center predicate.  The variational problem min(int |grad v|^2,
v = 1 on K, v = 0 outside D) becomes one symmetric positive system.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from . import measure as ms
from . import operator as op_mod

CAPACITY_RTOL = 1e-8
MIN_SCALE_CELLS = 8         # cdc_ratio needs r >= 8h to resolve the sets


class KNotInsideDError(ValueError):
    """Inner set touches or leaves the outer ball."""


class DimensionUnsupportedError(ValueError):
    """Capacity normalization r^{d-2} needs d = 3."""


class CapacityResult:
    def __init__(self, value, potential, n_unknowns):
        self.value = value
        self.potential = potential
        self.n_unknowns = n_unknowns


def _lattice(center, radius, h, align_origin):
    """Cell-center lattice covering B(center, radius) plus one pad cell."""
    center = np.asarray(center, dtype=float)
    reach = radius + 1.5 * h
    if align_origin is None:
        # symmetric around the center: translation invariance is exact
        n_half = int(np.ceil(reach / h))
        lo = center - n_half * h
        n = np.full(3, 2 * n_half, dtype=np.int64)
    else:
        lo_f = (center - reach - np.asarray(align_origin)) / h
        lo = np.asarray(align_origin) + np.floor(lo_f) * h
        n = np.ceil((center + reach - lo) / h).astype(np.int64)
    axes = [lo[k] + (np.arange(n[k]) + 0.5) * h for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return pts, lo, n


def condenser_capacity(k_pred, center, radius, h, coeff=None,
                       align_origin=None, octant_symmetry=False):
    """Energy of the equilibrium potential of K inside D = B(center, radius).

    k_pred maps an (n, 3) array of cell centers to a boolean mask.  With
    octant_symmetry the solve is restricted to the positive octant around
    the center (symmetry planes become natural no-flux faces) and the
    energy scaled by 8; valid only when K and the coefficients share the
    full octahedral symmetry about the center.
    """
    center = np.asarray(center, dtype=float)
    if center.shape != (3,):
        raise DimensionUnsupportedError("condenser capacity is 3d only")
    coeff = coeff or op_mod.CoefficientField()
    pts, lo, n = _lattice(center, radius, h, align_origin)
    flat = pts.reshape(-1, 3)
    in_d = (((flat - center) ** 2).sum(1) < radius ** 2).reshape(tuple(n))
    in_k = np.asarray(k_pred(flat), dtype=bool).reshape(tuple(n))
    if (in_k & ~in_d).any():
        raise KNotInsideDError("K has cells outside the open outer ball")

    if octant_symmetry:
        block = tuple(slice(nk // 2, None) for nk in n)
        in_d, in_k, pts = in_d[block], in_k[block], pts[block]
    shape = in_d.shape
    unknown = in_d & ~in_k
    state = np.where(in_k, 1, np.where(unknown, 0, 2)).astype(np.int8)
    ids = np.full(shape, -1, dtype=np.int64)
    n_unk = int(unknown.sum())
    ids[unknown] = np.arange(n_unk)

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_unk)
    energy_fixed = []  # (face conductance, jump) pairs resolved after solve
    pairs = []
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        sP = state[tuple(sl_lo)].ravel()
        sQ = state[tuple(sl_hi)].ravel()
        pP = pts[tuple(sl_lo)].reshape(-1, 3)
        pQ = pts[tuple(sl_hi)].reshape(-1, 3)
        iP = ids[tuple(sl_lo)].ravel()
        iQ = ids[tuple(sl_hi)].ravel()
        if ((sP == 1) & (sQ == 2)).any() or ((sP == 2) & (sQ == 1)).any():
            raise KNotInsideDError("K touches the outer boundary ring")
        both = (sP == 0) & (sQ == 0)
        if both.any():
            aP = coeff.axis_value(pP[both], axis)
            aQ = coeff.axis_value(pQ[both], axis)
            g = 2 * aP * aQ / (aP + aQ) / h ** 2
            rows += [iP[both], iQ[both], iP[both], iQ[both]]
            cols += [iP[both], iQ[both], iQ[both], iP[both]]
            vals += [g, g, -g, -g]
            pairs.append((iP[both], iQ[both], g))
        for su, sf, iu, pu in ((sP, sQ, iP, pP), (sQ, sP, iQ, pQ)):
            mixed = (su == 0) & (sf != 0)
            if mixed.any():
                # fixed value sits at the shared face, half a step away
                a = coeff.axis_value(pu[mixed], axis)
                g = 2 * a / h ** 2
                rows.append(iu[mixed])
                cols.append(iu[mixed])
                vals.append(g)
                val = (sf[mixed] == 1).astype(float)
                rhs[iu[mixed]] += g * val
                energy_fixed.append((iu[mixed], g, val))

    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_unk, n_unk))
    A.sum_duplicates()
    if np.any(rhs):
        M = sp.diags(1.0 / A.diagonal())
        v, info = spla.cg(A, rhs, rtol=CAPACITY_RTOL, atol=0.0,
                          maxiter=int(50 * np.sqrt(n_unk)) + 1000, M=M)
        res = np.linalg.norm(A @ v - rhs) / np.linalg.norm(rhs)
        if res > 10 * CAPACITY_RTOL:
            raise op_mod.NoConvergenceError(f"capacity residual {res:.3e}")
    else:
        v = np.zeros(n_unk)

    energy = 0.0
    for iP, iQ, g in pairs:
        energy += float((g * (v[iP] - v[iQ]) ** 2).sum())
    for iu, g, val in energy_fixed:
        energy += float((g * (v[iu] - val) ** 2).sum())
    energy *= h ** 3
    if octant_symmetry:
        energy *= 8.0

    potential = None
    if n_unk:
        dom_sub = geo.GridDomain(unknown, h, pts.reshape(-1, 3).min(0)
                                 - 0.5 * h)
        out_pts = dom_sub.boundary_centroids.copy()
        shift = np.zeros_like(out_pts)
        shift[np.arange(out_pts.shape[0]), dom_sub.face_axes] = \
            dom_sub.face_sides * 0.5 * h
        g_face = np.asarray(k_pred(out_pts + shift), dtype=float)
        potential = op_mod.DiscreteField(dom_sub, v, g_face)
    return CapacityResult(energy, potential, n_unk)


def reference_ball_capacity(x, r, h=None, coeff=None):
    """Cap of the closed concentric ball B(x, r) inside B(x, 2r).

    Continuum value 8 pi r in 3d.  Default resolution keeps at least 12
    cells per radius so the scaling check across r is a genuine test of
    different lattices, not a similarity tautology.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = min(1.0 / 24.0, r / 12.0)
    rr = float(r) ** 2

    def k_pred(p):
        return ((p - x) ** 2).sum(1) <= rr

    return condenser_capacity(k_pred, x, 2 * r, h, coeff=coeff,
                              octant_symmetry=True)


class CdcValue:
    def __init__(self, x, r, cap_num, cap_den):
        self.x = np.asarray(x, dtype=float)
        self.r = r
        self.cap_num = cap_num
        self.cap_den = cap_den
        self.ratio = cap_num / cap_den


def cdc_ratio(domain, x, r, coeff=None):
    """Cap(closed B(x,r) minus Omega, B(x,2r)) over Cap(closed B(x,r), same)."""
    if domain.dim != 3:
        raise DimensionUnsupportedError("CDC ratio needs a 3d domain")
    h = domain.h
    if r < MIN_SCALE_CELLS * h or r >= domain.boundary_extent:
        raise ms.ScaleOutOfRangeError(
            f"r={r} outside [{MIN_SCALE_CELLS}h, diam)")
    x = np.asarray(x, dtype=float)
    rr = float(r) ** 2

    def in_ball(p):
        return ((p - x) ** 2).sum(1) <= rr

    def in_complement(p):
        return in_ball(p) & ~domain.contains(p)

    num = condenser_capacity(in_complement, x, 2 * r, h, coeff=coeff,
                             align_origin=domain.origin)
    den = condenser_capacity(in_ball, x, 2 * r, h, coeff=coeff,
                             align_origin=domain.origin)
    return CdcValue(x, r, num.value, den.value)


class CdcReport:
    """Ratio table over a deterministic boundary sample."""

    def __init__(self, rows, sample, scales):
        self.rows = rows            # (x_id, r, cap_num, cap_den, ratio)
        self.sample = sample
        self.scales = list(scales)

    @property
    def inf_ratio(self):
        return min(r[4] for r in self.rows)

    def to_rows(self):
        return [{"x_id": i, "r": r, "cap_num": cn, "cap_den": cd, "ratio": q}
                for i, r, cn, cd, q in self.rows]


def _parse_sample(domain, sample):
    if sample == "all_faces":
        return np.arange(domain.n_faces)
    if isinstance(sample, str) and sample.startswith("stride:"):
        return np.arange(domain.n_faces)[::int(sample.split(":", 1)[1])]
    return np.asarray(sample, dtype=np.int64)


def cdc_sweep(domain, scales, sample="stride:8", coeff=None):
    rows = []
    face_ids = _parse_sample(domain, sample)
    for fid in face_ids:
        x = domain.boundary_centroids[fid]
        for r in scales:
            val = cdc_ratio(domain, x, r, coeff=coeff)
            rows.append((int(fid), float(r), val.cap_num, val.cap_den,
                         val.ratio))
    return CdcReport(rows, sample, scales)


class PotentialMeasureReport:
    """Slack of v(X) >= 1 - w(X) for the capacitary potential v of
    B(a, r) minus Omega and the local cap measure w."""

    def __init__(self, min_slack, degenerate, poles, v_values, w_values):
        self.min_slack = min_slack
        self.degenerate = degenerate
        self.poles = poles
        self.v_values = v_values
        self.w_values = w_values


def potential_measure_check(domain, op, a, r, poles=None):
    """Lemma-style inequality: capacitary potential dominates the
    local elliptic measure deficit, v(X) + w(X) - 1 >= -eps_h."""
    _, ac = domain.require_boundary_point(a)
    sub, cap = ms._local_subdomain(domain, ac, r)
    sub_op = op_mod.assemble(sub, op.coeff)
    w = op_mod.solve_dirichlet(sub, op=sub_op,
                               boundary_values=cap.astype(float))
    rr = float(r) ** 2

    def f_pred(p):
        return (((p - ac) ** 2).sum(1) <= rr) & ~domain.contains(p)

    res = condenser_capacity(f_pred, ac, 2 * r, domain.h, coeff=op.coeff,
                             align_origin=domain.origin)
    degenerate = res.value == 0.0
    if poles is None:
        pole_pts = sub.cell_centers
        w_vals = w.values
    else:
        pole_pts = np.atleast_2d(poles)
        w_vals = np.atleast_1d(w.at_points(pole_pts))
    v_vals = (np.zeros(len(pole_pts)) if res.potential is None
              else np.atleast_1d(res.potential.at_points(pole_pts)))
    slack = v_vals + w_vals - 1.0
    return PotentialMeasureReport(float(slack.min()), degenerate,
                                  pole_pts, v_vals, w_vals)
