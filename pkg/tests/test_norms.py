"""Holder, Carleson and Campanato norms: oracles, identities, equivalences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emlab import geometry as geo
from emlab import norms
from emlab import operator as opm
from emlab.growth import GrowthFunction

RNG_SEED = 0x5EED
PHI4 = GrowthFunction("power", a=0.4)
# the growth class is open at the Lipschitz endpoint; probe just inside
PHI_LIN = GrowthFunction("power", a=1.0 - 1e-6)


@pytest.fixture(scope="module")
def box16():
    return geo.build_domain({"shape": "box", "h": 1 / 16})


@pytest.fixture(scope="module")
def box32():
    return geo.build_domain({"shape": "box", "h": 1 / 32})


@pytest.fixture(scope="module")
def cloud2000():
    rng = np.random.default_rng(7)
    pts = rng.random((2000, 3))
    vals = np.sqrt(((pts - pts[17]) ** 2).sum(1)) ** 0.4 \
        + 0.2 * pts @ np.array([1.0, -0.5, 0.25])
    return pts, vals


def face_datum(dom, alpha=0.4):
    fid, y0 = dom.boundary_point_near([0.5, 0.5, 0.0])
    f = np.sqrt(((dom.boundary_centroids - y0) ** 2).sum(1)) ** alpha
    f[fid] = 0.0
    return fid, y0, f


def linear_field(dom):
    return opm.DiscreteField(dom, dom.cell_centers[:, 0],
                             dom.boundary_centroids[:, 0])


class TestHolderSeminorm:
    def test_constant_is_zero(self, box16):
        y = box16.boundary_centroids
        rep = norms.holder_seminorm(y, np.full(y.shape[0], 3.7), PHI4)
        assert rep.value == 0.0
        assert rep.method == "exhaustive"

    def test_power_datum_is_one_with_witness(self, box16):
        fid, y0, f = face_datum(box16)
        rep = norms.holder_seminorm(box16.boundary_centroids, f, PHI4)
        # |a|^alpha - |b|^alpha <= |a-b|^alpha, equality against y0
        assert abs(rep.value - 1.0) <= 1e-9
        assert fid in rep.witness
        assert rep.pairs == box16.n_faces * (box16.n_faces - 1) // 2

    @pytest.mark.parametrize("scale", [0.5, -2.0, 11.0])
    def test_absolute_homogeneity(self, cloud2000, scale):
        pts, vals = cloud2000
        base = norms.holder_seminorm(pts[:300], vals[:300], PHI4)
        scaled = norms.holder_seminorm(pts[:300], scale * vals[:300], PHI4)
        assert abs(scaled.value - abs(scale) * base.value) \
            <= 1e-12 * max(1.0, base.value)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.random((40, 3))
        u, v = rng.normal(size=(2, 40))
        nu = norms.holder_seminorm(pts, u, PHI4).value
        nv = norms.holder_seminorm(pts, v, PHI4).value
        nuv = norms.holder_seminorm(pts, u + v, PHI4).value
        assert nuv <= nu + nv + 1e-12 * max(1.0, nu + nv)

    def test_zero_iff_constant(self):
        rng = np.random.default_rng(RNG_SEED)
        pts = rng.random((60, 3))
        assert norms.holder_seminorm(pts, np.zeros(60), PHI4).value == 0.0
        bump = np.zeros(60)
        bump[13] = 1e-9
        assert norms.holder_seminorm(pts, bump, PHI4).value > 0.0

    def test_stratified_within_band_of_exhaustive(self, cloud2000):
        pts, vals = cloud2000
        full = norms.holder_seminorm(pts, vals, PHI4, plan="exhaustive")
        part = norms.holder_seminorm(pts, vals, PHI4, plan="stratified")
        assert part.value <= full.value + 1e-12
        assert part.value >= full.value / 1.5
        assert part.method == "stratified"
        assert part.seed == norms.SAMPLE_SEED

    def test_stratified_is_deterministic(self, cloud2000):
        pts, vals = cloud2000
        a = norms.holder_seminorm(pts, vals, PHI4, plan="stratified")
        b = norms.holder_seminorm(pts, vals, PHI4, plan="stratified")
        assert a.value == b.value
        assert a.witness == b.witness
        assert a.pairs == b.pairs

    def test_extra_pairs_never_lower_the_value(self, cloud2000):
        pts, vals = cloud2000
        full = norms.holder_seminorm(pts, vals, PHI4, plan="exhaustive")
        wit = np.array([full.witness])
        seeded = norms.holder_seminorm(pts, vals, PHI4, plan="stratified",
                                       extra_pairs=wit)
        assert abs(seeded.value - full.value) <= 1e-12

    def test_coincident_points_are_skipped(self):
        pts = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
        rep = norms.holder_seminorm(pts, np.array([0.0, 5.0, 1.0]), PHI4)
        assert np.isfinite(rep.value)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            norms.holder_seminorm(np.zeros((1, 3)), np.zeros(1), PHI4)
        with pytest.raises(ValueError):
            norms.holder_seminorm(np.zeros((5, 3)), np.zeros(5), PHI4,
                                  plan="antichain")

    def test_report_json_schema(self, cloud2000):
        pts, vals = cloud2000
        blob = norms.holder_seminorm(pts[:100], vals[:100], PHI4).to_json()
        assert set(blob) == {"value", "method", "witness", "pairs", "seed"}
        assert isinstance(blob["witness"][0], int)


class TestHolderTracePair:
    def test_closure_norm_dominates_trace(self, box16):
        _, _, f = face_datum(box16)
        u = opm.solve_dirichlet(box16, boundary_values=f)
        fb, fu = norms.holder_trace_pair(u, PHI4)
        assert abs(fb.value - 1.0) <= 1e-9
        assert fu.value >= fb.value - 1e-12
        assert fu.value / fb.value <= 50.0

    def test_closure_point_set_stacks_boundary_last(self, box16):
        u = linear_field(box16)
        pts, vals = norms.closure_point_set(u)
        assert pts.shape[0] == box16.n_cells + box16.n_faces
        assert np.array_equal(vals[box16.n_cells:], u.boundary_values)


class TestCarlesonNorm:
    def test_constant_is_zero(self, box16):
        u = opm.DiscreteField(box16, np.ones(box16.n_cells),
                              np.ones(box16.n_faces))
        assert norms.carleson_norm(u, PHI4).value == 0.0

    def test_linear_profile_matches_halfball_oracle(self, box16, box32):
        # at a face center with small r, the quotient is (r^-2 int delta)
        # ^ 1/2 / r with int delta = pi r^4 / 4 over the half ball
        vals = {}
        for dom in (box16, box32):
            rep = norms.carleson_norm(linear_field(dom), PHI_LIN)
            vals[dom.h] = rep.value
            assert abs(rep.value / (np.sqrt(np.pi) / 2) - 1.0) <= 0.1
        assert abs(vals[box32.h] / vals[box16.h] - 1.0) <= 0.2

    def test_energy_sum_against_direct_integration(self, box32):
        u = linear_field(box32)
        g = u.grad_cells()
        w = (g * g).sum(1) * box32.distance_field() * box32.h ** 3
        x = box32.boundary_point_near([0.5, 0.5, 0.0])[1]
        r = 0.25
        inside = np.sqrt(((box32.cell_centers - x) ** 2).sum(1)) < r
        assert abs(w[inside].sum() / (np.pi * r ** 4 / 4) - 1.0) <= 0.15

    def test_witness_is_dyadic(self, box16):
        _, _, f = face_datum(box16)
        u = opm.solve_dirichlet(box16, boundary_values=f)
        rep = norms.carleson_norm(u, PHI4)
        face, r = rep.witness
        assert 0 <= face < box16.n_faces
        assert any(abs(r - s) < 1e-12 for s in norms._dyadic_scales(box16))

    def test_stride_subsample_is_a_lower_bound(self, box16):
        _, _, f = face_datum(box16)
        u = opm.solve_dirichlet(box16, boundary_values=f)
        full = norms.carleson_norm(u, PHI4, stride=1)
        part = norms.carleson_norm(u, PHI4, stride=4)
        assert part.value <= full.value + 1e-12
        assert part.value >= full.value / 1.5
        assert (full.method, part.method) == ("exhaustive", "stratified")

    def test_lshape_2d(self):
        dom = geo.build_domain({"shape": "l_shape", "h": 1 / 16})
        f = np.sqrt(((dom.boundary_centroids
                      - dom.boundary_centroids[0]) ** 2).sum(1)) ** 0.4
        u = opm.solve_dirichlet(dom, boundary_values=f)
        rep = norms.carleson_norm(u, PHI4)
        assert np.isfinite(rep.value) and rep.value > 0.0


class TestCampanatoNorm:
    def test_constant_is_zero(self, box16):
        f = np.full(box16.n_faces, -2.0)
        for p in (1, 2):
            assert norms.campanato_norm(box16, f, PHI4, p=p).value == 0.0

    def test_power_datum_band_and_stability(self, box16, box32):
        vals = {}
        for dom in (box16, box32):
            _, _, f = face_datum(dom)
            vals[dom.h] = norms.campanato_norm(dom, f, PHI4, p=1).value
            assert 0.05 <= vals[dom.h] <= 1.0
        assert abs(vals[box32.h] / vals[box16.h] - 1.0) <= 0.2

    def test_bounded_by_twice_holder(self, box16):
        for name, f, _ in norms.builtin_suite(box16):
            camp = norms.campanato_norm(box16, f, PHI4, p=1).value
            hol = norms.holder_seminorm(box16.boundary_centroids, f,
                                        PHI4).value
            assert camp <= 2.0 * hol + 1e-9, name

    def test_p2_dominates_p1(self, box16):
        _, _, f = face_datum(box16)
        v1 = norms.campanato_norm(box16, f, PHI4, p=1).value
        v2 = norms.campanato_norm(box16, f, PHI4, p=2).value
        assert v2 >= v1 - 1e-12

    def test_p_validation(self, box16):
        with pytest.raises(ValueError):
            norms.campanato_norm(box16, np.zeros(box16.n_faces), PHI4, p=0.5)

    def test_witness_scale_is_dyadic(self, box16):
        _, _, f = face_datum(box16)
        rep = norms.campanato_norm(box16, f, PHI4, p=1)
        face, r = rep.witness
        assert 0 <= face < box16.n_faces
        assert any(abs(r - s) < 1e-12 for s in norms._dyadic_scales(box16))


class TestOscillation:
    def test_constant_is_zero(self, box16):
        f = np.ones(box16.n_faces)
        for r in norms._dyadic_scales(box16):
            assert norms.oscillation(box16, f, r, p=1) == 0.0

    def test_non_decreasing_in_r(self, box16):
        _, _, f = face_datum(box16)
        vals = [norms.oscillation(box16, f, r, p=1)
                for r in norms._dyadic_scales(box16)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_sup_over_scales_recovers_campanato(self, box16):
        _, _, f = face_datum(box16)
        camp = norms.campanato_norm(box16, f, PHI4, p=1, stride=1).value
        other = max(norms.oscillation(box16, f, r, p=1) / PHI4(r)
                    for r in norms._dyadic_scales(box16))
        assert abs(camp - other) <= 1e-9 * max(1.0, camp)

    def test_small_r_rejected(self, box16):
        with pytest.raises(ValueError):
            norms.oscillation(box16, np.zeros(box16.n_faces), 2 * box16.h)

    def test_nested_ball_average_bound(self, box16):
        # |f_D(x,r) - f_D(y,s)| <= (sigma big / sigma small) * osc(s)
        # whenever D(x,r) is contained in D(y,s)
        _, _, f = face_datum(box16)
        scales = norms._dyadic_scales(box16)
        rng = np.random.default_rng(3)
        ids = rng.choice(box16.n_faces, size=12, replace=False)
        checked = 0
        for i in ids:
            x = box16.boundary_centroids[i]
            small = set(box16.surface_ball_faces(x, scales[0]).tolist())
            fx = norms.ball_average(box16, f, x, scales[0])
            for j in ids:
                y = box16.boundary_centroids[j]
                for s in scales[1:]:
                    big = set(box16.surface_ball_faces(y, s).tolist())
                    if not small <= big:
                        continue
                    fy = norms.ball_average(box16, f, y, s)
                    bound = (len(big) / len(small)) \
                        * norms.oscillation(box16, f, s, p=1)
                    assert abs(fx - fy) <= bound + 1e-12
                    checked += 1
        assert checked >= 30

    def test_scale_jump_constant_stable_across_data(self, box16):
        # |f_D(x,r) - f_D(x,s)| <= C int_0^4s osc(t) dt/t with one C for
        # the whole suite; the sub-grid head is completed by a power fit
        scales = norms._dyadic_scales(box16)
        pts = box16.boundary_centroids
        r2 = np.asarray(scales) ** 2

        def fitted_c(f):
            osc = {s: norms.oscillation(box16, f, s, p=1) for s in scales}
            head_exp = max(np.log2(max(osc[scales[1]], 1e-300)
                                   / max(osc[scales[0]], 1e-300)), 0.05)
            table = np.zeros((pts.shape[0], len(scales)))
            for a in range(0, pts.shape[0], 256):
                d2 = ((pts[a:a + 256, None, :] - pts[None, :, :]) ** 2).sum(-1)
                for s in range(len(scales)):
                    m = d2 < r2[s]
                    table[a:a + 256, s] = (m @ f) / np.maximum(m.sum(1), 1)
            best = 0.0
            for ri in range(len(scales)):
                for si in range(ri + 1, len(scales)):
                    integ = osc[scales[0]] / head_exp + np.log(2.0) \
                        * sum(osc[s] for s in scales
                              if s <= 4 * scales[si] + 1e-12)
                    jump = float(np.abs(table[:, ri] - table[:, si]).max())
                    best = max(best, jump / integ)
            return best

        suite = norms.builtin_suite(box16)
        ref = fitted_c(suite[0][1])
        for name, f, _ in suite[1:]:
            c = fitted_c(f)
            assert ref / 1.5 <= c <= 1.5 * ref, name


class TestEquivalenceReport:
    def test_cube_suite_ratios(self, box16):
        rep = norms.norm_equivalence_report(box16, PHI4)
        assert rep.cad_ok and rep.flags == []
        assert rep.doubling <= 8.0
        assert len(rep.rows) == 10
        for row in rep.rows:
            assert not row.flagged
            if row.kind == "solution":
                assert 1 / 50 <= row.ratio <= 50
            else:
                assert 1 / 20 <= row.ratio <= 20

    def test_single_datum_refinement_stability(self, box16, box32):
        ratios = {}
        for dom in (box16, box32):
            _, _, f = face_datum(dom)
            u = opm.solve_dirichlet(dom, boundary_values=f)
            _, fu = norms.holder_trace_pair(u, PHI4)
            car = norms.carleson_norm(u, PHI4)
            ratios[dom.h] = car.value / fu.value
        assert abs(ratios[box32.h] / ratios[box16.h] - 1.0) <= 0.3

    def test_constant_datum_flagged_undefined(self, box16):
        suite = [("flat", np.zeros(box16.n_faces),
                  opm.CoefficientField())]
        rep = norms.norm_equivalence_report(box16, PHI4, suite=suite)
        assert len(rep.rows) == 2
        for row in rep.rows:
            assert np.isnan(row.ratio)
            assert row.flagged
        assert [r.name for r in rep.flagged] == ["flat", "flat"]

    def test_cad_flag_when_probe_floor_unreachable(self, box16, monkeypatch):
        monkeypatch.setattr(norms, "CAD_C0_FLOOR", 0.99)
        suite = [("affine", box16.boundary_centroids[:, 0],
                  opm.CoefficientField())]
        rep = norms.norm_equivalence_report(box16, PHI4, suite=suite)
        assert not rep.cad_ok
        assert norms.NOT_CAD_SURROGATE in rep.flags
        assert len(rep.rows) == 2   # rows still produced

    def test_spot_check_rows(self, box16):
        ok, rows = norms.cad_spot_check(box16)
        assert ok
        kinds = {r["probe"] for r in rows}
        assert kinds == {"corkscrew", "harnack"}
        assert all(r["pass"] for r in rows)

    def test_to_rows_schema(self, box16):
        suite = [("affine", box16.boundary_centroids[:, 0],
                  opm.CoefficientField())]
        rows = norms.norm_equivalence_report(box16, PHI4, suite=suite).to_rows()
        assert set(rows[0]) == {"name", "kind", "holder", "paired", "ratio",
                                "flagged"}
