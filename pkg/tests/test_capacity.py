"""Condenser capacity, CDC ratios, and the potential/measure inequality."""

import numpy as np
import pytest

from emlab import capacity as cap
from emlab import geometry as geo
from emlab import operator as opm

EIGHT_PI = 8 * np.pi


def unit_ball_pred(p):
    return (p ** 2).sum(1) <= 1.0


@pytest.fixture(scope="module")
def shell12():
    return cap.condenser_capacity(unit_ball_pred, [0, 0, 0], 2.0, 1 / 12)


@pytest.fixture(scope="module")
def box32():
    return geo.build_domain({"shape": "box", "h": 1 / 32})


class TestCondenser:
    def test_shell_oracle(self, shell12):
        assert abs(shell12.value / EIGHT_PI - 1.0) <= 0.02

    def test_octant_matches_full(self, shell12):
        oct_ = cap.condenser_capacity(unit_ball_pred, [0, 0, 0], 2.0, 1 / 12,
                                      octant_symmetry=True)
        assert abs(oct_.value - shell12.value) <= 1e-9

    def test_error_shrinks_under_refinement(self, shell12):
        fine = cap.condenser_capacity(unit_ball_pred, [0, 0, 0], 2.0, 1 / 24,
                                      octant_symmetry=True)
        err_c = abs(shell12.value - EIGHT_PI)
        err_f = abs(fine.value - EIGHT_PI)
        assert err_f < err_c

    def test_monotone_in_K(self, shell12):
        small = cap.condenser_capacity(lambda p: (p ** 2).sum(1) <= 0.64,
                                       [0, 0, 0], 2.0, 1 / 12)
        assert small.value <= shell12.value + 1e-9

    def test_antitone_in_D(self, shell12):
        wide = cap.condenser_capacity(unit_ball_pred, [0, 0, 0], 2.5, 1 / 12)
        assert wide.value < shell12.value
        # oracle 4 pi / (1 - 1/2.5) = 20.94
        assert abs(wide.value / 20.944 - 1.0) <= 0.02

    def test_empty_K_is_zero(self):
        res = cap.condenser_capacity(lambda p: np.zeros(len(p), dtype=bool),
                                     [0, 0, 0], 1.0, 1 / 8)
        assert res.value == 0.0

    def test_K_touching_outer_ring(self):
        with pytest.raises(cap.KNotInsideDError):
            cap.condenser_capacity(unit_ball_pred, [0, 0, 0], 1.05, 1 / 12)

    def test_K_leaving_D(self):
        def off(p):
            return ((p - [1.5, 0, 0]) ** 2).sum(1) <= 1.0
        with pytest.raises(cap.KNotInsideDError):
            cap.condenser_capacity(off, [0, 0, 0], 2.0, 1 / 12)

    def test_2d_unsupported(self):
        with pytest.raises(cap.DimensionUnsupportedError):
            cap.condenser_capacity(lambda p: np.zeros(len(p), dtype=bool),
                                   [0.0, 0.0], 1.0, 1 / 8)

    def test_potential_is_a_unit_barrier(self, shell12):
        v = shell12.potential.values
        assert v.min() >= -1e-12
        assert v.max() <= 1.0 + 1e-12
        assert set(np.unique(shell12.potential.boundary_values)) == {0.0, 1.0}


class TestReferenceBall:
    def test_radial_oracles(self):
        for r, target in ((1.0, EIGHT_PI), (0.5, 4 * np.pi)):
            res = cap.reference_ball_capacity([0.0, 0.0, 0.0], r)
            assert abs(res.value / target - 1.0) <= 0.05

    def test_scaling_constant_across_radii(self):
        ratios = [cap.reference_ball_capacity([0.0, 0.0, 0.0], r).value / r
                  for r in (0.25, 0.5, 1.0)]
        assert max(ratios) / min(ratios) <= 1.10

    def test_translation_invariance(self):
        a = cap.reference_ball_capacity([0.0, 0.0, 0.0], 0.5).value
        b = cap.reference_ball_capacity([0.37, -1.2, 4.4], 0.5).value
        assert abs(a - b) <= 1e-9


class TestCdc:
    def test_cube_face_center(self, box32):
        x = box32.boundary_point_near([0.5, 0.5, 0.0])[1]
        val = cap.cdc_ratio(box32, x, 0.25)
        assert 0.1 <= val.ratio <= 1.0 + 1e-9

    def test_edges_and_corners_stay_bounded(self, box32):
        for probe in ([0.0, 0.5, 0.0], [0.0, 0.0, 0.0]):
            x = box32.boundary_point_near(probe)[1]
            val = cap.cdc_ratio(box32, x, 0.25)
            assert 0.1 <= val.ratio <= 1.0 + 1e-9

    def test_scale_guard(self, box32):
        x = box32.boundary_point_near([0.5, 0.5, 0.0])[1]
        from emlab.measure import ScaleOutOfRangeError
        with pytest.raises(ScaleOutOfRangeError):
            cap.cdc_ratio(box32, x, 4 * box32.h)
        with pytest.raises(ScaleOutOfRangeError):
            cap.cdc_ratio(box32, x, 5.0)

    def test_cube_sweep_inf_and_schema(self):
        dom = geo.build_domain({"shape": "box", "h": 1 / 16})
        rep = cap.cdc_sweep(dom, scales=[0.5], sample="stride:64")
        assert rep.inf_ratio >= 0.1
        rows = rep.to_rows()
        assert set(rows[0]) == {"x_id", "r", "cap_num", "cap_den", "ratio"}
        again = cap.cdc_sweep(dom, scales=[0.5], sample="stride:64")
        assert again.rows == rep.rows

    def test_ball_sweep_near_constant(self):
        dom = geo.build_domain({"shape": "ball", "h": 1 / 16,
                                "params": {"radius": 1.0}})
        rep = cap.cdc_sweep(dom, scales=[0.5], sample="stride:256")
        ratios = [row[4] for row in rep.rows]
        assert min(ratios) >= 0.1
        assert max(ratios) / min(ratios) <= 1.2

    def test_needle_spine_ratio_decreases(self):
        # thickened segment loses capacity with h (a segment is polar)
        vals = []
        for h in (1 / 16, 1 / 32):
            dom = geo.build_domain({"shape": "box_minus_needle", "h": h})
            x = dom.boundary_point_near([0.5, 0.5, 0.5])[1]
            vals.append(cap.cdc_ratio(dom, x, 0.5).ratio)
        assert vals[1] < vals[0]


class TestPotentialMeasure:
    def test_cube_face_center_slack(self):
        dom = geo.build_domain({"shape": "box", "h": 1 / 32})
        op = opm.assemble(dom)
        a = dom.boundary_point_near([0.5, 0.5, 0.0])[1]
        rep = cap.potential_measure_check(dom, op, a, 0.25)
        assert rep.min_slack >= -0.05
        assert not rep.degenerate
        assert len(rep.poles) == len(rep.v_values) == len(rep.w_values)

    def test_pole_adjacent_to_wall_sees_big_potential(self):
        dom = geo.build_domain({"shape": "box", "h": 1 / 32})
        op = opm.assemble(dom)
        a = dom.boundary_point_near([0.5, 0.5, 0.0])[1]
        pole = a + np.array([0.0, 0.0, dom.h / 2])
        rep = cap.potential_measure_check(dom, op, a, 0.25, poles=[pole])
        assert rep.v_values[0] >= 0.5
        assert rep.min_slack >= -0.05
