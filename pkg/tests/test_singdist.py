import math

import numpy as np
import pytest

from fivebar import homotopy as ht
from fivebar import model, singdist
from fivebar.polysys import build_F, build_fritz_john, build_g

from conftest import fk_cloud, random_design


@pytest.fixture(scope="module")
def case1_service(case1):
    fj, sets = singdist.ab_initio(case1, seed=3)
    return singdist.SingularityDistanceService(case1, fj, sets)


@pytest.fixture(scope="module")
def case1_polylines(case1):
    return singdist.trace_singularity_curve(case1, arc_step=0.01, seed=2)


class TestAbInitio:
    def test_counts(self, case1):
        fj, sets = singdist.ab_initio(case1, seed=5)
        assert sets["t0"].n_solutions == 24
        assert sets["t1"].n_solutions == 24
        assert sets["interior"].n_solutions == 36
        total = sum(s.n_solutions for s in sets.values())
        assert total == 84

    def test_cache_round_trip(self, tmp_path, case1):
        path = tmp_path / "cache.bin"
        fj1, sets1 = singdist.ab_initio(case1, seed=5, cache_path=path)
        assert path.exists()
        fj2, sets2 = singdist.ab_initio(case1, seed=5, cache_path=path)
        for k in sets1:
            assert np.array_equal(sets1[k].solutions, sets2[k].solutions)


class TestSliceDegree:
    def test_curve_degree_is_12(self, case1, case2):
        assert singdist.slice_solution_count(case1, seed=1) == 12
        assert singdist.slice_solution_count(case2, seed=1) == 12

    def test_random_design(self):
        rng = np.random.default_rng(12)
        d = random_design(rng)
        assert singdist.slice_solution_count(d, seed=2) == 12


class TestSegmentDistance:
    def test_on_curve_query_is_zero(self, case1, case1_service):
        seeds = singdist.real_slice_seeds(case1, n_slices=2, seed=3)
        w = seeds[0]
        D, flag = case1_service.segment_distance(w, w)
        assert not flag
        assert D <= 1e-6

    def test_segment_below_endpoints(self, case1, case1_service):
        rng = np.random.default_rng(13)
        Z, _ = fk_cloud(case1, 120, seed=13)
        order = np.argsort(Z[:, 0])
        checked = 0
        for k in range(0, 40, 2):
            i, j = order[k], order[k + 1]
            D, flag = case1_service.segment_distance(Z[i], Z[j])
            if flag:
                continue
            Dn, _ = case1_service.node_distances(np.stack([Z[i], Z[j]]))
            assert D <= min(Dn) + 1e-9
            checked += 1
        assert checked >= 15

    def test_symmetry(self, case1, case1_service):
        Z, _ = fk_cloud(case1, 40, seed=14)
        a, b = Z[0], Z[1]
        D1, _ = case1_service.segment_distance(a, b, key=b"k1")
        D2, _ = case1_service.segment_distance(b, a, key=b"k2")
        assert D1 == pytest.approx(D2, abs=1e-9)

    def test_memoization(self, case1, case1_service):
        Z, _ = fk_cloud(case1, 10, seed=15)
        a, b = Z[2], Z[3]
        D1, _ = case1_service.segment_distance(a, b)
        n_before = len(case1_service._edge_cache)
        D2, _ = case1_service.segment_distance(a, b)
        assert D1 == D2
        assert len(case1_service._edge_cache) == n_before

    def test_oracle_agreement(self, case1, case1_service, case1_polylines):
        rng = np.random.default_rng(16)
        Z, _ = fk_cloud(case1, 300, seed=16)
        order = np.argsort(Z[:, 1])
        diffs = []
        for k in range(0, 60, 2):
            i, j = order[k], order[k + 1]
            Dh, flag = case1_service.segment_distance(Z[i], Z[j])
            if flag:
                continue
            Do = singdist.oracle_distance(case1_polylines, Z[i], Z[j], case1)
            diffs.append(Dh - Do)
        assert len(diffs) >= 20
        assert np.max(np.abs(diffs)) <= 1e-4

    def test_oracle_upper_bound_before_refinement(self, case1, case1_service,
                                                  case1_polylines):
        Z, _ = fk_cloud(case1, 60, seed=17)
        for k in range(0, 20, 2):
            a, b = Z[k], Z[k + 1]
            Dh, flag = case1_service.segment_distance(a, b)
            Do_raw = singdist.oracle_distance(case1_polylines, a, b, case1,
                                              refine=False)
            if not flag:
                assert Do_raw >= Dh - 1e-4

    def test_stationarity_residual_of_minimizers(self, case1, case1_service):
        # the reported node minimizer satisfies first-order conditions
        fj = case1_service.fj
        ss = case1_service.sets["t0"]
        Z, _ = fk_cloud(case1, 12, seed=18)
        target = Z[4]
        pts, status, res = ht.parameter_homotopy_batch(fj.point0, ss, target[None, :])
        ok = status[0] == ht.STATUS_SUCCESS
        assert np.all(res[0][ok] <= 1e-8)


class TestInteriorFilter:
    def test_t_in_unit_interval(self, case1, case1_service):
        Z, _ = fk_cloud(case1, 40, seed=19)
        C0, C1 = Z[:6], Z[6:12]
        fj = case1_service.fj
        ss = case1_service.sets["interior"]
        targets = np.concatenate([C0, C1], axis=1)
        pts, status, _ = ht.parameter_homotopy_batch(fj.interior, ss, targets)
        t = pts[..., 6]
        ok = (status == ht.STATUS_SUCCESS) & (np.abs(t.imag) <= 1e-8)
        D, fail = case1_service.interior_distances(C0, C1)
        # any reported finite interior distance must come from t inside (0, 1)
        for e in range(6):
            if np.isfinite(D[e]):
                tr = t[e][ok[e]].real
                assert np.any((tr > 0) & (tr < 1))


class TestCurveTracing:
    def test_polylines_on_curve(self, case1, case1_polylines):
        F = build_F(case1)
        g = build_g(case1)
        for pl in case1_polylines:
            assert np.max(np.abs(F.evaluate(pl))) <= 1e-7
            assert np.max(np.abs(g.evaluate(pl))) <= 1e-7

    def test_resolution_convergence(self, case1, case1_service):
        # halving the arc step barely moves refined oracle distances
        fine = singdist.trace_singularity_curve(case1, arc_step=0.005, seed=2)
        coarse = singdist.trace_singularity_curve(case1, arc_step=0.01, seed=2)
        Z, _ = fk_cloud(case1, 60, seed=20)
        for k in range(0, 24, 2):
            a, b = Z[k], Z[k + 1]
            Df = singdist.oracle_distance(fine, a, b, case1)
            Dc = singdist.oracle_distance(coarse, a, b, case1)
            assert abs(Df - Dc) < 1e-5

    def test_closed_loops(self, case1, case1_polylines):
        # the singularity curve of this design closes up
        for pl in case1_polylines:
            assert np.linalg.norm(pl[0] - pl[-1]) <= 0.05
