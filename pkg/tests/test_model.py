import math

import numpy as np
import pytest

from fivebar import model
from fivebar.polysys import build_F

from conftest import CASE1, CASE2, fk_cloud, random_design


class TestCanonicalize:
    def test_already_canonical(self):
        d = model.canonicalize(model.FiveBarDesign(0, 0, 1, 0, 1, 1, 1, 1, 0.5, 0.2))
        assert d.b_x == pytest.approx(1.0)
        assert d.frame.angle == pytest.approx(0.0)
        assert d.frame.translation == (0.0, 0.0)

    def test_axis_aligned_rotation(self):
        d = model.canonicalize(model.FiveBarDesign(0, 0, 0, 2, 1, 1, 1, 1, 0.5, 0.2))
        assert d.b_x == pytest.approx(2.0)
        assert d.frame.angle == pytest.approx(math.pi / 2)

    def test_case1_ground_distance(self):
        # oracle: direct vector norm of B - A
        expected = math.hypot(0.060 - 0.259, 0.590 - 0.586)
        d = model.canonicalize(CASE1)
        assert d.b_x == pytest.approx(expected, abs=1e-15)

    def test_frame_recovers_ground_pivots(self):
        for design in (CASE1, CASE2):
            d = model.canonicalize(design)
            A = d.frame.point_to_original(np.zeros(2))
            B = d.frame.point_to_original(np.array([d.b_x, 0.0]))
            assert np.allclose(A, [design.a_x, design.a_y], atol=1e-12)
            assert np.allclose(B, [design.b_x, design.b_y], atol=1e-12)

    def test_coincident_pivots_rejected(self):
        with pytest.raises(model.DegenerateDesignError):
            model.canonicalize(model.FiveBarDesign(1, 1, 1, 1, 1, 1, 1, 1, 0.5, 0))

    def test_bad_lengths_rejected(self):
        with pytest.raises(model.DegenerateDesignError):
            model.FiveBarDesign(0, 0, 1, 0, -1, 1, 1, 1, 0.5, 0).validate()
        with pytest.raises(model.DegenerateDesignError):
            model.FiveBarDesign(0, 0, 1, 0, 1, 1, 1, 1, 0.0, 0.0).validate()


class TestForwardKinematics:
    def test_symmetric_branches(self, symmetric):
        sols = model.forward_kinematics(symmetric, math.pi / 2, math.pi / 2)
        assert len(sols) == 2
        pts = sorted([(round(s.x, 9), round(s.y, 9)) for s in sols])
        assert pts == [(1.0, 0.0), (1.0, 2.0)]

    def test_disjoint_circles_empty(self, symmetric):
        # cranks pointing apart: |C - D| > l2 + l4
        assert model.forward_kinematics(symmetric, math.pi, 0.0) == []

    def test_residuals_against_polynomials(self, case1):
        # independent check: closed-form solutions satisfy the sparse system
        F = build_F(case1)
        Z, _ = fk_cloud(case1, 100, seed=1)
        assert Z.shape[0] > 0
        assert np.max(np.abs(F.evaluate(Z))) <= 1e-9

    def test_branch_labels_match_cross_sign(self, case1):
        Z, sigma = fk_cloud(case1, 200, seed=2)
        isv = model.input_sing_value(case1, Z)
        mask = sigma != 0
        assert np.all(np.sign(isv[mask]) == sigma[mask])

    def test_multiplicity_bound(self, case2):
        rng = np.random.default_rng(3)
        for _ in range(50):
            sols = model.forward_kinematics(
                case2, rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
            )
            assert len(sols) <= 2


class TestInverseKinematics:
    def test_round_trip_contains_generator(self, symmetric):
        sols = model.inverse_kinematics(symmetric, 1.0, 2.0)
        angles = [(round(math.degrees(s.phi), 6), round(math.degrees(s.psi), 6))
                  for s in sols]
        assert (90.0, 90.0) in angles

    def test_unreachable_empty(self, symmetric):
        # |P - A| > l1 + |CP|
        assert model.inverse_kinematics(symmetric, 10.0, 0.0) == []

    def test_fk_ik_round_trip(self, case2):
        rng = np.random.default_rng(4)
        count = 0
        while count < 100:
            phi = rng.uniform(0, 2 * np.pi)
            psi = rng.uniform(0, 2 * np.pi)
            for sol in model.forward_kinematics(case2, phi, psi):
                z = sol.to_array()
                iks = model.inverse_kinematics(case2, sol.x, sol.y)
                assert len(iks) <= 4
                best = min(
                    np.max(np.abs(ik.to_array() - z)) for ik in iks
                )
                assert best <= 1e-8
                count += 1

    def test_residuals(self, case1):
        rng = np.random.default_rng(5)
        Z, _ = fk_cloud(case1, 50, seed=5)
        for z in Z[:40]:
            for ik in model.inverse_kinematics(case1, z[0], z[1]):
                assert model.residual_inf(case1, ik.to_array()) <= 1e-8



def _near_tangency_config(d, phi=2.0):
    """Bisect a psi sweep onto the forward-kinematics fold at fixed phi."""
    import numpy as _np

    grid = _np.linspace(0.0, 2.0 * _np.pi, 720)
    counts = [len(model.forward_kinematics(d, phi, p)) for p in grid]
    lo = hi = None
    for a, b in zip(range(len(grid) - 1), range(1, len(grid))):
        if counts[a] == 2 and counts[b] == 0:
            lo, hi = grid[a], grid[b]
            break
        if counts[a] == 0 and counts[b] == 2:
            lo, hi = grid[b], grid[a]
            break
    assert lo is not None, "no fold crossing found in the sweep"
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        sols = model.forward_kinematics(d, phi, mid)
        if len(sols) == 1:  # inside the tangency band: branches merged
            return sols[0].to_array()
        if len(sols) == 2:
            lo = mid
        else:
            hi = mid
    return model.forward_kinematics(d, phi, lo)[0].to_array()


class TestSingularityValues:
    def test_constructed_collinear_h1(self, case1):
        # slide P onto the line A-C by choosing the coupler angle directly:
        # configurations with x, y proportional to (c_phi, s_phi)
        d = case1
        phi = 0.7
        t = d.l1 + d.rho
        z = np.array([t * math.cos(phi), t * math.sin(phi),
                      math.cos(phi), math.sin(phi), 1.0, 0.0])
        h1, _ = model.output_sing_values(d, z)
        assert abs(h1) <= 1e-9

    def test_symmetric_example_values(self, symmetric):
        # oracle: direct cross products at the two closed-form branches
        sols = model.forward_kinematics(symmetric, math.pi / 2, math.pi / 2)
        by_sigma = {s.sigma: s for s in sols}
        for sigma, C, D, F in (
            (1, (0, 1), (2, 1), (1, 2)),
            (-1, (0, 1), (2, 1), (1, 0)),
        ):
            s = by_sigma[sigma]
            C, D, F = map(np.asarray, (C, D, F))
            P = np.array([s.x, s.y])
            h1_exp = C[0] * (P[1] - C[1]) - C[1] * (P[0] - C[0])
            DB = D - np.array([2.0, 0.0])
            FD = F - D
            h2_exp = DB[0] * FD[1] - DB[1] * FD[0]
            h1, h2 = model.output_sing_values(symmetric, s.to_array())
            assert h1 == pytest.approx(h1_exp, abs=1e-12)
            assert h2 == pytest.approx(h2_exp, abs=1e-12)

    def test_branch_sign_flip(self, symmetric):
        sols = model.forward_kinematics(symmetric, math.pi / 2, math.pi / 2)
        vals = [model.input_sing_value(symmetric, s.to_array()) for s in sols]
        assert vals[0] * vals[1] < 0
        assert abs(abs(vals[0]) - abs(vals[1])) <= 1e-12

    def test_tangency_input_singular(self, case1):
        z = _near_tangency_config(case1, phi=2.0)
        assert abs(model.input_sing_value(case1, z)) <= 1e-8

    def test_h1_root_by_bisection_along_edge(self, case1):
        """Edge endpoints with opposite h1 sign bracket a locus crossing."""
        from fivebar.sampler import newton_project

        d = case1
        F = build_F(d)
        Z, _ = fk_cloud(d, 400, seed=6)
        h1, _ = model.output_sing_values(d, Z)
        # find a close pair with opposite h1 signs
        from scipy.spatial import cKDTree

        tree = cKDTree(Z)
        pairs = tree.query_pairs(0.35, output_type="ndarray")
        mask = h1[pairs[:, 0]] * h1[pairs[:, 1]] < 0
        assert np.any(mask)
        i, j = pairs[np.flatnonzero(mask)[0]]
        a, b = Z[i], Z[j]
        for _ in range(60):
            midpoint = newton_project(F, 0.5 * (a + b))[0]
            hm = model.output_sing_values(d, midpoint)[0]
            if hm * model.output_sing_values(d, a)[0] > 0:
                a = midpoint
            else:
                b = midpoint
        assert abs(model.output_sing_values(d, a)[0]) <= 1e-6


class TestVelocityEllipse:
    def test_finite_difference_oracle(self, case1):
        d = case1
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 20:
            phi = rng.uniform(0, 2 * np.pi)
            psi = rng.uniform(0, 2 * np.pi)
            sols = model.forward_kinematics(d, phi, psi)
            if len(sols) != 2:
                continue
            sol = sols[0]
            if abs(model.input_sing_value(d, sol.to_array())) < 1e-2:
                continue
            J = model.velocity_map(d, sol)
            h = 1e-6
            Jfd = np.zeros((2, 2))
            okfd = True
            for col, (dp, ds) in enumerate(((h, 0.0), (0.0, h))):
                plus = model.forward_kinematics(d, phi + dp, psi + ds)
                minus = model.forward_kinematics(d, phi - dp, psi - ds)
                zp = min(plus, key=lambda s: np.max(np.abs(s.to_array() - sol.to_array())), default=None)
                zm = min(minus, key=lambda s: np.max(np.abs(s.to_array() - sol.to_array())), default=None)
                if zp is None or zm is None:
                    okfd = False
                    break
                Jfd[0, col] = (zp.x - zm.x) / (2 * h)
                Jfd[1, col] = (zp.y - zm.y) / (2 * h)
            if not okfd:
                continue
            sv = np.linalg.svd(J, compute_uv=False)
            svfd = np.linalg.svd(Jfd, compute_uv=False)
            assert np.all(np.abs(sv - svfd) <= 1e-4 * np.maximum(sv, 1e-12))
            checked += 1

    def test_semi_minor_vanishes_at_output_singularity(self, case1):
        # bisect a crank angle sweep to an h2 = 0 crossing, then check the
        # ellipse collapses there
        d = case1
        phi = 1.2

        def h2_of(psi):
            sols = model.forward_kinematics(d, phi, psi)
            if not sols:
                return None
            s = max(sols, key=lambda s: s.sigma)
            return model.output_sing_values(d, s.to_array())[1], s

        lo, hi = None, None
        prev = None
        for psi in np.linspace(0, 2 * np.pi, 400):
            got = h2_of(psi)
            if got is None:
                prev = None
                continue
            if prev is not None and prev[0] * got[0] < 0:
                lo, hi = prev[1], got[1]
                lo_psi, hi_psi = prev[2], psi
                break
            prev = (got[0], got[1], psi)
        assert lo is not None
        for _ in range(60):
            mid = 0.5 * (lo_psi + hi_psi)
            got = h2_of(mid)
            if got is None:
                break
            if got[0] * h2_of(lo_psi)[0] > 0:
                lo_psi = mid
            else:
                hi_psi = mid
        h2v, sol = h2_of(lo_psi)
        ell = model.velocity_ellipse(d, sol)
        assert ell.semi_minor <= 1e-6

    def test_input_singular_raises(self, case1):
        z = _near_tangency_config(case1, phi=2.0)
        with pytest.raises(model.SingularJacobianError):
            model.velocity_map(d=case1, z=z)

class TestBatchConsistency:
    def test_fk_batch_matches_scalar(self, case1):
        rng = np.random.default_rng(8)
        phi = rng.uniform(0, 2 * np.pi, 60)
        psi = rng.uniform(0, 2 * np.pi, 60)
        Z, sigma, parent, tang = model.fk_batch(case1, phi, psi)
        for k in range(Z.shape[0]):
            sols = model.forward_kinematics(case1, phi[parent[k]], psi[parent[k]])
            best = min(np.max(np.abs(s.to_array() - Z[k])) for s in sols)
            assert best <= 1e-12

    def test_random_designs_fk_ik(self):
        rng = np.random.default_rng(9)
        for _ in range(3):
            d = random_design(rng)
            Z, _ = fk_cloud(d, 60, seed=10)
            for z in Z[:25]:
                iks = model.inverse_kinematics(d, z[0], z[1])
                assert iks and min(
                    np.max(np.abs(ik.to_array() - z)) for ik in iks
                ) <= 1e-8
