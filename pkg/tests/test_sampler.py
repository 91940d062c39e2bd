import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from fivebar import model, sampler
from fivebar.polysys import Poly, PolySystem, build_F

from conftest import fk_cloud


def _circle_system():
    return PolySystem(polys=[Poly(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0})],
                      ncols=2)


def _circle_pilot(n=40, radius=1.0, center=(0.0, 0.0)):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([center[0] + radius * np.cos(th),
                            center[1] + radius * np.sin(th)])


class TestWfs:
    def test_unit_circle(self):
        W, wit = sampler.estimate_wfs_for_system(_circle_system(), _circle_pilot(),
                                                 budget=40)
        assert W == pytest.approx(1.0, abs=1e-6)
        b = wit[0]
        # antipodal witnesses through the center
        assert np.linalg.norm(b.w1 + b.w2) <= 1e-6
        assert b.value == pytest.approx(1.0, abs=1e-6)

    def test_two_disjoint_circles(self):
        # one quartic whose zero set is both circles; nearest gap is 2
        c1 = Poly(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0})
        c2 = Poly(2, {(2, 0): 1.0, (0, 2): 1.0, (1, 0): -8.0, (0, 0): 15.0})
        sys = PolySystem(polys=[c1 * c2], ncols=2)
        pilot = np.concatenate([_circle_pilot(), _circle_pilot(center=(4.0, 0.0))])
        W, wit = sampler.estimate_wfs_for_system(sys, pilot, budget=60)
        assert W == pytest.approx(1.0, abs=1e-6)

    def test_bottleneck_normality(self, case1):
        W, wit = sampler.estimate_wfs(case1, budget=64, seed=0)
        F = build_F(case1)
        solver = sampler.BottleneckSolver(F)
        for b in wit[:3]:
            R = solver.residual(
                b.w1[None, :], b.w2[None, :],
                *_lsq_multipliers(solver, b.w1, b.w2),
                np.array([1.0 / np.sum((b.w2 - b.w1) ** 2)]),
            )
            assert np.max(np.abs(R)) <= 1e-6
            assert b.value == pytest.approx(np.linalg.norm(b.w1 - b.w2) / 2, abs=1e-12)

    def test_seed_stability_case1(self, case1):
        Ws = [sampler.estimate_wfs(case1, budget=96, seed=s)[0] for s in range(5)]
        spread = (max(Ws) - min(Ws)) / np.mean(Ws)
        assert spread <= 0.05

    def test_no_candidates_raises(self):
        pilot = _circle_pilot(6)  # too sparse to expose any candidate pair
        with pytest.raises(sampler.NoBottleneckError):
            sampler.estimate_wfs_for_system(_circle_system(), pilot[:4], budget=8)


def _lsq_multipliers(solver, z1, z2):
    J1, _ = solver._jac_hess(z1[None, :])
    J2, _ = solver._jac_hess(z2[None, :])
    sep = (z2 - z1)[None, :]
    mu1 = np.linalg.lstsq(J1[0].T, sep[0], rcond=None)[0][None, :]
    mu2 = np.linalg.lstsq(J2[0].T, sep[0], rcond=None)[0][None, :]
    return mu1, mu2


class TestThinning:
    def test_min_spacing(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(500, 6))
        keep = sampler.thin_points(Z, 0.8)
        pts = Z[keep]
        dd = cKDTree(pts).query(pts, k=2)[0][:, 1]
        assert dd.min() >= 0.8

    def test_every_dropped_point_near_a_kept_one(self):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(400, 3))
        keep = sampler.thin_points(Z, 0.5)
        pts = Z[keep]
        dd = cKDTree(pts).query(Z, k=1)[0]
        assert dd.max() < 0.5


class TestEpsilonSample:
    def test_symmetric_coverage(self, symmetric):
        eps = 0.2
        s = sampler.epsilon_sample(symmetric, eps, base_grid=32)
        rng = np.random.default_rng(2)
        Z, _, _, _ = model.fk_batch(
            symmetric, rng.uniform(0, 2 * np.pi, 20000), rng.uniform(0, 2 * np.pi, 20000)
        )
        dd = cKDTree(s.points).query(Z, k=1)[0]
        assert np.mean(dd <= eps) >= 0.999
        assert np.max(dd) <= 1.5 * eps

    def test_refinement_monotonicity(self, case1):
        a = sampler.epsilon_sample(case1, 0.3, base_grid=32)
        b = sampler.epsilon_sample(case1, 0.15, base_grid=32)
        assert b.n_points > a.n_points

    def test_min_spacing_invariant(self, case1):
        eps = 0.2
        s = sampler.epsilon_sample(case1, eps)
        dd = cKDTree(s.points).query(s.points, k=2)[0][:, 1]
        assert dd.min() >= eps / 4.0

    def test_residuals_after_projection(self, case1):
        s = sampler.epsilon_sample(case1, 0.25)
        assert float(model.residual_inf(case1, s.points).max()) <= 1e-8

    def test_branch_completeness(self, symmetric):
        # both kinematic branches appear at inputs that admit two solutions
        s = sampler.epsilon_sample(symmetric, 0.25, base_grid=32)
        assert set(np.unique(s.sigma)) >= {-1, 1}

    def test_invalid_epsilon(self, case1):
        with pytest.raises(sampler.SamplerError):
            sampler.epsilon_sample(case1, 0.0)

    def test_empty_space_error(self):
        # cranks too short to close the loop anywhere
        d = model.CanonicalDesign(b_x=10.0, l1=0.1, l2=0.1, l3=0.1, l4=0.1,
                                  p=0.05, q=0.0)
        with pytest.raises(sampler.SamplerError):
            sampler.epsilon_sample(d, 0.1, base_grid=16)

    def test_coverage_audit_case1(self, case1):
        eps = 0.18
        s = sampler.epsilon_sample(case1, eps)
        rng = np.random.default_rng(3)
        Z, _, _, _ = model.fk_batch(
            case1, rng.uniform(0, 2 * np.pi, 100000), rng.uniform(0, 2 * np.pi, 100000)
        )
        dd = cKDTree(s.points).query(Z, k=1)[0]
        assert np.mean(dd <= eps) >= 0.999
        assert np.max(dd) <= 1.5 * eps


class TestProjection:
    def test_newton_projection(self, case1):
        F = build_F(case1)
        Z, _ = fk_cloud(case1, 50, seed=4)
        rng = np.random.default_rng(5)
        noisy = Z + 1e-3 * rng.normal(size=Z.shape)
        proj = sampler.newton_project(F, noisy)
        assert np.max(np.abs(F.evaluate(proj))) <= 1e-10
        assert np.max(np.linalg.norm(proj - Z, axis=1)) <= 0.05
