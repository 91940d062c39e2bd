import math

import numpy as np
import pytest

from fivebar import model, polysys
from fivebar.polysys import (
    Poly,
    PolySystem,
    build_F,
    build_fritz_john,
    build_g,
    build_h_polys,
    export_text,
    multihomogeneous_bezout,
    reduce_trig_squares,
)

from conftest import CASE1, CASE2, fk_cloud, random_design


class TestPolyArithmetic:
    def test_add_mul_diff(self):
        x = Poly.var(2, 0)
        y = Poly.var(2, 1)
        p = (x + y) * (x - y)  # x^2 - y^2
        assert p.terms == {(2, 0): 1.0, (0, 2): -1.0}
        assert p.diff(0).terms == {(1, 0): 2.0}
        assert p.degree() == 2

    def test_eval_constant(self):
        p = Poly.const(3, 2.5)
        assert p.eval([7.0, -1.0, 3.0]) == 2.5
        sys = PolySystem(polys=[p], ncols=3)
        assert sys.evaluate(np.array([1.0, 2.0, 3.0]))[0] == 2.5

    def test_trig_square_reduction(self):
        c = Poly.var(6, 2)
        s = Poly.var(6, 3)
        p = 0.7 * (c * c) + 0.7 * (s * s) + Poly.var(6, 0)
        red = reduce_trig_squares(p)
        assert red.terms == (Poly.var(6, 0) + 0.7).terms

    def test_embed(self):
        p = Poly(2, {(1, 1): 3.0})
        q = p.embed(4, [2, 0])
        assert q.terms == {(1, 0, 1, 0): 3.0}


class TestEvaluation:
    def test_jacobian_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        polys = []
        for _ in range(3):
            terms = {}
            for _ in range(8):
                e = tuple(rng.integers(0, 3, size=4))
                terms[e] = complex(rng.normal(), rng.normal())
            polys.append(Poly(4, terms))
        sys = PolySystem(polys=polys, ncols=4)
        z = rng.normal(size=4) + 1j * rng.normal(size=4)
        J = sys.jacobian(z)
        h = 1e-7
        for v in range(4):
            zp, zm = z.copy(), z.copy()
            zp[v] += h
            zm[v] -= h
            fd = (sys.evaluate(zp) - sys.evaluate(zm)) / (2 * h)
            denom = np.maximum(np.abs(J[:, v]), 1.0)
            assert np.max(np.abs(J[:, v] - fd) / denom) < 1e-6

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        p = Poly(3, {(2, 1, 0): 1.5, (0, 0, 3): -2.0, (0, 0, 0): 0.5})
        sys = PolySystem(polys=[p], ncols=3)
        Z = rng.normal(size=(10, 3))
        vals = sys.evaluate(Z)
        for k in range(10):
            assert vals[k, 0] == pytest.approx(complex(p.eval(Z[k])), abs=1e-14)


class TestClosureSystem:
    def test_fk_residual(self, case1):
        F = build_F(case1)
        Z, _ = fk_cloud(case1, 300, seed=2)
        assert np.max(np.abs(F.evaluate(Z))) <= 1e-10

    def test_pythagorean_rows(self, case1):
        F = build_F(case1)
        z = np.array([0.3, 0.4, 1.0, 0.0, 0.0, 1.0])
        vals = F.evaluate(z)
        assert vals[2] == pytest.approx(0.0, abs=1e-15)
        assert vals[3] == pytest.approx(0.0, abs=1e-15)

    def test_total_degrees(self, case1):
        F = build_F(case1)
        assert [p.degree() for p in F.polys] == [2, 2, 2, 2]
        assert build_g(case1).polys[0].degree() == 2

    def test_first_row_closed_form(self, case1):
        # x^2 + y^2 - 2 l1 (x c + y s) + l1^2 - p^2 - q^2, exactly
        d = case1
        F1 = build_F(d).polys[0]
        expected = {
            (2, 0, 0, 0, 0, 0): 1.0,
            (0, 2, 0, 0, 0, 0): 1.0,
            (1, 0, 1, 0, 0, 0): -2.0 * d.l1,
            (0, 1, 0, 1, 0, 0): -2.0 * d.l1,
            (0, 0, 0, 0, 0, 0): d.l1**2 - d.p**2 - d.q**2,
        }
        assert set(F1.terms) == set(expected)
        for e, c in expected.items():
            assert F1.terms[e] == pytest.approx(c, abs=1e-14)

    def test_loop_closure_vanishes_on_random_designs(self):
        # the inferred geometric chain must produce an identically vanishing
        # residual on forward-kinematics configurations of many designs
        rng = np.random.default_rng(3)
        for _ in range(5):
            d = random_design(rng)
            F = build_F(d)
            Z, _ = fk_cloud(d, 2000, seed=int(rng.integers(1 << 30)))
            assert Z.shape[0] >= 1000
            assert np.max(np.abs(F.evaluate(Z))) <= 1e-9

    def test_sympy_expansion_oracle(self, case1):
        # independent symbolic route to the loop-closure polynomial
        sympy = pytest.importorskip("sympy")
        d = case1
        x, y, cp, sp, cq, sq = sympy.symbols("x y cp sp cq sq")
        rho2 = sympy.Rational(1) * (d.p**2 + d.q**2)
        Cx, Cy = d.l1 * cp, d.l1 * sp
        Dx, Dy = d.b_x + d.l3 * cq, d.l3 * sq
        ux = (d.p * (x - Cx) + d.q * (y - Cy)) / rho2
        uy = (-d.q * (x - Cx) + d.p * (y - Cy)) / rho2
        Fx, Fy = Cx + d.l2 * ux, Cy + d.l2 * uy
        expr = sympy.expand(rho2 * ((Dx - Fx) ** 2 + (Dy - Fy) ** 2 - d.l4**2))
        F2 = build_F(d).polys[1]
        rng = np.random.default_rng(4)
        for _ in range(20):
            vals = rng.normal(size=6)
            got = complex(F2.eval(vals)).real
            want = float(
                expr.subs(dict(zip((x, y, cp, sp, cq, sq), vals)))
            )
            # the two routes differ by multiples of the unit-circle rows
            c2 = (vals[2] ** 2 + vals[3] ** 2 - 1.0, vals[4] ** 2 + vals[5] ** 2 - 1.0)
            slack = abs(c2[0]) + abs(c2[1])
            assert abs(got - want) <= 1e-9 + 10.0 * slack

    def test_sympy_oracle_on_circles(self, case1):
        # with the trig rows satisfied the two routes agree exactly
        sympy = pytest.importorskip("sympy")
        d = case1
        F2 = build_F(d).polys[1]
        x, y, cp, sp, cq, sq = sympy.symbols("x y cp sp cq sq")
        rho2 = d.p**2 + d.q**2
        Cx, Cy = d.l1 * cp, d.l1 * sp
        Dx, Dy = d.b_x + d.l3 * cq, d.l3 * sq
        ux = (d.p * (x - Cx) + d.q * (y - Cy)) / rho2
        uy = (-d.q * (x - Cx) + d.p * (y - Cy)) / rho2
        Fx, Fy = Cx + d.l2 * ux, Cy + d.l2 * uy
        expr = sympy.expand(rho2 * ((Dx - Fx) ** 2 + (Dy - Fy) ** 2 - d.l4**2))
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = rng.uniform(0, 2 * np.pi, size=2)
            vals = np.array([rng.normal(), rng.normal(),
                             np.cos(a), np.sin(a), np.cos(b), np.sin(b)])
            got = complex(F2.eval(vals)).real
            want = float(expr.subs(dict(zip((x, y, cp, sp, cq, sq), vals))))
            assert got == pytest.approx(want, abs=1e-10)


class TestInputSingularity:
    def test_sign_matches_geometry(self, case1):
        g = build_g(case1)
        Z, _ = fk_cloud(case1, 1000, seed=6)
        gv = g.evaluate(Z).real.ravel()
        isv = model.input_sing_value(case1, Z)
        prod = gv * isv
        assert np.all(prod > 0)

    def test_proportionality_constant(self, case2):
        # determinant equals 4 rho^2 times the collinearity cross product
        g = build_g(case2)
        Z, _ = fk_cloud(case2, 200, seed=7)
        gv = g.evaluate(Z).real.ravel()
        isv = model.input_sing_value(case2, Z)
        ratio = gv / isv
        assert np.allclose(ratio, 4.0 * case2.rho**2, rtol=1e-10)

    def test_vanishes_at_tangency(self, case1):
        from test_model import _near_tangency_config

        z = _near_tangency_config(case1, phi=2.0)
        g = build_g(case1)
        assert abs(g.evaluate(z)[0]) <= 1e-8

    def test_h_polys_match_geometry(self, case1):
        hs = build_h_polys(case1)
        Z, _ = fk_cloud(case1, 200, seed=8)
        h1g, h2g = model.output_sing_values(case1, Z)
        vals = hs.evaluate(Z).real
        assert np.allclose(vals[:, 0], h1g, atol=1e-10)
        assert np.allclose(vals[:, 1], h2g * hs.meta["h2_scale"], atol=1e-10)


class TestFritzJohn:
    def test_two_homogeneous_count(self, case1):
        fj = build_fritz_john(case1)
        assert multihomogeneous_bezout(fj.full) == 1152

    def test_subproblem_counts(self, case1):
        fj = build_fritz_john(case1)
        assert multihomogeneous_bezout(fj.point0) == 192
        assert multihomogeneous_bezout(fj.point1) == 192
        assert multihomogeneous_bezout(fj.interior) == 672

    def test_count_is_design_independent(self):
        rng = np.random.default_rng(9)
        d = random_design(rng)
        fj = build_fritz_john(d)
        assert multihomogeneous_bezout(fj.full) == 1152

    def test_small_count_by_hand(self):
        # rows of bidegree (2,0), (1,1), (1,1) on groups of sizes 2 and 2
        # (projective): coefficient of a^2 b in 2a (a+b)^2 equals 4
        x1, x2 = Poly.var(4, 0), Poly.var(4, 1)
        l1, l2 = Poly.var(4, 2), Poly.var(4, 3)
        chart = l1 + l2 - 1.0
        sys = PolySystem(
            polys=[x1 * x1 - 1.0, x1 * l1 + x2 * l2, x1 * l2, chart],
            ncols=4, group1=[0, 1], group2=[2, 3], chart_row=3,
        )
        assert multihomogeneous_bezout(sys) == 4

    def test_zero_distance_stationary_point(self, case1):
        # with the query point on the curve, w = c0 solves the endpoint block
        from fivebar import singdist

        seeds = singdist.real_slice_seeds(case1, n_slices=2, seed=1)
        assert seeds.shape[0] > 0
        w = seeds[0]
        fj = build_fritz_john(case1)
        sys = fj.point0
        # at w = c0 the objective gradient vanishes, so the multiplier ray is
        # the pure objective direction, scaled onto the chart
        lam = np.zeros(6, dtype=complex)
        lam[0] = 1.0 / fj.chart[0]
        z = np.concatenate([w.astype(complex), lam])
        resid = sys.evaluate(z, params=w)
        assert np.max(np.abs(resid)) <= 1e-8


class TestExport:
    def test_round_trip_by_independent_parser(self, case1):
        sys = build_F(case1)
        text = export_text(sys)
        # parse the documented format back and compare evaluations
        rng = np.random.default_rng(10)
        z = rng.normal(size=6)
        for line, p in zip(text.strip().split("\n"), sys.polys):
            total = 0.0
            for term in line.split(" + "):
                factors = term.split("*")
                coeff = complex(factors[0].strip("()"))
                val = coeff
                for f in factors[1:]:
                    if "^" in f:
                        name, e = f.split("^")
                    else:
                        name, e = f, "1"
                    val *= z[int(name[1:])] ** int(e)
                total += val
            assert total == pytest.approx(complex(p.eval(z)), abs=1e-12)
