"""Sparse multivariate polynomial systems for the five-bar manifold.

Builds the closure system F(z) = 0 in z = (x, y, c_phi, s_phi, c_psi, s_psi),
the input-singularity determinant g(z), the collinearity polynomials behind
the output singularities, and the first-order stationarity systems used for
distance-to-singularity queries.  Systems compile to a shared monomial table
so values and Jacobians of many points evaluate as two matrix products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from fivebar.model import CanonicalDesign


class Poly:
    """Sparse polynomial: {exponent tuple -> complex coefficient}."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Optional[Dict[Tuple[int, ...], complex]] = None):
        self.n = n
        self.terms: Dict[Tuple[int, ...], complex] = {}
        if terms:
            for e, c in terms.items():
                if c != 0:
                    self.terms[tuple(e)] = self.terms.get(tuple(e), 0.0) + c

    @classmethod
    def const(cls, n: int, c) -> "Poly":
        return cls(n, {(0,) * n: complex(c)}) if c != 0 else cls(n)

    @classmethod
    def var(cls, n: int, i: int, coeff=1.0) -> "Poly":
        e = [0] * n
        e[i] = 1
        return cls(n, {tuple(e): complex(coeff)})

    def copy(self) -> "Poly":
        return Poly(self.n, dict(self.terms))

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.n, other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
            if out[e] == 0:
                del out[e]
        return Poly(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.n, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            out = {e: c * other for e, c in self.terms.items() if c * other != 0}
            return Poly(self.n, out)
        out: Dict[Tuple[int, ...], complex] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Poly(self.n, {e: c for e, c in out.items() if c != 0})

    __rmul__ = __mul__

    def diff(self, i: int) -> "Poly":
        out = {}
        for e, c in self.terms.items():
            if e[i] > 0:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * e[i]
        return Poly(self.n, out)

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def degree_in(self, cols) -> int:
        cols = list(cols)
        return max((sum(e[i] for i in cols) for e in self.terms), default=0)

    def prune(self, rel_tol: float = 1e-12) -> "Poly":
        """Drop terms below rel_tol times the largest coefficient magnitude."""
        if not self.terms:
            return self
        top = max(abs(c) for c in self.terms.values())
        return Poly(self.n, {e: c for e, c in self.terms.items() if abs(c) > rel_tol * top})

    def embed(self, new_n: int, col_map: Sequence[int]) -> "Poly":
        """Re-index variables into a wider variable space."""
        out = {}
        for e, c in self.terms.items():
            e2 = [0] * new_n
            for i, exp in enumerate(e):
                if exp:
                    e2[col_map[i]] = exp
            out[tuple(e2)] = c
        return Poly(new_n, out)

    def eval(self, point) -> complex:
        point = np.asarray(point)
        total = 0.0 + 0.0j
        for e, c in self.terms.items():
            m = c
            for i, exp in enumerate(e):
                if exp:
                    m = m * point[i] ** exp
            total += m
        return total

    def __repr__(self):
        return f"Poly(n={self.n}, nterms={len(self.terms)}, deg={self.degree()})"


def reduce_trig_squares(poly: Poly, pairs=((2, 3), (4, 5))) -> Poly:
    """Collapse matching c^2 and s^2 term pairs using c^2 + s^2 = 1.

    Whenever the coefficient of m*c^2 equals the coefficient of m*s^2, the
    pair is rewritten as the single term m.  Applied repeatedly until stable.
    """
    out = poly
    changed = True
    while changed:
        changed = False
        for (ci, si) in pairs:
            terms = dict(out.terms)
            for e, c in list(terms.items()):
                if e not in terms or e[ci] < 2:
                    continue
                es = list(e)
                es[ci] -= 2
                es[si] += 2
                es = tuple(es)
                cs = terms.get(es)
                if cs is None or abs(cs - c) > 1e-12 * max(abs(c), 1.0):
                    continue
                base = list(e)
                base[ci] -= 2
                base = tuple(base)
                del terms[e]
                del terms[es]
                terms[base] = terms.get(base, 0.0) + c
                if terms[base] == 0:
                    del terms[base]
                changed = True
            out = Poly(out.n, terms)
    return out


class CompiledSystem:
    """Batched evaluator for a list of polynomials over a shared column space.

    Values and first derivatives with respect to every column are expressed as
    sparse combinations of one table of distinct monomials, so evaluating a
    block of points costs one power-gather plus one sparse matmul.
    """

    def __init__(self, polys: Sequence[Poly], ncols: int):
        self.ncols = ncols
        self.neq = len(polys)
        rows: List[Dict[Tuple[int, ...], complex]] = []
        for p in polys:
            rows.append(p.terms)
        for c in range(ncols):
            for p in polys:
                rows.append(p.diff(c).terms)
        mono_index: Dict[Tuple[int, ...], int] = {}
        for r in rows:
            for e in r:
                if e not in mono_index:
                    mono_index[e] = len(mono_index)
        self.nmono = max(len(mono_index), 1)
        if not mono_index:
            mono_index[(0,) * ncols] = 0
        E = np.zeros((self.nmono, ncols), dtype=np.int16)
        for e, i in mono_index.items():
            E[i] = e
        self.E = E
        self.max_exp = E.max(axis=0)
        # per-column multiply plan: only monomials where the column appears
        plan = []
        for c in range(ncols):
            col = E[:, c]
            for e in range(1, int(col.max(initial=0)) + 1):
                idx = np.flatnonzero(col == e)
                if idx.size:
                    plan.append((c, e, idx))
        self._plan = plan
        data, indices, indptr = [], [], [0]
        for r in rows:
            for e, c in r.items():
                indices.append(mono_index[e])
                data.append(c)
            indptr.append(len(indices))
        self.W = sp.csr_matrix(
            (np.array(data, dtype=np.complex128), np.array(indices), np.array(indptr)),
            shape=(len(rows), self.nmono),
        )

    def _mono_table(self, Z: np.ndarray) -> np.ndarray:
        B = Z.shape[0]
        M = np.ones((B, self.nmono), dtype=np.complex128)
        last_c, colpow = -1, None
        for c, e, idx in self._plan:
            if c != last_c:
                colpow = Z[:, c]
                last_c, last_e = c, 1
            while last_e < e:
                colpow = colpow * Z[:, c]
                last_e += 1
            M[:, idx] *= colpow[:, None]
        return M

    def eval_all(self, Z: np.ndarray):
        """Returns (values (B, neq), jacobian (B, neq, ncols))."""
        Z = np.ascontiguousarray(Z, dtype=np.complex128)
        M = self._mono_table(Z)
        flat = (self.W @ M.T).T  # (B, neq * (1 + ncols))
        B = Z.shape[0]
        vals = flat[:, : self.neq]
        jac = flat[:, self.neq:].reshape(B, self.ncols, self.neq).transpose(0, 2, 1)
        return vals, jac

    def eval_values(self, Z: np.ndarray) -> np.ndarray:
        Z = np.ascontiguousarray(Z, dtype=np.complex128)
        M = self._mono_table(Z)
        return (self.W[: self.neq] @ M.T).T


@dataclass
class PolySystem:
    """A polynomial system with optional variable/parameter split and grouping.

    ``var_cols`` are the tracked unknowns, ``param_cols`` extra columns holding
    per-query constants.  ``group1``/``group2`` define the two-homogeneous
    structure used for start systems (group2 is projective); ``chart_row``
    indexes the affine normalization row appended for projective groups.
    """

    polys: List[Poly]
    ncols: int
    var_cols: List[int] = field(default_factory=list)
    param_cols: List[int] = field(default_factory=list)
    group1: List[int] = field(default_factory=list)
    group2: List[int] = field(default_factory=list)
    chart_row: Optional[int] = None
    label: str = ""
    meta: dict = field(default_factory=dict)
    _compiled: Optional[CompiledSystem] = None

    def __post_init__(self):
        if not self.var_cols:
            self.var_cols = list(range(self.ncols))

    @property
    def nvars(self) -> int:
        return len(self.var_cols)

    @property
    def num_vars(self) -> int:
        return self.nvars

    @property
    def neq(self) -> int:
        return len(self.polys)

    def compiled(self) -> CompiledSystem:
        if self._compiled is None:
            self._compiled = CompiledSystem(self.polys, self.ncols)
        return self._compiled

    def degrees(self) -> List[int]:
        return [p.degree_in(self.var_cols) for p in self.polys]

    def bidegrees(self) -> List[Tuple[int, int]]:
        return [
            (p.degree_in(self.group1), p.degree_in(self.group2)) for p in self.polys
        ]

    def assemble(self, Z: np.ndarray, params: Optional[np.ndarray] = None) -> np.ndarray:
        """Stack variable and parameter blocks into full column vectors."""
        B = Z.shape[0]
        full = np.zeros((B, self.ncols), dtype=np.complex128)
        full[:, self.var_cols] = Z
        if self.param_cols:
            if params is None:
                raise ValueError(f"system {self.label!r} requires parameters")
            params = np.asarray(params, dtype=np.complex128)
            if params.ndim == 1:
                params = np.broadcast_to(params, (B, len(self.param_cols)))
            full[:, self.param_cols] = params
        return full

    def evaluate(self, Z, params=None) -> np.ndarray:
        """Values at one point or a batch of points."""
        Z = np.asarray(Z, dtype=np.complex128)
        single = Z.ndim == 1
        full = self.assemble(np.atleast_2d(Z), params)
        vals = self.compiled().eval_values(full)
        return vals[0] if single else vals

    def jacobian(self, Z, params=None):
        """Jacobian with respect to the variable columns."""
        Z = np.asarray(Z, dtype=np.complex128)
        single = Z.ndim == 1
        full = self.assemble(np.atleast_2d(Z), params)
        _, jac = self.compiled().eval_all(full)
        jac = jac[:, :, self.var_cols]
        return jac[0] if single else jac

    def eval_and_jac(self, Zfull: np.ndarray):
        vals, jac = self.compiled().eval_all(Zfull)
        return vals, jac[:, :, self.var_cols], jac[:, :, self.param_cols]


def export_text(sys: PolySystem, names: Optional[Sequence[str]] = None) -> str:
    """Plain-text form, one polynomial per line, terms as coeff*monomial.

    Format: ``<re> <im> x<i>^<e> ...`` factors joined by ``*``, terms joined
    by `` + ``; complex coefficients render as ``(re+imj)``.
    """
    if names is None:
        names = [f"x{i}" for i in range(sys.ncols)]
    lines = []
    for p in sys.polys:
        parts = []
        for e, c in sorted(p.terms.items()):
            factors = []
            if c.imag == 0:
                factors.append(repr(c.real))
            else:
                factors.append(f"({c.real!r}{c.imag:+}j)")
            for i, exp in enumerate(e):
                if exp == 1:
                    factors.append(names[i])
                elif exp > 1:
                    factors.append(f"{names[i]}^{exp}")
            parts.append("*".join(factors))
        lines.append(" + ".join(parts) if parts else "0.0")
    return "\n".join(lines) + "\n"


# column order of the ambient configuration variables
Z_NAMES = ("x", "y", "cphi", "sphi", "cpsi", "spsi")


def _geometry_polys(d: CanonicalDesign):
    """Coupler-chain vectors as degree-1 polynomials in the six z variables."""
    n = 6
    x, y = Poly.var(n, 0), Poly.var(n, 1)
    cphi, sphi = Poly.var(n, 2), Poly.var(n, 3)
    cpsi, spsi = Poly.var(n, 4), Poly.var(n, 5)
    PCx = x - d.l1 * cphi
    PCy = y - d.l1 * sphi
    DCx = Poly.const(n, d.b_x) + d.l3 * cpsi - d.l1 * cphi
    DCy = d.l3 * spsi - d.l1 * sphi
    # u_num = R (P - C) with R = [[p, q], [-q, p]]; F = C + l2 u_num / rho^2
    UNx = d.p * PCx + d.q * PCy
    UNy = -d.q * PCx + d.p * PCy
    return PCx, PCy, DCx, DCy, UNx, UNy


def build_F(d: CanonicalDesign) -> PolySystem:
    """Closure system of the configuration manifold: four polynomials in z."""
    n = 6
    rho_sq = d.p**2 + d.q**2
    PCx, PCy, DCx, DCy, UNx, UNy = _geometry_polys(d)
    F1 = reduce_trig_squares(PCx * PCx + PCy * PCy - rho_sq).prune()
    F2 = (
        rho_sq * (DCx * DCx + DCy * DCy - d.l4**2)
        - 2.0 * d.l2 * (DCx * UNx + DCy * UNy)
        + d.l2**2 * (PCx * PCx + PCy * PCy)
    )
    F2 = reduce_trig_squares(F2).prune()
    cphi, sphi = Poly.var(n, 2), Poly.var(n, 3)
    cpsi, spsi = Poly.var(n, 4), Poly.var(n, 5)
    F3 = cphi * cphi + sphi * sphi - 1.0
    F4 = cpsi * cpsi + spsi * spsi - 1.0
    return PolySystem(
        polys=[F1, F2, F3, F4],
        ncols=n,
        label="closure",
        meta={"ambient_dim": 6, "manifold_dim": 2, "design": d},
    )


def build_g(d: CanonicalDesign) -> PolySystem:
    """Input-singularity polynomial: det of the (x, y) block of dF."""
    F = build_F(d)
    F1, F2 = F.polys[0], F.polys[1]
    g = F1.diff(0) * F2.diff(1) - F1.diff(1) * F2.diff(0)
    g = reduce_trig_squares(g).prune()
    return PolySystem(polys=[g], ncols=6, label="input-singularity", meta={"design": d})


def build_h_polys(d: CanonicalDesign) -> PolySystem:
    """Output-singularity collinearity polynomials h1 and h2 (h2 scaled by rho^2)."""
    n = 6
    x, y = Poly.var(n, 0), Poly.var(n, 1)
    cphi, sphi = Poly.var(n, 2), Poly.var(n, 3)
    cpsi, spsi = Poly.var(n, 4), Poly.var(n, 5)
    rho_sq = d.p**2 + d.q**2
    h1 = d.l1 * (cphi * y - sphi * x)
    PCx, PCy, DCx, DCy, UNx, UNy = _geometry_polys(d)
    # rho^2 (F - D) = rho^2 (C - D) + l2 u_num
    FDx = -rho_sq * DCx + d.l2 * UNx
    FDy = -rho_sq * DCy + d.l2 * UNy
    h2 = d.l3 * (cpsi * FDy - spsi * FDx)
    return PolySystem(
        polys=[reduce_trig_squares(h1).prune(), reduce_trig_squares(h2).prune()],
        ncols=6,
        label="output-singularity",
        meta={"design": d, "h2_scale": rho_sq},
    )


@dataclass
class FritzJohnSystem:
    """Stationarity systems for the distance from a segment to the singularity curve.

    ``point0``/``point1`` solve the distance from a fixed endpoint (parameters:
    the endpoint, 6 values).  ``interior`` solves the perpendicular-foot
    problem on the open segment (parameters: both endpoints, 12 values).
    ``full`` carries the complete system with slackness multipliers; its two
    variable groups (unknowns, multipliers) give the two-homogeneous counts.
    """

    design: CanonicalDesign
    full: PolySystem
    point0: PolySystem
    point1: PolySystem
    interior: PolySystem
    chart: np.ndarray

    def subsystems(self):
        return {"t0": self.point0, "t1": self.point1, "interior": self.interior}


def _stationarity_rows(gradF, gradg, lam_cols, obj_grad, n):
    """Rows lam0 * d(obj) + sum_i lam_i dF_i + lam_g dg per w component."""
    rows = []
    for j in range(6):
        row = Poly.var(n, lam_cols[0]) * obj_grad[j]
        for i in range(4):
            row = row + Poly.var(n, lam_cols[1 + i]) * gradF[i][j]
        row = row + Poly.var(n, lam_cols[5]) * gradg[j]
        rows.append(row.prune())
    return rows


def build_fritz_john(d: CanonicalDesign, chart_seed: int = 0) -> FritzJohnSystem:
    """First-order stationarity systems with a generic affine multiplier chart."""
    F = build_F(d)
    g = build_g(d).polys[0]
    rng = np.random.default_rng(np.random.SeedSequence([chart_seed, 0x5FB]))
    chart = rng.normal(size=8) + 1j * rng.normal(size=8)
    chart /= np.linalg.norm(chart)

    gradF6 = [[F.polys[i].diff(j) for j in range(6)] for i in range(4)]
    gradg6 = [g.diff(j) for j in range(6)]

    def embed_all(n):
        col = list(range(6))
        gf = [[pij.embed(n, col) for pij in row] for row in gradF6]
        gg = [pj.embed(n, col) for pj in gradg6]
        Fw = [p.embed(n, col) for p in F.polys]
        gw = g.embed(n, col)
        return Fw, gw, gf, gg

    def chart_poly(n, lam_cols):
        out = Poly.const(n, -1.0)
        for k, ccol in enumerate(lam_cols):
            out = out + Poly.var(n, ccol, chart[k])
        return out

    # endpoint problem: vars w(6), lam(6); params c(6)
    def endpoint_system(label):
        n = 18
        lam_cols = list(range(6, 12))
        c_cols = list(range(12, 18))
        Fw, gw, gf, gg = embed_all(n)
        obj_grad = [2.0 * (Poly.var(n, j) - Poly.var(n, c_cols[j])) for j in range(6)]
        rows = Fw + [gw] + _stationarity_rows(gf, gg, lam_cols, obj_grad, n)
        rows.append(chart_poly(n, lam_cols))
        return PolySystem(
            polys=rows,
            ncols=n,
            var_cols=list(range(12)),
            param_cols=c_cols,
            group1=list(range(6)),
            group2=lam_cols,
            chart_row=len(rows) - 1,
            label=label,
        )

    point0 = endpoint_system("stationarity-endpoint-0")
    point1 = endpoint_system("stationarity-endpoint-1")

    # interior problem: vars w(6), t, lam(6); params c0(6), c1(6)
    n = 25
    t_col = 6
    lam_cols = list(range(7, 13))
    c0_cols = list(range(13, 19))
    c1_cols = list(range(19, 25))
    Fw, gw, gf, gg = embed_all(n)
    t = Poly.var(n, t_col)
    seg = [
        Poly.var(n, c0_cols[j]) + t * (Poly.var(n, c1_cols[j]) - Poly.var(n, c0_cols[j]))
        for j in range(6)
    ]
    obj_grad = [2.0 * (Poly.var(n, j) - seg[j]) for j in range(6)]
    rows = Fw + [gw] + _stationarity_rows(gf, gg, lam_cols, obj_grad, n)
    s_t = Poly(n)
    for j in range(6):
        s_t = s_t + (seg[j] - Poly.var(n, j)) * (
            Poly.var(n, c1_cols[j]) - Poly.var(n, c0_cols[j])
        )
    rows.append((2.0 * Poly.var(n, lam_cols[0]) * s_t).prune())
    rows.append(chart_poly(n, lam_cols))
    interior = PolySystem(
        polys=rows,
        ncols=n,
        var_cols=list(range(13)),
        param_cols=c0_cols + c1_cols,
        group1=list(range(7)),
        group2=lam_cols,
        chart_row=len(rows) - 1,
        label="stationarity-interior",
    )

    # full problem with slackness multipliers: vars w(6), t, lam(8)
    n = 27
    t_col = 6
    lam_cols = list(range(7, 15))
    c0_cols = list(range(15, 21))
    c1_cols = list(range(21, 27))
    Fw, gw, gf, gg = embed_all(n)
    t = Poly.var(n, t_col)
    seg = [
        Poly.var(n, c0_cols[j]) + t * (Poly.var(n, c1_cols[j]) - Poly.var(n, c0_cols[j]))
        for j in range(6)
    ]
    obj_grad = [2.0 * (Poly.var(n, j) - seg[j]) for j in range(6)]
    rows = Fw + [gw] + _stationarity_rows(gf, gg, lam_cols, obj_grad, n)
    s_t = Poly(n)
    for j in range(6):
        s_t = s_t + (seg[j] - Poly.var(n, j)) * (
            Poly.var(n, c1_cols[j]) - Poly.var(n, c0_cols[j])
        )
    s_t = 2.0 * Poly.var(n, lam_cols[0]) * s_t + Poly.var(n, lam_cols[6]) - Poly.var(n, lam_cols[7])
    rows.append(s_t.prune())
    rows.append((Poly.var(n, lam_cols[6]) * t).prune())
    rows.append((Poly.var(n, lam_cols[7]) * (1.0 - t)).prune())
    out = Poly.const(n, -1.0)
    for k, ccol in enumerate(lam_cols):
        out = out + Poly.var(n, ccol, chart[k])
    rows.append(out)
    full = PolySystem(
        polys=rows,
        ncols=n,
        var_cols=list(range(15)),
        param_cols=c0_cols + c1_cols,
        group1=list(range(7)),
        group2=lam_cols,
        chart_row=len(rows) - 1,
        label="stationarity-full",
    )
    return FritzJohnSystem(
        design=d, full=full, point0=point0, point1=point1, interior=interior, chart=chart
    )


def multihomogeneous_bezout(sys: PolySystem) -> int:
    """Two-group Bezout bound, computed combinatorially.

    Equals the permanent of the degree matrix with group-1 columns repeated
    dim(group1) times and group-2 columns dim(group2) times, evaluated as the
    coefficient of a^dim1 b^dim2 in the product of (d1_i a + d2_i b).
    """
    if not sys.group1 or not sys.group2:
        raise ValueError("system carries no two-group structure")
    n1 = len(sys.group1)
    n2 = len(sys.group2) - 1  # projective group: one chart normalization
    rows = [i for i in range(sys.neq) if i != sys.chart_row]
    if len(rows) != n1 + n2:
        raise ValueError(f"system is not square: {len(rows)} equations, {n1 + n2} unknowns")
    coeffs = np.zeros(n2 + 2, dtype=object)
    coeffs[0] = 1
    for i in rows:
        d1 = sys.polys[i].degree_in(sys.group1)
        d2 = sys.polys[i].degree_in(sys.group2)
        nxt = np.zeros_like(coeffs)
        nxt[:] = coeffs * d1
        nxt[1:] += coeffs[:-1] * d2
        coeffs = nxt
    return int(coeffs[n2])
