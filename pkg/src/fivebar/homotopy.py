"""Predictor-corrector polynomial homotopy continuation.

Paths of H(z, s) = 0 are advanced from s = 0 to s = 1 by a fourth-order
Runge-Kutta predictor on dz/ds = -(dH/dz)^{-1} dH/ds followed by a Newton
corrector, with per-path adaptive steps.  All paths of a batch march
together through stacked linear algebra, so tracking thousands of paths
costs a few dense matrix operations per step.  Start systems cover the
classical total-degree construction and a linear-product construction for
systems with a two-group (affine x projective) structure.  There is no
singular endgame: only endpoints where Newton converges and the Jacobian is
well conditioned count as finite nonsingular solutions.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fivebar.polysys import Poly, PolySystem
from fivebar import serialize

STATUS_SUCCESS = 1
STATUS_DIVERGED = 2
STATUS_FAILED = 3
_STATUS_NAMES = {1: "success", 2: "diverged", 3: "failed"}


class HomotopyError(Exception):
    pass


class UnhealthyStartError(HomotopyError):
    """Ab initio solve lost too many paths; carries the tracking diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrackerSettings:
    initial_step: float = 0.05
    min_step: float = 1e-10
    max_step: float = 0.25
    corrector_tol: float = 1e-10
    max_corrector_iters: int = 3
    divergence_norm: float = 1e8
    endpoint_tol: float = 1e-9
    singular_rcond: float = 1e-8
    dedup_radius: float = 1e-6
    max_steps: int = 4000
    grow_after: int = 3

    def __post_init__(self):
        if not (0 < self.min_step <= self.initial_step):
            raise ValueError("need 0 < min_step <= initial_step")
        if self.corrector_tol <= 0 or self.endpoint_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class TrackedSolution:
    point: np.ndarray
    status: str
    residual: float
    singular: bool
    start_index: int


@dataclass
class TrackResult:
    """Record of every tracked path; one entry per start solution, always."""

    points: np.ndarray      # (B, k) endpoint (or last iterate)
    status: np.ndarray      # (B,) int8, see _STATUS_NAMES
    residual: np.ndarray    # (B,) endpoint residual, inf-norm
    singular: np.ndarray    # (B,) bool, endpoint Jacobian badly conditioned
    steps: np.ndarray       # (B,) accepted predictor-corrector steps
    s_final: np.ndarray     # (B,) homotopy time reached

    @property
    def n_paths(self) -> int:
        return self.points.shape[0]

    def solution(self, i: int) -> TrackedSolution:
        return TrackedSolution(
            point=self.points[i].copy(),
            status=_STATUS_NAMES[int(self.status[i])],
            residual=float(self.residual[i]),
            singular=bool(self.singular[i]),
            start_index=i,
        )

    def counts(self) -> Dict[str, int]:
        return {
            "paths": int(self.n_paths),
            "success": int(np.sum(self.status == STATUS_SUCCESS)),
            "diverged": int(np.sum(self.status == STATUS_DIVERGED)),
            "failed": int(np.sum(self.status == STATUS_FAILED)),
            "singular": int(np.sum((self.status == STATUS_SUCCESS) & self.singular)),
        }

    def nonsingular_points(self) -> np.ndarray:
        keep = (self.status == STATUS_SUCCESS) & ~self.singular
        return self.points[keep]


def merge_results(parts: Sequence[TrackResult]) -> TrackResult:
    return TrackResult(
        points=np.concatenate([p.points for p in parts]),
        status=np.concatenate([p.status for p in parts]),
        residual=np.concatenate([p.residual for p in parts]),
        singular=np.concatenate([p.singular for p in parts]),
        steps=np.concatenate([p.steps for p in parts]),
        s_final=np.concatenate([p.s_final for p in parts]),
    )


class LinearHomotopy:
    """H(z, s) = (1 - s) * gamma * G(z) + s * F(z) with fixed parameters.

    Start and target compile into one stacked evaluator so each call builds a
    single monomial table.
    """

    def __init__(self, G: PolySystem, F: PolySystem, gamma: complex, params=None):
        if G.ncols != F.ncols or G.nvars != F.nvars:
            raise ValueError("start and target systems must share a column layout")
        self.F, self.gamma = F, gamma
        self.params = None if params is None else np.asarray(params, dtype=np.complex128)
        self.k = F.nvars
        from fivebar.polysys import CompiledSystem

        self._pair = CompiledSystem(list(G.polys) + list(F.polys), F.ncols)
        self._m = len(F.polys)

    def eval_jac(self, Z, s, idx=None):
        full = self.F.assemble(Z, self.params)
        vals2, jac2 = self._pair.eval_all(full)
        m = self._m
        vG, vF = vals2[:, :m], vals2[:, m:]
        jG = jac2[:, :m, :][:, :, self.F.var_cols]
        jF = jac2[:, m:, :][:, :, self.F.var_cols]
        a = (self.gamma * (1.0 - s))[:, None]
        b = s[:, None]
        vals = a * vG + b * vF
        jac = a[:, :, None] * jG + b[:, :, None] * jF
        hs = vF - self.gamma * vG
        return vals, jac, hs


class ParameterHomotopy:
    """H(z, s) = F(z; (1 - s) p0 + s p1) with per-path target parameters."""

    def __init__(self, F: PolySystem, p_start, p_target):
        self.F = F
        self.p0 = np.asarray(p_start, dtype=np.complex128)
        self.p1 = np.asarray(p_target, dtype=np.complex128)
        self.k = F.nvars

    def _params_at(self, s, n):
        p1 = self.p1 if self.p1.ndim == 2 else np.broadcast_to(self.p1, (n, self.p1.size))
        return (1.0 - s)[:, None] * self.p0[None, :] + s[:, None] * p1

    def target_for(self, idx):
        if self.p1.ndim == 2:
            return self.p1[idx]
        return np.broadcast_to(self.p1, (idx.size, self.p1.size))

    def subset(self, idx):
        sub = ParameterHomotopy.__new__(ParameterHomotopy)
        sub.F = self.F
        sub.p0 = self.p0
        sub.p1 = self.p1[idx] if self.p1.ndim == 2 else self.p1
        sub.k = self.k
        return sub

    def eval_jac(self, Z, s, idx=None):
        if self.p1.ndim == 2:
            p1 = self.p1 if idx is None else self.p1[idx]
        else:
            p1 = np.broadcast_to(self.p1, (Z.shape[0], self.p1.size))
        P = (1.0 - s)[:, None] * self.p0[None, :] + s[:, None] * p1
        full = self.F.assemble(Z, P)
        vals, jac, jp = self.F.eval_and_jac(full)
        hs = np.einsum("bkp,bp->bk", jp, p1 - self.p0[None, :])
        return vals, jac, hs


def _stack_solve(A: np.ndarray, B: np.ndarray):
    """Solve stacked square systems; returns (X, ok) and never raises."""
    try:
        X = np.linalg.solve(A, B[..., None])[..., 0]
        ok = np.all(np.isfinite(X), axis=-1)
        return X, ok
    except np.linalg.LinAlgError:
        n = A.shape[0]
        X = np.zeros_like(B)
        ok = np.zeros(n, dtype=bool)
        for i in range(n):
            try:
                X[i] = np.linalg.solve(A[i], B[i])
                ok[i] = np.all(np.isfinite(X[i]))
            except np.linalg.LinAlgError:
                ok[i] = False
        return X, ok


def _inf_norm(Z: np.ndarray) -> np.ndarray:
    return np.max(np.abs(Z), axis=-1) if Z.size else np.zeros(Z.shape[0])


class _IndexedHom:
    """View of a homotopy under an index mapping, for compacted tails."""

    def __init__(self, hom, mapping):
        self._hom = hom
        self._map = mapping
        self.k = hom.k

    def eval_jac(self, Z, s, idx=None):
        sub = self._map if idx is None else self._map[idx]
        return self._hom.eval_jac(Z, s, sub)


def _track_block(hom, Z0: np.ndarray, st: TrackerSettings, state=None) -> TrackResult:
    B, k = Z0.shape
    if state is None:
        Z = np.array(Z0, dtype=np.complex128)
        s = np.zeros(B)
        h = np.full(B, st.initial_step)
        status = np.zeros(B, dtype=np.int8)
        consec = np.zeros(B, dtype=np.int32)
        steps = np.zeros(B, dtype=np.int32)
        attempts = np.zeros(B, dtype=np.int32)
    else:
        Z, s, h, status, consec, steps, attempts = state

    active = np.zeros(B, dtype=bool)
    active[status == 0] = True
    compact_done = state is not None
    while np.any(active):
        # once most paths finish, restart the stragglers as a dense block so
        # the stepping loop stops paying full-batch gather costs
        n_active = int(active.sum())
        if not compact_done and B >= 512 and n_active <= B // 8:
            sub = np.flatnonzero(active)
            sub_hom = _IndexedHom(hom, sub)
            part = _track_block(
                sub_hom, Z[sub], st,
                state=(Z[sub].copy(), s[sub].copy(), h[sub].copy(),
                       status[sub].copy(), consec[sub].copy(),
                       steps[sub].copy(), attempts[sub].copy()),
            )
            Z[sub] = part.points
            status[sub] = part.status
            steps[sub] = part.steps
            s[sub] = part.s_final
            active[:] = False
            # endpoint data already classified in the sub-block
            residual = np.full(B, np.inf)
            singular = np.zeros(B, dtype=bool)
            residual[sub] = part.residual
            singular[sub] = part.singular
            done_mask = np.ones(B, dtype=bool)
            done_mask[sub] = False
            fin = np.flatnonzero(done_mask & (status == STATUS_SUCCESS))
            if fin.size:
                res_f, sing_f = _classify_endpoints(hom, Z, fin, st)
                residual[fin] = res_f
                singular[fin] = sing_f
                bad = res_f > st.endpoint_tol
                blown = _inf_norm(Z[fin]) > st.divergence_norm
                status[fin[blown]] = STATUS_DIVERGED
                status[fin[bad & ~blown]] = STATUS_FAILED
            return TrackResult(points=Z, status=status, residual=residual,
                               singular=singular, steps=steps, s_final=s)
        idx = np.flatnonzero(active)
        attempts[idx] += 1
        over = attempts[idx] > st.max_steps
        if np.any(over):
            bad = idx[over]
            status[bad] = STATUS_FAILED
            active[bad] = False
            idx = idx[~over]
            if idx.size == 0:
                continue
        hi = np.minimum(h[idx], 1.0 - s[idx])
        Zi, si = Z[idx], s[idx]

        ok = np.ones(idx.size, dtype=bool)

        def _dz(Zc, sc):
            vals, jac, hs = hom.eval_jac(Zc, sc, idx)
            return _stack_solve(jac, -hs)

        k1, ok1 = _dz(Zi, si)
        k2, ok2 = _dz(Zi + 0.5 * hi[:, None] * k1, si + 0.5 * hi)
        k3, ok3 = _dz(Zi + 0.5 * hi[:, None] * k2, si + 0.5 * hi)
        k4, ok4 = _dz(Zi + hi[:, None] * k3, si + hi)
        ok = ok1 & ok2 & ok3 & ok4
        Zp = Zi + (hi[:, None] / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Zp[~ok] = Zi[~ok]

        # Newton corrector at s + h
        Zc = Zp.copy()
        conv = np.zeros(idx.size, dtype=bool)
        live = ok.copy()
        for _ in range(st.max_corrector_iters):
            lidx = np.flatnonzero(live)
            if lidx.size == 0:
                break
            vals, jac, _ = hom.eval_jac(Zc[lidx], (si + hi)[lidx], idx[lidx])
            delta, solved = _stack_solve(jac, -vals)
            Zc[lidx] += np.where(solved[:, None], delta, 0.0)
            dn = _inf_norm(delta)
            zn = _inf_norm(Zc[lidx])
            done = solved & (dn <= st.corrector_tol * (1.0 + zn))
            conv[lidx[done]] = True
            live[lidx[done]] = False
            live[lidx[~solved]] = False

        # guard against wild corrections (path jumping)
        corr = _inf_norm(Zc - Zp)
        conv &= corr <= 0.25 * (1.0 + _inf_norm(Zp))
        conv &= np.all(np.isfinite(Zc), axis=-1)

        gidx = idx[conv]
        if gidx.size:
            Z[gidx] = Zc[conv]
            s[gidx] = si[conv] + hi[conv]
            steps[gidx] += 1
            consec[gidx] += 1
            grow = consec[gidx] >= st.grow_after
            if np.any(grow):
                gg = gidx[grow]
                h[gg] = np.minimum(h[gg] * 2.0, st.max_step)
                consec[gg] = 0
        bidx = idx[~conv]
        if bidx.size:
            h[bidx] = hi[~conv] * 0.5
            consec[bidx] = 0

        # divergence and step underflow
        zn_all = _inf_norm(Z[idx])
        div = zn_all > st.divergence_norm
        if np.any(div):
            dd = idx[div]
            status[dd] = STATUS_DIVERGED
            active[dd] = False
        # paths already blowing up in norm get a step floor relative to the
        # remaining arc, so escapes to infinity stop bouncing just below s = 1
        # (truncation in lieu of an endgame; finite endpoints keep min_step)
        big = zn_all > 1e4
        floor = np.where(big, np.maximum(st.min_step, 0.02 * (1.0 - s[idx])), st.min_step)
        under = (h[idx] < floor) & active[idx]
        if np.any(under):
            uu = idx[under]
            near_end = s[uu] > 0.9
            status[uu] = np.where(near_end, STATUS_DIVERGED, STATUS_FAILED)
            active[uu] = False

        arrived = active[idx] & (s[idx] >= 1.0 - 1e-14)
        if np.any(arrived):
            active[idx[arrived]] = False
            status[idx[arrived]] = STATUS_SUCCESS  # provisional, refined below

    # endpoint polish and classification
    residual = np.full(B, np.inf)
    singular = np.zeros(B, dtype=bool)
    fin = np.flatnonzero(status == STATUS_SUCCESS)
    if fin.size:
        res_f, sing_f = _classify_endpoints(hom, Z, fin, st)
        residual[fin] = res_f
        singular[fin] = sing_f
        bad = res_f > st.endpoint_tol
        blown = _inf_norm(Z[fin]) > st.divergence_norm
        status[fin[blown]] = STATUS_DIVERGED
        status[fin[bad & ~blown]] = STATUS_FAILED

    return TrackResult(
        points=Z, status=status, residual=residual, singular=singular,
        steps=steps, s_final=s,
    )


def _classify_endpoints(hom, Z, fin, st):
    """Newton-polish endpoints at s = 1 in place; return residuals and flags."""
    Zf = Z[fin]
    ones = np.ones(fin.size)
    best = None
    for _ in range(8):
        vals, jac, _ = hom.eval_jac(Zf, ones, fin)
        res = _inf_norm(vals)
        if best is None:
            best = (Zf.copy(), res.copy())
        else:
            better = res < best[1]
            best[0][better] = Zf[better]
            best[1][better] = res[better]
        if np.all(best[1] <= st.endpoint_tol * 0.01):
            break
        delta, solved = _stack_solve(jac, -vals)
        Zf = Zf + np.where(solved[:, None], delta, 0.0)
    vals, jac, _ = hom.eval_jac(Zf, ones, fin)
    res = _inf_norm(vals)
    better = res < best[1]
    best[0][better] = Zf[better]
    best[1][better] = res[better]
    Zf, res = best
    Z[fin] = Zf

    singular = np.zeros(fin.size, dtype=bool)
    good = (res <= st.endpoint_tol) & (_inf_norm(Zf) <= st.divergence_norm)
    keep = np.flatnonzero(good)
    if keep.size:
        _, jacK, _ = hom.eval_jac(Z[fin[keep]], np.ones(keep.size), fin[keep])
        sv = np.linalg.svd(jacK, compute_uv=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            rc = sv[:, -1] / sv[:, 0]
        singular[keep] = ~np.isfinite(rc) | (rc < st.singular_rcond)
    return res, singular


def track_paths(hom, Z0: np.ndarray, settings: Optional[TrackerSettings] = None,
                workers: int = 1, chunk: int = 8192) -> TrackResult:
    """Track every row of Z0 from s=0 to s=1; results keep start order."""
    st = settings or TrackerSettings()
    Z0 = np.atleast_2d(np.asarray(Z0, dtype=np.complex128))
    B = Z0.shape[0]
    if B == 0:
        return TrackResult(Z0, np.zeros(0, np.int8), np.zeros(0), np.zeros(0, bool),
                           np.zeros(0, np.int32), np.zeros(0))
    bounds = [(i, min(i + chunk, B)) for i in range(0, B, chunk)]
    if workers <= 1 or len(bounds) == 1:
        parts = [_track_block(_sub_hom(hom, lo, hi), Z0[lo:hi], st) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_track_block, _sub_hom(hom, lo, hi), Z0[lo:hi], st)
                    for lo, hi in bounds]
            parts = [f.result() for f in futs]
    return merge_results(parts)


def _sub_hom(hom, lo, hi):
    if isinstance(hom, ParameterHomotopy) and hom.p1.ndim == 2:
        return hom.subset(np.arange(lo, hi))
    return hom


def dedup_points(points: np.ndarray, radius: float) -> np.ndarray:
    """Indices of representatives, first occurrence wins."""
    keep: List[int] = []
    for i in range(points.shape[0]):
        p = points[i]
        dup = False
        for j in keep:
            if np.max(np.abs(points[j] - p)) < radius:
                dup = True
                break
        if not dup:
            keep.append(i)
    return np.array(keep, dtype=int)


@dataclass
class StartSet:
    """Solutions of one system at generic parameters, reusable as homotopy starts."""

    label: str
    solutions: np.ndarray
    params: np.ndarray
    gamma: complex
    seed: int
    counts: Dict[str, int]
    system_label: str = ""
    design_fingerprint: str = ""

    @property
    def n_solutions(self) -> int:
        return self.solutions.shape[0]


def _roots_of_unity(d: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(d) / d)


def solve_total_degree(sys: PolySystem, settings: Optional[TrackerSettings] = None,
                       seed: int = 0, params=None, workers: int = 1):
    """Solve a square system by continuation from x_i^{d_i} - 1 = 0.

    Returns (points, result): deduplicated finite nonsingular endpoints plus
    the full per-path diagnostics.
    """
    st = settings or TrackerSettings()
    degrees = sys.degrees()
    if sys.neq != sys.nvars:
        raise ValueError(f"system is not square: {sys.neq} equations, {sys.nvars} unknowns")
    if any(d < 1 for d in degrees):
        raise ValueError("total-degree start needs every equation nonconstant")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7D]))
    gamma = complex(np.exp(2j * np.pi * rng.uniform()))
    gpolys = []
    for i, d in enumerate(degrees):
        e0 = [0] * sys.ncols
        e0[sys.var_cols[i]] = d
        gpolys.append(Poly(sys.ncols, {tuple(e0): 1.0, (0,) * sys.ncols: -1.0}))
    G = PolySystem(polys=gpolys, ncols=sys.ncols, var_cols=list(sys.var_cols),
                   param_cols=[], label="total-degree-start")
    grids = np.meshgrid(*[_roots_of_unity(d) for d in degrees], indexing="ij")
    starts = np.column_stack([g.ravel() for g in grids])
    hom = LinearHomotopy(G, sys, gamma, params=params)
    res = track_paths(hom, starts, st, workers=workers)
    pts = res.nonsingular_points()
    pts = pts[dedup_points(pts, st.dedup_radius)]
    return pts, res


def _linear_product_start(sys: PolySystem, rng):
    """Linear-product start system and start solutions for a two-group system.

    Every non-chart equation of bidegree (d1, d2) becomes a product of d1
    random affine forms in the first group and d2 random linear forms in the
    projective second group.  Start solutions pick one vanishing factor per
    equation with exactly dim(group1) picks in group 1; each pick pattern
    yields one solution of two decoupled linear systems.
    """
    from itertools import combinations, product

    n1 = len(sys.group1)
    nl = len(sys.group2)
    rows = [i for i in range(sys.neq) if i != sys.chart_row]
    chart = sys.polys[sys.chart_row]
    bid = [(sys.polys[i].degree_in(sys.group1), sys.polys[i].degree_in(sys.group2))
           for i in rows]

    def rand_vec(m):
        return rng.normal(size=m) + 1j * rng.normal(size=m)

    factors1, factors2 = [], []
    gpolys_by_row = {}
    for (i, (d1, d2)) in zip(rows, bid):
        f1 = [(rand_vec(n1), complex(*rng.normal(size=2))) for _ in range(d1)]
        f2 = [rand_vec(nl) for _ in range(d2)]
        factors1.append(f1)
        factors2.append(f2)
        prod_poly = Poly.const(sys.ncols, 1.0)
        for coeffs, const in f1:
            lin = Poly.const(sys.ncols, const)
            for c, col in zip(coeffs, sys.group1):
                lin = lin + Poly.var(sys.ncols, col, c)
            prod_poly = prod_poly * lin
        for coeffs in f2:
            lin = Poly(sys.ncols)
            for c, col in zip(coeffs, sys.group2):
                lin = lin + Poly.var(sys.ncols, col, c)
            prod_poly = prod_poly * lin
        gpolys_by_row[i] = prod_poly

    gpolys = []
    for i in range(sys.neq):
        gpolys.append(chart.copy() if i == sys.chart_row else gpolys_by_row[i])
    G = PolySystem(polys=gpolys, ncols=sys.ncols, var_cols=list(sys.var_cols),
                   param_cols=list(sys.param_cols), group1=list(sys.group1),
                   group2=list(sys.group2), chart_row=sys.chart_row,
                   label="linear-product-start")

    pure1 = [j for j, (d1, d2) in enumerate(bid) if d2 == 0]
    mixed = [j for j, (d1, d2) in enumerate(bid) if d1 > 0 and d2 > 0]
    pure2 = [j for j, (d1, d2) in enumerate(bid) if d1 == 0]
    if any(bid[j] != (1, 1) for j in mixed):
        raise HomotopyError("linear-product start implemented for (d,0)/(1,1)/(0,d) rows")
    take1 = n1 - len(pure1)
    if take1 < 0 or take1 > len(mixed):
        raise HomotopyError("group dimensions inconsistent with bidegrees")

    chart_coeffs = np.zeros(nl, dtype=np.complex128)
    for e, c in chart.terms.items():
        for kk, col in enumerate(sys.group2):
            if e[col] == 1:
                chart_coeffs[kk] = c

    starts = []
    k_total = len(sys.var_cols)
    g1_pos = {col: a for a, col in enumerate(sys.group1)}
    g2_pos = {col: a for a, col in enumerate(sys.group2)}
    var_pos = {col: a for a, col in enumerate(sys.var_cols)}
    for S in combinations(mixed, len(mixed) - take1):
        Sset = set(S)  # mixed rows taking their group-2 factor
        # group-2 linear system: chosen factors plus the chart row
        A2 = np.zeros((nl, nl), dtype=np.complex128)
        b2 = np.zeros(nl, dtype=np.complex128)
        for r, j in enumerate(sorted(Sset)):
            A2[r] = factors2[j][0]
        A2[-1] = chart_coeffs
        b2[-1] = 1.0
        try:
            lam = np.linalg.solve(A2, b2)
        except np.linalg.LinAlgError:
            raise HomotopyError("degenerate random start factors; reseed")
        g1_rows = [j for j in range(len(rows)) if j not in Sset and bid[j][0] > 0]
        choice_lists = [range(len(factors1[j])) for j in g1_rows]
        for picks in product(*choice_lists):
            A1 = np.zeros((n1, n1), dtype=np.complex128)
            b1 = np.zeros(n1, dtype=np.complex128)
            for r, (j, pick) in enumerate(zip(g1_rows, picks)):
                coeffs, const = factors1[j][pick]
                A1[r] = coeffs
                b1[r] = -const
            w = np.linalg.solve(A1, b1)
            z = np.zeros(k_total, dtype=np.complex128)
            for col, a in g1_pos.items():
                z[var_pos[col]] = w[a]
            for col, a in g2_pos.items():
                z[var_pos[col]] = lam[a]
            starts.append(z)
    return G, np.array(starts)


def solve_two_homogeneous(sys: PolySystem, settings: Optional[TrackerSettings] = None,
                          seed: int = 0, params=None, workers: int = 1,
                          label: str = "") -> StartSet:
    """Ab initio solve of a two-group system via a linear-product start.

    Tracks the full two-homogeneous Bezout count of paths and returns the
    deduplicated finite nonsingular endpoints as a StartSet.  Raises
    UnhealthyStartError when more than 5 percent of paths fail outright
    (divergence to infinity is a legitimate endpoint, not a failure).
    """
    st = settings or TrackerSettings()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x24]))
    if sys.param_cols and params is None:
        params = rng.normal(size=len(sys.param_cols)) + 1j * rng.normal(size=len(sys.param_cols))
    params = None if not sys.param_cols else np.asarray(params, dtype=np.complex128)
    G, starts = _linear_product_start(sys, rng)
    gamma = complex(np.exp(2j * np.pi * rng.uniform()))
    hom = LinearHomotopy(G, sys, gamma, params=params)
    res = track_paths(hom, starts, st, workers=workers)
    counts = res.counts()
    frac = counts["failed"] / max(counts["paths"], 1)
    if frac > 0.05:
        raise UnhealthyStartError(
            f"{label or sys.label}: {counts['failed']} of {counts['paths']} paths failed",
            diagnostics=counts,
        )
    pts = res.nonsingular_points()
    pts = pts[dedup_points(pts, st.dedup_radius)]
    counts["nonsingular"] = int(pts.shape[0])
    return StartSet(
        label=label or sys.label,
        solutions=pts,
        params=params if params is not None else np.zeros(0, dtype=np.complex128),
        gamma=gamma,
        seed=seed,
        counts=counts,
        system_label=sys.label,
    )


def parameter_homotopy(sys: PolySystem, start: StartSet, target_params,
                       settings: Optional[TrackerSettings] = None,
                       workers: int = 1) -> TrackResult:
    """Deform the start solutions from generic to target parameter values."""
    st = settings or TrackerSettings()
    hom = ParameterHomotopy(sys, start.params, np.asarray(target_params, dtype=np.complex128))
    return track_paths(hom, start.solutions, st, workers=workers)


def parameter_homotopy_batch(sys: PolySystem, start: StartSet, targets: np.ndarray,
                             settings: Optional[TrackerSettings] = None,
                             workers: int = 1, chunk: int = 8192):
    """Track the start set to many real parameter targets in one stacked run.

    targets has shape (E, P).  Returns (points (E, M, k), status (E, M),
    residual (E, M)) with M = start.n_solutions.
    """
    st = settings or TrackerSettings()
    E = targets.shape[0]
    M = start.n_solutions
    k = start.solutions.shape[1]
    Z0 = np.tile(start.solutions, (E, 1))
    P1 = np.repeat(np.asarray(targets, dtype=np.complex128), M, axis=0)
    hom = ParameterHomotopy(sys, start.params, P1)
    res = track_paths(hom, Z0, st, workers=workers, chunk=chunk)
    return (
        res.points.reshape(E, M, k),
        res.status.reshape(E, M),
        res.residual.reshape(E, M),
    )


# -- start-set persistence ----------------------------------------------------

_MAGIC = "FBSTART1"
_VERSION = 1


def save_start_sets(path, sets: Dict[str, StartSet], chart: np.ndarray,
                    design_fingerprint: str):
    header = {
        "design_fingerprint": design_fingerprint,
        "labels": sorted(sets),
        "meta": {
            lbl: {
                "gamma_re": s.gamma.real, "gamma_im": s.gamma.imag,
                "seed": s.seed, "counts": s.counts,
                "system_label": s.system_label,
            }
            for lbl, s in sets.items()
        },
    }
    arrays = {"chart": np.asarray(chart, dtype=np.complex128)}
    for lbl, s in sets.items():
        arrays[f"{lbl}:solutions"] = s.solutions
        arrays[f"{lbl}:params"] = s.params
    serialize.write_container(path, _MAGIC, _VERSION, header, arrays)


def load_start_sets(path):
    header, arrays = serialize.read_container(path, _MAGIC, _VERSION)
    sets = {}
    for lbl in header["labels"]:
        m = header["meta"][lbl]
        sets[lbl] = StartSet(
            label=lbl,
            solutions=arrays[f"{lbl}:solutions"],
            params=arrays[f"{lbl}:params"],
            gamma=complex(m["gamma_re"], m["gamma_im"]),
            seed=m["seed"],
            counts={k: int(v) for k, v in m["counts"].items()},
            system_label=m.get("system_label", ""),
            design_fingerprint=header["design_fingerprint"],
        )
    return sets, arrays["chart"], header["design_fingerprint"]
