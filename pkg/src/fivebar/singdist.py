"""Exact distances from points and segments to the input-singularity curve.

The distance from the segment c(t) = (1-t) c0 + t c1 to the curve
I = {F = 0, g = 0} is the square root of the smallest objective among real
feasible critical points of the stationarity systems: two endpoint problems
(24 paths each) and one interior problem (36 paths), all solved by parameter
homotopy from cached generic start sets.  An independent oracle traces the
real curve by pseudo-arclength continuation and refines vertex minima by
Lagrange-Newton, giving a second route to the same number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from fivebar import homotopy as ht
from fivebar import model
from fivebar.cgraph import design_fingerprint
from fivebar.model import CanonicalDesign
from fivebar.polysys import (
    CompiledSystem,
    FritzJohnSystem,
    Poly,
    PolySystem,
    build_F,
    build_fritz_john,
    build_g,
)

EXPECTED_COUNTS = {"t0": 24, "t1": 24, "interior": 36}


class SingularityDistanceError(Exception):
    pass


class AbInitioError(SingularityDistanceError):
    """Generic solve did not reproduce the expected solution counts."""


@dataclass
class SegmentQuery:
    """Distance query along one segment, with per-subproblem critical points."""

    c0: np.ndarray
    c1: np.ndarray
    distance: float
    critical_points: Dict[str, list] = field(default_factory=dict)
    flagged: bool = False


def ab_initio(d: CanonicalDesign, settings: Optional[ht.TrackerSettings] = None,
              seed: int = 0, cache_path=None, fj: Optional[FritzJohnSystem] = None,
              workers: int = 1):
    """Solve the three stationarity systems at generic parameters.

    Returns (fj, {"t0": StartSet, "t1": StartSet, "interior": StartSet}); the
    counts must come out (24, 24, 36) or AbInitioError is raised with the
    tracking diagnostics.  When cache_path exists and matches the design, the
    cached sets load instead of re-solving.
    """
    fp = design_fingerprint(d)
    if fj is None:
        fj = build_fritz_john(d, chart_seed=seed)
    if cache_path is not None:
        try:
            sets, chart, cached_fp = ht.load_start_sets(cache_path)
            if cached_fp == fp and np.allclose(chart, fj.chart):
                return fj, sets
        except (FileNotFoundError, Exception):
            pass
    sets = {}
    for label, sys in fj.subsystems().items():
        ss = ht.solve_two_homogeneous(
            sys, settings=settings, seed=seed + {"t0": 0, "t1": 1, "interior": 2}[label],
            label=label, workers=workers,
        )
        ss.design_fingerprint = fp
        sets[label] = ss
        want = EXPECTED_COUNTS[label]
        if ss.n_solutions != want:
            raise AbInitioError(
                f"{label}: found {ss.n_solutions} finite nonsingular solutions, "
                f"expected {want}; diagnostics {ss.counts}"
            )
    if cache_path is not None:
        ht.save_start_sets(cache_path, sets, fj.chart, fp)
    return fj, sets


class CurveProjector:
    """Lagrange-Newton for min |w - c|^2 subject to w on the curve {F=0, g=0}."""

    def __init__(self, d: CanonicalDesign):
        F = build_F(d)
        g = build_g(d).polys[0]
        self.polys = list(F.polys) + [g]
        self.sys = PolySystem(polys=self.polys, ncols=6, label="curve")
        self.m = len(self.polys)
        grads = [p.diff(u) for p in self.polys for u in range(6)]
        self._gradsys = CompiledSystem(grads, 6)

    def _jac_hess(self, W):
        vals, jac = self._gradsys.eval_all(np.asarray(W, dtype=np.complex128))
        B = W.shape[0]
        J = vals.real.reshape(B, self.m, 6)
        H = jac.real.reshape(B, self.m, 6, 6)
        return J, H

    def solve(self, W0, C, max_iter: int = 30, tol: float = 1e-11):
        """Newton from W0 toward the stationary point nearest C.

        Returns (W, converged, distance).
        """
        W = np.atleast_2d(np.asarray(W0, dtype=float)).copy()
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[0] == 1 and W.shape[0] > 1:
            C = np.broadcast_to(C, W.shape).copy()
        B, m = W.shape[0], self.m
        J, _ = self._jac_hess(W)
        rhs = W - C
        JJt = J @ J.transpose(0, 2, 1) + 1e-12 * np.eye(m)[None]
        nu = np.linalg.solve(JJt, np.einsum("bmn,bn->bm", J, rhs)[..., None])[..., 0]
        size = 6 + m
        for _ in range(max_iter):
            Fv = self.sys.evaluate(W).real
            J, H = self._jac_hess(W)
            r1 = (W - C) - np.einsum("bmn,bm->bn", J, nu)
            R = np.concatenate([r1, Fv], axis=1)
            if np.max(np.abs(R)) <= tol:
                break
            A = np.zeros((B, size, size))
            T = np.einsum("bm,bmuv->buv", nu, H)
            A[:, :6, :6] = np.eye(6)[None] - T
            A[:, :6, 6:] = -J.transpose(0, 2, 1)
            A[:, 6:, :6] = J
            try:
                step = np.linalg.solve(A, -R[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.zeros_like(R)
                for i in range(B):
                    try:
                        step[i] = np.linalg.solve(A[i], -R[i])
                    except np.linalg.LinAlgError:
                        pass
            scale = np.ones(B)
            base = np.max(np.abs(R), axis=1)
            for _ in range(4):
                Wn = W + scale[:, None] * step[:, :6]
                nun = nu + scale[:, None] * step[:, 6:]
                Fn = self.sys.evaluate(Wn).real
                rn1 = (Wn - C) - np.einsum(
                    "bmn,bm->bn", self._jac_hess(Wn)[0], nun
                )
                rn = np.max(np.abs(np.concatenate([rn1, Fn], axis=1)), axis=1)
                worse = rn > base
                if not np.any(worse):
                    break
                scale[worse] *= 0.5
            W += scale[:, None] * step[:, :6]
            nu += scale[:, None] * step[:, 6:]
        Fv = self.sys.evaluate(W).real
        J, _ = self._jac_hess(W)
        r1 = (W - C) - np.einsum("bmn,bm->bn", J, nu)
        conv = np.max(np.abs(np.concatenate([r1, Fv], axis=1)), axis=1) <= 100 * tol
        dist = np.linalg.norm(W - C, axis=1)
        return W, conv, dist


class SingularityDistanceService:
    """Cached distance queries against one design's input-singularity curve."""

    def __init__(self, d: CanonicalDesign, fj: FritzJohnSystem,
                 start_sets: Dict[str, ht.StartSet],
                 settings: Optional[ht.TrackerSettings] = None,
                 workers: int = 1, real_tol: float = 1e-8,
                 feas_tol: float = 1e-8, fail_fraction: float = 0.10):
        self.design = d
        self.fj = fj
        self.sets = start_sets
        # production profile: short tame deformations; stubborn paths are
        # cut off early and land in the per-edge failure accounting
        self.settings = settings or ht.TrackerSettings(
            initial_step=0.2, max_step=0.5, grow_after=2, max_steps=200
        )
        self.workers = workers
        self.real_tol = real_tol
        self.feas_tol = feas_tol
        self.fail_fraction = fail_fraction
        self._curve_sys = PolySystem(
            polys=list(build_F(d).polys) + [build_g(d).polys[0]], ncols=6
        )
        self._projector = CurveProjector(d)
        self._node_cache: Dict[bytes, Tuple[float, bool]] = {}
        self._edge_cache: Dict[bytes, Tuple[float, bool]] = {}

    # -- classification -------------------------------------------------------

    def _node_candidates(self, pts, status, targets):
        """Distances and minimizing curve points of one endpoint subproblem."""
        E = pts.shape[0]
        w = pts[:, :, :6]
        im = np.max(np.abs(w.imag), axis=2)
        ok = (status == ht.STATUS_SUCCESS) & (im <= self.real_tol)
        borderline = (status == ht.STATUS_SUCCESS) & ~ok & (im <= 1e-4)
        wr = w.real.copy()
        if np.any(borderline):
            bi, bj = np.nonzero(borderline)
            Wp, conv, _ = self._projector.solve(wr[bi, bj], targets[bi])
            good = conv
            wr[bi[good], bj[good]] = Wp[good]
            ok[bi[good], bj[good]] = True
        feas = np.max(np.abs(self._curve_sys.evaluate(
            wr.reshape(-1, 6)).real), axis=1).reshape(E, -1) <= self.feas_tol
        ok &= feas
        obj = np.sum((wr - targets[:, None, :]) ** 2, axis=2)
        obj[~ok] = np.inf
        D = np.sqrt(obj.min(axis=1))
        argm = np.argmin(obj, axis=1)
        feet = wr[np.arange(E), argm]
        feet[~np.isfinite(D)] = np.nan
        fail = np.mean(status == ht.STATUS_FAILED, axis=1) > self.fail_fraction
        return D, fail, feet

    def node_distances(self, Z: np.ndarray, use_cache: bool = True,
                       return_feet: bool = False):
        """Distance from each configuration row to the singularity curve.

        With return_feet=True the minimizing curve point of every query comes
        back as a third array (NaN rows where no real minimizer exists).
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        N = Z.shape[0]
        D = np.full(N, np.nan)
        fail = np.zeros(N, dtype=bool)
        feet = np.full((N, 6), np.nan)
        todo = []
        keys = []
        for i in range(N):
            key = Z[i].tobytes()
            keys.append(key)
            if use_cache and key in self._node_cache:
                D[i], fail[i], feet[i] = self._node_cache[key]
            else:
                todo.append(i)
        if todo:
            idx = np.array(todo)
            pts, status, _ = ht.parameter_homotopy_batch(
                self.fj.point0, self.sets["t0"], Z[idx],
                settings=self.settings, workers=self.workers,
            )
            Dn, failn, feetn = self._node_candidates(pts, status, Z[idx])
            D[idx] = Dn
            fail[idx] = failn
            feet[idx] = feetn
            for k, i in enumerate(todo):
                self._node_cache[keys[i]] = (float(Dn[k]), bool(failn[k]), feetn[k])
        if return_feet:
            return D, fail, feet
        return D, fail

    def interior_distances(self, C0: np.ndarray, C1: np.ndarray, progress=None,
                           chunk_edges: int = 200):
        """Minimum distance over the open segment for each row pair."""
        C0 = np.atleast_2d(np.asarray(C0, dtype=float))
        C1 = np.atleast_2d(np.asarray(C1, dtype=float))
        E = C0.shape[0]
        D = np.full(E, np.inf)
        fail = np.zeros(E, dtype=bool)
        sysI = self.fj.interior
        for lo in range(0, E, chunk_edges):
            hi = min(lo + chunk_edges, E)
            targets = np.concatenate([C0[lo:hi], C1[lo:hi]], axis=1)
            pts, status, _ = ht.parameter_homotopy_batch(
                sysI, self.sets["interior"], targets,
                settings=self.settings, workers=self.workers,
            )
            w = pts[:, :, :6]
            t = pts[:, :, 6]
            im = np.maximum(
                np.max(np.abs(w.imag), axis=2), np.abs(t.imag)
            )
            tr = t.real
            ok = (
                (status == ht.STATUS_SUCCESS)
                & (im <= self.real_tol)
                & (tr > 1e-10)
                & (tr < 1.0 - 1e-10)
            )
            wr = w.real
            nb = hi - lo
            feas = np.max(np.abs(self._curve_sys.evaluate(
                wr.reshape(-1, 6)).real), axis=1).reshape(nb, -1) <= self.feas_tol
            ok &= feas
            seg = C0[lo:hi, None, :] + tr[..., None] * (
                C1[lo:hi, None, :] - C0[lo:hi, None, :]
            )
            obj = np.sum((wr - seg) ** 2, axis=2)
            obj[~ok] = np.inf
            D[lo:hi] = np.sqrt(obj.min(axis=1))
            fail[lo:hi] = np.mean(status == ht.STATUS_FAILED, axis=1) > self.fail_fraction
            if progress is not None:
                progress(hi, E)
        return D, fail

    def segment_distance(self, c0, c1, key=None) -> Tuple[float, bool]:
        """Distance from the closed segment [c0, c1] to the singularity curve."""
        c0 = np.asarray(c0, dtype=float).ravel()
        c1 = np.asarray(c1, dtype=float).ravel()
        if key is None:
            key = min(c0.tobytes(), c1.tobytes()) + max(c0.tobytes(), c1.tobytes())
        if key in self._edge_cache:
            return self._edge_cache[key]
        Dn, failn = self.node_distances(np.stack([c0, c1]))
        Di, faili = self.interior_distances(c0[None, :], c1[None, :])
        D = float(min(Dn[0], Dn[1], Di[0]))
        flag = bool(failn.any() or faili[0])
        self._edge_cache[key] = (D, flag)
        return D, flag


# -- curve tracing oracle -----------------------------------------------------


def _slice_system(d: CanonicalDesign, coeffs, const) -> PolySystem:
    F = build_F(d)
    g = build_g(d).polys[0]
    plane = Poly.const(6, const)
    for i in range(6):
        plane = plane + Poly.var(6, i, coeffs[i])
    return PolySystem(polys=list(F.polys) + [g, plane], ncols=6, label="sliced-curve")


def slice_solution_count(d: CanonicalDesign, seed: int = 0,
                         settings: Optional[ht.TrackerSettings] = None) -> int:
    """Finite nonsingular solutions of a generic hyperplane slice of the curve."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C]))
    coeffs = rng.normal(size=6) + 1j * rng.normal(size=6)
    const = complex(*rng.normal(size=2))
    sys = _slice_system(d, coeffs, const)
    pts, res = ht.solve_total_degree(sys, settings=settings, seed=seed)
    return pts.shape[0]


def real_slice_seeds(d: CanonicalDesign, n_slices: int = 6, seed: int = 0,
                     settings: Optional[ht.TrackerSettings] = None) -> np.ndarray:
    """Real points on the singularity curve from random real hyperplane slices."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    out = []
    for _ in range(n_slices):
        coeffs = rng.normal(size=6)
        const = float(rng.normal())
        sys = _slice_system(d, coeffs, const)
        pts, _ = ht.solve_total_degree(sys, settings=settings, seed=seed)
        if pts.size == 0:
            continue
        im = np.max(np.abs(pts.imag), axis=1)
        real_pts = pts[im <= 1e-8].real
        for w in real_pts:
            out.append(w)
    if not out:
        return np.zeros((0, 6))
    out = np.asarray(out)
    keep = ht.dedup_points(out, 1e-8)
    return out[keep]


def trace_real_curve(sys: PolySystem, seeds: np.ndarray, arc_step: float,
                     max_steps: int = 200000, norm_cap: float = 1e3):
    """Pseudo-arclength tracing of the real curve {sys = 0} from seed points.

    Each seed not already covered spawns a polyline; closed loops stop on
    return to their start, open branches are traced in both directions.
    Returns a list of (k, n) polylines.
    """
    n = sys.ncols
    compiled = sys.compiled()

    def jac(z):
        _, J = compiled.eval_all(z[None].astype(np.complex128))
        return J[0].real[:, : n]

    def value(z):
        return compiled.eval_values(z[None].astype(np.complex128))[0].real

    def tangent(z, prev=None):
        J = jac(z)
        _, _, vt = np.linalg.svd(J)
        t = vt[-1]
        if prev is not None and np.dot(t, prev) < 0:
            t = -t
        return t

    def correct(z_pred, tan, tol=1e-11):
        z = z_pred.copy()
        for it in range(12):
            r = np.concatenate([value(z), [np.dot(tan, z - z_pred)]])
            if np.max(np.abs(r)) <= tol:
                return z, True, it
            A = np.vstack([jac(z), tan[None, :]])
            try:
                z = z + np.linalg.solve(A, -r)
            except np.linalg.LinAlgError:
                return z, False, it
        return z, False, 12

    polylines: List[np.ndarray] = []

    def covered(z):
        for pl in polylines:
            tree = cKDTree(pl)
            if tree.query(z, k=1)[0] < 2.0 * arc_step:
                return True
        return False

    def walk(z0, direction):
        pts = [z0.copy()]
        tan = tangent(z0) * direction
        z = z0.copy()
        h = arc_step
        steps = 0
        closed = False
        while steps < max_steps:
            z_pred = z + h * tan
            zc, okc, iters = correct(z_pred, tan)
            if not okc:
                if h > arc_step / 64:
                    h *= 0.5
                    continue
                break
            tan_new = tangent(zc, tan)
            if np.dot(tan_new, tan) < math.cos(math.radians(30.0)):
                if h > arc_step / 64:
                    h *= 0.5
                    continue
                break
            z = zc
            tan = tan_new
            pts.append(z.copy())
            steps += 1
            if iters <= 2 and h < arc_step:
                h = min(arc_step, 1.5 * h)
            if np.linalg.norm(z) > norm_cap:
                break
            if steps >= 5 and np.linalg.norm(z - z0) < 0.9 * h:
                closed = True
                pts.append(z0.copy())
                break
        return np.asarray(pts), closed

    for seed_pt in np.atleast_2d(seeds):
        if np.max(np.abs(value(seed_pt))) > 1e-8 or covered(seed_pt):
            continue
        fwd, closed = walk(seed_pt, +1.0)
        if closed:
            polylines.append(fwd)
        else:
            back, _ = walk(seed_pt, -1.0)
            pl = np.concatenate([back[::-1], fwd[1:]]) if back.shape[0] > 1 else fwd
            polylines.append(pl)
    return polylines


def trace_singularity_curve(d: CanonicalDesign, arc_step: float = 0.02,
                            seed: int = 0, n_slices: int = 6):
    """Polyline model of the real input-singularity curve."""
    seeds = real_slice_seeds(d, n_slices=n_slices, seed=seed)
    sys = PolySystem(polys=list(build_F(d).polys) + [build_g(d).polys[0]], ncols=6)
    if seeds.shape[0] == 0:
        return []
    return trace_real_curve(sys, seeds, arc_step)


def oracle_distance(polylines, c0, c1, d: Optional[CanonicalDesign] = None,
                    refine: bool = True) -> float:
    """Distance from segment [c0, c1] to the traced curve.

    The vertex minimum is an upper bound; with refine=True it is polished by
    Lagrange-Newton (endpoint problems) and a coordinate descent over the
    segment parameter (interior problem).
    """
    if not polylines:
        return float("inf")
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    V = np.concatenate([pl for pl in polylines])
    u = c1 - c0
    uu = float(u @ u)
    if uu == 0.0:
        ts = np.zeros(V.shape[0])
    else:
        ts = np.clip((V - c0) @ u / uu, 0.0, 1.0)
    feet = c0[None, :] + ts[:, None] * u[None, :]
    dist = np.linalg.norm(V - feet, axis=1)
    k = int(np.argmin(dist))
    best = float(dist[k])
    if not refine or d is None:
        return best
    projector = CurveProjector(d)
    candidates = [best]
    for c in (c0, c1):
        W, conv, dd = projector.solve(V[k][None, :], c[None, :])
        if conv[0]:
            candidates.append(float(dd[0]))
    # interior: alternate projection and segment-parameter update
    w = V[k].copy()
    t = float(ts[k])
    val = best
    for _ in range(25):
        c = c0 + t * u
        W, conv, dd = projector.solve(w[None, :], c[None, :])
        if not conv[0]:
            break
        w = W[0]
        t_new = float(np.clip((w - c0) @ u / uu, 0.0, 1.0)) if uu else 0.0
        val = float(np.linalg.norm(w - (c0 + t_new * u)))
        if abs(t_new - t) < 1e-13:
            t = t_new
            break
        t = t_new
    candidates.append(val)
    return min(candidates)
