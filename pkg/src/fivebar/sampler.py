"""Manifold sampling: feature-size estimation and epsilon-samples.

The sampling resolution comes from a geometric 2-bottleneck search: pairs of
variety points whose joining segment is normal to the variety at both ends.
Half the shortest such segment bounds the weak feature size from above, and
the sample spacing is chosen just under half of that bound.  Sampling itself
walks an adaptively refined grid over the input torus through the closed-form
forward kinematics, then thins the result to a guaranteed minimum spacing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

from fivebar import model
from fivebar.model import CanonicalDesign
from fivebar.polysys import CompiledSystem, PolySystem, build_F


class SamplerError(Exception):
    pass


class NoBottleneckError(SamplerError):
    """No 2-bottleneck converged; choose the sampling resolution manually."""


@dataclass
class Bottleneck:
    """Variety point pair whose joining segment is normal at both ends."""

    w1: np.ndarray
    w2: np.ndarray
    value: float  # half the separation


@dataclass
class EpsilonSample:
    points: np.ndarray          # (N, 6) configurations
    epsilon: float
    W: float                    # feature-size estimate behind epsilon
    sigma: np.ndarray           # (N,) kinematic branch sign
    h1: np.ndarray
    h2: np.ndarray
    flagged: np.ndarray         # (N,) spacing unresolved at the depth cap
    metadata: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def newton_project(sysF: PolySystem, Z, tol: float = 1e-12, max_iter: int = 8):
    """Minimal-norm Newton projection of rows of Z onto {F = 0}."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float)).copy()
    for _ in range(max_iter):
        vals = sysF.evaluate(Z).real
        if np.max(np.abs(vals)) <= tol:
            break
        J = sysF.jacobian(Z).real
        JJt = J @ J.transpose(0, 2, 1)
        try:
            lam = np.linalg.solve(JJt, vals[..., None])[..., 0]
        except np.linalg.LinAlgError:
            lam = np.linalg.lstsq(
                JJt.reshape(-1, JJt.shape[-1], JJt.shape[-1])[0], vals[0], rcond=None
            )[0][None, :]
        Z = Z - np.einsum("bij,bi->bj", J, lam)
    return Z


class BottleneckSolver:
    """Damped Newton on the two-point normality system of a variety {F = 0}.

    The system carries a deflation unknown s with equation
    s * |z2 - z1|^2 = 1, which removes the spurious z1 = z2 branch that
    otherwise swallows Newton iterates started from nearby point pairs.
    """

    def __init__(self, sysF: PolySystem):
        self.F = sysF
        self.n = sysF.nvars
        self.m = sysF.neq
        grads = [sysF.polys[i].diff(u) for i in range(self.m) for u in range(self.n)]
        self._gradsys = CompiledSystem(grads, sysF.ncols)

    def _jac_hess(self, Z):
        full = self.F.assemble(np.asarray(Z, dtype=np.complex128))
        vals, jac = self._gradsys.eval_all(full)
        B = Z.shape[0]
        J = vals.real.reshape(B, self.m, self.n)
        H = jac.real[:, :, self.F.var_cols].reshape(B, self.m, self.n, self.n)
        return J, H

    def residual(self, z1, z2, mu1, mu2, s):
        F1 = self.F.evaluate(z1).real
        F2 = self.F.evaluate(z2).real
        J1, _ = self._jac_hess(z1)
        J2, _ = self._jac_hess(z2)
        sep = z2 - z1
        r3 = sep - np.einsum("bmn,bm->bn", J1, mu1)
        r4 = sep - np.einsum("bmn,bm->bn", J2, mu2)
        r5 = (s * np.sum(sep * sep, axis=1) - 1.0)[:, None]
        return np.concatenate([F1, F2, r3, r4, r5], axis=1)

    def solve(self, z1, z2, max_iter: int = 40, tol: float = 1e-11):
        """Newton from seed pairs; returns (z1, z2, mu1, mu2, converged)."""
        z1 = np.atleast_2d(np.asarray(z1, dtype=float)).copy()
        z2 = np.atleast_2d(np.asarray(z2, dtype=float)).copy()
        B, n, m = z1.shape[0], self.n, self.m
        J1, _ = self._jac_hess(z1)
        J2, _ = self._jac_hess(z2)

        def lsq_mu(J, rhs):
            JJt = J @ J.transpose(0, 2, 1)
            JJt += 1e-12 * np.eye(m)[None, :, :]
            return np.linalg.solve(JJt, np.einsum("bmn,bn->bm", J, rhs)[..., None])[..., 0]

        sep = z2 - z1
        mu1 = lsq_mu(J1, sep)
        mu2 = lsq_mu(J2, sep)
        s = 1.0 / np.maximum(np.sum(sep * sep, axis=1), 1e-12)
        size = 2 * n + 2 * m + 1
        alive = np.ones(B, dtype=bool)
        for _ in range(max_iter):
            R = self.residual(z1, z2, mu1, mu2, s)
            rn = np.max(np.abs(R), axis=1)
            alive &= (rn > tol) & np.isfinite(rn)
            act = np.flatnonzero(alive)
            if act.size == 0:
                break
            J1, H1 = self._jac_hess(z1[act])
            J2, H2 = self._jac_hess(z2[act])
            T1 = np.einsum("bm,bmuv->buv", mu1[act], H1)
            T2 = np.einsum("bm,bmuv->buv", mu2[act], H2)
            A = np.zeros((act.size, size, size))
            I = np.eye(n)
            A[:, :m, :n] = J1
            A[:, m : 2 * m, n : 2 * n] = J2
            r3s = slice(2 * m, 2 * m + n)
            r4s = slice(2 * m + n, 2 * m + 2 * n)
            A[:, r3s, :n] = -I - T1
            A[:, r3s, n : 2 * n] = I[None]
            A[:, r3s, 2 * n : 2 * n + m] = -J1.transpose(0, 2, 1)
            A[:, r4s, :n] = -I[None] * 1.0
            A[:, r4s, n : 2 * n] = I - T2
            A[:, r4s, 2 * n + m : 2 * n + 2 * m] = -J2.transpose(0, 2, 1)
            sepa = z2[act] - z1[act]
            A[:, -1, :n] = -2.0 * s[act, None] * sepa
            A[:, -1, n : 2 * n] = 2.0 * s[act, None] * sepa
            A[:, -1, -1] = np.sum(sepa * sepa, axis=1)
            Ract = R[act]
            try:
                step = np.linalg.solve(A, -Ract[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.zeros_like(Ract)
                for i in range(act.size):
                    try:
                        step[i] = np.linalg.solve(A[i], -Ract[i])
                    except np.linalg.LinAlgError:
                        alive[act[i]] = False
            step = np.where(np.isfinite(step), step, 0.0)
            # damped update
            base = rn[act]
            scale = np.ones(act.size)
            for _ in range(4):
                nz1 = z1[act] + scale[:, None] * step[:, :n]
                nz2 = z2[act] + scale[:, None] * step[:, n : 2 * n]
                nmu1 = mu1[act] + scale[:, None] * step[:, 2 * n : 2 * n + m]
                nmu2 = mu2[act] + scale[:, None] * step[:, 2 * n + m : 2 * n + 2 * m]
                ns = s[act] + scale * step[:, -1]
                rnew = np.max(np.abs(self.residual(nz1, nz2, nmu1, nmu2, ns)), axis=1)
                worse = rnew > base
                if not np.any(worse):
                    break
                scale[worse] *= 0.5
            z1[act] += scale[:, None] * step[:, :n]
            z2[act] += scale[:, None] * step[:, n : 2 * n]
            mu1[act] += scale[:, None] * step[:, 2 * n : 2 * n + m]
            mu2[act] += scale[:, None] * step[:, 2 * n + m : 2 * n + 2 * m]
            s[act] += scale * step[:, -1]
        R = self.residual(z1, z2, mu1, mu2, s)
        conv = np.max(np.abs(R), axis=1) <= 10 * tol
        return z1, z2, mu1, mu2, conv


def _candidate_pairs(pilot: np.ndarray, budget: int, detour_ratio: float = 1.45,
                     neighbor_scale: float = 2.0):
    """The budget euclidean-closest pilot pairs that are far apart on the variety.

    A pair counts as a bottleneck candidate when its shortest-path distance
    through the pilot neighbor graph exceeds detour_ratio times its ambient
    separation (or the pair is disconnected).  The ratio cut sits below pi/2,
    the detour of antipodal points on a circle, the tightest useful case.
    """
    # near-fold branch pairs give duplicate-like points; a robust spacing
    # percentile plus thinning keeps them from collapsing the neighbor graph
    tree = cKDTree(pilot)
    dd, _ = tree.query(pilot, k=min(2, pilot.shape[0]))
    spacing = float(np.percentile(dd[:, -1], 90))
    pilot = pilot[thin_points(pilot, 0.3 * spacing)]
    N = pilot.shape[0]
    tree = cKDTree(pilot)
    pairs = tree.query_pairs(neighbor_scale * spacing, output_type="ndarray")
    if pairs.size == 0:
        return pilot, []
    w = np.linalg.norm(pilot[pairs[:, 0]] - pilot[pairs[:, 1]], axis=1)
    graph = csr_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(N, N))
    dist = shortest_path(graph, method="D", directed=False)
    diff = pilot[:, None, :] - pilot[None, :, :]
    euc = np.sqrt(np.sum(diff * diff, axis=2))
    iu = np.triu_indices(N, k=1)
    ratio = dist[iu] / np.maximum(euc[iu], 1e-300)
    cand = np.flatnonzero(~np.isfinite(ratio) | (ratio > detour_ratio))
    if cand.size == 0:
        return pilot, []
    order = cand[np.argsort(euc[iu][cand], kind="stable")]
    # spread the budget: skip pairs whose endpoints both crowd an accepted pair
    out = []
    accepted: List[Tuple[np.ndarray, np.ndarray]] = []
    crowd = 1.5 * spacing
    for k in order:
        i, j = int(iu[0][k]), int(iu[1][k])
        a, b = pilot[i], pilot[j]
        dup = False
        for (u, v) in accepted:
            if (
                max(np.linalg.norm(a - u), np.linalg.norm(b - v)) < crowd
                or max(np.linalg.norm(a - v), np.linalg.norm(b - u)) < crowd
            ):
                dup = True
                break
        if dup:
            continue
        accepted.append((a, b))
        out.append((i, j))
        if len(out) >= budget:
            break
    return pilot, out


def estimate_wfs_for_system(sysF: PolySystem, pilot: np.ndarray, budget: int = 64,
                            min_separation: float = 1e-5):
    """Feature-size estimate for an arbitrary variety from a pilot point cloud.

    Returns (W, witnesses) with witnesses sorted by ascending value.  W is the
    smallest validated half-separation over converged 2-bottlenecks.
    """
    pilot = np.asarray(pilot, dtype=float)
    pilot, seeds = _candidate_pairs(pilot, budget)
    if not seeds:
        raise NoBottleneckError("no bottleneck candidates in the pilot sample")
    i1 = np.array([a for a, _ in seeds])
    i2 = np.array([b for _, b in seeds])
    solver = BottleneckSolver(sysF)
    z1, z2, mu1, mu2, conv = solver.solve(pilot[i1], pilot[i2])
    sep = np.linalg.norm(z2 - z1, axis=1)
    good = conv & (sep > min_separation)
    if not np.any(good):
        raise NoBottleneckError(
            "no 2-bottleneck converged; supply the sampling resolution manually"
        )
    wit = [Bottleneck(z1[i].copy(), z2[i].copy(), float(sep[i]) / 2.0)
           for i in np.flatnonzero(good)]
    wit.sort(key=lambda b: b.value)
    dedup: List[Bottleneck] = []
    for b in wit:
        if not any(
            min(np.linalg.norm(b.w1 - o.w1) + np.linalg.norm(b.w2 - o.w2),
                np.linalg.norm(b.w1 - o.w2) + np.linalg.norm(b.w2 - o.w1)) < 1e-6
            for o in dedup
        ):
            dedup.append(b)
    return dedup[0].value, dedup


def _pilot_sample(d: CanonicalDesign, seed: int, grid: int = 40, cap: int = 2400):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
    off = rng.uniform(0.0, 2.0 * np.pi / grid, size=2)
    phi = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False) + off[0]
    psi = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False) + off[1]
    PH, PS = np.meshgrid(phi, psi, indexing="ij")
    Z, sigma, parent, tang = model.fk_batch(d, PH.ravel(), PS.ravel())
    if Z.shape[0] == 0:
        raise SamplerError("configuration space is empty for this design")
    if Z.shape[0] > cap:
        keep = rng.choice(Z.shape[0], size=cap, replace=False)
        keep.sort()
        Z = Z[keep]
    return Z

def estimate_wfs(d: CanonicalDesign, budget: int = 64, seed: int = 0):
    """Feature-size estimate of the five-bar configuration manifold."""
    pilot = _pilot_sample(d, seed)
    return estimate_wfs_for_system(build_F(d), pilot, budget=budget)


class HashGrid:
    """Uniform cell index over R^n used for spacing and radius queries."""

    def __init__(self, cell: float, dim: int = 6):
        self.cell = cell
        self.dim = dim
        self.cells: Dict[bytes, List[int]] = {}
        self.points: List[np.ndarray] = []

    def _key(self, coords) -> bytes:
        return np.asarray(coords, dtype=np.int64).tobytes()

    def insert(self, z: np.ndarray, index: int):
        c = np.floor(z / self.cell).astype(np.int64)
        self.cells.setdefault(self._key(c), []).append(index)
        self.points.append(z)

    def near(self, z: np.ndarray, radius: float):
        """Indices of stored points within radius (cell-box prefilter)."""
        c = np.floor(z / self.cell).astype(np.int64)
        reach = int(math.ceil(radius / self.cell))
        out = []
        rng = range(-reach, reach + 1)
        from itertools import product as iproduct

        for off in iproduct(rng, repeat=self.dim):
            lst = self.cells.get(self._key(c + np.array(off, dtype=np.int64)))
            if lst:
                out.extend(lst)
        return out


def thin_points(Z: np.ndarray, radius: float) -> np.ndarray:
    """Greedy subsample: keep points at pairwise spacing >= radius.

    Cell size is twice the radius, so each query touches at most 2^dim cells.
    Returns indices of kept rows, in input order.
    """
    n = Z.shape[0]
    cell = 2.0 * radius
    cells: Dict[bytes, List[int]] = {}
    coords = np.floor(Z / cell).astype(np.int64)
    frac = Z / cell - coords
    signs = np.where(frac < 0.5, -1, 1).astype(np.int64)
    from itertools import product as iproduct

    combos = np.array(list(iproduct((0, 1), repeat=Z.shape[1])), dtype=np.int64)
    kept: List[int] = []
    r2 = radius * radius
    for i in range(n):
        ci = coords[i]
        cand: List[int] = []
        offs = combos * signs[i]
        for off in offs:
            lst = cells.get((ci + off).tobytes())
            if lst:
                cand.extend(lst)
        zi = Z[i]
        okeep = True
        for j in cand:
            dz = Z[j] - zi
            if dz @ dz < r2:
                okeep = False
                break
        if okeep:
            kept.append(i)
            cells.setdefault(ci.tobytes(), []).append(i)
    return np.array(kept, dtype=int)


def epsilon_sample(d: CanonicalDesign, epsilon: float, W: Optional[float] = None,
                   base_grid: int = 64, depth_cap: int = 12,
                   thin_factor: float = 0.85, refine_factor: float = 0.5) -> EpsilonSample:
    """Adaptive sample of the configuration manifold at resolution epsilon.

    A uniform grid over the input torus is refined while two same-branch
    configurations at adjacent cell corners differ by more than epsilon in
    R^6, or while a cell straddles the fold of the forward kinematics with
    its two branches still clearly separated.  All corner configurations are
    then thinned to a minimum spacing of thin_factor * epsilon (never below
    epsilon/4), which keeps the neighbor count of the radius graph bounded.
    The grid refines past the nominal resolution (refine_factor < 1) so the
    generated cloud stays dense enough that thinning near epsilon still
    leaves every manifold point within epsilon of a retained sample.
    """
    if not epsilon > 0.0:
        raise SamplerError("epsilon must be positive")
    eps_grid = float(refine_factor) * epsilon
    ticks = base_grid * (1 << depth_cap)
    step0 = 1 << depth_cap

    index: Dict[Tuple[int, int], int] = {}
    Zp: List[np.ndarray] = []
    Zm: List[np.ndarray] = []
    has_p: List[bool] = []
    has_m: List[bool] = []
    vkeys: List[Tuple[int, int]] = []

    def ensure_vertices(keys):
        new = [k for k in keys if k not in index]
        if not new:
            return
        arr = np.array(new, dtype=np.int64)
        ang = arr * (2.0 * np.pi / ticks)
        Z, sigma, parent, tang = model.fk_batch(d, ang[:, 0], ang[:, 1])
        base = len(vkeys)
        for k in new:
            index[k] = base
            vkeys.append(k)
            Zp.append(np.zeros(6))
            Zm.append(np.zeros(6))
            has_p.append(False)
            has_m.append(False)
            base += 1
        for row in range(Z.shape[0]):
            k = new[parent[row]]
            i = index[k]
            if sigma[row] >= 0:  # tangency rows land on the + slot
                Zp[i] = Z[row]
                has_p[i] = True
            else:
                Zm[i] = Z[row]
                has_m[i] = True

    cells = [(ix * step0, iy * step0, step0) for ix in range(base_grid) for iy in range(base_grid)]
    flagged_keys = set()
    max_depth_used = 0
    generated_histogram = []

    depth = 0
    while cells:
        corner_keys = []
        for (x0, y0, sz) in cells:
            corner_keys.extend(
                [
                    ((x0) % ticks, (y0) % ticks),
                    ((x0 + sz) % ticks, (y0) % ticks),
                    ((x0 + sz) % ticks, (y0 + sz) % ticks),
                    ((x0) % ticks, (y0 + sz) % ticks),
                ]
            )
        ensure_vertices(corner_keys)
        idx = np.array([index[k] for k in corner_keys], dtype=int).reshape(-1, 4)
        ZP = np.asarray(Zp)[idx]
        ZM = np.asarray(Zm)[idx]
        HP = np.asarray(has_p)[idx]
        HM = np.asarray(has_m)[idx]

        trigger = np.zeros(len(cells), dtype=bool)
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            for ZB, HB in ((ZP, HP), (ZM, HM)):
                both = HB[:, a] & HB[:, b]
                dist = np.linalg.norm(ZB[:, a] - ZB[:, b], axis=1)
                trigger |= both & (dist > eps_grid)
        counts = HP.astype(int) + HM.astype(int)
        mixed = (counts.max(axis=1) != counts.min(axis=1))
        pairsep = np.where(
            HP & HM, np.linalg.norm(ZP - ZM, axis=2), 0.0
        ).max(axis=1)
        nonempty = counts.max(axis=1) > 0
        trigger |= mixed & nonempty & (pairsep > 0.5 * eps_grid)

        generated_histogram.append((depth, len(cells), int(trigger.sum())))
        if depth >= depth_cap:
            for ci in np.flatnonzero(trigger):
                x0, y0, sz = cells[ci]
                for k in (
                    (x0 % ticks, y0 % ticks),
                    ((x0 + sz) % ticks, y0 % ticks),
                    ((x0 + sz) % ticks, (y0 + sz) % ticks),
                    (x0 % ticks, (y0 + sz) % ticks),
                ):
                    flagged_keys.add(k)
            break
        nxt = []
        for ci in np.flatnonzero(trigger):
            x0, y0, sz = cells[ci]
            h = sz // 2
            nxt.extend(
                [(x0, y0, h), (x0 + h, y0, h), (x0, y0 + h, h), (x0 + h, y0 + h, h)]
            )
        if nxt:
            max_depth_used = depth + 1
        cells = nxt
        depth += 1

    rows = []
    sig = []
    flags = []
    order = sorted(range(len(vkeys)), key=lambda i: vkeys[i])
    for i in order:
        fl = vkeys[i] in flagged_keys
        if has_p[i]:
            rows.append(Zp[i])
            sig.append(1)
            flags.append(fl)
        if has_m[i]:
            rows.append(Zm[i])
            sig.append(-1)
            flags.append(fl)
    if not rows:
        raise SamplerError("configuration space is empty for this design")
    Z = np.asarray(rows)
    sig = np.asarray(sig, dtype=np.int8)
    flags = np.asarray(flags, dtype=bool)
    n_generated = Z.shape[0]

    keep = thin_points(Z, max(0.25, float(thin_factor)) * epsilon)
    Z = Z[keep]
    sig = sig[keep]
    flags = flags[keep]

    sysF = build_F(d)
    res = model.residual_inf(d, Z)
    bad = res > 1e-12
    if np.any(bad):
        Z[bad] = newton_project(sysF, Z[bad])

    h1, h2 = model.output_sing_values(d, Z)
    return EpsilonSample(
        points=Z,
        epsilon=float(epsilon),
        W=float(W) if W is not None else float("nan"),
        sigma=sig,
        h1=h1,
        h2=h2,
        flagged=flags,
        metadata={
            "base_grid": base_grid,
            "depth_cap": depth_cap,
            "thin_factor": max(0.25, float(thin_factor)),
            "refine_factor": float(refine_factor),
            "max_depth_used": max_depth_used,
            "n_generated": int(n_generated),
            "n_retained": int(Z.shape[0]),
            "refinement": generated_histogram,
        },
    )
