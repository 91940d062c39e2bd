"""Shortest-path queries on the pruned configuration graph.

A* with the ambient Euclidean distance to the goal as heuristic, which is
admissible because edge weights are ambient chord lengths.  Query
configurations that are not graph nodes attach through clearance-checked
temporary edges.  The module also hosts the case-study searches: the
workspace point whose two assembly configurations carry perpendicular
velocity ellipses, a mode-transfer node pair at a shared workspace point,
and the traced singularity curves projected to the workspace.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from fivebar import model, singdist
from fivebar.cgraph import ConfigGraph, EDGE_FLAG_EXCLUDED
from fivebar.model import CanonicalDesign, Configuration
from fivebar.polysys import PolySystem, build_F, build_h_polys


class PlannerError(Exception):
    pass


class NoPathError(PlannerError):
    def __init__(self, start_component: int, goal_component: int):
        super().__init__(
            f"endpoints lie in different components "
            f"({start_component} vs {goal_component})"
        )
        self.start_component = start_component
        self.goal_component = goal_component


@dataclass
class PathResult:
    node_ids: List[int]
    configurations: np.ndarray
    total_length: float
    min_clearance: float
    modes_crossed: List[Tuple[int, int]]

    @property
    def n_mode_changes(self) -> int:
        return sum(
            1 for a, b in zip(self.modes_crossed, self.modes_crossed[1:]) if a != b
        )


def _path_length(points: np.ndarray) -> float:
    """Sum of hop lengths in path order; shared by A* and the oracle."""
    if points.shape[0] < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def astar(indptr, indices, wts, nodes, start: int, goal: int,
          heuristic: bool = True) -> Optional[List[int]]:
    """A* over CSR adjacency; returns the node sequence or None."""
    goal_z = nodes[goal]
    h0 = float(np.linalg.norm(nodes[start] - goal_z)) if heuristic else 0.0
    queue = [(h0, start, 0.0, -1)]
    best_g: Dict[int, float] = {}
    parent: Dict[int, int] = {}
    while queue:
        f, v, gv, par = heapq.heappop(queue)
        if v in parent:
            continue
        parent[v] = par
        if v == goal:
            path = [v]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            path.reverse()
            return path
        for k in range(indptr[v], indptr[v + 1]):
            u = int(indices[k])
            if u in parent:
                continue
            gu = gv + wts[k]
            if gu >= best_g.get(u, math.inf):
                continue
            best_g[u] = gu
            h = float(np.linalg.norm(nodes[u] - goal_z)) if heuristic else 0.0
            heapq.heappush(queue, (gu + h, u, gu, v))
    return None


def dijkstra_path(indptr, indices, wts, nodes, start: int, goal: int):
    """Plain Dijkstra, kept free of the heuristic as a planning oracle."""
    return astar(indptr, indices, wts, nodes, start, goal, heuristic=False)


@dataclass
class _Attachment:
    node: int       # graph node reached
    config: np.ndarray
    weight: float
    clearance: float


def _attach(g: ConfigGraph, z: np.ndarray, service, T: float, avoid: bool,
            k_far: int = 8, sysF: Optional[PolySystem] = None):
    """Temporary clearance-checked edges from a query configuration.

    Within r of a node the single nearest node is used; farther queries are
    projected onto the manifold and tied to their k_far nearest nodes.
    """
    tree = cKDTree(g.nodes)
    dist, idx = tree.query(z, k=1)
    if dist <= 1e-12:
        return [], int(idx)
    if dist <= g.r:
        cands = [int(idx)]
    else:
        from fivebar.sampler import newton_project

        z = newton_project(sysF if sysF is not None else build_F(g.design), z)[0]
        k = min(k_far, g.n_nodes)
        _, nn = tree.query(z, k=k)
        cands = [int(i) for i in np.atleast_1d(nn)]
    out = []
    for i in cands:
        w = float(np.linalg.norm(g.nodes[i] - z))
        if service is not None:
            De, flag = service.segment_distance(z, g.nodes[i])
            if flag:
                continue
        else:
            De = math.inf
        if avoid and De < T:
            continue
        out.append(_Attachment(node=i, config=z, weight=w, clearance=De))
    return out, None


def plan(g: ConfigGraph, start, goal, avoid: bool = True,
         service=None, T: Optional[float] = None) -> PathResult:
    """Shortest path between two configurations.

    With avoid=True the graph must already be pruned at its threshold; with
    avoid=False the full graph is searched.  Off-node endpoints connect via
    clearance-checked temporary edges (which requires a distance service).
    """
    T = g.T if T is None else float(T)
    z_start = start.to_array() if isinstance(start, Configuration) else np.asarray(start, float)
    z_goal = goal.to_array() if isinstance(goal, Configuration) else np.asarray(goal, float)

    att_s, node_s = _attach(g, z_start, service, T, avoid)
    att_g, node_g = _attach(g, z_goal, service, T, avoid)
    if node_s is None and not att_s:
        raise PlannerError("start configuration could not attach to the graph")
    if node_g is None and not att_g:
        raise PlannerError("goal configuration could not attach to the graph")

    indptr, indices, wts, eids = g.adjacency()

    n = g.n_nodes
    # splice temporary endpoints as virtual nodes n (start) and n+1 (goal)
    ext_nodes = np.vstack([g.nodes, z_start[None, :], z_goal[None, :]])
    ext_adj: Dict[int, List[Tuple[int, float, float]]] = {n: [], n + 1: []}
    clearances: Dict[Tuple[int, int], float] = {}
    if node_s is not None:
        start_id = node_s
    else:
        start_id = n
        for a in att_s:
            ext_adj[n].append((a.node, a.weight, a.clearance))
    if node_g is not None:
        goal_id = node_g
    else:
        goal_id = n + 1
        for a in att_g:
            ext_adj[n + 1].append((a.node, a.weight, a.clearance))

    def neighbors(v):
        if v < n:
            for k in range(indptr[v], indptr[v + 1]):
                yield int(indices[k]), wts[k], g.D_e[eids[k]]
        for (u, w, De) in ext_adj.get(v, []):
            yield u, w, De
        # reverse temporary edges
        for vv in (n, n + 1):
            if v < n and vv in ext_adj:
                for (u, w, De) in ext_adj[vv]:
                    if u == v:
                        yield vv, w, De

    if start_id == goal_id:
        cfg = ext_nodes[start_id][None, :]
        sv = (int(g.s1[start_id]), int(g.s2[start_id])) if start_id < n else (0, 0)
        return PathResult([start_id], cfg, 0.0, math.inf, [sv])

    goal_z = ext_nodes[goal_id]
    queue = [(float(np.linalg.norm(ext_nodes[start_id] - goal_z)), start_id, 0.0, -1)]
    parent: Dict[int, int] = {}
    best_g: Dict[int, float] = {}
    found = False
    while queue:
        f, v, gv, par = heapq.heappop(queue)
        if v in parent:
            continue
        parent[v] = par
        if v == goal_id:
            found = True
            break
        for (u, w, De) in neighbors(v):
            if u in parent:
                continue
            gu = gv + w
            if gu >= best_g.get(u, math.inf):
                continue
            best_g[u] = gu
            h = float(np.linalg.norm(ext_nodes[u] - goal_z))
            heapq.heappush(queue, (gu + h, u, gu, v))
    if not found:
        comp = _component_ids(g)
        cs = comp[node_s] if node_s is not None else (
            comp[att_s[0].node] if att_s else -1
        )
        cg = comp[node_g] if node_g is not None else (
            comp[att_g[0].node] if att_g else -1
        )
        raise NoPathError(int(cs), int(cg))

    path = [goal_id]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    path.reverse()

    pts = ext_nodes[path]
    length = _path_length(pts)
    min_clear = math.inf
    for a, b in zip(path, path[1:]):
        De = None
        for (u, w, c) in neighbors(a):
            if u == b:
                De = c
                break
        if De is not None:
            min_clear = min(min_clear, De)
    modes = []
    for v in path:
        if v < n:
            modes.append((int(g.s1[v]), int(g.s2[v])))
        else:
            h1, h2 = model.output_sing_values(g.design, ext_nodes[v])
            modes.append((int(np.sign(h1)) or 1, int(np.sign(h2)) or 1))
    return PathResult(
        node_ids=path,
        configurations=pts,
        total_length=length,
        min_clearance=min_clear,
        modes_crossed=modes,
    )


def _component_ids(g: ConfigGraph) -> np.ndarray:
    if g.edges.size:
        m = csr_matrix(
            (np.ones(g.n_edges), (g.edges[:, 0], g.edges[:, 1])),
            shape=(g.n_nodes, g.n_nodes),
        )
    else:
        m = csr_matrix((g.n_nodes, g.n_nodes))
    _, labels = connected_components(m, directed=False)
    return labels


# -- case-study searches ------------------------------------------------------


def _pair_score(ellipses, want_ratio: float = 4.0):
    """Best (i, j, score) among configuration ellipses at one workspace point."""
    best = None
    for i in range(len(ellipses)):
        for j in range(i + 1, len(ellipses)):
            a, b = ellipses[i], ellipses[j]
            if min(a.semi_minor, b.semi_minor) <= 1e-12:
                continue
            dang = abs(a.major_axis_angle - b.major_axis_angle) % math.pi
            dang = min(dang, math.pi - dang)
            angle_dev = abs(dang - math.pi / 2.0) / (math.pi / 2.0)
            ra = a.semi_major / a.semi_minor
            rb = b.semi_major / b.semi_minor
            ratio_dev = abs(ra - want_ratio) / want_ratio + abs(rb - want_ratio) / want_ratio
            score = angle_dev + ratio_dev
            if best is None or score < best[2]:
                best = (i, j, score)
    return best


def find_perpendicular_ellipse_point(g: ConfigGraph, d: CanonicalDesign,
                                     want_ratio: float = 4.0,
                                     max_candidates: int = 4000,
                                     polish: bool = True):
    """Workspace point whose two assembly configurations have perpendicular
    velocity ellipses with aspect ratio closest to want_ratio : 1.

    Scans the sampled workspace points, then locally polishes the winner.
    Returns (x, y, (config_a, config_b)).
    """
    xy = g.nodes[:, :2]
    # bucket workspace points at epsilon resolution to bound the scan
    cell = max(g.epsilon, 1e-9)
    keys = np.floor(xy / cell).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first.sort()
    if first.size > max_candidates:
        stride = int(np.ceil(first.size / max_candidates))
        first = first[::stride]

    def point_score(x, y):
        cfgs = model.inverse_kinematics(d, x, y)
        els = []
        ok_cfgs = []
        for c in cfgs:
            try:
                els.append(model.velocity_ellipse(d, c))
                ok_cfgs.append(c)
            except model.SingularJacobianError:
                continue
        if len(els) < 2:
            return None
        got = _pair_score(els, want_ratio)
        if got is None:
            return None
        i, j, s = got
        return s, ok_cfgs[i], ok_cfgs[j]

    best = None
    for idx in first:
        x, y = float(xy[idx, 0]), float(xy[idx, 1])
        got = point_score(x, y)
        if got is None:
            continue
        if best is None or got[0] < best[2]:
            best = (x, y, got[0], got[1], got[2])
    if best is None:
        raise PlannerError("no workspace point admits an ellipse pair")
    x, y = best[0], best[1]
    if polish:
        from scipy.optimize import minimize

        def objective(v):
            got = point_score(float(v[0]), float(v[1]))
            return got[0] if got is not None else 1e3

        res = minimize(objective, [x, y], method="Nelder-Mead",
                       options={"maxiter": 120, "xatol": 1e-10, "fatol": 1e-12})
        if res.fun < best[2]:
            x, y = float(res.x[0]), float(res.x[1])
    got = point_score(x, y)
    if got is None:
        got = (best[2], best[3], best[4])
        x, y = best[0], best[1]
    return x, y, (got[1], got[2])


def find_mode_transfer_pair(g: ConfigGraph, report, prefer_high_y: bool = True):
    """Node pair at a shared workspace point lying in different output modes.

    Picks, among close workspace pairs whose configurations live in different
    output-mode components (same input mode when possible), the pair nearest
    the top of the workspace: the setting of a bound arc that acts as a local
    ceiling for one mode and a floor for the other.
    """
    xy = g.nodes[:, :2]
    tree = cKDTree(xy)
    pairs = tree.query_pairs(0.5 * g.epsilon, output_type="ndarray")
    if pairs.size == 0:
        pairs = tree.query_pairs(g.epsilon, output_type="ndarray")
    if pairs.size == 0:
        raise PlannerError("no coincident workspace points in the sample")
    out_lab = report.output_labels
    in_lab = report.input_labels
    a, b = pairs[:, 0], pairs[:, 1]
    diff_out = (out_lab[a] != out_lab[b]) & (out_lab[a] >= 0) & (out_lab[b] >= 0)
    same_in = (in_lab[a] == in_lab[b]) & (in_lab[a] >= 0)
    cand = diff_out & same_in
    if not np.any(cand):
        cand = diff_out
    if not np.any(cand):
        raise PlannerError("no cross-mode pair at a shared workspace point")
    ys = 0.5 * (xy[a, 1] + xy[b, 1])
    ys = np.where(cand, ys, -np.inf if prefer_high_y else np.inf)
    k = int(np.argmax(ys) if prefer_high_y else np.argmin(ys))
    return int(a[k]), int(b[k])


def extract_curves(g: ConfigGraph, d: CanonicalDesign, kind: str,
                   arc_step: float = 0.01, seed: int = 0):
    """Workspace projections of singularity loci traced on the manifold.

    kind: ``workspace_boundary`` and ``output_sing_projection`` trace the
    output-singularity loci {h1 = 0} and {h2 = 0}; ``input_sing_projection``
    traces the input-singularity curve, split per output-mode sign vector.
    Returns a list of (k, 2) polylines in canonical workspace coordinates.
    """
    if kind in ("workspace_boundary", "output_sing_projection"):
        from fivebar.homotopy import solve_total_degree
        from fivebar.polysys import Poly

        F = build_F(d)
        hs = build_h_polys(d)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0]))
        polylines6 = []
        for hp in hs.polys:
            sys = PolySystem(polys=list(F.polys) + [hp], ncols=6)
            seeds = []
            for _ in range(4):
                plane = Poly.const(6, float(rng.normal()))
                for i in range(6):
                    plane = plane + Poly.var(6, i, rng.normal())
                ssys = PolySystem(polys=list(F.polys) + [hp, plane], ncols=6)
                pts, _ = solve_total_degree(ssys, seed=seed)
                if pts.size:
                    im = np.max(np.abs(pts.imag), axis=1)
                    seeds.extend(pts[im <= 1e-8].real)
            if seeds:
                polylines6.extend(
                    singdist.trace_real_curve(sys, np.asarray(seeds), arc_step)
                )
        return [pl[:, :2].copy() for pl in polylines6]
    if kind == "input_sing_projection":
        polylines6 = singdist.trace_singularity_curve(d, arc_step=arc_step, seed=seed)
        out = []
        for pl in polylines6:
            h1, h2 = model.output_sing_values(d, pl)
            sv = np.stack([np.sign(h1), np.sign(h2)], axis=1)
            cuts = np.flatnonzero(np.any(np.diff(sv, axis=0) != 0, axis=1)) + 1
            for chunk in np.split(pl, cuts):
                if chunk.shape[0] >= 2:
                    out.append(chunk[:, :2].copy())
        return out
    raise ValueError(f"unknown curve kind {kind!r}")
