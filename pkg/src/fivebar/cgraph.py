"""Radius graph over a manifold sample, with singularity clearances and modes.

Edges connect sample points within r = 4 * epsilon * sqrt(2n/(n+1)), n = 6,
weighted by ambient distance.  Each node carries its distance to the
input-singularity curve and the signs of the two output-singularity
functions; each edge carries the minimum distance from its chord to the
input-singularity curve.  Pruning at a threshold T and partitioning by sign
changes yield the input-, output-, and combined-mode decompositions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product as iproduct
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from fivebar import model
from fivebar.model import CanonicalDesign, FrameTransform
from fivebar.sampler import EpsilonSample
from fivebar import serialize

RADIUS_FACTOR = 4.0 * math.sqrt(12.0 / 7.0)  # 4 sqrt(2n/(n+1)) at n = 6

NODE_FLAG_SPACING = 1
NODE_FLAG_SOLVE_FAILED = 2
EDGE_FLAG_BOUND_ONLY = 1
EDGE_FLAG_EXCLUDED = 2

_MAGIC = "FBGRAPH1"
_VERSION = 1


class GraphError(Exception):
    pass


def design_to_dict(d: CanonicalDesign) -> dict:
    return {
        "b_x": d.b_x, "l1": d.l1, "l2": d.l2, "l3": d.l3, "l4": d.l4,
        "p": d.p, "q": d.q,
        "frame_angle": d.frame.angle,
        "frame_tx": d.frame.translation[0], "frame_ty": d.frame.translation[1],
    }


def design_from_dict(h: dict) -> CanonicalDesign:
    return CanonicalDesign(
        b_x=h["b_x"], l1=h["l1"], l2=h["l2"], l3=h["l3"], l4=h["l4"],
        p=h["p"], q=h["q"],
        frame=FrameTransform(h["frame_angle"], (h["frame_tx"], h["frame_ty"])),
    )


def design_fingerprint(d: CanonicalDesign) -> str:
    import hashlib

    payload = ",".join(
        f"{v:.17g}" for v in (d.b_x, d.l1, d.l2, d.l3, d.l4, d.p, d.q)
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class ModeReport:
    input_modes: int
    output_modes: int
    io_modes: int
    input_labels: np.ndarray
    output_labels: np.ndarray
    io_labels: np.ndarray
    threshold: float
    debris: Dict[str, int] = field(default_factory=dict)
    min_component: int = 5

    def triple(self) -> Tuple[int, int, int]:
        return (self.input_modes, self.output_modes, self.io_modes)


@dataclass
class ConfigGraph:
    design: CanonicalDesign
    nodes: np.ndarray
    sigma: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    D_c: np.ndarray
    node_flags: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    D_e: np.ndarray
    edge_flags: np.ndarray
    r: float
    epsilon: float
    W: float
    T: float
    meta: dict = field(default_factory=dict)
    _csr: Optional[tuple] = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def adjacency(self):
        """CSR neighbor arrays (indptr, indices, weights, edge_ids), cached."""
        if self._csr is None:
            n = self.n_nodes
            e = self.edges
            deg = np.zeros(n, dtype=np.int64)
            if e.size:
                np.add.at(deg, e[:, 0], 1)
                np.add.at(deg, e[:, 1], 1)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(deg, out=indptr[1:])
            indices = np.zeros(indptr[-1], dtype=np.int64)
            wts = np.zeros(indptr[-1])
            eids = np.zeros(indptr[-1], dtype=np.int64)
            cursor = indptr[:-1].copy()
            for k in range(self.n_edges):
                i, j = e[k]
                indices[cursor[i]] = j
                wts[cursor[i]] = self.weights[k]
                eids[cursor[i]] = k
                cursor[i] += 1
                indices[cursor[j]] = i
                wts[cursor[j]] = self.weights[k]
                eids[cursor[j]] = k
                cursor[j] += 1
            self._csr = (indptr, indices, wts, eids)
        return self._csr

    def save(self, path):
        header = {
            "design": design_to_dict(self.design),
            "epsilon": self.epsilon,
            "W": self.W,
            "r": self.r,
            "T": self.T,
            "n": 6,
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "meta": _json_safe(self.meta),
        }
        arrays = {
            "nodes": self.nodes,
            "sigma": self.sigma.astype(np.int8),
            "s1": self.s1.astype(np.int8),
            "s2": self.s2.astype(np.int8),
            "D_c": self.D_c,
            "node_flags": self.node_flags.astype(np.uint8),
            "edges": self.edges.astype(np.int64),
            "weights": self.weights,
            "D_e": self.D_e,
            "edge_flags": self.edge_flags.astype(np.uint8),
        }
        serialize.write_container(path, _MAGIC, _VERSION, header, arrays)

    @classmethod
    def load(cls, path) -> "ConfigGraph":
        header, arr = serialize.read_container(path, _MAGIC, _VERSION)
        return cls(
            design=design_from_dict(header["design"]),
            nodes=arr["nodes"],
            sigma=arr["sigma"],
            s1=arr["s1"],
            s2=arr["s2"],
            D_c=arr["D_c"],
            node_flags=arr["node_flags"],
            edges=arr["edges"],
            weights=arr["weights"],
            D_e=arr["D_e"],
            edge_flags=arr["edge_flags"],
            r=header["r"],
            epsilon=header["epsilon"],
            W=header["W"],
            T=header["T"],
            meta=header.get("meta", {}),
        )

    def export_text(self, path):
        """Interoperable plain-text dump: one node or edge per line.

        node lines: ``n <id> <x> <y> <cphi> <sphi> <cpsi> <spsi> <D_c> <s1> <s2> <sigma> <flags>``
        edge lines: ``e <i> <j> <weight> <D_e> <flags>``
        """
        with open(path, "w") as fh:
            fh.write(f"# fivebar graph  nodes={self.n_nodes} edges={self.n_edges} "
                     f"epsilon={self.epsilon!r} r={self.r!r} T={self.T!r}\n")
            for i in range(self.n_nodes):
                z = self.nodes[i]
                fh.write(
                    "n %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d %d %d %d\n"
                    % (i, *z, self.D_c[i], self.s1[i], self.s2[i], self.sigma[i],
                       self.node_flags[i])
                )
            for k in range(self.n_edges):
                fh.write(
                    "e %d %d %.17g %.17g %d\n"
                    % (self.edges[k, 0], self.edges[k, 1], self.weights[k],
                       self.D_e[k], self.edge_flags[k])
                )


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def radius_for_epsilon(epsilon: float) -> float:
    return RADIUS_FACTOR * epsilon


def _pairs_within(Z: np.ndarray, r: float):
    """All index pairs (i < j) with |Z_i - Z_j| <= r, via a uniform cell grid."""
    n, dim = Z.shape
    cell = r
    coords = np.floor(Z / cell).astype(np.int64)
    cells: Dict[bytes, np.ndarray] = {}
    order = np.lexsort(coords.T[::-1])
    sorted_coords = coords[order]
    breaks = np.flatnonzero(np.any(np.diff(sorted_coords, axis=0) != 0, axis=1)) + 1
    groups = np.split(order, breaks)
    for g in groups:
        cells[coords[g[0]].tobytes()] = g
    offsets = [np.array(o, dtype=np.int64) for o in iproduct((-1, 0, 1), repeat=dim)]
    offsets = [o for o in offsets if tuple(o) > (0,) * dim or tuple(o) == (0,) * dim]
    out_i: List[np.ndarray] = []
    out_j: List[np.ndarray] = []
    r2 = r * r
    for key, gi in cells.items():
        base = np.frombuffer(key, dtype=np.int64)
        Zi = Z[gi]
        for off in offsets:
            if np.all(off == 0):
                if gi.size < 2:
                    continue
                diff = Zi[:, None, :] - Zi[None, :, :]
                d2 = np.einsum("ijk,ijk->ij", diff, diff)
                ii, jj = np.triu_indices(gi.size, k=1)
                ok = d2[ii, jj] <= r2
                out_i.append(gi[ii[ok]])
                out_j.append(gi[jj[ok]])
            else:
                gj = cells.get((base + off).tobytes())
                if gj is None:
                    continue
                Zj = Z[gj]
                diff = Zi[:, None, :] - Zj[None, :, :]
                d2 = np.einsum("ijk,ijk->ij", diff, diff)
                ii, jj = np.nonzero(d2 <= r2)
                out_i.append(gi[ii])
                out_j.append(gj[jj])
    if not out_i:
        return np.zeros((0, 2), dtype=np.int64)
    I = np.concatenate(out_i)
    J = np.concatenate(out_j)
    lo = np.minimum(I, J)
    hi = np.maximum(I, J)
    pairs = np.column_stack([lo, hi])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def _sign_labels(h: np.ndarray, edges: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Signs of h with near-zero entries taking their nearest neighbor's sign."""
    s = np.sign(h)
    unsure = np.abs(h) < tol
    s[unsure] = 0
    if np.any(unsure) and edges.size:
        # iterate: adopt the sign of any decided neighbor
        for _ in range(8):
            undecided = np.flatnonzero(s == 0)
            if undecided.size == 0:
                break
            changed = False
            for a, b in ((0, 1), (1, 0)):
                mask = (s[edges[:, a]] == 0) & (s[edges[:, b]] != 0)
                if np.any(mask):
                    s[edges[mask, a]] = s[edges[mask, b]]
                    changed = True
            if not changed:
                break
    s[s == 0] = 1
    return s.astype(np.int8)


def build_radius_graph(sample: EpsilonSample, design: CanonicalDesign) -> ConfigGraph:
    """Connect all sample pairs within r(epsilon); weights are ambient lengths."""
    if sample.n_points == 0:
        raise GraphError("empty sample")
    r = radius_for_epsilon(sample.epsilon)
    pairs = _pairs_within(sample.points, r)
    w = np.linalg.norm(sample.points[pairs[:, 0]] - sample.points[pairs[:, 1]], axis=1)
    n = sample.n_points
    s1 = _sign_labels(sample.h1, pairs)
    s2 = _sign_labels(sample.h2, pairs)
    node_flags = np.where(sample.flagged, NODE_FLAG_SPACING, 0).astype(np.uint8)
    return ConfigGraph(
        design=design,
        nodes=sample.points.copy(),
        sigma=sample.sigma.astype(np.int8),
        s1=s1,
        s2=s2,
        D_c=np.full(n, np.nan),
        node_flags=node_flags,
        edges=pairs,
        weights=w,
        D_e=np.full(pairs.shape[0], np.nan),
        edge_flags=np.zeros(pairs.shape[0], dtype=np.uint8),
        r=r,
        epsilon=sample.epsilon,
        W=sample.W,
        T=r,
        meta={"sample": _json_safe(sample.metadata)},
    )


def attach_clearances(g: ConfigGraph, dist, T: Optional[float] = None,
                      progress=None) -> ConfigGraph:
    """Fill node and edge clearances using a singularity-distance service.

    Since the segment contains its endpoints, every edge satisfies
    min(D_c) - weight/2 <= D_e <= min(D_c).  Edges whose lower bound already
    clears T keep the bound; edges whose upper bound falls below T are
    pruned regardless of the interior minimum, so both store the bound and
    skip the solve.  Only edges whose endpoint clearances straddle T get the
    exact interior solve.
    """
    T = g.T if T is None else float(T)
    try:
        D_c, node_fail, feet = dist.node_distances(g.nodes, return_feet=True)
    except TypeError:
        D_c, node_fail = dist.node_distances(g.nodes)
        feet = None
    g.D_c = D_c
    g.node_flags = (g.node_flags | np.where(node_fail, NODE_FLAG_SOLVE_FAILED, 0)).astype(np.uint8)

    mn = np.minimum(D_c[g.edges[:, 0]], D_c[g.edges[:, 1]])
    # distance to the curve is 1-Lipschitz along the chord, giving the
    # two-sided bound D_e >= (D_c(i) + D_c(j) - weight) / 2
    lb = np.maximum(
        mn - 0.5 * g.weights,
        0.5 * (D_c[g.edges[:, 0]] + D_c[g.edges[:, 1]] - g.weights),
    )
    # each endpoint's minimizing curve point bounds D_e from above through
    # its distance to the chord
    ub = mn.copy()
    if feet is not None:
        for side in (0, 1):
            w_star = feet[g.edges[:, side]]
            okf = np.all(np.isfinite(w_star), axis=1)
            if not np.any(okf):
                continue
            a = g.nodes[g.edges[okf, 0]]
            b = g.nodes[g.edges[okf, 1]]
            u = b - a
            uu = np.maximum(np.einsum("ij,ij->i", u, u), 1e-300)
            t = np.clip(np.einsum("ij,ij->i", w_star[okf] - a, u) / uu, 0.0, 1.0)
            dist_seg = np.linalg.norm(w_star[okf] - (a + t[:, None] * u), axis=1)
            ub[okf] = np.minimum(ub[okf], dist_seg)

    endpoint_bad = node_fail[g.edges[:, 0]] | node_fail[g.edges[:, 1]]
    skip_far = (lb >= T) & ~endpoint_bad
    skip_doomed = (ub < T) & ~endpoint_bad & ~skip_far
    skip = skip_far | skip_doomed
    solve_idx = np.flatnonzero(~skip & ~endpoint_bad)

    D_e = np.where(skip_far, lb, np.where(skip_doomed, ub, np.nan))
    edge_flags = np.where(skip, EDGE_FLAG_BOUND_ONLY, 0).astype(np.uint8)
    edge_flags |= np.where(endpoint_bad, EDGE_FLAG_EXCLUDED, 0).astype(np.uint8)

    if solve_idx.size:
        c0 = g.nodes[g.edges[solve_idx, 0]]
        c1 = g.nodes[g.edges[solve_idx, 1]]
        d_int, fail = dist.interior_distances(c0, c1, progress=progress)
        D_e[solve_idx] = np.minimum(mn[solve_idx], d_int)
        edge_flags[solve_idx] |= np.where(fail, EDGE_FLAG_EXCLUDED, 0).astype(np.uint8)
    g.D_e = D_e
    g.edge_flags = edge_flags
    g.T = T
    g._csr = None
    return g


def prune(g: ConfigGraph, T: Optional[float] = None) -> ConfigGraph:
    """Remove edges with clearance below T, then drop isolated nodes."""
    T = g.T if T is None else float(T)
    if T < 0:
        raise GraphError("threshold must be nonnegative")
    if np.any(np.isnan(g.D_e)):
        raise GraphError("clearances not attached")
    keep = (g.D_e >= T) & ((g.edge_flags & EDGE_FLAG_EXCLUDED) == 0)
    edges = g.edges[keep]
    used = np.zeros(g.n_nodes, dtype=bool)
    used[edges.ravel()] = True
    remap = -np.ones(g.n_nodes, dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    new_edges = remap[edges]
    parent = np.flatnonzero(used)
    return ConfigGraph(
        design=g.design,
        nodes=g.nodes[used],
        sigma=g.sigma[used],
        s1=g.s1[used],
        s2=g.s2[used],
        D_c=g.D_c[used],
        node_flags=g.node_flags[used],
        edges=new_edges,
        weights=g.weights[keep],
        D_e=g.D_e[keep],
        edge_flags=g.edge_flags[keep],
        r=g.r,
        epsilon=g.epsilon,
        W=g.W,
        T=T,
        meta={**g.meta, "pruned_at": T, "parent_index": parent.tolist()},
    )


def _component_count(n: int, edges: np.ndarray, active_only: bool,
                     min_component: int):
    """(count, labels, debris): connected components with small ones set aside."""
    if n == 0:
        return 0, np.zeros(0, dtype=np.int64), 0
    if edges.size:
        m = csr_matrix(
            (np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])), shape=(n, n)
        )
    else:
        m = csr_matrix((n, n))
    ncomp, labels = connected_components(m, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    if active_only:
        used = np.zeros(n, dtype=bool)
        if edges.size:
            used[edges.ravel()] = True
        isolated_groups = np.unique(labels[~used]) if np.any(~used) else np.zeros(0, int)
        sizes[isolated_groups] = 0
    big = sizes >= min_component
    debris = int(np.sum((sizes > 0) & ~big))
    out_labels = -np.ones(n, dtype=np.int64)
    new_id = {old: k for k, old in enumerate(np.flatnonzero(big))}
    for i in range(n):
        out_labels[i] = new_id.get(labels[i], -1)
    return int(big.sum()), out_labels, debris


def mode_report(g: ConfigGraph, T: Optional[float] = None,
                min_component: int = 5) -> ModeReport:
    """Input, output, and combined mode counts of the weighted graph.

    Input modes partition by pruning at T; output modes partition by removing
    edges whose endpoints differ in the output-singularity sign vector;
    combined modes remove the union.  Components smaller than min_component
    nodes are counted separately as numerical debris.
    """
    T = g.T if T is None else float(T)
    if np.any(np.isnan(g.D_e)):
        raise GraphError("clearances not attached")
    ok = (g.edge_flags & EDGE_FLAG_EXCLUDED) == 0
    e_in = g.edges[(g.D_e >= T) & ok]
    same_sign = (g.s1[g.edges[:, 0]] == g.s1[g.edges[:, 1]]) & (
        g.s2[g.edges[:, 0]] == g.s2[g.edges[:, 1]]
    )
    e_out = g.edges[same_sign & ok]
    e_io = g.edges[same_sign & (g.D_e >= T) & ok]
    n = g.n_nodes
    n_in, lab_in, deb_in = _component_count(n, e_in, True, min_component)
    n_out, lab_out, deb_out = _component_count(n, e_out, False, min_component)
    n_io, lab_io, deb_io = _component_count(n, e_io, True, min_component)
    return ModeReport(
        input_modes=n_in,
        output_modes=n_out,
        io_modes=n_io,
        input_labels=lab_in,
        output_labels=lab_out,
        io_labels=lab_io,
        threshold=T,
        debris={"input": deb_in, "output": deb_out, "io": deb_io},
        min_component=min_component,
    )
