"""Pipeline driver: sample -> graph -> weight -> prune -> modes -> plan -> report.

Configuration lives in one TOML file whose [design] keys use the drawing
symbols a_x, a_y, b_x, b_y, l1..l4, p, q.  Every stage writes a versioned
binary artifact into the work directory plus a deterministic text summary;
timings go only to stdout so artifacts stay byte-reproducible.

Exit codes: 0 success, 2 configuration or validation error, 3 missing
prerequisite artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from fivebar import cgraph, homotopy as ht, model, planner, sampler, serialize, singdist
from fivebar.cgraph import ConfigGraph, design_fingerprint
from fivebar.model import CanonicalDesign, FiveBarDesign

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

_SAMPLE_MAGIC = "FBSAMPL1"


@dataclass
class ProjectConfig:
    design: FiveBarDesign
    seed: int = 0
    parallelism: int = 1
    workdir: Path = Path("fivebar-run")
    epsilon: Optional[float] = None
    eps_factor: float = 0.99
    wfs_budget: int = 96
    base_grid: int = 64
    depth_cap: int = 12
    threshold: Optional[float] = None

    def validate(self):
        self.design.validate()
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("sampling.epsilon must be positive")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("graph.threshold must be nonnegative")
        if self.parallelism < 1:
            raise ValueError("run.parallelism must be at least 1")
        return self

    # artifact locations
    @property
    def sample_path(self) -> Path:
        return self.workdir / "sample.bin"

    @property
    def graph_path(self) -> Path:
        return self.workdir / "graph.bin"

    @property
    def weighted_path(self) -> Path:
        return self.workdir / "weighted.bin"

    @property
    def pruned_path(self) -> Path:
        return self.workdir / "pruned.bin"

    @property
    def startset_path(self) -> Path:
        return self.workdir / "startsets.bin"

    @property
    def modes_path(self) -> Path:
        return self.workdir / "modes.json"


def load_config(path) -> ProjectConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    try:
        dsn = raw["design"]
        design = FiveBarDesign(
            a_x=float(dsn["a_x"]), a_y=float(dsn["a_y"]),
            b_x=float(dsn["b_x"]), b_y=float(dsn["b_y"]),
            l1=float(dsn["l1"]), l2=float(dsn["l2"]),
            l3=float(dsn["l3"]), l4=float(dsn["l4"]),
            p=float(dsn["p"]), q=float(dsn["q"]),
        )
    except KeyError as e:
        raise ValueError(f"config missing design key {e}")
    run = raw.get("run", {})
    smp = raw.get("sampling", {})
    grf = raw.get("graph", {})
    cfg = ProjectConfig(
        design=design,
        seed=int(run.get("seed", 0)),
        parallelism=int(run.get("parallelism", 1)),
        workdir=Path(run.get("workdir", "fivebar-run")),
        epsilon=(float(smp["epsilon"]) if "epsilon" in smp else None),
        eps_factor=float(smp.get("eps_factor", 0.99)),
        wfs_budget=int(smp.get("wfs_budget", 96)),
        base_grid=int(smp.get("base_grid", 64)),
        depth_cap=int(smp.get("depth_cap", 12)),
        threshold=(float(grf["threshold"]) if "threshold" in grf else None),
    )
    return cfg.validate()


def _save_sample(path, s: sampler.EpsilonSample, d: CanonicalDesign, seed: int):
    header = {
        "design": cgraph.design_to_dict(d),
        "epsilon": s.epsilon,
        "W": s.W,
        "seed": seed,
        "metadata": cgraph._json_safe(s.metadata),
    }
    arrays = {
        "points": s.points,
        "sigma": s.sigma.astype(np.int8),
        "h1": s.h1,
        "h2": s.h2,
        "flagged": s.flagged.astype(np.uint8),
    }
    serialize.write_container(path, _SAMPLE_MAGIC, 1, header, arrays)


def _load_sample(path):
    header, arr = serialize.read_container(path, _SAMPLE_MAGIC, 1)
    s = sampler.EpsilonSample(
        points=arr["points"],
        epsilon=header["epsilon"],
        W=header["W"],
        sigma=arr["sigma"],
        h1=arr["h1"],
        h2=arr["h2"],
        flagged=arr["flagged"].astype(bool),
        metadata=header.get("metadata", {}),
    )
    return s, cgraph.design_from_dict(header["design"])


def _summary(path: Path, lines):
    path.write_text("".join(f"{ln}\n" for ln in lines))


def _require(path: Path, what: str):
    if not path.exists():
        print(f"error: missing {what} artifact {path}; run the earlier stage first",
              file=sys.stderr)
        raise SystemExit(EXIT_MISSING)


def cmd_sample(cfg: ProjectConfig) -> int:
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    d = model.canonicalize(cfg.design)
    t0 = time.time()
    if cfg.epsilon is not None:
        eps, W = cfg.epsilon, float("nan")
        print(f"sampling at explicit epsilon {eps}")
    else:
        W, wit = sampler.estimate_wfs(d, budget=cfg.wfs_budget, seed=cfg.seed)
        eps = cfg.eps_factor * W / 2.0
        print(f"feature size estimate W = {W:.6f} from {len(wit)} bottlenecks; "
              f"epsilon = {eps:.6f}")
    s = sampler.epsilon_sample(d, eps, W=W, base_grid=cfg.base_grid,
                               depth_cap=cfg.depth_cap)
    _save_sample(cfg.sample_path, s, d, cfg.seed)
    lines = [
        f"nodes {s.n_points}",
        f"epsilon {eps:.12g}",
        f"W {W:.12g}",
        f"generated {s.metadata['n_generated']}",
        f"max_depth {s.metadata['max_depth_used']}",
    ]
    _summary(cfg.workdir / "sample.summary.txt", lines)
    print(f"sample: {s.n_points} configurations ({time.time()-t0:.1f}s) "
          f"-> {cfg.sample_path}")
    return EXIT_OK


def cmd_graph(cfg: ProjectConfig) -> int:
    _require(cfg.sample_path, "sample")
    s, d = _load_sample(cfg.sample_path)
    t0 = time.time()
    g = cgraph.build_radius_graph(s, d)
    if cfg.threshold is not None:
        g.T = cfg.threshold
    g.save(cfg.graph_path)
    _summary(cfg.workdir / "graph.summary.txt", [
        f"nodes {g.n_nodes}",
        f"edges {g.n_edges}",
        f"r {g.r:.12g}",
        f"T {g.T:.12g}",
    ])
    print(f"graph: {g.n_nodes} nodes, {g.n_edges} edges, r = {g.r:.6f} "
          f"({time.time()-t0:.1f}s) -> {cfg.graph_path}")
    return EXIT_OK


def _distance_service(cfg: ProjectConfig, d: CanonicalDesign):
    fj, sets = singdist.ab_initio(
        d, seed=cfg.seed, cache_path=cfg.startset_path, workers=cfg.parallelism
    )
    return singdist.SingularityDistanceService(d, fj, sets, workers=cfg.parallelism)


def cmd_weight(cfg: ProjectConfig) -> int:
    _require(cfg.graph_path, "graph")
    g = ConfigGraph.load(cfg.graph_path)
    t0 = time.time()
    try:
        svc = _distance_service(cfg, g.design)
    except (singdist.AbInitioError, ht.UnhealthyStartError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"start sets ready ({time.time()-t0:.1f}s)")
    t0 = time.time()

    done = {"n": 0}

    def progress(done_edges, total):
        if done_edges - done["n"] >= 2000:
            done["n"] = done_edges
            print(f"  edge clearances {done_edges}/{total} ({time.time()-t0:.0f}s)")

    g = cgraph.attach_clearances(g, svc, T=cfg.threshold, progress=progress)
    g.save(cfg.weighted_path)
    nb = int((g.edge_flags & cgraph.EDGE_FLAG_BOUND_ONLY).sum())
    nx = int((g.edge_flags & cgraph.EDGE_FLAG_EXCLUDED).sum())
    _summary(cfg.workdir / "weight.summary.txt", [
        f"nodes {g.n_nodes}",
        f"edges {g.n_edges}",
        f"bound_only {nb}",
        f"excluded {nx}",
        f"T {g.T:.12g}",
    ])
    print(f"weight: {g.n_edges} edges ({nb} bounded without solving, {nx} excluded) "
          f"({time.time()-t0:.1f}s) -> {cfg.weighted_path}")
    return EXIT_OK


def cmd_prune(cfg: ProjectConfig) -> int:
    _require(cfg.weighted_path, "weighted graph")
    g = ConfigGraph.load(cfg.weighted_path)
    T = cfg.threshold if cfg.threshold is not None else g.T
    gp = cgraph.prune(g, T)
    gp.save(cfg.pruned_path)
    _summary(cfg.workdir / "prune.summary.txt", [
        f"nodes {gp.n_nodes}",
        f"edges {gp.n_edges}",
        f"T {T:.12g}",
    ])
    print(f"prune: kept {gp.n_nodes} nodes, {gp.n_edges} edges at T = {T:.6f} "
          f"-> {cfg.pruned_path}")
    return EXIT_OK


def cmd_modes(cfg: ProjectConfig) -> int:
    _require(cfg.weighted_path, "weighted graph")
    g = ConfigGraph.load(cfg.weighted_path)
    T = cfg.threshold if cfg.threshold is not None else g.T
    rep = cgraph.mode_report(g, T)
    out = {
        "input_modes": rep.input_modes,
        "output_modes": rep.output_modes,
        "io_modes": rep.io_modes,
        "threshold": rep.threshold,
        "debris": rep.debris,
        "min_component": rep.min_component,
    }
    cfg.modes_path.write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")
    print(f"modes: input {rep.input_modes}, output {rep.output_modes}, "
          f"combined {rep.io_modes} (debris {rep.debris})")
    return EXIT_OK


def _parse_query_config(text: str) -> np.ndarray:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) == 6:
        return np.asarray(vals)
    if len(vals) == 4:
        x, y, phi, psi = vals
        return np.array([x, y, math.cos(phi), math.sin(phi),
                         math.cos(psi), math.sin(psi)])
    raise ValueError("query configuration needs 6 values (z) or 4 (x y phi psi)")


def cmd_plan(cfg: ProjectConfig, args) -> int:
    _require(cfg.weighted_path, "weighted graph")
    g = ConfigGraph.load(cfg.weighted_path)
    T = cfg.threshold if cfg.threshold is not None else g.T
    try:
        svc = _distance_service(cfg, g.design)
    except (singdist.AbInitioError, ht.UnhealthyStartError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    if args.query == "explicit":
        if not (args.start and args.goal):
            print("error: explicit query needs --start and --goal", file=sys.stderr)
            return EXIT_CONFIG
        z0 = _parse_query_config(args.start)
        z1 = _parse_query_config(args.goal)
        name = "explicit"
    elif args.query == "perpendicular-ellipse":
        x, y, (ca, cb) = planner.find_perpendicular_ellipse_point(g, g.design)
        z0, z1 = ca.to_array(), cb.to_array()
        print(f"perpendicular-ellipse point: ({x:.6f}, {y:.6f})")
        name = "perpendicular_ellipse"
    elif args.query == "mode-transfer":
        rep = cgraph.mode_report(g, T)
        i, j = planner.find_mode_transfer_pair(g, rep)
        z0, z1 = g.nodes[i], g.nodes[j]
        print(f"mode-transfer pair: nodes {i} and {j} at "
              f"({g.nodes[i,0]:.4f}, {g.nodes[i,1]:.4f})")
        name = "mode_transfer"
    else:
        print(f"error: unknown query {args.query}", file=sys.stderr)
        return EXIT_CONFIG

    gp = cgraph.prune(g, T) if args.avoid else g
    try:
        res = planner.plan(gp, z0, z1, avoid=args.avoid, service=svc, T=T)
    except planner.NoPathError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    suffix = "avoid" if args.avoid else "direct"
    out = cfg.workdir / f"path_{name}_{suffix}.txt"
    with open(out, "w") as fh:
        fh.write(f"# length {res.total_length!r} min_clearance {res.min_clearance!r} "
                 f"ambient {np.linalg.norm(z1 - z0)!r}\n")
        for nid, z, sv in zip(res.node_ids, res.configurations, res.modes_crossed):
            fh.write("p %d %.17g %.17g %.17g %.17g %.17g %.17g %d %d\n"
                     % (nid, *z, sv[0], sv[1]))
    xy = cfg.workdir / f"path_{name}_{suffix}.xy.tsv"
    with open(xy, "w") as fh:
        for z in res.configurations:
            fh.write(f"{z[0]:.17g}\t{z[1]:.17g}\n")
    print(f"plan[{suffix}]: {len(res.node_ids)} nodes, length {res.total_length:.6f}, "
          f"min clearance {res.min_clearance:.6f}, "
          f"mode changes {res.n_mode_changes} -> {out}")
    return EXIT_OK


def cmd_curves(cfg: ProjectConfig, args) -> int:
    _require(cfg.weighted_path, "weighted graph")
    g = ConfigGraph.load(cfg.weighted_path)
    curves = planner.extract_curves(g, g.design, args.kind, seed=cfg.seed)
    out = cfg.workdir / f"curves_{args.kind}.txt"
    with open(out, "w") as fh:
        for k, pl in enumerate(curves):
            for x, y in pl:
                fh.write(f"{k}\t{x:.17g}\t{y:.17g}\n")
    print(f"curves[{args.kind}]: {len(curves)} polylines -> {out}")
    return EXIT_OK


def cmd_report(cfg: ProjectConfig) -> int:
    _require(cfg.weighted_path, "weighted graph")
    g = ConfigGraph.load(cfg.weighted_path)
    T = cfg.threshold if cfg.threshold is not None else g.T
    rep = cgraph.mode_report(g, T)
    gp = cgraph.prune(g, T)
    lines = [
        "fivebar pipeline report",
        f"design fingerprint {design_fingerprint(g.design)}",
        f"W {g.W:.12g}",
        f"epsilon {g.epsilon:.12g}",
        f"r {g.r:.12g}",
        f"T {T:.12g}",
        f"nodes {g.n_nodes}",
        f"edges {g.n_edges}",
        f"pruned_nodes {gp.n_nodes}",
        f"pruned_edges {gp.n_edges}",
        f"input_modes {rep.input_modes}",
        f"output_modes {rep.output_modes}",
        f"io_modes {rep.io_modes}",
    ]
    for p in sorted(cfg.workdir.glob("path_*.txt")):
        first = p.read_text().splitlines()[0]
        lines.append(f"path {p.name} {first.lstrip('# ')}")
    out = cfg.workdir / "report.txt"
    _summary(out, lines)
    print("\n".join(lines))
    print(f"-> {out}")
    return EXIT_OK


def cmd_export(cfg: ProjectConfig, args) -> int:
    src = {"graph": cfg.graph_path, "weighted": cfg.weighted_path,
           "pruned": cfg.pruned_path}[args.stage]
    _require(src, args.stage)
    g = ConfigGraph.load(src)
    out = cfg.workdir / f"{args.stage}.txt"
    g.export_text(out)
    print(f"export: {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fivebar",
        description="Configuration-manifold graphs and singularity-aware "
                    "path planning for five-bar linkages",
    )
    parser.add_argument("-c", "--config", required=True, help="TOML project file")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", help="estimate feature size and sample the manifold")
    sub.add_parser("graph", help="build the radius graph")
    sub.add_parser("weight", help="attach singularity clearances")
    sub.add_parser("prune", help="remove low-clearance edges")
    sub.add_parser("modes", help="count input/output/combined modes")
    p_plan = sub.add_parser("plan", help="shortest-path query")
    p_plan.add_argument("--query", default="explicit",
                        choices=["explicit", "perpendicular-ellipse", "mode-transfer"])
    p_plan.add_argument("--start", help="start configuration (6 values, or x y phi psi)")
    p_plan.add_argument("--goal", help="goal configuration")
    p_plan.add_argument("--no-avoid", dest="avoid", action="store_false",
                        help="plan on the unpruned graph")
    p_curves = sub.add_parser("curves", help="trace singularity curves to polylines")
    p_curves.add_argument("--kind", default="workspace_boundary",
                          choices=["workspace_boundary", "input_sing_projection",
                                   "output_sing_projection"])
    p_export = sub.add_parser("export", help="plain-text dump of a graph artifact")
    p_export.add_argument("--stage", default="weighted",
                          choices=["graph", "weighted", "pruned"])
    sub.add_parser("report", help="bundle statistics from existing artifacts")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError, model.DegenerateDesignError, tomllib.TOMLDecodeError) as e:
        print(f"error: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "graph":
            return cmd_graph(cfg)
        if args.command == "weight":
            return cmd_weight(cfg)
        if args.command == "prune":
            return cmd_prune(cfg)
        if args.command == "modes":
            return cmd_modes(cfg)
        if args.command == "plan":
            return cmd_plan(cfg, args)
        if args.command == "curves":
            return cmd_curves(cfg, args)
        if args.command == "export":
            return cmd_export(cfg, args)
        if args.command == "report":
            return cmd_report(cfg)
    except serialize.ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (sampler.SamplerError, singdist.SingularityDistanceError,
            ht.HomotopyError, cgraph.GraphError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
