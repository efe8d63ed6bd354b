"""Command-line entry point: ``cascadelab generate|simulate|theory|cascade``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import cascade as cs
from . import svg
from .config import ExperimentConfig, exact_node_count, load_config
from .contagion import ConfigError, TimeSeries, run
from .graph import (EdgeListError, Graph, GraphConstructionError, degree_distribution,
                    generate_config_model, generate_correlated, generate_er,
                    joint_degree_distribution, load_edge_list, save_edge_list)
from .theory import ConvergenceError, IntegrationError, ModelInputs, gap, integrate_ode, iterate_sync

logger = logging.getLogger("cascadelab")

OUT_ENV = "CASCADELAB_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_IO = 0, 2, 3, 4


class NonConvergence(RuntimeError):
    pass


def fmt(v) -> str:
    """Shortest round-trip decimal for floats; plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def timeseries_columns(ts: TimeSeries, prefix: str = "") -> tuple[list[str], np.ndarray]:
    """Header and ``(T + 1, ncol)`` body for a series; the last row is the final state at ``t = inf``."""
    ks = [int(k) for k in ts.degrees]
    header = [f"{prefix}rho1", f"{prefix}rho2"]
    header += [f"{prefix}rho1_k{k}" for k in ks] + [f"{prefix}rho2_k{k}" for k in ks]
    body = np.column_stack([ts.rho1, ts.rho2, ts.rho1_k, ts.rho2_k])
    final = np.concatenate([[ts.final_rho1, ts.final_rho2], ts.final_rho1_k, ts.final_rho2_k])
    return header, np.vstack([body, final])


def write_timeseries(path: Path, ts: TimeSeries, extra: list[tuple[list[str], np.ndarray]] = ()) -> None:
    header, body = timeseries_columns(ts)
    header = ["t"] + header
    cols = [np.append(ts.t, np.inf)[:, None], body]
    for h, b in extra:
        header += h
        cols.append(b)
    write_csv(path, header, np.hstack(cols).tolist())


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def build_network(cfg: ExperimentConfig, seed: int) -> tuple[Graph, list[str]]:
    net = cfg.network
    seed = net.seed if net.seed is not None else seed
    notes: list[str] = []
    if net.kind == "edge_list":
        return load_edge_list(net.path), notes
    if net.kind == "er":
        return generate_er(net.z, net.n, seed), notes
    if net.kind == "config_model":
        dist = net.distribution()
        gen = lambda n: generate_config_model(dist, n, seed)  # noqa: E731
    else:
        joint = net.joint_distribution()
        dist = joint.marginal()
        gen = lambda n: generate_correlated(joint, n, seed)  # noqa: E731
    n = net.n
    if net.exact_proportions:
        n = exact_node_count(dist, net.n)
        if n != net.n:
            notes.append(f"node count adjusted from {net.n} to {n} for exact degree-class proportions")
    return gen(n), notes


def theory_inputs(cfg: ExperimentConfig, graph: Graph | None = None) -> ModelInputs:
    net, spec, r = cfg.network, cfg.model.response(), cfg.run
    if net.uncorrelated:
        return ModelInputs.from_distribution(net.distribution(), spec, r.phi1, r.phi2)
    if net.kind == "correlated":
        return ModelInputs.from_joint(net.joint_distribution(), spec, r.phi1, r.phi2)
    # measured network: keep isolated nodes in the class weights
    dist = degree_distribution(graph)
    joint = joint_degree_distribution(graph)
    pos = {int(k): i for i, k in enumerate(joint.degrees)}
    m = np.zeros((len(dist.degrees), len(dist.degrees)))
    for i, k in enumerate(dist.degrees):
        for j, k2 in enumerate(dist.degrees):
            if int(k) in pos and int(k2) in pos:
                m[i, j] = joint.matrix[pos[int(k)], pos[int(k2)]]
    return ModelInputs(dist.degrees, dist.pk, spec, r.phi1, r.phi2, joint=m)


def model_point(cfg: ExperimentConfig) -> cs.ModelPoint:
    net, mod, r = cfg.network, cfg.model, cfg.run
    if not net.uncorrelated:
        raise ConfigError("sweeps and continuation need an uncorrelated network (kind 'er' or 'config_model')")
    common = dict(beta=mod.beta, r1=mod.r1, r2=mod.r2, sigma1=mod.sigma1, sigma2=mod.sigma2,
                  count_based=mod.variant == "count", phi1=r.phi1, phi2=r.phi2)
    if net.kind == "er":
        return cs.ModelPoint(z=net.z, **common)
    d = net.distribution()
    return cs.ModelPoint(degrees=tuple(int(k) for k in d.degrees), pk=tuple(float(p) for p in d.pk), **common)


def theory_series(cfg: ExperimentConfig, inputs: ModelInputs) -> TimeSeries:
    a = cfg.analysis
    if a.theory == "sync":
        res = iterate_sync(inputs)
        if not res.converged:
            raise NonConvergence("synchronous iteration did not converge")
        return res.to_timeseries()
    ts = integrate_ode(inputs, cfg.run.t_max, dt=a.dt, n_grid=cfg.run.n_grid)
    if not ts.meta["converged"]:
        raise NonConvergence("ODE integration did not settle")
    return ts


def _series_svg(path: Path, ts: TimeSeries, title: str) -> None:
    lines = {"rho1": ts.rho1, "rho2": ts.rho2}
    if len(ts.degrees) <= 3:
        for j, k in enumerate(ts.degrees):
            lines[f"rho1_k{int(k)}"] = ts.rho1_k[:, j]
            lines[f"rho2_k{int(k)}"] = ts.rho2_k[:, j]
    path.write_text(svg.line_chart(ts.t, lines, title=title))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, seed: int, out: Path, threads: int, want_svg: bool, ctx: dict) -> None:
    for prefix, sc in cfg.scenario_configs():
        g, notes = build_network(sc, seed)
        ctx["adjustments"] += notes
        path = out / f"{prefix}_edges.txt"
        with open(path, "wb") as f:
            save_edge_list(g, f)
        ctx["outputs"].append(path.name)
        ctx["networks"][prefix] = {"nodes": g.node_count, "edges": g.edge_count}


def cmd_simulate(cfg: ExperimentConfig, seed: int, out: Path, threads: int, want_svg: bool, ctx: dict) -> None:
    for prefix, sc in cfg.scenario_configs():
        g, notes = build_network(sc, seed)
        ctx["adjustments"] += notes
        ts = run(g, sc.model.response(), sc.run.sim_config(seed), workers=threads)
        path = out / f"{prefix}_simulation.csv"
        write_timeseries(path, ts)
        ctx["outputs"].append(path.name)
        if want_svg:
            _series_svg(out / f"{prefix}_simulation.svg", ts, f"{prefix}: simulation")
            ctx["outputs"].append(f"{prefix}_simulation.svg")


def cmd_theory(cfg: ExperimentConfig, seed: int, out: Path, threads: int, want_svg: bool, ctx: dict) -> None:
    for prefix, sc in cfg.scenario_configs():
        graph = None
        if sc.network.kind == "edge_list" or sc.analysis.overlay:
            graph, notes = build_network(sc, seed)
            ctx["adjustments"] += notes
        ts = theory_series(sc, theory_inputs(sc, graph))
        extra = []
        if sc.analysis.overlay:
            if sc.analysis.theory != "ode":
                raise ConfigError("overlay needs the ODE theory (matching time grids)")
            sim = run(graph, sc.model.response(), sc.run.sim_config(seed), workers=threads)
            extra.append(timeseries_columns(sim, "sim_"))
            extra.append(_gap_columns(ts, sim))
        path = out / f"{prefix}_theory.csv"
        write_timeseries(path, ts, extra)
        ctx["outputs"].append(path.name)
        if want_svg:
            _series_svg(out / f"{prefix}_theory.svg", ts, f"{prefix}: theory")
            ctx["outputs"].append(f"{prefix}_theory.svg")


def _gap_columns(theory: TimeSeries, sim: TimeSeries) -> tuple[list[str], np.ndarray]:
    g = gap(theory, sim)
    final = np.full((1,) + g.shape[1:], np.nan)
    for j, k in enumerate(theory.degrees):
        hits = np.flatnonzero(sim.degrees == k)
        if len(hits):
            final[0, j, 0] = theory.final_rho1_k[j] - sim.final_rho1_k[hits[0]]
            final[0, j, 1] = theory.final_rho2_k[j] - sim.final_rho2_k[hits[0]]
    g = np.concatenate([g, final])
    ks = [int(k) for k in theory.degrees]
    header = [f"gap_rho1_k{k}" for k in ks] + [f"gap_rho2_k{k}" for k in ks]
    return header, np.hstack([g[:, :, 0], g[:, :, 1]])


def cmd_cascade(cfg: ExperimentConfig, seed: int, out: Path, threads: int, want_svg: bool, ctx: dict) -> None:
    prefix = cfg.output.prefix
    a = cfg.analysis
    if not cfg.network.uncorrelated:
        if a.p1 is not None:
            raise ConfigError("sweeps and continuation need an uncorrelated network (kind 'er' or 'config_model')")
        graph = build_network(cfg, seed)[0] if cfg.network.kind == "edge_list" else None
        cond = cs.jacobian_condition(theory_inputs(cfg, graph))
        write_csv(out / f"{prefix}_condition.csv", ["cascades", "value"], [[cond.cascades, cond.value]])
        ctx["outputs"].append(f"{prefix}_condition.csv")
        return
    base = model_point(cfg)
    p = cs.partials_at_zero(base.distribution(), base.response(), base.phi1, base.phi2)
    cond = base.condition()
    write_csv(out / f"{prefix}_condition.csv", ["cascades", "value", "d1g1", "d2g1", "d1g2", "d2g2"],
              [[cond.cascades, cond.value, *p]])
    ctx["outputs"].append(f"{prefix}_condition.csv")
    m = base.reduced_map()
    eq = cs.find_equilibrium(m)
    if not eq.converged:
        raise NonConvergence("equilibrium iteration did not converge")
    r1, r2 = m.rho(eq.q)
    write_csv(out / f"{prefix}_equilibrium.csv", ["q1", "q2", "rho1_inf", "rho2_inf", "stable"],
              [[float(eq.q[0]), float(eq.q[1]), r1, r2, eq.stable]])
    ctx["outputs"].append(f"{prefix}_equilibrium.csv")
    if a.p1 is None:
        return
    d = cs.sweep_diagram(base, a.p1.name, a.p1.values(), a.p2.name, a.p2.values(), workers=threads)
    rows = [[d.p1[i], d.p2[j], d.rho1[i, j], d.rho2[i, j], d.condition[i, j]]
            for i in range(len(d.p1)) for j in range(len(d.p2))]
    write_csv(out / f"{prefix}_sweep.csv", [a.p1.name, a.p2.name, "rho1_inf", "rho2_inf", "cascade_condition_value"],
              rows)
    ctx["outputs"].append(f"{prefix}_sweep.csv")
    ctx["failed_points"] = int(d.failed.sum())
    ctx["forbidden_points"] = int(d.forbidden.sum())
    curves = {}
    if a.boundary and len(d.p1) > 1 and len(d.p2) > 1:
        pts = cs.condition_boundary(base, a.p1.name, (a.p1.min, a.p1.max), a.p2.name, d.p2)
        write_csv(out / f"{prefix}_condition_boundary.csv", [a.p1.name, a.p2.name], pts)
        ctx["outputs"].append(f"{prefix}_condition_boundary.csv")
        curves["cascade condition"] = pts
    if a.continuation and len(d.p1) > 1 and len(d.p2) > 1:
        curve = cs.continue_saddle_node(base, a.p1.name, a.p2.name, (a.p2.min, a.p2.max), (a.p1.min, a.p1.max))
        write_csv(out / f"{prefix}_saddle_node.csv",
                  [a.p1.name, a.p2.name, "q1", "q2", "r1", "r2", "r3", "segment"],
                  [[pt.p1, pt.p2, pt.q1, pt.q2, *map(float, pt.residuals), pt.segment] for pt in curve.points])
        ctx["outputs"].append(f"{prefix}_saddle_node.csv")
        ctx["continuation"] = {"points": len(curve.points), "end_of_branch": curve.end_of_branch,
                               "max_residual": curve.max_residual()}
        curves["saddle-node"] = [(pt.p1, pt.p2) for pt in curve.points]
    if want_svg:
        for name, vals in (("rho1", d.rho1), ("rho2", d.rho2)):
            (out / f"{prefix}_{name}.svg").write_text(
                svg.heatmap(d.p1, d.p2, vals, title=f"{name} at the fixpoint", xlabel=a.p1.name,
                            ylabel=a.p2.name, curves=curves))
            ctx["outputs"].append(f"{prefix}_{name}.svg")


COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "theory": cmd_theory, "cascade": cmd_cascade}


def _versions() -> dict:
    from . import __version__

    out = {"python": platform.python_version(), "numpy": np.__version__, "cascadelab": __version__}
    for pkg in ("scipy", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascadelab", description="Multi-stage complex contagion experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: all CPUs)")
    p.add_argument("--out", default=None, help=f"output directory (default: output.dir, then ${OUT_ENV})")
    p.add_argument("--svg", action="store_true", help="also write SVG charts")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        cfg, digest = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.run.seed
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        threads = args.threads or os.cpu_count() or 1
        out = Path(args.out or cfg.output.dir or os.environ.get(OUT_ENV) or "cascadelab-out")
        out.mkdir(parents=True, exist_ok=True)
        ctx = {"adjustments": [], "outputs": [], "networks": {}}
        COMMANDS[args.command](cfg, seed, out, threads, args.svg or cfg.output.svg, ctx)
        manifest = {
            "command": args.command,
            "config": str(args.config),
            "config_sha256": digest,
            "seed": seed,
            "threads": threads,
            "versions": _versions(),
            "wall_time_s": round(time.perf_counter() - started, 3),
            **ctx,
        }
        name = f"{cfg.output.prefix}_{args.command}_manifest.json"
        (out / name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except (ConfigError, GraphConstructionError) as exc:
        print(f"cascadelab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, ConvergenceError, IntegrationError) as exc:
        print(f"cascadelab: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, EdgeListError) as exc:
        print(f"cascadelab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
