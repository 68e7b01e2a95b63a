"""Configuration-driven driver.

A TOML file names the norm, obstacle, grid, and p-schedule; subcommands
run the continuation solve (`solve`), the verification checks
(`check`), or a mesh/schedule refinement study (`study`).  Outputs are
plain files: fields as CSV and binary, contours and growth tables as
CSV, plus a line-oriented summary  check=<name> status=<pass|fail|
hypothesis_unverified> value=... tol=...  whose failures set the exit
status.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .flow import (
    area_growth_series,
    extract_sublevel,
    minimality_spot_check,
    weak_curvature_residual,
)
from .grid import DEFAULT_MASK_SHIFT, ConvexPolygon, GridDomain
from .norms import PolarNorm, make_norm
from .solver import SolverConfig, WulffShape, continuation_solve, log_transform

OUTPUT_ROOT_ENV = "IAMCF_OUTPUT_ROOT"

KNOWN_CHECKS = (
    "barriers",
    "maxgrad",
    "inradius_bound",
    "boundary_curvature",
    "growth",
    "minimality",
    "weak_curvature",
    "p_convergence",
)


class ConfigError(ValueError):
    """Raised with the offending field spelled out."""


def bundled_config(name):
    """Path to a config shipped with the package, e.g. 'wulff_euclid_2d'."""
    p = Path(__file__).parent / "configs" / f"{name}.toml"
    if not p.is_file():
        have = sorted(q.stem for q in p.parent.glob("*.toml"))
        raise ConfigError(
            f"no bundled config {name!r}; available: " + ", ".join(have)
        )
    return p


@dataclass
class RunConfig:
    name: str
    norm_spec: dict
    obstacle_spec: dict
    box: list
    resolution: int
    mask_shift: float
    schedule: list
    delta_reg: float | None
    max_iter: int
    checks: list
    times: list
    trials: int
    seed: int
    out_dir: str | None
    raw: dict = dataclass_field(default_factory=dict)


def _need(table, key, where, kind=None):
    if key not in table:
        raise ConfigError(f"{where}.{key}: missing")
    v = table[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, "
                          f"got {type(v).__name__}")
    return v


def _no_strays(table, allowed, where):
    strays = sorted(set(table) - set(allowed))
    if strays:
        raise ConfigError(
            f"{where}: unknown key(s) {', '.join(strays)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def load_config(path):
    path = Path(path)
    if not path.is_file() and path.suffix == "" and path.name == str(path):
        path = bundled_config(path.name)
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e

    _no_strays(raw, ("norm", "obstacle", "grid", "solver", "flow",
                     "checks", "output"), path.stem)

    norm_spec = _need(raw, "norm", path.stem, dict)
    kind = _need(norm_spec, "kind", "norm", str)
    per_kind = {"euclidean": (), "ellipsoidal": ("A",),
                "lq": ("q", "delta")}
    if kind in per_kind:
        _no_strays(norm_spec, ("kind", "dim") + per_kind[kind], "norm")

    obst = _need(raw, "obstacle", path.stem, dict)
    okind = _need(obst, "type", "obstacle", str)
    if okind == "wulff":
        _no_strays(obst, ("type", "radius", "center"), "obstacle")
        r = _need(obst, "radius", "obstacle", (int, float))
        if r <= 0:
            raise ConfigError("obstacle.radius: must be positive")
    elif okind == "polygon":
        _no_strays(obst, ("type", "vertices"), "obstacle")
        _need(obst, "vertices", "obstacle", list)
    else:
        raise ConfigError(f"obstacle.type: unknown {okind!r}")

    grid = _need(raw, "grid", path.stem, dict)
    _no_strays(grid, ("box", "resolution", "mask_shift"), "grid")
    box = _need(grid, "box", "grid", list)
    resolution = _need(grid, "resolution", "grid", int)

    solver = _need(raw, "solver", path.stem, dict)
    _no_strays(solver, ("schedule", "p_final", "delta_reg", "max_iter"),
               "solver")
    _no_strays(raw.get("flow", {}), ("times", "trials", "seed"), "flow")
    _no_strays(raw.get("checks", {}), ("run",), "checks")
    _no_strays(raw.get("output", {}), ("directory",), "output")
    schedule = solver.get("schedule")
    if schedule is not None and "p_final" in solver:
        raise ConfigError("solver: give either schedule or p_final, not both")
    if schedule is None:
        schedule = [_need(solver, "p_final", "solver", (int, float))]
    if not all(isinstance(p, (int, float)) for p in schedule):
        raise ConfigError("solver.schedule: entries must be numbers")
    if any(not 1.0 < p < 2.0 for p in schedule):
        raise ConfigError(
            "solver.schedule: every p must satisfy 1 < p < n = 2"
        )
    if any(b <= a for a, b in zip(schedule[1:], schedule[:-1])):
        raise ConfigError("solver.schedule: must decrease strictly")

    checks = raw.get("checks", {}).get("run", [])
    for c in checks:
        if c not in KNOWN_CHECKS:
            raise ConfigError(
                f"checks.run: unknown check {c!r}; known: "
                + ", ".join(KNOWN_CHECKS)
            )

    out = raw.get("output", {})
    return RunConfig(
        name=path.stem,
        norm_spec=norm_spec,
        obstacle_spec=obst,
        box=box,
        resolution=resolution,
        mask_shift=float(grid.get("mask_shift", DEFAULT_MASK_SHIFT)),
        schedule=[float(p) for p in schedule],
        delta_reg=solver.get("delta_reg"),
        max_iter=int(solver.get("max_iter", 80)),
        checks=list(checks),
        times=[float(t) for t in raw.get("flow", {}).get("times", [])],
        trials=int(raw.get("flow", {}).get("trials", 200)),
        seed=int(raw.get("flow", {}).get("seed", 0)),
        out_dir=out.get("directory"),
        raw=raw,
    )


def build_norm(spec):
    params = {k: v for k, v in spec.items() if k not in ("kind", "dim")}
    return make_norm(spec["kind"], dim=int(spec.get("dim", 2)), **params)


def build_problem(cfg):
    norm = build_norm(cfg.norm_spec)
    if cfg.obstacle_spec["type"] == "wulff":
        obstacle = WulffShape(
            norm,
            radius=float(cfg.obstacle_spec["radius"]),
            center=tuple(cfg.obstacle_spec.get("center", (0.0, 0.0))),
        )
    else:
        obstacle = ConvexPolygon(cfg.obstacle_spec["vertices"])
    domain = GridDomain(
        box=cfg.box, resolution=cfg.resolution, obstacle=obstacle,
        norm=norm, mask_shift=cfg.mask_shift,
    )
    solver = SolverConfig(
        p=cfg.schedule[-1],
        schedule=cfg.schedule if len(cfg.schedule) > 1 else None,
        delta_reg=cfg.delta_reg,
        max_iter=cfg.max_iter,
        allow_small_p=True,
    )
    return norm, domain, solver


@dataclass
class CheckResult:
    name: str
    status: str  # pass | fail | hypothesis_unverified
    value: float
    tol: float

    def line(self):
        return (f"check={self.name} status={self.status} "
                f"value={self.value:.6g} tol={self.tol:.6g}")


def _solve(cfg):
    norm, domain, solver = build_problem(cfg)
    if len(cfg.schedule) > 1:
        solver = SolverConfig(
            p=cfg.schedule[-1], schedule=cfg.schedule,
            delta_reg=cfg.delta_reg, max_iter=cfg.max_iter,
            allow_small_p=True,
        )
        result = continuation_solve(norm, domain, solver)
        if not result.completed:
            raise RuntimeError(
                f"continuation stalled at stage {len(result.reports)}"
            )
        return norm, domain, result
    # single stage: wrap in the same result shape
    from .solver import ContinuationResult, enclosing_wulff, solve_vp

    rep = solve_vp(norm, domain, solver)
    if not rep.converged:
        raise RuntimeError("solve did not converge")
    c, r = enclosing_wulff(norm, domain.obstacle)
    result = ContinuationResult([rep], [], True, (1.5 * r, 3.0 * r))
    return norm, domain, result


def _limit_error(norm, domain, result, u):
    """Sup relative gap to (n-1) log(F polar / r) on the annulus."""
    polar = PolarNorm(norm)
    from .solver import enclosing_wulff

    c, r = enclosing_wulff(norm, domain.obstacle)
    fo = polar.value(domain.node_points() - c)
    r0, r1 = result.annulus
    ann = (fo >= r0) & (fo <= r1) & domain.interior_mask
    u_lim = np.log(np.maximum(fo / r, 1e-300))
    return float(
        np.max(np.abs(u.values[ann] - u_lim[ann]) / np.abs(u_lim[ann]))
    )


def run_checks(cfg, norm, domain, result, u, out_dir):
    reports = result.reports
    final = reports[-1]
    hf_plus = final.bounds.hf_plus
    results = []

    def add(name, ok, value, tol, status=None):
        status = status if status else ("pass" if ok else "fail")
        results.append(CheckResult(name, status, float(value), float(tol)))

    for name in cfg.checks:
        if name == "barriers":
            worst = max(
                max(rep.barrier.max_lower_violation,
                    rep.barrier.max_upper_violation)
                for rep in reports
            )
            slack = min(rep.barrier.slack for rep in reports)
            add(name, all(rep.barrier.passed for rep in reports), worst, slack)
        elif name == "maxgrad":
            gap = max(rep.bounds.rel_gap for rep in reports)
            add(name, gap <= 0.02, gap, 0.02)
        elif name == "inradius_bound":
            if any(not np.isfinite(rep.bounds.estapp_bound) for rep in reports):
                add(name, True, np.inf, 1.10)
                continue
            ratio = max(
                max(rep.bounds.sup_interior, rep.bounds.sup_boundary)
                / rep.bounds.estapp_bound
                for rep in reports
            )
            add(name, ratio <= 1.10, ratio, 1.10)
        elif name == "boundary_curvature":
            if hf_plus is None:
                add(name, False, np.nan, 0.1, status="hypothesis_unverified")
                continue
            eps = [abs(rep.bounds.sup_boundary - hf_plus) / hf_plus
                   for rep in reports]
            decreasing = all(a > b for a, b in zip(eps, eps[1:]))
            add(name, decreasing and eps[-1] <= 0.1, eps[-1], 0.1)
        elif name == "growth":
            gs = area_growth_series(u, norm, cfg.times or [0.25, 0.5])
            gs.to_csv(out_dir / "growth.csv")
            dev = gs.max_rel_deviation()
            if not gs.hypothesis_ok:
                add(name, False, dev, 0.05, status="hypothesis_unverified")
            else:
                add(name, dev <= 0.05, dev, 0.05)
        elif name == "minimality":
            rep = minimality_spot_check(norm, u, trials=cfg.trials,
                                        seed=cfg.seed)
            rep.to_csv(out_dir / "minimality.csv")
            add(name, rep.passed, rep.worst_margin(), 0.0)
        elif name == "weak_curvature":
            # latest configured front: farthest from the rasterized wall,
            # so the H_F stencil sees the least staircase wobble
            t = max(cfg.times) if cfg.times else 0.5
            cr = weak_curvature_residual(u, norm, t)
            ok = cr.mean_rel <= 0.05 and cr.masked_fraction <= 0.01
            add(name, ok, cr.mean_rel, 0.05)
        elif name == "p_convergence":
            if isinstance(domain.obstacle, WulffShape):
                err = _limit_error(norm, domain, result, u)
                add(name, err <= 0.05, err, 0.05)
            elif len(result.cauchy_gaps) >= 2:
                # no closed-form limit; require the continuation tail to
                # contract: each sup gap below the one before it
                g = result.cauchy_gaps
                ratio = max(b / a for a, b in zip(g, g[1:]))
                add(name, ratio < 1.0, ratio, 1.0)
            else:
                add(name, False, np.nan, 1.0,
                    status="hypothesis_unverified")
    return results


def write_outputs(cfg, norm, domain, result, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    final = result.reports[-1]
    u = log_transform(final.field)
    u.to_csv(out_dir / "u_final.csv")
    u.to_binary(out_dir / "u_final.bin")
    with open(out_dir / "config_resolved.json", "w") as f:
        json.dump(
            {
                "name": cfg.name,
                "norm": cfg.norm_spec,
                "obstacle": cfg.obstacle_spec,
                "grid": {
                    "box": cfg.box,
                    "resolution": cfg.resolution,
                    "mask_shift": cfg.mask_shift,
                },
                "solver": {
                    "schedule": cfg.schedule,
                    "delta_reg": (final.delta_reg if cfg.delta_reg is None
                                  else cfg.delta_reg),
                    "max_iter": cfg.max_iter,
                },
                "flow": {
                    "times": cfg.times,
                    "trials": cfg.trials,
                    "seed": cfg.seed,
                },
                "checks": cfg.checks,
            },
            f, indent=2, sort_keys=True,
        )
    if cfg.times:
        with open(out_dir / "contours.csv", "w") as f:
            f.write("t,facet,x0,y0,x1,y1\n")
            for t in cfg.times:
                snap = extract_sublevel(u, t, norm)
                for k, seg in enumerate(snap.contour.segments):
                    f.write(
                        f"{t:.17g},{k},{seg[0, 0]:.17g},{seg[0, 1]:.17g},"
                        f"{seg[1, 0]:.17g},{seg[1, 1]:.17g}\n"
                    )
    return u


def _stage_lines(result):
    lines = []
    for rep in result.reports:
        lines.append(
            f"stage p={rep.p:g} converged={rep.converged} "
            f"iters={rep.iterations} grad_norm={rep.final_grad_norm:.3e}"
        )
    for k, g in enumerate(result.cauchy_gaps):
        lines.append(f"cauchy_gap stage={k} value={g:.6g}")
    return lines


def cmd_solve(cfg, out_dir):
    norm, domain, result = _solve(cfg)
    write_outputs(cfg, norm, domain, result, out_dir)
    lines = _stage_lines(result)
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_check(cfg, out_dir):
    norm, domain, result = _solve(cfg)
    u = write_outputs(cfg, norm, domain, result, out_dir)
    lines = _stage_lines(result)
    checks = run_checks(cfg, norm, domain, result, u, out_dir)
    lines += [c.line() for c in checks]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0 if all(c.status != "fail" for c in checks) else 1


def convergence_study(cfg, resolutions, out_dir=None):
    """Sup-error table over mesh widths and schedule stages.

    Wulff obstacles compare against the closed-form solution at each p
    (column err_exact) and the p->1 limit (err_limit); otherwise the
    finest-grid, smallest-p field is the reference.  Observed order is
    log2 of the error drop between consecutive resolutions at fixed p.
    """
    if len(resolutions) < 1:
        raise ConfigError("study: need at least one resolution")
    rows = []
    fields = {}
    for res in sorted(resolutions):
        sub = RunConfig(**{**cfg.__dict__, "resolution": int(res)})
        norm, domain, result = _solve(sub)
        polar = PolarNorm(norm)
        from .solver import enclosing_wulff

        c, r = enclosing_wulff(norm, domain.obstacle)
        fo = polar.value(domain.node_points() - c)
        r0, r1 = result.annulus
        ann = (fo >= r0) & (fo <= r1) & domain.interior_mask
        u_lim = np.log(np.maximum(fo / r, 1e-300))
        for rep in result.reports:
            u = log_transform(rep.field)
            fields[(res, rep.p)] = u
            if isinstance(domain.obstacle, WulffShape):
                u_ex = (2.0 - rep.p) * u_lim
                err_exact = float(np.max(np.abs(u.values[ann] - u_ex[ann])))
            else:
                err_exact = np.nan
            err_limit = float(
                np.max(np.abs(u.values[ann] - u_lim[ann])
                       / np.abs(u_lim[ann]))
            )
            rows.append({
                "resolution": int(res),
                "h": domain.h,
                "p": rep.p,
                "err_exact": err_exact,
                "err_limit": err_limit,
            })
    if not isinstance(domain.obstacle, WulffShape):
        ref_key = (sorted(resolutions)[-1], cfg.schedule[-1])
        ref = fields[ref_key]
        for row in rows:
            u = fields[(row["resolution"], row["p"])]
            pts = u.domain.node_points()[u.domain.interior_mask]
            row["err_exact"] = float(
                np.max(np.abs(u.interp(pts) - ref.interp(pts)))
            )
    # observed order between consecutive resolutions, per p
    res_sorted = sorted(set(r["resolution"] for r in rows))
    for row in rows:
        idx = res_sorted.index(row["resolution"])
        if idx == 0:
            row["order"] = np.nan
            continue
        prev = next(
            r for r in rows
            if r["resolution"] == res_sorted[idx - 1] and r["p"] == row["p"]
        )
        row["order"] = float(np.log2(prev["err_exact"] / row["err_exact"]))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "study.csv", "w") as f:
            f.write("resolution,h,p,err_exact,err_limit,order\n")
            for r in rows:
                f.write(
                    f"{r['resolution']},{r['h']:.17g},{r['p']:.17g},"
                    f"{r['err_exact']:.17g},{r['err_limit']:.17g},"
                    f"{r['order']:.17g}\n"
                )
    return rows


def cmd_study(cfg, out_dir, resolutions):
    rows = convergence_study(cfg, resolutions, out_dir)
    hdr = f"{'res':>5} {'h':>10} {'p':>6} {'err_exact':>12} {'err_limit':>12} {'order':>7}"
    print(hdr)
    for r in rows:
        print(f"{r['resolution']:>5} {r['h']:>10.4g} {r['p']:>6.3g} "
              f"{r['err_exact']:>12.4e} {r['err_limit']:>12.4e} "
              f"{r['order']:>7.2f}")
    return 0


def _resolve_out(cfg, args):
    if args.out:
        return Path(args.out)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / cfg.name


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="iamcf",
        description="inverse anisotropic mean curvature flow via "
                    "p-Laplacian continuation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "check", "study"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=None)
        s.add_argument("--p-schedule", default=None,
                       help="comma-separated override, e.g. 1.5,1.2,1.05")
        s.add_argument("--resolution", type=int, default=None)
        s.add_argument("--seed", type=int, default=None)
        if name == "study":
            s.add_argument("--resolutions", default=None,
                           help="comma-separated grid sizes")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.p_schedule:
            sched = [float(tok) for tok in args.p_schedule.split(",")]
            cfg = RunConfig(**{**cfg.__dict__, "schedule": sched})
            if any(not 1.0 < p < 2.0 for p in sched):
                raise ConfigError("--p-schedule: every p must be in (1, 2)")
            if any(b <= a for a, b in zip(sched[1:], sched[:-1])):
                raise ConfigError("--p-schedule: must decrease strictly")
        if args.resolution:
            cfg = RunConfig(**{**cfg.__dict__, "resolution": args.resolution})
        if args.seed is not None:
            cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
        build_problem(cfg)  # geometry validation (margins, rasterization)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    out_dir = _resolve_out(cfg, args)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "solve":
        return cmd_solve(cfg, out_dir)
    if args.command == "check":
        return cmd_check(cfg, out_dir)
    if args.command == "study":
        if args.resolutions:
            resolutions = [int(tok) for tok in args.resolutions.split(",")]
        else:
            resolutions = [cfg.resolution]
        return cmd_study(cfg, out_dir, resolutions)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
