"""Command-line entry point: ``skyf <verb> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from skyf.config import (
    RunConfig,
    domain_geometry,
    load_config,
    rho_for,
    solver_options,
)
from skyf.errors import ConfigError, SkyfError

log = logging.getLogger("skyf")

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_FILE = 3


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return cfg.with_overrides(overrides)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    return out


def _domain(cfg):
    from skyf.grid import build_domain

    shape, geom = domain_geometry(cfg)
    return build_domain(shape, geom, cfg["domain.h"])


def _params(cfg, domain):
    from skyf.grid import ModelParams, poincare_lambda0

    lam = cfg["params.lambda0"]
    return ModelParams(cfg["params.kappa"], cfg["params.Q"], lam if lam is not None else poincare_lambda0(domain))


def _snapshot(path):
    from skyf.grid import read_snapshot

    if not Path(path).is_file():
        raise FileNotFoundError(f"snapshot not found: {path}")
    return read_snapshot(path)


def _print_rows(header, rows, fh=None):
    fh = fh or sys.stdout
    fh.write(",".join(header) + "\n")
    for r in rows:
        fh.write(",".join(r) + "\n")


# --- verbs ----------------------------------------------------------------------


def cmd_domain_info(args, cfg):
    from skyf.energy import alpha_of, feasibility_check

    dom = _domain(cfg)
    p = _params(cfg, dom)
    feas = feasibility_check(p, cfg["target.d"], dom)
    info = {
        "shape": dom.shape_tag, "nx": dom.nx, "ny": dom.ny, "h": dom.h, "interior_nodes": dom.n_interior,
        "area": dom.area, "lambda0": p.lambda0, "alpha": alpha_of(p), "d": feas.d,
        "smallness_bound": feas.smallness_bound, "smallness_ok": feas.smallness_ok, "area_ratio": feas.area_ratio,
    }
    for k, v in info.items():
        print(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return 0


def cmd_energy(args, cfg):
    from skyf.energy import BREAKDOWN_COLUMNS, total_energy

    f = _snapshot(args.snapshot)
    p = _params(cfg, f.domain)
    b = total_energy(f, p)
    _print_rows(BREAKDOWN_COLUMNS, [b.csv_row()])
    return 0


def cmd_degree(args, cfg):
    from skyf.energy import topological_degree

    deg = topological_degree(_snapshot(args.snapshot))
    print(repr(deg) if args.raw else round(deg))
    return 0


def _initial_field(cfg, dom):
    from skyf.grid import MagnetizationField, random_field
    from skyf.profiles import BPProfileSpec, paste_profile

    kind = cfg["init.kind"]
    if kind == "down":
        return MagnetizationField.uniform_down(dom)
    if kind == "random":
        return random_field(dom, cfg["seed"], tilt=0.1)
    if kind == "bp":
        bd = dom.boundary_distance()
        i, j = divmod(int(bd.argmax()), dom.ny)
        rho = cfg["init.rho"]
        L = min(8.0, (float(bd[i, j]) - dom.h) / rho)
        if L < 2.5:
            raise ConfigError("init.rho too large for the domain")
        return paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec(dom.node_position(i, j), rho, L))
    raise ConfigError(f"unknown init.kind {kind!r}")


def cmd_minimize(args, cfg):
    from skyf.energy import BREAKDOWN_COLUMNS, total_energy
    from skyf.grid import MagnetizationField, write_snapshot
    from skyf.solver import minimize_with_degree_repair

    out = _outdir(cfg)
    if args.init:
        f0 = _snapshot(args.init)
        dom = f0.domain
    else:
        dom = _domain(cfg)
        f0 = _initial_field(cfg, dom)
    p = _params(cfg, dom)
    snap_dir = None
    if cfg["solve.snapshot_every"] > 0:
        snap_dir = str(out / "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
    field, trace, repairs = minimize_with_degree_repair(
        f0, p, solver_options(cfg, snap_dir), d_target=cfg["target.d"], repair_cap=cfg["solve.repair_cap"]
    )
    trace.write_csv(out / "trace.csv")
    write_snapshot(field, out / "final.skyf")
    b = total_energy(MagnetizationField(field.domain, field.values), p)
    with open(out / "energy.csv", "w") as fh:
        _print_rows(BREAKDOWN_COLUMNS, [b.csv_row()], fh)
    print(f"termination = {trace.reason}")
    print(f"iterations = {trace.final.iter}")
    print(f"repairs = {repairs}")
    print(f"energy = {b.total!r}")
    print(f"degree = {b.degree!r}")
    return 0 if trace.converged else EXIT_ERROR


def cmd_insert(args, cfg):
    from skyf.energy import topological_degree
    from skyf.grid import write_snapshot
    from skyf.profiles import choose_insertion_site, default_delta, paste_bp, refined_insertion

    out = _outdir(cfg)
    f = _snapshot(args.snapshot)
    p = _params(cfg, f.domain)
    delta = cfg["insert.delta"]
    site, dens, quiet = choose_insertion_site(f, p, cfg["insert.epsilon"], min_distance=2.0 * delta if delta else 0.0)
    if delta is None:
        delta = default_delta(f, p, site)
    rho = rho_for(cfg, p.kappa, delta)
    if cfg["insert.refine"] > 0:
        new, rep = refined_insertion(f, p, site, delta, rho, cfg["insert.refine"], site_density=dens)
    else:
        new, rep = paste_bp(f, p, site, delta, rho, site_density=dens)
    rep.write_csv(out / "insert.csv")
    write_snapshot(new, out / "inserted.skyf")
    print(f"site = {site}")
    print(f"quiet = {quiet}")
    print(f"degree = {round(topological_degree(f))} -> {round(rep.degree_after)}")
    print(f"strictness_margin = {rep.strictness_margin!r}")
    return 0


def cmd_sweep(args, cfg):
    from skyf.analysis import q_sweep

    out = _outdir(cfg)
    dom = _domain(cfg)
    dump = out / "density"
    dump.mkdir(exist_ok=True)
    rep = q_sweep(dom, cfg["params.kappa"], cfg["target.d"], cfg["params.Q_list"], solver_options(cfg), dump_dir=str(dump))
    rep.write_csv(out / "sweep.csv")
    rep.write_peaks_csv(out / "peaks.csv")
    for r in rep.records:
        print(f"Q = {r.Q:g}: energy = {r.total!r}, peaks = {len(r.peaks)}, inferred degree = {r.inferred_degree}, "
              f"localization = {r.localization!r}{'  (inconclusive)' if r.inconclusive else ''}")
    return 0


def cmd_existence_table(args, cfg):
    from skyf.analysis import existence_table, write_table_csv
    from skyf.grid import build_domain

    out = _outdir(cfg)
    if cfg["table.lengths"]:
        family = [(f"strip{L:g}", build_domain("strip", {"length": L, "width": cfg["domain.width"]}, cfg["domain.h"]))
                  for L in cfg["table.lengths"]]
    else:
        family = [(cfg["domain.shape"], _domain(cfg))]
    cells = existence_table(family, cfg["table.kappa_list"], cfg["params.Q"], cfg["table.d_max"],
                            solver_options(cfg), workers=cfg["workers"])
    write_table_csv(out / "existence.csv", cells)
    for c in cells:
        print(f"{c.domain} kappa={c.kappa:g} d={c.d}: smallness={'ok' if c.smallness_ok else 'no'} "
              f"achieved={'yes' if c.achieved else 'no'} margin={c.margin:.6g}")
    return 0


def cmd_verify(args, cfg):
    from skyf.verify import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else EXIT_ERROR


VERBS = {
    "domain-info": (cmd_domain_info, None),
    "energy": (cmd_energy, "snapshot"),
    "degree": (cmd_degree, "snapshot"),
    "minimize": (cmd_minimize, None),
    "insert": (cmd_insert, "snapshot"),
    "sweep": (cmd_sweep, None),
    "existence-table": (cmd_existence_table, None),
    "verify": (cmd_verify, None),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skyf", description="Chiral skyrmion energy workbench.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, (_, positional) in VERBS.items():
        sp = sub.add_parser(verb)
        if positional:
            sp.add_argument(positional)
        sp.add_argument("-c", "--config", help="flat key = value config file")
        sp.add_argument("-s", "--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("-o", "--out", help="output directory (output.dir)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help="worker cap (falls back to SKYF_WORKERS)")
        if verb == "degree":
            sp.add_argument("--raw", action="store_true", help="print the unrounded degree")
        if verb == "minimize":
            sp.add_argument("--init", help="start from this snapshot instead of init.kind")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    fn, _ = VERBS[args.verb]
    try:
        cfg = _config(args)
        return fn(args, cfg)
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (SkyfError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
