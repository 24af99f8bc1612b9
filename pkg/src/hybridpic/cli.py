"""Command line entry point: ``hybridpic {run,compare,verify,info}``.

Exit status: 0 success, 1 verification or audit failure, 2 usage or config
error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .state import ConfigError, SceneConfig, TransferScheme, seed_particles
from .scene import dump_scene, load_scene

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
WORKERS_ENV = "HYBRIDPIC_WORKERS"


class UsageError(Exception):
    pass


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("overrides (take precedence over the scene file)")
    g.add_argument("--scheme", choices=("pic", "apic", "polypic"))
    g.add_argument("--fluid-modes", type=int, metavar="N")
    g.add_argument("--solid-modes", type=int, metavar="N")
    g.add_argument("--modes", type=int, metavar="N", help="set fluid and solid mode counts together")
    g.add_argument("--dt", type=float, metavar="S")
    g.add_argument("--duration", type=float, metavar="S")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, metavar="N", help=f"P2G worker count (default: ${WORKERS_ENV} or scene)")
    g.add_argument("--out", metavar="DIR", help="output directory")
    g.add_argument("--allow-unstable-modes", action="store_true", default=None,
                   help="permit more than 2^d fluid modes")
    g.add_argument("--no-diagnostics", action="store_true", help="skip diagnostics and conservation audits")
    g.add_argument("--enable-3d", action="store_true", help="allow 3D scenes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridpic", description="PIC / APIC / PolyPIC hybrid particle-grid solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scene")
    r.add_argument("scene")
    r.add_argument("--no-frames", action="store_true", help="do not write particle frames")
    _add_overrides(r)

    c = sub.add_parser("compare", help="run two schemes on one scene, or compare two finished runs")
    c.add_argument("scene", nargs="?")
    c.add_argument("--schemes", nargs=2, metavar=("A", "B"),
                   help="scheme specs such as apic, pic, polypic or polypic:4 (fluid=solid modes)")
    c.add_argument("--runs", nargs=2, metavar=("DIR_A", "DIR_B"), help="compare two existing run directories")
    c.add_argument("--no-frames", action="store_true")
    _add_overrides(c)

    v = sub.add_parser("verify", help="run the property verification suites")
    v.add_argument("--suite", action="append", help="suite name (repeatable); default all")
    v.add_argument("--trials", type=int, help="override the per-suite trial count")
    v.add_argument("--seed", type=int, default=12345)
    v.add_argument("--list", action="store_true", help="list suites and exit")

    i = sub.add_parser("info", help="validate a scene and print its resolved configuration")
    i.add_argument("scene")
    _add_overrides(i)
    return ap


def _parse_scheme(spec: str, base: TransferScheme) -> TransferScheme:
    kind, _, modes = spec.partition(":")
    if kind not in ("pic", "apic", "polypic"):
        raise UsageError(f"unknown scheme {spec!r}")
    if modes:
        try:
            parts = [int(m) for m in modes.split(":")]
        except ValueError:
            raise UsageError(f"bad mode count in {spec!r}") from None
        fm, sm = (parts[0], parts[0]) if len(parts) == 1 else parts[:2]
        return TransferScheme(kind, fm, sm)
    return TransferScheme(kind, base.fluid_modes, base.solid_modes)


def resolve_config(args) -> SceneConfig:
    """Scene file, then environment, then flags; returns a validated config."""
    cfg = load_scene(args.scene, validate=False)
    sch = cfg.scheme
    fm = args.modes if args.modes is not None else args.fluid_modes
    sm = args.modes if args.modes is not None else args.solid_modes
    sch = TransferScheme(args.scheme or sch.kind, fm if fm is not None else sch.fluid_modes,
                         sm if sm is not None else sch.solid_modes)
    workers = args.workers
    if workers is None and os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
    output = cfg.output
    if args.out is not None:
        output = dataclasses.replace(output, directory=args.out)
    if args.no_diagnostics:
        output = dataclasses.replace(output, diagnostics=False)
    cfg = cfg.with_overrides(scheme=sch, dt=args.dt, duration=args.duration, seed=args.seed, workers=workers,
                             allow_unstable_modes=args.allow_unstable_modes, output=output,
                             audit=False if args.no_diagnostics else None)
    if cfg.dim == 3 and not args.enable_3d:
        raise UsageError(f"{args.scene}: 3D scenes are disabled by default; pass --enable-3d")
    return cfg.validate()


def _status_line(result) -> str:
    return f"status {result.status}: {result.steps} steps" + (f"; {result.message}" if result.message else "")


def cmd_run(args) -> int:
    from .simloop import run

    cfg = resolve_config(args)
    out = Path(cfg.output.directory)
    print(f"running {cfg.name} with {cfg.scheme.label()} for {cfg.n_steps} steps -> {out}")
    res = run(cfg, out, write_frames=not args.no_frames)
    print(_status_line(res))
    return res.status


def cmd_compare(args) -> int:
    from .diagnostics import RunMismatchError, load_run, step_cost_report
    from .simloop import run

    if args.runs:
        if args.scene or args.schemes:
            raise UsageError("--runs compares finished runs; do not also pass a scene or --schemes")
        (ma, _, ta), (mb, _, tb) = (load_run(d) for d in args.runs)
        try:
            rep = step_cost_report(ta, tb, ma, mb)
        except RunMismatchError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(rep.summary())
        print(rep.to_json())
        return EXIT_OK
    if not args.scene or not args.schemes:
        raise UsageError("compare needs a scene and --schemes A B (or --runs DIR_A DIR_B)")
    base = resolve_config(args)
    root = Path(base.output.directory)
    results, labels = [], []
    for k, spec in enumerate(args.schemes):
        cfg = dataclasses.replace(base, scheme=_parse_scheme(spec, base.scheme)).validate()
        label = f"{chr(ord('a') + k)}_{cfg.scheme.label()}".replace("(", "_").replace(")", "").replace(",", "_")
        labels.append(label)
        print(f"[{k + 1}/2] {cfg.scheme.label()} -> {root / label}")
        res = run(cfg, root / label, write_frames=not args.no_frames)
        print("  " + _status_line(res))
        results.append(res)
    status = max(r.status for r in results)
    if base.output.diagnostics and all(r.records for r in results):
        times = [[rec.wall_s for rec in r.records] for r in results]
        metas = [r.meta for r in results]
        rep = step_cost_report(times[0], times[1], metas[0], metas[1])
        rep.extra = {"peak_particles": [max(rec.n_fluid + rec.n_solid for rec in r.records) for r in results],
                     "final_mean_energy": [r.records[-1].mean_energy for r in results],
                     "directories": [str(root / lbl) for lbl in labels]}
        (root / "compare.json").write_text(rep.to_json() + "\n")
        print(rep.summary())
    return status


def cmd_verify(args) -> int:
    from .verification import SUITES, run_suites

    if args.list:
        for name, (fn, _) in SUITES.items():
            print(f"{name}: {(fn.__doc__ or '').strip().splitlines()[0]}")
        return EXIT_OK
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    results = run_suites(names, seed=args.seed, trials=args.trials)
    failed = [r for r in results if r.passed is False]
    for r in results:
        print(json.dumps(r.summary(), sort_keys=True))
    print(json.dumps({"suites": len(results), "failed": [r.name for r in failed]}))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_info(args) -> int:
    cfg = resolve_config(args)
    particles, mesh = seed_particles(cfg)
    print(dump_scene(cfg), end="")
    print(f"# dim={cfg.dim} dx={cfg.dx:g} steps={cfg.n_steps} particles={len(particles)} "
          f"(fluid {int(particles.fluid.sum())}, solid {int(particles.solid.sum())}) "
          f"fabric_elements={mesh.n_elements}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "verify": cmd_verify, "info": cmd_info}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
