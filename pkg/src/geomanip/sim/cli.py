"""Command-line front end: ``geomanip <subcommand> ...``.

Every subcommand exits with 0 on success; failures print one diagnostic line
prefixed with ``error:`` to stderr and exit nonzero.
"""

import argparse
import os
import sys

import numpy as np

from ..errors import ConvergenceError, ControllerError, ExtrapolationError, InsufficientDataError, SchemaError
from ..tracking import BASELINES
from . import demos, export, selftest
from .scenario import SCHEMA_VERSION, ScenarioConfig, _floats, _section, chain_from_doc, load_skill, run_scenario
from .scenario import skill_to_document

METHODS = ("geometry",) + BASELINES
EXIT_FAIL = 1
EXIT_ORDER = 2


def _write_outputs(trace, chain, out_dir, stem="trace", plot=True):
    os.makedirs(out_dir, exist_ok=True)
    export.write_trace_csv(trace, os.path.join(out_dir, f"{stem}.csv"))
    if plot:
        export.write_svg(trace, chain, os.path.join(out_dir, f"{stem}.svg"))


def cmd_simulate(args):
    cfg = ScenarioConfig.load(args.config)
    trace = run_scenario(cfg, projector_tol=args.projector_tol)
    out = args.out or cfg.outputs.get("trace") or "."
    _write_outputs(trace, cfg.chain, out, plot=not args.no_plot)
    print(f"{cfg.name}: {len(trace)} steps, final distance {trace.final_distance:.6g}")


def cmd_demo_gen(args):
    conf = demos.demo_config_from_doc(demos.load_json(args.config)) if args.config else \
        demos.demo_config_from_doc({"schema_version": SCHEMA_VERSION})
    data = demos.generate_demonstrations(**conf)
    demos.save_json(data, args.out)
    spread = demos.demo_spread(data)
    print(f"wrote {len(data['demos'])} demonstrations to {args.out} (max spread {spread.max():.4g})")


def cmd_fit(args):
    data = demos.load_json(args.data)
    skill = demos.fit_skill(data, args.K, args.seed)
    doc = skill_to_document(skill["spd"], skill["tip"], skill["time_range"])
    demos.save_json(doc, args.out)
    diag = skill["spd"].diagnostics
    print(f"fitted K={args.K}: log-likelihood {skill['spd'].log_likelihood[-1]:.6g} after {diag['iterations']} iterations")


def robot_config_from_doc(doc):
    """Student robot config for ``reproduce``."""
    _section(doc, "robot config", ("schema_version", "robot"),
             ("q_nominal", "K_M", "K_x", "kappa", "damping", "dt", "name", "description"))
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported robot config schema_version {doc['schema_version']!r}")
    chain = chain_from_doc(doc["robot"])
    kw = {k: float(doc[k]) for k in ("K_M", "K_x", "kappa", "damping", "dt") if k in doc}
    q_nom = _floats(doc["q_nominal"], "q_nominal", (chain.n,)) if "q_nominal" in doc else np.full(chain.n, 0.5)
    return chain, q_nom, kw


def cmd_reproduce(args):
    skill = load_skill(args.model)
    if skill["tip"] is None:
        raise SchemaError(f"{args.model}: reproduction needs a skill document with a position model")
    chain, q_nom, kw = robot_config_from_doc(demos.load_json(args.robot))
    cfg = demos.reproduction_config(skill, chain, q_nom, args.gains, **kw)
    trace = run_scenario(cfg, projector_tol=args.projector_tol)
    _write_outputs(trace, chain, args.out, "reproduction")
    mean_d = float(np.mean(trace.dist))
    line = f"tip RMS {trace.tip_rms():.4g} m, mean distance {mean_d:.4g}"
    if args.ablation:
        abl = run_scenario(demos.reproduction_config(skill, chain, q_nom, "scalar", **{**kw, "K_M": 0.0}),
                           projector_tol=args.projector_tol)
        _write_outputs(abl, chain, args.out, "ablation")
        line += f", ablation mean distance {np.mean(abl.dist):.4g}"
    print(line)


def run_comparison(cfg, methods=METHODS, projector_tol=None):
    """Run each method on ``cfg``; aborted runs map to their error."""
    results = {}
    for m in methods:
        if m not in METHODS:
            raise SchemaError(f"unknown method {m!r}; expected some of {METHODS}")
        c = cfg.with_controller(type="main") if m == "geometry" else cfg.with_controller(type="baseline", method=m)
        c.name = m
        try:
            results[m] = run_scenario(c, projector_tol=projector_tol)
        except ControllerError as exc:
            results[m] = exc
    return results


def ordering_violations(results):
    """Baselines that end closer to the target than the geometry-aware run."""
    geo = results.get("geometry")
    if geo is None or isinstance(geo, Exception):
        return ["geometry-aware run missing or aborted"]
    return [m for m, r in results.items()
            if m != "geometry" and not isinstance(r, Exception) and r.final_distance < geo.final_distance]


def cmd_compare(args):
    cfg = ScenarioConfig.load(args.scenario)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    results = run_comparison(cfg, methods, args.projector_tol)
    report = export.write_comparison(results, args.out)
    for m, r in report["methods"].items():
        print(f"{m}: " + (f"final distance {r['final_distance']:.6g}" if "error" not in r else f"aborted ({r['error']})"))
    if args.check_order:
        bad = ordering_violations(results)
        if bad:
            print(f"error: geometry-aware final distance is not the smallest; beaten by {bad}", file=sys.stderr)
            return EXIT_ORDER
    return 0


def cmd_validate(args):
    if not args.self_test:
        print("error: nothing to validate; pass --self-test", file=sys.stderr)
        return EXIT_FAIL
    ok = selftest.run(args.seed, verbose=args.verbose, out=print)
    print("self-test " + ("passed" if ok else "FAILED"))
    return 0 if ok else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="geomanip", description="Manipulability learning and tracking simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: the config's outputs.trace or .)")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--projector-tol", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("demo-gen", help="generate teacher demonstrations")
    s.add_argument("--config", help="demo config (default: built-in C-shape)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_demo_gen)

    s = sub.add_parser("fit", help="fit a skill bundle to demonstrations")
    s.add_argument("--data", required=True)
    s.add_argument("-K", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("reproduce", help="reproduce a skill on a student robot")
    s.add_argument("--model", required=True)
    s.add_argument("--robot", required=True)
    s.add_argument("--gains", choices=("scalar", "precision"), default="scalar")
    s.add_argument("--out", required=True)
    s.add_argument("--ablation", action="store_true", help="also run without the manipulability term")
    s.add_argument("--projector-tol", type=float)
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("compare", help="geometry-aware controller against the baselines")
    s.add_argument("--scenario", required=True)
    s.add_argument("--methods", default=",".join(METHODS))
    s.add_argument("--out", required=True)
    s.add_argument("--no-check-order", dest="check_order", action="store_false",
                   help="do not fail when a baseline ends closer than the geometry-aware run")
    s.add_argument("--projector-tol", type=float)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("validate", help="built-in consistency checks")
    s.add_argument("--self-test", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (SchemaError, ControllerError, ConvergenceError, ExtrapolationError, InsufficientDataError,
            OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
