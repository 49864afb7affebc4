"""Command-line front end of the package."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys

import numpy as np

from . import __version__, admm, awsr, experiments
from .config import (ConfigError, apply_overrides, config_from_dict,
                     default_document, rng_stream)
from .model import (beampattern, draw_channel_estimate, sample_saa_batch)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _announce(path):
    print(f"wrote {os.path.abspath(path)}")


def _load_document(path):
    if path is None:
        return default_document()
    if not os.path.isfile(path):
        raise ConfigError(str(path), "config file not found")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    # a manifest carries its resolved config under "config"
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc["config"]
    return doc


def resolve_config(args, extra=()):
    """Config document with file and command-line overrides applied."""
    doc = _load_document(args.config)
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"system.rng_seed={int(args.seed)}")
    doc = apply_overrides(doc, overrides + list(extra))
    cfg = config_from_dict(doc)
    return cfg, cfg.to_dict(), overrides


class Manifest:
    """Run record written before solving and updated when done."""

    def __init__(self, out_dir, command, resolved, overrides):
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {
            "manifest_version": 1,
            "command": command,
            "artifact_version": __version__,
            "seed": resolved["system"]["rng_seed"],
            "overrides": overrides,
            "config": resolved,
            "started": _now(),
            "finished": None,
            "outputs": [],
        }
        self.write()

    def write(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, outputs, **extra):
        self.data["finished"] = _now()
        self.data["outputs"] = [os.path.abspath(p) for p in outputs]
        self.data.update(extra)
        self.write()


def _dumper(out_dir, enabled):
    if not enabled:
        return None
    from . import conic
    counter = {"n": 0}

    def dump(problem):
        counter["n"] += 1
        path = os.path.join(out_dir, f"conic_failure_{counter['n']:03d}.json")
        conic.dump_problem(problem, path)
        _announce(path)
    return dump


def write_precoder_csv(path, P):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["antenna", "stream", "real", "imag"])
        for i in range(P.shape[0]):
            for j in range(P.shape[1]):
                w.writerow([i, j, repr(float(P[i, j].real)),
                            repr(float(P[i, j].imag))])


def read_precoder_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(str(path), "empty precoder file")
    n = max(int(r["antenna"]) for r in rows) + 1
    m = max(int(r["stream"]) for r in rows) + 1
    P = np.zeros((n, m), dtype=complex)
    for r in rows:
        P[int(r["antenna"]), int(r["stream"])] = complex(float(r["real"]),
                                                         float(r["imag"]))
    return P


def write_beampattern_csv(path, P, spec, spacing, pattern_scale):
    gains = beampattern(P, spec.angles, spacing)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["angle_deg", "gain", "desired_scaled"])
        for th, g, d in zip(np.rad2deg(spec.angles), gains, spec.desired):
            w.writerow([repr(float(np.round(th, 10))), repr(float(g)),
                        repr(float(pattern_scale * d))])


def _print_eval(ev, K):
    print(f"awsr_bpshz {ev.awsr:.6f}")
    for k in range(K):
        print(f"ar_user_{k + 1} {ev.ar[k]:.6f} (share {ev.shares[k]:.6f})")
    print(f"rbse {ev.rbse:.6g}")
    print("power_split " + " ".join(f"{x:.4f}" for x in ev.split))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args):
    cfg, resolved, overrides = resolve_config(args)
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    manifest = Manifest(out, "run", resolved, overrides)
    manifest.data["realization"] = args.realization
    manifest.write()

    system, spec = cfg.system, cfg.spec()
    idx = args.realization
    estimate = draw_channel_estimate(
        system, rng_stream(system.rng_seed, "channel", idx))
    trace = []
    try:
        sol = admm.run(system, estimate, spec, realization=idx, log=trace,
                       dump=_dumper(out, args.dump_conic_failures))
    except admm.AdmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        res_path = os.path.join(out, "residuals.csv")
        admm.write_residual_log(res_path, trace)
        _announce(res_path)
        manifest.finish([res_path], status="failed", error=str(exc))
        return EXIT_NOT_CONVERGED

    ev = experiments.evaluate_solution(
        sol, estimate, int(cfg.sweep.get("eval_samples", 1000)),
        rng_stream(system.rng_seed, "eval", idx), system, spec)
    paths = [os.path.join(out, n) for n in
             ("precoder.csv", "beampattern.csv", "residuals.csv",
              "solution.json")]
    write_precoder_csv(paths[0], sol.precoder)
    write_beampattern_csv(paths[1], sol.precoder, spec,
                          system.antenna_spacing, sol.pattern_scale)
    admm.write_residual_log(paths[2], trace)
    with open(paths[3], "w") as fh:
        json.dump({"shares": [float(s) for s in sol.shares],
                   "pattern_scale": sol.pattern_scale,
                   "converged": sol.converged,
                   "iterations": sol.iterations,
                   "realization": idx}, fh, indent=2)
        fh.write("\n")

    print(f"{system.access_mode}/{system.csit_mode} lambda={system.reg_lambda:g} "
          f"iterations={sol.iterations} converged={sol.converged}")
    _print_eval(ev, system.n_users)
    for p in paths:
        _announce(p)
    manifest.finish(paths, status="converged" if sol.converged
                    else "not_converged")
    _announce(manifest.path)
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args):
    extra = []
    if args.modes:
        extra.append("sweep.modes=" + json.dumps(
            [list(m) for m in experiments.parse_modes(args.modes)]))
    if args.realizations is not None:
        extra.append(f"sweep.n_realizations={int(args.realizations)}")
    if args.lambdas:
        extra.append("sweep.lambdas=" + json.dumps(
            [float(x) for x in args.lambdas.split(",")]))
    if args.eval_samples is not None:
        extra.append(f"sweep.eval_samples={int(args.eval_samples)}")
    cfg, resolved, overrides = resolve_config(args, extra)
    plan = experiments.SweepPlan.from_sweep_dict(cfg.sweep,
                                                 cfg.system.csit_mode)
    resolved["sweep"] = {
        "lambdas": list(plan.lambdas), "n_realizations": plan.n_realizations,
        "modes": [list(m) for m in plan.modes],
        "eval_samples": plan.eval_samples, "erbse_order": plan.erbse_order}
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    manifest = Manifest(out, "sweep", resolved, overrides)

    logger = logging.getLogger("rsradcom.sweep")

    def progress(rec):
        logger.info("%s/%s lambda=%g realization=%d %s", rec.access_mode,
                    rec.csit_mode, rec.reg_lambda, rec.realization, rec.status)

    result = experiments.run_sweep(plan, cfg, jobs=max(1, args.jobs),
                                   progress=progress)
    paths = experiments.write_outputs(result, out, cfg.system.n_users)
    for p in paths:
        _announce(p)
    produced = any(p.n_ok > 0 for pts in result.points.values() for p in pts)
    manifest.finish(paths)
    _announce(manifest.path)
    return EXIT_OK if produced else EXIT_NOT_CONVERGED


def cmd_eval(args):
    cfg, _, _ = resolve_config(args)
    system, spec = cfg.system, cfg.spec()
    P = read_precoder_csv(args.precoder)
    if P.shape != (system.n_tx, system.n_users + 1):
        raise ConfigError(args.precoder,
                          f"precoder shape {P.shape} does not match config")
    meta = {}
    side = os.path.join(os.path.dirname(os.path.abspath(args.precoder)),
                        "solution.json")
    if os.path.isfile(side):
        with open(side) as fh:
            meta = json.load(fh)
    idx = args.realization if args.realization is not None \
        else int(meta.get("realization", 0))
    if args.shares:
        shares = np.array([float(x) for x in args.shares.split(",")])
    elif "shares" in meta:
        shares = np.asarray(meta["shares"], dtype=float)
    else:
        estimate = draw_channel_estimate(
            system, rng_stream(system.rng_seed, "channel", idx))
        batch = sample_saa_batch(estimate, system.saa_samples,
                                 rng_stream(system.rng_seed, "saa", idx))
        shares = awsr.best_shares(P, system, batch)
    if args.pattern_scale is not None:
        alpha = float(args.pattern_scale)
    elif "pattern_scale" in meta:
        alpha = float(meta["pattern_scale"])
    else:
        from .bse import optimal_pattern_scale
        alpha = optimal_pattern_scale(
            beampattern(P, spec.angles, system.antenna_spacing), spec.desired)
    sol = admm.RadComSolution(P, shares, alpha, True, 0)
    estimate = draw_channel_estimate(
        system, rng_stream(system.rng_seed, "channel", idx))
    ev = experiments.evaluate_solution(
        sol, estimate, int(cfg.sweep.get("eval_samples", 1000)),
        rng_stream(system.rng_seed, "eval", idx), system, spec)
    _print_eval(ev, system.n_users)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (or a manifest)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (dotted path)")
    common.add_argument("--seed", type=int, help="override system.rng_seed")
    common.add_argument("--dump-conic-failures", action="store_true",
                        help="write failing conic problems as JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rsradcom", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common],
                       help="optimize one channel realization")
    r.add_argument("--out", default="out")
    r.add_argument("--realization", type=int, default=0)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common],
                       help="Monte-Carlo trade-off sweep")
    s.add_argument("--out", default="out")
    s.add_argument("--modes", help="e.g. rsma,sdma or rsma:perfect")
    s.add_argument("--realizations", type=int)
    s.add_argument("--lambdas", help="comma-separated, increasing")
    s.add_argument("--eval-samples", type=int)
    s.add_argument("--jobs", type=int, default=1,
                   help="concurrent work items (processes)")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", parents=[common],
                       help="re-evaluate a stored precoder CSV")
    e.add_argument("--precoder", required=True)
    e.add_argument("--realization", type=int)
    e.add_argument("--shares", help="comma-separated common-rate shares")
    e.add_argument("--pattern-scale", type=float)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or
                        args.command == "sweep" else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
