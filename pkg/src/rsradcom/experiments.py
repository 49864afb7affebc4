"""
Monte-Carlo trade-off sweeps.

A sweep runs one ADMM optimization per (access mode, CSIT mode, lambda,
realization) work item, evaluates the returned precoder on fresh channel
samples and averages over realizations. Every work item draws its own
named random streams, so results do not depend on scheduling and a sweep
over ``n`` realizations is a prefix of a sweep over more.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import admm, awsr
from .config import (PARTIAL, PERFECT, RSMA, SDMA, BeampatternSpec,
                     ConfigError, RunConfig, SystemConfig, rng_stream)
from .model import (ChannelEstimate, batch_rates, bse, clip_shares,
                    draw_channel_estimate, sample_saa_batch)

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(10.0 ** e for e in range(-9, 0))
ERBSE_ORDERS = ("root_then_mean", "mean_then_root")

OK = "ok"
INFEASIBLE = "infeasible"
FAILED = "failed"


@dataclass(frozen=True)
class SweepPlan:
    lambdas: tuple = DEFAULT_LAMBDAS
    n_realizations: int = 20
    modes: tuple = ((RSMA, PARTIAL), (SDMA, PARTIAL))
    eval_samples: int = 1000
    erbse_order: str = "root_then_mean"

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "modes",
                           tuple((str(a), str(c)) for a, c in self.modes))
        if not lam or any(x <= 0 for x in lam):
            raise ConfigError("sweep.lambdas", "must be positive")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ConfigError("sweep.lambdas", "must be strictly increasing")
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise ConfigError("sweep.n_realizations", "must be >= 1")
        if self.eval_samples < 1:
            raise ConfigError("sweep.eval_samples", "must be >= 1")
        if self.erbse_order not in ERBSE_ORDERS:
            raise ConfigError("sweep.erbse_order",
                              f"must be one of {', '.join(ERBSE_ORDERS)}")
        for a, c in self.modes:
            if a not in (RSMA, SDMA) or c not in (PERFECT, PARTIAL):
                raise ConfigError("sweep.modes", f"unknown mode {a}:{c}")

    @classmethod
    def from_sweep_dict(cls, sweep: dict, csit_default=PARTIAL):
        kw = {}
        if "lambdas" in sweep:
            kw["lambdas"] = tuple(sweep["lambdas"])
        if "n_realizations" in sweep:
            kw["n_realizations"] = int(sweep["n_realizations"])
        if "eval_samples" in sweep:
            kw["eval_samples"] = int(sweep["eval_samples"])
        if "erbse_order" in sweep:
            kw["erbse_order"] = sweep["erbse_order"]
        if "modes" in sweep:
            kw["modes"] = parse_modes(sweep["modes"], csit_default)
        return cls(**kw)


def parse_modes(tokens, csit_default=PARTIAL):
    """Modes from tokens like ``"rsma"`` or ``"sdma:perfect"``."""
    if isinstance(tokens, str):
        tokens = [t for t in tokens.split(",") if t.strip()]
    out = []
    for tok in tokens:
        if isinstance(tok, (list, tuple)):
            access, csit = tok
        else:
            access, _, csit = str(tok).strip().partition(":")
            csit = csit or csit_default
        access, csit = access.strip().upper(), csit.strip().lower()
        if access not in (RSMA, SDMA) or csit not in (PERFECT, PARTIAL):
            raise ConfigError("sweep.modes", f"unknown mode {tok!r}")
        out.append((access, csit))
    return tuple(out)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class Evaluation(dict):
    """Evaluation metrics of one solution, with attribute access."""

    __getattr__ = dict.__getitem__


def power_split(P):
    """Column-power fractions (common first); all zero for a zero precoder."""
    col = np.sum(np.abs(P) ** 2, axis=0)
    total = col.sum()
    return col / total if total > 0 else np.zeros_like(col)


def evaluate_solution(solution: admm.RadComSolution, estimate: ChannelEstimate,
                      eval_samples, rng, config: SystemConfig,
                      spec: BeampatternSpec) -> Evaluation:
    """
    Average rates on ``eval_samples`` fresh conditional channel draws.

    The shares are clipped so that they fit within the estimated common
    rate; the per-user AR is the delivered share plus the private AR.
    """
    P = np.asarray(solution.precoder)
    H = sample_saa_batch(estimate, eval_samples, rng).samples
    rc, rp = batch_rates(P, H)
    common = rc.mean(axis=0)
    private = rp.mean(axis=0)
    shares = (clip_shares(solution.shares, float(np.min(common)))
              if config.rsma else np.zeros(config.n_users))
    ar = shares + private
    bse_val = bse(P, spec, config.antenna_spacing, solution.pattern_scale)
    return Evaluation(ar=ar, private=private, common=common, shares=shares,
                      awsr=float(config.weights @ ar), bse=bse_val,
                      rbse=float(np.sqrt(bse_val)), split=power_split(P))


# ---------------------------------------------------------------------------
# Work items
# ---------------------------------------------------------------------------

@dataclass
class RealizationRecord:
    access_mode: str
    csit_mode: str
    reg_lambda: float
    realization: int
    status: str
    converged: bool = False
    iterations: int = 0
    awsr: float = float("nan")
    bse: float = float("nan")
    rbse: float = float("nan")
    pattern_scale: float = float("nan")
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shares: np.ndarray = field(default_factory=lambda: np.zeros(0))
    split: np.ndarray = field(default_factory=lambda: np.zeros(0))
    row_power_dev: float = float("nan")
    error: str = ""
    elapsed: float = 0.0  # wall seconds; not written to CSV


def mode_config(system: SystemConfig, access, csit, lam) -> SystemConfig:
    return system.replace(access_mode=access, csit_mode=csit, reg_lambda=lam)


def run_realization(system: SystemConfig, spec: BeampatternSpec, access, csit,
                    lam, index, eval_samples, dump=None) -> RealizationRecord:
    cfg = mode_config(system, access, csit, lam)
    estimate = draw_channel_estimate(cfg, rng_stream(cfg.rng_seed, "channel",
                                                     index))
    rec = RealizationRecord(access, csit, float(lam), int(index), OK)
    start = time.perf_counter()
    try:
        sol = admm.run(cfg, estimate, spec, realization=index, dump=dump)
    except admm.AdmmError as exc:
        qos = isinstance(exc.cause, awsr.QosInfeasible)
        rec.status = INFEASIBLE if qos else FAILED
        rec.error = str(exc)
        rec.iterations = exc.iteration
        rec.elapsed = time.perf_counter() - start
        return rec
    ev = evaluate_solution(sol, estimate, eval_samples,
                           rng_stream(cfg.rng_seed, "eval", index), cfg, spec)
    rows = np.sum(np.abs(sol.precoder) ** 2, axis=1)
    rec.converged = sol.converged
    rec.iterations = sol.iterations
    rec.awsr, rec.bse, rec.rbse = ev.awsr, ev.bse, ev.rbse
    rec.pattern_scale = sol.pattern_scale
    rec.ar, rec.shares, rec.split = ev.ar, ev.shares, ev.split
    rec.row_power_dev = float(np.max(np.abs(rows - cfg.power_total / cfg.n_tx)))
    rec.elapsed = time.perf_counter() - start
    return rec


def _work(args):
    sysd, spec, access, csit, lam, index, eval_samples = args
    system = SystemConfig(**sysd)
    return run_realization(system, spec, access, csit, lam, index, eval_samples)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class TradeoffPoint:
    access_mode: str
    csit_mode: str
    reg_lambda: float
    ewsr: float
    erbse: float
    per_user_ar: np.ndarray
    power_split: np.ndarray  # common fraction first
    n_ok: int
    infeasible_count: int


def aggregate(records, lambdas, modes, n_users, n_realizations=None,
              erbse_order="root_then_mean"):
    """
    Average realization records per (mode, lambda). Records with index
    ``>= n_realizations`` are ignored; records that did not finish are
    counted and excluded.
    """
    table = {}
    for r in records:
        if n_realizations is not None and r.realization >= n_realizations:
            continue
        table.setdefault((r.access_mode, r.csit_mode, r.reg_lambda), []).append(r)
    out = {}
    for access, csit in modes:
        pts = []
        for lam in lambdas:
            recs = sorted(table.get((access, csit, float(lam)), []),
                          key=lambda r: r.realization)
            ok = [r for r in recs if r.status == OK]
            bad = len(recs) - len(ok)
            if ok:
                ewsr = float(np.mean([r.awsr for r in ok]))
                if erbse_order == "root_then_mean":
                    erbse = float(np.mean([r.rbse for r in ok]))
                else:
                    erbse = float(np.sqrt(np.mean([r.bse for r in ok])))
                ar = np.mean([r.ar for r in ok], axis=0)
                split = np.mean([r.split for r in ok], axis=0)
            else:
                ewsr = erbse = float("nan")
                ar = np.full(n_users, np.nan)
                split = np.full(n_users + 1, np.nan)
            pts.append(TradeoffPoint(access, csit, float(lam), ewsr, erbse, ar,
                                     split, len(ok), bad))
        out[(access, csit)] = pts
    return out


@dataclass
class SweepResult:
    plan: SweepPlan
    records: list
    points: dict  # (access, csit) -> [TradeoffPoint]


def run_sweep(plan: SweepPlan, run_config: RunConfig, jobs=1,
              progress=None) -> SweepResult:
    """
    Run every work item of ``plan`` and aggregate. ``jobs > 1`` runs work
    items in worker processes; aggregation order is fixed, so the output
    does not depend on it.
    """
    system = run_config.system
    spec = run_config.spec()
    items = [(a, c, lam, i) for a, c in plan.modes for lam in plan.lambdas
             for i in range(plan.n_realizations)]
    records = []
    if jobs > 1:
        import dataclasses
        sysd = dataclasses.asdict(system)
        args = [(sysd, spec, a, c, lam, i, plan.eval_samples)
                for a, c, lam, i in items]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_work, args):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        for a, c, lam, i in items:
            rec = run_realization(system, spec, a, c, lam, i, plan.eval_samples)
            records.append(rec)
            if progress:
                progress(rec)
    points = aggregate(records, plan.lambdas, plan.modes, system.n_users,
                       erbse_order=plan.erbse_order)
    for pts in points.values():
        for p in pts:
            log.info("%s/%s lambda=%g ewsr=%.4f erbse=%.4g ok=%d infeasible=%d",
                     p.access_mode, p.csit_mode, p.reg_lambda, p.ewsr, p.erbse,
                     p.n_ok, p.infeasible_count)
    return SweepResult(plan, records, points)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def tradeoff_header(n_users):
    return (["mode", "csit_mode", "lambda", "ewsr_bpshz", "erbse"]
            + [f"ar_user_{k + 1}" for k in range(n_users)]
            + ["common_power_frac"]
            + [f"private_power_frac_{k + 1}" for k in range(n_users)]
            + ["n_ok", "n_infeasible"])


def write_tradeoff_csv(path, points, n_users):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(tradeoff_header(n_users))
        for p in points:
            w.writerow([p.access_mode, p.csit_mode, _fmt(p.reg_lambda),
                        _fmt(p.ewsr), _fmt(p.erbse)]
                       + [_fmt(x) for x in p.per_user_ar]
                       + [_fmt(x) for x in p.power_split]
                       + [p.n_ok, p.infeasible_count])


def write_gnuplot(path, points):
    with open(path, "w") as fh:
        fh.write("# erbse ewsr_bpshz\n")
        for p in points:
            fh.write(f"{_fmt(p.erbse)} {_fmt(p.ewsr)}\n")


def write_records_csv(path, records, n_users):
    head = (["mode", "csit_mode", "lambda", "realization", "status",
             "converged", "iterations", "awsr_bpshz", "bse", "rbse",
             "pattern_scale", "row_power_dev"]
            + [f"ar_user_{k + 1}" for k in range(n_users)]
            + [f"share_{k + 1}" for k in range(n_users)]
            + ["common_power_frac"]
            + [f"private_power_frac_{k + 1}" for k in range(n_users)]
            + ["error"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in records:
            def vec(v, n):
                v = np.asarray(v, dtype=float)
                return [_fmt(x) for x in v] if v.size == n else [""] * n
            w.writerow([r.access_mode, r.csit_mode, _fmt(r.reg_lambda),
                        r.realization, r.status, int(r.converged), r.iterations,
                        _fmt(r.awsr), _fmt(r.bse), _fmt(r.rbse),
                        _fmt(r.pattern_scale), _fmt(r.row_power_dev)]
                       + vec(r.ar, n_users) + vec(r.shares, n_users)
                       + vec(r.split, n_users + 1) + [r.error])


def read_records_csv(path):
    """Inverse of :func:`write_records_csv`."""
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        K = sum(1 for k in row if k.startswith("ar_user_"))

        def vec(prefix, n):
            vals = [row[f"{prefix}{k + 1}"] for k in range(n)]
            return (np.array([float(v) for v in vals]) if all(vals)
                    else np.zeros(0))
        split = ([row["common_power_frac"]]
                 + [row[f"private_power_frac_{k + 1}"] for k in range(K)])
        out.append(RealizationRecord(
            row["mode"], row["csit_mode"], float(row["lambda"]),
            int(row["realization"]), row["status"], bool(int(row["converged"])),
            int(row["iterations"]), float(row["awsr_bpshz"]), float(row["bse"]),
            float(row["rbse"]), float(row["pattern_scale"]),
            vec("ar_user_", K), vec("share_", K),
            np.array([float(v) for v in split]) if all(split) else np.zeros(0),
            float(row["row_power_dev"]), row["error"]))
    return out


def write_outputs(result: SweepResult, out_dir, n_users):
    """Write per-mode trade-off CSV and gnuplot files plus the records CSV."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for (access, csit), pts in result.points.items():
        stem = os.path.join(out_dir, f"tradeoff_{access.lower()}_{csit}")
        write_tradeoff_csv(stem + ".csv", pts, n_users)
        write_gnuplot(stem + ".dat", pts)
        paths += [stem + ".csv", stem + ".dat"]
    rec_path = os.path.join(out_dir, "realizations.csv")
    write_records_csv(rec_path, result.records, n_users)
    paths.append(rec_path)
    return [os.path.abspath(p) for p in paths]
