"""
ADMM splitting of the joint radar-communication design.

The communication block ``v`` and the radar block ``u`` hold a precoder,
common-rate shares and a pattern scale each; only the precoders are coupled
by the consensus constraint, through the scaled dual ``d``:

    v <- argmin  -AWSR(v) + rho/2 ||v_p - (u_p - d)||^2
    u <- argmin  lam * BSE(u) + rho/2 ||u_p - (v_p + d)||^2
    d <- d + v_p - u_p
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import awsr, bse, conic
from .config import BeampatternSpec, SystemConfig, rng_stream
from .model import (ChannelEstimate, SaaBatch, average_rates, bse as bse_value,
                    sample_saa_batch, unvec_precoder, vec_precoder)


class AdmmError(RuntimeError):
    """A subproblem failed; ``iteration`` and ``stage`` locate the failure."""

    def __init__(self, iteration, stage, cause):
        super().__init__(f"ADMM iteration {iteration}, {stage}-update: {cause}")
        self.iteration = iteration
        self.stage = stage
        self.cause = cause


@dataclass
class Block:
    precoder: np.ndarray  # complex vector, length Nt(K+1)
    shares: np.ndarray
    pattern_scale: float = 1.0


@dataclass
class AdmmState:
    v: Block
    u: Block
    d: np.ndarray
    iteration: int = 0
    residual_history: list = field(default_factory=list)


@dataclass
class RadComSolution:
    precoder: np.ndarray  # Nt x (K+1)
    shares: np.ndarray
    pattern_scale: float
    converged: bool
    iterations: int


@dataclass
class IterationLog:
    iteration: int
    primal: float
    dual: float
    awsr: float
    bse: float


def dual_update(state: AdmmState) -> AdmmState:
    return replace(state, d=state.d + (state.v.precoder - state.u.precoder))


def residuals(prev: AdmmState, state: AdmmState):
    """Primal ``v - u`` and dual ``u_new - u_old`` residual vectors."""
    r = state.v.precoder - state.u.precoder
    q = state.u.precoder - prev.u.precoder
    return r, q


def initial_state(config: SystemConfig, estimate: ChannelEstimate) -> AdmmState:
    P0 = awsr.warm_start(config, estimate.h_hat)
    v = Block(vec_precoder(P0), np.zeros(config.n_users), 1.0)
    u = Block(v.precoder.copy(), v.shares.copy(), 1.0)
    return AdmmState(v, u, np.zeros_like(v.precoder))


def v_update(state: AdmmState, config, batch, dump=None) -> Block:
    center = state.u.precoder - state.d
    problem = awsr.VUpdateProblem(center, config.admm_penalty, batch, config)
    init = unvec_precoder(state.v.precoder, config.n_tx)
    res = awsr.ao_solve(problem, init, state.v.shares, dump=dump)
    return Block(vec_precoder(res.precoder), res.shares, state.v.pattern_scale)


def u_update(state: AdmmState, config, spec, rng, dump=None) -> Block:
    center = state.v.precoder + state.d
    problem = bse.UUpdateProblem(center, config.admm_penalty, spec,
                                 config.reg_lambda, config)
    lifted = bse.solve_sdr(problem, dump=dump)
    rec = bse.recover_rank1(lifted, problem, rng=rng)
    pol = bse.refine(rec.u, problem, max_iters=config.refine_steps)
    best = pol if pol.objective <= rec.objective else rec
    return Block(best.u, state.v.shares.copy(), best.pattern_scale)


def run(config: SystemConfig, estimate: ChannelEstimate, spec: BeampatternSpec,
        batch: SaaBatch | None = None, realization=0, log=None,
        dump=None) -> RadComSolution:
    """
    Run the ADMM loop for one channel realization.

    Parameters
    ----------
    batch : SaaBatch, optional
        Channel samples for the average rates; drawn once from the
        ``saa`` stream of ``realization`` when omitted and reused for all
        iterations.
    log : list, optional
        Receives one :class:`IterationLog` per iteration.
    dump : callable, optional
        Called with any conic problem the solver fails on.

    Raises
    ------
    AdmmError
        If a subproblem fails; wraps :class:`awsr.QosInfeasible` and
        :class:`conic.ConicError` causes.
    """
    if batch is None:
        batch = sample_saa_batch(estimate, config.saa_samples,
                                 rng_stream(config.rng_seed, "saa", realization))
    rng = rng_stream(config.rng_seed, "randomization", realization)
    state = initial_state(config, estimate)
    nu = config.admm_tolerance
    converged = False
    for t in range(1, config.max_admm_iters + 1):
        prev = state
        try:
            v = v_update(state, config, batch, dump)
        except (awsr.QosInfeasible, awsr.SubproblemError) as exc:
            raise AdmmError(t, "v", exc) from exc
        state = replace(state, v=v)
        try:
            u = u_update(state, config, spec, rng, dump)
        except conic.ConicError as exc:
            raise AdmmError(t, "u", exc) from exc
        state = replace(state, u=u, iteration=t)
        state = dual_update(state)
        r, q = residuals(prev, state)
        rn, qn = float(np.linalg.norm(r)), float(np.linalg.norm(q))
        state.residual_history = prev.residual_history + [(rn, qn)]
        if log is not None:
            Pv = unvec_precoder(state.v.precoder, config.n_tx)
            Pu = unvec_precoder(state.u.precoder, config.n_tx)
            ar = average_rates(Pv, state.v.shares, batch, config.weights)
            log.append(IterationLog(t, rn, qn, ar.awsr,
                                    bse_value(Pu, spec, config.antenna_spacing,
                                              state.u.pattern_scale)))
        if (rn <= nu and qn <= nu) or math.isinf(nu):
            converged = rn <= nu and qn <= nu
            break
    return RadComSolution(unvec_precoder(state.u.precoder, config.n_tx),
                          np.asarray(state.v.shares, dtype=float),
                          float(state.u.pattern_scale), converged,
                          state.iteration)


def write_residual_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "primal_residual", "dual_residual",
                    "awsr_surrogate", "bse"])
        for e in log:
            w.writerow([e.iteration, repr(e.primal), repr(e.dual),
                        repr(e.awsr), repr(e.bse)])
