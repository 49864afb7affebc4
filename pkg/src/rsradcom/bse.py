"""
Radar (u-update) subproblem: minimize

    lam * sum_m (alpha * Pd(theta_m) - a_m^H (sum_s P_s P_s^H) a_m)^2
        + rho/2 * ||c - vec P||^2

over precoders with every row power equal to Pt/Nt and alpha > 0.

The quartic beampattern term is convexified by lifting each stream block
to ``[[U_s, u_s], [u_s^H, 1]] >= 0`` (a Schur-complement relaxation of
``U_s = u_s u_s^H``). A rank-one precoder is recovered from the lifted
solution by eigen-decomposition or Gaussian randomization. A projected
gradient method on the product of spheres serves as an independent check
and as a local polish.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import conic
from .config import BeampatternSpec, SystemConfig
from .model import project_per_antenna, steering_matrix, unvec_precoder, vec_precoder

ALPHA_FLOOR = 1e-9


@dataclass
class UUpdateProblem:
    prox_center: np.ndarray  # complex, length Nt(K+1)
    prox_weight: float
    spec: BeampatternSpec
    reg_lambda: float
    config: SystemConfig

    def __post_init__(self):
        if self.prox_weight < 0 or not self.reg_lambda > 0:
            raise ValueError("need prox_weight >= 0 and reg_lambda > 0")

    @property
    def columns(self):
        K = self.config.n_users
        return np.arange(K + 1) if self.config.rsma else np.arange(1, K + 1)


@dataclass
class LiftedSolution:
    U: np.ndarray  # Hermitian, side Nt(K+1)
    u_lin: np.ndarray
    alpha_u: float
    sdr_objective: float
    kkt_residuals: tuple = (0.0, 0.0, 0.0)


class Recovered(NamedTuple):
    u: np.ndarray
    pattern_scale: float
    objective: float


def optimal_pattern_scale(gains, desired):
    """Least-squares scale of the desired pattern, clamped positive."""
    desired = np.asarray(desired, dtype=float)
    denom = float(desired @ desired)
    if denom <= 0:
        raise ValueError("desired pattern is identically zero")
    return max(ALPHA_FLOOR, float(desired @ np.asarray(gains)) / denom)


def u_objective(u, problem: UUpdateProblem, alpha=None):
    """Original (unlifted) objective; alpha defaults to its optimal value."""
    cfg = problem.config
    P = unvec_precoder(u, cfg.n_tx)
    A = steering_matrix(problem.spec.angles, cfg.n_tx, cfg.antenna_spacing)
    gains = np.sum(np.abs(A.conj().T @ P) ** 2, axis=1)
    if alpha is None:
        alpha = optimal_pattern_scale(gains, problem.spec.desired)
    err = alpha * problem.spec.desired - gains
    diff = np.asarray(problem.prox_center) - u
    val = (problem.reg_lambda * float(err @ err)
           + 0.5 * problem.prox_weight * float(np.vdot(diff, diff).real))
    return val, alpha


# ---------------------------------------------------------------------------
# Lifted conic program
# ---------------------------------------------------------------------------

def _entry_coeffs(m, i, j):
    """
    Coefficients (over svec of a real 2m x 2m block) of Re X_ij and Im X_ij
    where X is the Hermitian matrix represented by the block.
    """
    side = 2 * m
    dim = side * (side + 1) // 2

    def e(p, q):
        v = np.zeros(dim)
        v[conic.svec_index(side, p, q)] = 1.0 if p == q else 1.0 / conic.SQRT2
        return v

    re = 0.5 * (e(i, j) + e(m + i, m + j))
    im = 0.5 * (e(m + i, j) - e(i, m + j))
    return re, im


def _gain_map(angles, n_tx, spacing):
    """
    Matrix L with gains = L r, where r stacks Re R_ii, Re R_ij (i<j) and
    Im R_ij (i<j) of the Hermitian transmit covariance R.
    """
    A = steering_matrix(angles, n_tx, spacing)  # Nt x M
    iu, ju = np.triu_indices(n_tx, 1)
    cross = np.conj(A[iu, :]) * A[ju, :]  # (pairs, M)
    return np.hstack([np.ones((A.shape[1], n_tx)),
                      2.0 * cross.real.T, -2.0 * cross.imag.T])


def solve_sdr(problem: UUpdateProblem, dump=None) -> LiftedSolution:
    """Solve the Schur-complement relaxation of the radar subproblem."""
    cfg = problem.config
    n_tx, K = cfg.n_tx, cfg.n_users
    m = n_tx + 1
    streams = list(problem.columns)
    spec = problem.spec
    lam, rho = problem.reg_lambda, problem.prox_weight
    c = np.asarray(problem.prox_center).reshape(n_tx, K + 1, order="F")

    # real coefficient rows for R = sum_s U_s, in the r ordering
    iu, ju = np.triu_indices(n_tx, 1)
    re_diag = [_entry_coeffs(m, i, i)[0] for i in range(n_tx)]
    re_off = [_entry_coeffs(m, i, j)[0] for i, j in zip(iu, ju)]
    im_off = [_entry_coeffs(m, i, j)[1] for i, j in zip(iu, ju)]
    T = np.vstack(re_diag + re_off + im_off)  # r = T svec(block)

    L = _gain_map(spec.angles, n_tx, cfg.antenna_spacing)
    design = np.hstack([spec.desired[:, None], -L])
    _, Rq = np.linalg.qr(design)  # ||design @ [alpha; r]|| = ||Rq @ [alpha; r]||

    bld = conic.ConicBuilder()
    blocks = [bld.variable("psd", 2 * m) for _ in streams]
    alpha = bld.variable("nonneg", 1)  # alpha - ALPHA_FLOOR
    epi = bld.variable("free", 1)

    # per-antenna power: sum_s Re U_s[i, i] = Pt / Nt
    for i in range(n_tx):
        bld.equality([(blk, re_diag[i]) for blk in blocks],
                     cfg.power_total / n_tx)
    # lifted corner entry equals one
    corner = _entry_coeffs(m, n_tx, n_tx)[0]
    for blk in blocks:
        bld.equality([(blk, corner)], 1.0)

    # lam * BSE <= sigma * epi, sigma ~ sqrt(lam * BSE) at the prox center
    Rs = np.sqrt(lam) * Rq
    sigma = max(1.0, np.sqrt(u_objective(
        vec_precoder(project_per_antenna(c, cfg.power_total, streams)),
        problem)[0]))
    f_terms = [(alpha, Rs[:, :1])] + [(blk, Rs[:, 1:] @ T) for blk in blocks]
    bld.add_quadratic_le(f_terms, [(epi, [1.0])], 0.0,
                         offset=Rs[:, 0] * ALPHA_FLOOR, scale=sigma)
    bld.cost(epi, [sigma])

    # rho/2 (||c||^2 - 2 Re c^H u + tr U)
    for blk, s in zip(blocks, streams):
        cost = np.zeros(blk.stop - blk.start)
        for i in range(n_tx):
            re, im = _entry_coeffs(m, i, n_tx)
            cost += -rho * (c[i, s].real * re + c[i, s].imag * im)
            cost += 0.5 * rho * re_diag[i]
        bld.cost(blk, cost)

    prob = bld.build()
    sol = conic.solve(prob, tolerance=cfg.conic_tolerance)
    if sol.status != conic.OPTIMAL:
        if dump is not None:
            dump(prob)
        raise conic.ConicError(
            f"radar relaxation failed ({sol.status}, kkt={sol.kkt_residuals})",
            sol, prob)

    x = sol.x_star
    n = n_tx * (K + 1)
    u = np.zeros(n, dtype=complex)
    U = np.zeros((n, n), dtype=complex)
    for blk, s in zip(blocks, streams):
        X = conic.unembed_hermitian(conic.smat(x[blk]))
        sl = slice(s * n_tx, (s + 1) * n_tx)
        u[sl] = X[:n_tx, n_tx]
        # Schur complement, with interior-point round-off clipped
        S = X[:n_tx, :n_tx] - np.outer(u[sl], u[sl].conj())
        lam_s, V = np.linalg.eigh(0.5 * (S + S.conj().T))
        U[sl, sl] = (V * np.maximum(lam_s, 0.0)) @ V.conj().T
    U = U + np.outer(u, u.conj())
    U = 0.5 * (U + U.conj().T)
    const = 0.5 * rho * float(np.vdot(c, c).real)
    return LiftedSolution(U, u, float(x[alpha][0]) + ALPHA_FLOOR,
                          sol.objective + const, sol.kkt_residuals)


# ---------------------------------------------------------------------------
# Rank-one recovery
# ---------------------------------------------------------------------------

def _phase_align(v, ref):
    inner = np.vdot(v, ref)
    if abs(inner) > 0:
        v = v * (inner / abs(inner))
    return v


def _feasible(u, problem):
    cfg = problem.config
    P = project_per_antenna(unvec_precoder(u, cfg.n_tx), cfg.power_total,
                            problem.columns)
    return vec_precoder(P)


def recover_rank1(lifted: LiftedSolution, problem: UUpdateProblem,
                  rng=None, draws=None, ratio=None) -> Recovered:
    """
    Feasible precoder from a lifted solution: the principal eigenvector when
    the lift is numerically rank one, otherwise the best of Gaussian
    randomization draws and the projected linear block.
    """
    cfg = problem.config
    draws = cfg.randomizations if draws is None else draws
    ratio = cfg.rank1_ratio if ratio is None else ratio
    lam, V = np.linalg.eigh(lifted.U)
    lam = np.maximum(lam[::-1], 0.0)
    V = V[:, ::-1]
    if lam[0] <= 0:
        cands = [_feasible(lifted.u_lin, problem)]
    elif lam.size == 1 or lam[1] <= ratio * lam[0]:
        top = np.sqrt(lam[0]) * V[:, 0]
        ref = lifted.u_lin if np.linalg.norm(lifted.u_lin) > 0 else problem.prox_center
        cands = [_feasible(_phase_align(top, ref), problem)]
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        ref = np.asarray(problem.prox_center)
        root = V * np.sqrt(lam)[None, :]
        cands = [_feasible(lifted.u_lin, problem)]
        for _ in range(draws):
            xi = (rng.standard_normal(lam.size)
                  + 1j * rng.standard_normal(lam.size)) / np.sqrt(2.0)
            cands.append(_feasible(_phase_align(root @ xi, ref), problem))
    vals = [u_objective(c, problem) for c in cands]
    best = int(np.argmin([v for v, _ in vals]))
    return Recovered(cands[best], vals[best][1], vals[best][0])


# ---------------------------------------------------------------------------
# Projected gradient on the product of spheres
# ---------------------------------------------------------------------------

def _pg_descent(u0, problem, max_iters=500, rel_tol=1e-12):
    cfg = problem.config
    n_tx = cfg.n_tx
    A = steering_matrix(problem.spec.angles, n_tx, cfg.antenna_spacing)
    d = problem.spec.desired
    lam, rho = problem.reg_lambda, problem.prox_weight
    c = unvec_precoder(np.asarray(problem.prox_center), n_tx)
    cols = problem.columns

    def value(P):
        AP = A.conj().T @ P
        g = np.sum(np.abs(AP) ** 2, axis=1)
        alpha = optimal_pattern_scale(g, d)
        e = alpha * d - g
        diff = c - P
        f = lam * float(e @ e) + 0.5 * rho * float(np.vdot(diff, diff).real)
        return f, alpha, e, AP

    P = unvec_precoder(u0, n_tx).copy()
    f, alpha, e, AP = value(P)
    step = 1.0 / (rho + 8.0 * lam * cfg.power_total * n_tx * len(d) + 1e-12)
    for _ in range(max_iters):
        grad = -4.0 * lam * (A * e[None, :]) @ AP + rho * (P - c)
        grad[:, [j for j in range(P.shape[1]) if j not in cols]] = 0.0
        while True:
            P_new = project_per_antenna(P - step * grad, cfg.power_total, cols)
            f_new, a_new, e_new, AP_new = value(P_new)
            decrease = np.real(np.vdot(grad, P - P_new))
            if f_new <= f - 1e-4 * decrease or step < 1e-20:
                break
            step *= 0.5
        if f_new > f:
            break
        done = f - f_new <= rel_tol * max(1.0, abs(f))
        P, f, alpha, e, AP = P_new, f_new, a_new, e_new, AP_new
        step *= 2.0
        if done:
            break
    return vec_precoder(P), f, alpha


def refine(u0, problem: UUpdateProblem, max_iters=200) -> Recovered:
    """Local polish of a feasible point by projected gradient."""
    u, f, alpha = _pg_descent(_feasible(u0, problem), problem, max_iters)
    return Recovered(u, alpha, f)


def pg_oracle(problem: UUpdateProblem, restarts=5, rng=None, max_iters=2000):
    """
    Projected gradient on the original non-convex problem from the
    projected proximal center and ``restarts - 1`` random feasible points.
    Returns the best ``(u, objective)``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    n = np.asarray(problem.prox_center).size
    starts = [np.asarray(problem.prox_center, dtype=complex)]
    for _ in range(restarts - 1):
        starts.append(rng.standard_normal(n) + 1j * rng.standard_normal(n))
    best = None
    for s in starts:
        u, f, _ = _pg_descent(_feasible(s, problem), problem, max_iters)
        if best is None or f < best[1]:
            best = (u, f)
    return best
