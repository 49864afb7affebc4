"""
Communication (v-update) subproblem: maximize the sample-average weighted
sum rate with common-rate decodability and QoS constraints plus the ADMM
proximal term, by alternating MMSE receivers/weights with a convex
quadratically constrained precoder step (SAA + WMMSE + AO).

The augmented WMSE is kept in bits,

    xi = 1 + (w * eps - 1 - ln w) / ln 2,

which is minimized over ``w`` at ``w = 1 / eps`` where it equals
``1 - rate``; every AO step therefore lower-bounds the rate and the
surrogate coincides with the true objective after each MMSE update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic
from .config import SystemConfig
from .model import (SaaBatch, average_rates, batch_rates, project_per_antenna,
                    vec_precoder)

LN2 = np.log(2.0)


class QosInfeasible(RuntimeError):
    """The QoS rate targets could not be met."""


class SubproblemError(RuntimeError):
    """A conic solve inside a subproblem failed."""

    def __init__(self, message, problem=None, solution=None):
        super().__init__(message)
        self.problem = problem
        self.solution = solution


@dataclass
class WmmseState:
    g_common: np.ndarray  # (M', K) complex equalizers
    g_private: np.ndarray
    w_common: np.ndarray  # (M', K) positive weights
    w_private: np.ndarray
    mse_common: np.ndarray  # MMSE values in (0, 1]
    mse_private: np.ndarray
    channels: np.ndarray = field(repr=False)  # (M', Nt, K)
    rsma: bool = True


@dataclass
class VUpdateProblem:
    prox_center: np.ndarray  # complex, length Nt(K+1)
    prox_weight: float
    batch: SaaBatch
    config: SystemConfig

    def __post_init__(self):
        if self.prox_weight < 0:
            raise ValueError("prox_weight must be nonnegative")


@dataclass
class PrecoderSubproblem:
    conic: conic.ConicProblem
    z: slice
    shares: slice | None
    slack: slice | None
    columns: np.ndarray
    n_tx: int
    n_users: int

    def decode(self, x):
        N = self.n_tx * len(self.columns)
        zc = x[self.z][:N] + 1j * x[self.z][N:]
        P = np.zeros((self.n_tx, self.n_users + 1), dtype=complex)
        P[:, self.columns] = zc.reshape(self.n_tx, -1, order="F")
        shares = (np.maximum(x[self.shares], 0.0) if self.shares is not None
                  else np.zeros(self.n_users))
        return P, shares


@dataclass
class AoResult:
    precoder: np.ndarray
    shares: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int


def active_columns(config: SystemConfig):
    K = config.n_users
    return np.arange(K + 1) if config.rsma else np.arange(1, K + 1)


# ---------------------------------------------------------------------------
# MMSE step
# ---------------------------------------------------------------------------

def mmse_step(P, batch: SaaBatch, rsma=True) -> WmmseState:
    """MMSE equalizers and weights for every sample and user."""
    H = batch.samples
    X = np.conj(np.swapaxes(H, -1, -2)) @ P  # (M, K, K+1): h_k^H p_j
    S = X.real ** 2 + X.imag ** 2
    K = S.shape[1]
    idx = np.arange(K)
    own = X[:, idx, idx + 1]
    own_pow = S[:, idx, idx + 1]
    total_private = S[:, :, 1:].sum(axis=-1)
    interference = total_private - own_pow + 1.0
    T_p = total_private + 1.0
    g_p = np.conj(own) / T_p
    eps_p = interference / T_p
    if rsma:
        T_c = S[:, :, 0] + T_p
        g_c = np.conj(X[:, :, 0]) / T_c
        eps_c = T_p / T_c
    else:
        g_c = np.zeros_like(g_p)
        eps_c = np.ones_like(eps_p)
    return WmmseState(g_c, g_p, 1.0 / eps_c, 1.0 / eps_p, eps_c, eps_p, H,
                      rsma)


def augmented_wmse(P, state: WmmseState):
    """Per-sample augmented WMSEs (common, private) at fixed equalizers/weights."""
    H = state.channels
    X = np.conj(np.swapaxes(H, -1, -2)) @ P
    S = X.real ** 2 + X.imag ** 2
    K = S.shape[1]
    idx = np.arange(K)
    T_p = S[:, :, 1:].sum(axis=-1) + 1.0
    eps_p = (np.abs(state.g_private) ** 2 * T_p
             - 2.0 * np.real(state.g_private * X[:, idx, idx + 1]) + 1.0)
    T_c = S[:, :, 0] + T_p
    eps_c = (np.abs(state.g_common) ** 2 * T_c
             - 2.0 * np.real(state.g_common * X[:, :, 0]) + 1.0)

    def xi(w, e):
        return 1.0 + (w * e - 1.0 - np.log(w)) / LN2

    return xi(state.w_common, eps_c), xi(state.w_private, eps_p)


# ---------------------------------------------------------------------------
# Quadratic forms in the real parametrization z = [Re vec(P_a); Im vec(P_a)]
# ---------------------------------------------------------------------------

def _factor(Q, tol=1e-12):
    """Complex F with F^H F = Q for Hermitian PSD Q (rank-trimmed)."""
    Q = 0.5 * (Q + Q.conj().T)
    lam, V = np.linalg.eigh(Q)
    keep = lam > tol * max(1.0, lam[-1])
    return np.sqrt(lam[keep])[:, None] * V[:, keep].conj().T


def _real_map(Fc_blocks, positions, n_tx, n_active):
    """
    Real matrix of the complex linear map p -> [F p_j for j in positions]
    acting on z (2 * Nt * n_active).
    """
    if not positions:
        return np.zeros((0, 2 * n_tx * n_active))
    N = n_tx * n_active
    r = Fc_blocks.shape[0]
    Fc = np.zeros((r * len(positions), N), dtype=complex)
    for row, a in enumerate(positions):
        Fc[row * r:(row + 1) * r, a * n_tx:(a + 1) * n_tx] = Fc_blocks
    return np.block([[Fc.real, -Fc.imag], [Fc.imag, Fc.real]])


def _real_linear(b, position, n_tx, n_active):
    """Real coefficient vector l with l^T z = Re(b^H p_position)."""
    N = n_tx * n_active
    l = np.zeros(2 * N)
    l[position * n_tx:(position + 1) * n_tx] = b.real
    l[N + position * n_tx:N + (position + 1) * n_tx] = b.imag
    return l


def _stack_real(F_list, total_cols):
    rows = [F for F in F_list if F.shape[0]]
    if not rows:
        return np.zeros((1, total_cols))
    return np.vstack(rows)


@dataclass
class _QuadForm:
    """xi_bar(z) = ||F z||^2 + l^T z + const."""
    F: np.ndarray
    l: np.ndarray
    const: float
    Q: np.ndarray = None  # complex per-column Hessian block


def _wmse_forms(state: WmmseState, columns, n_tx):
    """Sample-averaged augmented WMSEs as quadratic forms in z."""
    H = state.channels
    M, _, K = H.shape
    n_active = len(columns)
    pos = {c: i for i, c in enumerate(columns)}
    private_pos = [pos[j] for j in range(1, K + 1)]
    all_pos = list(range(n_active))
    forms_p, forms_c = [], []
    for k in range(K):
        h = H[:, :, k]  # (M, Nt)
        w, g = state.w_private[:, k], state.g_private[:, k]
        c = w * np.abs(g) ** 2 / LN2
        Q = np.einsum("m,mi,mj->ij", c, h, h.conj()) / M
        b = np.einsum("m,mi->i", w * np.conj(g), h) / (M * LN2)
        const = np.mean(1.0 + (w * (np.abs(g) ** 2 + 1.0) - 1.0 - np.log(w)) / LN2)
        F = _real_map(_factor(Q), private_pos, n_tx, n_active)
        l = -2.0 * _real_linear(b, pos[k + 1], n_tx, n_active)
        forms_p.append(_QuadForm(F, l, float(const), Q))
        if state.rsma:
            w, g = state.w_common[:, k], state.g_common[:, k]
            c = w * np.abs(g) ** 2 / LN2
            Q = np.einsum("m,mi,mj->ij", c, h, h.conj()) / M
            b = np.einsum("m,mi->i", w * np.conj(g), h) / (M * LN2)
            const = np.mean(1.0 + (w * (np.abs(g) ** 2 + 1.0) - 1.0
                                   - np.log(w)) / LN2)
            F = _real_map(_factor(Q), all_pos, n_tx, n_active)
            l = -2.0 * _real_linear(b, pos[0], n_tx, n_active)
            forms_c.append(_QuadForm(F, l, float(const)))
    return forms_p, forms_c


# ---------------------------------------------------------------------------
# Precoder step
# ---------------------------------------------------------------------------

def build_precoder_subproblem(state: WmmseState, problem: VUpdateProblem,
                              restore=False) -> PrecoderSubproblem:
    """
    Convex precoder/shares step at fixed equalizers and weights.

    With ``restore=True`` the objective is replaced by a slack ``tau >= 0``
    added to every QoS row, minimized to recover QoS feasibility.
    """
    cfg = problem.config
    K, n_tx = cfg.n_users, cfg.n_tx
    columns = active_columns(cfg)
    n_active = len(columns)
    N = n_tx * n_active
    mu = cfg.weights
    rho = problem.prox_weight
    center = np.asarray(problem.prox_center).reshape(n_tx, K + 1, order="F")
    center_a = vec_precoder(center[:, columns])
    pos = {c: i for i, c in enumerate(columns)}

    forms_p, forms_c = _wmse_forms(state, columns, n_tx)

    bld = conic.ConicBuilder()
    z = bld.variable("free", 2 * N)
    shares = bld.variable("nonneg", K) if cfg.rsma else None
    tau = bld.variable("nonneg", 1) if restore else None

    # objective: sum_k mu_k xi_k - sum_k mu_k C_k + rho/2 ||p - center||^2
    if restore:
        bld.cost(tau, [1.0])
        prox = max(rho, 1e-6) * 1e-6
    else:
        prox = rho
    hess = {a: 0.5 * prox * np.eye(n_tx, dtype=complex) for a in range(n_active)}
    lin = np.zeros(2 * N)
    if not restore:
        for k in range(K):
            for j in range(1, K + 1):
                hess[pos[j]] = hess[pos[j]] + mu[k] * forms_p[k].Q
            lin += mu[k] * forms_p[k].l
        if cfg.rsma:
            bld.cost(shares, -mu)
    lin += -prox * np.concatenate([center_a.real, center_a.imag])
    F_obj = _stack_real([_real_map(_factor(hess[a]), [a], n_tx, n_active)
                         for a in range(n_active)], 2 * N)
    # ||F z||^2 <= sigma * epi with sigma ~ ||F z|| at the prox center
    z_c = np.concatenate([center_a.real, center_a.imag])
    sigma = max(1.0, float(np.linalg.norm(F_obj @ z_c)))
    obj_epi = bld.variable("free", 1)
    bld.add_quadratic_le([(z, F_obj)], [(obj_epi, [1.0])], 0.0, scale=sigma)
    bld.cost(obj_epi, [sigma])
    bld.cost(z, lin)

    # common-rate decodability: sum C <= 1 - xi_c,k
    if cfg.rsma:
        for fc in forms_c:
            bld.add_quadratic_le([(z, _stack_real([fc.F], 2 * N))],
                                 [(z, -fc.l), (shares, -np.ones(K))],
                                 1.0 - fc.const)
    # QoS: C_k + 1 - xi_k >= R_th  (minus slack when restoring)
    if cfg.qos_threshold > 0:
        for k, fp in enumerate(forms_p):
            terms = [(z, -fp.l)]
            if cfg.rsma:
                e = np.zeros(K)
                e[k] = 1.0
                terms.append((shares, e))
            if restore:
                terms.append((tau, [1.0]))
            bld.add_quadratic_le([(z, _stack_real([fp.F], 2 * N))], terms,
                                 1.0 - cfg.qos_threshold - fp.const)
    # per-antenna power, convex relaxation diag(P P^H) <= Pt/Nt
    if cfg.v_power_constraint == "per_antenna_le":
        bound = np.sqrt(cfg.power_total / n_tx)
        for i in range(n_tx):
            sel = np.zeros((2 * n_active, 2 * N))
            for a in range(n_active):
                sel[a, a * n_tx + i] = 1.0
                sel[n_active + a, N + a * n_tx + i] = 1.0
            bld.add_norm_le([(z, sel)], bound)

    return PrecoderSubproblem(bld.build(), z, shares, tau, columns, n_tx, K)


# ---------------------------------------------------------------------------
# Objective bookkeeping
# ---------------------------------------------------------------------------

def v_objective(P, shares, problem: VUpdateProblem):
    """-sum_k mu_k (C_k + Rbar_k) + rho/2 ||vec P - center||^2 on the batch."""
    cfg = problem.config
    _, rp = batch_rates(P, problem.batch.samples)
    awsr = np.sum(cfg.weights * (np.asarray(shares) + rp.mean(axis=0)))
    diff = vec_precoder(P) - np.asarray(problem.prox_center)
    return float(-awsr + 0.5 * problem.prox_weight * np.vdot(diff, diff).real)


def qos_margin(P, shares, cfg: SystemConfig, batch: SaaBatch):
    """Smallest slack of the QoS and decodability rows (>= 0 means feasible)."""
    rc, rp = batch_rates(P, batch.samples)
    avg_c, avg_p = rc.mean(axis=0), rp.mean(axis=0)
    shares = np.asarray(shares)
    margins = [np.min(avg_c) - shares.sum()] if cfg.rsma else []
    if cfg.qos_threshold > 0:
        margins.extend(shares + avg_p - cfg.qos_threshold)
    return float(min(margins)) if margins else np.inf


def best_shares(P, cfg: SystemConfig, batch: SaaBatch):
    """
    Shares meeting QoS where possible: each user gets its QoS deficit and
    the remaining common rate goes to the user with the largest weight.
    """
    if not cfg.rsma:
        return np.zeros(cfg.n_users)
    ar = average_rates(P, np.zeros(cfg.n_users), batch, cfg.weights)
    need = np.maximum(cfg.qos_threshold - ar.private, 0.0)
    left = ar.common_min - need.sum()
    shares = need.copy()
    if left > 0:
        shares[int(np.argmax(cfg.weights))] += left
    return shares


# ---------------------------------------------------------------------------
# Alternating optimization
# ---------------------------------------------------------------------------

def _solve_step(state, problem, restore, tolerance, dump=None):
    sub = build_precoder_subproblem(state, problem, restore=restore)
    sol = conic.solve(sub.conic, tolerance=tolerance)
    if sol.status == conic.INFEASIBLE:
        raise QosInfeasible("precoder step infeasible at fixed receivers")
    if sol.status != conic.OPTIMAL:
        if dump is not None:
            dump(sub.conic)
        raise SubproblemError(
            f"precoder step failed ({sol.status}, kkt={sol.kkt_residuals})",
            sub.conic, sol)
    P, shares = sub.decode(sol.x_star)
    slack = float(sol.x_star[sub.slack][0]) if restore else 0.0
    return P, shares, slack


def restore_qos(problem: VUpdateProblem, P, max_iters=50, dump=None):
    """
    AO on the slack-augmented problem until the QoS rows hold. Raises
    :class:`QosInfeasible` if the slack stalls above zero.
    """
    cfg = problem.config
    prev = np.inf
    for _ in range(max_iters):
        state = mmse_step(P, problem.batch, cfg.rsma)
        P, shares, slack = _solve_step(state, problem, True,
                                       cfg.conic_tolerance, dump)
        if slack <= 1e-7:
            shares = best_shares(P, cfg, problem.batch)
            if qos_margin(P, shares, cfg, problem.batch) >= -1e-6:
                return P, shares
        if prev - slack <= 1e-4 * max(1.0, abs(slack)):
            break
        prev = slack
    raise QosInfeasible(f"QoS targets unreachable (slack {slack:.3g})")


def ao_solve(problem: VUpdateProblem, init, shares_init=None,
             dump=None) -> AoResult:
    """
    Alternate MMSE receivers/weights and the convex precoder step.

    The trace holds the exact objective (minimization form) after each
    accepted step and is non-increasing; a step that would increase it
    (solver round-off) ends the loop with the previous iterate.
    """
    cfg = problem.config
    P = np.array(init, dtype=complex)
    if not cfg.rsma:
        P[:, 0] = 0.0
    if shares_init is None:
        shares = best_shares(P, cfg, problem.batch)
    else:
        shares = np.asarray(shares_init, dtype=float) * (1.0 if cfg.rsma else 0.0)
    if qos_margin(P, shares, cfg, problem.batch) < -1e-6:
        shares = best_shares(P, cfg, problem.batch)
        if qos_margin(P, shares, cfg, problem.batch) < -1e-6:
            P, shares = restore_qos(problem, P, dump=dump)

    trace = [v_objective(P, shares, problem)]
    converged = False
    it = 0
    for it in range(1, cfg.ao_max_iters + 1):
        state = mmse_step(P, problem.batch, cfg.rsma)
        P_new, C_new, _ = _solve_step(state, problem, False,
                                      cfg.conic_tolerance, dump)
        J = v_objective(P_new, C_new, problem)
        if J > trace[-1]:
            converged = True
            break
        P, shares = P_new, C_new
        trace.append(J)
        if trace[-2] - J <= cfg.ao_tolerance * max(1.0, abs(J)):
            converged = True
            break
    return AoResult(P, shares, trace, converged, it)


def warm_start(config: SystemConfig, h_hat):
    """
    Initial precoder: the common column is the principal eigenvector of
    sum_k h_k h_k^H with half the power (RSMA only); private columns are
    regularized zero-forcing directions sharing the rest; rows are then
    rescaled to Pt/Nt.
    """
    n_tx, K = h_hat.shape
    Pt = config.power_total
    P = np.zeros((n_tx, K + 1), dtype=complex)
    p_private = Pt
    if config.rsma:
        _, V = np.linalg.eigh(h_hat @ h_hat.conj().T)
        P[:, 0] = V[:, -1] * np.sqrt(0.5 * Pt)
        p_private = 0.5 * Pt
    W = np.linalg.solve(h_hat @ h_hat.conj().T + (K / Pt) * np.eye(n_tx), h_hat)
    W = W / np.linalg.norm(W, axis=0, keepdims=True)
    P[:, 1:] = W * np.sqrt(p_private / K)
    return project_per_antenna(P, Pt, active_columns(config))
