import numpy as np
import pytest
from scipy.optimize import minimize

from rsradcom import awsr, conic
from rsradcom.config import SystemConfig, rng_stream
from rsradcom.model import (SaaBatch, average_rates, batch_rates,
                            draw_channel_estimate,
                            vec_precoder)

from awsr_instances import crandn, v_problem


# --- MMSE step ---------------------------------------------------------------

def test_mmse_scalar_example():
    H = np.array([[[1.0], [0.0]]], dtype=complex)  # one sample, Nt=2, K=1
    P = np.array([[0, 1], [0, 0]], dtype=complex)  # p_1=[1,0], p_c=0
    st = awsr.mmse_step(P, SaaBatch(H))
    assert st.g_private[0, 0] == pytest.approx(0.5)
    assert st.mse_private[0, 0] == pytest.approx(0.5)
    assert st.w_private[0, 0] == pytest.approx(2.0)
    assert -np.log2(st.mse_private[0, 0]) == pytest.approx(
        batch_rates(P, H)[1][0, 0])


def test_mmse_zero_column():
    rng = np.random.default_rng(0)
    H = crandn(rng, 1, 3, 2)
    P = crandn(rng, 3, 3)
    P[:, 0] = 0
    st = awsr.mmse_step(P, SaaBatch(H))
    np.testing.assert_allclose(st.mse_common, 1.0)
    np.testing.assert_allclose(st.w_common, 1.0)


def test_rate_wmmse_identity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        H = crandn(rng, 3, 4, 2)
        P = 3 * crandn(rng, 4, 3)
        st = awsr.mmse_step(P, SaaBatch(H))
        rc, rp = batch_rates(P, H)
        np.testing.assert_allclose(-np.log2(st.mse_common), rc, atol=1e-10)
        np.testing.assert_allclose(-np.log2(st.mse_private), rp, atol=1e-10)
        xc, xp = awsr.augmented_wmse(P, st)
        np.testing.assert_allclose(1 - xc, rc, atol=1e-9)
        np.testing.assert_allclose(1 - xp, rp, atol=1e-9)
        assert np.all(st.w_private >= 1) and np.all(st.mse_private <= 1)


def test_augmented_wmse_upper_bounds_rate_loss():
    # at fixed receivers, 1 - xi lower-bounds the rate for any precoder
    rng = np.random.default_rng(2)
    H = crandn(rng, 4, 4, 2)
    st = awsr.mmse_step(3 * crandn(rng, 4, 3), SaaBatch(H))
    for _ in range(20):
        P = 3 * crandn(rng, 4, 3)
        rc, rp = batch_rates(P, H)
        xc, xp = awsr.augmented_wmse(P, st)
        assert np.all(1 - xc <= rc + 1e-12) and np.all(1 - xp <= rp + 1e-12)


# --- precoder subproblem -----------------------------------------------------

def surrogate(P, C, state, problem):
    cfg = problem.config
    xc, xp = awsr.augmented_wmse(P, state)
    diff = vec_precoder(P) - problem.prox_center
    f = (cfg.weights @ xp.mean(axis=0) - cfg.weights @ C
         + 0.5 * problem.prox_weight * np.vdot(diff, diff).real)
    cons = [C, 1 - xc.mean(axis=0) - C.sum(),
            C + 1 - xp.mean(axis=0) - cfg.qos_threshold,
            cfg.power_total / cfg.n_tx - np.sum(np.abs(P) ** 2, axis=1)]
    return f, np.concatenate(cons)


def test_subproblem_matches_independent_oracle():
    rng = np.random.default_rng(3)
    for seed in range(3):
        problem, P0 = v_problem(seed, n_tx=2, n_users=1, user_weights=(1.0,),
                                channel_variances=(1.0,), qos_threshold=0.5,
                                saa_samples=4, power_total=10.0)
        state = awsr.mmse_step(P0, problem.batch)
        sub = awsr.build_precoder_subproblem(state, problem)
        sol = conic.solve(sub.conic)
        assert sol.status == conic.OPTIMAL
        P, C = sub.decode(sol.x_star)
        f_conic, cons = surrogate(P, C, state, problem)
        assert cons.min() >= -1e-6

        def unpack(x):
            return (x[:4] + 1j * x[4:8]).reshape(2, 2, order="F"), x[8:]

        best = np.inf
        for _ in range(4):
            x0 = np.concatenate([0.3 * rng.standard_normal(8), [0.0]])
            res = minimize(lambda x: surrogate(*unpack(x), state, problem)[0], x0,
                           constraints={"type": "ineq",
                                        "fun": lambda x: surrogate(*unpack(x), state, problem)[1]},
                           method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
            if res.success and surrogate(*unpack(res.x), state, problem)[1].min() > -1e-7:
                best = min(best, res.fun)
        assert abs(f_conic - best) <= 0.01 * max(1.0, abs(best))
        # no feasible random perturbation does better
        for _ in range(2000):
            Pr = P + 0.05 * crandn(rng, 2, 2)
            Cr = np.maximum(C + 0.05 * rng.standard_normal(1), 0)
            f, c = surrogate(Pr, Cr, state, problem)
            if c.min() >= 0:
                assert f >= f_conic - 1e-7


def test_prox_limit_pins_center():
    problem, P0 = v_problem(4, rho=1e6, n_users=1, user_weights=(1.0,),
                            channel_variances=(1.0,), qos_threshold=0.0)
    problem.prox_center = vec_precoder(P0)  # feasible center
    state = awsr.mmse_step(P0, problem.batch)
    sub = awsr.build_precoder_subproblem(state, problem)
    sol = conic.solve(sub.conic)
    P, _ = sub.decode(sol.x_star)
    np.testing.assert_allclose(vec_precoder(P), problem.prox_center, atol=1e-3)


def test_sdma_has_no_common_variables():
    problem, P0 = v_problem(5, access_mode="SDMA")
    state = awsr.mmse_step(P0, problem.batch, rsma=False)
    sub = awsr.build_precoder_subproblem(state, problem)
    assert sub.shares is None
    assert list(sub.columns) == [1, 2]
    P, C = sub.decode(conic.solve(sub.conic).x_star)
    assert np.all(P[:, 0] == 0) and np.all(C == 0)


# --- alternating optimization ------------------------------------------------

def test_single_antenna_capacity():
    h = 0.8 - 0.3j
    cfg = SystemConfig(n_tx=1, n_users=1, user_weights=(1.0,),
                       channel_variances=(1.0,), qos_threshold=0.0,
                       csit_mode="perfect", saa_samples=1)
    batch = SaaBatch(np.array([[[h]]]))
    problem = awsr.VUpdateProblem(np.zeros(2, complex), 0.0, batch, cfg)
    res = awsr.ao_solve(problem, np.array([[1.0, 1.0]], dtype=complex))
    ar = average_rates(res.precoder, res.shares, batch, cfg.weights)
    assert ar.awsr == pytest.approx(np.log2(1 + cfg.power_total * abs(h) ** 2),
                                    abs=1e-3)


@pytest.mark.parametrize("mode", ["RSMA", "SDMA"])
def test_ao_trace_monotone_and_constraints(mode):
    for seed in range(4):
        problem, P0 = v_problem(10 + seed, access_mode=mode)
        res = awsr.ao_solve(problem, P0)
        assert np.all(np.diff(res.objective_trace) <= 1e-8)
        assert res.objective_trace[-1] == pytest.approx(
            awsr.v_objective(res.precoder, res.shares, problem))
        ar = average_rates(res.precoder, np.zeros(2), problem.batch, [0.5, 0.5])
        assert res.shares.sum() <= ar.common_min + 1e-6
        assert np.all(res.shares + ar.private >= problem.config.qos_threshold - 1e-6)
        if mode == "SDMA":
            assert np.all(res.precoder[:, 0] == 0) and np.all(res.shares == 0)


def test_perfect_csit_batch_size_irrelevant():
    out = []
    for m in (1, 5):
        problem, P0 = v_problem(20, csit_mode="perfect", saa_samples=m)
        out.append(awsr.ao_solve(problem, P0))
    np.testing.assert_allclose(out[0].precoder, out[1].precoder, atol=1e-5)


def test_multi_restart_oracle():
    problem, P0 = v_problem(30, rho=0.0)
    cfg = problem.config
    res = awsr.ao_solve(problem, P0)
    mine = average_rates(res.precoder, res.shares, problem.batch, cfg.weights).awsr
    rng = rng_stream(30, "restart")
    best = mine
    for _ in range(8):
        init = awsr.project_per_antenna(3 * crandn(rng, 4, 3), cfg.power_total)
        try:
            r = awsr.ao_solve(problem, init)
        except awsr.QosInfeasible:
            continue
        best = max(best, average_rates(r.precoder, r.shares, problem.batch,
                                       cfg.weights).awsr)
    assert mine >= 0.98 * best


def test_rsma_contains_sdma():
    for seed in range(3):
        sd_problem, P0 = v_problem(40 + seed, access_mode="SDMA")
        sd = awsr.ao_solve(sd_problem, P0)
        rs_problem = awsr.VUpdateProblem(sd_problem.prox_center, 1.0,
                                         sd_problem.batch,
                                         sd_problem.config.replace(access_mode="RSMA"))
        rs = awsr.ao_solve(rs_problem, sd.precoder, sd.shares)
        assert (awsr.v_objective(rs.precoder, rs.shares, rs_problem)
                <= awsr.v_objective(sd.precoder, sd.shares, sd_problem) + 1e-3)


def test_unreachable_qos_raises():
    problem, P0 = v_problem(50, qos_threshold=25.0, access_mode="SDMA")
    with pytest.raises(awsr.QosInfeasible):
        awsr.ao_solve(problem, P0)


def test_warm_start_row_powers():
    for mode in ("RSMA", "SDMA"):
        cfg = SystemConfig(access_mode=mode)
        est = draw_channel_estimate(cfg, rng_stream(1, "channel", 0))
        P = awsr.warm_start(cfg, est.h_hat)
        np.testing.assert_allclose(np.sum(np.abs(P) ** 2, axis=1), 25.0)
        assert (np.linalg.norm(P[:, 0]) > 0) == (mode == "RSMA")
