import csv
import math

import numpy as np
import pytest

from rsradcom import admm, awsr, bse
from rsradcom.config import PatternSettings, SystemConfig, rng_stream
from rsradcom.model import (average_rates, bse as bse_value,
                            draw_channel_estimate, project_per_antenna,
                            sample_saa_batch, vec_precoder)


def crandn(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def state_from(rng, n=12, v=None, u=None, d=None):
    v = crandn(rng, n) if v is None else v
    u = crandn(rng, n) if u is None else u
    d = np.zeros(n, complex) if d is None else d
    return admm.AdmmState(admm.Block(v, np.zeros(2)), admm.Block(u, np.zeros(2)), d)


def setup(seed=0, shape="beam", **kw):
    cfg = SystemConfig(rng_seed=seed, **kw)
    spec = PatternSettings(shape=shape).build(cfg.n_tx, cfg.antenna_spacing)
    est = draw_channel_estimate(cfg, rng_stream(seed, "channel", 0))
    return cfg, spec, est


# --- dual update and residuals ---------------------------------------------

def test_dual_update_examples():
    rng = np.random.default_rng(0)
    w = crandn(rng, 12)
    s = state_from(rng, v=w.copy(), u=w.copy(), d=w.copy())
    np.testing.assert_array_equal(admm.dual_update(s).d, w)
    s = state_from(rng, v=w + 1.0, u=np.ones(12, complex))
    np.testing.assert_allclose(admm.dual_update(s).d, w)
    for _ in range(20):
        s = state_from(rng, d=crandn(rng, 12))
        d = s.d.copy()
        out = admm.dual_update(s)
        np.testing.assert_array_equal(out.d, d + (s.v.precoder - s.u.precoder))
        np.testing.assert_array_equal(s.d, d)  # input untouched


def test_residuals_examples():
    rng = np.random.default_rng(1)
    w = crandn(rng, 12)
    prev = state_from(rng, u=w.copy())
    cur = state_from(rng, v=w.copy(), u=w.copy())
    r, q = admm.residuals(prev, cur)
    assert not r.any() and not q.any()
    for _ in range(20):
        prev, cur = state_from(rng), state_from(rng)
        r, q = admm.residuals(prev, cur)
        np.testing.assert_array_equal(r, cur.v.precoder - cur.u.precoder)
        np.testing.assert_array_equal(q, cur.u.precoder - prev.u.precoder)


def test_initial_state():
    cfg, _, est = setup()
    s = admm.initial_state(cfg, est)
    np.testing.assert_array_equal(s.u.precoder, s.v.precoder)
    assert not s.d.any() and not s.v.shares.any()
    assert s.v.pattern_scale == 1.0 and s.d.shape == s.v.precoder.shape


# --- full runs -----------------------------------------------------------------

def test_infinite_tolerance_runs_one_iteration():
    cfg, spec, est = setup(3, admm_tolerance=math.inf, reg_lambda=1e-3)
    log = []
    sol = admm.run(cfg, est, spec, log=log)
    assert sol.iterations == 1 and len(log) == 1


@pytest.mark.parametrize("mode", ["SDMA", "RSMA"])
def test_communication_end_matches_awsr_alone(mode):
    for seed in range(2):
        cfg, spec, est = setup(seed, n_users=1, user_weights=(1.0,),
                               channel_variances=(1.0,), csit_mode="perfect",
                               access_mode=mode, reg_lambda=1e-9)
        batch = sample_saa_batch(est, cfg.saa_samples, rng_stream(seed, "saa", 0))
        sol = admm.run(cfg, est, spec, batch=batch)
        got = average_rates(sol.precoder, sol.shares, batch, cfg.weights).awsr
        P0 = awsr.warm_start(cfg, est.h_hat)
        alone = awsr.ao_solve(awsr.VUpdateProblem(0 * vec_precoder(P0), 0.0, batch, cfg),
                              P0, np.zeros(1))
        ref = average_rates(project_per_antenna(alone.precoder, cfg.power_total),
                            alone.shares, batch, cfg.weights).awsr
        assert abs(got - ref) <= 0.02 * ref


def test_radar_end_matches_radar_only_oracle():
    # rect target: the radar-only optimum is strictly positive
    cfg, spec, est = setup(0, shape="rect", access_mode="SDMA", reg_lambda=1e-1)
    sol = admm.run(cfg, est, spec)
    got = bse_value(sol.precoder, spec, cfg.antenna_spacing, sol.pattern_scale)
    n = cfg.n_tx * (cfg.n_users + 1)
    radar = bse.UUpdateProblem(np.zeros(n, complex), 0.0, spec, cfg.reg_lambda, cfg)
    _, f = bse.pg_oracle(radar, rng=np.random.default_rng(0))
    assert abs(got - f / cfg.reg_lambda) <= 0.05 * f / cfg.reg_lambda


def test_feasible_deterministic_and_logged(tmp_path):
    cfg, spec, est = setup(5, reg_lambda=1e-2, max_admm_iters=3)
    log1, log2 = [], []
    a = admm.run(cfg, est, spec, log=log1)
    b = admm.run(cfg, est, spec, log=log2)
    np.testing.assert_array_equal(a.precoder, b.precoder)
    np.testing.assert_array_equal(a.shares, b.shares)
    assert a.pattern_scale == b.pattern_scale and a.iterations == b.iterations
    rows = np.sum(np.abs(a.precoder) ** 2, axis=1)
    assert np.max(np.abs(rows - cfg.power_total / cfg.n_tx)) <= 1e-6 * cfg.power_total
    assert 1 <= a.iterations <= cfg.max_admm_iters
    assert all(np.isfinite([e.primal, e.dual, e.awsr, e.bse]).all() for e in log1)
    if a.converged:
        assert log1[-1].primal <= cfg.admm_tolerance and log1[-1].dual <= cfg.admm_tolerance

    path = tmp_path / "res.csv"
    admm.write_residual_log(path, log1)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "primal_residual", "dual_residual",
                       "awsr_surrogate", "bse"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, len(log1) + 1))
    assert float(rows[-1][1]) == log1[-1].primal


def test_subproblem_failure_carries_iteration():
    cfg, spec, est = setup(1, access_mode="SDMA", qos_threshold=25.0)
    with pytest.raises(admm.AdmmError) as exc:
        admm.run(cfg, est, spec)
    assert exc.value.iteration == 1 and exc.value.stage == "v"
    assert isinstance(exc.value.cause, awsr.QosInfeasible)
