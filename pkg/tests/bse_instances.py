"""Random radar-subproblem instances shared by unit and acceptance tests."""

from rsradcom.bse import UUpdateProblem
from rsradcom.config import PatternSettings, SystemConfig


def random_u_problem(rng, n_tx=None, n_users=None, lam=None, shape=None):
    n_tx = int(rng.choice([2, 3])) if n_tx is None else n_tx
    n_users = int(rng.choice([1, 2])) if n_users is None else n_users
    lam = 10.0 ** rng.uniform(-6, -1) if lam is None else lam
    shape = str(rng.choice(["beam", "rect"])) if shape is None else shape
    access = str(rng.choice(["RSMA", "SDMA"]))
    cfg = SystemConfig(n_tx=n_tx, n_users=n_users,
                       user_weights=(1.0 / n_users,) * n_users,
                       channel_variances=(1.0,) * n_users,
                       access_mode=access, reg_lambda=lam)
    spec = PatternSettings(shape=shape, grid_step_deg=2.0,
                           target_deg=float(rng.uniform(-40, 40))
                           ).build(n_tx, 0.5)
    n = n_tx * (n_users + 1)
    center = 4.0 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    if access == "SDMA":
        center[:n_tx] = 0
    return UUpdateProblem(center, 1.0, spec, lam, cfg)
