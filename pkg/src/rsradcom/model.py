"""
Signal model of the RSMA transmitter.

Precoders are complex ``Nt x (K+1)`` arrays whose column 0 is the common
stream precoder and columns ``1..K`` are the private precoders. Channel
matrices are ``Nt x K`` with column ``k`` the channel of user ``k``;
batches of channels are stacked along a leading axis. Noise power is 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import SystemConfig, BeampatternSpec


# ---------------------------------------------------------------------------
# Array response and beampattern
# ---------------------------------------------------------------------------

def steering_vector(theta, n_tx, spacing=0.5):
    n = np.arange(n_tx)
    return np.exp(2j * np.pi * n * spacing * np.sin(theta))


def steering_matrix(angles, n_tx, spacing=0.5):
    """Steering vectors for every angle, one per column (Nt x M)."""
    n = np.arange(n_tx)[:, None]
    return np.exp(2j * np.pi * spacing * n * np.sin(np.asarray(angles))[None, :])


def beampattern(P, angles, spacing=0.5):
    """Transmit gains a^H P P^H a on a grid of angles."""
    A = steering_matrix(angles, P.shape[0], spacing)
    return np.sum(np.abs(A.conj().T @ P) ** 2, axis=1)


def beampattern_gain(P, theta, spacing=0.5):
    return float(beampattern(P, np.atleast_1d(theta), spacing)[0])


def bse(P, spec: BeampatternSpec, spacing=0.5, pattern_scale=None):
    """Beampattern squared error against the scaled desired pattern."""
    alpha = spec.pattern_scale if pattern_scale is None else pattern_scale
    gains = beampattern(P, spec.angles, spacing)
    return float(np.sum((alpha * spec.desired - gains) ** 2))


# ---------------------------------------------------------------------------
# Precoder helpers
# ---------------------------------------------------------------------------

def vec_precoder(P):
    return np.asarray(P).reshape(-1, order="F")


def unvec_precoder(v, n_tx):
    return np.asarray(v).reshape(n_tx, -1, order="F")


def antenna_powers(P):
    return np.sum(np.abs(P) ** 2, axis=1)


def project_per_antenna(P, power_total, columns=None):
    """
    Rescale each row of ``P`` to power Pt/Nt. Only ``columns`` (default:
    all) may carry power; a row with no power gets a flat profile.
    """
    P = np.array(P, dtype=complex)
    n_tx, n_col = P.shape
    cols = np.arange(n_col) if columns is None else np.asarray(columns)
    mask = np.zeros(n_col, dtype=bool)
    mask[cols] = True
    P[:, ~mask] = 0.0
    target = np.sqrt(power_total / n_tx)
    norms = np.linalg.norm(P, axis=1)
    for i in range(n_tx):
        if norms[i] > 1e-150:
            P[i] *= target / norms[i]
        else:
            P[i, mask] = target / np.sqrt(mask.sum())
    return P


# ---------------------------------------------------------------------------
# SINR and rates
# ---------------------------------------------------------------------------

def _stream_powers(P, H):
    """|h_k^H p_j|^2 with shape (..., K, K+1) for channels H of shape (..., Nt, K)."""
    HP = np.conj(np.swapaxes(H, -1, -2)) @ P
    return HP.real ** 2 + HP.imag ** 2


def batch_sinrs(P, H):
    """
    Common and private SINRs of every user for one channel matrix or a
    stack of them. Returns arrays of shape (..., K).
    """
    S = _stream_powers(P, H)
    private = S[..., 1:]
    own = np.diagonal(private, axis1=-2, axis2=-1)
    total_private = private.sum(axis=-1)
    gamma_c = S[..., 0] / (total_private + 1.0)
    gamma_p = own / (total_private - own + 1.0)
    return gamma_c, gamma_p


def batch_rates(P, H):
    gamma_c, gamma_p = batch_sinrs(P, H)
    return np.log2(1.0 + gamma_c), np.log2(1.0 + gamma_p)


class LinkRates(NamedTuple):
    sinr_common: float
    sinr_private: float
    rate_common: float
    rate_private: float


def sinr_and_rates(P, h, k):
    """SINRs and rates of user ``k`` (0-based) on channel vector ``h``."""
    h = np.asarray(h, dtype=complex).ravel()
    P = np.asarray(P, dtype=complex)
    s = np.abs(h.conj() @ P) ** 2
    private = s[1:]
    gc = s[0] / (private.sum() + 1.0)
    gp = private[k] / (private.sum() - private[k] + 1.0)
    return LinkRates(gc, gp, np.log2(1.0 + gc), np.log2(1.0 + gp))


def common_rate(P, H):
    """Rate at which every user can decode the common stream."""
    rc, _ = batch_rates(P, H)
    return float(np.min(rc))


# ---------------------------------------------------------------------------
# Channels and SAA batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelEstimate:
    h_hat: np.ndarray  # Nt x K
    error_variances: np.ndarray  # K

    def __post_init__(self):
        ev = np.asarray(self.error_variances, dtype=float)
        if ev.shape != (self.h_hat.shape[1],) or np.any(ev < 0):
            raise ValueError("error_variances must be K nonnegative reals")


@dataclass(frozen=True)
class SaaBatch:
    samples: np.ndarray  # M' x Nt x K

    @property
    def size(self):
        return self.samples.shape[0]


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel_estimate(config: SystemConfig, rng) -> ChannelEstimate:
    """
    Draw the transmitter's channel estimate. Entries of column k are
    CN(0, sigma_k^2 - sigma_{e,k}^2); the same underlying normals are used
    for every CSIT mode so perfect/partial runs share realizations.
    """
    err = config.error_variances()
    sig = np.asarray(config.channel_variances)
    if np.any(err > sig):
        raise ValueError("error variance exceeds channel variance")
    z = _cn(rng, (config.n_tx, config.n_users))
    return ChannelEstimate(z * np.sqrt(sig - err)[None, :], err)


def sample_saa_batch(estimate: ChannelEstimate, m_prime, rng) -> SaaBatch:
    """Conditional channel samples H = H_hat + H_err, H_err ~ CN(0, sigma_e^2)."""
    if m_prime < 1:
        raise ValueError("need at least one sample")
    n_tx, K = estimate.h_hat.shape
    z = _cn(rng, (int(m_prime), n_tx, K))
    std = np.sqrt(np.asarray(estimate.error_variances))
    return SaaBatch(estimate.h_hat[None, :, :] + z * std[None, None, :])


def true_channel(estimate: ChannelEstimate, rng) -> np.ndarray:
    return sample_saa_batch(estimate, 1, rng).samples[0]


# ---------------------------------------------------------------------------
# Average rates
# ---------------------------------------------------------------------------

class AverageRates(NamedTuple):
    common: np.ndarray  # per-user average common rates
    private: np.ndarray  # per-user average private rates
    common_min: float
    awsr: float
    shares: np.ndarray  # shares actually used (clipped)


def clip_shares(shares, common_min):
    """Scale the common-rate shares down so they sum to at most ``common_min``."""
    shares = np.maximum(np.asarray(shares, dtype=float), 0.0)
    total = shares.sum()
    limit = max(common_min, 0.0)
    if total > limit and total > 0:
        shares = shares * (limit / total)
    return shares


def average_rates(P, shares, batch: SaaBatch, weights) -> AverageRates:
    """Sample-average common/private rates and the delivered AWSR."""
    rc, rp = batch_rates(P, batch.samples)
    avg_c = rc.mean(axis=0)
    avg_p = rp.mean(axis=0)
    cmin = float(np.min(avg_c))
    used = clip_shares(shares, cmin)
    awsr = float(np.sum(np.asarray(weights) * (used + avg_p)))
    return AverageRates(avg_c, avg_p, cmin, awsr, used)
