"""Near-field channels, pilots, user activity and received-signal synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayLayout, UserField


@dataclass(frozen=True)
class ChannelSet:
    los: np.ndarray
    nlos: np.ndarray
    total: np.ndarray
    estimate: np.ndarray
    rician_mu: float


@dataclass(frozen=True)
class PilotMatrix:
    """``T x N`` pilot book, one unit-norm column per user."""

    matrix: np.ndarray

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_users(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ActivityState:
    """Active mask and the power-controlled amplitudes ``sqrt(gamma_n)``."""

    active: np.ndarray
    tx_powers: np.ndarray

    @property
    def active_set(self) -> frozenset:
        return frozenset(np.flatnonzero(self.active).tolist())

    @property
    def amplitudes(self) -> np.ndarray:
        return np.where(self.active, np.sqrt(self.tx_powers), 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.amplitudes)


@dataclass(frozen=True)
class ReceivedSignal:
    y: np.ndarray
    noise: np.ndarray
    noise_variance: float


def _complex_normal(rng, shape):
    # unit-variance circularly-symmetric
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def pathloss_amplitude(distances, wavelength):
    """Free-space amplitude ``lam / (4 pi r)``."""
    return wavelength / (4 * np.pi * np.asarray(distances, dtype=float))


def build_los_channel(user_field: UserField, layout: ArrayLayout, use_estimated: bool = False,
                      unit_gain: bool = False) -> np.ndarray:
    """Spherical-wavefront line-of-sight channel, ``N x M``.

    Entry ``(n, m)`` is ``a_n exp(-j 2 pi r_nm / lam)``, where ``r_nm`` is the
    distance from user ``n`` (true or estimated position) to element ``m`` and
    ``a_n`` is either the path-loss amplitude at the user's range or 1.
    """
    q = user_field.estimated_positions if use_estimated else user_field.true_positions
    if not np.all(np.isfinite(q)):
        raise ValueError("user positions must be finite")
    lam = layout.wavelength
    d = np.linalg.norm(q[:, None, :] - layout.element_positions[None, :, :], axis=-1)
    if np.any(d == 0):
        n, m = np.argwhere(d == 0)[0]
        raise ValueError(f"user {n} coincides with array element {m}")
    phase = np.exp(-2j * np.pi * d / lam)
    if unit_gain:
        return phase
    return pathloss_amplitude(np.linalg.norm(q, axis=1), lam)[:, None] * phase


def sample_nlos(user_field: UserField, layout: ArrayLayout, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. complex Gaussian scattering with per-row variance ``alpha_n**2``."""
    alpha = pathloss_amplitude(user_field.radii, layout.wavelength)
    return alpha[:, None] * _complex_normal(rng, (user_field.n_users, layout.element_count))


def combine_rician(los: np.ndarray, nlos: np.ndarray, mu: float) -> np.ndarray:
    """Mix LoS and NLoS parts with Rician factor ``mu``; ``mu=inf`` is pure LoS."""
    if los.shape != nlos.shape:
        raise ValueError(f"shape mismatch: {los.shape} vs {nlos.shape}")
    if not mu >= 0:
        raise ValueError(f"Rician factor must be >= 0, got {mu}")
    if np.isinf(mu):
        return los.copy()
    return np.sqrt(mu / (1 + mu)) * los + np.sqrt(1 / (1 + mu)) * nlos


def build_channels(user_field: UserField, layout: ArrayLayout, mu: float,
                   rng: np.random.Generator) -> ChannelSet:
    los = build_los_channel(user_field, layout)
    # drawn even for mu=inf so the stream position does not depend on mu
    nlos = sample_nlos(user_field, layout, rng)
    total = combine_rician(los, nlos, mu)
    estimate = build_los_channel(user_field, layout, use_estimated=True, unit_gain=True)
    return ChannelSet(los, nlos, total, estimate, float(mu))


def generate_pilots(length: int, n_users: int, rng: np.random.Generator) -> PilotMatrix:
    """Complex Gaussian pilots with each column scaled to unit norm."""
    if length < 1 or n_users < 1:
        raise ValueError(f"need T >= 1 and N >= 1, got T={length}, N={n_users}")
    phi = _complex_normal(rng, (length, n_users))
    return PilotMatrix(phi / np.linalg.norm(phi, axis=0))


def orthonormal_pilots(n_users: int, rng: np.random.Generator) -> PilotMatrix:
    """Random unitary ``N x N`` pilot book (``T = N``, no pilot collisions)."""
    q, r = np.linalg.qr(_complex_normal(rng, (n_users, n_users)))
    # fix the phase ambiguity of QR so the result is Haar distributed
    d = np.diag(r)
    return PilotMatrix(q * (d / np.abs(d)))


def sample_activity(n_users: int, n_active: int, user_field: UserField, wavelength: float,
                    rng: np.random.Generator, fixed_k: bool = False) -> ActivityState:
    """Draw the active set and the inverse power control powers.

    Each user is active with probability ``K/N``; a draw with no active user,
    or with every user active while ``K < N``, is redrawn. With ``fixed_k``
    exactly ``K`` users are chosen uniformly instead. Powers
    ``(4 pi |p_hat_n| / lam)**2`` use the estimated positions.
    """
    if not 1 <= n_active <= n_users:
        raise ValueError(f"need 1 <= K <= N, got K={n_active}, N={n_users}")
    if fixed_k:
        active = np.zeros(n_users, dtype=bool)
        active[rng.choice(n_users, size=n_active, replace=False)] = True
    else:
        while True:
            active = rng.random(n_users) < n_active / n_users
            if active.any() and (n_active == n_users or not active.all()):
                break
    dist = np.linalg.norm(user_field.estimated_positions, axis=1)
    gamma = (4 * np.pi * dist / wavelength) ** 2
    return ActivityState(active, gamma)


def noise_variance_from_snr(snr_db: float) -> float:
    """``10**(-snr/10)``; ``snr_db=inf`` gives a noiseless link."""
    if np.isposinf(snr_db):
        return 0.0
    return float(10.0 ** (-snr_db / 10.0))


def synthesize_signal(pilots: np.ndarray, activity: np.ndarray, channel: np.ndarray,
                      noise_variance: float, rng: np.random.Generator) -> ReceivedSignal:
    """``Y = Phi X H + V`` with ``V`` complex white Gaussian of variance ``noise_variance``."""
    pilots = np.asarray(pilots)
    activity = np.asarray(activity)
    t, n = pilots.shape
    if activity.shape != (n, n) or channel.shape[0] != n:
        raise ValueError(
            f"shape mismatch: Phi {pilots.shape}, X {activity.shape}, H {channel.shape}")
    if noise_variance < 0:
        raise ValueError(f"noise variance must be >= 0, got {noise_variance}")
    v = np.sqrt(noise_variance) * _complex_normal(rng, (t, channel.shape[1]))
    return ReceivedSignal(pilots @ activity @ channel + v, v, float(noise_variance))
