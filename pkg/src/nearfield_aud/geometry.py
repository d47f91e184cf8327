"""Array layout, user deployment region and the location-error model.

All positions are 2-D points in meters, with the base station array centered
at the origin and laid out along the Y axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class NearFieldError(ValueError):
    """Raised when a deployment region leaves the radiative near-field."""


@dataclass(frozen=True)
class ArrayLayout:
    """Uniform linear array on the Y axis with element spacing of one wavelength.

    Element ``m`` (0-based) sits at ``[0, m*lam - (M-1)*lam/2]``.
    """

    element_count: int
    carrier_frequency: float

    def __post_init__(self):
        if int(self.element_count) != self.element_count or self.element_count < 1:
            raise ValueError(f"element_count must be a positive integer, got {self.element_count!r}")
        if not self.carrier_frequency > 0:
            raise ValueError(f"carrier_frequency must be positive, got {self.carrier_frequency!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def element_positions(self) -> np.ndarray:
        lam = self.wavelength
        m = np.arange(self.element_count)
        y = m * lam - (self.element_count - 1) * lam / 2
        return np.column_stack([np.zeros(self.element_count), y])

    @property
    def aperture(self) -> float:
        """Largest distance between any two elements."""
        pos = self.element_positions
        diff = pos[:, None, :] - pos[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def rayleigh_distance(layout: ArrayLayout) -> float:
    """Far-field boundary ``2 D^2 / lam`` of the array."""
    return 2.0 * layout.aperture ** 2 / layout.wavelength


def fresnel_distance(layout: ArrayLayout) -> float:
    """Inner boundary ``0.62 sqrt(D^3 / lam)`` of the radiative near-field."""
    return 0.62 * np.sqrt(layout.aperture ** 3 / layout.wavelength)


@dataclass(frozen=True)
class DeploymentRegion:
    """Annular sector ``r_min <= r <= r_max``, ``theta_min <= theta <= theta_max``.

    When ``layout`` is given, the radial bounds are checked against the
    radiative near-field of that array.
    """

    r_min: float
    r_max: float
    theta_min: float = -3 * np.pi / 7
    theta_max: float = 3 * np.pi / 7
    layout: Optional[ArrayLayout] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got r_min={self.r_min}, r_max={self.r_max}")
        if not self.theta_min < self.theta_max:
            raise ValueError(
                f"need theta_min < theta_max, got {self.theta_min} >= {self.theta_max}")
        if self.layout is not None:
            lo, hi = fresnel_distance(self.layout), rayleigh_distance(self.layout)
            if self.r_min < lo:
                raise NearFieldError(
                    f"r_min={self.r_min} m is inside the reactive near-field boundary {lo:.3f} m "
                    f"(M={self.layout.element_count})")
            if self.r_max > hi:
                raise NearFieldError(
                    f"r_max={self.r_max} m exceeds the Rayleigh distance {hi:.3f} m "
                    f"(M={self.layout.element_count})")


@dataclass(frozen=True)
class UserField:
    """True and estimated user positions.

    ``radial_errors`` holds the signed normal draws; the displacement of each
    estimate has magnitude ``|radial_errors[n]|`` in direction ``error_angles[n]``.
    """

    true_positions: np.ndarray
    estimated_positions: np.ndarray
    radii: np.ndarray
    angles: np.ndarray
    radial_errors: np.ndarray
    error_angles: np.ndarray
    error_std: float

    @property
    def n_users(self) -> int:
        return self.true_positions.shape[0]


def sample_user_field(region: DeploymentRegion, n_users: int, error_std: float,
                      rng: np.random.Generator) -> UserField:
    """Drop ``n_users`` users uniformly in radius and angle and perturb their
    position estimates.

    Parameters
    ----------
    region : DeploymentRegion
        Polar bounds for the true positions.
    n_users : int
        Number of users, at least 1.
    error_std : float
        Standard deviation (m) of the radial location error.
    rng : numpy.random.Generator
        Source of randomness; the draw order is fixed so a seeded generator
        gives a reproducible field.

    Returns
    -------
    UserField
    """
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    if error_std < 0:
        raise ValueError(f"error_std must be >= 0, got {error_std}")
    radii = rng.uniform(region.r_min, region.r_max, n_users)
    angles = rng.uniform(region.theta_min, region.theta_max, n_users)
    r_err = rng.normal(0.0, 1.0, n_users) * error_std
    theta_err = rng.uniform(0.0, 2 * np.pi, n_users)

    p = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    mag = np.abs(r_err)
    p_hat = p + np.column_stack([mag * np.cos(theta_err), mag * np.sin(theta_err)])
    return UserField(p, p_hat, radii, angles, r_err, theta_err, float(error_std))
