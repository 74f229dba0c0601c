"""Shared value types, unit helpers and seeded randomness.

Conventions used throughout the package:

* absolute transition energies are in eV, splittings and linewidths in ueV;
* public angles are in degrees; polarization directions live in [0, 180),
  waveplate readings in [0, 360);
* Stokes vectors follow V = 2 Im(conj(Ex) Ey), so (Ex, Ey) = (1, i)/sqrt(2)
  has V = +1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UEV_PER_EV = 1e6
HC_EV_NM = 1239.841984
# fractional tolerance when checking Stokes physicality of computed vectors
_PHYS_RTOL = 1e-9


class DomainError(ValueError):
    """Input outside the domain of an operation."""


def ev_to_uev(energy_ev):
    return np.multiply(energy_ev, UEV_PER_EV)


def uev_to_ev(energy_uev):
    return np.divide(energy_uev, UEV_PER_EV)


def wavelength_to_energy(lambda_nm):
    """Photon energy in eV for a vacuum wavelength in nm."""
    return HC_EV_NM / np.asarray(lambda_nm, dtype=float)


def normalize_polarization_angle(angle_deg: float) -> float:
    """Map a polarization direction onto [0, 180)."""
    if not math.isfinite(angle_deg):
        raise DomainError(f"non-finite angle: {angle_deg}")
    a = math.fmod(angle_deg, 180.0)
    if a < 0.0:
        a += 180.0
    # fmod of tiny negatives can land exactly on 180 after the shift
    return 0.0 if a >= 180.0 else a


def normalize_waveplate_angle(angle_deg: float) -> float:
    """Map a mechanical waveplate reading onto [0, 360)."""
    if not math.isfinite(angle_deg):
        raise DomainError(f"non-finite angle: {angle_deg}")
    a = math.fmod(angle_deg, 360.0)
    if a < 0.0:
        a += 360.0
    return 0.0 if a >= 360.0 else a


def axial_difference(a_deg: float, b_deg: float) -> float:
    """Signed difference a - b of two polarization directions, in [-90, 90)."""
    d = normalize_polarization_angle(a_deg - b_deg)
    return d - 180.0 if d >= 90.0 else d


def degree_of_linear_polarization(imax: float, imin: float) -> float:
    """(imax - imin) / (imax + imin)."""
    if imin < 0 or imax < imin:
        raise DomainError(f"need imax >= imin >= 0, got ({imax}, {imin})")
    total = imax + imin
    if total == 0:
        raise DomainError("degenerate input: imax = imin = 0")
    return (imax - imin) / total


@dataclass(frozen=True)
class StokesVector:
    i: float
    q: float
    u: float
    v: float

    def __post_init__(self):
        vals = (self.i, self.q, self.u, self.v)
        if not all(math.isfinite(x) for x in vals):
            raise DomainError(f"non-finite Stokes vector {vals}")
        if self.i < 0:
            raise DomainError(f"negative intensity {self.i}")
        if self.polarized_intensity > self.i * (1 + _PHYS_RTOL) + 1e-300:
            raise DomainError(f"unphysical Stokes vector {vals}")

    @classmethod
    def linear(cls, angle_deg: float, intensity: float = 1.0,
               ellipticity_deg: float = 0.0) -> "StokesVector":
        """Fully polarized light with major axis at ``angle_deg``."""
        two_psi = math.radians(2 * angle_deg)
        two_chi = math.radians(2 * ellipticity_deg)
        return cls(intensity,
                   intensity * math.cos(two_chi) * math.cos(two_psi),
                   intensity * math.cos(two_chi) * math.sin(two_psi),
                   intensity * math.sin(two_chi))

    @classmethod
    def from_array(cls, arr) -> "StokesVector":
        i, q, u, v = (float(x) for x in arr)
        # clip round-off excess so products of passive elements stay physical
        p = math.sqrt(q * q + u * u + v * v)
        if i >= 0 and i < p <= i * (1 + _PHYS_RTOL):
            i = p
        return cls(i, q, u, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.i, self.q, self.u, self.v], dtype=float)

    @property
    def polarized_intensity(self) -> float:
        return math.sqrt(self.q ** 2 + self.u ** 2 + self.v ** 2)

    @property
    def degree_of_polarization(self) -> float:
        return self.polarized_intensity / self.i if self.i > 0 else 0.0

    @property
    def orthogonal(self) -> "StokesVector":
        return StokesVector(self.i, -self.q, -self.u, -self.v)

    @property
    def angle(self) -> float:
        """Direction of the linearly polarized part, degrees in [0, 180)."""
        return normalize_polarization_angle(
            0.5 * math.degrees(math.atan2(self.u, self.q)))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Counts per detector pixel on a strictly increasing energy grid (eV)."""

    energies: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if e.ndim != 1 or e.shape != c.shape:
            raise DomainError("energies and counts must be 1-D of equal length")
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise DomainError("energies must be strictly increasing")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise DomainError("counts must be finite and nonnegative")
        e.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "counts", c)

    def __len__(self):
        return self.energies.size

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (np.array_equal(self.energies, other.energies)
                and np.array_equal(self.counts, other.counts))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.energies[0]), float(self.energies[-1])


@dataclass(frozen=True)
class AngleSeries:
    """One polarimeter sweep: a spectrum per waveplate reading (degrees)."""

    angles: tuple[float, ...]
    spectra: tuple[Spectrum, ...]

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "spectra", tuple(self.spectra))
        if len(self.angles) != len(self.spectra):
            raise DomainError("angles and spectra differ in length")

    def __len__(self):
        return len(self.angles)

    def __iter__(self):
        return iter(zip(self.angles, self.spectra))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by (seed, *keys).

    Distinct key tuples give statistically independent streams, so batch
    work can be split across workers without changing any result.
    """
    if seed < 0 or seed >= 2 ** 64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))

