"""Forward model: exciton doublet -> polarimeter optics -> detector spectra.

Each doublet component is rendered as a Gaussian whose FWHM is the intrinsic
linewidth and the instrument response added in quadrature.  Both components
carry ``peak_counts`` photons per spectrum before the analyser; because the
two components are orthogonally polarized, the transmitted fractions of an
ideal analyser always sum to one and the detected line integrates to
``peak_counts`` at every waveplate setting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (AngleSeries, DomainError, Spectrum, StokesVector,
                   make_rng, normalize_waveplate_angle, uev_to_ev)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

SPECIES = ("X", "XX", "unknown")


class ConfigurationError(ValueError):
    """Simulation settings that cannot produce a valid measurement."""


# -- Mueller calculus -------------------------------------------------------

def mueller_lp(axis_deg: float) -> np.ndarray:
    """Ideal linear polarizer with transmission axis at ``axis_deg``."""
    t = math.radians(2 * axis_deg)
    c, s = math.cos(t), math.sin(t)
    return 0.5 * np.array([[1, c, s, 0],
                           [c, c * c, c * s, 0],
                           [s, c * s, s * s, 0],
                           [0, 0, 0, 0]], dtype=float)


def mueller_retarder(fast_axis_deg: float, retardance_deg: float) -> np.ndarray:
    """Ideal linear retarder; the slow axis lags by ``retardance_deg``."""
    t = math.radians(2 * fast_axis_deg)
    c, s = math.cos(t), math.sin(t)
    d = math.radians(retardance_deg)
    cd, sd = math.cos(d), math.sin(d)
    return np.array([[1, 0, 0, 0],
                     [0, c * c + s * s * cd, c * s * (1 - cd), s * sd],
                     [0, c * s * (1 - cd), s * s + c * c * cd, -c * sd],
                     [0, -s * sd, c * sd, cd]], dtype=float)


def mueller_qwp(chi_deg: float) -> np.ndarray:
    return mueller_retarder(chi_deg, 90.0)


def mueller_hwp(theta_deg: float) -> np.ndarray:
    return mueller_retarder(theta_deg, 180.0)


def apply_mueller(m: np.ndarray, s: StokesVector) -> StokesVector:
    return StokesVector.from_array(m @ s.as_array())


def polarimeter_intensity(s: StokesVector, chi_deg: float) -> float:
    """Intensity behind a QWP at ``chi_deg`` followed by a horizontal LP.

    I0 = (2I + Q + Q cos 4chi + U sin 4chi + 2V sin 2chi) / 4, so that the
    signals for a state and its orthogonal partner add up to I.
    """
    if not isinstance(s, StokesVector):
        s = StokesVector(*s)
    c = math.radians(chi_deg)
    return 0.25 * (2 * s.i + s.q + s.q * math.cos(4 * c)
                   + s.u * math.sin(4 * c) + 2 * s.v * math.sin(2 * c))


# -- model types ------------------------------------------------------------

@dataclass(frozen=True)
class EmitterModel:
    """Ground truth for one exciton doublet.

    ``dipole_angle`` is the polarization direction of the high-energy
    component relative to the reference crystal axis.  ``ellipticity`` (deg)
    optionally makes the eigenstates elliptical, for testing the circular
    channel of the QWP method.
    """

    mean_energy: float = 0.95          # eV
    fss: float = 0.0                   # ueV
    dipole_angle: float = 0.0          # deg
    linewidth_fwhm: float = 250.0      # ueV, intrinsic
    peak_counts: float = 1e4           # detected photons per line per spectrum
    species: str = "X"
    ellipticity: float = 0.0           # deg

    def __post_init__(self):
        if not self.fss >= 0:
            raise DomainError(f"fss must be >= 0, got {self.fss}")
        if not self.linewidth_fwhm > 0:
            raise DomainError(f"linewidth must be > 0, got {self.linewidth_fwhm}")
        if not self.peak_counts > 0:
            raise DomainError(f"peak_counts must be > 0, got {self.peak_counts}")
        if self.species not in SPECIES:
            raise DomainError(f"unknown species {self.species!r}")

    def biexciton_partner(self, **changes) -> "EmitterModel":
        """XX line of the same dot: high-energy component rotated by 90 deg."""
        from dataclasses import replace
        return replace(self, species="XX",
                       dipole_angle=self.dipole_angle + 90.0, **changes)


@dataclass(frozen=True)
class PolarimeterConfig:
    """Rotating waveplate followed by a fixed linear polarizer.

    ``reference_offset`` is the waveplate reading at which light polarized
    along the reference axis is maximally transmitted (for the QWP this is
    the reading that maximizes the 4-chi term).  Optional imperfections: a
    fixed retarder in front of the waveplate, given as
    (fast axis deg, retardance deg), and a 1-chi intensity modulation
    ``1 + depth * cos(angle - phase)`` mimicking beam steering.
    """

    kind: str = "QWP_LP"
    lp_axis: float = 0.0
    reference_offset: float | None = None
    pre_retarder: tuple[float, float] | None = None
    beam_steering_depth: float = 0.0
    beam_steering_phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("QWP_LP", "HWP_LP"):
            raise ConfigurationError(f"unknown polarimeter kind {self.kind!r}")
        ref = self.reference_offset
        if ref is None:
            ref = 82.0 if self.kind == "HWP_LP" else 0.0
        object.__setattr__(self, "reference_offset", normalize_waveplate_angle(ref))
        if self.pre_retarder is not None:
            object.__setattr__(self, "pre_retarder",
                               tuple(float(x) for x in self.pre_retarder))
        if not 0 <= self.beam_steering_depth < 1:
            raise ConfigurationError("beam_steering_depth must be in [0, 1)")

    @property
    def reference_direction(self) -> float:
        """Lab polarization direction of the reference axis (degrees)."""
        return 2 * self.reference_offset - self.lp_axis

    def mueller(self, angle_deg: float) -> np.ndarray:
        plate = (mueller_qwp(angle_deg) if self.kind == "QWP_LP"
                 else mueller_hwp(angle_deg))
        m = mueller_lp(self.lp_axis) @ plate
        if self.pre_retarder is not None:
            m = m @ mueller_retarder(*self.pre_retarder)
        return m

    def transmission(self, s: StokesVector, angle_deg: float) -> float:
        t = float((self.mueller(angle_deg) @ s.as_array())[0])
        if self.beam_steering_depth:
            t *= 1 + self.beam_steering_depth * math.cos(
                math.radians(angle_deg - self.beam_steering_phase))
        return t


@dataclass(frozen=True)
class DetectorModel:
    """Spectrometer and pixel-array detector.

    The pixel grid is centred on ``center_energy`` (eV) or, when that is
    None, on the emitter's mean energy.  ``bias_counts`` is a constant
    electronic offset that keeps read noise from driving counts negative.
    """

    irf_fwhm: float = 89.0             # ueV
    pixel_pitch: float = 25.0          # ueV per pixel
    n_pixels: int = 512
    read_noise_rms: float = 10.0       # counts
    shot_noise: bool = True
    bias_counts: float = 100.0
    center_energy: float | None = None

    def __post_init__(self):
        if not self.irf_fwhm > 0:
            raise ConfigurationError("irf_fwhm must be > 0")
        if not self.pixel_pitch > 0:
            raise ConfigurationError("pixel_pitch must be > 0")
        if int(self.n_pixels) != self.n_pixels or self.n_pixels < 16:
            raise ConfigurationError("n_pixels must be an integer >= 16")
        if self.read_noise_rms < 0 or self.bias_counts < 0:
            raise ConfigurationError("read noise and bias must be >= 0")

    @property
    def noiseless(self) -> bool:
        return not self.shot_noise and self.read_noise_rms == 0

    def without_noise(self) -> "DetectorModel":
        from dataclasses import replace
        return replace(self, shot_noise=False, read_noise_rms=0.0)

    def grid(self, center_ev: float) -> np.ndarray:
        k = np.arange(self.n_pixels) - (self.n_pixels - 1) / 2
        return center_ev + uev_to_ev(k * self.pixel_pitch)


# -- simulation -------------------------------------------------------------

def doublet_stokes(e: EmitterModel) -> tuple[StokesVector, StokesVector]:
    """Unit Stokes vectors of the (high, low) energy components."""
    high = StokesVector.linear(e.dipole_angle, 1.0, e.ellipticity)
    return high, high.orthogonal


def observed_fwhm(e: EmitterModel, d: DetectorModel) -> float:
    return math.hypot(e.linewidth_fwhm, d.irf_fwhm)


def component_energies(e: EmitterModel) -> tuple[float, float]:
    half = uev_to_ev(0.5 * e.fss)
    return e.mean_energy + half, e.mean_energy - half


def lab_emitter(e: EmitterModel, p: PolarimeterConfig) -> EmitterModel:
    """Emitter with its dipole angle expressed in the lab (LP) frame."""
    from dataclasses import replace
    return replace(e, dipole_angle=e.dipole_angle + p.reference_direction)


def render_line(energies: np.ndarray, center_ev: float, fwhm_uev: float,
                total_counts: float, pitch_uev: float) -> np.ndarray:
    """Gaussian line sampled at pixel centres, normalised to ``total_counts``."""
    sigma = fwhm_uev / FWHM_PER_SIGMA
    x = (energies - center_ev) * 1e6
    return (total_counts * pitch_uev / (sigma * math.sqrt(2 * math.pi))
            * np.exp(-0.5 * (x / sigma) ** 2))


def expected_spectrum(e: EmitterModel, p: PolarimeterConfig, d: DetectorModel,
                      angle_deg: float) -> Spectrum:
    """Noise-free detector signal at one waveplate setting."""
    lab = lab_emitter(e, p)
    high, low = doublet_stokes(lab)
    e_high, e_low = component_energies(e)
    center = e.mean_energy if d.center_energy is None else d.center_energy
    grid = d.grid(center)
    fw = observed_fwhm(e, d)
    half_span = uev_to_ev(0.5 * d.n_pixels * d.pixel_pitch)
    reach = uev_to_ev(3 * fw)
    if e_low - reach < center - half_span or e_high + reach > center + half_span:
        raise ConfigurationError(
            f"emitter at {e.mean_energy:.6f} eV falls outside the detector span")
    counts = np.full(grid.shape, float(d.bias_counts))
    for s, ec in ((high, e_high), (low, e_low)):
        t = p.transmission(s, angle_deg)
        counts += render_line(grid, ec, fw, e.peak_counts * t, d.pixel_pitch)
    return Spectrum(grid, counts)


def simulate_angle_series(e: EmitterModel, p: PolarimeterConfig,
                          d: DetectorModel, angles: Sequence[float],
                          seed: int = 0, stream: int = 0) -> AngleSeries:
    """Simulate one polarimeter sweep.

    ``stream`` selects an independent random stream under the same seed; the
    batch helpers pass the emitter index here.
    """
    angles = [float(a) for a in angles]
    if len(angles) < 4:
        raise ConfigurationError("need at least 4 waveplate angles")
    rng = None if d.noiseless else make_rng(seed, stream)
    spectra = []
    for a in angles:
        s = expected_spectrum(e, p, d, a)
        counts = s.counts
        if rng is not None:
            signal = counts - d.bias_counts
            if d.shot_noise:
                signal = rng.poisson(np.maximum(signal, 0.0)).astype(float)
            counts = signal + d.bias_counts
            if d.read_noise_rms:
                counts = counts + rng.normal(0.0, d.read_noise_rms, counts.shape)
            counts = np.maximum(counts, 0.0)
        spectra.append(Spectrum(s.energies, counts))
    return AngleSeries(tuple(angles), tuple(spectra))


def qwp_angles(n: int = 16, start: float = 0.0) -> list[float]:
    """n uniformly spaced QWP readings covering one full rotation."""
    return [start + 360.0 * k / n for k in range(n)]


def hwp_angles(n: int = 18, span: float = 180.0, start: float = 0.0) -> list[float]:
    """n uniformly spaced HWP readings over ``span`` degrees (end excluded)."""
    return [start + span * k / n for k in range(n)]


@dataclass(frozen=True)
class Measurement:
    """An emitter together with the instrument used to observe it."""

    emitter: EmitterModel
    polarimeter: PolarimeterConfig = field(default_factory=PolarimeterConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
