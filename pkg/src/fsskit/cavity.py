"""Normal-incidence transfer-matrix reflectance of planar multilayers.

Each layer contributes the characteristic matrix

    [[cos d, i sin d / n], [i n sin d, cos d]],   d = 2 pi n t / lambda,

and with [B, C] = M [1, n_s] the amplitude reflectance is
r = (n_a B - C) / (n_a B + C), T = 4 Re(n_a) Re(n_s) / |n_a B + C|^2.
Absorbing media use n + i k with k >= 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DomainError
from .peakfit import GaussianMixture, fit_model
from .forward import FWHM_PER_SIGMA

DESIGN_WAVELENGTH = 1310.0     # nm
N_GAAS = 3.41
N_ALGAAS = 3.07                # Al0.5Ga0.5As
N_INALAS = 3.249               # In0.6Al0.4As, from the 201.6 nm half-wave spacer
SPACER_THICKNESS = 201.6       # nm
DBR_PAIRS = 25


class ModeNotFoundError(RuntimeError):
    """No reflectance dip bracketed by stopband shoulders."""


class TabulatedIndex:
    """Dispersive index interpolated linearly from (lambda_nm, n, k) rows."""

    def __init__(self, lambdas, n, k=None):
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.n = np.asarray(n, dtype=float)
        self.k = np.zeros_like(self.n) if k is None else np.asarray(k, dtype=float)
        if self.lambdas.ndim != 1 or self.lambdas.size < 2 or np.any(np.diff(self.lambdas) <= 0):
            raise DomainError("index table needs >= 2 strictly increasing wavelengths")
        if np.any(self.n <= 0) or np.any(self.k < 0):
            raise DomainError("index table needs n > 0 and k >= 0")

    @classmethod
    def from_file(cls, path) -> "TabulatedIndex":
        """Whitespace or comma separated columns: lambda_nm, n[, k]; '#' comments."""
        text = Path(path).read_text().replace(",", " ")
        rows = [ln.split() for ln in text.splitlines()
                if ln.strip() and not ln.lstrip().startswith(("#", "lambda"))]
        arr = np.array(rows, dtype=float)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2] if arr.shape[1] > 2 else None)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return np.interp(lam, self.lambdas, self.n) + 1j * np.interp(lam, self.lambdas, self.k)


@dataclass(frozen=True)
class Layer:
    refractive_index: complex | TabulatedIndex
    thickness: float               # nm
    label: str = ""

    def __post_init__(self):
        if not self.thickness > 0:
            raise DomainError(f"layer {self.label!r}: thickness must be > 0")
        if not isinstance(self.refractive_index, TabulatedIndex):
            n = complex(self.refractive_index)
            if not n.real > 0 or n.imag < 0:
                raise DomainError(f"layer {self.label!r}: need Re(n) > 0, Im(n) >= 0")
            object.__setattr__(self, "refractive_index", n)

    def index(self, lam) -> np.ndarray:
        n = self.refractive_index
        return n(lam) if isinstance(n, TabulatedIndex) else np.full(np.shape(lam), n)


@dataclass(frozen=True)
class Stack:
    layers: tuple[Layer, ...]
    ambient_index: complex = 1.0
    substrate_index: complex = N_GAAS

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def reversed(self) -> "Stack":
        return Stack(self.layers[::-1], self.substrate_index, self.ambient_index)

    def scaled(self, c: float) -> "Stack":
        return Stack(tuple(Layer(l.refractive_index, l.thickness * c, l.label)
                           for l in self.layers),
                     self.ambient_index, self.substrate_index)


def quarter_wave_thickness(lambda0: float, n: float) -> float:
    if not (lambda0 > 0 and n > 0):
        raise DomainError("lambda0 and n must be > 0")
    return lambda0 / (4.0 * n)


@dataclass(frozen=True)
class ReflectanceSpectrum:
    lambdas: np.ndarray        # nm
    reflectance: np.ndarray
    transmittance: np.ndarray

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.lambdas.tolist(), self.reflectance.tolist()))


def reflectance_spectrum(stack: Stack, lambdas: Sequence[float]) -> ReflectanceSpectrum:
    """R and T at each wavelength (nm), vectorized over the grid."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if np.any(lam <= 0):
        raise DomainError("wavelengths must be > 0")
    # the matrices below assume N = n - ik; stored indices are n + ik
    na = complex(stack.ambient_index).conjugate()
    ns = complex(stack.substrate_index).conjugate()
    m11 = np.ones(lam.shape, dtype=complex)
    m12 = np.zeros(lam.shape, dtype=complex)
    m21 = np.zeros(lam.shape, dtype=complex)
    m22 = np.ones(lam.shape, dtype=complex)
    for layer in stack.layers:
        n = np.conj(layer.index(lam))
        d = 2 * np.pi * n * layer.thickness / lam
        c, s = np.cos(d), np.sin(d)
        a11, a12, a21, a22 = c, 1j * s / n, 1j * n * s, c
        m11, m12, m21, m22 = (m11 * a11 + m12 * a21, m11 * a12 + m12 * a22,
                              m21 * a11 + m22 * a21, m21 * a12 + m22 * a22)
    b = m11 + m12 * ns
    cc = m21 + m22 * ns
    denom = na * b + cc
    r = (na * b - cc) / denom
    refl = np.abs(r) ** 2
    trans = 4 * na.real * ns.real / np.abs(denom) ** 2
    return ReflectanceSpectrum(lam, refl, trans)


def bragg_reflectance(n_high: float, n_low: float, pairs: int,
                      n_ambient: float = 1.0, n_substrate: float = N_GAAS) -> float:
    """Stopband-centre reflectance of (HL)^N on a substrate, H facing the ambient."""
    y = (n_high / n_low) ** (2 * pairs) * n_substrate
    return ((n_ambient - y) / (n_ambient + y)) ** 2


def dbr(n_high: float, n_low: float, pairs: int, lambda0: float = DESIGN_WAVELENGTH,
        labels: tuple[str, str] = ("H", "L")) -> list[Layer]:
    out = []
    for _ in range(pairs):
        out.append(Layer(n_high, quarter_wave_thickness(lambda0, n_high), labels[0]))
        out.append(Layer(n_low, quarter_wave_thickness(lambda0, n_low), labels[1]))
    return out


def epitaxy_stack(n_gaas: float = N_GAAS, n_algaas: float = N_ALGAAS,
                  n_spacer: float = N_INALAS, spacer_thickness: float = SPACER_THICKNESS,
                  pairs: int = DBR_PAIRS, lambda0: float = DESIGN_WAVELENGTH) -> Stack:
    """Asymmetric microcavity: three top quarter-wave layers, half-wave spacer,
    bottom DBR of ``pairs`` GaAs/AlGaAs periods, GaAs substrate.

    GaAs (high index) borders the spacer on both sides, which puts the
    resonance at the design wavelength.
    """
    q = quarter_wave_thickness
    top = [Layer(n_gaas, q(lambda0, n_gaas), "GaAs"),
           Layer(n_algaas, q(lambda0, n_algaas), "AlGaAs"),
           Layer(n_gaas, q(lambda0, n_gaas), "GaAs")]
    spacer = [Layer(n_spacer, spacer_thickness, "InAlAs")]
    bottom = dbr(n_gaas, n_algaas, pairs, lambda0, ("GaAs", "AlGaAs"))
    return Stack(tuple(top + spacer + bottom), 1.0, n_gaas)


def _local_extrema(y: np.ndarray):
    inner = np.arange(1, y.size - 1)
    minima = inner[(y[inner] < y[inner - 1]) & (y[inner] <= y[inner + 1])]
    maxima = inner[(y[inner] > y[inner - 1]) & (y[inner] >= y[inner + 1])]
    return minima, maxima


@dataclass(frozen=True)
class CavityMode:
    center: float              # nm
    fwhm: float                # nm
    depth: float               # shoulder reflectance minus fitted minimum
    center_stderr: float = float("nan")


def find_cavity_mode(spectrum, min_depth: float = 0.02,
                     shoulder_fraction: float = 0.8) -> CavityMode:
    """Locate the stopband dip and fit it with an inverted Gaussian.

    ``spectrum`` is a ReflectanceSpectrum or a sequence of (nm, R) pairs.
    The dip is the deepest local minimum whose nearest maxima on both sides
    reach ``shoulder_fraction`` of the peak reflectance; the fit runs over
    the wavelengths between those shoulders.
    """
    if isinstance(spectrum, ReflectanceSpectrum):
        lam, refl = spectrum.lambdas, spectrum.reflectance
    else:
        arr = np.asarray(spectrum, dtype=float)
        lam, refl = arr[:, 0], arr[:, 1]
    order = np.argsort(lam)
    lam, refl = lam[order], refl[order]
    if lam.size < 5:
        raise ModeNotFoundError("spectrum too short")
    minima, maxima = _local_extrema(refl)
    top = float(refl.max())
    best = None
    for i in minima:
        left = maxima[maxima < i]
        right = maxima[maxima > i]
        if left.size == 0 or right.size == 0:
            continue
        lo, hi = int(left[-1]), int(right[0])
        shoulder = min(refl[lo], refl[hi])
        if shoulder < shoulder_fraction * top:
            continue
        depth = shoulder - refl[i]
        if depth >= min_depth and (best is None or depth > best[0]):
            best = (depth, int(i), lo, hi)
    if best is None:
        raise ModeNotFoundError("no reflectance dip inside a stopband")
    depth, i, lo, hi = best
    x = lam[lo:hi + 1] - lam[i]
    y = refl[lo:hi + 1]
    base = float(max(refl[lo], refl[hi]))
    # invert so the dip is a positive Gaussian on a constant background
    yy = base - y
    half = yy[i - lo] / 2
    above = np.nonzero(yy >= half)[0]
    w0 = max(float(x[above[-1]] - x[above[0]]), float(np.min(np.diff(lam))))
    model = GaussianMixture(1)
    p0 = model.pack([yy[i - lo]], [0.0], [w0 / FWHM_PER_SIGMA], 0.0)
    fit = fit_model(x, yy, model, p0)
    amp, cen, sig, _ = model.unpack(fit.params)
    if not (fit.converged and amp[0] > 0):
        raise ModeNotFoundError("Gaussian fit of the dip did not converge")
    return CavityMode(float(lam[i] + cen[0]), float(abs(sig[0]) * FWHM_PER_SIGMA),
                      float(amp[0]), math.sqrt(max(fit.covariance[1, 1], 0.0)))


# -- stack files ----------------------------------------------------------------

def load_stack(path) -> Stack:
    """JSON with ambient/substrate indices and layers of
    {label, n_re, n_im, thickness_nm} or {label, index_table_path, thickness_nm}.
    Table paths are relative to the JSON file.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    return stack_from_dict(doc, path.parent)


def _index(d: dict, key: str, default: complex) -> complex:
    v = d.get(key, default)
    if isinstance(v, dict):
        return complex(v.get("n_re", 0.0), v.get("n_im", 0.0))
    if isinstance(v, (list, tuple)):
        return complex(*v)
    return complex(v)


def stack_from_dict(doc: dict, base: Path | None = None) -> Stack:
    if "layers" not in doc:
        raise DomainError("stack: missing field 'layers'")
    layers = []
    for k, raw in enumerate(doc["layers"]):
        if "thickness_nm" not in raw:
            raise DomainError(f"stack layer {k}: missing field 'thickness_nm'")
        if "index_table_path" in raw:
            p = Path(raw["index_table_path"])
            if base is not None and not p.is_absolute():
                p = base / p
            n = TabulatedIndex.from_file(p)
        elif "n_re" in raw:
            n = complex(raw["n_re"], raw.get("n_im", 0.0))
        else:
            raise DomainError(f"stack layer {k}: need 'n_re' or 'index_table_path'")
        layers.append(Layer(n, float(raw["thickness_nm"]), str(raw.get("label", ""))))
    return Stack(tuple(layers), _index(doc, "ambient_index", 1.0),
                 _index(doc, "substrate_index", N_GAAS))


def stack_to_dict(stack: Stack) -> dict:
    layers = []
    for l in stack.layers:
        if isinstance(l.refractive_index, TabulatedIndex):
            raise DomainError("tabulated layers cannot be serialized inline")
        layers.append({"label": l.label, "n_re": l.refractive_index.real,
                       "n_im": l.refractive_index.imag, "thickness_nm": l.thickness})
    a, s = complex(stack.ambient_index), complex(stack.substrate_index)
    return {"ambient_index": [a.real, a.imag], "substrate_index": [s.real, s.imag],
            "layers": layers}
