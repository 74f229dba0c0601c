"""Gaussian line fitting by damped least squares (Levenberg-Marquardt)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DomainError, Spectrum, uev_to_ev
from .forward import FWHM_PER_SIGMA

LAMBDA_START = 1e-3
LAMBDA_MAX = 1e16
MAX_ITER = 200
RTOL_COST = 1e-10
WINDOW_FWHM = 5.0
POISSON_MIN_COUNTS = 10.0


class InitializationError(ValueError):
    """Could not find enough peaks to seed the fit."""


@dataclass
class LMResult:
    params: np.ndarray
    cost: float                # 0.5 * sum of squared weighted residuals
    n_iter: int
    converged: bool
    jac: np.ndarray            # weighted Jacobian at ``params``


def levenberg_marquardt(residual: Callable[[np.ndarray], np.ndarray],
                        jacobian: Callable[[np.ndarray], np.ndarray],
                        p0: Sequence[float],
                        project: Callable[[np.ndarray], np.ndarray] | None = None,
                        max_iter: int = MAX_ITER,
                        rtol: float = RTOL_COST,
                        atol: float = 0.0) -> LMResult:
    """Minimise 0.5*|r(p)|^2 with Marquardt's diagonal damping.

    Damping starts at 1e-3 and moves by x10 / /10 on rejected / accepted
    steps.  Stops when an undamped-enough step gains less than ``rtol`` of
    the cost, when the cost drops to ``atol``, or after ``max_iter``.
    ``project`` maps a trial point back into the feasible set.
    """
    p = np.array(p0, dtype=float)
    if project is not None:
        p = project(p)
    r = residual(p)
    cost = 0.5 * float(r @ r)
    lam = LAMBDA_START
    converged = False
    n_iter = 0
    J = jacobian(p)
    if cost <= atol:
        return LMResult(p, cost, 0, True, J)
    while n_iter < max_iter:
        n_iter += 1
        g = J.T @ r
        A = J.T @ J
        diag = A.diagonal().copy()
        diag[diag <= 0] = 1e-300
        tiny = 1e-14 * (np.abs(p) + 1e-300)
        accepted = False
        while lam <= LAMBDA_MAX:
            damped = A.copy()
            damped.flat[::len(p) + 1] += lam * diag
            try:
                step = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if (np.abs(step) <= tiny).all():
                break
            trial = p + step
            if project is not None:
                trial = project(trial)
            r_new = residual(trial)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        rel = (cost - cost_new) / cost if cost > 0 else 0.0
        p, r, cost = trial, r_new, cost_new
        J = jacobian(p)
        # a tiny gain from a heavily damped step is not convergence
        stalled = rel < rtol and lam <= 1e6
        lam = max(lam / 10, 1e-12)
        if stalled or cost <= atol:
            converged = True
            break
    return LMResult(p, cost, n_iter, converged, J)


class GaussianMixture:
    """Sum of Gaussians plus an optional constant background.

    Parameter layout: ``[A_1, c_1, (s_1), ..., A_n, c_n, (s_n), (s), (b)]``
    with amplitude A (peak height), centre c and standard deviation s; a
    single trailing ``s`` when the width is shared.
    """

    def __init__(self, n_peaks: int, shared_width: bool = False,
                 background: bool = True):
        if n_peaks < 1:
            raise DomainError("n_peaks must be >= 1")
        self.n_peaks = n_peaks
        self.shared_width = shared_width
        self.background = background
        per = 2 if shared_width else 3
        self.n_params = n_peaks * per + (1 if shared_width else 0) + int(background)

    def unpack(self, p):
        n = self.n_peaks
        if self.shared_width:
            amp = p[0:2 * n:2]
            cen = p[1:2 * n:2]
            sig = np.full(n, p[2 * n])
        else:
            amp = p[0:3 * n:3]
            cen = p[1:3 * n:3]
            sig = p[2:3 * n:3]
        b = p[-1] if self.background else 0.0
        return amp, cen, sig, b

    def pack(self, amp, cen, sig, b=0.0):
        out = []
        for k in range(self.n_peaks):
            out += [amp[k], cen[k]] if self.shared_width else [amp[k], cen[k], sig[k]]
        if self.shared_width:
            out.append(float(np.mean(sig)))
        if self.background:
            out.append(b)
        return np.array(out, dtype=float)

    def _terms(self, x, p):
        amp, cen, sig, b = self.unpack(p)
        u = (x[:, None] - cen) / sig
        g = np.exp(-0.5 * u * u)
        return amp, sig, b, u, g

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        amp, _, b, _, g = self._terms(x, p)
        return g @ amp + b

    def jacobian(self, x, p, terms=None):
        x = np.asarray(x, dtype=float)
        amp, sig, _, u, g = self._terms(x, p) if terms is None else terms
        J = np.empty((x.size, self.n_params))
        n = self.n_peaks
        per = 2 if self.shared_width else 3
        ag_u = amp * g * u / sig
        J[:, 0:per * n:per] = g
        J[:, 1:per * n:per] = ag_u
        if self.shared_width:
            J[:, 2 * n] = (ag_u * u).sum(axis=1)
        else:
            J[:, 2:per * n:per] = ag_u * u
        if self.background:
            J[:, -1] = 1.0
        return J


@dataclass
class ModelFit:
    """Raw fit on a relative energy axis (ueV from ``origin``)."""

    model: GaussianMixture
    params: np.ndarray
    covariance: np.ndarray
    origin: float              # eV
    converged: bool
    residual_rms: float
    cost: float
    n_points: int
    n_iter: int


def fit_model(x: np.ndarray, y: np.ndarray, model: GaussianMixture,
              p0: np.ndarray, sigma: np.ndarray | None = None,
              origin: float = 0.0, max_iter: int = MAX_ITER) -> ModelFit:
    """Fit ``model`` to (x, y); the covariance is scaled by reduced chi-square."""
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    min_sig = 1e-3 * (hi - lo) / max(len(x), 1)
    per = 2 if model.shared_width else 3
    n = model.n_peaks

    def project(p):
        p = p.copy()
        p[0:per * n:per] = np.maximum(p[0:per * n:per], 0.0)
        p[1:per * n:per] = np.clip(p[1:per * n:per], lo, hi)
        if model.shared_width:
            p[per * n] = max(p[per * n], min_sig)
        else:
            p[2:per * n:per] = np.maximum(p[2:per * n:per], min_sig)
        return p

    # exact (noise-free) data: stop once residuals are at round-off level
    atol = 1e-20 * 0.5 * float(np.sum((w * y) ** 2))
    cache = {}

    def residual(p):
        terms = model._terms(x, p)
        cache["p"], cache["terms"] = p, terms
        amp, _, b, _, g = terms
        return w * (g @ amp + b - y)

    def jacobian(p):
        terms = cache["terms"] if cache.get("p") is p else None
        return w[:, None] * model.jacobian(x, p, terms)

    res = levenberg_marquardt(residual, jacobian, p0, project=project,
                              max_iter=max_iter, atol=atol)
    dof = max(len(x) - model.n_params, 1)
    resid = model(x, res.params) - y
    jtj = res.jac.T @ res.jac
    cov = np.linalg.pinv(jtj) * (2 * res.cost / dof)
    return ModelFit(model, res.params, cov, origin, res.converged,
                    float(np.sqrt(np.mean(resid ** 2))), res.cost, len(x),
                    res.n_iter)


@dataclass(frozen=True)
class PeakFitResult:
    center: float              # eV
    center_stderr: float       # ueV
    fwhm: float                # ueV
    amplitude: float           # peak height, counts
    background: float          # counts
    converged: bool
    residual_rms: float
    fwhm_stderr: float = float("nan")
    amplitude_stderr: float = float("nan")

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_PER_SIGMA

    @property
    def area(self) -> float:
        """Integrated counts x ueV (divide by the pixel pitch for counts)."""
        return self.amplitude * self.sigma * math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class PeakGuess:
    center: float              # eV
    fwhm: float                # ueV
    amplitude: float | None = None


def smooth3(y: np.ndarray) -> np.ndarray:
    """Three-bin moving average with edge replication."""
    padded = np.concatenate([y[:1], y, y[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def estimate_background(y: np.ndarray) -> float:
    return float(np.percentile(y, 10))


def find_peak_guesses(s: Spectrum, n_peaks: int) -> list[PeakGuess]:
    """Seed centres from the largest local maxima of the smoothed spectrum."""
    y = smooth3(s.counts)
    b = estimate_background(y)
    inner = np.arange(1, len(y) - 1)
    is_max = (y[inner] > y[inner - 1]) & (y[inner] >= y[inner + 1]) & (y[inner] > b)
    idx = inner[is_max]
    if len(idx) < n_peaks:
        raise InitializationError(
            f"found {len(idx)} local maxima, need {n_peaks}")
    idx = idx[np.argsort(y[idx])[::-1][:n_peaks]]
    pitch = np.diff(s.energies) * 1e6
    guesses = []
    for i in sorted(idx):
        half = b + 0.5 * (y[i] - b)
        lo = i
        while lo > 0 and y[lo] > half:
            lo -= 1
        hi = i
        while hi < len(y) - 1 and y[hi] > half:
            hi += 1
        fwhm = max((s.energies[hi] - s.energies[lo]) * 1e6,
                   2 * float(pitch[min(i, len(pitch) - 1)]))
        guesses.append(PeakGuess(float(s.energies[i]), fwhm, float(y[i] - b)))
    return guesses


def _windows(guesses: Sequence[PeakGuess], emin: float, emax: float):
    """Merge the +/-5 FWHM windows of nearby peaks into fit groups."""
    spans = sorted(
        (max(g.center - uev_to_ev(WINDOW_FWHM * g.fwhm), emin),
         min(g.center + uev_to_ev(WINDOW_FWHM * g.fwhm), emax), g)
        for g in guesses)
    groups = []
    for lo, hi, g in spans:
        if groups and lo <= groups[-1][1]:
            groups[-1][1] = max(groups[-1][1], hi)
            groups[-1][2].append(g)
        else:
            groups.append([lo, hi, [g]])
    return groups


def poisson_sigma(counts: np.ndarray) -> np.ndarray | None:
    """Poisson errors when every bin has >= 10 counts, else None (unweighted)."""
    if np.all(counts >= POISSON_MIN_COUNTS):
        return np.sqrt(counts)
    return None


def window_data(s: Spectrum, lo: float, hi: float, origin: float):
    """(x in ueV from ``origin``, counts, Poisson sigma or None) on [lo, hi]."""
    sel = (s.energies >= lo) & (s.energies <= hi)
    y = s.counts[sel]
    return (s.energies[sel] - origin) * 1e6, y, poisson_sigma(y)


def fit_window(s: Spectrum, guesses: Sequence[PeakGuess], lo: float, hi: float,
               shared_width: bool = False, max_iter: int = MAX_ITER) -> ModelFit:
    """Fit len(guesses) Gaussians plus constant background on [lo, hi] (eV)."""
    model = GaussianMixture(len(guesses), shared_width=shared_width)
    origin = float(np.mean([g.center for g in guesses]))
    x, y, sigma = window_data(s, lo, hi, origin)
    if y.size < model.n_params + 1:
        raise InitializationError("fit window holds too few bins")
    b0 = estimate_background(y)
    amps, cens, sigs = [], [], []
    for g in guesses:
        amp = g.amplitude
        if amp is None:
            amp = float(np.interp(g.center, s.energies, s.counts)) - b0
        amps.append(max(amp, 1e-12))
        cens.append((g.center - origin) * 1e6)
        sigs.append(g.fwhm / FWHM_PER_SIGMA)
    p0 = model.pack(amps, cens, sigs, b0)
    return fit_model(x, y, model, p0, sigma, origin, max_iter)


def peak_results(fit: ModelFit) -> list[PeakFitResult]:
    model = fit.model
    amp, cen, sig, b = model.unpack(fit.params)
    per = 2 if model.shared_width else 3
    cov = fit.covariance
    out = []
    for k in range(model.n_peaks):
        ia, ic = per * k, per * k + 1
        isig = 2 * model.n_peaks if model.shared_width else per * k + 2
        out.append(PeakFitResult(
            center=fit.origin + uev_to_ev(float(cen[k])),
            center_stderr=float(np.sqrt(max(cov[ic, ic], 0.0))),
            fwhm=float(sig[k]) * FWHM_PER_SIGMA,
            amplitude=float(amp[k]),
            background=float(b),
            converged=fit.converged,
            residual_rms=fit.residual_rms,
            fwhm_stderr=float(np.sqrt(max(cov[isig, isig], 0.0))) * FWHM_PER_SIGMA,
            amplitude_stderr=float(np.sqrt(max(cov[ia, ia], 0.0))),
        ))
    return out


def fit_gaussians(s: Spectrum, n_peaks: int = 1,
                  init: Sequence[PeakGuess] | None = None,
                  shared_width: bool = False) -> list[PeakFitResult]:
    """Fit ``n_peaks`` Gaussian lines plus a constant background per window.

    Without ``init`` the centres are seeded from the largest local maxima of
    the 3-bin smoothed spectrum.  Each line is fitted on +/-5 initial FWHM
    around its seed; overlapping windows are fitted jointly.  Results come
    back sorted by centre.
    """
    if init is None:
        guesses = find_peak_guesses(s, n_peaks)
    else:
        guesses = list(init)
        if len(guesses) != n_peaks:
            raise InitializationError(
                f"got {len(guesses)} initial guesses for {n_peaks} peaks")
    emin, emax = s.span
    results = []
    if shared_width:
        lo = min(g.center - uev_to_ev(WINDOW_FWHM * g.fwhm) for g in guesses)
        hi = max(g.center + uev_to_ev(WINDOW_FWHM * g.fwhm) for g in guesses)
        groups = [[max(lo, emin), min(hi, emax), guesses]]
    else:
        groups = _windows(guesses, emin, emax)
    for lo, hi, group in groups:
        fit = fit_window(s, group, lo, hi, shared_width=shared_width)
        results.extend(peak_results(fit))
    return sorted(results, key=lambda r: r.center)


@dataclass(frozen=True)
class LinewidthSummary:
    minimum: float
    maximum: float
    mean: float
    bin_edges: np.ndarray
    counts: np.ndarray


def linewidth_statistics(fits: Sequence[PeakFitResult],
                         bin_width: float = 50.0) -> LinewidthSummary:
    """Min / max / mean and a histogram of converged FWHM values (ueV)."""
    widths = np.array([f.fwhm for f in fits if f.converged], dtype=float)
    if widths.size == 0:
        raise DomainError("no converged fits to summarise")
    lo = bin_width * math.floor(widths.min() / bin_width)
    hi = bin_width * (math.floor(widths.max() / bin_width) + 1)
    edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    counts, _ = np.histogram(widths, bins=edges)
    return LinewidthSummary(float(widths.min()), float(widths.max()),
                            float(widths.mean()), edges, counts)
