import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsskit.core import DomainError, Spectrum, make_rng
from fsskit.forward import FWHM_PER_SIGMA
from fsskit.peakfit import (GaussianMixture, InitializationError, PeakFitResult,
                            PeakGuess, fit_gaussians, fit_model, levenberg_marquardt,
                            linewidth_statistics)

GRID = 0.95 + np.arange(-256, 256) * 25e-6


def gaussian_counts(grid, lines, background=0.0):
    y = np.full(grid.shape, background, dtype=float)
    for c, fwhm, amp in lines:
        sig = fwhm / FWHM_PER_SIGMA
        y += amp * np.exp(-0.5 * ((grid - c) * 1e6 / sig) ** 2)
    return y


def _fd_jacobian(model, x, p, h=1e-6):
    J = np.empty((x.size, p.size))
    for k in range(p.size):
        step = h * max(abs(p[k]), 1.0)
        dp = np.zeros_like(p)
        dp[k] = step
        J[:, k] = (model(x, p + dp) - model(x, p - dp)) / (2 * step)
    return J


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_jacobian_matches_finite_differences(n, shared, seed):
    rng = np.random.default_rng(seed)
    model = GaussianMixture(n, shared_width=shared)
    x = np.linspace(-800, 800, 161)
    p = model.pack(rng.uniform(10, 1000, n), rng.uniform(-300, 300, n),
                   rng.uniform(60, 200, n), rng.uniform(-5, 5))
    J = model.jacobian(x, p)
    J_fd = _fd_jacobian(model, x, p)
    scale = np.max(np.abs(J_fd), axis=0) + 1e-300
    assert np.max(np.abs(J - J_fd) / scale) < 1e-6


def test_lm_rosenbrock():
    def r(p):
        return np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])

    def j(p):
        return np.array([[-20 * p[0], 10.0], [-1.0, 0.0]])

    res = levenberg_marquardt(r, j, [-1.2, 1.0])
    assert res.converged
    assert res.params == pytest.approx([1, 1], abs=1e-6)


def test_single_gaussian_exact():
    y = gaussian_counts(GRID, [(0.95, 250, 1000)])
    (r,) = fit_gaussians(Spectrum(GRID, y), 1)
    assert r.converged
    assert r.center == pytest.approx(0.95, rel=1e-6)
    assert r.fwhm == pytest.approx(250, rel=1e-6)
    assert r.amplitude == pytest.approx(1000, rel=1e-6)
    assert abs(r.background) < 1e-6
    assert r.residual_rms < 1e-9 * 1000


def test_two_gaussians_exact():
    lines = [(0.95 - 0.75e-3, 300, 800), (0.95 + 0.75e-3, 300, 500)]
    fits = fit_gaussians(Spectrum(GRID, gaussian_counts(GRID, lines, 50.0)), 2)
    assert [f.center for f in fits] == pytest.approx([l[0] for l in lines], rel=1e-6)
    assert [f.amplitude for f in fits] == pytest.approx([800, 500], rel=1e-6)
    assert fits[0].center < fits[1].center


def test_fixed_point():
    y = gaussian_counts(GRID, [(0.9503, 180, 2000)], 100.0)
    noisy = y + make_rng(3).normal(0, 5, y.size)
    (r,) = fit_gaussians(Spectrum(GRID, np.maximum(noisy, 0)), 1)
    regenerated = gaussian_counts(GRID, [(r.center, r.fwhm, r.amplitude)], r.background)
    (r2,) = fit_gaussians(Spectrum(GRID, regenerated), 1,
                          init=[PeakGuess(r.center, r.fwhm)])
    assert r2.center == pytest.approx(r.center, rel=1e-9)
    assert r2.fwhm == pytest.approx(r.fwhm, rel=1e-9)
    assert r2.amplitude == pytest.approx(r.amplitude, rel=1e-9)


def test_initialization_error():
    flat = Spectrum(GRID, np.full(GRID.size, 10.0))
    with pytest.raises(InitializationError):
        fit_gaussians(flat, 1)
    y = gaussian_counts(GRID, [(0.95, 250, 1000)])
    with pytest.raises(InitializationError):
        fit_gaussians(Spectrum(GRID, y), 2, init=[PeakGuess(0.95, 250)])


def test_model_validation():
    with pytest.raises(DomainError):
        GaussianMixture(0)


def test_non_convergence_is_reported():
    y = gaussian_counts(GRID, [(0.95, 250, 1000)], 100.0)
    model = GaussianMixture(1)
    x = (GRID - 0.95) * 1e6
    fit = fit_model(x, y, model, model.pack([10], [2000], [30], 0.0), max_iter=2)
    assert not fit.converged
    assert np.all(np.isfinite(fit.params))


def test_centroid_unbiased_over_seeds():
    # 500 Poisson realisations of one line: the mean error must be far below
    # the per-fit standard error
    truth = 0.95 + 3.3e-6
    mean = gaussian_counts(GRID, [(truth, 266, 1e4 * 25 / (266 / FWHM_PER_SIGMA)
                                   / math.sqrt(2 * math.pi))], 100.0)
    guess = [PeakGuess(0.95, 266)]
    errs, stderrs = [], []
    for seed in range(500):
        y = make_rng(seed).poisson(mean).astype(float)
        (r,) = fit_gaussians(Spectrum(GRID, y), 1, init=guess)
        errs.append((r.center - truth) * 1e6)
        stderrs.append(r.center_stderr)
    errs = np.array(errs)
    assert abs(errs.mean()) < np.mean(stderrs) / 5
    # reported errors are calibrated
    assert np.std(errs) == pytest.approx(np.mean(stderrs), rel=0.15)


def _result(fwhm, converged=True):
    return PeakFitResult(0.95, 1.0, fwhm, 1.0, 0.0, converged, 0.0)


def test_linewidth_statistics():
    s = linewidth_statistics([_result(100), _result(300)])
    assert s.mean == pytest.approx(200)
    assert (s.minimum, s.maximum) == (100, 300)
    assert s.counts.sum() == 2
    one = linewidth_statistics([_result(250)])
    assert one.minimum == one.maximum == one.mean == 250
    assert linewidth_statistics([_result(1), _result(5, False)]).maximum == 1
    with pytest.raises(DomainError):
        linewidth_statistics([])


def test_linewidth_statistics_generator_range():
    rng = make_rng(11)
    widths = rng.uniform(100, 550, 30)
    s = linewidth_statistics([_result(w) for w in widths], bin_width=50)
    assert 100 <= s.minimum <= s.maximum <= 550
    assert np.all(np.diff(s.bin_edges) == pytest.approx(50))
