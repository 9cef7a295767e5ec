import math

import numpy as np
import pytest
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from flowsim.tuner import (
    BOState,
    TunerError,
    bo_tune,
    confidence_interval,
    ei_acquisition,
    gp_posterior,
    grid_tune,
    matern52,
    noisy,
    random_tune,
    retune_trigger,
)


def state_with(samples, **kw):
    s = BOState(0.0, 10.0, **kw)
    for x, y in samples:
        s.observe(x, y)
    return s


def test_matern_matches_sklearn():
    a = np.linspace(0.1, 5.0, 7)
    b = np.linspace(0.0, 4.0, 5)
    ours = matern52(a, b, length_scale=1.3, variance=2.0)
    ref = 2.0 * Matern(length_scale=1.3, nu=2.5)(a[:, None], b[:, None])
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


def test_posterior_matches_sklearn():
    xs = [1.0, 2.5, 4.0, 7.5, 9.0]
    ys = [3.0, 1.0, 2.0, 5.0, 4.0]
    s = state_with(zip(xs, ys))
    mean0, ls, sv, nv = s.hyperparameters()
    q = np.linspace(0.5, 10.0, 40)
    mu, var = gp_posterior(s, q)
    kernel = ConstantKernel(sv, "fixed") * Matern(ls, "fixed", nu=2.5) + WhiteKernel(nv, "fixed")
    gpr = GaussianProcessRegressor(kernel, optimizer=None, normalize_y=False, alpha=1e-15)
    gpr.fit(np.array(xs)[:, None], np.array(ys) - mean0)
    ref_mu, ref_sd = gpr.predict(q[:, None], return_std=True)
    np.testing.assert_allclose(mu, ref_mu + mean0, rtol=1e-8, atol=1e-8)
    # sklearn's std includes the white-noise term; ours is the latent function
    np.testing.assert_allclose(var + nv, ref_sd ** 2, rtol=1e-6, atol=1e-10)


def test_posterior_interpolates():
    s = state_with([(2.0, 1.0), (6.0, 3.0)], noise_variance=0.0)
    mu, var = gp_posterior(s, [2.0, 6.0])
    np.testing.assert_allclose(mu, [1.0, 3.0], atol=1e-9)
    assert np.all(var < 1e-9)


def test_posterior_far_away_returns_prior():
    s = state_with([(1.0, 1.0), (1.5, 3.0)], length_scale=0.1)
    mean0, _, sv, _ = s.hyperparameters()
    mu, var = gp_posterior(s, [9.9])
    assert mu[0] == pytest.approx(mean0) and var[0] == pytest.approx(sv)


def test_posterior_midpoint_symmetry():
    s = state_with([(3.0, 1.0), (7.0, 4.0)])
    mu, _ = gp_posterior(s, [5.0])
    assert mu[0] == pytest.approx(2.5)


def test_variance_bounds():
    s = state_with([(1.0, 2.0), (1.0000001, 2.1), (5.0, 0.5), (9.0, 3.0)])
    _, _, sv, nv = s.hyperparameters()
    _, var = gp_posterior(s, np.linspace(0.01, 10, 200))
    assert np.all(var >= 0) and np.all(var <= sv + nv)


def test_confidence_interval():
    lo, hi = confidence_interval(np.array([1.0]), np.array([4.0]))
    assert lo[0] == pytest.approx(1.0 - 3.92) and hi[0] == pytest.approx(1.0 + 3.92)


def test_ei_examples():
    assert ei_acquisition(5.0, 0.0, 5.0, 0.1) == 0.0
    assert ei_acquisition(5.0 - 0.1 - 1.0, 0.0, 5.0, 0.1) == pytest.approx(1.0)
    assert ei_acquisition(5.0 - 0.1, 1.0, 5.0, 0.1) == pytest.approx(0.39894228, abs=1e-8)


def test_ei_non_negative():
    rng = np.random.default_rng(0)
    mean = rng.normal(size=500)
    var = rng.uniform(0, 2, size=500) * (rng.random(500) > 0.2)
    ei = ei_acquisition(mean, var, 0.0, 0.1)
    assert np.all(ei >= 0)
    assert np.all(ei[(var == 0) & (mean >= -0.1)] == 0)


def test_bo_constant_objective():
    res = bo_tune(lambda x: 7.0, BOState(0.0, 100.0), seed=3)
    assert res.best_time == 7.0 and len(res.log) == 8


@pytest.mark.parametrize("spread", [1.2, 2.0, 3.0])
@pytest.mark.parametrize("center", [10.0, 37.0, 63.0, 95.0])
def test_bo_quadratic_within_two_percent(center, spread):
    # iteration-time-like bowl: worst end is ``spread`` times the minimum
    a = (spread - 1.0) / max(center, 100.0 - center) ** 2
    f = lambda x: a * (x - center) ** 2 + 1.0
    fine = min(f(x) for x in np.linspace(0, 100, 10001)[1:])
    hits = sum(bo_tune(f, BOState(0.0, 100.0), seed=s).best_time <= 1.02 * fine for s in range(20))
    assert hits == 20


def test_bo_incumbent_monotone_and_in_range():
    f = lambda x: math.sin(x / 7.0) + x / 50.0
    res = bo_tune(f, BOState(0.0, 60.0), seed=11)
    incumbents = [r.incumbent_us for r in res.log]
    assert incumbents == sorted(incumbents, reverse=True)
    assert res.best_time == min(r.observed_us for r in res.log)
    assert all(0.0 < r.sp_bytes <= 60.0 for r in res.log)


def test_bo_is_seeded():
    f = lambda x: abs(x - 3.3)
    a = bo_tune(f, BOState(0.0, 10.0), seed=5)
    b = bo_tune(f, BOState(0.0, 10.0), seed=5)
    assert a == b


def test_grid_examples():
    assert grid_tune(lambda x: -x, BOState(0.0, 8.0)) == (8.0, -8.0)
    assert grid_tune(lambda x: 1.0, BOState(0.0, 8.0)) == (1.0, 1.0)
    # a valley narrower than the grid spacing is missed, a fine sweep finds it
    valley = lambda x: 0.0 if abs(x - 4.5) < 0.2 else 1.0
    assert grid_tune(valley, BOState(0.0, 8.0))[1] == 1.0
    assert min(valley(x) for x in np.linspace(0, 8, 801)) == 0.0


def test_random_examples():
    assert random_tune(lambda x: 2.0, BOState(0.0, 8.0), draws=8, seed=1)[1] == 2.0
    x, y = random_tune(lambda x: x * x, BOState(0.0, 8.0), draws=1, seed=1)
    assert y == x * x
    f = lambda x: (x - 3.0) ** 2
    _, y = random_tune(f, BOState(0.0, 8.0), draws=1000, seed=2)
    assert y < 1e-3


def test_retune_trigger():
    assert not retune_trigger(10.0, 10.0)
    assert retune_trigger(12.0, 10.0, 0.1)
    assert not retune_trigger(10.5, 10.0, 0.1)
    with pytest.raises(TunerError):
        retune_trigger(1.0, 0.0)


def test_state_validation():
    with pytest.raises(TunerError):
        BOState(5.0, 5.0)
    s = BOState(0.0, 1.0)
    with pytest.raises(TunerError):
        s.observe(0.0, 1.0)
    with pytest.raises(TunerError):
        gp_posterior(s, [0.5])


def test_noisy_wrapper_is_seeded_and_averages():
    f = noisy(lambda x: 100.0, rel_sd=0.05, seed=4)
    g = noisy(lambda x: 100.0, rel_sd=0.05, seed=4)
    vals = [f(1.0) for _ in range(50)]
    assert vals == [g(1.0) for _ in range(50)]
    assert abs(np.mean(vals) - 100.0) < 1.0


def test_bo_survives_noise():
    f = lambda x: (x - 6.0) ** 2 + 50.0
    res = bo_tune(noisy(f, 0.01, seed=1), BOState(0.0, 10.0), seed=1)
    assert f(res.best_sp) <= 1.1 * 50.0
