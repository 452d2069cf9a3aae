import math

import numpy as np
import pytest
from scipy import integrate, stats

from fpkpinn.errors import ConfigError, ShapeError
from fpkpinn.net import Jet
from fpkpinn.problems import (PROBLEMS, example1, example2, example3, example4, fpk_residual,
                              fpk_residual_batch, gbm_problem, get_problem)


def interior_points(problem, n, rng, margin=0.0):
    lo = problem.space_lo + margin
    hi = problem.space_hi
    x = lo + (hi - lo) * rng.random((n, problem.d))
    t = problem.t0 + (problem.t_end - problem.t0) * rng.random(n)
    return x, t


@pytest.mark.parametrize("factory", [example1, example3, gbm_problem])
def test_exact_solutions_annihilate_operator(factory, rng):
    problem = factory()
    x, t = interior_points(problem, 1000, rng, margin=1e-3)
    res = fpk_residual_batch(problem, problem.exact_jet(x, t), x, t)
    assert np.max(np.abs(res)) < 1e-8


def test_gbm_residual_at_reference_point():
    problem = gbm_problem()
    jet = problem.exact_jet(np.array([[13.54]]), np.array([0.5]))[0]
    assert abs(fpk_residual(problem, jet, [0.5, 13.54])) < 1e-8


def test_zero_jet_gives_zero_residual(rng):
    for name in PROBLEMS:
        problem = get_problem(name)
        d = problem.d
        point = np.concatenate([[problem.t0 + 0.1], problem.space_lo + 0.5])
        jet = Jet(0.0, np.zeros(d + 1), np.zeros((d, d)))
        assert fpk_residual(problem, jet, point) == 0.0


def test_residual_dimension_mismatch():
    with pytest.raises(ShapeError):
        fpk_residual(example3(), Jet(0.0, np.zeros(2), np.zeros((1, 1))), [0.1, 1.0, 1.0])


def test_example1_constants():
    problem = example1()
    assert problem.exact_solution(np.array([[0.1]]), np.array([0.0]))[0] == \
        pytest.approx(1 / math.sqrt(2 * math.pi * 0.2), rel=1e-12)
    assert 1 / math.sqrt(2 * math.pi * 0.2) == pytest.approx(0.892062058, rel=1e-9)
    assert problem.target_mean == pytest.approx(3 / 36)
    assert problem.c_t == 3.0


def test_example1_initial_matches_exact_at_t0(rng):
    problem = example1()
    x = rng.uniform(-6, 6, (50, 1))
    np.testing.assert_allclose(problem.initial_density(x),
                               problem.exact_solution(x, np.zeros(50)), rtol=1e-13)


def test_example1_exact_is_shifted_gaussian():
    problem = example1()
    x = np.linspace(-6, 6, 7)[:, None]
    ref = stats.norm(loc=(1.0 + 0.2) / 2, scale=math.sqrt(1.2)).pdf(x[:, 0])
    np.testing.assert_allclose(problem.exact_solution(x, np.ones(7)), ref, rtol=1e-12)


def test_example2_drift():
    problem = example2()
    b, jac = problem.drift(np.array([[1.0], [0.0]]), np.zeros(2))
    assert b[:, 0].tolist() == [0.0, 0.0]
    assert jac[:, 0, 0].tolist() == [-2.0, 1.0]
    assert problem.c_t == pytest.approx(3.0)
    assert problem.exact_solution is None


def test_example3_initial_values():
    problem = example3()
    assert problem.initial_density(np.array([4.0, 4.0]))[0] == pytest.approx(1 / (2 * math.pi))
    assert 1 / (2 * math.pi) == pytest.approx(0.159155, abs=1e-6)
    assert problem.initial_density(np.array([0.0, 0.0]))[0] == \
        pytest.approx(math.exp(-16) / (2 * math.pi), rel=1e-12)
    assert math.exp(-16) / (2 * math.pi) == pytest.approx(1.79e-8, rel=1e-2)


def test_example3_exact_matches_heat_kernel():
    problem = example3()
    x = np.array([[4.0, 4.0], [3.0, 5.5]])
    t = np.array([0.5, 1.0])
    ref = [stats.multivariate_normal([4, 4], (1 + s) * np.eye(2)).pdf(p) for p, s in zip(x, t)]
    np.testing.assert_allclose(problem.exact_solution(x, t), ref, rtol=1e-12)


def test_example4_drift_and_divergence(rng):
    problem = example4()
    b, jac = problem.drift(np.array([[1.0, 0.0]]), np.zeros(1))
    assert b[0].tolist() == pytest.approx([0.0, 0.9])
    x = rng.uniform(-4, 6, (20, 2))
    _, jac = problem.drift(x, np.zeros(20))
    np.testing.assert_allclose(np.trace(jac, axis1=1, axis2=2), -0.4, atol=1e-15)


def test_example4_matches_printed_equation(rng):
    # p_t = 0.2 p_yy - y p_x + 0.4 p - (x - 0.4 y - 0.1 x^3) p_y
    problem = example4()
    x = rng.uniform(-4, 6, (30, 2))
    t = rng.uniform(0, 1, 30)
    for k in range(30):
        g = rng.standard_normal(3)
        h = rng.standard_normal((2, 2))
        h = h + h.T
        val = rng.standard_normal()
        jet = Jet(val, g, h)
        u, v = x[k]
        printed = g[0] - (0.2 * h[1, 1] - v * g[1] + 0.4 * val
                          - (u - 0.4 * v - 0.1 * u ** 3) * g[2])
        assert fpk_residual(problem, jet, [t[k], u, v]) == pytest.approx(printed, abs=1e-12)


def test_gbm_reference_value():
    # oracle: scipy's log-normal with the GBM law at s = t + 0.2
    mu, sigma, x0, s = 0.3430, 0.5693, 13.54, 0.2
    oracle = stats.lognorm(s=sigma * math.sqrt(s),
                           scale=x0 * math.exp((mu - sigma ** 2 / 2) * s)).pdf(13.54)
    problem = gbm_problem()
    value = problem.exact_solution(np.array([[13.54]]), np.array([0.0]))[0]
    assert value == pytest.approx(oracle, rel=1e-12)
    assert value == pytest.approx(0.114564, abs=1e-6)


def test_gbm_vanishes_at_origin():
    problem = gbm_problem()
    vals = problem.exact_solution(np.array([[0.0], [1e-8]]), np.array([1.0, 1.0]))
    assert vals[0] == 0.0 and vals[1] < 1e-30
    assert problem.target_mean == pytest.approx(0.025)


def _mass(problem, n=2001):
    axes = [np.linspace(lo, hi, n if problem.d == 1 else 401)
            for lo, hi in zip(problem.space_lo, problem.space_hi)]
    if problem.d == 1:
        return integrate.simpson(problem.initial_density(axes[0][:, None]), x=axes[0])
    gx, gy = np.meshgrid(*axes, indexing="ij")
    vals = problem.initial_density(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
    return integrate.simpson(integrate.simpson(vals, x=axes[1], axis=1), x=axes[0])


@pytest.mark.parametrize("name", ["example1", "example2", "example4", "gbm"])
def test_initial_density_mass(name):
    assert _mass(get_problem(name)) == pytest.approx(1.0, abs=1e-4)


def test_example3_initial_mass_is_truncated():
    # the unit Gaussian at (4,4) is cut by the box [0,6]^2
    expected = (stats.norm.cdf(2) - stats.norm.cdf(-4)) ** 2
    assert _mass(example3()) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("name", list(PROBLEMS))
def test_drift_jacobian_matches_fd(name, rng):
    problem = get_problem(name)
    x, t = interior_points(problem, 25, rng, margin=0.5)
    _, jac = problem.drift(x, t)
    h = 1e-6
    for j in range(problem.d):
        e = np.zeros(problem.d)
        e[j] = h
        fd = (problem.drift(x + e, t)[0] - problem.drift(x - e, t)[0]) / (2 * h)
        np.testing.assert_allclose(jac[:, :, j], fd, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("name", ["example1", "example2", "example3", "example4"])
def test_constant_diffusion_derivatives_zero(name, rng):
    problem = get_problem(name)
    x, t = interior_points(problem, 10, rng)
    _, d_dmat, dd_dmat = problem.diffusion(x, t)
    assert not d_dmat.any() and not dd_dmat.any()


def test_gbm_diffusion_derivatives(rng):
    problem = gbm_problem()
    x = rng.uniform(1, 39, (10, 1))
    dmat, d_dmat, dd_dmat = problem.diffusion(x, np.zeros(10))
    s2 = 0.5693 ** 2
    np.testing.assert_allclose(dmat[:, 0, 0], s2 * x[:, 0] ** 2)
    np.testing.assert_allclose(d_dmat[:, 0, 0, 0], 2 * s2 * x[:, 0])
    np.testing.assert_allclose(dd_dmat[:, 0, 0], 2 * s2)


@pytest.mark.parametrize("name", list(PROBLEMS))
def test_c_t_is_temporal_span(name):
    problem = get_problem(name)
    assert problem.c_t == pytest.approx(problem.t_end - problem.t0)


def test_overrides_and_errors():
    assert get_problem("example3", t_end=2.0).t_end == 2.0
    with pytest.raises(ConfigError):
        get_problem("example9")
    with pytest.raises(ConfigError):
        get_problem("example1", nonsense=1.0)
    with pytest.raises(ConfigError):
        get_problem("example1", t_end=-1.0)
