import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fpkpinn.errors import ConfigError, DegeneratePriorError, DegenerateSampleError
from fpkpinn.net import xavier_init
from fpkpinn.problems import example1, example2, example3
from fpkpinn.sampling import (KdeModel, PointSet, base_points, categorical_weights,
                              draw_unique_indices, kde_eval, mixture, resample_points,
                              resample_slice, scott_bandwidth, snapshot, snapshot_grid,
                              split_counts)


def constant_net(problem, c):
    params = xavier_init([problem.d + 1, 3, 1], seed=0)
    for w in params.weights:
        w[:] = 0.0
    params.biases[-1][:] = c
    return params


def test_base_point_counts():
    pts = base_points(example1(), 50, 40, 80, 160, seed=0)
    assert pts.n_residual == 2000 and pts.residual.shape == (40, 50, 2)
    assert pts.n_boundary == 80 and pts.n_initial == 160
    assert base_points(example2(), 60, 60, 120, 240, seed=0).n_residual == 3600


@pytest.mark.parametrize("factory", [example1, example2, example3])
def test_base_points_in_range(factory):
    problem = factory()
    pts = base_points(problem, 30, 7, 40, 50, seed=1)
    r = pts.residual_flat()
    assert np.all(r[:, 0] > problem.t0) and np.all(r[:, 0] <= problem.t_end + 1e-12)
    assert np.all(r[:, 1:] > problem.space_lo) and np.all(r[:, 1:] < problem.space_hi)
    assert np.allclose(pts.slice_times[-1], problem.t_end)
    b = pts.boundary[:, 1:]
    on_face = np.isclose(b, problem.space_lo) | np.isclose(b, problem.space_hi)
    assert np.all(on_face.any(axis=1))
    assert np.all(pts.initial[:, 0] == problem.t0)


def test_base_points_deterministic_and_validated():
    a = base_points(example1(), 5, 3, 4, 4, seed=9)
    b = base_points(example1(), 5, 3, 4, 4, seed=9)
    assert np.array_equal(a.residual, b.residual) and np.array_equal(a.boundary, b.boundary)
    with pytest.raises(ConfigError):
        base_points(example1(), 0, 3, 4, 4, seed=9)


def test_scott_bandwidth_value():
    # oracle: sigma * n^(-1/5) with sigma = 2 exactly
    pts = np.array([-2.0, 2.0] * 50)
    assert scott_bandwidth(pts) == pytest.approx(2 * 100 ** -0.2, rel=1e-14)
    assert 2 * 100 ** -0.2 == pytest.approx(0.796214, abs=1e-6)


def test_scott_bandwidth_pooled_2d():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    assert scott_bandwidth(pts) == pytest.approx(math.sqrt(2.0) * 4 ** (-1 / 6))


def test_scott_bandwidth_errors():
    with pytest.raises(DegenerateSampleError):
        scott_bandwidth(np.ones((10, 1)))
    with pytest.raises(DegenerateSampleError):
        scott_bandwidth(np.zeros((1, 2)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0), st.integers(0, 1000))
def test_scott_bandwidth_homogeneous(c, seed):
    pts = np.random.default_rng(seed).standard_normal((20, 2))
    assert scott_bandwidth(c * pts) == pytest.approx(c * scott_bandwidth(pts), rel=1e-12)


def test_snapshot_clamps_and_shapes():
    problem = example3()
    centers, u = snapshot(constant_net(problem, -0.1), problem, 0.5, 100)
    assert centers.shape == (100, 2) and np.all(u == 0.0)
    centers, u = snapshot(constant_net(problem, 0.3), problem, 0.5, 90)
    assert centers.shape == (100, 2) and np.allclose(u, 0.3)
    _, u = snapshot(constant_net(example1(), 0.0), example1(), 1.0, 40)
    assert np.all(u == 0.0)
    grid = snapshot_grid(example1(), 40)
    assert grid.shape == (40, 1) and grid[0, 0] == -6.0 and grid[-1, 0] == 6.0


def test_kde_single_kernel():
    model = KdeModel(np.array([[0.0]]), np.array([1.0]), 1.0)
    assert kde_eval(model, [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert 1 / math.sqrt(2 * math.pi) == pytest.approx(0.398942, abs=1e-6)
    zero = KdeModel(np.array([[0.0], [1.0]]), np.zeros(2), 0.5)
    assert np.all(kde_eval(zero, np.linspace(-3, 3, 7)[:, None]) == 0.0)


def test_kde_matches_direct_formula(rng):
    centers = rng.standard_normal((15, 2))
    u = rng.random(15)
    h = 0.7
    model = KdeModel(centers, u, h)
    x = rng.standard_normal((5, 2))
    direct = [np.sum(u * np.exp(-np.sum((p - centers) ** 2, axis=1) / (2 * h * h)))
              / (15 * h * h * 2 * math.pi) for p in x]
    np.testing.assert_allclose(kde_eval(model, x), direct, rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_kde_mass(d, rng):
    centers = rng.uniform(-1, 1, (12, d))
    u = rng.random(12)
    model = KdeModel.fit(centers, u)
    axis = np.linspace(-8, 8, 801 if d == 1 else 321)
    if d == 1:
        mass = integrate.simpson(kde_eval(model, axis[:, None]), x=axis)
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        vals = kde_eval(model, np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
        mass = integrate.simpson(integrate.simpson(vals, x=axis, axis=1), x=axis)
    assert mass == pytest.approx(u.sum() / 12, abs=1e-3)
    assert np.all(kde_eval(model, rng.uniform(-5, 5, (50, d))) >= 0)


def test_kde_model_validation():
    with pytest.raises(ConfigError):
        KdeModel(np.zeros((2, 1)), np.array([1.0, -1.0]), 1.0)
    with pytest.raises(ConfigError):
        KdeModel(np.zeros((2, 1)), np.ones(2), 0.0)


def test_categorical_weights(monkeypatch):
    import fpkpinn.sampling as sampling

    dens = {}
    monkeypatch.setattr(sampling, "kde_eval", lambda model, x: dens["v"])
    dens["v"] = np.ones(4)
    assert categorical_weights(None, None).tolist() == [0.25] * 4
    dens["v"] = np.array([3.0, 1.0])
    assert categorical_weights(None, None).tolist() == [0.75, 0.25]
    dens["v"] = np.array([0.0, 2.0, 0.0])
    alpha = categorical_weights(None, None)
    assert alpha[0] == 0.0 and alpha[2] == 0.0
    dens["v"] = np.zeros(3)
    with pytest.raises(DegeneratePriorError):
        categorical_weights(None, None)


def test_categorical_weights_sum(rng):
    model = KdeModel.fit(rng.standard_normal((20, 2)), rng.random(20))
    alpha = categorical_weights(model, rng.uniform(-3, 3, (500, 2)))
    assert abs(alpha.sum() - 1.0) < 1e-12


def test_draw_unique_full_set_and_point_mass(rng):
    alpha = np.full(6, 1 / 6)
    assert sorted(draw_unique_indices(alpha, 6, rng).tolist()) == list(range(6))
    point = np.array([1.0, 0.0, 0.0])
    for s in range(5):
        assert draw_unique_indices(point, 1, np.random.default_rng(s)).tolist() == [0]


def test_draw_unique_support():
    alpha = np.array([0.9, 0.1, 0.0, 0.0])
    for s in range(50):
        assert set(draw_unique_indices(alpha, 2, np.random.default_rng(s)).tolist()) == {0, 1}
    with pytest.raises(DegeneratePriorError):
        draw_unique_indices(alpha, 3, np.random.default_rng(0))


def test_categorical_frequencies():
    alpha = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
    n = 100_000
    rng = np.random.default_rng(7)
    counts = np.bincount([draw_unique_indices(alpha, 1, rng)[0] for _ in range(n)],
                         minlength=5)
    freq = counts / n
    assert np.all(np.abs(freq - alpha) <= 3 * np.sqrt(alpha * (1 - alpha) / n))


def test_resample_slice_properties(rng):
    model = KdeModel.fit(np.array([[0.0], [0.5], [1.0]]), np.array([1.0, 2.0, 1.0]))
    pts = resample_slice(model, [-6.0], [6.0], 500, 50, seed=3)
    assert pts.shape == (50, 1)
    assert len(np.unique(pts[:, 0])) == 50
    assert np.all((pts >= -6) & (pts <= 6))
    again = resample_slice(model, [-6.0], [6.0], 500, 50, seed=3)
    assert np.array_equal(pts, again)
    # concentrated prior pulls points toward its centre
    assert np.mean(np.abs(pts[:, 0] - 0.5)) < 2.0
    with pytest.raises(ConfigError):
        resample_slice(model, [-6.0], [6.0], 10, 50, seed=3)


def test_resample_points_follows_network(caplog):
    problem = example1()
    base = base_points(problem, 20, 4, 10, 10, seed=0)
    good = resample_points(constant_net(problem, 0.2), problem, base, seed=1)
    assert good.residual.shape == base.residual.shape
    assert np.array_equal(good.slice_times, base.slice_times)
    with caplog.at_level("WARNING"):
        fallback = resample_points(constant_net(problem, -1.0), problem, base, seed=1)
    assert "degenerate" in caplog.text
    r = fallback.residual_flat()
    assert np.all((r[:, 1] > -6) & (r[:, 1] < 6))


def test_split_counts():
    assert split_counts(0.5, 50) == (25, 25)
    assert split_counts(0.6, 60) == (36, 24)
    assert split_counts(0.7, 40) == (28, 12)
    with pytest.raises(ConfigError):
        split_counts(1.5, 10)


def test_mixture():
    problem = example1()
    base = base_points(problem, 50, 4, 10, 10, seed=0)
    other = base_points(problem, 50, 4, 10, 10, seed=1)
    mixed = mixture(other, base, 0.5, seed=2)
    assert mixed.residual.shape == base.residual.shape
    assert np.array_equal(mixed.boundary, base.boundary)
    for m in range(4):
        from_other = np.isin(mixed.residual[m, :, 1], other.residual[m, :, 1])
        from_base = np.isin(mixed.residual[m, :, 1], base.residual[m, :, 1])
        assert from_other.sum() == 25 and from_base.sum() == 25
        assert len(np.unique(mixed.residual[m, :, 1])) == 50
    again = mixture(other, base, 0.5, seed=2)
    assert np.array_equal(mixed.residual, again.residual)


def test_mixture_structure_mismatch():
    problem = example1()
    a = base_points(problem, 10, 4, 5, 5, seed=0)
    b = base_points(problem, 12, 4, 5, 5, seed=0)
    with pytest.raises(ConfigError):
        mixture(a, b, 0.5, seed=0)
    shifted = PointSet(a.residual.copy(), a.boundary, a.initial)
    shifted.residual[:, :, 0] += 0.01
    with pytest.raises(ConfigError):
        mixture(shifted, a, 0.5, seed=0)
