import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icnn_ot.data import (
    CHECKER_SOURCE_CENTERS,
    CHECKER_TARGET_CENTERS,
    EIGHT_GAUSSIAN_CENTERS,
    DistributionSpec,
    RngStream,
    sample,
)
from icnn_ot.evaluation import (
    GRID_COLUMNS,
    GridExport,
    IcnnPotential,
    Quadratic,
    cell_masses,
    eps1_closed_form,
    eps1_estimate,
    export_grid,
    mean_transport_error,
    sorted_matching_w2,
    stability_check,
    support_coverage,
    support_distance,
)
from icnn_ot.icnn import IcnnConfig, init_params, quadratic_params

Q2 = DistributionSpec.gaussian(2)
CHECKER_T = DistributionSpec("checkerboard-target")


# -- oracles -----------------------------------------------------------------


@pytest.mark.parametrize("a, b, expected", [([0, 1, 2], [10, 11, 12], 50.0), ([0], [3], 4.5)])
def test_sorted_matching_examples(a, b, expected):
    assert sorted_matching_w2(a, b) == expected


def test_sorted_matching_is_permutation_invariant():
    a = np.random.default_rng(0).standard_normal(100)
    assert sorted_matching_w2(a, np.random.default_rng(1).permutation(a)) == 0.0
    with pytest.raises(ValueError):
        sorted_matching_w2([1, 2], [1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(-10, 10))
def test_sorted_matching_translation_covariance(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    base = sorted_matching_w2(a, b)
    diff = np.sort(a) - np.sort(b)
    # shifting b by c: 1/2 mean (a_i - b_i - c)^2
    expected = base - c * diff.mean() + 0.5 * c * c
    assert sorted_matching_w2(a, b + c) == pytest.approx(expected, rel=1e-9, abs=1e-9)
    assert sorted_matching_w2(a + c, b + c) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_sorted_matching_gaussian_convergence():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(100_000), 3.0 + rng.standard_normal(100_000)
    assert sorted_matching_w2(a, b) == pytest.approx(4.5, rel=0.03)


def test_mean_transport_error_examples():
    assert mean_transport_error([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0]) == (0.0, 0.0)
    absolute, relative = mean_transport_error([[1.1, 0.9]], [1.0, 1.0])
    assert absolute == pytest.approx(0.02)
    assert relative == pytest.approx(1.0)
    assert mean_transport_error([[0.3, 0.4]], [0.0, 0.0]) == (pytest.approx(0.25), None)


# -- support -----------------------------------------------------------------


def test_coverage_at_target_centers():
    assert support_coverage(CHECKER_TARGET_CENTERS, CHECKER_T, 0.0) == 1.0
    assert support_coverage(EIGHT_GAUSSIAN_CENTERS, DistributionSpec("eight-gaussian-target"), 0.0) == 1.0


def test_coverage_at_source_only_centers_is_zero():
    assert support_coverage(CHECKER_SOURCE_CENTERS, CHECKER_T, 0.0) == 0.0
    np.testing.assert_allclose(support_distance(CHECKER_SOURCE_CENTERS, CHECKER_T), 0.5)


def test_target_samples_are_fully_covered():
    S = sample(CHECKER_T, 5000, RngStream(0, "P"))
    assert support_coverage(S, CHECKER_T, 0.0) == 1.0
    m = cell_masses(S, CHECKER_T)
    assert m.shape == (4,) and abs(m.sum() - 1) < 1e-12 and np.all(np.abs(m - 0.25) < 0.03)


def test_support_distance_to_squares():
    d = support_distance([[2.0, 0.0], [0.0, 2.5], [2.0, 1.0]], CHECKER_T)
    np.testing.assert_allclose(d, [0.5, 1.0, np.sqrt(0.5)])


def test_support_errors():
    with pytest.raises(ValueError, match="no support"):
        support_coverage([[0.0]], DistributionSpec.gaussian(1))
    with pytest.raises(ValueError, match="dim"):
        support_coverage([[0.0, 0.0, 0.0]], CHECKER_T)


# -- minimization gap and stability ------------------------------------------


def g_scaled(delta, alpha=1.0):
    # grad g = (1 + delta) grad f*, with f = alpha/2 |x|^2 so f* = |y|^2 / (2 alpha)
    return quadratic_params(2, curvature=(1.0 + delta) / alpha)


def test_quadratic_conjugates():
    f = Quadratic(2.0)
    y = np.array([[1.0, -2.0]])
    assert f.conjugate(y)[0] == pytest.approx(5.0 / 4.0)
    np.testing.assert_allclose(f.conjugate_grad(y), y / 2.0)


def test_eps1_closed_form_quadratic_fixture():
    Y = sample(Q2, 200_000, RngStream(0, "Q"))
    mean, se = eps1_closed_form(Quadratic(1.0), g_scaled(0.1), Y)
    assert mean == pytest.approx(0.01, abs=3 * se)
    assert eps1_closed_form(Quadratic(1.0), g_scaled(0.0), Y)[0] == pytest.approx(0.0, abs=1e-12)


def test_eps1_estimate_vanishes_at_the_minimizer():
    est = eps1_estimate(Quadratic(1.0), g_scaled(0.0), Q2, inner_budget=20, restarts=2, stream=RngStream(0, "e"))
    assert 0.0 <= est <= 1e-6


def test_eps1_estimate_recovers_the_gap_from_below():
    est = eps1_estimate(
        Quadratic(1.0), g_scaled(0.1), Q2, inner_budget=600, restarts=1, stream=RngStream(1, "e"), n_eval=20000
    )
    assert 0.007 < est <= 0.0105


@pytest.mark.parametrize("delta", [0.0, 0.05, 0.1])
def test_stability_quadratic_saturates(delta):
    rep = stability_check(1.0, Quadratic(1.0), g_scaled(delta), Q2, n=50_000, stream=RngStream(0, "s"))
    assert rep.holds
    assert rep.lhs == pytest.approx(delta**2 * 2.0, rel=0.03, abs=1e-12)
    assert rep.lhs == pytest.approx(rep.bound, rel=1e-9, abs=1e-15)


def test_stability_alpha_two():
    rep = stability_check(2.0, Quadratic(2.0), g_scaled(0.1, alpha=2.0), Q2, n=50_000, stream=RngStream(0, "s"))
    assert rep.holds
    # lhs = delta^2 / alpha^2 * E|Y|^2
    assert rep.lhs == pytest.approx(0.01 / 4 * 2.0, rel=0.03)


def test_stability_holds_for_non_quadratic_g():
    cfg = IcnnConfig(2, 6, 3)
    g = (init_params(cfg, 5), cfg)
    rep = stability_check(1.0, Quadratic(1.0), g, Q2, n=20_000, stream=RngStream(0, "s"))
    assert rep.holds and rep.lhs <= rep.bound + 1e-12
    assert rep.lhs > 0


def test_icnn_potential_wraps_params():
    p, cfg = quadratic_params(2)
    pot = IcnnPotential(p, cfg)
    y = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(pot.value(y), [2.5])
    np.testing.assert_allclose(pot.grad(y), y)


# -- grid --------------------------------------------------------------------


def test_grid_identity_has_zero_displacement():
    p, cfg = quadratic_params(2)
    g = export_grid(p, cfg, (-1, 1), 5)
    np.testing.assert_allclose(g.rows[:, 4:6], 0.0, atol=1e-14)


def test_grid_zero_params():
    cfg = IcnnConfig(2, 4, 3)
    g = export_grid(init_params(cfg, 0, scale=0.0), cfg, (-1, 1), 4)
    Y = g.rows[:, :2]
    np.testing.assert_array_equal(g.rows[:, 4:6], -Y)
    np.testing.assert_allclose(g.rows[:, 6], -0.5 * np.sum(Y * Y, axis=1))


def test_grid_resolution_three(tmp_path):
    p, cfg = quadratic_params(2)
    g = export_grid(p, cfg, (-1, 1), 3)
    assert g.rows.shape == (9, len(GRID_COLUMNS))
    assert {tuple(r) for r in g.rows[:, :2]} == {(a, b) for a in (-1.0, 0.0, 1.0) for b in (-1.0, 0.0, 1.0)}
    g.write(tmp_path / "g.csv")
    back = GridExport.read(tmp_path / "g.csv")
    assert np.array_equal(back.rows, g.rows) and back.resolution == 3


def test_grid_errors():
    p, cfg = quadratic_params(3)
    with pytest.raises(ValueError, match="2-D"):
        export_grid(p, cfg)
    p, cfg = quadratic_params(2)
    with pytest.raises(ValueError, match="resolution"):
        export_grid(p, cfg, resolution=1)
