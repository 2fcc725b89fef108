import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from polyaurn import catalogue
from polyaurn.asymptotics import (
    CltReport,
    Regime,
    classify_regime,
    drift_matrix,
    gamma_matrix,
    lyapunov_quadrature,
    lyapunov_residual,
    non_balanced_params,
    regime_for,
    sigma_matrix,
    smallest_decay,
    two_colour_clt,
)
from polyaurn.drift import Stability, find_zeros, jacobian_h
from polyaurn.urn_core import ReplacementRule, enumerate_compositions

R = {name: catalogue.get(name).rule for name in catalogue.names()}
ONES3 = np.ones(3)
THIRD = [1 / 3, 1 / 3, 1 / 3]
FIFTHS = [0.2, 0.4, 0.4]

GAMMA_421 = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]]) / 9
GAMMA_422 = np.array([[2, -1, -1], [-1, 3, -2], [-1, -2, 3]]) / 25
# frozen from the quadrature and scipy oracles below
SIGMA_422 = np.array([[2, -1, -1], [-1, 19 / 13, -6 / 13], [-1, -6 / 13, 19 / 13]]) / 25


def scipy_sigma(rule, theta):
    """Independent route: scipy's Bartels-Stewart solver on the same equation."""
    k = rule.d - 1
    A = drift_matrix(rule, theta)
    G = gamma_matrix(rule, theta)[:k, :k]
    X = scipy.linalg.solve_continuous_lyapunov(A, -G)
    L = np.vstack([np.eye(k), -np.ones((1, k))])
    return L @ X @ L.T


# -- Gamma -----------------------------------------------------------------------


def test_gamma_goldens():
    np.testing.assert_allclose(gamma_matrix(R["4.2.1"], THIRD), GAMMA_421, atol=1e-12)
    np.testing.assert_allclose(gamma_matrix(R["4.2.2"], FIFTHS), GAMMA_422, atol=1e-12)


def test_gamma_vanishes_at_vertex_of_diagonal_rule():
    rule = ReplacementRule.diagonal(3, 2, 2)
    for i in range(3):
        e = np.eye(3)[i]
        assert np.abs(gamma_matrix(rule, e)).max() == 0.0


def test_gamma_rejects_non_zero_and_unbalanced():
    with pytest.raises(ValueError, match="not a zero"):
        gamma_matrix(R["4.2.1"], [0.5, 0.3, 0.2])
    with pytest.raises(ValueError, match="not balanced"):
        gamma_matrix(R["5.1"], [0.5, 0.5])


# -- Sigma -----------------------------------------------------------------------


def test_sigma_equals_gamma_for_symmetric_example():
    sigma = sigma_matrix(R["4.2.1"], THIRD)
    np.testing.assert_allclose(sigma, GAMMA_421, atol=1e-12)


def test_sigma_two_zero_example_against_oracles():
    sigma, reduced = sigma_matrix(R["4.2.2"], FIFTHS, return_reduced=True)
    np.testing.assert_allclose(sigma, SIGMA_422, atol=1e-12)
    np.testing.assert_allclose(sigma, scipy_sigma(R["4.2.2"], FIFTHS), atol=1e-12)
    A = drift_matrix(R["4.2.2"], FIFTHS)
    G = gamma_matrix(R["4.2.2"], FIFTHS)[:2, :2]
    assert lyapunov_residual(A, reduced, G) <= 1e-12
    np.testing.assert_allclose(lyapunov_quadrature(A, G), reduced, atol=1e-9)


def test_quadrature_handles_jordan_block():
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    G = np.array([[1.0, 0.2], [0.2, 0.5]])
    X = lyapunov_quadrature(A, G)
    np.testing.assert_allclose(X, scipy.linalg.solve_continuous_lyapunov(A, -G), atol=1e-9)


def test_quadrature_rejects_unstable_matrix():
    with pytest.raises(ValueError, match="diverges"):
        lyapunov_quadrature(np.diag([-1.0, 0.1]), np.eye(2))


def test_sigma_rejects_slow_regimes():
    with pytest.raises(ValueError, match="diverges"):
        sigma_matrix(R["4.2.3"], [0.6, 0.2, 0.2])
    with pytest.raises(ValueError, match="diverges"):
        sigma_matrix(R["4.1.2"], [1 / 3, 2 / 3])


def random_balanced(seed, d=3, m=2, S=6):
    rng = np.random.default_rng(seed)
    entries = {}
    for v in enumerate_compositions(d, m):
        add = rng.integers(0, S + 1, size=d - 1)
        while add.sum() > S:
            add = rng.integers(0, S + 1, size=d - 1)
        entries[v] = (*map(int, add), int(S - add.sum()))
    return ReplacementRule(d, m, entries)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_sigma_properties_on_random_rules(seed):
    rule = random_balanced(seed)
    S = 6
    for z in find_zeros(rule):
        if z.stability is not Stability.STABLE:
            continue
        G = gamma_matrix(rule, z.location)
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        assert np.linalg.eigvalsh(G).min() >= -1e-12
        assert np.abs(G @ ONES3).max() <= 1e-10
        if smallest_decay(rule, z.location).real <= S / 2 + 1e-6:
            continue
        sigma = sigma_matrix(rule, z.location)
        np.testing.assert_allclose(sigma, sigma.T, atol=1e-12)
        assert np.linalg.eigvalsh(sigma).min() >= -1e-10
        assert np.abs(sigma @ ONES3).max() <= 1e-10
        np.testing.assert_allclose(sigma, scipy_sigma(rule, z.location), atol=1e-9)


# -- regimes ---------------------------------------------------------------------


def test_regime_boundaries():
    assert regime_for(2.0, 2.0) is Regime.GAUSSIAN_SQRT_N
    assert regime_for(1.0 + 1e-10, 2.0) is Regime.GAUSSIAN_SQRT_N_OVER_LOG_N
    assert regime_for(0.5, 2.0) is Regime.ALMOST_SURE_POWER
    assert regime_for(1e-10, 2.0) is Regime.DEGENERATE
    assert regime_for(0.0, 2.0) is Regime.DEGENERATE


def test_three_colour_reports():
    r = classify_regime(R["4.2.1"], THIRD)
    assert r.regime is Regime.GAUSSIAN_SQRT_N
    np.testing.assert_allclose(np.sort(r.tangent_eigenvalues.real), [-1, -1], atol=1e-9)
    assert r.lyapunov_residual <= 1e-10

    r = classify_regime(R["4.2.2"], FIFTHS)
    np.testing.assert_allclose(np.sort(r.tangent_eigenvalues.real), [-18 / 5, -2], atol=1e-9)
    assert r.Lambda == pytest.approx(2.0)
    assert r.normalized_lambda == pytest.approx(1.0)

    r = classify_regime(R["4.2.3"], [0.6, 0.2, 0.2])
    assert r.regime is Regime.ALMOST_SURE_POWER
    assert r.power_exponent == pytest.approx(1 / 3, abs=1e-12)
    assert r.Sigma is None

    r = classify_regime(R["4.2.4"], [0, 0, 1])
    assert r.regime is Regime.DEGENERATE
    assert r.Sigma is None and r.power_exponent is None
    with pytest.raises(ValueError, match="no rate"):
        r.scaling(100)


def test_classify_rejects_unstable_zero():
    with pytest.raises(ValueError, match="unstable"):
        classify_regime(R["4.2.1"], [1, 0, 0])


def test_report_scaling_and_export(tmp_path):
    r = classify_regime(R["4.2.3"], [0.6, 0.2, 0.2])
    assert r.scaling(1000.0) == pytest.approx(10.0)
    r = classify_regime(R["4.2.1"], THIRD)
    assert r.scaling(100.0) == pytest.approx(10.0)
    assert isinstance(r, CltReport)
    d = r.to_dict()
    assert d["regime"] == "GaussianSqrtN" and len(d["Sigma"]) == 3
    r.to_csv(tmp_path / "clt.csv")
    lines = (tmp_path / "clt.csv").read_text().splitlines()
    assert lines[0] == "quantity,i,j,value"
    assert len(lines) == 1 + 18


def test_two_colour_goldens():
    (r,) = two_colour_clt(R["4.1.1"])
    assert r.theta == pytest.approx(0.5) and r.regime is Regime.GAUSSIAN_SQRT_N
    assert r.Gamma == pytest.approx(1 / 36, abs=1e-12)

    (r,) = two_colour_clt(R["4.1.2"])
    assert r.regime is Regime.GAUSSIAN_SQRT_N_OVER_LOG_N
    assert r.Gamma == pytest.approx(1 / 18, abs=1e-12)
    assert r.limit_variance is None

    (r,) = two_colour_clt(R["4.1.3"])
    assert r.theta == pytest.approx(1 - math.sqrt(2) / 2, abs=1e-12)
    assert r.regime is Regime.ALMOST_SURE_POWER
    assert r.power_exponent == pytest.approx(math.sqrt(2) / 4, abs=1e-12)

    (r,) = two_colour_clt(R["4.1.4"])
    assert r.regime is Regime.DEGENERATE and r.power_exponent is None

    reports = two_colour_clt(R["4.1.5"])
    assert sorted(round(r.theta, 12) for r in reports) == [0.1, 0.9]
    for r in reports:
        assert r.Lambda == pytest.approx(64 / 91, abs=1e-12)
        assert r.limit_variance == pytest.approx(r.Gamma * 91 / 37, rel=1e-12)


@pytest.mark.parametrize("name", ["4.1.1", "4.1.2", "4.1.3", "4.1.5"])
def test_two_colour_agrees_with_general_route(name):
    rule = R[name]
    for r in two_colour_clt(rule):
        g = classify_regime(rule, [r.theta, 1 - r.theta])
        assert g.regime is r.regime
        assert g.normalized_lambda.real == pytest.approx(r.Lambda, abs=1e-12)
        assert g.Gamma[0, 0] == pytest.approx(r.Gamma, abs=1e-12)
        if r.limit_variance is not None:
            assert g.Sigma[0, 0] == pytest.approx(r.limit_variance, rel=1e-9)


@pytest.mark.parametrize("name", ["4.1.1", "4.1.3", "4.1.5"])
def test_non_balanced_formulas_reduce_to_balanced(name):
    rule = R[name]
    for r in two_colour_clt(rule):
        nb = non_balanced_params(rule, r.theta)
        assert nb.omega == pytest.approx(r.S)
        assert nb.lam == pytest.approx(r.Lambda, abs=1e-12)
        assert nb.sigma2 == pytest.approx(r.Gamma, abs=1e-12)
        if r.limit_variance is not None:
            assert nb.clt_variance == pytest.approx(r.limit_variance, rel=1e-9)


# -- non-balanced ----------------------------------------------------------------


def test_non_balanced_goldens():
    r = non_balanced_params(R["5.1"], 0.5)
    assert r.omega == pytest.approx(2.5, abs=1e-12)
    assert r.clt_variance == pytest.approx(0.1, abs=1e-12)

    r = non_balanced_params(R["5.2"], 1 / 3)
    assert (r.omega, r.lam) == (pytest.approx(4.0), pytest.approx(2.0))
    assert r.sigma2 == pytest.approx(1 / 9, abs=1e-12)
    assert r.clt_variance == pytest.approx(1 / 27, abs=1e-12)

    r = non_balanced_params(R["5.3"], 0.0)
    assert r.sigma2 == 0.0 and r.clt_variance is None


@pytest.mark.parametrize("a,b", [(1, 4), (2, 3), (1, 9), (3, 5)])
def test_square_root_family_closed_forms(a, b):
    m = 2
    rule = ReplacementRule.two_colour([(a * (m - k), b * k) for k in range(m + 1)][::-1])
    theta = math.sqrt(a) / (math.sqrt(a) + math.sqrt(b))
    r = non_balanced_params(rule, theta)
    assert r.omega == pytest.approx(m * math.sqrt(a * b), rel=1e-12)
    assert r.sigma2 == pytest.approx(math.sqrt(a * b) / (m * (math.sqrt(a) + math.sqrt(b)) ** 2), rel=1e-12)


def test_non_balanced_errors():
    with pytest.raises(ValueError, match="not a zero"):
        non_balanced_params(R["5.1"], 0.3)
    with pytest.raises(ValueError, match="repelling"):
        non_balanced_params(R["5.3"], 1.0)
    shrinking = ReplacementRule.two_colour([(1, 0), (0, 0), (0, 1)])
    with pytest.raises(ValueError, match="row sum"):
        non_balanced_params(shrinking, 0.5)
    with pytest.raises(ValueError, match="d=2"):
        non_balanced_params(R["4.2.1"], 0.5)


def test_jacobian_used_by_drift_matrix():
    A = drift_matrix(R["4.2.2"], FIFTHS)
    np.testing.assert_allclose(A, jacobian_h(R["4.2.2"], np.array(FIFTHS)) / 2 + 0.5 * np.eye(2))
