import numpy as np
import pytest

from phibayes.asymptotics import (
    U_n,
    asymptotic_report,
    clip_psd,
    clt_check,
    compute_S,
    compute_V,
    delta_n,
    posterior_l1_distance,
    posterior_normality_check,
    standardize,
)
from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, SingularS, TooShort
from phibayes.families import Exponential, NormalLocation, NormalLocationScale
from phibayes.models import ChainDraws
from phibayes.posterior import PhiPosterior, PriorSpec
from phibayes.utils import make_rng

GAMMAS = [0.0, 0.5, 1.0, 2.0]
MODELS = [(NormalLocation(), [0.0]), (Exponential(), [2.0]), (NormalLocationScale(), [0.5, 2.0])]


def make_chain(draws: np.ndarray) -> ChainDraws:
    draws = np.asarray(draws, dtype=float).reshape(len(draws), -1)
    length = draws.shape[0]
    return ChainDraws(
        draws=draws,
        log_post_trace=np.zeros(length),
        accepted=np.ones(length, dtype=bool),
        scale_trace=np.ones_like(draws),
        burn_in=0,
        thin=1,
        steps=length,
        accepted_steps=length,
        seed=0,
    )


@pytest.mark.parametrize("gamma", GAMMAS)
@pytest.mark.parametrize("family, theta0", MODELS)
def test_S_and_V_at_truth_are_fisher(family, theta0: list, gamma: float) -> None:
    criterion = DualCriterion(family, DivergenceSpec(gamma), theta0)
    fisher = family.fisher_information(np.array(theta0))
    S = compute_S(criterion, theta0, theta0)
    V = compute_V(criterion, theta0, theta0)
    assert np.allclose(S, fisher, rtol=1e-4, atol=1e-6)
    assert np.allclose(V, fisher, rtol=1e-4, atol=1e-6)
    assert np.allclose(S.T @ np.linalg.inv(V) @ S, fisher, rtol=1e-3, atol=1e-6)


def test_V_is_symmetric() -> None:
    criterion = DualCriterion(NormalLocationScale(), DivergenceSpec(0.5), [0.0, 1.0])
    V = compute_V(criterion, [0.3, 1.2], [0.0, 1.0])
    assert np.array_equal(V, V.T)
    assert np.min(np.linalg.eigvalsh(V)) >= 0


def test_S_differs_from_V_away_from_truth() -> None:
    criterion = DualCriterion(NormalLocation(), DivergenceSpec(2.0), [0.5])
    S = compute_S(criterion, [0.5], [0.0])
    V = compute_V(criterion, [0.5], [0.0])
    assert not np.allclose(S, V, rtol=1e-3)


def test_clip_psd() -> None:
    clipped, removed = clip_psd(np.array([[1.0, 0.0], [0.0, -0.5]]))
    assert np.allclose(clipped, [[1.0, 0.0], [0.0, 0.0]])
    assert removed == pytest.approx(0.5)


def test_U_n_klm_is_mean_deviation() -> None:
    family = NormalLocation()
    data = family.sample([0.2], 40, seed=3)
    criterion = DualCriterion(family, DivergenceSpec(0.0), [0.2])
    assert U_n(criterion, data, [0.2], [0.2])[0] == pytest.approx(np.mean(data.observations) - 0.2, abs=1e-8)


def test_U_n_single_observation() -> None:
    family = NormalLocation()
    criterion = DualCriterion(family, DivergenceSpec(0.5), [0.0])
    data = family.sample([0.0], 1, seed=0)
    expected = criterion.h_gradient([0.0], [0.0], data.observations)[0]
    assert np.allclose(U_n(criterion, data, [0.0], [0.0]), expected)


def test_delta_n() -> None:
    assert delta_n([1.0], np.eye(1), np.zeros(1)).tolist() == [1.0]
    assert delta_n([1.0], [[2.0]], [0.5]).tolist() == [1.25]


def test_standardize() -> None:
    assert standardize([0.3], 100, np.eye(1), np.eye(1), [0.3]).tolist() == [0.0]
    assert standardize([0.4], 100, np.eye(1), np.eye(1), [0.3])[0] == pytest.approx(1.0)


def test_singular_S() -> None:
    with pytest.raises(SingularS):
        delta_n([0.0], np.zeros((1, 1)), [0.0])
    with pytest.raises(SingularS):
        standardize([0.0], 10, np.zeros((1, 1)), np.eye(1), [0.0])


def test_normality_check_on_normal_draws() -> None:
    n = 100
    S = np.array([[2.0]])
    center = np.array([0.7])
    draws = center + make_rng(4).standard_normal((4000, 1)) / np.sqrt(n * S[0, 0])
    result = posterior_normality_check(make_chain(draws), n, S, center)
    assert result.cov_rel_err < 0.1
    assert result.ks_pvalues[0] > 0.01
    assert result.thinned_length > 1000


def test_normality_check_detects_wrong_scale() -> None:
    draws = make_rng(5).standard_normal((4000, 1)) / np.sqrt(100)
    result = posterior_normality_check(make_chain(draws), 100, np.array([[4.0]]), [0.0])
    assert result.cov_rel_err > 1.0
    assert result.ks_pvalues[0] < 1e-3


def test_normality_check_too_short() -> None:
    with pytest.raises(TooShort):
        posterior_normality_check(make_chain(np.zeros(10)), 10, np.eye(1), [0.0])


def test_l1_distance_of_bayes_posterior() -> None:
    family = NormalLocation()
    data = family.sample([0.0], 1000, seed=6)
    criterion = DualCriterion(family, DivergenceSpec(0.0), [0.0])
    post = PhiPosterior(criterion, data, PriorSpec.normal([0.0], [10.0]))
    S = compute_S(criterion, [0.0], [0.0])
    centre = delta_n([0.0], S, U_n(criterion, data, [0.0], [0.0]))
    assert posterior_l1_distance(post, S, centre) < 1e-3


def test_clt_check_klm() -> None:
    criterion = DualCriterion(NormalLocation(), DivergenceSpec(0.0), [0.0])
    result = clt_check(criterion, [0.0], 200, 300, seed=7)
    assert result.statistics.shape == (300, 1)
    assert result.failures == 0
    assert 0.7 < result.variance[0] < 1.3
    assert result.ks_pvalues[0] > 0.001


def test_clt_check_needs_replications() -> None:
    criterion = DualCriterion(NormalLocation(), DivergenceSpec(0.5), [0.0])
    with pytest.raises(ConfigError):
        clt_check(criterion, [0.0], 10, 1, seed=0)


def test_asymptotic_report_at_truth() -> None:
    family = NormalLocation()
    data = family.sample([0.0], 200, seed=9)
    criterion = DualCriterion(family, DivergenceSpec(0.5), [0.0])
    report = asymptotic_report(criterion, data, [0.05], [0.0])
    assert report.dim == 1
    assert report.S_positive
    assert not report.V_clipped
    assert report.relative_efficiency[0] == pytest.approx(1.0, rel=1e-3)
    assert np.allclose(report.sandwich, [[1.0]], rtol=1e-3)
    low, high = report.wald_ci[0]
    assert low < 0.05 < high
    assert high - low == pytest.approx(2 * 1.959964 / np.sqrt(200), rel=1e-3)
    assert report.standardized[0] == pytest.approx(0.05 * np.sqrt(200), rel=1e-3)
