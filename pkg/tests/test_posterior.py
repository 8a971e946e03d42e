import pickle
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, DivergenceInfinite, DomainError, PosteriorUnderflow
from phibayes.families import Dataset, NormalLocation
from phibayes.posterior import PhiPosterior, PriorSpec

FAMILY = NormalLocation()
DATA = FAMILY.sample([0.3], 50, seed=5)


def posterior(gamma: float, prior: PriorSpec | None = None, data: Dataset = DATA, escort: float = 0.3) -> PhiPosterior:
    criterion = DualCriterion(FAMILY, DivergenceSpec(gamma), [escort])
    return PhiPosterior(criterion, data, prior or PriorSpec.normal([0.0], [10.0]))


def test_klm_posterior_is_bayes_posterior() -> None:
    post = posterior(0.0)
    prior = post.prior

    def log_bayes(a: float) -> float:
        return float(np.sum(FAMILY.log_density([a], DATA.observations))) + prior.log_density([a])

    assert post([0.9]) - post([-0.2]) == pytest.approx(log_bayes(0.9) - log_bayes(-0.2), rel=1e-10)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0, 2.0])
def test_posterior_at_escort_is_log_prior(gamma: float) -> None:
    post = posterior(gamma)
    assert post([0.3]) == post.prior.log_density([0.3])


def test_uniform_prior_outside_box() -> None:
    post = posterior(0.5, PriorSpec.uniform_box([(-1.0, 1.0)]))
    assert post([1.5]) == -np.inf
    assert np.isfinite(post([0.5]))


def test_outside_parameter_box() -> None:
    assert posterior(0.5)([20.0]) == -np.inf


def test_infinite_criterion_rejects_state(monkeypatch) -> None:
    post = posterior(0.5)

    def infinite(data: Dataset, alpha: np.ndarray) -> float:
        raise DivergenceInfinite("test")

    monkeypatch.setattr(post.criterion, "criterion_sum", infinite)
    assert post([0.1]) == -np.inf
    assert post([0.2]) == -np.inf
    assert post.divergence_warnings == 2


def test_infinite_criterion_count_under_threads(monkeypatch) -> None:
    post = posterior(0.5)

    def infinite(data: Dataset, alpha: np.ndarray) -> float:
        raise DivergenceInfinite("test")

    monkeypatch.setattr(post.criterion, "criterion_sum", infinite)
    with ThreadPoolExecutor(max_workers=8) as pool:
        values = list(pool.map(lambda a: post([a]), np.linspace(-1.0, 1.0, 2000)))
    assert all(value == -np.inf for value in values)
    assert post.divergence_warnings == 2000


def test_posterior_survives_pickling() -> None:
    post = posterior(0.5)
    copy = pickle.loads(pickle.dumps(post))
    assert copy([0.4]) == post([0.4])


def test_normalize_matches_conjugate_posterior() -> None:
    post = posterior(0.0)
    variance = 1.0 / (DATA.n + 1.0 / 100.0)
    mean = variance * float(np.sum(DATA.observations))
    sd = np.sqrt(variance)
    normalized = post.normalize_1d(4001, mean - 10 * sd, mean + 10 * sd)

    assert np.trapezoid(normalized.density, normalized.grid) == pytest.approx(1.0, abs=1e-12)
    assert normalized.mean() == pytest.approx(mean, abs=1e-8)
    assert normalized.variance() == pytest.approx(variance, rel=1e-6)
    near = np.abs(normalized.grid - mean) < 3 * sd
    exact = np.exp(-0.5 * (normalized.grid[near] - mean) ** 2 / variance) / np.sqrt(2 * np.pi * variance)
    assert np.allclose(normalized.density[near], exact, rtol=1e-6)


def test_normalize_underflow() -> None:
    post = posterior(0.0, PriorSpec.uniform_box([(-10.0, 10.0)]))
    with pytest.raises(PosteriorUnderflow):
        post.normalize_1d(11, 11.0, 12.0)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
def test_sequential_update_adds_new_criterion_sum(gamma: float) -> None:
    first, second = DATA.split(0.6)
    old = posterior(gamma, data=first)
    updated = old.sequential_update(second)
    grid = np.linspace(-1.0, 1.5, 100)
    expected = [old([a]) + second.n * old.criterion.empirical_criterion(second, [a]) for a in grid]
    differences = np.array([updated([a]) for a in grid]) - np.array(expected)
    assert np.ptp(differences) <= 1e-10


def test_sequential_klm_mean_is_conjugate_update() -> None:
    first, second = DATA.split(0.6)
    updated = posterior(0.0, data=first).sequential_update(second)

    # N(0, 10^2) prior updated by the first batch, that posterior updated by the second
    first_var = 1.0 / (first.n + 1.0 / 100.0)
    first_mean = first_var * float(np.sum(first.observations))
    variance = 1.0 / (1.0 / first_var + second.n)
    mean = variance * (first_mean / first_var + float(np.sum(second.observations)))

    sd = np.sqrt(variance)
    normalized = updated.normalize_1d(4001, mean - 10 * sd, mean + 10 * sd)
    assert normalized.mean() == pytest.approx(mean, abs=1e-8)
    assert normalized.variance() == pytest.approx(variance, rel=1e-6)


def test_sequential_update_empty() -> None:
    post = posterior(0.5)
    assert post.sequential_update(Dataset()) is post


def test_posterior_needs_data() -> None:
    with pytest.raises(DomainError):
        posterior(0.5, data=Dataset())


def test_posterior_rejects_prior_dimension() -> None:
    with pytest.raises(ConfigError):
        posterior(0.5, PriorSpec.normal([0.0, 0.0], [1.0, 1.0]))


def test_mode_objective_scales_criterion_only() -> None:
    post = posterior(0.5)
    expected = post.criterion.empirical_criterion(DATA, [0.8]) + post.prior.log_density([0.8])
    assert post.mode_objective([0.8]) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "flat"},
        {"kind": "normal", "mean": (0.0,), "sd": (0.0,)},
        {"kind": "normal", "mean": (0.0,), "sd": (1.0, 1.0)},
        {"kind": "uniform-box", "bounds": ((-np.inf, 1.0),)},
        {"kind": "uniform-box", "bounds": ((1.0, 1.0),)},
    ],
)
def test_prior_rejects(kwargs: dict) -> None:
    with pytest.raises(ConfigError):
        PriorSpec(**kwargs)


def test_prior_positive_at_truth() -> None:
    PriorSpec.normal([0.0], [1.0]).check_positive_at([3.0])
    with pytest.raises(ConfigError):
        PriorSpec.uniform_box([(0.0, 1.0)]).check_positive_at([1.0])


def test_uniform_prior_scale() -> None:
    prior = PriorSpec.uniform_box([(0.0, 12.0)])
    assert prior.center.tolist() == [6.0]
    assert prior.scale[0] == pytest.approx(12.0 / np.sqrt(12.0))
    assert prior.log_density([3.0]) == pytest.approx(-np.log(12.0))
