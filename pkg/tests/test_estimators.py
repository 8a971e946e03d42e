import numpy as np
import pytest

from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, DomainError, TooShort
from phibayes.estimators import (
    LossSpec,
    credible_interval,
    default_escort_mode,
    dual_mle,
    estimate,
    posterior_mode,
    posterior_mode_of_phi_posterior,
    select_escort,
)
from phibayes.families import Dataset, Exponential, NormalLocation
from phibayes.models import ChainDraws
from phibayes.posterior import PhiPosterior, PriorSpec
from phibayes.utils import make_rng

FAMILY = NormalLocation()
DATA = FAMILY.sample([0.4], 50, seed=8)


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


@pytest.mark.parametrize("loss", [LossSpec("squared"), LossSpec("absolute"), LossSpec("quantile", 0.9)])
def test_constant_chain(loss: LossSpec) -> None:
    report = estimate(make_chain(np.full(2000, 1.25)), loss)
    assert report.point.tolist() == [1.25]
    assert report.ci.tolist() == [[1.25, 1.25]]
    assert report.mc_se.tolist() == [0.0]


def test_posterior_mean_is_chain_mean() -> None:
    draws = make_rng(1).standard_normal((1500, 2))
    report = estimate(make_chain(draws))
    assert report.estimator == "posterior-mean"
    assert np.array_equal(report.point, np.mean(draws, axis=0))
    assert np.all(report.mc_se > 0)


def test_median_equals_half_quantile() -> None:
    chain = make_chain(make_rng(2).standard_normal(1001))
    median = estimate(chain, LossSpec("absolute"))
    quantile = estimate(chain, LossSpec("quantile", 0.5))
    assert np.array_equal(median.point, quantile.point)
    assert quantile.estimator == "quantile(0.5)"


def test_pooled_chains() -> None:
    rng = make_rng(3)
    chains = [make_chain(rng.standard_normal(600)) for _ in range(2)]
    report = estimate(chains)
    assert report.point[0] == pytest.approx(np.mean(np.concatenate([c.draws for c in chains])))
    assert len(report.chain_meta) == 2
    assert not np.isnan(report.ci).any()


def test_short_chain_has_no_interval() -> None:
    report = estimate(make_chain(make_rng(4).standard_normal(500)))
    assert np.isnan(report.ci).all()


def test_estimate_too_short() -> None:
    with pytest.raises(TooShort):
        estimate(make_chain(np.zeros(50)))


def test_credible_interval_of_standard_normal() -> None:
    draws = make_rng(5).standard_normal((100_000, 1))
    low, high = credible_interval(draws, lambda a: a[0], 0.05)
    assert low == pytest.approx(-1.96, abs=0.05)
    assert high == pytest.approx(1.96, abs=0.05)


def test_credible_interval_is_equivariant() -> None:
    draws = make_rng(6).standard_normal((1001, 1))
    low, high = credible_interval(draws, lambda a: a[0], 0.05)
    exp_low, exp_high = credible_interval(draws, lambda a: np.exp(a[0]), 0.05)
    assert exp_low == pytest.approx(np.exp(low), rel=1e-12)
    assert exp_high == pytest.approx(np.exp(high), rel=1e-12)


@pytest.mark.parametrize("epsilon", [0.0, 1.0])
def test_credible_interval_rejects_epsilon(epsilon: float) -> None:
    with pytest.raises(ConfigError):
        credible_interval(np.zeros((2000, 1)), lambda a: a[0], epsilon)


def test_credible_interval_too_short() -> None:
    with pytest.raises(TooShort):
        credible_interval(np.zeros((999, 1)), lambda a: a[0])


@pytest.mark.parametrize("kind, tau", [("quantile", 1.0), ("quantile", None), ("huber", None)])
def test_loss_rejects(kind: str, tau: float | None) -> None:
    with pytest.raises(ConfigError):
        LossSpec(kind, tau)


def test_dual_mle_klm_is_sample_mean() -> None:
    criterion = DualCriterion(FAMILY, DivergenceSpec(0.0), FAMILY.median_estimate(DATA))
    assert dual_mle(criterion, DATA)[0] == pytest.approx(np.mean(DATA.observations), abs=1e-7)


def test_dual_mle_symmetric_sample() -> None:
    centre = 1.3
    data = Dataset(centre + np.array([-2.0, -1.1, -0.3, 0.0, 0.3, 1.1, 2.0]))
    criterion = DualCriterion(FAMILY, DivergenceSpec(0.5), [centre])
    assert dual_mle(criterion, data)[0] == pytest.approx(centre, abs=1e-6)


def test_modes_coincide_under_flat_prior() -> None:
    criterion = DualCriterion(FAMILY, DivergenceSpec(0.5), FAMILY.median_estimate(DATA))
    post = PhiPosterior(criterion, DATA, PriorSpec.uniform_box(FAMILY.bounds))
    expected = dual_mle(criterion, DATA)
    assert posterior_mode(post)[0] == pytest.approx(expected[0], abs=1e-6)
    assert posterior_mode_of_phi_posterior(post)[0] == pytest.approx(expected[0], abs=1e-6)


def test_tight_prior_dominates_mode() -> None:
    criterion = DualCriterion(FAMILY, DivergenceSpec(0.5), FAMILY.median_estimate(DATA))
    post = PhiPosterior(criterion, DATA, PriorSpec.normal([2.0], [1e-6]))
    assert posterior_mode(post)[0] == pytest.approx(2.0, abs=1e-4)


def test_select_escort_modes() -> None:
    assert select_escort("fixed", FAMILY, DATA, value=[0.1]).tolist() == [0.1]
    assert select_escort("oracle", FAMILY, DATA, theta0=[0.4]).tolist() == [0.4]
    assert select_escort("plugin-median", FAMILY, DATA).tolist() == [np.median(DATA.observations)]
    mle = select_escort("plugin-mle", FAMILY, DATA)
    assert mle[0] == pytest.approx(np.mean(DATA.observations), abs=1e-6)


def test_select_escort_exponential_mle() -> None:
    family = Exponential()
    data = family.sample([2.0], 200, seed=1)
    escort = select_escort("plugin-mle", family, data)
    assert escort[0] == pytest.approx(1.0 / np.mean(data.observations), rel=1e-5)


@pytest.mark.parametrize("mode, kwargs", [("fixed", {}), ("oracle", {}), ("sample", {})])
def test_select_escort_rejects(mode: str, kwargs: dict) -> None:
    with pytest.raises(ConfigError):
        select_escort(mode, FAMILY, DATA, **kwargs)


def test_select_escort_fixed_outside_box() -> None:
    with pytest.raises(DomainError):
        select_escort("fixed", FAMILY, DATA, value=[50.0])


def test_default_escort_mode() -> None:
    assert default_escort_mode(FAMILY) == "plugin-median"
    assert default_escort_mode(Exponential()) == "plugin-mle"
