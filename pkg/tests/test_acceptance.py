import asyncio

import numpy as np
import pytest

from phibayes.asymptotics import U_n, compute_S, delta_n, posterior_normality_check
from phibayes.config import parse_config
from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.estimators import estimate
from phibayes.families import NormalLocation
from phibayes.posterior import PhiPosterior, PriorSpec
from phibayes.sampler import SamplerConfig
from phibayes.studies import execute, sample_posterior

pytestmark = pytest.mark.slow

FAMILY = NormalLocation()


@pytest.mark.parametrize("seed", [11, 12, 13, 14, 15])
def test_klm_posterior_mean_is_conjugate_mean(seed: int) -> None:
    data = FAMILY.sample([0.5], 50, seed=seed)
    criterion = DualCriterion(FAMILY, DivergenceSpec(0.0), FAMILY.median_estimate(data))
    post = PhiPosterior(criterion, data, PriorSpec.normal([0.0], [10.0]))
    report = estimate(sample_posterior(post, SamplerConfig(steps=60_000, burn_in=10_000), seed=seed))
    exact = np.sum(data.observations) / (data.n + 0.01)
    assert report.mc_se[0] < 0.01
    assert abs(report.point[0] - exact) < 3 * report.mc_se[0]


def test_posterior_is_close_to_normal() -> None:
    gamma = 0.5
    data = FAMILY.sample([0.0], 1000, seed=12)
    criterion = DualCriterion(FAMILY, DivergenceSpec(gamma), [0.0])
    post = PhiPosterior(criterion, data, PriorSpec.normal([0.0], [10.0]))
    chains = sample_posterior(post, SamplerConfig(steps=60_000, burn_in=10_000, chains=4), seed=4)
    S = compute_S(criterion, [0.0], [0.0])
    centre = delta_n([0.0], S, U_n(criterion, data, [0.0], [0.0]))
    result = posterior_normality_check(chains, data.n, S, centre)
    assert result.cov_rel_err < 0.15
    assert result.ks_pvalues[0] > 0.01


@pytest.mark.parametrize("gamma", [0.0, 0.5])
def test_standardized_estimates_are_normal(tmp_path, gamma: float) -> None:
    cfg = parse_config(
        {
            "model": {"family": "NormalLocation", "theta0": [0.0]},
            "divergence": {"gamma": gamma},
            "prior": {"kind": "normal", "mean": [0.0], "sd": [10.0]},
            "mcmc": {"steps": 12_000, "burn_in": 2_000},
            "study": {
                "kind": "MonteCarloNormality",
                "n": 500,
                "replications": 200,
                "master_seed": 2024,
                "output_dir": str(tmp_path),
            },
        }
    )
    outcome = asyncio.run(execute(cfg, jobs=4, timestamp="acceptance"))
    cell = outcome.summary["cells"][0]
    assert cell["failures"] == 0
    assert abs(cell["standardized_mean_mu"]) < 0.15
    assert 0.8 < cell["standardized_var_mu"] < 1.2
    assert cell["ks_pvalue_mu"] > 0.01


def test_credible_interval_coverage(tmp_path) -> None:
    cfg = parse_config(
        {
            "model": {"family": "NormalLocation", "theta0": [0.5]},
            "divergence": {"gamma": "KLm"},
            "prior": {"kind": "normal", "mean": [0.0], "sd": [10.0]},
            "mcmc": {"steps": 12_000, "burn_in": 2_000},
            "study": {
                "kind": "MonteCarloNormality",
                "n": 50,
                "replications": 300,
                "epsilon": 0.05,
                "master_seed": 7,
                "output_dir": str(tmp_path),
            },
        }
    )
    outcome = asyncio.run(execute(cfg, jobs=4, timestamp="coverage"))
    cell = outcome.summary["cells"][0]
    assert cell["failures"] == 0
    assert 0.91 <= cell["coverage_mu"] <= 0.985


def test_contamination_biases_klm_mean(tmp_path) -> None:
    cfg = parse_config(
        {
            "model": {"family": "NormalLocation", "theta0": [0.0]},
            "divergence": {"gamma": ["KLm", "Hellinger"]},
            "mcmc": {"steps": 6_000, "burn_in": 1_000},
            "study": {
                "kind": "RobustnessSweep",
                "n": 200,
                "replications": 20,
                "contamination": [0.0, 0.1],
                "contaminant": {"family": "NormalLocation", "fixed": {"sigma": 0.1}, "theta": [10.0]},
                "output_dir": str(tmp_path),
            },
        }
    )
    outcome = asyncio.run(execute(cfg, jobs=4, timestamp="robustness"))
    cells = {cell["label"]: cell for cell in outcome.summary["cells"]}
    assert set(cells) == {"gamma=0 eps=0", "gamma=0 eps=0.1", "gamma=0.5 eps=0", "gamma=0.5 eps=0.1"}
    for label in ("gamma=0 eps=0", "gamma=0.5 eps=0"):
        cell = cells[label]
        assert abs(cell["bias_mu"]) <= 3 * cell["sd_mu"] / np.sqrt(cell["replications"])
    assert cells["gamma=0 eps=0.1"]["bias_mu"] == pytest.approx(1.0, abs=0.2)
    assert all(cell["failures"] == 0 for cell in cells.values())
