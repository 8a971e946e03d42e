import numpy as np
import pytest

from phibayes.errors import ConfigError, DivergenceInfinite
from phibayes.families import Exponential, NormalLocation, NormalLocationScale
from phibayes.quadrature import Quadrature, QuadratureConfig

CASES = [
    (NormalLocation(sigma=1.5), [0.7]),
    (NormalLocationScale(), [-1.0, 2.0]),
    (Exponential(), [2.0]),
    (Exponential(), [0.05]),
]


@pytest.mark.parametrize("family, theta", CASES)
def test_density_integrates_to_one(family, theta: list) -> None:
    total = Quadrature(family).expectation(lambda x: np.ones_like(x), np.array(theta))
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("family, theta", CASES)
def test_moments(family, theta: list) -> None:
    quadrature = Quadrature(family)
    mean, sd = family.moments(np.array(theta))
    assert quadrature.expectation(lambda x: x, np.array(theta)) == pytest.approx(mean, rel=1e-9)
    variance = quadrature.expectation(lambda x: (x - mean) ** 2, np.array(theta))
    assert variance == pytest.approx(sd**2, rel=1e-9)


@pytest.mark.parametrize(
    "family, theta, alpha",
    [
        (NormalLocation(), [1.0], [0.0]),
        (NormalLocationScale(), [0.5, 1.0], [0.0, 2.0]),
        (Exponential(), [2.0], [0.5]),
    ],
)
def test_kl_closed_form_matches_quadrature(family, theta: list, alpha: list) -> None:
    theta, alpha = np.array(theta), np.array(alpha)
    value = Quadrature(family).expectation(lambda x: family._log_ratio(theta, alpha, x), theta)
    assert value == pytest.approx(family.kl_divergence(theta, alpha), rel=1e-9)


def test_vector_valued_integrand() -> None:
    value = Quadrature(NormalLocation()).expectation(lambda x: np.stack([x, x**2], axis=-1), np.array([1.0]))
    assert value.shape == (2,)
    assert np.allclose(value, [1.0, 2.0])


def test_adaptive_scheme() -> None:
    quadrature = Quadrature(NormalLocation(), QuadratureConfig(scheme="adaptive"))
    assert quadrature.expectation(lambda x: x**2, np.array([2.0])) == pytest.approx(5.0, rel=1e-7)


def test_unstable_integral_is_infinite() -> None:
    with pytest.raises(DivergenceInfinite):
        Quadrature(NormalLocation()).expectation(lambda x: np.exp(x**2), np.array([0.0]))


def test_unknown_scheme() -> None:
    with pytest.raises(ConfigError):
        QuadratureConfig(scheme="simpson")


def test_hermite_needs_real_line() -> None:
    quadrature = Quadrature(Exponential(), QuadratureConfig(scheme="gauss-hermite"))
    with pytest.raises(ConfigError):
        quadrature.expectation(lambda x: x, np.array([1.0]))
