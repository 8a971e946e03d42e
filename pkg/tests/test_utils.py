import numpy as np
import pytest

from phibayes.errors import DomainError
from phibayes.utils import as_generator, fd_gradient, fd_hessian, make_rng, symmetric_power


def test_make_rng_is_deterministic() -> None:
    assert np.array_equal(make_rng(42, 3).random(5), make_rng(42, 3).random(5))


@pytest.mark.parametrize("key_a, key_b", [((0,), (1,)), ((3,), (3, 1, 0)), ((3, 1, 0), (3, 1, 1))])
def test_make_rng_streams_differ(key_a: tuple, key_b: tuple) -> None:
    assert not np.array_equal(make_rng(7, *key_a).random(5), make_rng(7, *key_b).random(5))


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_make_rng_rejects_seed(seed: int) -> None:
    with pytest.raises(DomainError):
        make_rng(seed)


def test_as_generator_passes_generator_through() -> None:
    rng = make_rng(1)
    assert as_generator(rng) is rng
    assert np.array_equal(as_generator(5).random(3), make_rng(5).random(3))


@pytest.mark.parametrize("x", [[0.0], [1.5, -2.0], [3.0, 0.5, -1.0]])
def test_fd_gradient_of_quadratic(x: list) -> None:
    a = np.arange(1.0, len(x) + 1.0)
    gradient = fd_gradient(lambda v: float(np.sum(a * v**2)), x)
    assert gradient == pytest.approx(2.0 * a * np.asarray(x), abs=1e-8)


def test_fd_gradient_of_vector_function() -> None:
    points = np.array([0.0, 1.0, 2.0])
    gradient = fd_gradient(lambda v: v[0] * points + v[1] ** 2, [2.0, 3.0])
    assert gradient.shape == (3, 2)
    assert gradient[:, 0] == pytest.approx(points, abs=1e-8)
    assert gradient[:, 1] == pytest.approx([6.0, 6.0, 6.0], abs=1e-8)


def test_fd_hessian_of_quadratic_form() -> None:
    matrix = np.array([[2.0, 0.5], [0.5, 1.0]])
    hessian = fd_hessian(lambda v: 0.5 * float(v @ matrix @ v), [0.3, -0.7])
    assert np.allclose(hessian, matrix, atol=1e-7)


def test_symmetric_power_inverse_root() -> None:
    matrix = np.array([[4.0, 1.0], [1.0, 3.0]])
    root = symmetric_power(matrix, -0.5)
    assert np.allclose(root, root.T)
    assert np.allclose(root @ matrix @ root, np.eye(2), atol=1e-12)


def test_symmetric_power_floors_eigenvalues() -> None:
    root = symmetric_power(np.zeros((1, 1)), -0.5)
    assert root[0, 0] == pytest.approx(1e6)
