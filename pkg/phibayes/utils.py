from collections.abc import Callable, Sequence

import numpy as np

from phibayes.errors import DomainError

Seed = int | np.random.SeedSequence | np.random.Generator


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """
    Create a counter-based generator for stream `key` of the master seed, e.g. replication 17 of a study
    gets make_rng(master, 17) no matter how many replications run before it

    Args:
        seed: master seed, 64-bit unsigned
        key: spawn key of the stream

    Returns:
        Generator: Philox generator
    """
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"Seed {seed} is not a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def as_generator(seed: Seed) -> np.random.Generator:
    """
    Turn a seed, seed sequence or ready generator into a generator

    Args:
        seed: int seed, SeedSequence or Generator

    Returns:
        Generator: generator to draw from
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return make_rng(int(seed))


def fd_steps(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * (1.0 + np.abs(x))


def fd_gradient(fn: Callable[[np.ndarray], np.ndarray | float], x: Sequence[float], scale: float = 1e-4) -> np.ndarray:
    """
    Central finite-difference gradient with one Richardson extrapolation step. `fn` may return an array,
    the coordinate axis of the result is then the last one

    Args:
        fn: function of the parameter vector
        x: point to differentiate at
        scale: relative step, the step of coordinate j is scale * (1 + |x_j|)

    Returns:
        ndarray: gradient, shape fn(x).shape + (d,)
    """
    x = np.asarray(x, dtype=float)
    steps = fd_steps(x, scale)
    columns = []
    for j in range(x.size):

        def central(step: float, j: int = j) -> np.ndarray:
            shift = np.zeros_like(x)
            shift[j] = step
            return (np.asarray(fn(x + shift)) - np.asarray(fn(x - shift))) / (2.0 * step)

        coarse = central(steps[j])
        fine = central(steps[j] / 2.0)
        columns.append((4.0 * fine - coarse) / 3.0)

    return np.stack(columns, axis=-1)


def fd_hessian(fn: Callable[[np.ndarray], float], x: Sequence[float], scale: float = 1e-3) -> np.ndarray:
    """
    Central finite-difference Hessian of a scalar function, Richardson extrapolated once. The matrix is
    returned as computed, callers symmetrize

    Args:
        fn: scalar function of the parameter vector
        x: point to differentiate at
        scale: relative step, the step of coordinate j is scale * (1 + |x_j|)

    Returns:
        ndarray: d x d matrix
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    steps = fd_steps(x, scale)

    def second(i: int, j: int, factor: float) -> float:
        hi = steps[i] * factor
        hj = steps[j] * factor
        ei = np.zeros(d)
        ej = np.zeros(d)
        ei[i] = hi
        ej[j] = hj
        if i == j:
            return (fn(x + ei) - 2.0 * fn(x) + fn(x - ei)) / (hi * hi)
        return (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (4.0 * hi * hj)

    hessian = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            hessian[i, j] = (4.0 * second(i, j, 0.5) - second(i, j, 1.0)) / 3.0

    return hessian


def symmetric_power(matrix: np.ndarray, power: float, floor: float = 1e-12) -> np.ndarray:
    """
    Symmetric PSD matrix power through the eigendecomposition, eigenvalues floored at `floor`

    Args:
        matrix: symmetric matrix
        power: exponent, e.g. -0.5 for the inverse square root
        floor: smallest eigenvalue kept

    Returns:
        ndarray: matrix power
    """
    values, vectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    values = np.maximum(values, floor)
    return (vectors * values**power) @ vectors.T
