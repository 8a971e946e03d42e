import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from phibayes.errors import ConfigError, DomainError
from phibayes.utils import Seed, as_generator

logger = logging.getLogger(__name__)

ParamVector = np.ndarray

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
MAD_TO_SD = 1.482602218505602


@dataclass(frozen=True)
class Dataset:
    observations: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        values = np.array(self.observations, dtype=float).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "observations", values)

    @property
    def n(self) -> int:
        return int(self.observations.size)

    def __len__(self) -> int:
        return self.n

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.observations, other.observations]))

    def split(self, fraction: float) -> tuple["Dataset", "Dataset"]:
        """
        Split into a leading part holding round(fraction * n) observations and the rest
        """
        cut = int(round(fraction * self.n))
        return Dataset(self.observations[:cut]), Dataset(self.observations[cut:])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        """
        Load single-column CSV with header `x`

        Args:
            path: path to the CSV file

        Returns:
            Dataset: loaded observations
        """
        frame = pd.read_csv(path)
        if list(frame.columns) != ["x"]:
            raise ConfigError(f"{path}: expected a single column with header 'x', got {list(frame.columns)}")
        return cls(frame["x"].to_numpy(dtype=float))

    def to_csv(self) -> str:
        return pd.DataFrame({"x": self.observations}).to_csv(index=False, float_format="%.17g")


class ParametricFamily(ABC):
    name: str
    param_names: tuple[str, ...]
    support: tuple[float, float]

    def __init__(self, bounds: list[tuple[float, float]] | None = None) -> None:
        self.bounds = np.array(bounds if bounds is not None else self.default_bounds(), dtype=float)
        if self.bounds.shape != (self.param_dim, 2) or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ConfigError(f"{self.name}: parameter box must be {self.param_dim} (low, high) pairs")

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    @property
    def fixed_params(self) -> dict[str, float]:
        return {}

    @abstractmethod
    def default_bounds(self) -> list[tuple[float, float]]: ...

    @abstractmethod
    def _log_density(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _draw(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def cdf(self, theta: ParamVector, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def fisher_information(self, theta: ParamVector) -> np.ndarray: ...

    @abstractmethod
    def kl_divergence(self, theta: ParamVector, alpha: ParamVector) -> float:
        """
        Closed-form KL(P_theta || P_alpha)
        """

    @abstractmethod
    def moments(self, theta: ParamVector) -> tuple[float, float]:
        """
        Mean and standard deviation of P_theta
        """

    @abstractmethod
    def mle(self, data: Dataset) -> ParamVector: ...

    @abstractmethod
    def median_estimate(self, data: Dataset) -> ParamVector:
        """
        Consistent plug-in estimate built from the sample median (and MAD for scales)
        """

    @property
    def gaussian_support(self) -> bool:
        return self.support == (-np.inf, np.inf)

    def param(self, values: ParamVector | list[float] | float) -> ParamVector:
        """
        Convert to a parameter vector of this family, checking it lies in the parameter box

        Args:
            values: parameter values

        Returns:
            ParamVector: float array of length param_dim
        """
        theta = np.atleast_1d(np.asarray(values, dtype=float))
        if theta.shape != (self.param_dim,):
            raise DomainError(f"{self.name} expects {self.param_dim} parameters, got {theta.tolist()}")
        if not self.contains(theta):
            raise DomainError(f"{self.name}: {theta.tolist()} lies outside the parameter box {self.bounds.tolist()}")
        return theta

    def contains(self, theta: ParamVector) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.bounds[:, 0]) and np.all(theta <= self.bounds[:, 1]))

    def in_support(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.support[0]) & (x <= self.support[1])))

    def check_data(self, data: Dataset) -> None:
        if not self.in_support(data.observations):
            raise DomainError(f"{self.name}: observations outside the support {self.support}")

    def log_density(self, theta: ParamVector, x: float | np.ndarray) -> float | np.ndarray:
        """
        Evaluate ln p_theta(x)

        Args:
            theta: parameter vector
            x: point or array of points in the support

        Returns:
            float: log-density
        """
        x = np.asarray(x, dtype=float)
        if not self.in_support(x):
            raise DomainError(f"{self.name}: x outside the support {self.support}")
        value = self._log_density(np.asarray(theta, dtype=float), x)
        return float(value) if value.ndim == 0 else value

    def log_density_ratio(self, theta: ParamVector, alpha: ParamVector, x: float | np.ndarray) -> float | np.ndarray:
        """
        ln p_theta(x) - ln p_alpha(x), computed in log-space

        Args:
            theta: numerator parameter
            alpha: denominator parameter
            x: point or array of points in the support

        Returns:
            float: log density ratio
        """
        x = np.asarray(x, dtype=float)
        if not self.in_support(x):
            raise DomainError(f"{self.name}: x outside the support {self.support}")
        value = self._log_ratio(np.asarray(theta, dtype=float), np.asarray(alpha, dtype=float), x)
        return float(value) if value.ndim == 0 else value

    def _log_ratio(self, theta: np.ndarray, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._log_density(theta, x) - self._log_density(alpha, x)

    def draw(self, theta: ParamVector, n: int, rng: np.random.Generator) -> np.ndarray:
        return self._draw(np.asarray(theta, dtype=float), n, rng)

    def sample(self, theta: ParamVector, n: int, seed: Seed) -> Dataset:
        """
        Draw n i.i.d. observations from P_theta

        Args:
            theta: parameter vector
            n: sample size, at least 1
            seed: seed or generator, equal seeds give equal draws

        Returns:
            Dataset: simulated data
        """
        if n < 1:
            raise DomainError(f"Sample size must be at least 1, got {n}")
        return Dataset(self.draw(theta, n, as_generator(seed)))

    def describe(self) -> dict:
        return {"family": self.name, "fixed": self.fixed_params, "bounds": self.bounds.tolist()}


class NormalLocation(ParametricFamily):
    name = "NormalLocation"
    param_names = ("mu",)
    support = (-np.inf, np.inf)

    def __init__(self, sigma: float = 1.0, bounds: list[tuple[float, float]] | None = None) -> None:
        if not sigma > 0:
            raise ConfigError(f"NormalLocation: sigma must be positive, got {sigma}")
        self.sigma = float(sigma)
        super().__init__(bounds)

    @property
    def fixed_params(self) -> dict[str, float]:
        return {"sigma": self.sigma}

    def default_bounds(self) -> list[tuple[float, float]]:
        return [(-10.0, 10.0)]

    def _log_density(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        z = (x - theta[0]) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - LOG_SQRT_2PI

    def _log_ratio(self, theta: np.ndarray, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        return (theta[0] - alpha[0]) * (x - 0.5 * (theta[0] + alpha[0])) / self.sigma**2

    def _draw(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        return theta[0] + self.sigma * rng.standard_normal(n)

    def cdf(self, theta: ParamVector, x: np.ndarray) -> np.ndarray:
        return stats.norm.cdf(x, loc=theta[0], scale=self.sigma)

    def fisher_information(self, theta: ParamVector) -> np.ndarray:
        return np.array([[1.0 / self.sigma**2]])

    def kl_divergence(self, theta: ParamVector, alpha: ParamVector) -> float:
        return float(0.5 * (theta[0] - alpha[0]) ** 2 / self.sigma**2)

    def moments(self, theta: ParamVector) -> tuple[float, float]:
        return float(theta[0]), self.sigma

    def mle(self, data: Dataset) -> ParamVector:
        return np.array([np.mean(data.observations)])

    def median_estimate(self, data: Dataset) -> ParamVector:
        return np.array([np.median(data.observations)])


class NormalLocationScale(ParametricFamily):
    name = "NormalLocationScale"
    param_names = ("mu", "sigma")
    support = (-np.inf, np.inf)

    def default_bounds(self) -> list[tuple[float, float]]:
        return [(-10.0, 10.0), (0.05, 20.0)]

    def _log_density(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        z = (x - theta[0]) / theta[1]
        return -0.5 * z * z - np.log(theta[1]) - LOG_SQRT_2PI

    def _draw(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        return theta[0] + theta[1] * rng.standard_normal(n)

    def cdf(self, theta: ParamVector, x: np.ndarray) -> np.ndarray:
        return stats.norm.cdf(x, loc=theta[0], scale=theta[1])

    def fisher_information(self, theta: ParamVector) -> np.ndarray:
        return np.diag([1.0 / theta[1] ** 2, 2.0 / theta[1] ** 2])

    def kl_divergence(self, theta: ParamVector, alpha: ParamVector) -> float:
        ratio = theta[1] ** 2 / alpha[1] ** 2
        return float(0.5 * (ratio - 1.0 - np.log(ratio)) + 0.5 * (theta[0] - alpha[0]) ** 2 / alpha[1] ** 2)

    def moments(self, theta: ParamVector) -> tuple[float, float]:
        return float(theta[0]), float(theta[1])

    def mle(self, data: Dataset) -> ParamVector:
        return np.array([np.mean(data.observations), np.std(data.observations)])

    def median_estimate(self, data: Dataset) -> ParamVector:
        median = np.median(data.observations)
        mad = np.median(np.abs(data.observations - median))
        return np.array([median, max(MAD_TO_SD * mad, self.bounds[1, 0])])


class Exponential(ParametricFamily):
    name = "Exponential"
    param_names = ("rate",)
    support = (0.0, np.inf)

    def default_bounds(self) -> list[tuple[float, float]]:
        return [(0.01, 100.0)]

    def _log_density(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.log(theta[0]) - theta[0] * x

    def _log_ratio(self, theta: np.ndarray, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.log(theta[0] / alpha[0]) - (theta[0] - alpha[0]) * x

    def _draw(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_exponential(n) / theta[0]

    def cdf(self, theta: ParamVector, x: np.ndarray) -> np.ndarray:
        return stats.expon.cdf(x, scale=1.0 / theta[0])

    def fisher_information(self, theta: ParamVector) -> np.ndarray:
        return np.array([[1.0 / theta[0] ** 2]])

    def kl_divergence(self, theta: ParamVector, alpha: ParamVector) -> float:
        ratio = alpha[0] / theta[0]
        return float(ratio - 1.0 - np.log(ratio))

    def moments(self, theta: ParamVector) -> tuple[float, float]:
        return 1.0 / theta[0], 1.0 / theta[0]

    def mle(self, data: Dataset) -> ParamVector:
        return np.array([1.0 / np.mean(data.observations)])

    def median_estimate(self, data: Dataset) -> ParamVector:
        return np.array([np.log(2.0) / np.median(data.observations)])


FAMILIES: dict[str, type[ParametricFamily]] = {
    NormalLocation.name: NormalLocation,
    NormalLocationScale.name: NormalLocationScale,
    Exponential.name: Exponential,
}


def build_family(name: str, fixed: dict | None = None, bounds: list | None = None) -> ParametricFamily:
    """
    Create family from the `model.family` / `model.fixed` config values

    Args:
        name: family name, one of NormalLocation, NormalLocationScale, Exponential
        fixed: known parameters, e.g. {"sigma": 1.0} for NormalLocation
        bounds: parameter box, defaults per family

    Returns:
        ParametricFamily: family object
    """
    try:
        family_cls = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"model.family: unknown family {name!r}, expected one of {sorted(FAMILIES)}") from None

    fixed = dict(fixed or {})
    try:
        return family_cls(**fixed, bounds=bounds)
    except TypeError:
        raise ConfigError(f"model.fixed: {sorted(fixed)} are not known parameters of {name}") from None
