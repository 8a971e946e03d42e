import logging
import threading
from dataclasses import dataclass

import numpy as np

from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, DivergenceInfinite, DomainError, PosteriorUnderflow
from phibayes.families import Dataset, ParametricFamily, ParamVector
from phibayes.models import NormalizedPosterior

logger = logging.getLogger(__name__)

PRIOR_KINDS = ("normal", "uniform-box")

# normalization fails when even the best grid point has a log value below this
UNDERFLOW_LOG = -700.0


@dataclass(frozen=True)
class PriorSpec:
    """
    Proper prior on the parameter box: independent normals per coordinate or uniform on a bounded box.
    Both kinds have a finite first absolute moment
    """

    kind: str
    mean: tuple[float, ...] = ()
    sd: tuple[float, ...] = ()
    bounds: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PRIOR_KINDS:
            raise ConfigError(f"prior.kind: {self.kind!r} is not one of {PRIOR_KINDS}")
        if self.kind == "normal":
            if len(self.mean) == 0 or len(self.mean) != len(self.sd):
                raise ConfigError("prior.mean and prior.sd must have one entry per parameter")
            if not all(np.isfinite(s) and s > 0 for s in self.sd):
                raise ConfigError("prior.sd must be positive and finite")
        else:
            bounds = np.asarray(self.bounds, dtype=float)
            if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] == 0:
                raise ConfigError("prior.bounds must be a list of (low, high) pairs")
            if not np.all(np.isfinite(bounds)):
                raise ConfigError("prior.bounds must be finite, improper flat priors are not accepted")
            if np.any(bounds[:, 0] >= bounds[:, 1]):
                raise ConfigError("prior.bounds: every low must be below its high")

    @classmethod
    def normal(cls, mean: list[float], sd: list[float]) -> "PriorSpec":
        return cls("normal", mean=tuple(float(m) for m in mean), sd=tuple(float(s) for s in sd))

    @classmethod
    def uniform_box(cls, bounds: list[tuple[float, float]] | np.ndarray) -> "PriorSpec":
        return cls("uniform-box", bounds=tuple((float(lo), float(hi)) for lo, hi in bounds))

    @property
    def dim(self) -> int:
        return len(self.mean) if self.kind == "normal" else len(self.bounds)

    @property
    def center(self) -> np.ndarray:
        if self.kind == "normal":
            return np.array(self.mean)
        return np.asarray(self.bounds, dtype=float).mean(axis=1)

    @property
    def scale(self) -> np.ndarray:
        if self.kind == "normal":
            return np.array(self.sd)
        bounds = np.asarray(self.bounds, dtype=float)
        return (bounds[:, 1] - bounds[:, 0]) / np.sqrt(12.0)

    def log_density(self, alpha: ParamVector) -> float:
        alpha = np.asarray(alpha, dtype=float)
        if self.kind == "normal":
            z = (alpha - self.center) / self.scale
            return float(np.sum(-0.5 * z * z - np.log(self.scale)) - 0.5 * alpha.size * np.log(2.0 * np.pi))
        bounds = np.asarray(self.bounds, dtype=float)
        if np.any(alpha < bounds[:, 0]) or np.any(alpha > bounds[:, 1]):
            return -np.inf
        return float(-np.sum(np.log(bounds[:, 1] - bounds[:, 0])))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "normal":
            return self.center + self.scale * rng.standard_normal(self.dim)
        bounds = np.asarray(self.bounds, dtype=float)
        return rng.uniform(bounds[:, 0], bounds[:, 1])

    def check_positive_at(self, theta0: ParamVector) -> None:
        """
        Prior must be continuous and strictly positive at the true parameter
        """
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.size != self.dim:
            raise ConfigError(f"prior has {self.dim} coordinates, theta0 has {theta0.size}")
        if self.kind == "uniform-box":
            bounds = np.asarray(self.bounds, dtype=float)
            if np.any(theta0 <= bounds[:, 0]) or np.any(theta0 >= bounds[:, 1]):
                raise ConfigError(f"prior.bounds must contain theta0 = {theta0.tolist()} in their interior")
        if not np.isfinite(self.log_density(theta0)):
            raise ConfigError(f"prior density is not positive at theta0 = {theta0.tolist()}")


class PhiPosterior:
    def __init__(self, criterion: DualCriterion, data: Dataset, prior: PriorSpec, temper: float = 1.0) -> None:
        """
        Unnormalized phi-posterior exp{n P_n h(theta, alpha)} pi(alpha)

        Args:
            criterion: dual criterion, carries the escort theta
            data: observations, at least one
            prior: proper prior
            temper: multiplier of the criterion term, 1 for the plain phi-posterior
        """
        if data.n < 1:
            raise DomainError("The phi-posterior needs at least one observation")
        criterion.family.check_data(data)
        if prior.dim != criterion.family.param_dim:
            raise ConfigError(f"prior has {prior.dim} coordinates, the model has {criterion.family.param_dim}")
        if not temper > 0:
            raise ConfigError(f"temper must be positive, got {temper}")
        self.criterion = criterion
        self.data = data
        self.prior = prior
        self.temper = float(temper)
        self.divergence_warnings = 0
        self._warnings_lock = threading.Lock()

    def __getstate__(self) -> dict:
        state = self.__dict__.copy()
        del state["_warnings_lock"]
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._warnings_lock = threading.Lock()

    @property
    def family(self) -> ParametricFamily:
        return self.criterion.family

    @property
    def escort(self) -> ParamVector:
        return self.criterion.escort

    @property
    def n(self) -> int:
        return self.data.n

    def log_unnormalized(self, alpha: ParamVector) -> float:
        """
        n P_n h(theta, alpha) + ln pi(alpha), -inf outside the parameter box or the prior support

        Args:
            alpha: parameter value

        Returns:
            float: unnormalized log-density
        """
        alpha = np.asarray(alpha, dtype=float)
        if not self.family.contains(alpha):
            return -np.inf
        log_prior = self.prior.log_density(alpha)
        if not np.isfinite(log_prior):
            return -np.inf
        try:
            total = self.criterion.criterion_sum(self.data, alpha)
        except DivergenceInfinite as e:
            with self._warnings_lock:
                self.divergence_warnings += 1
                count = self.divergence_warnings
            log = logger.warning if count == 1 else logger.debug
            log(f"Criterion at {alpha.tolist()} is infinite ({count} so far), state rejected: {e}")
            return -np.inf
        return self.temper * total + log_prior

    def __call__(self, alpha: ParamVector) -> float:
        return self.log_unnormalized(alpha)

    def mode_objective(self, alpha: ParamVector) -> float:
        """
        P_n h(theta, alpha) + ln pi(alpha), the log prior not scaled by n
        """
        alpha = np.asarray(alpha, dtype=float)
        if not self.family.contains(alpha):
            return -np.inf
        log_prior = self.prior.log_density(alpha)
        if not np.isfinite(log_prior):
            return -np.inf
        try:
            return self.criterion.empirical_criterion(self.data, alpha) + log_prior
        except DivergenceInfinite:
            return -np.inf

    def normalize_1d(
        self, points: int = 4001, lower: float | None = None, upper: float | None = None
    ) -> NormalizedPosterior:
        """
        Normalize the posterior on a regular grid by the trapezoid rule, for one-parameter models

        Args:
            points: grid size
            lower: left end of the grid, defaults to the parameter box
            upper: right end of the grid, defaults to the parameter box

        Returns:
            NormalizedPosterior: grid, density values and log normalizing constant
        """
        if self.family.param_dim != 1:
            raise DomainError("normalize_1d needs a one-parameter model")
        box = self.family.bounds[0]
        grid = np.linspace(box[0] if lower is None else lower, box[1] if upper is None else upper, points)
        log_values = np.array([self.log_unnormalized([a]) for a in grid])
        peak = np.max(log_values)
        if not np.isfinite(peak) or peak < UNDERFLOW_LOG:
            raise PosteriorUnderflow(f"Posterior underflows on the whole grid (max log value {peak:.4g})")

        unnormalized = np.exp(log_values - peak)
        mass = np.trapezoid(unnormalized, grid)
        return NormalizedPosterior(grid=grid, density=unnormalized / mass, log_normalizer=float(peak + np.log(mass)))

    def sequential_update(self, new_data: Dataset) -> "PhiPosterior":
        """
        Posterior for the combined data; the escort and the prior are kept

        Args:
            new_data: additional observations, may be empty

        Returns:
            PhiPosterior: posterior of the old and new observations together
        """
        if new_data.n == 0:
            return self
        self.family.check_data(new_data)
        return PhiPosterior(self.criterion, self.data.concat(new_data), self.prior, self.temper)
