import logging
from functools import lru_cache

import numpy as np

from phibayes.divergence import DivergenceSpec
from phibayes.errors import DivergenceInfinite, DomainError, OptimizationError
from phibayes.families import Dataset, ParametricFamily, ParamVector
from phibayes.models import DualitySupResult
from phibayes.optimize import OptimizerConfig, grid_search, maximize_in_box, refine_scalar
from phibayes.quadrature import Quadrature, QuadratureConfig
from phibayes.utils import fd_gradient

logger = logging.getLogger(__name__)


def _key(values: ParamVector) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(values))


class DualCriterion:
    def __init__(
        self,
        family: ParametricFamily,
        divergence: DivergenceSpec,
        escort: ParamVector,
        quadrature: QuadratureConfig | None = None,
    ) -> None:
        """
        Dual form of the phi-divergence between members of a parametric family:

            h(theta, alpha, x) = int phi'(p_theta / p_alpha) p_theta - g(p_theta(x) / p_alpha(x)),
            g(r) = r phi'(r) - phi(r)

        Args:
            family: parametric family
            divergence: phi function
            escort: escort parameter theta, fixed for the lifetime of the criterion
            quadrature: quadrature settings
        """
        self.family = family
        self.divergence = divergence
        self.escort = family.param(escort)
        self.quadrature_cfg = quadrature or QuadratureConfig()
        self.quadrature = Quadrature(family, self.quadrature_cfg)
        self._inner = lru_cache(maxsize=4096)(self._inner_integral)

    def __getstate__(self) -> dict:
        state = self.__dict__.copy()
        del state["_inner"]
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._inner = lru_cache(maxsize=4096)(self._inner_integral)

    def with_escort(self, escort: ParamVector) -> "DualCriterion":
        return DualCriterion(self.family, self.divergence, escort, self.quadrature_cfg)

    def _inner_integral(self, theta: tuple[float, ...], alpha: tuple[float, ...]) -> float:
        if theta == alpha or self.divergence.is_klm:
            return 0.0
        theta_vec = np.array(theta)
        alpha_vec = np.array(alpha)
        if self.divergence.is_kl and self.quadrature_cfg.closed_forms:
            return self.family.kl_divergence(theta_vec, alpha_vec)

        def integrand(x: np.ndarray) -> np.ndarray:
            return self.divergence.phi_prime_from_log(self.family._log_ratio(theta_vec, alpha_vec, x))

        return self.quadrature.expectation(integrand, theta_vec)

    def inner_integral(self, theta: ParamVector, alpha: ParamVector) -> float:
        """
        int phi'(p_theta / p_alpha) p_theta, memoized per (theta, alpha)

        Args:
            theta: escort-side parameter
            alpha: parameter of the dual variable

        Returns:
            float: value of the integral
        """
        return self._inner(_key(theta), _key(alpha))

    def _bracket(self, theta: np.ndarray, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.divergence.bracket_from_log(self.family._log_ratio(theta, alpha, x))

    def h(self, theta: ParamVector, alpha: ParamVector, x: float | np.ndarray) -> float | np.ndarray:
        """
        Evaluate h(theta, alpha, x)

        Args:
            theta: escort-side parameter
            alpha: parameter of the dual variable
            x: point or array of points in the support

        Returns:
            float: h values
        """
        x = np.asarray(x, dtype=float)
        if not self.family.in_support(x):
            raise DomainError(f"{self.family.name}: x outside the support {self.family.support}")
        theta = np.asarray(theta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        value = self.inner_integral(theta, alpha) - self._bracket(theta, alpha, x)
        return float(value) if np.ndim(value) == 0 else value

    def criterion_sum(self, data: Dataset, alpha: ParamVector) -> float:
        """
        n P_n h(theta, alpha) for the escort theta; the inner integral is computed once
        """
        if data.n < 1:
            raise DomainError("The empirical criterion needs at least one observation")
        alpha = np.asarray(alpha, dtype=float)
        inner = self.inner_integral(self.escort, alpha)
        return float(data.n * inner - np.sum(self._bracket(self.escort, alpha, data.observations)))

    def empirical_criterion(self, data: Dataset, alpha: ParamVector) -> float:
        """
        P_n h(theta, alpha) = (1/n) sum_i h(theta, alpha, X_i) for the escort theta

        Args:
            data: observations, at least one
            alpha: parameter of the dual variable

        Returns:
            float: empirical criterion
        """
        return self.criterion_sum(data, alpha) / data.n

    def population_criterion(self, theta: ParamVector, alpha: ParamVector, theta0: ParamVector) -> float:
        """
        int h(theta, alpha, x) dP_theta0(x)
        """
        theta = np.asarray(theta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        inner = self.inner_integral(theta, alpha)
        if np.array_equal(theta, alpha):
            return inner
        return inner - self.quadrature.expectation(lambda x: self._bracket(theta, alpha, x), theta0)

    def h_gradient(self, theta: ParamVector, alpha: ParamVector, x: np.ndarray, scale: float = 1e-4) -> np.ndarray:
        """
        Finite-difference gradient of h in alpha at every x

        Args:
            theta: escort-side parameter
            alpha: point of differentiation
            x: array of points
            scale: relative finite-difference step

        Returns:
            ndarray: len(x) x d matrix
        """
        theta = np.asarray(theta, dtype=float)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return fd_gradient(lambda a: self.inner_integral(theta, a) - self._bracket(theta, a, x), alpha, scale)

    def divergence_direct(self, theta: ParamVector, alpha0: ParamVector) -> float:
        """
        D_phi(P_theta, P_alpha0) = int phi(p_theta / p_alpha0) p_alpha0 by quadrature

        Args:
            theta: first argument of the divergence
            alpha0: reference measure parameter

        Returns:
            float: divergence, non-negative
        """
        theta = np.asarray(theta, dtype=float)
        alpha0 = np.asarray(alpha0, dtype=float)
        if np.array_equal(theta, alpha0):
            return 0.0
        value = self.quadrature.expectation(
            lambda x: self.divergence.phi_from_log(self.family._log_ratio(theta, alpha0, x)), alpha0
        )
        if value < -self.quadrature_cfg.abs_tol:
            logger.warning(
                f"Divergence between {theta.tolist()} and {alpha0.tolist()} came out as {value:.3g} by quadrature, "
                "reported as 0"
            )
        return max(float(value), 0.0)

    def dual_sup_check(
        self, theta: ParamVector, alpha0: ParamVector, optimizer: OptimizerConfig | None = None
    ) -> DualitySupResult:
        """
        Maximize alpha -> int h(theta, alpha) dP_alpha0 over the parameter box and compare the supremum with the
        directly computed divergence

        Args:
            theta: escort-side parameter
            alpha0: parameter of the data-generating measure
            optimizer: grid and refinement settings

        Returns:
            DualitySupResult: supremum, its argmax and the gap to the direct divergence
        """
        cfg = optimizer or OptimizerConfig()
        theta = self.family.param(theta)
        alpha0 = self.family.param(alpha0)
        bounds = self.family.bounds

        def objective(alpha: np.ndarray) -> float:
            try:
                return self.population_criterion(theta, alpha, alpha0)
            except DivergenceInfinite as e:
                logger.debug(f"Population criterion at {alpha.tolist()} not available: {e}")
                return -np.inf

        start, _, evaluations = grid_search(objective, bounds, cfg.grid_points)
        width = (bounds[:, 1] - bounds[:, 0]) / (cfg.grid_points - 1)
        if self.family.param_dim == 1:
            low = max(start[0] - width[0], bounds[0, 0])
            high = min(start[0] + width[0], bounds[0, 1])
            res = refine_scalar(objective, low, high, cfg)
            trace = [f"grid best {start.tolist()}, bounded refinement: {res.message}"]
            if not res.success:
                raise OptimizationError(f"Refinement of the dual supremum did not converge: {res.message}", trace)
            argmax = np.array([res.x])
            evaluations += int(res.nfev)
        else:
            outcome = maximize_in_box(objective, [start], bounds, cfg, anchor=start)
            trace = outcome.trace
            if not outcome.converged:
                raise OptimizationError("Refinement of the dual supremum did not converge", trace)
            argmax = outcome.x
            evaluations += outcome.evaluations

        sup_value = objective(argmax)
        divergence = self.divergence_direct(theta, alpha0)
        return DualitySupResult(
            sup_value=float(sup_value),
            argmax=argmax,
            divergence=divergence,
            gap=abs(float(sup_value) - divergence),
            evaluations=evaluations,
            trace=trace,
        )
