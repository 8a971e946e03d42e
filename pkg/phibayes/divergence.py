"""
Cressie-Read power divergences, evaluated in log-space
"""

import itertools
from dataclasses import dataclass

import numpy as np

from phibayes.errors import ConfigError, DivergenceOverflow, DomainError
from phibayes.models import GrowthCheck

PRESETS = {
    "KLm": 0.0,
    "KL": 1.0,
    "Hellinger": 0.5,
    "ChiSquared": 2.0,
}

# below this distance from 0 or 1 the closed-form limits replace the 0/0 formula
LIMIT_TOL = 1e-6

MAX_LOG = 709.0

GROWTH_C1 = (1.0, 1.5, 2.0, 3.0, 4.0, 8.0)
GROWTH_C2 = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
GROWTH_C3 = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class DivergenceSpec:
    gamma: float

    @classmethod
    def from_config(cls, value: str | float | int) -> "DivergenceSpec":
        """
        Build spec from the `divergence.gamma` config value

        Args:
            value: plain decimal or one of the preset names "KLm", "KL", "Hellinger", "ChiSquared"

        Returns:
            DivergenceSpec: new spec
        """
        if isinstance(value, str):
            if value in PRESETS:
                return cls(PRESETS[value])
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"divergence.gamma: unknown divergence {value!r}") from None
        if isinstance(value, bool) or not np.isfinite(value):
            raise ConfigError(f"divergence.gamma: {value!r} is not a finite real")
        return cls(float(value))

    @property
    def name(self) -> str:
        for name, gamma in PRESETS.items():
            if gamma == self.gamma:
                return name
        return f"gamma={self.gamma:g}"

    @property
    def is_klm(self) -> bool:
        return abs(self.gamma) < LIMIT_TOL

    @property
    def is_kl(self) -> bool:
        return abs(self.gamma - 1.0) < LIMIT_TOL

    def phi_from_log(self, log_x: np.ndarray) -> np.ndarray:
        gamma = self.gamma
        with np.errstate(over="ignore", invalid="ignore"):
            if self.is_klm:
                return np.expm1(log_x) - log_x
            if self.is_kl:
                return np.exp(log_x) * log_x - np.expm1(log_x)
            if gamma <= 0.5:
                return (np.expm1(gamma * log_x) - gamma * np.expm1(log_x)) / (gamma * (gamma - 1.0))
            delta = gamma - 1.0
            return (np.exp(log_x) * np.expm1(delta * log_x) - delta * np.expm1(log_x)) / (gamma * delta)

    def phi_prime_from_log(self, log_x: np.ndarray) -> np.ndarray:
        if self.is_kl:
            return np.asarray(log_x, dtype=float)
        delta = self.gamma - 1.0
        with np.errstate(over="ignore"):
            return np.expm1(delta * log_x) / delta

    def phi_second_from_log(self, log_x: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp((self.gamma - 2.0) * log_x)

    def bracket_from_log(self, log_r: np.ndarray) -> np.ndarray:
        """
        g(r) = r phi'(r) - phi(r) = (r^gamma - 1) / gamma, from log r
        """
        if self.is_klm:
            return np.asarray(log_r, dtype=float)
        if self.is_kl:
            with np.errstate(over="ignore"):
                return np.expm1(log_r)
        with np.errstate(over="ignore"):
            return np.expm1(self.gamma * log_r) / self.gamma

    def _log_argument(self, x: float | np.ndarray, exponents: tuple[float, ...]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(~(x > 0)):
            raise DomainError(f"phi_{self.gamma:g} is defined for x > 0 only")
        log_x = np.log(x)
        for exponent in exponents:
            if np.any(exponent * log_x > MAX_LOG):
                raise DivergenceOverflow(f"x^{exponent:g} overflows for x = {np.max(x):g}")
        return log_x

    def phi(self, x: float | np.ndarray) -> float | np.ndarray:
        """
        Evaluate phi_gamma

        Args:
            x: positive real or array of them

        Returns:
            float: phi_gamma(x)
        """
        log_x = self._log_argument(x, (self.gamma, 1.0))
        return _scalar(self.phi_from_log(log_x))

    def phi_prime(self, x: float | np.ndarray) -> float | np.ndarray:
        log_x = self._log_argument(x, (self.gamma - 1.0,))
        return _scalar(self.phi_prime_from_log(log_x))

    def phi_second(self, x: float | np.ndarray) -> float | np.ndarray:
        log_x = self._log_argument(x, (self.gamma - 2.0,))
        return _scalar(self.phi_second_from_log(log_x))

    def bracket(self, x: float | np.ndarray) -> float | np.ndarray:
        log_x = self._log_argument(x, (self.gamma,))
        return _scalar(self.bracket_from_log(log_x))

    def check_growth_condition(
        self,
        eta: float,
        grid: list[float] | np.ndarray,
        scan: list[float] | np.ndarray | None = None,
        points: int = 21,
    ) -> GrowthCheck:
        """
        Desk check of the growth condition phi(cx) <= c1 phi(x) + c2 |x| + c3 for every c in [1 - eta, 1 + eta]
        and every x of the grid. Small candidates (c1, c2, c3) are tried in order of increasing size

        Args:
            eta: half-width of the c range, in (0, 1)
            grid: x values, positive
            scan: explicit c values, replaces the evenly spaced scan of [1 - eta, 1 + eta]
            points: number of c values in the evenly spaced scan

        Returns:
            GrowthCheck: the witness, or the worst (c, x) pair of the most permissive candidate
        """
        if scan is None:
            if not 0.0 < eta < 1.0:
                raise DomainError(f"eta must lie in (0, 1), got {eta}")
            scan = np.linspace(1.0 - eta, 1.0 + eta, points)
        scan = np.asarray(scan, dtype=float)
        grid = np.asarray(grid, dtype=float)

        lhs = np.asarray(self.phi(np.outer(scan, grid)))
        base = np.asarray(self.phi(grid))
        candidates = sorted(
            itertools.product(GROWTH_C1, GROWTH_C2, GROWTH_C3), key=lambda c: (sum(c), c[0], c[1], c[2])
        )
        for c1, c2, c3 in candidates:
            rhs = c1 * base + c2 * np.abs(grid) + c3
            if np.all(lhs <= rhs + 1e-12 * (1.0 + np.abs(rhs))):
                return GrowthCheck(holds=True, c1=c1, c2=c2, c3=c3)

        c1, c2, c3 = GROWTH_C1[-1], GROWTH_C2[-1], GROWTH_C3[-1]
        excess = lhs - (c1 * base + c2 * np.abs(grid) + c3)
        i, j = np.unravel_index(np.argmax(excess), excess.shape)
        return GrowthCheck(holds=False, failing_c=float(scan[i]), failing_x=float(grid[j]))


def _scalar(value: np.ndarray) -> float | np.ndarray:
    return float(value) if np.ndim(value) == 0 else value
