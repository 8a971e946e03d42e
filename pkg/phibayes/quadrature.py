from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from phibayes.errors import ConfigError, DivergenceInfinite
from phibayes.families import ParametricFamily, ParamVector

SCHEMES = ("gauss-hermite", "gauss-legendre-mapped", "adaptive")

# truncation of the mapped grid, in units of the scale of P_theta
LOWER_TAIL = 1e-14
UPPER_TAIL = 60.0


@dataclass(frozen=True)
class QuadratureConfig:
    scheme: str | None = None
    order: int = 64
    panels: int = 40
    panel_order: int = 16
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    verify: bool = True
    closed_forms: bool = True

    def __post_init__(self) -> None:
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(f"quadrature.scheme: {self.scheme!r} is not one of {SCHEMES}")
        if self.order < 16 or self.panel_order < 16:
            raise ConfigError("quadrature.order and quadrature.panel_order must be at least 16")
        if self.panels < 1:
            raise ConfigError("quadrature.panels must be positive")
        for name in ("abs_tol", "rel_tol"):
            value = getattr(self, name)
            if not 0.0 < value <= 1e-4:
                raise ConfigError(f"quadrature.{name} must lie in (0, 1e-4], got {value}")

    def scheme_for(self, family: ParametricFamily) -> str:
        if self.scheme is not None:
            return self.scheme
        return "gauss-hermite" if family.gaussian_support else "gauss-legendre-mapped"


@lru_cache(maxsize=32)
def hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    return nodes, weights / np.sqrt(np.pi)


@lru_cache(maxsize=32)
def legendre_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


@lru_cache(maxsize=256)
def _nodes(
    family: ParametricFamily, theta: tuple[float, ...], scheme: str, cfg: QuadratureConfig, refined: bool
) -> tuple[np.ndarray, np.ndarray]:
    if scheme == "gauss-hermite":
        if not family.gaussian_support:
            raise ConfigError(f"Gauss-Hermite quadrature needs a real-line family, {family.name} is not")
        mean, sd = family.moments(np.array(theta))
        nodes, weights = hermite_rule(cfg.order * 2 if refined else cfg.order)
        return mean + np.sqrt(2.0) * sd * nodes, weights

    if family.support[0] != 0.0:
        raise ConfigError(f"Mapped Gauss-Legendre quadrature needs a (0, inf) family, {family.name} is not")
    _, scale = family.moments(np.array(theta))
    panels = cfg.panels * 2 if refined else cfg.panels
    upper = UPPER_TAIL * (2.0 if refined else 1.0)
    edges = np.linspace(np.log(LOWER_TAIL * scale), np.log(upper * scale), panels + 1)
    base_nodes, base_weights = legendre_rule(cfg.panel_order)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    u = (mid[:, None] + half[:, None] * base_nodes[None, :]).ravel()
    x = np.exp(u)
    # weight of p_theta(x) dx = p_theta(e^u) e^u du
    log_weight = family._log_density(np.array(theta), x) + u
    weights = (half[:, None] * base_weights[None, :]).ravel() * np.exp(log_weight)
    return x, weights


class Quadrature:
    def __init__(self, family: ParametricFamily, cfg: QuadratureConfig | None = None) -> None:
        """
        Expectation operator of a family

        Args:
            family: parametric family the expectations are taken under
            cfg: quadrature settings
        """
        self.family = family
        self.cfg = cfg or QuadratureConfig()
        self.scheme = self.cfg.scheme_for(family)

    def nodes(self, theta: ParamVector, refined: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """
        Nodes and weights of E_theta, weights already include the density

        Args:
            theta: parameter of the measure
            refined: doubled resolution

        Returns:
            tuple: nodes, weights
        """
        if self.scheme == "adaptive":
            raise ConfigError("Adaptive quadrature has no fixed nodes")
        key = tuple(float(v) for v in theta)
        return _nodes(self.family, key, self.scheme, self.cfg, refined)

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray], theta: ParamVector) -> float | np.ndarray:
        """
        E_theta[fn(X)], fn is vectorized over the first axis

        Args:
            fn: integrand, maps an array of x to an array with x along axis 0
            theta: parameter of the measure

        Returns:
            float: expectation, an array when fn is vector valued
        """
        if self.scheme == "adaptive":
            return self._adaptive(fn, theta)

        with np.errstate(over="ignore", invalid="ignore"):
            value = self._rule(fn, theta, refined=False)
            if not self.cfg.verify:
                self._check_finite(value, theta)
                return value
            refined = self._rule(fn, theta, refined=True)
        self._check_finite(refined, theta)
        self._check_stable(value, refined, theta)
        return refined

    def _rule(self, fn: Callable, theta: ParamVector, refined: bool) -> float | np.ndarray:
        x, weights = self.nodes(theta, refined)
        values = np.asarray(fn(x))
        value = np.tensordot(weights, values, axes=(0, 0))
        return float(value) if np.ndim(value) == 0 else value

    def _check_finite(self, value: float | np.ndarray, theta: ParamVector) -> None:
        if not np.all(np.isfinite(value)):
            raise DivergenceInfinite(f"Integrand under {self.family.name}{np.asarray(theta).tolist()} is not finite")

    def _check_stable(self, coarse: float | np.ndarray, fine: float | np.ndarray, theta: ParamVector) -> None:
        gap = np.max(np.abs(np.asarray(fine) - np.asarray(coarse)))
        allowed = max(self.cfg.abs_tol, self.cfg.rel_tol * float(np.max(np.abs(fine))))
        if gap > allowed:
            raise DivergenceInfinite(
                f"Quadrature under {self.family.name}{np.asarray(theta).tolist()} did not stabilize: "
                f"doubling the resolution moved the value by {gap:.3g}"
            )

    def _adaptive(self, fn: Callable, theta: ParamVector) -> float | np.ndarray:
        theta = np.asarray(theta, dtype=float)

        def integrand(x: float) -> np.ndarray:
            point = np.array([x])
            with np.errstate(over="ignore", invalid="ignore"):
                return np.asarray(fn(point))[0] * np.exp(self.family._log_density(theta, point))[0]

        lower, upper = self.family.support
        value, _, info = integrate.quad_vec(
            integrand, lower, upper, epsabs=self.cfg.abs_tol, epsrel=self.cfg.rel_tol, full_output=True
        )
        if not info.success:
            raise DivergenceInfinite(f"Adaptive quadrature under {self.family.name}{theta.tolist()}: {info.message}")
        self._check_finite(value, theta)
        return float(value) if np.ndim(value) == 0 else np.asarray(value)
