import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from phibayes.errors import ConfigError, NoFiniteStart
from phibayes.models import BaseDataClass
from phibayes.utils import fd_gradient

logger = logging.getLogger(__name__)

# penalty on the distance to the box, keeps Nelder-Mead close to the projection
BOX_PENALTY = 1e6


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 5
    grid_points: int = 101
    xatol: float = 1e-10
    fatol: float = 1e-14
    maxiter: int = 4000
    restarts: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.starts < 1 or self.grid_points < 3 or self.maxiter < 1 or self.restarts < 0:
            raise ConfigError("optimizer: starts >= 1, grid_points >= 3, maxiter >= 1 and restarts >= 0 are required")
        if not (self.xatol > 0 and self.fatol > 0):
            raise ConfigError("optimizer: tolerances must be positive")


@dataclass
class OptimizeOutcome(BaseDataClass):
    x: np.ndarray
    value: float
    converged: bool
    evaluations: int
    gradient_norm: float | None = None
    trace: list[str] = field(default_factory=list)


def project(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return np.clip(x, bounds[:, 0], bounds[:, 1])


def is_interior(x: np.ndarray, bounds: np.ndarray, margin: float = 1e-6) -> bool:
    width = bounds[:, 1] - bounds[:, 0]
    return bool(np.all(x > bounds[:, 0] + margin * width) and np.all(x < bounds[:, 1] - margin * width))


def _nelder_mead(
    objective: Callable[[np.ndarray], float], start: np.ndarray, bounds: np.ndarray, cfg: OptimizerConfig
) -> optimize.OptimizeResult:
    def loss(x: np.ndarray) -> float:
        inside = project(x, bounds)
        value = objective(inside)
        if not np.isfinite(value):
            return np.inf
        return -value + BOX_PENALTY * float(np.sum((x - inside) ** 2))

    d = start.size
    simplex = np.repeat(start[None, :], d + 1, axis=0)
    for j in range(d):
        simplex[j + 1, j] += 0.05 * (1.0 + abs(start[j]))
    return optimize.minimize(
        loss,
        start,
        method="Nelder-Mead",
        options={
            "xatol": cfg.xatol,
            "fatol": cfg.fatol,
            "maxiter": cfg.maxiter,
            "maxfev": cfg.maxiter * 2,
            "initial_simplex": simplex,
        },
    )


def maximize_in_box(
    objective: Callable[[np.ndarray], float],
    starts: Sequence[np.ndarray],
    bounds: np.ndarray,
    cfg: OptimizerConfig,
    anchor: np.ndarray,
) -> OptimizeOutcome:
    """
    Multi-start Nelder-Mead maximization over a box, each run restarted from its optimum `cfg.restarts`
    times. Ties are broken by the distance to `anchor`

    Args:
        objective: function to maximize, may return -inf
        starts: starting points
        bounds: box, d x 2
        cfg: optimizer settings
        anchor: tie-break reference point

    Returns:
        OptimizeOutcome: best point found
    """
    trace = []
    candidates = []
    evaluations = 0
    for start in starts:
        start = project(np.asarray(start, dtype=float), bounds)
        initial = objective(start)
        evaluations += 1
        if not np.isfinite(initial):
            trace.append(f"start {start.tolist()}: objective not finite, skipped")
            continue

        x = start
        converged = False
        for _ in range(cfg.restarts + 1):
            res = _nelder_mead(objective, x, bounds, cfg)
            evaluations += int(res.nfev)
            x = project(res.x, bounds)
            converged = bool(res.success)
        value = objective(x)
        evaluations += 1
        trace.append(f"start {start.tolist()}: {value:.12g} at {x.tolist()} after {res.nit} iterations, {res.message}")
        candidates.append((value, x, converged))

    if not candidates:
        raise NoFiniteStart("No starting point has a finite objective", trace)

    best_value = max(value for value, _, _ in candidates)
    tied = [c for c in candidates if c[0] >= best_value - 1e-12 * (1.0 + abs(best_value))]
    value, x, converged = min(tied, key=lambda c: float(np.linalg.norm(c[1] - anchor)))

    outcome = OptimizeOutcome(x=x, value=float(value), converged=converged, evaluations=evaluations, trace=trace)
    if is_interior(x, bounds):
        outcome.gradient_norm = float(np.linalg.norm(fd_gradient(objective, x, scale=1e-5)))
        if outcome.gradient_norm > 1e-6:
            logger.warning(f"Optimum {x.tolist()} has finite-difference gradient norm {outcome.gradient_norm:.3g}")
    if not converged:
        logger.warning(f"Nelder-Mead stopped before convergence at {x.tolist()}")

    return outcome


def grid_search(
    objective: Callable[[np.ndarray], float], bounds: np.ndarray, points: int
) -> tuple[np.ndarray, float, int]:
    """
    Evaluate the objective on a regular grid over the box, `points` per dimension. Ties go to the point
    closest to the grid centre

    Args:
        objective: function to maximize, may return -inf
        bounds: box, d x 2
        points: grid points per dimension

    Returns:
        tuple: best grid point, its value, number of finite evaluations
    """
    axes = [np.linspace(low, high, points) for low, high in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    values = np.array([objective(x) for x in grid])
    finite = np.isfinite(values)
    if not finite.any():
        raise NoFiniteStart("Objective is not finite anywhere on the grid")

    best = np.max(values[finite])
    center = bounds.mean(axis=1)
    tied = np.flatnonzero(finite & (values >= best))
    pick = tied[np.argmin(np.linalg.norm(grid[tied] - center, axis=1))]
    return grid[pick], float(values[pick]), int(finite.sum())


def refine_scalar(
    objective: Callable[[np.ndarray], float], low: float, high: float, cfg: OptimizerConfig
) -> optimize.OptimizeResult:
    """
    Bounded Brent refinement of a one-dimensional maximum bracketed by [low, high]
    """

    def loss(t: float) -> float:
        value = objective(np.array([t]))
        return -value if np.isfinite(value) else np.inf

    return optimize.minimize_scalar(
        loss, bounds=(low, high), method="bounded", options={"xatol": cfg.xatol, "maxiter": cfg.maxiter}
    )
