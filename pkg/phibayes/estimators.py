import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, DivergenceInfinite, TooShort
from phibayes.families import Dataset, ParametricFamily, ParamVector
from phibayes.models import ChainDraws, EstimateReport
from phibayes.optimize import OptimizerConfig, maximize_in_box
from phibayes.posterior import PhiPosterior
from phibayes.sampler import effective_sample_size
from phibayes.utils import make_rng

logger = logging.getLogger(__name__)

LOSS_KINDS = ("squared", "absolute", "quantile")
ESCORT_MODES = ("fixed", "plugin-median", "plugin-mle", "oracle")

MIN_ESTIMATE_LENGTH = 100
MIN_INTERVAL_LENGTH = 1000
BATCHES = 20


@dataclass(frozen=True)
class LossSpec:
    kind: str = "squared"
    tau: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss: {self.kind!r} is not one of {LOSS_KINDS}")
        if self.kind == "quantile" and (self.tau is None or not 0.0 < self.tau < 1.0):
            raise ConfigError(f"loss: quantile level must lie strictly inside (0, 1), got {self.tau}")

    @property
    def name(self) -> str:
        if self.kind == "quantile":
            return f"quantile({self.tau:g})"
        return {"squared": "posterior-mean", "absolute": "posterior-median"}[self.kind]

    @property
    def level(self) -> float | None:
        if self.kind == "squared":
            return None
        return 0.5 if self.kind == "absolute" else self.tau


def _pooled(chain: ChainDraws | Sequence[ChainDraws]) -> tuple[np.ndarray, list[ChainDraws]]:
    chains = [chain] if isinstance(chain, ChainDraws) else list(chain)
    return np.concatenate([c.draws for c in chains]), chains


def _ess(chains: list[ChainDraws], j: int) -> float:
    series = np.stack([c.draws[:, j] for c in chains])
    if np.ptp(series) == 0:
        return 1.0
    if len({c.length for c in chains}) != 1:
        series = np.concatenate([c.draws[:, j] for c in chains])[None, :]
    return effective_sample_size(series)


def batch_means_se(values: np.ndarray, statistic: Callable[[np.ndarray], float], batches: int = BATCHES) -> float:
    """
    Monte Carlo standard error of a statistic by non-overlapping batch means
    """
    parts = np.array_split(values, batches)
    estimates = np.array([statistic(part) for part in parts])
    return float(np.std(estimates, ddof=1) / np.sqrt(batches))


def credible_interval(
    chain: ChainDraws | Sequence[ChainDraws] | np.ndarray,
    f: Callable[[np.ndarray], float],
    epsilon: float = 0.05,
) -> tuple[float, float]:
    """
    Equal-tailed interval [Q(epsilon/2), Q(1 - epsilon/2)] of f over the draws

    Args:
        chain: chain, chains or a B x d array of draws
        f: scalar function of the parameter vector
        epsilon: total tail probability, in (0, 1)

    Returns:
        tuple: interval end points
    """
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    draws = chain if isinstance(chain, np.ndarray) else _pooled(chain)[0]
    if draws.shape[0] < MIN_INTERVAL_LENGTH:
        raise TooShort(f"Credible intervals need at least {MIN_INTERVAL_LENGTH} draws, got {draws.shape[0]}")
    values = np.array([f(a) for a in draws], dtype=float)
    low, high = np.quantile(values, [epsilon / 2.0, 1.0 - epsilon / 2.0])
    return float(low), float(high)


def estimate(
    chain: ChainDraws | Sequence[ChainDraws], loss: LossSpec | None = None, epsilon: float = 0.05
) -> EstimateReport:
    """
    Bayes-type estimate minimizing the posterior expected loss: the chain mean for squared error, the median
    for absolute error, the tau-quantile for the quantile loss; all coordinate-wise

    Args:
        chain: chain or chains of the same posterior, pooled
        loss: loss function
        epsilon: tail probability of the per-coordinate credible intervals

    Returns:
        EstimateReport: point estimate, credible intervals and Monte Carlo standard errors
    """
    loss = loss or LossSpec()
    draws, chains = _pooled(chain)
    if draws.shape[0] < MIN_ESTIMATE_LENGTH:
        raise TooShort(f"Estimates need at least {MIN_ESTIMATE_LENGTH} draws, got {draws.shape[0]}")

    dim = draws.shape[1]
    ess = np.array([_ess(chains, j) for j in range(dim)])
    if loss.kind == "squared":
        point = np.mean(draws, axis=0)
        mc_se = np.std(draws, axis=0, ddof=1) / np.sqrt(ess)
    else:
        point = np.quantile(draws, loss.level, axis=0)
        mc_se = np.array([batch_means_se(draws[:, j], lambda v: np.quantile(v, loss.level)) for j in range(dim)])

    if draws.shape[0] >= MIN_INTERVAL_LENGTH:
        ci = np.array([credible_interval(draws, lambda a, j=j: a[j], epsilon) for j in range(dim)])
    else:
        ci = np.full((dim, 2), np.nan)

    return EstimateReport(
        estimator=loss.name,
        point=point,
        ci=ci,
        mc_se=mc_se,
        ess=ess,
        epsilon=epsilon,
        chain_meta=[c.metadata() for c in chains],
    )


def _starts(family: ParametricFamily, anchors: list[np.ndarray], random: Callable, cfg: OptimizerConfig) -> list:
    rng = make_rng(cfg.seed)
    starts = list(anchors)
    while len(starts) < cfg.starts:
        starts.append(np.clip(random(rng), family.bounds[:, 0], family.bounds[:, 1]))
    return starts[: max(cfg.starts, len(anchors))]


def posterior_mode(post: PhiPosterior, optimizer: OptimizerConfig | None = None) -> ParamVector:
    """
    Maximizer of P_n h(theta, alpha) + ln pi(alpha), with the log prior not scaled by n

    Args:
        post: phi-posterior
        optimizer: optimizer settings

    Returns:
        ParamVector: posterior dual estimate
    """
    cfg = optimizer or OptimizerConfig()
    starts = _starts(post.family, [post.escort, post.prior.center], post.prior.draw, cfg)
    return maximize_in_box(post.mode_objective, starts, post.family.bounds, cfg, anchor=post.escort).x


def posterior_mode_of_phi_posterior(post: PhiPosterior, optimizer: OptimizerConfig | None = None) -> ParamVector:
    """
    Maximizer of the phi-posterior density n P_n h(theta, alpha) + ln pi(alpha)

    Args:
        post: phi-posterior
        optimizer: optimizer settings

    Returns:
        ParamVector: mode of the phi-posterior
    """
    cfg = optimizer or OptimizerConfig()
    starts = _starts(post.family, [post.escort, post.prior.center], post.prior.draw, cfg)
    return maximize_in_box(post.log_unnormalized, starts, post.family.bounds, cfg, anchor=post.escort).x


def dual_mle(criterion: DualCriterion, data: Dataset, optimizer: OptimizerConfig | None = None) -> ParamVector:
    """
    Dual phi-divergence estimate, the maximizer of P_n h(theta, alpha) over the parameter box

    Args:
        criterion: dual criterion with its escort
        data: observations
        optimizer: optimizer settings

    Returns:
        ParamVector: estimate
    """
    cfg = optimizer or OptimizerConfig()
    family = criterion.family
    criterion.family.check_data(data)

    def objective(alpha: np.ndarray) -> float:
        try:
            return criterion.empirical_criterion(data, alpha)
        except DivergenceInfinite:
            return -np.inf

    anchors = [criterion.escort, np.clip(family.median_estimate(data), family.bounds[:, 0], family.bounds[:, 1])]
    starts = _starts(family, anchors, lambda rng: rng.uniform(family.bounds[:, 0], family.bounds[:, 1]), cfg)
    return maximize_in_box(objective, starts, family.bounds, cfg, anchor=criterion.escort).x


def select_escort(
    mode: str,
    family: ParametricFamily,
    data: Dataset,
    value: ParamVector | None = None,
    theta0: ParamVector | None = None,
    optimizer: OptimizerConfig | None = None,
) -> ParamVector:
    """
    Choose the escort parameter

    Args:
        mode: fixed, plugin-median, plugin-mle (modified-KL dual estimate, i.e. the MLE) or oracle (theta0)
        family: parametric family
        data: observations
        value: escort of the fixed mode
        theta0: true parameter, for the oracle mode
        optimizer: optimizer settings of the plugin-mle mode

    Returns:
        ParamVector: escort inside the parameter box
    """
    if mode == "fixed":
        if value is None:
            raise ConfigError("escort.value is required when escort.mode is fixed")
        return family.param(value)
    if mode == "oracle":
        if theta0 is None:
            raise ConfigError("The oracle escort needs model.theta0")
        return family.param(theta0)

    median = np.clip(family.median_estimate(data), family.bounds[:, 0], family.bounds[:, 1])
    if mode == "plugin-median":
        return family.param(median)
    if mode == "plugin-mle":
        return dual_mle(DualCriterion(family, DivergenceSpec(0.0), median), data, optimizer)
    raise ConfigError(f"escort.mode: {mode!r} is not one of {ESCORT_MODES}")


def default_escort_mode(family: ParametricFamily) -> str:
    return "plugin-median" if family.gaussian_support else "plugin-mle"
