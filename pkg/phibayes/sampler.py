import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from phibayes.errors import ConfigError, InitInvalid, TooShort
from phibayes.models import ChainDiagnostics, ChainDraws
from phibayes.utils import make_rng

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], float]

STUCK_ACCEPTANCE = 0.01
MIN_DIAGNOSTIC_LENGTH = 100
# Robbins-Monro gain exponent of the burn-in scale adaptation
ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 60_000
    burn_in: int = 10_000
    thin: int = 1
    proposal_scale: tuple[float, ...] | None = None
    adapt: bool = True
    target_acceptance: float = 0.3
    chains: int = 2

    def __post_init__(self) -> None:
        if self.burn_in < 0 or self.steps <= self.burn_in:
            raise ConfigError(f"mcmc: steps ({self.steps}) must exceed burn_in ({self.burn_in})")
        if self.thin < 1:
            raise ConfigError(f"mcmc.thin must be at least 1, got {self.thin}")
        if (self.steps - self.burn_in) % self.thin:
            raise ConfigError("mcmc: steps - burn_in must be a multiple of thin")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ConfigError("mcmc.target_acceptance must lie in (0, 1)")
        if self.proposal_scale is not None and not all(s > 0 for s in self.proposal_scale):
            raise ConfigError("mcmc.proposal_scale must be positive")
        if self.chains < 1:
            raise ConfigError("mcmc.chains must be at least 1")

    @property
    def retained(self) -> int:
        return (self.steps - self.burn_in) // self.thin


def metropolis_accept(lp_current: float, lp_proposal: float, log_u: float) -> bool:
    """
    Metropolis rule for a symmetric proposal, a proposal of zero density is never accepted
    """
    if not np.isfinite(lp_proposal):
        return False
    return bool(log_u < lp_proposal - lp_current)


def initial_scale(dim: int, crude_scale: Sequence[float]) -> np.ndarray:
    return 2.38 / np.sqrt(dim) * np.asarray(crude_scale, dtype=float)


def run_chain(
    target: LogDensity,
    init: Sequence[float],
    cfg: SamplerConfig,
    seed: int,
    key: tuple[int, ...] = (),
    crude_scale: Sequence[float] | None = None,
) -> ChainDraws:
    """
    Gaussian random-walk Metropolis. During burn-in the log proposal scale follows a Robbins-Monro recursion
    towards the target acceptance, afterwards it is frozen

    Args:
        target: unnormalized log-density, -inf outside the support
        init: starting point, must have finite target
        cfg: sampler settings
        seed: master seed
        key: spawn key of the chain's stream
        crude_scale: scale estimate per coordinate, used when cfg.proposal_scale is not set

    Returns:
        ChainDraws: retained draws and run metadata
    """
    x = np.array(init, dtype=float)
    d = x.size
    lp = target(x)
    if not np.isfinite(lp):
        raise InitInvalid(f"Target is not finite at the starting point {x.tolist()}")

    if cfg.proposal_scale is not None:
        if len(cfg.proposal_scale) != d:
            raise ConfigError(f"mcmc.proposal_scale needs {d} entries")
        log_scale = np.log(np.asarray(cfg.proposal_scale, dtype=float))
    else:
        log_scale = np.log(initial_scale(d, crude_scale if crude_scale is not None else np.ones(d)))

    rng = make_rng(seed, *key)
    noise = rng.standard_normal((cfg.steps, d))
    log_u = np.log(rng.random(cfg.steps))

    retained = cfg.retained
    draws = np.empty((retained, d))
    log_post = np.empty(retained)
    # acceptances within the thinning window ending at each retained draw
    accepted_counts = np.zeros(retained, dtype=int)
    window = 0
    scale_trace = np.empty((retained, d))
    accepted_steps = 0
    stored = 0

    for i in range(cfg.steps):
        proposal = x + np.exp(log_scale) * noise[i]
        lp_proposal = target(proposal)
        accepted = metropolis_accept(lp, lp_proposal, log_u[i])
        if accepted:
            x, lp = proposal, lp_proposal

        if i < cfg.burn_in:
            if cfg.adapt:
                log_scale = log_scale + (i + 1) ** -ADAPT_DECAY * (float(accepted) - cfg.target_acceptance)
            continue

        accepted_steps += accepted
        window += accepted
        if (i - cfg.burn_in) % cfg.thin == cfg.thin - 1:
            draws[stored] = x
            log_post[stored] = lp
            accepted_counts[stored] = window
            window = 0
            scale_trace[stored] = np.exp(log_scale)
            stored += 1

    chain = ChainDraws(
        draws=draws,
        log_post_trace=log_post,
        accepted=accepted_counts,
        scale_trace=scale_trace,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
        steps=cfg.steps,
        accepted_steps=int(accepted_steps),
        seed=[seed, *key],
    )
    if chain.acceptance_rate < STUCK_ACCEPTANCE:
        chain.stuck = True
        logger.warning(f"Chain {chain.seed} is stuck, acceptance rate {chain.acceptance_rate:.4f} after adaptation")

    return chain


def run_chains(
    target: LogDensity,
    inits: Sequence[Sequence[float]],
    cfg: SamplerConfig,
    seed: int,
    key: tuple[int, ...] = (),
    crude_scale: Sequence[float] | None = None,
    jobs: int = 1,
) -> list[ChainDraws]:
    """
    Run one chain per starting point; chain c draws from stream key + (c,)

    Args:
        target: unnormalized log-density
        inits: starting points
        cfg: sampler settings
        seed: master seed
        key: spawn key prefix
        crude_scale: scale estimate per coordinate
        jobs: concurrent chains

    Returns:
        list: chains in the order of inits
    """

    def one(c: int) -> ChainDraws:
        return run_chain(target, inits[c], cfg, seed, (*key, c), crude_scale)

    if jobs <= 1:
        return [one(c) for c in range(len(inits))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(inits))))


def autocovariance(values: np.ndarray) -> np.ndarray:
    """
    Autocovariance of a 1-D series at every lag, by FFT
    """
    n = values.size
    centered = values - values.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centered, size)
    return np.fft.irfft(spectrum * np.conjugate(spectrum), size)[:n] / n


def effective_sample_size(chains: np.ndarray) -> float:
    """
    Multi-chain ESS with Geyer's initial positive and initial monotone sequence truncation

    Args:
        chains: m x B array, one row per chain

    Returns:
        float: effective sample size, 1 for a constant series
    """
    m, n = chains.shape
    acov = np.array([autocovariance(row) for row in chains])
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(chains.mean(axis=1), ddof=1)
    if var_plus <= 0:
        return 1.0

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0.0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t

    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t : max_t + 2])
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def split_rhat(chains: np.ndarray) -> float:
    """
    Split-R-hat: each chain is cut in halves and the potential scale reduction of the 2m pieces is returned
    """
    half = chains.shape[1] // 2
    pieces = np.vstack([chains[:, :half], chains[:, -half:]])
    n = pieces.shape[1]
    within = np.mean(np.var(pieces, axis=1, ddof=1))
    between = n * np.var(pieces.mean(axis=1), ddof=1)
    if within == 0:
        return 1.0 if between == 0 else np.inf
    return float(np.sqrt(((n - 1.0) / n * within + between / n) / within))


def diagnostics(chains: ChainDraws | Sequence[ChainDraws]) -> ChainDiagnostics:
    """
    ESS per coordinate, split-R-hat per coordinate when at least two chains are given, pooled acceptance

    Args:
        chains: one chain or several chains of equal length

    Returns:
        ChainDiagnostics: diagnostics
    """
    chains = [chains] if isinstance(chains, ChainDraws) else list(chains)
    lengths = {chain.length for chain in chains}
    if len(lengths) != 1:
        raise ConfigError("Diagnostics need chains of equal length")
    if lengths.pop() < MIN_DIAGNOSTIC_LENGTH:
        raise TooShort(f"Diagnostics need at least {MIN_DIAGNOSTIC_LENGTH} draws per chain")

    stacked = np.stack([chain.draws for chain in chains])
    dim = stacked.shape[2]
    ess = np.empty(dim)
    degenerate = False
    for j in range(dim):
        series = stacked[:, :, j]
        if np.ptp(series) == 0:
            ess[j] = 1.0
            degenerate = True
        else:
            ess[j] = effective_sample_size(series)
    rhat = np.array([split_rhat(stacked[:, :, j]) for j in range(dim)]) if len(chains) > 1 else None

    acceptance = sum(c.accepted_steps for c in chains) / sum(c.steps - c.burn_in for c in chains)
    return ChainDiagnostics(ess=ess, split_rhat=rhat, acceptance=float(acceptance), degenerate=degenerate)


def chain_to_csv(chain: ChainDraws) -> str:
    """
    Render a chain as CSV with columns iter, alpha_1..alpha_d, log_post, accepted (acceptances since the
    previous retained draw)
    """
    frame = pd.DataFrame(chain.draws, columns=[f"alpha_{j + 1}" for j in range(chain.dim)])
    frame.insert(0, "iter", chain.burn_in + chain.thin * (np.arange(chain.length) + 1))
    frame["log_post"] = chain.log_post_trace
    frame["accepted"] = chain.accepted.astype(int)
    return frame.to_csv(index=False, float_format="%.17g")
