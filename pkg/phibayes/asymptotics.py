import logging
from collections.abc import Sequence

import numpy as np
from scipy import stats

from phibayes.dual import DualCriterion
from phibayes.errors import ConfigError, DivergenceInfinite, DomainError, SingularS, TooShort
from phibayes.families import Dataset, ParamVector
from phibayes.models import AsymptoticReport, ChainDraws, CltCheck, PosteriorNormality
from phibayes.posterior import PhiPosterior
from phibayes.sampler import effective_sample_size
from phibayes.utils import fd_hessian, make_rng, symmetric_power

logger = logging.getLogger(__name__)

SINGULAR_EIGENVALUE = 1e-10
CLIP_TOLERANCE = 1e-10
ASYMMETRY_TOLERANCE = 1e-6
MIN_CHECK_LENGTH = 100


def _S(criterion: DualCriterion, theta: ParamVector, theta0: ParamVector) -> tuple[np.ndarray, float]:
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    raw = -fd_hessian(lambda alpha: criterion.population_criterion(theta, alpha, theta0), theta0)
    asymmetry = float(np.max(np.abs(raw - raw.T)) / max(np.max(np.abs(raw)), np.finfo(float).tiny))
    if asymmetry > ASYMMETRY_TOLERANCE:
        logger.warning(f"Finite-difference S is asymmetric before symmetrization, relative {asymmetry:.3g}")
    return (raw + raw.T) / 2.0, asymmetry


def compute_S(criterion: DualCriterion, theta: ParamVector, theta0: ParamVector) -> np.ndarray:
    """
    S = -E_theta0[Hessian_alpha h(theta, alpha, X)] at alpha = theta0, by finite differences of the
    population criterion, symmetrized. A warning is logged when S is not positive definite

    Args:
        criterion: dual criterion, fixes family and divergence
        theta: escort parameter
        theta0: true parameter, interior to the box

    Returns:
        ndarray: d x d symmetric matrix
    """
    S, _ = _S(criterion, theta, theta0)
    if np.min(np.linalg.eigvalsh(S)) <= 0:
        logger.warning(f"S is not positive definite, eigenvalues {np.linalg.eigvalsh(S).tolist()}")
    return S


def clip_psd(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Project a symmetric matrix on the PSD cone by clipping negative eigenvalues at 0

    Returns:
        tuple: clipped matrix, magnitude of the most negative eigenvalue removed
    """
    values, vectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    clipped = float(max(0.0, -np.min(values)))
    projected = (vectors * np.maximum(values, 0.0)) @ vectors.T
    return (projected + projected.T) / 2.0, clipped


def _V(criterion: DualCriterion, theta: ParamVector, theta0: ParamVector) -> tuple[np.ndarray, bool]:
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)

    def outer(x: np.ndarray) -> np.ndarray:
        gradient = criterion.h_gradient(theta, theta0, x)
        return gradient[:, :, None] * gradient[:, None, :]

    raw = np.atleast_2d(criterion.quadrature.expectation(outer, theta0))
    V, clipped = clip_psd(raw)
    if clipped > CLIP_TOLERANCE:
        logger.warning(f"V was not positive semidefinite, clipped an eigenvalue of -{clipped:.3g}")
    return V, clipped > CLIP_TOLERANCE


def compute_V(criterion: DualCriterion, theta: ParamVector, theta0: ParamVector) -> np.ndarray:
    """
    V = E_theta0[grad_alpha h grad_alpha h^T] at alpha = theta0, the gradient by finite differences
    inside the quadrature

    Args:
        criterion: dual criterion
        theta: escort parameter
        theta0: true parameter

    Returns:
        ndarray: d x d symmetric PSD matrix
    """
    return _V(criterion, theta, theta0)[0]


def U_n(criterion: DualCriterion, data: Dataset, theta: ParamVector, theta0: ParamVector) -> np.ndarray:
    """
    Empirical criterion gradient (1/n) sum_i grad_alpha h(theta, theta0, X_i)

    Args:
        criterion: dual criterion
        data: observations, at least one
        theta: escort parameter
        theta0: point of differentiation

    Returns:
        ndarray: d values
    """
    if data.n < 1:
        raise DomainError("U_n needs at least one observation")
    criterion.family.check_data(data)
    return criterion.h_gradient(theta, theta0, data.observations).mean(axis=0)


def _check_invertible(S: np.ndarray) -> None:
    smallest = float(np.min(np.linalg.eigvalsh((S + S.T) / 2.0)))
    if smallest <= SINGULAR_EIGENVALUE:
        raise SingularS(f"S is singular or indefinite, smallest eigenvalue {smallest:.3g}")


def delta_n(theta0: ParamVector, S: np.ndarray, u_n: np.ndarray) -> ParamVector:
    """
    Centering point theta0 + S^-1 U_n
    """
    S = np.atleast_2d(S)
    _check_invertible(S)
    return np.asarray(theta0, dtype=float) + np.linalg.solve(S, np.atleast_1d(u_n))


def standardize(estimate: ParamVector, n: int, S: np.ndarray, V: np.ndarray, theta0: ParamVector) -> np.ndarray:
    """
    V^-1/2 S sqrt(n) (estimate - theta0), approximately N(0, I) for the dual estimators

    Args:
        estimate: point estimate
        n: sample size
        S: curvature matrix
        V: gradient outer-product matrix
        theta0: true parameter

    Returns:
        ndarray: d standardized values
    """
    S = np.atleast_2d(S)
    _check_invertible(S)
    shift = np.asarray(estimate, dtype=float) - np.asarray(theta0, dtype=float)
    return symmetric_power(np.atleast_2d(V), -0.5) @ S @ (np.sqrt(n) * shift)


def _thinned(draws: np.ndarray, ess: float) -> np.ndarray:
    step = max(1, int(np.ceil(draws.shape[0] / max(ess, 1.0))))
    return draws[::step]


def posterior_normality_check(
    chain: ChainDraws | Sequence[ChainDraws], n: int, S: np.ndarray, Delta_n: ParamVector
) -> PosteriorNormality:
    """
    Compare t = sqrt(n) (alpha - Delta_n) over the draws with N(0, S^-1): relative Frobenius error of the
    sample covariance and per-coordinate KS tests. The KS tests run on the draws thinned to the spacing
    of the smallest ESS

    Args:
        chain: chain or chains of the phi-posterior
        n: sample size of the data behind the posterior
        S: curvature matrix
        Delta_n: centering point

    Returns:
        PosteriorNormality: covariance error, KS statistics and p-values
    """
    chains = [chain] if isinstance(chain, ChainDraws) else list(chain)
    draws = np.concatenate([c.draws for c in chains])
    if draws.shape[0] < MIN_CHECK_LENGTH:
        raise TooShort(f"The normality check needs at least {MIN_CHECK_LENGTH} draws, got {draws.shape[0]}")
    S = np.atleast_2d(S)
    _check_invertible(S)

    target = np.linalg.inv(S)
    t = np.sqrt(n) * (draws - np.asarray(Delta_n, dtype=float))
    sample_cov = np.atleast_2d(np.cov(t, rowvar=False))
    cov_rel_err = float(np.linalg.norm(sample_cov - target) / np.linalg.norm(target))

    dim = t.shape[1]
    ks_stats = np.empty(dim)
    ks_pvalues = np.empty(dim)
    thinned_length = t.shape[0]
    for j in range(dim):
        per_chain = [t_chain[:, j] for t_chain in np.split(t, np.cumsum([c.length for c in chains])[:-1])]
        if len({c.length for c in chains}) == 1:
            ess = effective_sample_size(np.stack(per_chain)) if np.ptp(t[:, j]) > 0 else 1.0
        else:
            ess = effective_sample_size(t[None, :, j]) if np.ptp(t[:, j]) > 0 else 1.0
        thinned = np.concatenate([_thinned(values, ess / len(chains)) for values in per_chain])
        thinned_length = min(thinned_length, thinned.size)
        result = stats.kstest(thinned, "norm", args=(0.0, np.sqrt(target[j, j])))
        ks_stats[j] = result.statistic
        ks_pvalues[j] = result.pvalue

    return PosteriorNormality(
        cov_rel_err=cov_rel_err, ks_stats=ks_stats, ks_pvalues=ks_pvalues, thinned_length=thinned_length
    )


def posterior_l1_distance(
    post: PhiPosterior, S: np.ndarray, Delta_n: ParamVector, points: int = 4001, width: float = 10.0
) -> float:
    """
    L1 distance between the normalized phi-posterior and N(Delta_n, S^-1 / n), for one-parameter models.
    Both densities are evaluated on a grid of +- width standard deviations around Delta_n

    Args:
        post: phi-posterior of a one-parameter model
        S: 1 x 1 curvature matrix
        Delta_n: centering point
        points: grid size
        width: half-width of the grid in units of the normal sd

    Returns:
        float: integral of |posterior - normal|, in [0, 2]
    """
    if post.family.param_dim != 1:
        raise DomainError("posterior_l1_distance needs a one-parameter model")
    S = np.atleast_2d(S)
    _check_invertible(S)
    center = float(np.atleast_1d(Delta_n)[0])
    sd = float(1.0 / np.sqrt(post.n * S[0, 0]))
    low, high = post.family.bounds[0]
    normalized = post.normalize_1d(points, max(low, center - width * sd), min(high, center + width * sd))
    normal = stats.norm.pdf(normalized.grid, loc=center, scale=sd)
    return float(np.trapezoid(np.abs(normalized.density - normal), normalized.grid))


def clt_check(
    criterion: DualCriterion, theta0: ParamVector, n: int, replications: int, seed: int, V: np.ndarray | None = None
) -> CltCheck:
    """
    Simulate sqrt(n) V^-1/2 U_n over independent datasets drawn at theta0 and test it against N(0, I)
    coordinate-wise. Replication r draws its data from stream (r,) of the seed

    Args:
        criterion: dual criterion, its escort is kept fixed
        theta0: true parameter
        n: sample size per replication
        replications: number of datasets
        seed: master seed
        V: gradient outer-product matrix, computed when omitted

    Returns:
        CltCheck: statistics, their moments and KS results
    """
    if replications < 2:
        raise ConfigError(f"clt_check needs at least 2 replications, got {replications}")
    family = criterion.family
    theta0 = family.param(theta0)
    V = compute_V(criterion, criterion.escort, theta0) if V is None else np.atleast_2d(V)
    root = symmetric_power(V, -0.5)

    rows = []
    failures = 0
    for r in range(replications):
        data = family.sample(theta0, n, make_rng(seed, r))
        try:
            rows.append(np.sqrt(n) * root @ U_n(criterion, data, criterion.escort, theta0))
        except DivergenceInfinite as e:
            failures += 1
            logger.error(f"Replication {r} of the CLT check failed: {e}")
    if len(rows) < 2:
        raise TooShort(f"Only {len(rows)} of {replications} CLT replications succeeded")
    statistics = np.array(rows)

    ks = [stats.kstest(statistics[:, j], "norm") for j in range(statistics.shape[1])]
    return CltCheck(
        statistics=statistics,
        mean=statistics.mean(axis=0),
        variance=statistics.var(axis=0, ddof=1),
        ks_stats=np.array([k.statistic for k in ks]),
        ks_pvalues=np.array([k.pvalue for k in ks]),
        replications=replications,
        failures=failures,
    )


def asymptotic_report(
    criterion: DualCriterion, data: Dataset, estimate: ParamVector, theta0: ParamVector, epsilon: float = 0.05
) -> AsymptoticReport:
    """
    Gather S, V, the sandwich S^T V^-1 S, the covariance S^-1 V S^-1, U_n, Delta_n and the standardized
    estimate, together with a Wald interval estimate +- z sqrt(diag(S^-1 V S^-1) / n)

    Args:
        criterion: dual criterion, its escort is the theta of S and V
        data: observations the estimate was computed from
        estimate: point estimate
        theta0: true parameter
        epsilon: tail probability of the Wald interval

    Returns:
        AsymptoticReport: all matrices and statistics
    """
    family = criterion.family
    theta0 = family.param(theta0)
    theta = criterion.escort
    S, asymmetry = _S(criterion, theta, theta0)
    S_positive = bool(np.min(np.linalg.eigvalsh(S)) > 0)
    if not S_positive:
        logger.warning(f"S is not positive definite, eigenvalues {np.linalg.eigvalsh(S).tolist()}")
    V, V_clipped = _V(criterion, theta, theta0)

    u = U_n(criterion, data, theta, theta0)
    delta = delta_n(theta0, S, u)
    standardized = standardize(estimate, data.n, S, V, theta0)

    S_inv = np.linalg.inv(S)
    asymptotic_cov = S_inv @ V @ S_inv
    sandwich = S.T @ np.linalg.pinv(V) @ S
    fisher_inv = np.linalg.inv(family.fisher_information(theta0))
    relative_efficiency = np.diag(fisher_inv) / np.diag(asymptotic_cov)

    z = stats.norm.ppf(1.0 - epsilon / 2.0)
    half = z * np.sqrt(np.diag(asymptotic_cov) / data.n)
    estimate = np.asarray(estimate, dtype=float)
    wald_ci = np.column_stack([estimate - half, estimate + half])

    return AsymptoticReport(
        dim=family.param_dim,
        S=S,
        V=V,
        sandwich=sandwich,
        asymptotic_cov=asymptotic_cov,
        relative_efficiency=relative_efficiency,
        U_n=u,
        Delta_n=delta,
        standardized=standardized,
        wald_ci=wald_ci,
        cond_S=float(np.linalg.cond(S)),
        cond_V=float(np.linalg.cond(V)),
        S_asymmetry=asymmetry,
        S_positive=S_positive,
        V_clipped=V_clipped,
    )
