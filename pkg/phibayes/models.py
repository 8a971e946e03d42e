from dataclasses import dataclass, field, fields

import numpy as np


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, BaseDataClass):
        return value.dict()
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [_plain(item) for item in value]
    return value


class BaseDataClass:
    def dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self) if f.repr}


@dataclass
class GrowthCheck(BaseDataClass):
    holds: bool
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    failing_c: float | None = None
    failing_x: float | None = None


@dataclass
class DualitySupResult(BaseDataClass):
    sup_value: float
    argmax: np.ndarray
    divergence: float
    gap: float
    evaluations: int = 0
    trace: list[str] = field(default_factory=list)


@dataclass
class NormalizedPosterior(BaseDataClass):
    grid: np.ndarray
    density: np.ndarray
    log_normalizer: float

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.density, self.grid))

    def variance(self) -> float:
        mean = self.mean()
        return float(np.trapezoid((self.grid - mean) ** 2 * self.density, self.grid))


@dataclass
class ChainDraws(BaseDataClass):
    draws: np.ndarray
    log_post_trace: np.ndarray
    accepted: np.ndarray
    scale_trace: np.ndarray
    burn_in: int
    thin: int
    steps: int
    accepted_steps: int
    seed: int | list[int]
    stuck: bool = False

    @property
    def length(self) -> int:
        return int(self.draws.shape[0])

    @property
    def dim(self) -> int:
        return int(self.draws.shape[1])

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_steps / (self.steps - self.burn_in)

    def metadata(self) -> dict:
        return {
            "seed": _plain(self.seed),
            "steps": self.steps,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "length": self.length,
            "acceptance_rate": self.acceptance_rate,
            "final_proposal_scale": self.scale_trace[-1].tolist(),
            "stuck": self.stuck,
        }


@dataclass
class ChainDiagnostics(BaseDataClass):
    ess: np.ndarray
    split_rhat: np.ndarray | None
    acceptance: float
    degenerate: bool = False


@dataclass
class EstimateReport(BaseDataClass):
    estimator: str
    point: np.ndarray
    ci: np.ndarray
    mc_se: np.ndarray
    ess: np.ndarray
    epsilon: float = 0.05
    chain_meta: list[dict] = field(default_factory=list)


@dataclass
class PosteriorNormality(BaseDataClass):
    cov_rel_err: float
    ks_stats: np.ndarray
    ks_pvalues: np.ndarray
    thinned_length: int
    method: str = "covariance and per-coordinate KS surrogates of the L1 distance"


@dataclass
class AsymptoticReport(BaseDataClass):
    dim: int
    S: np.ndarray
    V: np.ndarray
    sandwich: np.ndarray
    asymptotic_cov: np.ndarray
    relative_efficiency: np.ndarray
    U_n: np.ndarray
    Delta_n: np.ndarray
    standardized: np.ndarray
    wald_ci: np.ndarray
    cond_S: float
    cond_V: float
    S_asymmetry: float = 0.0
    S_positive: bool = True
    V_clipped: bool = False


@dataclass
class CltCheck(BaseDataClass):
    statistics: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    ks_stats: np.ndarray
    ks_pvalues: np.ndarray
    replications: int
    failures: int = 0
