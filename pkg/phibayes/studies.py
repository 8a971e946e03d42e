import asyncio
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from phibayes.asymptotics import asymptotic_report
from phibayes.config import MAX_CONTAMINATION, ExperimentConfig
from phibayes.divergence import DivergenceSpec
from phibayes.dual import DualCriterion
from phibayes.errors import DomainError, PhiBayesError
from phibayes.estimators import dual_mle, estimate, posterior_mode, select_escort
from phibayes.families import Dataset, ParametricFamily, ParamVector
from phibayes.models import AsymptoticReport, BaseDataClass, ChainDiagnostics, ChainDraws, EstimateReport
from phibayes.posterior import PhiPosterior
from phibayes.response import ReplicationResponse
from phibayes.runner import StudyRunner
from phibayes.sampler import SamplerConfig, chain_to_csv, diagnostics, run_chains
from phibayes.utils import Seed, as_generator, make_rng

logger = logging.getLogger(__name__)

SEQUENTIAL_TEST_POINTS = 100
# spawn-key slots below the replication index
CHAIN_SLOT = 1
INIT_SLOT = 2
SEQUENTIAL_SLOT = 3


def simulate_contaminated(
    family: ParametricFamily,
    theta0: ParamVector,
    n: int,
    eps_c: float,
    contaminant: ParametricFamily | None = None,
    contaminant_theta: ParamVector | None = None,
    seed: Seed = 0,
) -> Dataset:
    """
    Draw n observations from (1 - eps_c) P_theta0 + eps_c Q. The clean sample is drawn first from the
    generator, so eps_c = 0 reproduces family.sample(theta0, n, seed)

    Args:
        family: working model
        theta0: true parameter
        n: sample size
        eps_c: contamination fraction in [0, 0.5)
        contaminant: family of the outlier distribution Q
        contaminant_theta: parameter of Q
        seed: seed or generator

    Returns:
        Dataset: simulated data
    """
    if not 0.0 <= eps_c < MAX_CONTAMINATION:
        raise DomainError(f"Contamination fraction {eps_c} is outside [0, {MAX_CONTAMINATION})")
    if n < 1:
        raise DomainError(f"Sample size must be at least 1, got {n}")
    if eps_c > 0 and contaminant is None:
        raise DomainError("A positive contamination fraction needs a contaminant")
    if contaminant is not None and (
        contaminant.support[0] < family.support[0] or contaminant.support[1] > family.support[1]
    ):
        raise DomainError(
            f"Contaminant support {contaminant.support} is not inside the {family.name} support {family.support}"
        )

    rng = as_generator(seed)
    clean = family.draw(family.param(theta0), n, rng)
    if eps_c == 0:
        return Dataset(clean)
    outlier = rng.random(n) < eps_c
    dirty = contaminant.draw(contaminant.param(contaminant_theta), n, rng)
    return Dataset(np.where(outlier, dirty, clean))


@dataclass(frozen=True)
class ReplicationTask:
    index: int
    gamma: float
    contamination: float = 0.0
    theta: tuple[float, ...] | None = None
    keep_chains: bool = False

    @property
    def label(self) -> str:
        label = f"gamma={self.gamma:g} eps={self.contamination:g}"
        if self.theta is not None:
            label += f" theta={','.join(f'{t:g}' for t in self.theta)}"
        return label

    @property
    def slug(self) -> str:
        return self.label.replace("=", "").replace(" ", "_").replace(",", "-")


@dataclass
class Fit(BaseDataClass):
    escort: np.ndarray
    chains: list[ChainDraws]
    diagnostics: ChainDiagnostics
    reports: list[EstimateReport]
    mode: np.ndarray
    dual_estimate: np.ndarray
    divergence_warnings: int = 0
    asymptotics: AsymptoticReport | None = None
    posterior: PhiPosterior | None = field(default=None, repr=False)


def proposal_scale(post: PhiPosterior) -> np.ndarray:
    """
    Per-coordinate scale of the posterior from the Fisher information at the escort, capped at the prior scale
    """
    fisher = post.family.fisher_information(post.escort)
    sd = np.sqrt(np.diag(np.linalg.inv(fisher)) / (post.n * post.temper))
    return np.minimum(sd, post.prior.scale)


def sample_posterior(
    post: PhiPosterior, cfg: SamplerConfig, seed: int, key: tuple[int, ...] = (), jobs: int = 1
) -> list[ChainDraws]:
    """
    Run cfg.chains chains: the first starts at the escort, the others at dispersed points around it

    Args:
        post: phi-posterior
        cfg: sampler settings
        seed: master seed
        key: spawn key of the replication, chain c uses key + (1, c)
        jobs: concurrent chains

    Returns:
        list: chains
    """
    scale = proposal_scale(post)
    bounds = post.family.bounds
    start = post.escort if np.isfinite(post(post.escort)) else post.prior.center
    rng = make_rng(seed, *key, INIT_SLOT)
    inits = [start]
    for _ in range(cfg.chains - 1):
        candidate = np.clip(start + 2.0 * scale * rng.standard_normal(start.size), bounds[:, 0], bounds[:, 1])
        inits.append(candidate if np.isfinite(post(candidate)) else start)
    return run_chains(post, inits, cfg, seed, (*key, CHAIN_SLOT), scale, jobs)


def fit_posterior(
    cfg: ExperimentConfig,
    divergence: DivergenceSpec,
    data: Dataset,
    key: tuple[int, ...],
    theta0: ParamVector | None = None,
    jobs: int = 1,
) -> Fit:
    """
    End-to-end recipe for one dataset: escort, phi-posterior, chains, loss-based estimates, posterior mode,
    the frequentist dual estimate and, when theta0 is given, the asymptotic report at theta0

    Args:
        cfg: validated configuration
        divergence: phi function
        data: observations
        key: spawn key of the replication
        theta0: reference parameter of the asymptotic report
        jobs: concurrent chains

    Returns:
        Fit: everything computed
    """
    family = cfg.family()
    escort = select_escort(cfg.escort.mode, family, data, cfg.escort.value, cfg.model.theta0, cfg.optimizer)
    criterion = DualCriterion(family, divergence, escort, cfg.quadrature)
    post = PhiPosterior(criterion, data, cfg.prior)

    chains = sample_posterior(post, cfg.mcmc, cfg.study.master_seed, key, jobs)
    reports = [estimate(chains, loss, cfg.study.epsilon) for loss in cfg.study.loss_specs()]
    fit = Fit(
        escort=escort,
        chains=chains,
        diagnostics=diagnostics(chains),
        reports=reports,
        mode=posterior_mode(post, cfg.optimizer),
        dual_estimate=dual_mle(criterion, data, cfg.optimizer),
        posterior=post,
    )
    if theta0 is not None:
        fit.asymptotics = asymptotic_report(criterion, data, reports[0].point, theta0, cfg.study.epsilon)
    fit.divergence_warnings = post.divergence_warnings
    return fit


def _fit_row(fit: Fit, family: ParametricFamily, theta0: ParamVector, task: ReplicationTask, n: int) -> dict:
    row = {"gamma": task.gamma, "contamination": task.contamination, "n": n}
    names = family.param_names
    primary = fit.reports[0]
    for j, name in enumerate(names):
        row[f"escort_{name}"] = fit.escort[j]
        for report in fit.reports:
            row[f"{report.estimator}_{name}"] = report.point[j]
        row[f"mc_se_{name}"] = primary.mc_se[j]
        row[f"ci_low_{name}"] = primary.ci[j, 0]
        row[f"ci_high_{name}"] = primary.ci[j, 1]
        row[f"covered_{name}"] = bool(primary.ci[j, 0] <= theta0[j] <= primary.ci[j, 1])
        row[f"mode_{name}"] = fit.mode[j]
        row[f"dual_{name}"] = fit.dual_estimate[j]
        row[f"ess_{name}"] = fit.diagnostics.ess[j]
        if fit.diagnostics.split_rhat is not None:
            row[f"rhat_{name}"] = fit.diagnostics.split_rhat[j]
        if fit.asymptotics is not None:
            row[f"standardized_{name}"] = fit.asymptotics.standardized[j]
            row[f"delta_n_{name}"] = fit.asymptotics.Delta_n[j]
            row[f"wald_low_{name}"] = fit.asymptotics.wald_ci[j, 0]
            row[f"wald_high_{name}"] = fit.asymptotics.wald_ci[j, 1]
    row["acceptance"] = fit.diagnostics.acceptance
    row["stuck"] = any(chain.stuck for chain in fit.chains)
    row["divergence_warnings"] = fit.divergence_warnings
    if fit.asymptotics is not None:
        row["S_positive"] = fit.asymptotics.S_positive
        row["V_clipped"] = fit.asymptotics.V_clipped
    return row


def _chain_artifacts(response: ReplicationResponse, task: ReplicationTask, fit: Fit, config_hash: str) -> None:
    for c, chain in enumerate(fit.chains):
        stem = f"chains/{task.slug}_r{task.index}_c{c}"
        response.artifacts[f"{stem}.csv"] = chain_to_csv(chain)
        sidecar = {
            "chain": chain.metadata(),
            "config_hash": config_hash,
            "diagnostics": fit.diagnostics.dict(),
            "label": task.label,
        }
        response.artifacts[f"{stem}.json"] = json.dumps(sidecar, indent=2, sort_keys=True) + "\n"


def _load_or_simulate(cfg: ExperimentConfig, task: ReplicationTask) -> Dataset:
    if cfg.study.data is not None:
        return Dataset.from_csv(cfg.study.data)
    contaminant = cfg.study.contaminant
    return simulate_contaminated(
        cfg.family(),
        cfg.model.theta0,
        cfg.study.n,
        task.contamination,
        contaminant.build() if contaminant else None,
        contaminant.theta if contaminant else None,
        make_rng(cfg.study.master_seed, task.index),
    )


def _run_fit(cfg: ExperimentConfig, task: ReplicationTask, response: ReplicationResponse, jobs: int) -> None:
    family = cfg.family()
    data = _load_or_simulate(cfg, task)
    # with loaded data the report is taken at the point estimate
    theta0 = None if cfg.study.data is not None else family.param(cfg.model.theta0)
    fit = fit_posterior(cfg, DivergenceSpec(task.gamma), data, (task.index,), theta0, jobs)
    if theta0 is None:
        theta0 = fit.reports[0].point
        criterion = fit.posterior.criterion
        fit.asymptotics = asymptotic_report(criterion, data, theta0, theta0, cfg.study.epsilon)

    details = {
        "gamma": task.gamma,
        "escort": fit.escort.tolist(),
        "estimates": [report.dict() for report in fit.reports],
        "mode": fit.mode.tolist(),
        "dual_estimate": fit.dual_estimate.tolist(),
        "diagnostics": fit.diagnostics.dict(),
        "asymptotics": fit.asymptotics.dict(),
    }
    if task.keep_chains:
        _chain_artifacts(response, task, fit, cfg.config_hash())
    response.record_result(_fit_row(fit, family, theta0, task, data.n), details)


def _run_duality(cfg: ExperimentConfig, task: ReplicationTask, response: ReplicationResponse) -> None:
    family = cfg.family()
    theta0 = family.param(cfg.model.theta0)
    criterion = DualCriterion(family, DivergenceSpec(task.gamma), task.theta, cfg.quadrature)
    result = criterion.dual_sup_check(task.theta, theta0, cfg.optimizer)
    row = {
        "gamma": task.gamma,
        "theta": task.theta[0],
        "sup_value": result.sup_value,
        "divergence": result.divergence,
        "gap": result.gap,
        "argmax": result.argmax[0],
        "argmax_error": abs(result.argmax[0] - theta0[0]),
        "evaluations": result.evaluations,
    }
    response.record_result(row, result.dict())


def _run_sequential(cfg: ExperimentConfig, task: ReplicationTask, response: ReplicationResponse, jobs: int) -> None:
    family = cfg.family()
    data = _load_or_simulate(cfg, task)
    first, second = data.split(cfg.study.split)
    if first.n < 1:
        raise DomainError(f"study.split = {cfg.study.split} leaves the first batch empty")
    escort = select_escort(cfg.escort.mode, family, data, cfg.escort.value, cfg.model.theta0, cfg.optimizer)
    criterion = DualCriterion(family, DivergenceSpec(task.gamma), escort, cfg.quadrature)
    full = PhiPosterior(criterion, data, cfg.prior)
    sequential = PhiPosterior(criterion, first, cfg.prior).sequential_update(second)

    scale = proposal_scale(full)
    rng = make_rng(cfg.study.master_seed, task.index, SEQUENTIAL_SLOT)
    bounds = family.bounds
    points = np.clip(
        escort + 5.0 * scale * rng.uniform(-1.0, 1.0, (SEQUENTIAL_TEST_POINTS, family.param_dim)),
        bounds[:, 0],
        bounds[:, 1],
    )
    differences = np.array([full(point) - sequential(point) for point in points])
    differences = differences[np.isfinite(differences)]

    seed = cfg.study.master_seed
    full_report = estimate(sample_posterior(full, cfg.mcmc, seed, (task.index,), jobs))
    seq_report = estimate(sample_posterior(sequential, cfg.mcmc, seed, (task.index, SEQUENTIAL_SLOT), jobs))

    row = {"gamma": task.gamma, "n": data.n, "n_first": first.n, "log_density_spread": float(np.ptp(differences))}
    for j, name in enumerate(family.param_names):
        gap = abs(full_report.point[j] - seq_report.point[j])
        allowed = 3.0 * np.hypot(full_report.mc_se[j], seq_report.mc_se[j])
        row[f"mean_full_{name}"] = full_report.point[j]
        row[f"mean_sequential_{name}"] = seq_report.point[j]
        row[f"mc_se_full_{name}"] = full_report.mc_se[j]
        row[f"mc_se_sequential_{name}"] = seq_report.mc_se[j]
        row[f"agree_{name}"] = bool(gap <= allowed)
    response.record_result(row, {"full": full_report.dict(), "sequential": seq_report.dict()})


def run_replication(cfg: ExperimentConfig, task: ReplicationTask, jobs: int = 1) -> ReplicationResponse:
    """
    Execute one replication; a failure is recorded on the response instead of being raised

    Args:
        cfg: validated configuration
        task: replication to run
        jobs: concurrent chains inside the replication

    Returns:
        ReplicationResponse: row or error
    """
    response = ReplicationResponse(task.index, task.label)
    try:
        if cfg.study.kind == "DualitySanity":
            _run_duality(cfg, task, response)
        elif cfg.study.kind == "SequentialUpdate":
            _run_sequential(cfg, task, response, jobs)
        else:
            _run_fit(cfg, task, response, jobs)
    except (PhiBayesError, np.linalg.LinAlgError) as e:
        logger.error(f"Replication {task.index} ({task.label}) failed: {e}")
        response.record_error(e)
    return response


def study_tasks(cfg: ExperimentConfig) -> list[ReplicationTask]:
    """
    Replications of the configured study in output order: divergence, then contamination, then index
    """
    study = cfg.study
    gammas = [divergence.gamma for divergence in cfg.divergences]
    if study.kind == "SingleFit":
        return [ReplicationTask(0, gamma, study.contamination[0], keep_chains=True) for gamma in gammas]
    if study.kind == "DualitySanity":
        return [
            ReplicationTask(i, gamma, theta=(theta,))
            for gamma in gammas
            for i, theta in enumerate(study.duality_thetas)
        ]
    if study.kind == "SequentialUpdate":
        return [ReplicationTask(r, gamma) for gamma in gammas for r in range(study.replications)]
    return [
        ReplicationTask(r, gamma, eps, keep_chains=r == 0)
        for gamma in gammas
        for eps in study.contamination
        for r in range(study.replications)
    ]


def _ks(values: pd.Series) -> tuple[float, float]:
    values = values.dropna().to_numpy(dtype=float)
    if values.size < 2:
        return np.nan, np.nan
    result = stats.kstest(values, "norm")
    return float(result.statistic), float(result.pvalue)


def aggregate(rows: pd.DataFrame, cfg: ExperimentConfig) -> list[dict]:
    """
    Per-cell summary of the rows: bias, sd and RMSE of the point estimates, coverage rate, moments and KS
    test of the standardized statistics, duality gaps or sequential agreement, failure counts

    Args:
        rows: one row per replication, failed ones included
        cfg: validated configuration

    Returns:
        list: one summary dict per cell, in row order
    """
    family = cfg.family()
    theta0 = np.asarray(cfg.model.theta0, dtype=float)
    primary = cfg.study.loss_specs()[0].name
    cells = []
    for label, cell in rows.groupby("label", sort=False):
        ok = cell[~cell["failed"].astype(bool)]
        summary = {"label": label, "replications": int(len(cell)), "failures": int(len(cell) - len(ok))}
        if ok.empty:
            cells.append(summary)
            continue
        if cfg.study.kind == "DualitySanity":
            summary["max_gap"] = float(ok["gap"].max())
            summary["max_argmax_error"] = float(ok["argmax_error"].max())
            cells.append(summary)
            continue
        for j, name in enumerate(family.param_names):
            if cfg.study.kind == "SequentialUpdate":
                summary[f"agreement_rate_{name}"] = float(ok[f"agree_{name}"].astype(bool).mean())
                continue
            errors = ok[f"{primary}_{name}"].to_numpy(dtype=float) - theta0[j]
            summary[f"bias_{name}"] = float(np.mean(errors))
            summary[f"sd_{name}"] = float(np.std(errors, ddof=1)) if errors.size > 1 else np.nan
            summary[f"rmse_{name}"] = float(np.sqrt(np.mean(errors**2)))
            summary[f"dual_bias_{name}"] = float(np.mean(ok[f"dual_{name}"].to_numpy(dtype=float) - theta0[j]))
            summary[f"coverage_{name}"] = float(ok[f"covered_{name}"].astype(bool).mean())
            column = f"standardized_{name}"
            if column in ok:
                summary[f"standardized_mean_{name}"] = float(ok[column].mean())
                summary[f"standardized_var_{name}"] = float(ok[column].var(ddof=1))
                summary[f"ks_stat_{name}"], summary[f"ks_pvalue_{name}"] = _ks(ok[column])
        if cfg.study.kind == "SequentialUpdate":
            summary["max_log_density_spread"] = float(ok["log_density_spread"].max())
        else:
            summary["mean_acceptance"] = float(ok["acceptance"].mean())
        cells.append(summary)
    return cells


@dataclass
class StudyOutcome:
    run_dir: Path
    rows: pd.DataFrame
    summary: dict
    responses: list[ReplicationResponse]

    @property
    def failures(self) -> int:
        return sum(response.failed for response in self.responses)


def _nan_to_none(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _nan_to_none(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_nan_to_none(item) for item in value]
    return value


async def execute(
    cfg: ExperimentConfig, jobs: int = 1, gnuplot: bool = False, timestamp: str | None = None
) -> StudyOutcome:
    """
    Run every replication of the configured study and write rows.csv, summary.json and the chain files

    Args:
        cfg: validated configuration
        jobs: worker processes
        gnuplot: emit plot.gp
        timestamp: run directory timestamp

    Returns:
        StudyOutcome: run directory, rows and summary
    """
    tasks = study_tasks(cfg)
    chain_jobs = jobs if len(tasks) == 1 else 1
    async with StudyRunner(cfg, jobs if len(tasks) > 1 else 1, gnuplot, timestamp) as runner:
        responses = await runner.run(run_replication, tasks, chain_jobs)
        rows = pd.DataFrame([response.row() for response in responses])
        summary = {
            "study": cfg.study.kind,
            "config_hash": runner.config_hash,
            "master_seed": cfg.study.master_seed,
            "config": cfg.to_dict(),
            "replications": len(responses),
            "failures": sum(response.failed for response in responses),
            "cells": aggregate(rows, cfg),
        }
        if cfg.study.kind in ("SingleFit", "DualitySanity"):
            summary["details"] = [response.details for response in responses]
        rows.insert(0, "config_hash", runner.config_hash)
        summary = _nan_to_none(json.loads(json.dumps(summary, default=_json_default)))
        await runner.emit(rows, summary)
    return StudyOutcome(run_dir=runner.run_dir, rows=rows, summary=summary, responses=responses)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def run_single_fit(cfg: ExperimentConfig, jobs: int = 1, gnuplot: bool = False) -> StudyOutcome:
    """
    Fit the configured model once per divergence and write the run artifacts
    """
    if cfg.study.kind != "SingleFit":
        cfg = replace(cfg, study=replace(cfg.study, kind="SingleFit"))
    return asyncio.run(execute(cfg, jobs, gnuplot))


def run_study(cfg: ExperimentConfig, jobs: int = 1, gnuplot: bool = False) -> StudyOutcome:
    """
    Run the configured study and write the run artifacts
    """
    return asyncio.run(execute(cfg, jobs, gnuplot))
