"""Deterministic synthetic-data generators and solution comparison metrics.

All randomness flows through a counter-based Philox generator seeded
explicitly, with normal variates produced by the inverse-CDF transform, so a
scenario regenerates byte-identically on any platform.  Replicates derive
their seeds as ``seed XOR replicate_index``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .exceptions import ValidationError
from .fidelity import CoefficientVector, DesignMatrix, FidelityModel, Response, ResponseFamily
from .solver import FitResult, Problem, total_objective


class ScenarioFamily(str, enum.Enum):
    LINEAR_EX1 = "linear_ex1"
    LOGISTIC_EX2 = "logistic_ex2"
    COX_SYNTHETIC = "cox_synthetic"


@dataclass(frozen=True)
class SimScenario:
    family: ScenarioFamily
    p: int
    n: int
    seed: int
    q: Optional[int] = None
    rho: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", ScenarioFamily(self.family))
        if self.p < 1 or self.n < 1:
            raise ValidationError("p and n must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        q = self.q
        if q is None:
            if self.family is ScenarioFamily.LINEAR_EX1:
                q = 3 * (self.p // 9)
            else:
                q = self.p
            object.__setattr__(self, "q", q)
        if not 0 <= self.q <= self.p:
            raise ValidationError(f"q must lie in [0, p], got {self.q}")

    def replicate(self, index: int) -> "SimScenario":
        return replace(self, seed=self.seed ^ index)


@dataclass(frozen=True)
class SimDataset:
    design: DesignMatrix
    response: Response
    beta_true: np.ndarray
    scenario: SimScenario


def covariance_ar1(p: int, rho: float) -> np.ndarray:
    """Sigma_{jk} = rho^|j-k|."""
    if not abs(rho) < 1:
        raise ValidationError("AR(1) correlation must satisfy |rho| < 1")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def covariance_equicorr(p: int, rho: float, scale: float = 1.0 / 9.0) -> np.ndarray:
    """scale * P with unit diagonal and constant off-diagonal correlation."""
    if not 0.0 <= rho < 1.0:
        raise ValidationError("equicorrelation must lie in [0, 1)")
    if not scale > 0:
        raise ValidationError("scale must be positive")
    P = np.full((p, p), rho)
    np.fill_diagonal(P, 1.0)
    return scale * P


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.uint64(seed)))


def _standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    # inverse-CDF transform of open-interval uniforms: reproducible anywhere
    u = rng.random(shape)
    return ndtri(np.clip(u, 1e-16, 1.0 - 1e-16))


def _ar1_draw(rng, n, p, rho):
    z = _standard_normal(rng, (n, p))
    if rho == 0.0:
        return z
    chol = np.linalg.cholesky(covariance_ar1(p, rho))
    return z @ chol.T


def _equicorr_draw(rng, n, p, rho, scale):
    # rank-1 decomposition: x = sqrt(rho) z0 1 + sqrt(1 - rho) z, then scaled
    z0 = _standard_normal(rng, (n, 1))
    z = _standard_normal(rng, (n, p))
    x = math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * z
    return math.sqrt(scale) * x


def true_coefficients(scenario: SimScenario) -> np.ndarray:
    fam, p, q = scenario.family, scenario.p, scenario.q
    beta = np.zeros(p)
    if fam is ScenarioFamily.LINEAR_EX1:
        beta[:q] = 3.0
    elif fam is ScenarioFamily.LOGISTIC_EX2:
        j = np.arange(1, q + 1)
        beta[:q] = 3.0 * (-1.0) ** j * np.exp(-2.0 * (j - 1) / 200.0)
    elif fam is ScenarioFamily.COX_SYNTHETIC:
        beta[:q] = 0.5
    return beta


def gen_dataset(scenario: SimScenario) -> SimDataset:
    """Draw one replicate of the scenario; byte-identical per (scenario, seed)."""
    rng = _rng(scenario.seed)
    n, p, rho = scenario.n, scenario.p, scenario.rho
    beta = true_coefficients(scenario)
    fam = scenario.family

    if fam is ScenarioFamily.LINEAR_EX1:
        x = _ar1_draw(rng, n, p, rho)
        noise = _standard_normal(rng, n)
        y = x @ beta + scenario.sigma * noise
        design = DesignMatrix(x, has_intercept=True)
        response = Response(family=ResponseFamily.GAUSSIAN, y=y)
    elif fam is ScenarioFamily.LOGISTIC_EX2:
        x = _equicorr_draw(rng, n, p, rho, scale=1.0 / 9.0)
        prob = 1.0 / (1.0 + np.exp(-(x @ beta)))
        y = (rng.random(n) < prob).astype(float)
        design = DesignMatrix(x, has_intercept=True)
        response = Response(family=ResponseFamily.LOGISTIC, y=y)
    elif fam is ScenarioFamily.COX_SYNTHETIC:
        x = _ar1_draw(rng, n, p, rho)
        rate = np.exp(np.clip(x @ beta, -30.0, 30.0))
        u_event = rng.random(n)
        latent = -np.log(np.clip(1.0 - u_event, 1e-300, 1.0)) / rate
        u_cens = rng.random(n)
        c_scale = _censoring_scale(latent, u_cens, target=0.4)
        cens = c_scale * u_cens
        time = np.minimum(latent, cens)
        status = (latent <= cens).astype(float)
        if not np.any(status == 1.0):
            status[np.argmin(latent)] = 1.0
        design = DesignMatrix(x, has_intercept=False)
        response = Response(family=ResponseFamily.COX, y=status, time=time, status=status)
    else:
        raise ValidationError(f"unknown scenario family {fam}")

    return SimDataset(design=design, response=response, beta_true=beta, scenario=scenario)


def _censoring_scale(latent: np.ndarray, u_cens: np.ndarray, target: float) -> float:
    """Deterministic bisection for the censoring scale hitting the target rate."""
    lo, hi = 1e-6, float(np.max(latent) / max(np.min(u_cens), 1e-12)) + 1.0

    def censored_frac(c):
        return float(np.mean(c * u_cens < latent))

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if censored_frac(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ComparisonRecord:
    norm_diff: float
    obj_a: float
    obj_b: float
    a_leq_b: bool


def compare_solutions(a: FitResult, b: FitResult, problem: Problem) -> ComparisonRecord:
    """Normed coefficient distance and objective ordering of two fits."""
    if a.coef.beta.shape != b.coef.beta.shape:
        raise ValidationError("fits have different coefficient lengths")
    obj_a = total_objective(problem, a.coef)
    obj_b = total_objective(problem, b.coef)
    return ComparisonRecord(
        norm_diff=float(np.linalg.norm(a.coef.beta - b.coef.beta)),
        obj_a=obj_a,
        obj_b=obj_b,
        a_leq_b=obj_a <= obj_b + 1e-10,
    )


def model_from_dataset(dataset: SimDataset) -> FidelityModel:
    return FidelityModel(dataset.design, dataset.response)
