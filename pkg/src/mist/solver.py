"""MM engine: iterated soft-thresholding, single-map GLM updates, diagnostics.

Three fitting paths share one outer driver:

* ``mm_outer``      -- generic loop; each outer step fully minimizes the
                       surrogate with the inner iterated-soft-thresholding
                       solver.
* ``glm_mm_fit``    -- gaussian / logistic / cox; the quadratic surrogate has
                       a closed-form minimizer, so each outer step is a single
                       soft-threshold map.
* ``poisson_mm_fit``-- separable majorizer; each outer step minimizes one
                       strictly convex scalar function per coordinate.

All paths enforce monotone descent of the penalized objective and report a
KKT residual at the returned iterate.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from . import fidelity as fid
from . import penalties as pen
from .exceptions import ConvergenceError, NotGloballyLipschitz, ValidationError
from .fidelity import CoefficientVector, FidelityModel, ResponseFamily
from .penalties import PenaltySpec

#: tolerated objective increase before the descent safeguard kicks in
DESCENT_SLACK = 1e-12
#: safety margin keeping the step strictly inside (0, 2 / curvature)
STEP_SAFETY = 0.95


class Termination(str, enum.Enum):
    COEF_TOL = "coef_tol"
    OBJ_TOL = "obj_tol"
    MAX_ITER = "max_iter"


@dataclass
class SolverConfig:
    """Step, relaxation, and stopping controls.

    ``step_omega=None`` resolves to ``0.95 * 2 / curvature_bound``.
    ``relaxation`` is either a constant in (0, 1] or a callable of the inner
    iteration index.
    """

    step_omega: Optional[float] = None
    relaxation: Union[float, Callable[[int], float]] = 1.0
    coef_tol: float = 1e-6
    obj_tol: float = 1e-6
    max_outer: int = 1_000_000
    inner_tol: float = 1e-8
    inner_max: int = 100_000
    descent_check: bool = True

    def __post_init__(self):
        for name in ("coef_tol", "obj_tol", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.step_omega is not None and not self.step_omega > 0:
            raise ValidationError("step_omega must be > 0 or None (auto)")
        if self.max_outer < 1 or self.inner_max < 1:
            raise ValidationError("iteration caps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        if d.get("step_omega") == "auto":
            d["step_omega"] = None
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "SolverConfig":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class Problem:
    model: FidelityModel
    penalty: PenaltySpec

    def __post_init__(self):
        p = self.model.design.n_cols
        w = self.penalty.weights
        if w is not None and w.shape[0] != p:
            raise ValidationError(
                f"penalty weight length {w.shape[0]} does not match p={p}"
            )


@dataclass
class FitResult:
    coef: CoefficientVector
    objective: float
    trace: np.ndarray
    outer_iters: int
    map_evals: int
    kkt_residual: float
    termination: Termination
    descent_backtracks: int = 0

    def to_dict(self, include_trace: bool = False) -> dict:
        out = {
            "coef": [float(b) for b in self.coef.beta],
            "objective": float(self.objective),
            "iters": int(self.outer_iters),
            "map_evals": int(self.map_evals),
            "kkt": float(self.kkt_residual),
            "termination": self.termination.value,
        }
        if self.coef.intercept is not None:
            out["intercept"] = float(self.coef.intercept)
        if include_trace:
            out["trace"] = [float(v) for v in self.trace]
        return out

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace))

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            coef=CoefficientVector(beta=np.array(d["coef"], dtype=float), intercept=d.get("intercept")),
            objective=float(d["objective"]),
            trace=np.array(d.get("trace", []), dtype=float),
            outer_iters=int(d["iters"]),
            map_evals=int(d["map_evals"]),
            kkt_residual=float(d["kkt"]),
            termination=Termination(d["termination"]),
        )


# -- elementary operations ------------------------------------------------


def soft_threshold(u: float, v: float) -> float:
    """sign(u) * (|u| - v)_+ with s(u, +inf) = 0 exactly."""
    if v < 0:
        raise ValidationError(f"threshold must be >= 0, got {v}")
    return math.copysign(1.0, u) * max(abs(u) - v, 0.0) if abs(u) > v else 0.0


def soft_threshold_vec(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValidationError(f"shape mismatch {u.shape} vs {v.shape}")
    if np.any(v < 0):
        raise ValidationError("thresholds must be >= 0")
    with np.errstate(invalid="ignore"):
        shrunk = np.abs(u) - v
    return np.sign(u) * np.maximum(shrunk, 0.0)


def total_objective(problem: Problem, coef: CoefficientVector) -> float:
    """Fidelity plus penalty plus ridge; intercept is never penalized."""
    spec = problem.penalty
    beta = coef.beta
    value = fid.neg_loglik(problem.model, coef)
    value += float(np.sum(pen.penalty_value_vec(spec, np.abs(beta))))
    value += spec.lam * spec.epsilon * float(beta @ beta)
    return value


def kkt_residual(problem: Problem, coef: CoefficientVector) -> float:
    """Largest violation of the nonsmooth first-order stationarity conditions."""
    spec = problem.penalty
    grad_ll = fid.gradient(problem.model, coef)
    has_int = problem.model.has_intercept
    g = -grad_ll[1:] if has_int else -grad_ll  # gradient of the fidelity term
    beta = coef.beta
    s = g + 2.0 * spec.lam * spec.epsilon * beta
    worst = abs(grad_ll[0]) if has_int else 0.0
    for j in range(beta.shape[0]):
        dj = pen.penalty_derivative(spec, j, abs(beta[j]))
        if beta[j] != 0.0:
            if math.isinf(dj):
                return math.inf  # nonzero coefficient on a pinned coordinate
            r = abs(s[j] + dj * math.copysign(1.0, beta[j]))
        else:
            r = 0.0 if math.isinf(dj) else max(abs(s[j]) - dj, 0.0)
        worst = max(worst, r)
    return worst


# -- inner solver ---------------------------------------------------------


def ist_minimize(
    grad_m: Callable[[np.ndarray], np.ndarray],
    tau: np.ndarray,
    omega: float,
    b0: np.ndarray,
    relaxation: Union[float, Callable[[int], float]] = 1.0,
    inner_tol: float = 1e-8,
    inner_max: int = 100_000,
) -> np.ndarray:
    """Iterated soft-thresholding for min m(b) + sum_j tau_j |b_j|.

    ``omega`` must lie in (0, 2L) where 1/L bounds the Lipschitz constant of
    ``grad_m``; convergence is then a contraction argument.  The relaxed
    update blends each thresholded step with the previous iterate.
    """
    tau = np.asarray(tau, dtype=float)
    b = np.asarray(b0, dtype=float).copy()
    if tau.shape != b.shape:
        raise ValidationError("threshold vector and start must have equal length")
    for n in range(1, inner_max + 1):
        delta = relaxation(n) if callable(relaxation) else relaxation
        d = b - omega * grad_m(b)
        s = soft_threshold_vec(d, omega * tau)
        b_new = b + delta * (s - b)
        resid = float(np.linalg.norm(b_new - b))
        b = b_new
        if resid <= inner_tol:
            return b
    raise ConvergenceError(
        f"inner soft-thresholding did not converge in {inner_max} iterations",
        last_iterate=b,
        residual=resid,
    )


# -- step resolution ------------------------------------------------------


def resolve_step(problem: Problem, config: SolverConfig) -> float:
    """The MM step constant; auto mode backs off from 2 / curvature_bound."""
    if config.step_omega is not None:
        return config.step_omega
    lam_star = fid.curvature_bound(problem.model)
    if lam_star <= 0:
        return 1.0
    return STEP_SAFETY * 2.0 / lam_star


def _penalized_tau(problem: Problem, theta: np.ndarray) -> np.ndarray:
    """Thresholds over the augmented vector (zero for the intercept slot)."""
    has_int = problem.model.has_intercept
    beta = theta[1:] if has_int else theta
    tau = pen.threshold_vector(problem.penalty, beta)
    if has_int:
        tau = np.concatenate([[0.0], tau])
    return tau


def _pinned_mask(problem: Problem) -> Optional[np.ndarray]:
    w = problem.penalty.weights
    if w is None or not np.any(np.isinf(w)):
        return None
    mask = np.isinf(w)
    if problem.model.has_intercept:
        mask = np.concatenate([[False], mask])
    return mask


def _ridge_grad(problem: Problem, theta: np.ndarray) -> np.ndarray:
    """Gradient of lam * eps * ||beta||^2 over the augmented vector."""
    spec = problem.penalty
    if spec.epsilon == 0.0:
        return np.zeros_like(theta)
    g = 2.0 * spec.lam * spec.epsilon * theta
    if problem.model.has_intercept:
        g[0] = 0.0
    return g


# -- GLM single-map update ------------------------------------------------


def glm_map(problem: Problem, theta: np.ndarray, omega: float) -> np.ndarray:
    """One closed-form surrogate minimization for bounded-hessian families."""
    model = problem.model
    spec = problem.penalty
    coef = CoefficientVector.from_augmented(theta, model.has_intercept)
    grad_ll = fid.gradient(model, coef)
    tau = _penalized_tau(problem, theta)
    arg = theta + 0.5 * omega * grad_ll
    new = soft_threshold_vec(arg, 0.5 * omega * tau)
    shrink = 1.0 / (1.0 + omega * spec.lam * spec.epsilon)
    if model.has_intercept:
        out = np.empty_like(theta)
        out[0] = theta[0] + 0.5 * omega * grad_ll[0]
        out[1:] = shrink * new[1:]
        return out
    return shrink * new


def glm_surrogate_value(
    problem: Problem, omega: float, alpha: CoefficientVector, beta: CoefficientVector
) -> float:
    """The quadratic-plus-linearized-penalty surrogate at beta, anchored at alpha."""
    model = problem.model
    spec = problem.penalty
    ta, tb = alpha.augmented(), beta.augmented()
    diff = tb - ta
    value = (
        fid.neg_loglik(model, alpha)
        - float(fid.gradient(model, alpha) @ diff)
        + float(diff @ diff) / omega
    )
    for j in range(alpha.beta.shape[0]):
        aj, bj = abs(alpha.beta[j]), abs(beta.beta[j])
        tau_j = pen.penalty_derivative(spec, j, aj)
        if math.isinf(tau_j):
            if bj != 0.0:
                return math.inf
            # pinned coordinate held at zero contributes nothing
        else:
            gamma_j = pen.penalty_value(spec, j, aj) - tau_j * aj
            value += tau_j * bj + gamma_j
        value += spec.lam * spec.epsilon * beta.beta[j] ** 2
    return value


# -- outer drivers --------------------------------------------------------


def _drive(
    problem: Problem,
    config: SolverConfig,
    start: CoefficientVector,
    step_fn: Callable[[np.ndarray, float], np.ndarray],
    omega: float,
) -> FitResult:
    """Shared outer loop: descent safeguard, stopping control, accounting."""
    model = problem.model
    theta = start.augmented().astype(float)
    pinned = _pinned_mask(problem)
    if pinned is not None:
        theta = theta.copy()
        theta[pinned] = 0.0

    obj = total_objective(problem, CoefficientVector.from_augmented(theta, model.has_intercept))
    trace = [obj]
    map_evals = 0
    backtracks = 0
    termination = Termination.MAX_ITER
    outer = 0

    for outer in range(1, config.max_outer + 1):
        step = omega
        for attempt in range(31):
            theta_new = step_fn(theta, step)
            map_evals += 1
            coef_new = CoefficientVector.from_augmented(theta_new, model.has_intercept)
            obj_new = total_objective(problem, coef_new)
            if not config.descent_check or obj_new <= obj + DESCENT_SLACK:
                break
            if attempt == 30:
                raise ConvergenceError(
                    "objective increased despite 30 step halvings",
                    last_iterate=theta_new,
                    residual=obj_new - obj,
                )
            step *= 0.5
            backtracks += 1

        coef_delta = float(np.linalg.norm(theta_new - theta))
        obj_delta = abs(obj_new - obj)
        theta, obj = theta_new, obj_new
        trace.append(obj)
        if coef_delta < config.coef_tol:
            termination = Termination.COEF_TOL
            break
        if obj_delta < config.obj_tol:
            termination = Termination.OBJ_TOL
            break

    coef = CoefficientVector.from_augmented(theta, model.has_intercept)
    return FitResult(
        coef=coef,
        objective=obj,
        trace=np.array(trace),
        outer_iters=outer,
        map_evals=map_evals,
        kkt_residual=kkt_residual(problem, coef),
        termination=termination,
        descent_backtracks=backtracks,
    )


def glm_mm_fit(problem: Problem, config: SolverConfig, start: CoefficientVector) -> FitResult:
    """Single-soft-threshold-per-iteration MM fit (gaussian/logistic/cox)."""
    if problem.model.family is ResponseFamily.POISSON:
        raise NotGloballyLipschitz("use poisson_mm_fit for the poisson family")
    omega = resolve_step(problem, config)

    def step_fn(theta, w):
        return glm_map(problem, theta, w)

    return _drive(problem, config, start, step_fn, omega)


def mm_outer(problem: Problem, config: SolverConfig, start: CoefficientVector) -> FitResult:
    """Generic MM loop with a full inner soft-thresholding solve per step.

    SCAD/MCP use the strictly majorizing quadratic surrogate; penalties with a
    strictly positive derivative use the plain linearized-penalty surrogate
    with the fidelity kept exact.
    """
    model = problem.model
    spec = problem.penalty
    if model.family is ResponseFamily.POISSON:
        raise NotGloballyLipschitz("use poisson_mm_fit for the poisson family")
    omega = resolve_step(problem, config)
    lam_star = fid.curvature_bound(model)
    ridge_lip = 2.0 * spec.lam * spec.epsilon
    quadratic_path = spec.family in pen.FLAT_TAIL_FAMILIES

    def step_fn(theta, w):
        tau = _penalized_tau(problem, theta)
        if quadratic_path:
            coef = CoefficientVector.from_augmented(theta, model.has_intercept)
            grad_anchor = fid.gradient(model, coef)

            def grad_m(b):
                return -grad_anchor + (2.0 / w) * (b - theta) + _ridge_grad(problem, b)

            lip = 2.0 / w + ridge_lip
        else:

            def grad_m(b):
                c = CoefficientVector.from_augmented(b, model.has_intercept)
                return -fid.gradient(model, c) + _ridge_grad(problem, b)

            lip = lam_star + ridge_lip
        inner_step = STEP_SAFETY * 2.0 / lip if lip > 0 else 1.0
        return ist_minimize(
            grad_m,
            tau,
            inner_step,
            theta,
            relaxation=config.relaxation,
            inner_tol=config.inner_tol,
            inner_max=config.inner_max,
        )

    return _drive(problem, config, start, step_fn, omega)


# -- Poisson componentwise path -------------------------------------------


def _poisson_scalar_min(
    dk: Callable[[float], float], g0: float, tau: float, ridge: float, hint: float
) -> float:
    """Minimize k_j(b) + ridge * b^2 + tau * |b| via safeguarded bisection.

    ``dk`` is the (strictly increasing) derivative of k_j, ``g0 = dk(0)``.
    ``hint`` scales the initial bracket expansion.
    """
    if math.isinf(tau):
        return 0.0
    if abs(g0) <= tau:
        return 0.0

    if g0 > tau:  # minimizer is negative
        sign_term = -tau

        def dphi(b):
            return dk(b) + 2.0 * ridge * b + sign_term

        lo, hi = None, 0.0
        step = max(1.0, abs(hint))
        for _ in range(200):
            cand = hi - step if lo is None else lo - step
            val = dphi(cand)
            if val <= 0.0:
                lo = cand
                break
            hi = cand
            step *= 2.0
        else:
            raise ConvergenceError("poisson scalar bracket expansion failed (negative side)")
    else:  # minimizer is positive
        sign_term = tau

        def dphi(b):
            return dk(b) + 2.0 * ridge * b + sign_term

        lo, hi = 0.0, None
        step = max(1.0, abs(hint))
        for _ in range(200):
            cand = lo + step
            val = dphi(cand)
            if val >= 0.0:
                hi = cand
                break
            lo = cand
            step *= 2.0
        else:
            raise ConvergenceError("poisson scalar bracket expansion failed (positive side)")

    if lo is None or hi is None:
        raise ConvergenceError("poisson scalar bracketing failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * (1.0 + abs(mid)):
            return mid
        if dphi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def poisson_mm_fit(problem: Problem, config: SolverConfig, start: CoefficientVector) -> FitResult:
    """MM fit for the poisson family through the separable majorizer."""
    model = problem.model
    spec = problem.penalty
    if model.family is not ResponseFamily.POISSON:
        raise ValidationError("poisson_mm_fit requires a poisson model")
    theta_w = fid.poisson_weights(model.design)
    xt = model._xt
    has_int = model.has_intercept
    d_off = model.response.offsets
    y = model.response.y
    ridge = spec.lam * spec.epsilon

    # per-coordinate precomputation over rows with a nonzero entry
    cols = []
    for j in range(xt.shape[1]):
        mask = xt[:, j] != 0.0
        cols.append(
            (mask, xt[mask, j], xt[mask, j] / theta_w[mask, j], d_off[mask], y[mask])
        )

    def step_fn(theta, _omega):
        coef = CoefficientVector.from_augmented(theta, has_int)
        eta = model.linear_predictor(coef)
        tau = _penalized_tau(problem, theta)
        out = np.empty_like(theta)
        for j, (mask, xj, ratio, dj, yj) in enumerate(cols):
            if not np.any(mask):
                out[j] = theta[j]
                continue
            base = eta[mask] - ratio * theta[j]

            def dk(b, _r=ratio, _b=base, _x=xj, _d=dj, _y=yj):
                u = _r * b + _b
                eu = fid._guard_exp(u, "poisson coordinate update")
                return float(np.sum(_x * (_d * eu - _y)))

            is_intercept = has_int and j == 0
            tau_j = 0.0 if is_intercept else tau[j]
            ridge_j = 0.0 if is_intercept else ridge
            try:
                out[j] = _poisson_scalar_min(dk, dk(0.0), tau_j, ridge_j, theta[j])
            except ConvergenceError as err:
                raise ConvergenceError(
                    f"poisson coordinate {j} failed to converge: {err}",
                    last_iterate=theta,
                ) from err
        return out

    return _drive(problem, config, start, step_fn, 1.0)


# -- one-step estimator and dispatch --------------------------------------


def fit(problem: Problem, config: SolverConfig, start: CoefficientVector) -> FitResult:
    """Family dispatch to the appropriate single-map MM fit."""
    if problem.model.family is ResponseFamily.POISSON:
        return poisson_mm_fit(problem, config, start)
    return glm_mm_fit(problem, config, start)


def mm_map(problem: Problem, config: SolverConfig) -> Callable[[np.ndarray], np.ndarray]:
    """The per-iteration MM update as a plain map over augmented vectors."""
    if problem.model.family is ResponseFamily.POISSON:
        cfg = config

        def poisson_single(theta):
            one = replace(cfg, max_outer=1, descent_check=False)
            res = poisson_mm_fit(
                problem, one, CoefficientVector.from_augmented(theta, problem.model.has_intercept)
            )
            return res.coef.augmented()

        return poisson_single
    omega = resolve_step(problem, config)
    return lambda theta: glm_map(problem, theta, omega)


def one_step_fit(problem: Problem, config: SolverConfig) -> FitResult:
    """Exactly one full surrogate minimization started at the unpenalized MLE."""
    model = problem.model
    spec = problem.penalty
    mle = fid.fit_mle(model)
    theta0 = mle.augmented()
    obj0 = total_objective(problem, mle)

    if model.family is ResponseFamily.POISSON:
        # one application of the separable-majorizer map plays the role of the
        # single surrogate minimization
        single = replace(config, max_outer=1, descent_check=False)
        res = poisson_mm_fit(problem, single, mle)
        theta1 = res.coef.augmented()
    else:
        tau = _penalized_tau(problem, theta0)
        lam_star = fid.curvature_bound(model)
        lip = lam_star + 2.0 * spec.lam * spec.epsilon

        def grad_m(b):
            c = CoefficientVector.from_augmented(b, model.has_intercept)
            return -fid.gradient(model, c) + _ridge_grad(problem, b)

        inner_step = STEP_SAFETY * 2.0 / lip if lip > 0 else 1.0
        theta1 = ist_minimize(
            grad_m,
            tau,
            inner_step,
            theta0,
            relaxation=config.relaxation,
            inner_tol=config.inner_tol,
            inner_max=config.inner_max,
        )

    coef = CoefficientVector.from_augmented(theta1, model.has_intercept)
    obj1 = total_objective(problem, coef)
    return FitResult(
        coef=coef,
        objective=obj1,
        trace=np.array([obj0, obj1]),
        outer_iters=1,
        map_evals=1,
        kkt_residual=kkt_residual(problem, coef),
        termination=Termination.COEF_TOL,
    )


# -- starting-value presets -----------------------------------------------


def starting_point(problem: Problem, config: SolverConfig, preset: str) -> CoefficientVector:
    """Named starts: 'zero', 'mle', or 'one_step'."""
    model = problem.model
    if preset == "zero":
        return CoefficientVector.zeros(model.design.n_cols, model.has_intercept)
    if preset == "mle":
        return fid.fit_mle(model)
    if preset == "one_step":
        return one_step_fit(problem, config).coef
    raise ValidationError(f"unknown start preset {preset!r}")
