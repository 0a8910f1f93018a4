"""Derivative-free and quasi-Newton drivers with strict evaluation
accounting.

Every figure-of-merit call goes through a counting wrapper that enforces
the evaluation budget, tracks the best value seen, and stops early when a
target value is reached. Runs are deterministic: identical inputs give
bit-identical results.
"""

import json
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import ConstraintViolation, InvalidStart
from .fom import FigureOfMerit
from .hamiltonians import ControlSystem
from .pulses import DcrabBasis, dcrab_field, grape_propagator

STOP_REASONS = ("tolerance", "max_evals", "target_reached",
                "line_search_failure")


@dataclass(frozen=True)
class OptimizerConfig:
    max_evaluations: int = 10000
    target_fom: Optional[float] = None
    xatol: float = 1e-8
    fatol: float = 1e-8
    gtol: float = 1e-8
    max_iterations: Optional[int] = None
    max_seconds: Optional[float] = None


@dataclass
class OptimizationRun:
    best_params: np.ndarray
    best_fom: float
    fom_evaluations: int
    stop_reason: str
    trace: List[Tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "best_params": np.asarray(self.best_params).tolist(),
            "best_fom": self.best_fom,
            "fom_evaluations": self.fom_evaluations,
            "stop_reason": self.stop_reason,
            "trace": [[int(n), float(v)] for n, v in self.trace],
            "wall_time": self.wall_time,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OptimizationRun":
        doc = json.loads(text)
        return cls(np.asarray(doc["best_params"], dtype=float),
                   doc["best_fom"], doc["fom_evaluations"],
                   doc["stop_reason"],
                   [(int(n), float(v)) for n, v in doc["trace"]],
                   doc["wall_time"])


class _BudgetExhausted(Exception):
    pass


class _TargetReached(Exception):
    pass


def _clean_bounds(bounds) -> Optional[np.ndarray]:
    """(n, 2) array with None replaced by +-inf, or None."""
    if bounds is None:
        return None
    out = np.array([[-np.inf if lo is None else lo,
                     np.inf if hi is None else hi] for lo, hi in bounds])
    return out


class _Counter:
    """Wraps an objective with budget enforcement, best-so-far tracking,
    and optional bound projection (for methods that wander outside)."""

    def __init__(self, fn: Callable, config: OptimizerConfig,
                 bounds: Optional[Sequence[Tuple[float, float]]] = None,
                 with_gradient: bool = False, start_count: int = 0):
        self.fn = fn
        self.config = config
        self.bounds = _clean_bounds(bounds)
        self.with_gradient = with_gradient
        self.evals = start_count
        self.best_value = np.inf
        self.best_params = None
        self.trace: List[Tuple[int, float]] = []
        self.started = time.perf_counter()

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return np.asarray(x, dtype=float)
        return np.clip(x, self.bounds[:, 0], self.bounds[:, 1])

    def __call__(self, x):
        if self.evals >= self.config.max_evaluations:
            raise _BudgetExhausted
        if (self.config.max_seconds is not None
                and time.perf_counter() - self.started > self.config.max_seconds):
            raise _BudgetExhausted
        x = self.project(x)
        out = self.fn(x)
        value = out[0] if self.with_gradient else out
        self.evals += 1
        if value < self.best_value:
            self.best_value = float(value)
            self.best_params = x.copy()
            self.trace.append((self.evals, self.best_value))
        if (self.config.target_fom is not None
                and self.best_value <= self.config.target_fom):
            raise _TargetReached
        return out


def _check_start(x0: np.ndarray, bounds):
    if not np.all(np.isfinite(x0)):
        raise InvalidStart("initial point must be finite")
    cleaned = _clean_bounds(bounds)
    if cleaned is not None and (np.any(x0 < cleaned[:, 0])
                                or np.any(x0 > cleaned[:, 1])):
        raise InvalidStart("initial point violates bounds")


def _initial_simplex(x0: np.ndarray, bounds) -> np.ndarray:
    """x0 plus one vertex per coordinate, displaced by 5% of the bound
    range (0.05 when unbounded), flipped inward at a bound."""
    n = x0.size
    bounds = _clean_bounds(bounds)
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        if bounds is not None and np.all(np.isfinite(bounds[i])):
            step = 0.05 * (bounds[i, 1] - bounds[i, 0])
            if x0[i] + step > bounds[i, 1]:
                step = -step
        else:
            step = 0.05
        simplex[i + 1, i] += step
    return simplex


def _finish(counter: _Counter, x0: np.ndarray, stop_reason: str,
            t0: float) -> OptimizationRun:
    best_params = counter.best_params
    if best_params is None:
        best_params = counter.project(np.asarray(x0, dtype=float))
        counter.best_value = np.inf
    return OptimizationRun(best_params, float(counter.best_value),
                           counter.evals, stop_reason, counter.trace,
                           time.perf_counter() - t0)


def nelder_mead(objective: Callable[[np.ndarray], float], x0,
                config: OptimizerConfig,
                bounds: Optional[Sequence[Tuple[float, float]]] = None
                ) -> OptimizationRun:
    """Adaptive-parameter simplex search; bounds are enforced by projecting
    trial points. Stops when both simplex spread and value spread fall
    below xatol/fatol, on budget exhaustion, or at target_fom."""
    t0 = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    _check_start(x0, bounds)
    counter = _Counter(objective, config, bounds)
    x0p = counter.project(x0)
    options = {
        "adaptive": True,
        "xatol": config.xatol,
        "fatol": config.fatol,
        "initial_simplex": _initial_simplex(x0p, bounds),
        "maxfev": 10 ** 9,
        "maxiter": config.max_iterations or 10 ** 9,
    }
    try:
        minimize(counter, x0p, method="Nelder-Mead", options=options)
        stop = "tolerance"
    except _BudgetExhausted:
        stop = "max_evals"
    except _TargetReached:
        stop = "target_reached"
    return _finish(counter, x0, stop, t0)


def quasi_newton(objective_and_gradient: Callable, x0,
                 config: OptimizerConfig,
                 bounds: Optional[Sequence[Tuple[float, float]]] = None
                 ) -> OptimizationRun:
    """Bounded limited-memory BFGS (history size 10). The callable must
    return (value, gradient). Line-search breakdown is reported as its own
    stop reason with the best point retained."""
    t0 = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    _check_start(x0, bounds)
    counter = _Counter(objective_and_gradient, config, bounds,
                       with_gradient=True)
    x0p = counter.project(x0)
    options = {
        "maxcor": 10,
        "ftol": config.fatol,
        "gtol": config.gtol,
        "maxfun": 10 ** 9,
        "maxiter": config.max_iterations or 10 ** 9,
    }
    try:
        result = minimize(counter, x0p, method="L-BFGS-B", jac=True,
                          bounds=bounds, options=options)
        message = result.message if isinstance(result.message, str) \
            else result.message.decode()
        if "ABNORMAL" in message.upper():
            stop = "line_search_failure"
        else:
            stop = "tolerance"
    except _BudgetExhausted:
        stop = "max_evals"
    except _TargetReached:
        stop = "target_reached"
    return _finish(counter, x0, stop, t0)


def dcrab_driver(sys: ControlSystem, fom: FigureOfMerit, total_time: float,
                 n_steps: int, n_frequencies: int, delta_omega: float,
                 config: OptimizerConfig, seed: int,
                 n_super_iterations: int = 3) -> OptimizationRun:
    """Sequential dressed random-basis search on a fixed field grid.

    Each super-iteration draws fresh frequencies from (0, delta_omega],
    optimizes the basis coefficients with the simplex driver, and dresses
    the next stage with the clipped best field so far (reproduced exactly
    by the c0=1 start). best_params of the returned run is the final field
    sampled on the grid; evaluation counts accumulate across stages.
    """
    if total_time <= 0 or n_steps < 1:
        raise ConstraintViolation("need total_time > 0 and n_steps >= 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    domain = sys.amplitude_domain
    dt = total_time / n_steps
    previous = None
    best_field = np.zeros(n_steps)
    best_value = np.inf
    evals = 0
    trace: List[Tuple[int, float]] = []
    stop = "tolerance"
    for stage in range(n_super_iterations):
        basis = DcrabBasis.random(n_frequencies, delta_omega, total_time,
                                  n_steps, rng)
        x0 = np.zeros(basis.n_coefficients)
        if previous is not None:
            x0[0] = 1.0

        def objective(coeffs, basis=basis, previous=previous):
            u = dcrab_field(coeffs, basis, previous, domain)
            return fom.value(grape_propagator(sys, u, dt))

        remaining_time = None if config.max_seconds is None else \
            config.max_seconds - (time.perf_counter() - t0)
        stage_config = OptimizerConfig(
            max_evaluations=config.max_evaluations - evals,
            target_fom=config.target_fom,
            xatol=config.xatol, fatol=config.fatol,
            max_iterations=config.max_iterations,
            max_seconds=remaining_time)
        run = nelder_mead(objective, x0, stage_config)
        evals += run.fom_evaluations
        offset = evals - run.fom_evaluations
        for n, v in run.trace:
            if v < best_value:
                best_value = v
                trace.append((n + offset, v))
        if run.best_fom <= best_value:
            best_value = run.best_fom
            best_field = dcrab_field(run.best_params, basis, previous, domain)
        previous = best_field
        if run.stop_reason in ("target_reached", "max_evals"):
            stop = run.stop_reason
            break
    return OptimizationRun(best_field, float(best_value), evals, stop,
                           trace, time.perf_counter() - t0)
