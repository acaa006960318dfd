"""
Damped Gauss-Newton on finite-difference Jacobians.

The residual callback maps a parameter vector to a residual vector, or to
None when the parameters are infeasible (for example an interface iterate that
breaks the strata ordering); infeasible points count as infinite misfit and
are backtracked.

Classes:
    - GaussNewtonResult: Final parameters, misfit history and stopping reason
    - GaussNewton: Levenberg-Marquardt damped Gauss-Newton with backtracking
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import structlog

from core.errors import StrataInversionError
from observability.metrics import strata_gauss_newton_iterations_total

logger = structlog.get_logger(__name__)

ResidualFn = Callable[[np.ndarray], Optional[np.ndarray]]
ProjectFn = Callable[[np.ndarray], np.ndarray]


class JacobianUnavailable(StrataInversionError):
    """Raised when a finite-difference probe lands on an infeasible point."""
    pass


def misfit_of(residual: Optional[np.ndarray]) -> float:
    if residual is None or not np.all(np.isfinite(residual)):
        return float("inf")
    return float(residual @ residual)


@dataclass
class GaussNewtonResult:
    params: np.ndarray
    misfit: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0
    reason: str = ""
    jacobian_rank: int = 0
    accepted_steps: int = 0


class GaussNewton:
    """
    Minimise |r(theta)|^2 by damped Gauss-Newton steps.

    Each step solves the augmented least-squares problem
    [J; sqrt(mu) D] delta = [-r; 0] with D the Jacobian column norms, then
    halves the step until the misfit decreases.

    Stopping reasons:
        converged        misfit <= misfit_tolerance
        small_step       |delta| <= step_tolerance * (1 + |theta|)
        stagnated        relative decrease below stagnation_tolerance, or no
                         decrease after max_backtracks halvings
        line_search_failed  not a single step could be accepted
        max_iterations
    """

    def __init__(
        self,
        residual_fn: ResidualFn,
        fd_steps: Sequence[float],
        scheme: str = "forward",
        lm_damping: float = 1e-6,
        max_iterations: int = 30,
        misfit_tolerance: float = 1e-20,
        step_tolerance: float = 1e-12,
        stagnation_tolerance: float = 1e-6,
        max_backtracks: int = 12,
        project: Optional[ProjectFn] = None,
        threads: int = 1,
        stage: str = "fit",
    ) -> None:
        if scheme not in ("forward", "central"):
            raise ValueError(f"unknown finite-difference scheme '{scheme}'")
        self.residual_fn = residual_fn
        self.fd_steps = np.asarray(fd_steps, dtype=float)
        self.scheme = scheme
        self.lm_damping = lm_damping
        self.max_iterations = max_iterations
        self.misfit_tolerance = misfit_tolerance
        self.step_tolerance = step_tolerance
        self.stagnation_tolerance = stagnation_tolerance
        self.max_backtracks = max_backtracks
        self.project = project or (lambda p: p)
        self.threads = threads
        self.stage = stage

    def _column(self, params: np.ndarray, base: np.ndarray, j: int) -> np.ndarray:
        step = self.fd_steps[j]
        up = params.copy()
        up[j] += step
        r_up = self.residual_fn(up)
        if self.scheme == "forward":
            if r_up is None:
                down = params.copy()
                down[j] -= step
                r_down = self.residual_fn(down)
                if r_down is None:
                    raise JacobianUnavailable(f"parameter {j} cannot be perturbed")
                return (base - r_down) / step
            return (r_up - base) / step
        down = params.copy()
        down[j] -= step
        r_down = self.residual_fn(down)
        if r_up is None or r_down is None:
            raise JacobianUnavailable(f"parameter {j} cannot be perturbed")
        return (r_up - r_down) / (2.0 * step)

    def jacobian(self, params: np.ndarray, base: Optional[np.ndarray] = None) -> np.ndarray:
        """Finite-difference Jacobian; columns are gathered in parameter order."""
        params = np.asarray(params, dtype=float)
        if base is None:
            base = self.residual_fn(params)
            if base is None:
                raise JacobianUnavailable("base point is infeasible")
        cols = range(params.size)
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                columns = list(pool.map(lambda j: self._column(params, base, j), cols))
        else:
            columns = [self._column(params, base, j) for j in cols]
        return np.column_stack(columns)

    def step(self, jac: np.ndarray, residual: np.ndarray) -> np.ndarray:
        scale = np.linalg.norm(jac, axis=0)
        scale[scale == 0] = 1.0
        damping = np.sqrt(self.lm_damping) * np.diag(scale)
        system = np.vstack([jac, damping])
        rhs = np.concatenate([-residual, np.zeros(jac.shape[1])])
        delta, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        return delta

    def run(self, initial: np.ndarray) -> GaussNewtonResult:
        params = self.project(np.asarray(initial, dtype=float).copy())
        residual = self.residual_fn(params)
        misfit = misfit_of(residual)
        if not np.isfinite(misfit):
            raise JacobianUnavailable("initial point is infeasible")

        result = GaussNewtonResult(params=params, misfit=misfit, history=[misfit])
        for iteration in range(1, self.max_iterations + 1):
            result.iterations = iteration
            if misfit <= self.misfit_tolerance:
                result.reason = "converged"
                break
            jac = self.jacobian(params, residual)
            result.jacobian_rank = int(np.linalg.matrix_rank(jac))
            delta = self.step(jac, residual)

            alpha = 1.0
            accepted = False
            for _ in range(self.max_backtracks):
                trial = self.project(params + alpha * delta)
                trial_residual = self.residual_fn(trial)
                trial_misfit = misfit_of(trial_residual)
                if trial_misfit < misfit:
                    accepted = True
                    break
                alpha *= 0.5

            if not accepted:
                result.reason = "line_search_failed" if result.accepted_steps == 0 else "stagnated"
                break

            moved = float(np.linalg.norm(trial - params))
            decrease = (misfit - trial_misfit) / misfit
            params, residual, misfit = trial, trial_residual, trial_misfit
            result.params, result.misfit = params, misfit
            result.history.append(misfit)
            result.accepted_steps += 1
            strata_gauss_newton_iterations_total.labels(stage=self.stage).inc()
            logger.debug(
                "gauss_newton_step_accepted",
                stage=self.stage,
                iteration=iteration,
                misfit=misfit,
                step_length=alpha,
            )

            if misfit <= self.misfit_tolerance:
                result.reason = "converged"
                break
            if moved <= self.step_tolerance * (1.0 + float(np.linalg.norm(params))):
                result.reason = "small_step"
                break
            if decrease < self.stagnation_tolerance:
                result.reason = "stagnated"
                break
        else:
            result.reason = "max_iterations"
        return result
