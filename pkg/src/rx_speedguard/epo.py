"""Exact penalty optimization: one fixed penalty factor instead of a min-max game.

The actor minimizes ``-Q + kappa * max(0, Q_c - threshold)``. Once kappa is
at least the largest optimal multiplier of the constrained problem, the
penalized and constrained problems share their minimizers;
``verify_exact_penalty`` and ``penalty_suite`` check that claim numerically on
small convex problems.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import approx_fprime

from .backbone import OffPolicyAgent, Penalty
from .buffer import Batch
from .config import HyperConfig

logger = logging.getLogger(__name__)

# Forward-difference step for gradients that are not supplied.
FD_STEP = 1.4901161193847656e-08


class PenaltyDivergenceError(Exception):
    """Raised when a penalty-method iterate leaves its search box."""

    pass


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty factor kappa and the state-wise cost threshold."""

    factor: float
    threshold: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.factor) and self.factor >= 0.0):
            raise ValueError(f"penalty factor must be >= 0, got {self.factor}")


def exact_penalty(config: PenaltyConfig) -> Penalty:
    """kappa * relu(Q_c - threshold) with subgradient 0 at the kink."""

    def penalty(qc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        active = qc > config.threshold
        return config.factor * np.maximum(qc - config.threshold, 0.0), config.factor * active

    return penalty


class EPOAgent(OffPolicyAgent):
    """TD3 with the exact ReLU penalty on the cost critic in the actor loss."""

    name = "epo"

    def __init__(
        self, config: HyperConfig, obs_dim: int, act_dim: int, rng: np.random.Generator
    ) -> None:
        super().__init__(config, obs_dim, act_dim, rng)
        self.penalty = PenaltyConfig(factor=config.penalty_factor, threshold=config.cost_limit)
        if self.penalty.factor == 0.0:
            logger.info("penalty_factor is 0: the actor update is plain TD3")

    def actor_penalty(self, obs: np.ndarray) -> Penalty:
        return exact_penalty(self.penalty)

    def epo_actor_loss(self, batch: Batch) -> float:
        """Adam step on mean(-Q1(s, pi(s)) + kappa max(0, Q_c(s, pi(s)) - threshold))."""
        return self.core.step_actor(batch.obs, self.actor_penalty(batch.obs))

    def update_policy(self, batch: Batch) -> Dict[str, float]:
        return {"actor": self.epo_actor_loss(batch)}


@dataclass(frozen=True)
class PenaltyResult:
    """Best iterate of a penalized minimization."""

    x: np.ndarray
    feasible: bool
    objective: float
    violation: float


def _constraints(g: Callable[[np.ndarray], object], x: np.ndarray) -> np.ndarray:
    return np.atleast_1d(np.asarray(g(x), dtype=np.float64))


def _numeric_jacobian(g: Callable[[np.ndarray], object], x: np.ndarray, m: int) -> np.ndarray:
    rows = [
        approx_fprime(x, lambda z, i=i: float(_constraints(g, z)[i]), FD_STEP) for i in range(m)
    ]
    return np.vstack(rows)


def verify_exact_penalty(
    f: Callable[[np.ndarray], float],
    g: Callable[[np.ndarray], object],
    kappa: float,
    x0: Sequence[float],
    grad_f: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    jac_g: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    bound: float = 100.0,
    iterations: int = 20_000,
    step0: float = 0.1,
    final_step: float = 1e-7,
    feasibility_tol: float = 1e-6,
) -> PenaltyResult:
    """Minimize f(x) + kappa * sum_i max(0, g_i(x)) by subgradient descent.

    Step sizes decay geometrically from ``step0`` to ``final_step``; the
    iterate with the lowest penalized objective is returned.

    Args:
        f: Objective
        g: Constraint function(s); ``g_i(x) <= 0`` is feasible
        kappa: Penalty factor
        x0: Starting point
        grad_f: Gradient of f (finite differences when omitted)
        jac_g: Jacobian of g, one row per constraint (finite differences when omitted)
        bound: Iterates must stay inside the box [-bound, bound]^n
        iterations: Number of subgradient steps
        step0: First step size
        final_step: Last step size
        feasibility_tol: Largest constraint value still counted as feasible

    Returns:
        The best iterate, its feasibility flag, objective and largest violation

    Raises:
        PenaltyDivergenceError: If an iterate leaves the box or stops being finite
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if iterations < 1 or not 0 < final_step <= step0:
        raise ValueError("Need iterations >= 1 and 0 < final_step <= step0")

    x = np.array(x0, dtype=np.float64).reshape(-1)
    m = _constraints(g, x).shape[0]

    def gradient_f(z: np.ndarray) -> np.ndarray:
        if grad_f is not None:
            return np.asarray(grad_f(z), dtype=np.float64)
        return approx_fprime(z, f, FD_STEP)

    def jacobian_g(z: np.ndarray) -> np.ndarray:
        if jac_g is not None:
            return np.atleast_2d(np.asarray(jac_g(z), dtype=np.float64))
        return _numeric_jacobian(g, z, m)

    def penalized(z: np.ndarray) -> float:
        return float(f(z)) + kappa * float(np.sum(np.maximum(_constraints(g, z), 0.0)))

    decay = (final_step / step0) ** (1.0 / max(iterations - 1, 1))
    step = step0
    best_x, best_value = x.copy(), penalized(x)

    for k in range(iterations):
        active = _constraints(g, x) > 0.0
        direction = gradient_f(x)
        if kappa > 0.0 and np.any(active):
            direction = direction + kappa * np.sum(jacobian_g(x)[active], axis=0)
        x = x - step * direction
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > bound):
            raise PenaltyDivergenceError(
                f"Iterate left the box [-{bound}, {bound}] at iteration {k}: {x}"
            )
        value = penalized(x)
        if value < best_value:
            best_x, best_value = x.copy(), value
        step *= decay

    violation = float(np.max(_constraints(g, best_x)))
    return PenaltyResult(
        x=best_x,
        feasible=violation <= feasibility_tol,
        objective=float(f(best_x)),
        violation=max(violation, 0.0),
    )


@dataclass(frozen=True)
class QuadraticProblem:
    """min 0.5 x^T P x + q^T x  s.t.  a^T x <= b, with known solution and multiplier."""

    hessian: np.ndarray
    linear: np.ndarray
    normal: np.ndarray
    offset: float
    solution: np.ndarray
    multiplier: float

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hessian @ x + self.linear @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.hessian @ x + self.linear

    def constraint(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.normal @ x - self.offset])

    def constraint_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.normal[None, :]

    def penalized_minimizer(self, kappa: float) -> np.ndarray:
        """Closed-form minimizer of the penalized problem when kappa < multiplier."""
        return self.solution + np.linalg.solve(self.hessian, self.normal) * (
            self.multiplier - kappa
        )


def random_quadratic_problem(
    rng: np.random.Generator, dim: int = 2, multiplier_range: Sequence[float] = (0.5, 4.5)
) -> QuadraticProblem:
    """Strongly convex QP whose single linear constraint is active at the optimum.

    The optimum x* and multiplier lambda* are drawn first; the linear term is
    then chosen so that P x* + q + lambda* a = 0 holds exactly.
    """
    scale = rng.normal(scale=0.3, size=(dim, dim))
    hessian = scale @ scale.T + np.eye(dim)
    normal = rng.normal(size=dim)
    normal /= np.linalg.norm(normal)
    solution = rng.uniform(-1.0, 1.0, size=dim)
    multiplier = float(rng.uniform(*multiplier_range))
    linear = -hessian @ solution - multiplier * normal
    return QuadraticProblem(
        hessian=hessian,
        linear=linear,
        normal=normal,
        offset=float(normal @ solution),
        solution=solution,
        multiplier=multiplier,
    )


@dataclass(frozen=True)
class SuiteResult:
    index: int
    kappa: float
    multiplier: float
    error: float
    violation: float
    feasible: bool


def penalty_suite(
    n_problems: int = 20,
    seed: int = 0,
    kappa_scale: float = 2.0,
    kappa: Optional[float] = None,
    dim: int = 2,
    iterations: int = 20_000,
) -> List[SuiteResult]:
    """Solve random single-constraint QPs with the penalty method.

    Args:
        n_problems: Number of problems
        seed: Seed of the problem generator
        kappa_scale: kappa = kappa_scale * lambda* per problem (unless ``kappa`` is set)
        kappa: Fixed penalty factor for every problem
        dim: Problem dimension
        iterations: Subgradient steps per problem

    Returns:
        One result per problem; ``error`` is the max-norm distance to the constrained optimum
    """
    rng = np.random.default_rng(seed)
    results = []
    for index in range(n_problems):
        problem = random_quadratic_problem(rng, dim)
        factor = kappa if kappa is not None else kappa_scale * problem.multiplier
        outcome = verify_exact_penalty(
            problem.objective,
            problem.constraint,
            factor,
            np.zeros(dim),
            grad_f=problem.gradient,
            jac_g=problem.constraint_jacobian,
            iterations=iterations,
        )
        results.append(
            SuiteResult(
                index=index,
                kappa=factor,
                multiplier=problem.multiplier,
                error=float(np.max(np.abs(outcome.x - problem.solution))),
                violation=outcome.violation,
                feasible=outcome.feasible,
            )
        )
        logger.debug(
            f"QP {index}: kappa={factor:.3f} lambda*={problem.multiplier:.3f} "
            f"error={results[-1].error:.2e} violation={outcome.violation:.2e}"
        )
    return results
