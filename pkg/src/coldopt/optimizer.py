"""Derivative-free constrained local optimisation.

Maximises a scalar objective subject to c(g) >= 0 using COBYLA (Powell's
linear-approximation trust-region method, via scipy). Every evaluation is
recorded and the returned point is the best feasible-within-tolerance point
actually evaluated, so results never regress below a feasible start and always
satisfy the constraint up to ``tol_c``.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize


class InfeasibleStartError(ValueError):
    """The start point violates the constraint beyond tolerance."""


class NonFiniteEvaluationError(RuntimeError):
    def __init__(self, point):
        super().__init__(f"non-finite function value at {point}")
        self.point = point


@dataclass
class OptProblem:
    objective: Callable  # maximised
    constraint: Callable  # feasible iff >= 0
    dim: int


@dataclass
class OptConfig:
    rho_begin: float = 0.5
    rho_end: float = 1e-6
    max_evals: Optional[int] = None  # default 500 * D
    tol_c: float = 1e-6

    def budget(self, dim):
        n = self.max_evals if self.max_evals is not None else 500 * dim
        if n < dim + 2:
            raise ValueError(f"max_evals must be at least D + 2 = {dim + 2}")
        if not 0 < self.rho_end <= self.rho_begin:
            raise ValueError("require 0 < rho_end <= rho_begin")
        return n


@dataclass
class OptResult:
    point: np.ndarray
    objective: float
    constraint: float
    n_evals: int
    reason: str  # "radius converged" | "eval budget" | "stall"


class _BudgetExhausted(Exception):
    pass


def minimize_cobyla(problem, start, config=None):
    """Run one constrained local optimisation from a feasible start."""
    config = config or OptConfig()
    start = np.asarray(start, dtype=np.float64)
    if start.shape != (problem.dim,):
        raise ValueError(f"start must be a {problem.dim}-vector")
    budget = config.budget(problem.dim)

    c0 = problem.constraint(start)
    if c0 < -config.tol_c:
        raise InfeasibleStartError(
            f"constraint at start is {c0:.6g}, below -tol_c = {-config.tol_c:.6g}"
        )

    evals = []  # (point, objective, constraint)

    def record(x):
        f = float(problem.objective(x))
        c = float(problem.constraint(x))
        if not math.isfinite(f) or (not math.isfinite(c) and c != math.inf):
            raise NonFiniteEvaluationError(np.array(x, copy=True))
        evals.append((np.array(x, copy=True), f, c))
        return f, c

    def neg_objective(x):
        if len(evals) >= budget:
            raise _BudgetExhausted
        f, _ = record(x)
        return -f

    constraints = []
    if math.isfinite(problem.constraint(start)):
        constraints = [{"type": "ineq", "fun": problem.constraint}]

    reason = "stall"
    try:
        res = minimize(
            neg_objective,
            start,
            method="COBYLA",
            constraints=constraints,
            tol=config.rho_end,
            options={
                "rhobeg": config.rho_begin,
                "maxiter": budget,
                "catol": config.tol_c,
            },
        )
        if res.status == 1:
            reason = "radius converged"
        elif res.status == 2:
            reason = "eval budget"
    except _BudgetExhausted:
        reason = "eval budget"

    feasible = [(x, f, c) for x, f, c in evals if c >= -config.tol_c]
    if not feasible:  # start was feasible and is always evaluated first
        x, f, c = evals[0] if evals else (start, float(problem.objective(start)), c0)
        return OptResult(x, f, float(c), len(evals), reason)
    x, f, c = max(feasible, key=lambda e: e[1])
    return OptResult(x, f, float(c), len(evals), reason)


def maximize_constrained(score, density, eta, start, config=None):
    """Maximise ``score`` subject to density(g) >= eta.

    ``eta = -inf`` disables the constraint (the feasible set is everything).
    """
    start = np.asarray(start, dtype=np.float64)
    if eta == -math.inf:
        constraint = lambda g: math.inf
    else:
        constraint = lambda g: float(density(g)) - eta
    problem = OptProblem(objective=score, constraint=constraint, dim=start.shape[0])
    return minimize_cobyla(problem, start, config)
