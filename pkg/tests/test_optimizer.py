import math

import numpy as np
import pytest

from coldopt.density import build_density_model
from coldopt.optimizer import (
    InfeasibleStartError,
    OptConfig,
    OptProblem,
    maximize_constrained,
    minimize_cobyla,
)


def ball_problem(a, r):
    """Maximise -||z - a||^2 over the ball ||z|| <= r."""
    return OptProblem(
        objective=lambda z: -float(np.sum((z - a) ** 2)),
        constraint=lambda z: r**2 - float(np.sum(z**2)),
        dim=len(a),
    )


class TestMinimizeCobyla:
    def test_projection_onto_ball(self, rng):
        r = 1.0
        for _ in range(5):
            a = rng.normal(0, 2, size=2)
            a *= (r + rng.uniform(0.5, 2.0)) / np.linalg.norm(a)  # ensure ||a|| > r
            res = minimize_cobyla(ball_problem(a, r), np.zeros(2))
            expected = a * (r / np.linalg.norm(a))
            assert np.linalg.norm(res.point - expected) < 1e-3
            assert res.constraint >= -1e-6

    def test_unconstrained_quadratic_vertex(self, rng):
        a = rng.normal(size=3)
        problem = OptProblem(
            objective=lambda z: -float(np.sum((z - a) ** 2)),
            constraint=lambda z: 1.0,  # always satisfied
            dim=3,
        )
        res = minimize_cobyla(problem, np.zeros(3))
        assert np.linalg.norm(res.point - a) < 1e-4

    def test_start_at_optimum_stays(self):
        a = np.array([0.5, -0.5])
        problem = ball_problem(a, 2.0)  # a inside the ball
        res = minimize_cobyla(problem, a)
        assert abs(res.objective) < 1e-6

    def test_infeasible_start_rejected(self):
        problem = ball_problem(np.array([3.0, 0.0]), 1.0)
        with pytest.raises(InfeasibleStartError):
            minimize_cobyla(problem, np.array([2.0, 0.0]))

    def test_budget_respected(self):
        calls = []
        problem = OptProblem(
            objective=lambda z: (calls.append(1), -float(np.sum(z**2)))[1],
            constraint=lambda z: 1.0,
            dim=2,
        )
        cfg = OptConfig(max_evals=10)
        res = minimize_cobyla(problem, np.array([5.0, 5.0]), cfg)
        assert res.n_evals <= 10
        assert len(calls) <= 10

    def test_no_feasible_regression(self, rng):
        problem = ball_problem(rng.normal(size=2) * 3, 1.0)
        start = np.array([0.1, 0.2])
        res = minimize_cobyla(problem, start)
        assert res.objective >= problem.objective(start) - 1e-9

    def test_deterministic(self, rng):
        a = rng.normal(size=2) * 2
        problem = ball_problem(a, 1.0)
        r1 = minimize_cobyla(problem, np.zeros(2))
        r2 = minimize_cobyla(problem, np.zeros(2))
        np.testing.assert_array_equal(r1.point, r2.point)
        assert r1.n_evals == r2.n_evals
        assert r1.reason == r2.reason

    def test_termination_reasons(self):
        problem = ball_problem(np.array([2.0, 0.0]), 1.0)
        converged = minimize_cobyla(problem, np.zeros(2))
        assert converged.reason == "radius converged"
        budget = minimize_cobyla(problem, np.zeros(2), OptConfig(max_evals=5))
        assert budget.reason == "eval budget"

    def test_nonfinite_objective_reported(self):
        problem = OptProblem(
            objective=lambda z: math.nan,
            constraint=lambda z: 1.0,
            dim=2,
        )
        from coldopt.optimizer import NonFiniteEvaluationError

        with pytest.raises(NonFiniteEvaluationError):
            minimize_cobyla(problem, np.zeros(2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptConfig(rho_begin=0.1, rho_end=0.5).budget(2)
        with pytest.raises(ValueError):
            OptConfig(max_evals=2).budget(2)


class TestMaximizeConstrained:
    def test_unit_mahalanobis_disc(self):
        # single standard-normal component: log p(z) >= eta with
        # eta = -log 2pi - 1/2 is the unit disc; max of z_0 on it is (1, 0)
        m = build_density_model(np.zeros((1, 2)), np.ones((1, 2)))
        eta = -math.log(2 * math.pi) - 0.5
        res = maximize_constrained(lambda z: float(z[0]), m.exact_log_density, eta, np.zeros(2))
        assert abs(res.objective - 1.0) < 1e-3
        assert np.linalg.norm(res.point - np.array([1.0, 0.0])) < 1e-3

    def test_inactive_constraint_reduces_to_unconstrained(self, rng):
        m = build_density_model(np.zeros((1, 2)), np.ones((1, 2)))
        a = rng.normal(size=2)
        res = maximize_constrained(
            lambda z: -float(np.sum((z - a) ** 2)), m.exact_log_density, -math.inf, np.zeros(2)
        )
        assert np.linalg.norm(res.point - a) < 1e-4

    def test_tighter_eta_never_scores_higher(self, rng):
        m = build_density_model(np.zeros((1, 2)), np.ones((1, 2)))
        norm = -math.log(2 * math.pi)
        score = lambda z: float(z[0] + 0.1 * z[1])
        start = np.zeros(2)
        prev = math.inf
        for r2 in (4.0, 2.0, 1.0, 0.25):  # shrinking feasible discs
            eta = norm - r2 / 2
            res = maximize_constrained(score, m.exact_log_density, eta, start)
            assert res.objective <= prev + 1e-6
            prev = res.objective

    def test_result_feasible_within_tolerance(self, rng):
        means, variances = rng.normal(size=(5, 2)), rng.uniform(0.5, 1.5, (5, 2))
        m = build_density_model(means, variances)
        start = means[0]
        eta = m.exact_log_density(start) - 1.0
        res = maximize_constrained(lambda z: float(z[0]), m.exact_log_density, eta, start)
        assert m.exact_log_density(res.point) >= eta - 1e-6
