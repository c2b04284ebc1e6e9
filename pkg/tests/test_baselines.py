"""Classical predictor oracles: closed forms, normal equations, limits."""

import numpy as np
import pytest

from ssmlab.errors import ConfigError
from ssmlab.baselines import (
    BoostedTrees,
    gamma_grid_search,
    gd_iterates,
    gd_pp_iterates,
    gd_train_losses,
    lasso_fit,
    least_squares_fit,
    nn2_train_mse,
    predict_averaging,
    predict_greedy_tree,
    predict_knn,
    predict_least_squares,
)
from ssmlab.tasks import sample_batch, sample_task, task_rng


class TestLeastSquares:
    def test_exact_recovery_at_k_equals_d(self):
        t = sample_task("linear", 5, 5, task_rng(1))
        X, y = t.context()
        xq, yq = t.query()
        pred = predict_least_squares(X, y, xq[None, :])[0]
        assert abs(pred - yq) ** 2 < 1e-10

    def test_minimum_norm_single_example(self):
        w = least_squares_fit(np.array([[1.0, 0.0, 0.0]]), np.array([3.0]))
        assert np.allclose(w, [3.0, 0.0, 0.0], atol=1e-12)

    def test_overdetermined_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((12, 4))
        y = rng.standard_normal(12)
        w = least_squares_fit(X, y)
        w_ne = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.max(np.abs(w - w_ne)) < 1e-8


class TestLasso:
    def test_zero_penalty_matches_least_squares(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((10, 4))
        y = rng.standard_normal(10)
        w = lasso_fit(X, y, lam=0.0)
        assert np.max(np.abs(w - least_squares_fit(X, y))) < 1e-6

    def test_large_penalty_zeroes_solution(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((8, 3))
        y = rng.standard_normal(8)
        lam = np.abs(X.T @ y).max()
        assert np.array_equal(lasso_fit(X, y, lam=lam), np.zeros(3))

    def test_scalar_case_matches_soft_threshold(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((9, 1))
        y = rng.standard_normal(9)
        lam = 0.4
        rho = float(X[:, 0] @ y)
        expect = np.sign(rho) * max(abs(rho) - lam, 0.0) / float(X[:, 0] @ X[:, 0])
        got = lasso_fit(X, y, lam=lam)[0]
        assert abs(got - expect) < 1e-12

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigError):
            lasso_fit(np.ones((2, 1)), np.ones(2), lam=-1.0)


class TestKnnAveraging:
    def test_knn_all_points_when_k_equals_3(self):
        X = np.eye(3)
        y = np.array([1.0, 2.0, 6.0])
        assert predict_knn(X, y, np.zeros((1, 3)))[0] == 3.0

    def test_knn_tie_broken_by_lowest_index(self):
        # four equidistant points; exhaustive oracle: indices 0,1,2 win
        X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([10.0, 20.0, 30.0, 40.0])
        assert predict_knn(X, y, np.zeros((1, 1)))[0] == 20.0

    def test_knn_small_context_averages_available(self):
        X = np.array([[1.0], [2.0]])
        y = np.array([4.0, 8.0])
        assert predict_knn(X, y, np.zeros((1, 1)))[0] == 6.0

    def test_averaging_single_example(self):
        X = np.array([[1.0, 0.0]])
        y = np.array([2.0])
        assert predict_averaging(X, y, np.array([[1.0, 0.0]]))[0] == 2.0


class TestTrees:
    def test_greedy_tree_step_data(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([0.0, 1.0])
        pred = predict_greedy_tree(X, y, np.array([[-2.0], [2.0]]))
        assert np.array_equal(pred, [0.0, 1.0])

    def test_boosting_first_tree_fits_centered_targets(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((30, 3))
        y = rng.standard_normal(30) + 2.0
        model = BoostedTrees(rounds=5).fit(X, y)
        assert abs(model.init - y.mean()) < 1e-12

    def test_boosting_train_mse_nonincreasing(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((40, 4))
        y = rng.standard_normal(40)
        model = BoostedTrees(rounds=20).fit(X, y)
        mses = model.staged_train_mse(X, y)
        assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:]))

    def test_nn2_converges_on_scalar_data(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((16, 1))
        y = 1.5 * X[:, 0]
        assert nn2_train_mse(X, y, r=16, steps=500, lr=5e-2, seed=0) < 1e-3


class TestGdIterates:
    def test_one_step_exact_for_isotropic_covariance(self):
        # X^T X / k = c I makes L = mu, so the optimal step solves the
        # quadratic in one iteration (equals the least-squares solution)
        d = 4
        X = 1.7 * np.eye(d)
        rng = np.random.default_rng(9)
        y = rng.standard_normal(d)
        Xq = rng.standard_normal((3, d))
        preds = gd_iterates(X, y, Xq, steps=3)
        expect = Xq @ least_squares_fit(X, y)
        assert np.max(np.abs(preds[0] - expect)) < 1e-12
        assert np.max(np.abs(preds[2] - expect)) < 1e-12

    def test_converges_to_least_squares(self):
        t = sample_task("linear", 5, 15, task_rng(10))
        X, y = t.context()
        xq, _ = t.query()
        preds = gd_iterates(X, y, xq[None, :], steps=500)
        expect = predict_least_squares(X, y, xq[None, :])[0]
        assert abs(preds[-1, 0] - expect) < 1e-6

    def test_train_loss_monotone_nonincreasing(self):
        t = sample_task("skewed_linear", 5, 12, task_rng(11))
        X, y = t.context()
        losses = gd_train_losses(X, y, steps=60)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_rank_deficient_uses_smallest_nonzero_eigenvalue(self):
        t = sample_task("subspace", 6, 4, task_rng(12))  # trailing dims zero
        X, y = t.context()
        preds = gd_iterates(X, y, t.xs[-1:][:, :], steps=50)
        assert np.all(np.isfinite(preds))

    def test_steps_validated(self):
        with pytest.raises(ConfigError):
            gd_iterates(np.eye(2), np.ones(2), np.ones((1, 2)), steps=0)


class TestGdPlusPlus:
    def test_gamma_zero_equals_gd_bitwise(self):
        t = sample_task("skewed_linear", 5, 10, task_rng(13))
        X, y = t.context()
        Xq = t.xs[-1:]
        a = gd_iterates(X, y, Xq, steps=24)
        b = gd_pp_iterates(X, y, Xq, steps=24, gamma=0.0)
        assert np.array_equal(a, b)

    def test_preconditioning_helps_on_skewed_tasks(self):
        tasks = sample_batch("skewed_linear", 5, 14, 64, seed=14)
        steps = 24
        best_gamma, rows = gamma_grid_search(tasks, steps, grid=np.logspace(-4, 0, 12))
        gd_err = []
        gdpp_err = []
        for t in tasks:
            X, y = t.context()
            xq, yq = t.query()
            gd_err.append((gd_iterates(X, y, xq[None, :], steps)[-1, 0] - yq) ** 2)
            gdpp_err.append(
                (gd_pp_iterates(X, y, xq[None, :], steps, best_gamma)[-1, 0] - yq) ** 2
            )
        assert np.mean(gdpp_err) <= np.mean(gd_err)

    def test_grid_search_returns_table(self):
        tasks = sample_batch("skewed_linear", 4, 8, 8, seed=15)
        best, rows = gamma_grid_search(tasks, steps=8)
        assert len(rows) == 10
        assert any(abs(best - g) < 1e-18 for g, _ in rows)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ConfigError):
            gd_pp_iterates(np.eye(2), np.ones(2), np.ones((1, 2)), 4, gamma=-0.1)


def test_predictors_deterministic():
    t = sample_task("linear", 4, 9, task_rng(16))
    X, y = t.context()
    xq = t.xs[-1:]
    from ssmlab.baselines import BASELINES

    for name, fn in BASELINES.items():
        a = fn(X, y, xq)
        b = fn(X, y, xq)
        assert np.array_equal(np.asarray(a), np.asarray(b)), name


def test_least_squares_dominates_linear_family_baselines():
    # at k = 2d on noiseless linear tasks the LS error is the floor
    errs = {"least_squares": [], "lasso": [], "averaging": [], "knn3": []}
    from ssmlab.baselines import BASELINES

    for i in range(32):
        t = sample_task("linear", 5, 10, task_rng(17, i))
        X, y = t.context()
        xq, yq = t.query()
        for name in errs:
            errs[name].append((BASELINES[name](X, y, xq[None, :])[0] - yq) ** 2)
    ls = np.mean(errs.pop("least_squares"))
    for name, vals in errs.items():
        assert ls <= np.mean(vals), name
