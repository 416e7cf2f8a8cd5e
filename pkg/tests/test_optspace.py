import numpy as np
import pytest

from noisymc.core import SparseObservations, orthonormalize
from noisymc.datagen import NoiseSpec, gen_gaussian_lowrank, make_instance
from noisymc.metrics import rmse
from noisymc.optspace import (
    OptSpaceConfig,
    incremental_optspace_solve,
    objective_and_gradient,
    optspace_solve,
    solve_core_least_squares,
    tangent_project,
)


def random_frame(rng, n, r):
    return orthonormalize(rng.standard_normal((n, r)))[0]


def random_tangent(rng, X):
    return tangent_project(X, rng.standard_normal(X.shape))


def masked(rng, A, p):
    return SparseObservations.from_dense(A, rng.random(A.shape) < p)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"grad_tol": 0.0}, {"backtrack": 1.0}, {"backtrack": 0.0}, {"rank": 0},
                                    {"max_iters": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            OptSpaceConfig(**kw)

    def test_noiseless_tightens_tolerance(self):
        assert OptSpaceConfig.noiseless().grad_tol == 1e-6
        assert OptSpaceConfig().grad_tol == 1e-4


class TestCoreLeastSquares:
    def test_full_observation_closed_form(self, rng):
        N = rng.standard_normal((7, 6))
        X, Y = random_frame(rng, 7, 2), random_frame(rng, 6, 2)
        S = solve_core_least_squares(X, Y, SparseObservations.from_dense(N))
        np.testing.assert_allclose(S, X.T @ N @ Y, atol=1e-12)

    def test_exact_interpolation(self, rng):
        X, Y = random_frame(rng, 9, 2), random_frame(rng, 8, 2)
        S0 = rng.standard_normal((2, 2))
        obs = masked(rng, X @ S0 @ Y.T, 0.5)
        np.testing.assert_allclose(solve_core_least_squares(X, Y, obs), S0, atol=1e-10)

    def test_normal_equations_oracle(self, rng):
        X, Y = random_frame(rng, 6, 2), random_frame(rng, 6, 2)
        idx = rng.choice(36, size=20, replace=False)
        obs = SparseObservations((6, 6), idx // 6, idx % 6, rng.standard_normal(20))
        G = np.zeros((4, 4))
        b = np.zeros(4)
        for i, j, v in obs.triples():
            a = np.array([X[i, p] * Y[j, q] for p in range(2) for q in range(2)])
            G += np.outer(a, a)
            b += a * v
        ref = np.linalg.solve(G, b).reshape(2, 2)
        np.testing.assert_allclose(solve_core_least_squares(X, Y, obs), ref, atol=1e-8)

    def test_underdetermined(self, rng):
        X, Y = random_frame(rng, 5, 3), random_frame(rng, 5, 3)
        obs = SparseObservations((5, 5), [0, 1], [0, 1], [1.0, 1.0])
        with pytest.raises(ValueError, match="underdetermined"):
            solve_core_least_squares(X, Y, obs)


class TestGradient:
    def test_zero_at_interpolant(self, rng):
        X, Y = random_frame(rng, 8, 2), random_frame(rng, 7, 2)
        S = rng.standard_normal((2, 2))
        obs = masked(rng, X @ S @ Y.T, 0.6)
        value, gX, gY = objective_and_gradient(X, S, Y, obs)
        assert value == pytest.approx(0.0, abs=1e-24)
        assert np.max(np.abs(gX)) < 1e-12 and np.max(np.abs(gY)) < 1e-12

    def test_empty_observations(self, rng):
        X, Y = random_frame(rng, 4, 2), random_frame(rng, 4, 2)
        value, gX, gY = objective_and_gradient(X, np.eye(2), Y, SparseObservations.empty((4, 4)))
        assert value == 0.0
        assert not gX.any() and not gY.any()

    def test_gradient_is_tangent(self, rng):
        X, Y = random_frame(rng, 10, 3), random_frame(rng, 10, 3)
        obs = masked(rng, rng.standard_normal((10, 10)), 0.5)
        _, gX, gY = objective_and_gradient(X, rng.standard_normal((3, 3)), Y, obs)
        for F, G in ((X, gX), (Y, gY)):
            sym = F.T @ G + G.T @ F
            assert np.max(np.abs(sym)) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = random_frame(rng, 10, 2), random_frame(rng, 10, 2)
        S = rng.standard_normal((2, 2))
        obs = masked(rng, rng.standard_normal((10, 10)), 0.5)
        dX, dY = random_tangent(rng, X), random_tangent(rng, Y)
        _, gX, gY = objective_and_gradient(X, S, Y, obs)
        h = 1e-6
        fp = objective_and_gradient(X + h * dX, S, Y + h * dY, obs)[0]
        fm = objective_and_gradient(X - h * dX, S, Y - h * dY, obs)[0]
        fd = (fp - fm) / (2 * h)
        exact = np.sum(gX * dX) + np.sum(gY * dY)
        assert fd == pytest.approx(exact, rel=1e-5)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            objective_and_gradient(np.eye(3, 2), np.eye(2), np.eye(4, 2), SparseObservations.empty((3, 3)))


class TestOptSpaceSolve:
    def test_full_observation_fast(self):
        M, _ = gen_gaussian_lowrank(30, 25, 3, seed=4)
        res = optspace_solve(SparseObservations.from_dense(M), OptSpaceConfig.noiseless(rank=3))
        assert res.iterations <= 5
        assert rmse(M, res.estimate) <= 1e-10

    def test_noiseless_partial_recovery(self):
        inst = make_instance("standard", 150, 3, 60.0, NoiseSpec(), master_seed=1)
        res = optspace_solve(inst.observations, OptSpaceConfig.noiseless())
        assert res.rank_used == 3
        assert rmse(inst.truth, res.estimate) <= 1e-4

    def test_trace_monotone_and_factors_orthonormal(self):
        inst = make_instance("standard", 120, 3, 30.0, NoiseSpec("standard_gaussian", 4.0), master_seed=2)
        res = optspace_solve(inst.observations, OptSpaceConfig(rank=3))
        trace = np.array(res.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10 * trace[:-1])
        F = res.estimate
        np.testing.assert_allclose(F.left.T @ F.left, np.eye(3), atol=1e-8)
        np.testing.assert_allclose(F.right.T @ F.right, np.eye(3), atol=1e-8)

    def test_initial_guess(self, rng):
        M, F = gen_gaussian_lowrank(40, 40, 2, seed=3)
        obs = masked(rng, M, 0.5)
        res = optspace_solve(obs, OptSpaceConfig.noiseless(), init=(F.left, F.right))
        assert res.iterations == 0 or rmse(M, res.estimate) <= 1e-8

    def test_empty(self):
        with pytest.raises(ValueError):
            optspace_solve(SparseObservations.empty((5, 5)), OptSpaceConfig(rank=1))

    def test_scaled_and_plain_directions_agree(self):
        inst = make_instance("ill_conditioned", 150, 4, 60.0, NoiseSpec("standard_gaussian", 4.0), master_seed=5)
        fast = optspace_solve(inst.observations, OptSpaceConfig(rank=4))
        slow = optspace_solve(inst.observations, OptSpaceConfig(rank=4, precondition=False, max_iters=5000))
        assert fast.iterations <= slow.iterations
        assert rmse(inst.truth, fast.estimate) == pytest.approx(rmse(inst.truth, slow.estimate), rel=0.02)


class TestIncremental:
    def test_rank_one_matches_plain(self, rng):
        M, _ = gen_gaussian_lowrank(50, 40, 1, seed=6)
        obs = masked(rng, M, 0.4)
        cfg = OptSpaceConfig.noiseless(rank=1)
        a = optspace_solve(obs, cfg).estimate.to_dense()
        b = incremental_optspace_solve(obs, cfg).estimate.to_dense()
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_well_conditioned_matches_plain(self):
        inst = make_instance("standard", 150, 3, 50.0, NoiseSpec("standard_gaussian", 4.0), master_seed=3)
        cfg = OptSpaceConfig(rank=3)
        plain = rmse(inst.truth, optspace_solve(inst.observations, cfg).estimate)
        inc = incremental_optspace_solve(inst.observations, cfg)
        assert rmse(inst.truth, inc.estimate) == pytest.approx(plain, rel=0.1)
        assert [s["rank"] for s in inc.info["stages"]] == [1, 2, 3]
