import numpy as np
import pytest

from mousse.errors import RankDeficient
from mousse.subset import (
    DELTA_FLOOR,
    LAMBDA_FLOOR,
    Observation,
    ProjectionResult,
    SubsetNode,
    project_partial,
    residual,
    residual_map,
    rho_distance,
    scaled_distance,
    update_scalar_params,
)


def random_node(rng, D=8, d=2, node_id=(0, 0)):
    q, _ = np.linalg.qr(rng.standard_normal((D, d)))
    return SubsetNode(basis=q, center=rng.standard_normal(D),
                      lambdas=rng.uniform(0.5, 3.0, size=d), delta=0.05,
                      node_id=node_id)


def full_obs(x, t=0):
    return Observation.complete(t, x)


class TestProjectPartial:
    def test_recentered_zero(self):
        rng = np.random.default_rng(0)
        node = random_node(rng)
        pr = project_partial(full_obs(node.center.copy()), node)
        assert np.allclose(pr.beta, 0.0)
        assert np.allclose(pr.x_perp, 0.0)

    def test_exact_representation(self):
        rng = np.random.default_rng(1)
        node = random_node(rng)
        z = rng.standard_normal(node.subset_dim)
        pr = project_partial(full_obs(node.center + node.basis @ z), node)
        assert np.allclose(pr.beta, z, atol=1e-9)
        assert np.max(np.abs(pr.x_perp)) < 1e-9

    def test_matches_dense_least_squares_oracle(self):
        rng = np.random.default_rng(2)
        D, d = 4, 1
        u = rng.standard_normal((D, d))
        u /= np.linalg.norm(u)
        node = SubsetNode(basis=u, center=rng.standard_normal(D),
                          lambdas=np.array([1.0]), delta=0.1, node_id=(0, 0))
        omega = np.array([0, 1, 2])
        x = rng.standard_normal(3)
        pr = project_partial(Observation(t=0, values=x, omega=omega), node)
        # Independent normal-equations solve on the observed rows.
        u_om = u[omega]
        y = x - node.center[omega]
        beta_ref = np.linalg.solve(u_om.T @ u_om, u_om.T @ y)
        assert np.allclose(pr.beta, beta_ref, atol=1e-10)
        assert np.allclose(pr.x_perp, y - u_om @ beta_ref, atol=1e-10)

    def test_complete_data_equivalence(self):
        # With full observations beta reduces to U'(x - c).
        rng = np.random.default_rng(3)
        for _ in range(25):
            node = random_node(rng, D=12, d=3)
            x = rng.standard_normal(12)
            pr = project_partial(full_obs(x), node)
            assert np.allclose(pr.beta, node.basis.T @ (x - node.center), atol=1e-10)

    def test_too_few_entries_raises(self):
        rng = np.random.default_rng(4)
        node = random_node(rng, D=8, d=3)
        obs = Observation(t=0, values=np.array([1.0, 2.0]), omega=np.array([1, 5]))
        with pytest.raises(RankDeficient):
            project_partial(obs, node)

    def test_singular_gram_raises(self):
        # Basis supported away from the observed rows: observed rows are zero.
        basis = np.zeros((6, 2))
        basis[4, 0] = 1.0
        basis[5, 1] = 1.0
        node = SubsetNode(basis=basis, center=np.zeros(6),
                          lambdas=np.ones(2), delta=0.1, node_id=(0, 0))
        obs = Observation(t=0, values=np.ones(3), omega=np.array([0, 1, 2]))
        with pytest.raises(RankDeficient):
            project_partial(obs, node)


class TestDistances:
    def test_zero(self):
        rng = np.random.default_rng(5)
        node = random_node(rng)
        pr = ProjectionResult(beta=np.zeros(2), x_perp=np.zeros(8), omega_size=8)
        assert scaled_distance(pr, node) == 0.0
        assert residual(pr, node) == 0.0

    def test_direct_arithmetic(self):
        node = SubsetNode(basis=np.eye(3)[:, :2], center=np.zeros(3),
                          lambdas=np.array([2.0, 1.0]), delta=0.1, node_id=(0, 0))
        pr = ProjectionResult(beta=np.array([1.0, 1.0]),
                              x_perp=np.array([np.sqrt(0.5)]), omega_size=3)
        d = scaled_distance(pr, node)
        assert d == pytest.approx(0.1 * (0.5 + 1.0) + 0.5, abs=1e-12)
        assert residual(pr, node) == pytest.approx(np.sqrt(0.65), abs=1e-5)
        assert rho_distance(pr, node) == pytest.approx(d / 0.1, abs=1e-12)

    def test_dense_mahalanobis_oracle(self):
        # Full data: d_delta / delta equals the quadratic form under the
        # low-rank-plus-delta*I covariance, via an explicit matrix inverse.
        rng = np.random.default_rng(6)
        for _ in range(10):
            D, d = 12, 3
            node = random_node(rng, D=D, d=d)
            x = rng.standard_normal(D)
            u = node.basis
            sigma = (u * node.lambdas) @ u.T + node.delta * (np.eye(D) - u @ u.T)
            ref = (x - node.center) @ np.linalg.inv(sigma) @ (x - node.center)
            pr = project_partial(full_obs(x), node)
            assert rho_distance(pr, node) == pytest.approx(ref, rel=1e-8)


class TestScalarUpdates:
    def test_alpha_one_is_identity(self):
        rng = np.random.default_rng(7)
        node = random_node(rng)
        x = rng.standard_normal(8)
        pr = project_partial(full_obs(x), node)
        before = (node.center.copy(), node.lambdas.copy(), node.delta)
        update_scalar_params(node, full_obs(x), pr, alpha=1.0)
        assert np.array_equal(node.center, before[0])
        assert np.array_equal(node.lambdas, before[1])
        assert node.delta == before[2]

    def test_direct_recursion(self):
        rng = np.random.default_rng(8)
        node = random_node(rng, D=5, d=1)
        node.lambdas = np.array([1.0])
        pr = ProjectionResult(beta=np.array([2.0]), x_perp=np.zeros(5), omega_size=5)
        update_scalar_params(node, full_obs(node.center.copy()), pr, alpha=0.9)
        assert node.lambdas[0] == pytest.approx(0.9 + 0.1 * 4.0, abs=1e-12)

    def test_center_only_moves_on_observed_coords(self):
        rng = np.random.default_rng(9)
        node = random_node(rng, D=6, d=1)
        before = node.center.copy()
        omega = np.array([1, 4])
        obs = Observation(t=0, values=np.array([10.0, -10.0]), omega=omega)
        pr = project_partial(obs, node)
        update_scalar_params(node, obs, pr, alpha=0.5)
        untouched = np.setdiff1d(np.arange(6), omega)
        assert np.array_equal(node.center[untouched], before[untouched])
        assert not np.allclose(node.center[omega], before[omega])

    def test_floors_hold(self):
        rng = np.random.default_rng(10)
        node = random_node(rng, D=5, d=2)
        node.lambdas = np.full(2, LAMBDA_FLOOR)
        node.delta = DELTA_FLOOR
        pr = ProjectionResult(beta=np.zeros(2), x_perp=np.zeros(5), omega_size=5)
        update_scalar_params(node, full_obs(node.center.copy()), pr, alpha=0.9)
        assert np.all(node.lambdas >= LAMBDA_FLOOR)
        assert node.delta >= DELTA_FLOOR

    def test_center_estimate_is_asymptotically_unbiased(self):
        # i.i.d. stream with true mean c*: the time average of the tracked
        # center lands within 3 standard errors of c* per coordinate.
        rng = np.random.default_rng(11)
        D, d, sigma, alpha, T = 6, 1, 0.3, 0.9, 4000
        c_star = rng.standard_normal(D)
        node = random_node(rng, D=D, d=d)
        node.center = c_star + rng.standard_normal(D)
        csum = np.zeros(D)
        for t in range(T):
            x = c_star + sigma * rng.standard_normal(D)
            obs = full_obs(x, t)
            pr = project_partial(obs, node)
            update_scalar_params(node, obs, pr, alpha=alpha)
            csum += node.center
        cbar = csum / T
        se = sigma / np.sqrt(T)
        assert np.all(np.abs(cbar - c_star) < 3 * se)

    def test_shape_estimates_consistent(self):
        # Fixed correct basis, complete data: time averages of the tracked
        # lambdas and delta come out within 5% of their targets.
        rng = np.random.default_rng(12)
        D, d, sigma2, alpha = 10, 2, 1e-3, 0.95
        burn, T = 500, 10_000
        q, _ = np.linalg.qr(rng.standard_normal((D, d)))
        lam_z = np.array([2.0, 0.8])
        c = rng.standard_normal(D)
        node = SubsetNode(basis=q, center=c.copy(), lambdas=np.ones(d), delta=1.0,
                          node_id=(0, 0))
        lam_sum = np.zeros(d)
        delta_sum = 0.0
        for t in range(burn + T):
            x = c + q @ (np.sqrt(lam_z) * rng.standard_normal(d)) \
                + np.sqrt(sigma2) * rng.standard_normal(D)
            obs = full_obs(x, t)
            pr = project_partial(obs, node)
            update_scalar_params(node, obs, pr, alpha=alpha)
            if t >= burn:
                lam_sum += node.lambdas
                delta_sum += node.delta
        lam_bar = lam_sum / T
        delta_bar = delta_sum / T
        # Targets include the small extra variance from the center itself
        # being tracked with the same forgetting factor.
        track_var = (1 - alpha) / (1 + alpha)
        lam_star = (lam_z + sigma2) * (1 + track_var)
        delta_star = sigma2 * (1 + track_var)
        assert np.all(np.abs(lam_bar - lam_star) / lam_star < 0.05)
        assert abs(delta_bar - delta_star) / delta_star < 0.05


class TestResidualMap:
    def test_zero_cases(self):
        rng = np.random.default_rng(13)
        node = random_node(rng)
        assert np.allclose(residual_map(full_obs(node.center.copy()), node), 0.0)
        z = rng.standard_normal(node.subset_dim)
        on_plane = node.center + node.basis @ z
        assert np.max(np.abs(residual_map(full_obs(on_plane), node))) < 1e-9

    def test_partial_matches_projection(self):
        rng = np.random.default_rng(14)
        node = random_node(rng, D=10, d=2)
        omega = np.array([0, 2, 3, 7, 9])
        obs = Observation(t=0, values=rng.standard_normal(5), omega=omega)
        emap = residual_map(obs, node)
        pr = project_partial(obs, node)
        assert np.array_equal(emap[omega], pr.x_perp)
        assert np.all(emap[np.setdiff1d(np.arange(10), omega)] == 0.0)


class TestObservation:
    def test_validation(self):
        with pytest.raises(ValueError):
            Observation(t=0, values=np.array([1.0]), omega=np.array([2, 1]))
        with pytest.raises(ValueError):
            Observation(t=0, values=np.array([1.0, 2.0]), omega=np.array([1, 1]))
        with pytest.raises(ValueError):
            Observation(t=0, values=np.array([]), omega=np.array([]))
