import math

import numpy as np
import pytest
from scipy.stats import norm
from sklearn.metrics import adjusted_rand_score

from symmcmc.analysis import (
    GridSpec,
    discrete_kl,
    kl_consecutive,
    knn_graph,
    lppd,
    lppd_from_predictions,
    normalized_laplacian,
    ppd_grid,
    spectral_cluster,
)
from symmcmc.model import ParamState, RegressionData, log_likelihood
from symmcmc.net import Architecture, ParamLayout, forward, param_dim
from symmcmc.sampler import SampleSet, SamplerConfig, sample_chain
from symmcmc.symmetry import apply_transform, random_transform
from symmcmc.targets import normal_mean_posterior


def _samples(arch, rng, G, log_sigma_sd=0.3):
    states = np.c_[rng.standard_normal((G, param_dim(arch))), rng.normal(-1.0, log_sigma_sd, G)]
    return SampleSet(states, np.arange(G), np.zeros(G), arch=arch)


def _transformed(samples, rng):
    out = samples.copy()
    for g in range(len(out)):
        out.states[g, :-1] = apply_transform(out.arch, out.thetas[g], random_transform(out.arch, rng))
    return out


class TestLPPD:
    def test_single_draw_is_log_likelihood(self, rng):
        a = Architecture([2, 3, 1])
        s = _samples(a, rng, 1)
        X, Y = rng.standard_normal((10, 2)), rng.standard_normal((10, 1))
        res = lppd(s, X, Y)
        state = s.draws[0]
        for i in range(10):
            ll = log_likelihood(state, RegressionData(X[i:i + 1], Y[i:i + 1]), a)
            assert res.per_point[i] == pytest.approx(ll, abs=1e-12)
        assert res.mean == pytest.approx(res.per_point.mean())

    def test_identical_draws_equal_single(self, rng):
        a = Architecture([1, 3, 1])
        s = _samples(a, rng, 1)
        many = SampleSet(np.repeat(s.states, 7, axis=0), np.arange(7), np.zeros(7), arch=a)
        X, Y = rng.standard_normal((5, 1)), rng.standard_normal(5)
        np.testing.assert_allclose(lppd(many, X, Y).per_point, lppd(s, X, Y).per_point, atol=1e-12)

    def test_matches_direct_average(self, rng):
        a = Architecture([1, 3, 2])
        s = _samples(a, rng, 9)
        X, Y = rng.standard_normal((6, 1)), rng.standard_normal((6, 2))
        mu = forward(a, s.thetas, X)
        dens = np.prod(norm.pdf(Y[None], mu, s.sigmas[:, None, None]), axis=-1)
        np.testing.assert_allclose(lppd(s, X, Y).per_point, np.log(dens.mean(axis=0)), rtol=1e-12)

    def test_no_underflow_far_from_data(self, rng):
        means = np.zeros((3, 2, 1))
        res = lppd_from_predictions(means, np.full(3, 1e-3), np.array([[50.0], [0.0]]))
        assert np.all(np.isfinite(res.per_point))
        assert res.per_point[0] == pytest.approx(-0.5 * math.log(2 * math.pi) - math.log(1e-3) - 0.5 * 5e4**2)

    def test_standard_error(self, rng):
        a = Architecture([1, 2, 1])
        res = lppd(_samples(a, rng, 4), rng.standard_normal((30, 1)), rng.standard_normal(30))
        assert res.se == pytest.approx(res.per_point.std(ddof=1) / math.sqrt(30))

    def test_invariant_under_equioutput_transforms(self, rng):
        a = Architecture([2, 4, 3, 1])
        s = _samples(a, rng, 50)
        X, Y = rng.standard_normal((20, 2)), rng.standard_normal(20)
        before, after = lppd(s, X, Y), lppd(_transformed(s, rng), X, Y)
        assert np.max(np.abs(before.per_point - after.per_point)) < 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            lppd_from_predictions(np.zeros((0, 3, 1)), np.zeros(0), np.zeros((3, 1)))

    def test_conjugate_normal_mean(self):
        data_rng = np.random.default_rng(7)
        noise, mu_true = 0.8, 0.4
        y = mu_true + noise * data_rng.standard_normal(12)
        y_test = mu_true + noise * data_rng.standard_normal(200)
        target, m, s = normal_mean_posterior(y, noise)
        draws = sample_chain(target, SamplerConfig(warmup_steps=500, seed=3), n_draws=16384).states[:, 0]
        means = np.broadcast_to(draws[:, None, None], (draws.size, y_test.size, 1))
        res = lppd_from_predictions(means, np.full(draws.size, noise), y_test[:, None])
        exact = norm.logpdf(y_test, m, math.sqrt(noise**2 + s**2))
        assert abs(res.mean - exact.mean()) < 0.01


class TestPPDGrid:
    def test_rows_integrate_to_one(self, rng):
        a = Architecture([1, 3, 1])
        g = ppd_grid(_samples(a, rng, 20))
        assert g.density.shape == (61, 121)
        np.testing.assert_allclose(g.density.sum(axis=1) * g.dy, 1.0, atol=1e-6)

    def test_single_draw_is_gaussian_ridge(self):
        a = Architecture([1, 1, 1])
        theta = np.array([1.0, 2.0, 0.0, 0.5])
        s = SampleSet(np.append(theta, math.log(0.3))[None], [0], [0], arch=a)
        grid = GridSpec(n_y=601)
        g = ppd_grid(s, grid)
        mu = forward(a, theta, grid.x_grid[:, None])[:, 0]
        peak = grid.y_grid[np.argmax(g.density, axis=1)]
        assert np.max(np.abs(peak - mu)) <= grid.dy / 2 + 1e-12
        ref = norm.pdf(grid.y_grid[None], mu[:, None], 0.3)
        ref /= ref.sum(axis=1, keepdims=True) * grid.dy
        np.testing.assert_allclose(g.density, ref, rtol=1e-10, atol=1e-300)

    def test_two_hypotheses_bimodal(self):
        a = Architecture([1, 1])
        # constant functions at -1.5 and +1.5 with small noise
        states = np.array([[0.0, -1.5, math.log(0.2)], [0.0, 1.5, math.log(0.2)]])
        g = ppd_grid(SampleSet(states, [0, 1], [0, 0], arch=a))
        row = g.density[30]
        peaks = [i for i in range(1, row.size - 1) if row[i] > row[i - 1] and row[i] >= row[i + 1]]
        assert len(peaks) == 2
        assert g.y_grid[peaks].tolist() == pytest.approx([-1.5, 1.5], abs=0.05)

    def test_invariant_under_equioutput_transforms(self, rng):
        a = Architecture([1, 5, 5, 1])
        s = _samples(a, rng, 64)
        before, after = ppd_grid(s), ppd_grid(_transformed(s, rng))
        assert np.max(np.abs(before.density - after.density)) < 1e-12

    def test_needs_single_output(self, rng):
        with pytest.raises(ValueError):
            ppd_grid(_samples(Architecture([1, 2, 2]), rng, 3))

    def test_multi_input_slices(self, rng):
        a = Architecture([2, 3, 1])
        s = _samples(a, rng, 5)
        with pytest.raises(ValueError):
            ppd_grid(s)
        xs = np.c_[np.linspace(-1, 1, 4), np.zeros(4)]
        g = ppd_grid(s, x_points=xs)
        assert g.density.shape == (4, 121)

    def test_rows_for_csv(self, rng):
        g = ppd_grid(_samples(Architecture([1, 2, 1]), rng, 2), GridSpec(n_x=3, n_y=5))
        rows = list(g.rows())
        assert len(rows) == 15 and rows[0][:2] == (-3.0, -3.0)


class TestKL:
    def test_discretized_gaussians(self):
        # default resolution, range widened so neither density is truncated
        grid = GridSpec(y_min=-7.0, y_max=8.0, n_y=301)
        y = grid.y_grid
        p = norm.pdf(y)
        q = norm.pdf(y, 1.0)
        p /= p.sum() * grid.dy
        q /= q.sum() * grid.dy
        assert grid.dy == GridSpec().dy
        assert discrete_kl(p, q, grid.dy) == pytest.approx(0.5, rel=0.02)

    def test_zero_for_equal_and_floor_for_empty_cells(self):
        p = np.array([0.5, 0.5, 0.0])
        assert discrete_kl(p, p, 1.0) == 0.0
        assert np.isfinite(discrete_kl(p, np.array([0.0, 0.5, 0.5]), 1.0))

    def test_sequence_matches_rebuilt_grids(self, rng):
        a = Architecture([1, 3, 1])
        s = _samples(a, rng, 6)
        kl = kl_consecutive(s)
        assert kl.shape == (5,)
        for g in range(2, 7):
            p = ppd_grid(s.subset(slice(0, g - 1))).density
            q = ppd_grid(s.subset(slice(0, g))).density
            assert kl[g - 2] == pytest.approx(discrete_kl(p, q, GridSpec().dy).mean(), rel=1e-10, abs=1e-15)

    def test_non_negative_and_duplicates_shrink(self, rng):
        a = Architecture([1, 3, 1])
        base = _samples(a, rng, 1)
        s = SampleSet(np.repeat(base.states, 30, axis=0), np.arange(30), np.zeros(30), arch=a)
        s.states[0] = _samples(a, rng, 1).states[0]
        kl = kl_consecutive(s)
        assert np.all(kl >= -1e-12)
        assert np.all(np.diff(kl[1:]) < 0)

    def test_needs_two_draws(self, rng):
        with pytest.raises(ValueError):
            kl_consecutive(_samples(Architecture([1, 2, 1]), rng, 1))


class TestGraph:
    def test_two_points(self):
        A = knn_graph(np.array([[0.0, 0.0], [1.0, 2.0]]), k=1)
        assert A[0, 1] == A[1, 0] == pytest.approx(math.exp(-5 / 2))
        assert A[0, 0] == A[1, 1] == 0.0

    def test_equilateral_triangle(self):
        P = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        A = knn_graph(P, k=2)
        off = A[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, math.exp(-0.5), rtol=1e-12)

    def test_symmetric_nonnegative(self, rng):
        A = knn_graph(rng.standard_normal((40, 3)), k=4)
        assert np.array_equal(A, A.T) and np.all(A >= 0) and np.all(np.diag(A) == 0)
        assert np.all((A > 0).sum(axis=1) >= 4)

    def test_one_sided_neighbors_kept(self):
        # the outlier's nearest neighbor does not return the favour; the edge must survive
        P = np.array([[0.0], [0.1], [0.2], [5.0]])
        A = knn_graph(P, k=1)
        assert A[3, 2] > 0 and A[2, 3] > 0

    def test_duplicates(self):
        A = knn_graph(np.zeros((3, 2)), k=1)
        assert A.max() == 1.0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            knn_graph(np.zeros((3, 1)), k=3)

    def test_laplacian_spectrum(self, rng):
        A = knn_graph(rng.standard_normal((30, 2)), k=4)
        L = normalized_laplacian(A)
        evals = np.linalg.eigvalsh(L)
        assert abs(evals[0]) < 1e-10 and evals[-1] <= 2.0 + 1e-10
        d = A.sum(axis=1)
        np.testing.assert_allclose(L @ np.sqrt(d), 0.0, atol=1e-10)


class TestSpectralCluster:
    def _blobs(self, rng, n=40):
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        labels = np.repeat(np.arange(3), n)
        return centers[labels] + 0.5 * rng.standard_normal((3 * n, 2)), labels

    def test_planted_blobs(self, rng):
        P, truth = self._blobs(rng)
        res = spectral_cluster(P, 3)
        assert adjusted_rand_score(truth, res.labels) == 1.0
        assert set(res.labels.tolist()) == {1, 2, 3}
        assert np.sum(res.eigenvalues < 1e-8) == 3

    def test_single_cluster(self, rng):
        res = spectral_cluster(rng.standard_normal((20, 2)), 1)
        assert np.all(res.labels == 1)

    def test_deterministic(self, rng):
        P, _ = self._blobs(rng, 15)
        assert np.array_equal(spectral_cluster(P, 3, seed=4).labels, spectral_cluster(P, 3, seed=4).labels)

    def test_fewer_points_than_clusters(self):
        with pytest.raises(ValueError):
            spectral_cluster(np.zeros((2, 2)), 3)

    def test_canonicalized_planted_samples(self, rng):
        from symmcmc.removal import geometry_removal

        a = Architecture([1, 3, 1])
        lay = ParamLayout(a)
        bases = rng.standard_normal((3, lay.dim)) * 2.0
        draws = []
        for b in bases:
            for _ in range(20):
                t = apply_transform(a, b + 0.01 * rng.standard_normal(lay.dim), random_transform(a, rng))
                draws.append(np.append(t, -1.0))
        s = SampleSet(np.array(draws), np.arange(60), np.zeros(60), arch=a)
        canon, _ = geometry_removal(s, rng=np.random.default_rng(0))
        res = spectral_cluster(canon.thetas, 3)
        assert len(set(res.labels.tolist())) == 3
        assert adjusted_rand_score(np.repeat(np.arange(3), 20), res.labels) == 1.0
