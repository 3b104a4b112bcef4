import math

import numpy as np
import pytest

from symmcmc.analysis import lppd
from symmcmc.model import ParamState, RegressionData, log_posterior
from symmcmc.net import Architecture, ParamLayout, forward, param_dim
from symmcmc.removal import (
    NeuronCloud,
    RemovalConfig,
    fit_hyperplane,
    geometry_removal,
    greedy_assign,
    knn_class_probs,
    permutation_removal,
    svm_loss,
    tanh_removal,
)
from symmcmc.sampler import SampleSet
from symmcmc.symmetry import EquioutputTransform, LayerTransform, apply_transform, random_transform


def _planted(arch, rng, n_bases=3, copies=64, jitter=0.0, flips=True, scale=2.0):
    lay = ParamLayout(arch)
    bases = scale * rng.standard_normal((n_bases, lay.dim))
    rows, group = [], []
    for b, base in enumerate(bases):
        for _ in range(copies):
            t = apply_transform(arch, base + jitter * rng.standard_normal(lay.dim), random_transform(arch, rng, flips))
            rows.append(np.append(t, -1.0 + 0.1 * b))
            group.append(b)
    G = len(rows)
    return SampleSet(np.array(rows), np.arange(G), np.zeros(G), arch=arch), np.array(group)


def _max_output_change(before, after, rng, n=50):
    x = rng.standard_normal((n, before.arch.n_inputs))
    return float(np.max(np.abs(forward(before.arch, before.thetas, x) - forward(after.arch, after.thetas, x))))


class TestSVMLoss:
    def test_zero_beta(self, rng):
        pooled = rng.standard_normal((17, 4))
        assert svm_loss(np.zeros(4), pooled, C=2.0) == 34.0

    def test_all_outside_margin(self):
        pooled = np.array([[3.0, 0.0], [-2.0, 1.0]])
        beta = np.array([1.0, 0.0])
        assert svm_loss(beta, pooled) == 0.5

    def test_single_inside_margin(self):
        beta = np.array([0.5, 0.0])
        assert svm_loss(beta, np.array([[1.0, 7.0]]), C=1.0) == pytest.approx(0.5 * 0.25 + 0.5)


class TestHyperplane:
    def test_antipodal_pair(self, rng):
        v = np.array([6.0, 8.0])  # |v| = 10
        beta, loss = fit_hyperplane(np.array([v, -v]), RemovalConfig(), rng)
        # smallest beta with |beta'v| >= 1 lies along v with norm 1/|v|
        assert abs(beta @ v) == pytest.approx(1.0, abs=0.02)
        assert np.linalg.norm(beta) == pytest.approx(0.1, rel=0.05)
        assert loss == pytest.approx(0.5 * 0.01, rel=0.1)

    def test_even_loss(self, rng):
        pooled = rng.standard_normal((30, 3))
        beta, _ = fit_hyperplane(np.vstack([pooled, -pooled]), RemovalConfig(K_beta=2), rng)
        P = np.vstack([pooled, -pooled])
        assert svm_loss(beta, P) == svm_loss(-beta, P)

    def test_separable_clusters_reach_zero_hinge(self, rng):
        a = np.array([5.0, 5.0, 0.0]) + 0.3 * rng.standard_normal((40, 3))
        P = np.vstack([a, -a])
        beta, loss = fit_hyperplane(P, RemovalConfig(), rng)
        assert np.all(np.abs(P @ beta) >= 1.0 - 1e-3)
        assert loss == pytest.approx(0.5 * beta @ beta, abs=1e-3)

    def test_orientation_minimizes_flips(self, rng):
        P = np.vstack([np.array([4.0, 0.0]) + 0.2 * rng.standard_normal((30, 2)),
                       np.array([-4.0, 0.0]) + 0.2 * rng.standard_normal((5, 2))])
        beta, _ = fit_hyperplane(P, RemovalConfig(), rng)
        assert np.sum(P @ beta < 0) == 5

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            fit_hyperplane(np.zeros((0, 3)), RemovalConfig(), rng)


class TestTanhRemoval:
    def test_one_sided_cloud_untouched(self, rng):
        a = Architecture([1, 3, 1])
        s, _ = _planted(a, rng, 1, 5, flips=False)
        layout = ParamLayout(a)
        # force every neuron vector onto the same half-space
        idx = layout.layer_neuron_indices(2)
        s.states[:, idx[:, 0]] = np.abs(s.states[:, idx[:, 0]]) + 5.0
        before = s.states.copy()
        beta, flips = tanh_removal(s, 2, RemovalConfig(), rng)
        if flips:
            # the hyperplane may tilt, but every vector must end on its non-negative side
            assert np.all(NeuronCloud.build(a, s.thetas, 2).pooled @ beta >= 0)
        else:
            assert np.array_equal(s.states, before)

    def test_mirrored_cloud(self, rng):
        a = Architecture([2, 3, 1])
        lay = ParamLayout(a)
        base = rng.standard_normal((4, lay.dim)) * 2
        flipped = base.copy()
        for g in range(4):
            flipped[g] = apply_transform(a, base[g], EquioutputTransform([LayerTransform(np.arange(3), -np.ones(3))]))
        states = np.c_[np.vstack([base, flipped]), np.zeros(8)]
        s = SampleSet(states, np.arange(8), np.zeros(8), arch=a)
        _, n_flips = tanh_removal(s, 2, RemovalConfig(), rng)
        assert n_flips == 12  # one member of each of the 12 antipodal neuron pairs
        pooled = NeuronCloud.build(a, s.thetas, 2).pooled
        for i in range(len(pooled)):
            assert not np.any(np.all(np.isclose(pooled, -pooled[i], atol=1e-12), axis=1))

    def test_preserves_function(self, rng):
        a = Architecture([2, 4, 3, 1])
        s, _ = _planted(a, rng, 2, 10, jitter=0.5)
        before = s.copy()
        beta, _ = tanh_removal(s, 3, RemovalConfig(K_beta=2, svm_steps=300), rng)
        assert _max_output_change(before, s, rng) < 1e-10
        assert np.all(NeuronCloud.build(a, s.thetas, 3).pooled @ beta >= 0)

    def test_relu_rejected(self, rng):
        a = Architecture([1, 3, 1], "relu")
        s = SampleSet(np.zeros((2, param_dim(a) + 1)), [0, 1], [0, 0], arch=a)
        with pytest.raises(ValueError):
            tanh_removal(s, 2, RemovalConfig(), rng)


class TestKNNVote:
    def test_unanimous(self, rng):
        pooled = rng.standard_normal((10, 2))
        probs = knn_class_probs(np.zeros(2), pooled, np.full(10, 2), 3, k=5)
        assert probs.tolist() == [0.0, 0.0, 1.0]

    def test_symmetric_tie(self):
        pooled = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        probs = knn_class_probs(np.zeros(2), pooled, np.array([0, 1, 0, 1]), 2, k=4)
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_planted_blobs(self, rng):
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        labels = np.repeat(np.arange(3), 20)
        pooled = centers[labels] + rng.standard_normal((60, 2))
        probs = knn_class_probs(centers[1] + 0.3, pooled, labels, 3, k=10)
        assert np.argmax(probs) == 1

    def test_exclusion_and_clipping(self):
        pooled = np.array([[0.0], [0.1], [5.0]])
        labels = np.array([0, 0, 1])
        probs = knn_class_probs(np.zeros(1), pooled, labels, 2, k=100, exclude=np.array([True, True, False]))
        assert probs.tolist() == [0.0, 1.0]
        with pytest.raises(ValueError):
            knn_class_probs(np.zeros(1), pooled, labels, 2, k=1, exclude=np.ones(3, dtype=bool))

    def test_far_query_does_not_underflow(self):
        pooled = np.array([[100.0], [101.0]])
        probs = knn_class_probs(np.zeros(1), pooled, np.array([0, 1]), 2, k=2)
        assert np.all(np.isfinite(probs)) and probs[0] > probs[1]


class TestGreedyAssign:
    def test_identity_dominant(self):
        P = np.full((4, 4), 0.1 / 3)
        np.fill_diagonal(P, 0.9)
        assert greedy_assign(P).tolist() == [0, 1, 2, 3]

    def test_hand_trace(self):
        # vector 2 takes class 1 first (0.9), vector 1 is forced to class 2
        assert (greedy_assign(np.array([[0.6, 0.4], [0.9, 0.1]])) + 1).tolist() == [2, 1]

    def test_permutation_matrix(self, rng):
        perm = rng.permutation(6)
        P = np.zeros((6, 6))
        P[np.arange(6), perm] = 1.0
        assert greedy_assign(P).tolist() == perm.tolist()

    def test_always_bijection_and_batched(self, rng):
        P = rng.random((50, 5, 5))
        out = greedy_assign(P)
        for g in range(50):
            assert sorted(out[g].tolist()) == list(range(5))
            assert out[g].tolist() == greedy_assign(P[g]).tolist()

    def test_ties_are_deterministic(self):
        assert greedy_assign(np.full((3, 3), 1 / 3)).tolist() == [0, 1, 2]


class TestPermutationRemoval:
    def test_literal_permutations_collapse(self, rng):
        a = Architecture([2, 5, 1])
        base = rng.standard_normal(param_dim(a)) * 2
        rows = [np.append(apply_transform(a, base, random_transform(a, rng, flips=False)), 0.0) for _ in range(30)]
        s = SampleSet(np.array(rows), np.arange(30), np.zeros(30), arch=a)
        before = s.copy()
        permutation_removal(s, 2, RemovalConfig())
        assert np.max(np.abs(s.thetas - s.thetas[0])) < 1e-12
        assert _max_output_change(before, s, rng) < 1e-10

    def test_evenly_split_group_settles(self, rng):
        # half the copies carry the two neurons swapped; simultaneous relabeling would swap the halves forever
        a = Architecture([1, 2, 1])
        base = np.array([3.0, -2.0, 0.5, 1.0, 1.5, -1.0, 0.2])
        swap = EquioutputTransform([LayerTransform(np.array([1, 0]), np.ones(2))])
        rows = [np.append(base if g % 2 else apply_transform(a, base, swap), 0.0) for g in range(32)]
        s = SampleSet(np.array(rows), np.arange(32), np.zeros(32), arch=a)
        info = permutation_removal(s, 2, RemovalConfig())
        assert info["iterations"] <= 3
        assert np.max(np.abs(s.thetas - s.thetas[0])) < 1e-12

    def test_canonical_set_exits_immediately(self, rng):
        a = Architecture([1, 4, 1])
        base = rng.standard_normal(param_dim(a)) * 2
        s = SampleSet(np.tile(np.append(base, 0.0), (10, 1)) + 1e-3 * rng.standard_normal((10, param_dim(a) + 1)),
                      np.arange(10), np.zeros(10), arch=a)
        before = s.states.copy()
        info = permutation_removal(s, 2, RemovalConfig())
        assert info["iterations"] == 1 and info["permutation_changes"] == 0
        assert np.array_equal(s.states, before)

    def test_k_clipped_to_other_samples(self, rng):
        a = Architecture([1, 3, 1])
        s, _ = _planted(a, rng, 1, 4)
        info = permutation_removal(s, 2, RemovalConfig(k=1024))
        assert info["k"] == 3 * 4 - 3


class TestGeometryRemoval:
    def test_planted_collapse(self, rng):
        a = Architecture([1, 3, 1])
        s, group = _planted(a, rng)
        canon, report = geometry_removal(s, rng=np.random.default_rng(1))
        collapsed = 0
        for b in range(3):
            members = canon.thetas[group == b]
            rep = np.median(members, axis=0)
            collapsed += int(np.sum(np.max(np.abs(members - rep), axis=1) < 1e-6))
        assert collapsed / len(s) >= 0.95
        assert report.layers[0]["layer"] == 2

    def test_function_and_posterior_preserved(self, rng):
        a = Architecture([2, 4, 3, 1])
        s, _ = _planted(a, rng, 2, 16, jitter=0.3)
        canon, _ = geometry_removal(s, RemovalConfig(K_beta=2, svm_steps=400), np.random.default_rng(0))
        assert _max_output_change(s, canon, rng) < 1e-10
        X = rng.standard_normal((16, 2))
        D = RegressionData(X, rng.standard_normal(16))
        for g in range(0, len(s), 5):
            lp0 = log_posterior(ParamState.from_vector(s.states[g]), D, a)
            lp1 = log_posterior(ParamState.from_vector(canon.states[g]), D, a)
            assert abs(lp0 - lp1) < 1e-8
        Xt, Yt = rng.standard_normal((20, 2)), rng.standard_normal(20)
        assert abs(lppd(s, Xt, Yt).mean - lppd(canon, Xt, Yt).mean) < 1e-12

    def test_input_untouched_and_idempotent(self, rng):
        a = Architecture([1, 3, 1])
        s, _ = _planted(a, rng, 3, 16)
        original = s.states.copy()
        once, _ = geometry_removal(s, rng=np.random.default_rng(0))
        assert np.array_equal(s.states, original)
        twice, report = geometry_removal(once, rng=np.random.default_rng(0))
        assert np.array_equal(once.states, twice.states)
        assert all(e["flips"] == 0 and e["permutation_changes"] == 0 for e in report.layers)

    def test_single_sample(self, rng):
        a = Architecture([1, 3, 1])
        s, _ = _planted(a, rng, 1, 1)
        canon, report = geometry_removal(s, rng=rng)
        assert _max_output_change(s, canon, rng) < 1e-10
        assert report.layers[0]["permutation_changes"] == 0

    def test_relu_rejected(self):
        a = Architecture([1, 3, 1], "relu")
        with pytest.raises(ValueError):
            geometry_removal(SampleSet(np.zeros((2, param_dim(a) + 1)), [0, 1], [0, 0], arch=a))

    @pytest.mark.parametrize("kw", [{"C": 0.0}, {"K_beta": 0}, {"k": 0}, {"iterations": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            RemovalConfig(**kw)
