import numpy as np
import pytest

from conceptseg import clustering as cl
from conceptseg.embedding import EmbeddingMatrix
from conceptseg.synthetic import two_scale_clusters


def planted_gaussians(n_clusters=4, per=100, d=5, spread=10.0, seed=0):
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=spread, size=(n_clusters, d))
    X = np.concatenate(
        [m + rng.normal(scale=0.2, size=(per, d)) for m in means])
    labels = np.repeat(np.arange(n_clusters), per)
    return X, labels


class TestMiniBatchKMeans:
    def test_exact_fit_when_k_equals_n_points(self):
        X = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        model, labels = cl.minibatch_kmeans(X, 3, batch_size=3, seed=0)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)
        assert sorted(labels.tolist()) == [0, 1, 2]

    def test_recovers_planted_gaussians(self):
        X, truth = planted_gaussians(seed=1)
        _, labels = cl.minibatch_kmeans(X, 4, batch_size=100, seed=0)
        assert cl.adjusted_rand_index(labels, truth) == 1.0

    def test_matches_lloyd_oracle_from_same_init(self):
        # from an init already near the optima both variants must land in
        # the same basin, so final assignments agree
        X, _ = planted_gaussians(seed=2)
        rng = np.random.default_rng(0)
        init = cl.kmeans_pp_init(X, 4, rng)
        mb_model, mb_labels = cl.minibatch_kmeans(
            X, 4, batch_size=200, seed=0, init=init)
        ll_model, ll_labels = cl.lloyd_kmeans(X, 4, init=init)
        assert cl.adjusted_rand_index(mb_labels, ll_labels) == 1.0
        assert mb_model.inertia == pytest.approx(ll_model.inertia, rel=0.05)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            cl.minibatch_kmeans(np.zeros((3, 2)), 4)

    def test_nan_rejected(self):
        X = np.array([[0.0, np.nan], [1.0, 1.0]])
        with pytest.raises(ValueError, match="NaN"):
            cl.minibatch_kmeans(X, 1)

    def test_deterministic(self):
        X, _ = planted_gaussians(seed=3)
        m1, l1 = cl.minibatch_kmeans(X, 4, seed=5)
        m2, l2 = cl.minibatch_kmeans(X, 4, seed=5)
        assert np.array_equal(m1.centers, m2.centers)
        assert np.array_equal(l1, l2)


class TestLloydKMeans:
    def test_inertia_monotone_nonincreasing(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 3))
        _, _, trace = cl.lloyd_kmeans(X, 6, seed=1, return_trace=True)
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_identical_points_degenerate(self):
        X = np.ones((10, 2))
        model, labels = cl.lloyd_kmeans(X, 3, seed=0)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(model.centers).all()


class TestSpectralReassign:
    def test_two_blocks(self):
        centers = np.array([[0.0], [0.1], [0.2], [10.0], [10.1]])
        mapping = cl.spectral_reassign(centers, 2, sigma=1.0, seed=0)
        assert len(set(mapping[:3])) == 1
        assert len(set(mapping[3:])) == 1
        assert mapping[0] != mapping[3]

    def test_mapping_is_onto(self):
        rng = np.random.default_rng(4)
        centers = rng.normal(size=(12, 3))
        mapping = cl.spectral_reassign(centers, 4, sigma=0.5, seed=0)
        assert set(mapping.tolist()) == {0, 1, 2, 3}

    def test_k_less_than_c_rejected(self):
        with pytest.raises(ValueError, match="K >= C"):
            cl.spectral_reassign(np.zeros((2, 2)), 3, sigma=1.0)

    def test_ring_and_blob_nonconvex(self):
        # a tight blob inside a radius-5 ring is not linearly separable,
        # so the spectral grouping of many overclusters must beat plain
        # k-means with k = 2
        X, truth = two_scale_clusters(n_per_class=500, seed=7)
        model, over = cl.minibatch_kmeans(X, 40, batch_size=200, seed=3)
        mapping = cl.spectral_reassign(model.centers, 2, sigma=1.0, seed=3)
        concepts = mapping[over]
        assert cl.adjusted_rand_index(concepts, truth) >= 0.95
        _, plain = cl.lloyd_kmeans(X, 2, seed=3)
        assert cl.adjusted_rand_index(plain, truth) <= 0.6


class TestOcra:
    def to_matrix(self, X):
        keys = np.stack([np.zeros(len(X), np.uint32),
                         np.arange(len(X), dtype=np.uint32)], axis=1)
        return EmbeddingMatrix(keys, X.astype(np.float32))

    def test_k_equals_c_skips_reassignment(self):
        X, _ = planted_gaussians(n_clusters=3, per=50, seed=5)
        params = cl.OcraParams(K=3, C=3, batch_size=50, seed=0)
        concepts, over, _, mapping = cl.ocra(self.to_matrix(X), params)
        assert np.array_equal(mapping, np.arange(3))
        assert np.array_equal(concepts, over)

    def test_recovers_nonconvex_concepts(self):
        X, truth = two_scale_clusters(n_per_class=500, seed=7)
        params = cl.OcraParams(K=40, C=2, batch_size=200,
                               spectral_sigma=1.0, seed=3)
        concepts, over, model, mapping = cl.ocra(self.to_matrix(X), params)
        assert cl.adjusted_rand_index(concepts, truth) >= 0.95
        assert np.array_equal(concepts, mapping[over])
        assert len(model.centers) == 40

    def test_not_enough_embeddings(self):
        X = np.zeros((5, 2))
        with pytest.raises(ValueError, match="at least"):
            cl.ocra(self.to_matrix(X), cl.OcraParams(K=10, C=2))

    def test_deterministic(self):
        X, _ = planted_gaussians(seed=9)
        params = cl.OcraParams(K=10, C=4, batch_size=100,
                               spectral_sigma=1.0, seed=1)
        out1 = cl.ocra(self.to_matrix(X), params)
        out2 = cl.ocra(self.to_matrix(X), params)
        for a, b in zip(out1[:2], out2[:2]):
            assert np.array_equal(a, b)
        assert np.array_equal(out1[3], out2[3])


class TestAdjustedRandIndex:
    def test_identical_labelings(self):
        a = np.array([0, 0, 1, 1, 2])
        assert cl.adjusted_rand_index(a, a) == 1.0

    def test_permuted_labels_still_perfect(self):
        a = np.array([0, 0, 1, 1])
        b = np.array([5, 5, 2, 2])
        assert cl.adjusted_rand_index(a, b) == 1.0

    def test_agrees_with_sklearn(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.integers(0, 4, size=50)
            b = rng.integers(0, 3, size=50)
            assert cl.adjusted_rand_index(a, b) == pytest.approx(
                sklearn.adjusted_rand_score(a, b), abs=1e-12)
