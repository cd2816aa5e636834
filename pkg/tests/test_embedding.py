"""PCA basis fitting and noise walks."""

import numpy as np
import pytest

import nrt
from nrt.exceptions import DegenerateDataError, ValidationError
from nrt.embedding import (PcaBasis, class_logit_centroids, fit_pca,
                           nearest_class, noise_walk)


class TestFitPca:
    def test_planted_plane_captured_exactly(self, rng):
        # points on a 2-d plane embedded in K=4
        basis_vecs = np.linalg.qr(rng.normal(size=(4, 2)))[0].T
        coeffs = rng.normal(size=(200, 2)) * [3.0, 1.5]
        points = coeffs @ basis_vecs + rng.normal(size=4)
        basis = fit_pca(points)
        assert sum(basis.explained_variance) == pytest.approx(1.0, abs=1e-9)

    def test_matches_eigensolver_oracle(self, rng):
        points = rng.normal(size=(500, 6)) @ rng.normal(size=(6, 6))
        basis = fit_pca(points)
        cov = np.cov(points.T, ddof=1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        for i in range(2):
            dot = abs(np.dot(basis.components[i], evecs[:, order[i]]))
            assert dot >= 0.999

    def test_orthonormal_within_tolerance(self, rng):
        basis = fit_pca(rng.normal(size=(100, 5)))
        gram = basis.components @ basis.components.T
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-9)

    def test_explained_variance_non_increasing(self, rng):
        basis = fit_pca(rng.normal(size=(100, 5)) * [5, 2, 1, 1, 1])
        assert basis.explained_variance[0] >= basis.explained_variance[1]

    def test_isotropic_cloud_fractions(self, rng):
        k = 6
        basis = fit_pca(rng.normal(size=(10000, k)))
        for frac in basis.explained_variance:
            assert abs(frac - 1.0 / k) / (1.0 / k) < 0.2

    def test_sign_convention_deterministic(self, rng):
        points = rng.normal(size=(50, 4)) * [4, 2, 1, 1]
        a = fit_pca(points)
        b = fit_pca(points)
        np.testing.assert_array_equal(a.components, b.components)
        for row in a.components:
            assert row[np.abs(row).argmax()] > 0

    def test_degenerate_data(self):
        with pytest.raises(DegenerateDataError):
            fit_pca(np.ones((10, 4)))

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            fit_pca(np.zeros((2, 4)))

    def test_json_round_trip(self, rng):
        basis = fit_pca(rng.normal(size=(40, 4)))
        back = PcaBasis.from_json(basis.to_json())
        np.testing.assert_allclose(back.components, basis.components)
        np.testing.assert_allclose(back.mean, basis.mean)


class TestNoiseWalk:
    def test_single_checkpoint_is_clean_logits(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        x = test_set.images[0]
        walk = noise_walk(model, x, [0.0], walks=5, seed=0)
        clean = model.forward(x).data.astype(np.float64)
        np.testing.assert_array_equal(walk.expected_logits[0], clean)

    def test_checkpoints_must_ascend_from_zero(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        x = test_set.images[0]
        with pytest.raises(ValidationError):
            noise_walk(model, x, [0.5, 1.0], walks=2, seed=0)
        with pytest.raises(ValidationError):
            noise_walk(model, x, [0.0, 1.0, 0.5], walks=2, seed=0)

    def test_deterministic(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        x = test_set.images[2]
        a = noise_walk(model, x, [0.0, 0.5, 1.0], walks=8, seed=4)
        b = noise_walk(model, x, [0.0, 0.5, 1.0], walks=8, seed=4)
        np.testing.assert_array_equal(a.expected_logits, b.expected_logits)

    def test_projection_length(self, tiny_trained, rng):
        model, _, test_set, _ = tiny_trained
        basis = fit_pca(model.forward(test_set.images).data)
        walk = noise_walk(model, test_set.images[0], [0.0, 0.5, 1.0], walks=4,
                          seed=0, basis=basis)
        assert walk.path2d.shape == (3, 2)

    def test_doubling_walks_halves_terminal_variance(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        x = test_set.images[0]
        reps = 150

        def terminal_pc1(walks, seed):
            w = noise_walk(model, x, [0.0, 1.0], walks=walks, seed=seed)
            return w.expected_logits[-1][0]

        small = np.array([terminal_pc1(4, 1000 + r) for r in range(reps)])
        big = np.array([terminal_pc1(8, 5000 + r) for r in range(reps)])
        ratio = big.var(ddof=1) / small.var(ddof=1)
        assert abs(ratio - 0.5) / 0.5 < 0.3


class TestCentroids:
    def test_centroid_shape_and_nearest(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        cents = class_logit_centroids(model, test_set)
        assert cents.shape == (4, 4)
        # an accurate model puts each class's own centroid nearest to most
        # of its clean logits
        hits = 0
        for k in range(4):
            z = model.forward(test_set.images[test_set.labels == k]).data
            hits += sum(nearest_class(v, cents) == k for v in z)
        assert hits / len(test_set) > 0.9

    def test_missing_class_rejected(self, tiny_trained):
        model, _, test_set, _ = tiny_trained
        from nrt.data import Dataset
        keep = test_set.labels != 2
        partial = Dataset(test_set.images[keep], test_set.labels[keep],
                          num_classes=4)
        with pytest.raises(ValidationError):
            class_logit_centroids(model, partial)
