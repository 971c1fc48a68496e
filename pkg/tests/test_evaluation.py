"""Confusion/metric arithmetic against hand tallies, run aggregation closed
forms, embedding extraction, and PCA checked against a covariance
eigendecomposition oracle."""

from __future__ import annotations

import numpy as np
import pytest

from xray_triage import evaluation as ev
from xray_triage import synthetic
from xray_triage.training import ArrayDataset
from xray_triage.models import CovidNetConfig, FilterNetConfig, build_covid_net, build_filter_net


class TestConfusionMatrix:
    def test_hand_tally(self):
        cm = ev.confusion_matrix([0, 1, 1, 2, 0], [0, 1, 2, 2, 1], 3)
        np.testing.assert_array_equal(cm, [[1, 0, 0], [1, 1, 0], [0, 1, 1]])

    def test_rows_are_actual_columns_predicted(self):
        cm = ev.confusion_matrix(predicted=[1], actual=[0], num_classes=2)
        assert cm[0, 1] == 1 and cm.sum() == 1

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            ev.confusion_matrix([0, 3], [0, 1], 3)
        with pytest.raises(ValueError, match="outside"):
            ev.confusion_matrix([0, 1], [-1, 1], 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ev.confusion_matrix([0, 1], [0], 2)


class TestSensitivitySpecificity:
    def test_two_class_hand_values(self):
        # [[5,1],[2,8]]: class 0 sees TP=5 FN=1 FP=2 TN=8
        m = ev.sensitivity_specificity(np.array([[5, 1], [2, 8]]))
        assert m[0].sensitivity == pytest.approx(5 / 6)
        assert m[0].specificity == pytest.approx(8 / 10)
        assert m[1].sensitivity == pytest.approx(8 / 10)
        assert m[1].specificity == pytest.approx(5 / 6)

    def test_three_class_hand_values(self):
        cm = np.array([[10, 2, 0], [1, 5, 1], [0, 0, 4]])
        m = ev.sensitivity_specificity(cm)
        assert m[2].sensitivity == pytest.approx(4 / 4)
        # class 2: FP = 1, TN = 23 - 4 - 0 - 1
        assert m[2].specificity == pytest.approx(18 / 19)

    def test_zero_over_zero_is_none_not_zero(self):
        m = ev.sensitivity_specificity(np.array([[0, 0], [2, 5]]))
        assert m[0].sensitivity is None  # no actual class-0 samples
        assert m[1].specificity is None  # no negatives for class 1
        assert m[0].specificity == pytest.approx(5 / 7)
        assert m[1].sensitivity == pytest.approx(5 / 7)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            ev.sensitivity_specificity(np.zeros((2, 3)))


class TestAccuracy:
    def test_trace_over_total(self):
        assert ev.accuracy_from_confusion(np.array([[3, 1], [1, 5]])) == 0.8

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.accuracy_from_confusion(np.zeros((2, 2)))


class TestAggregateRuns:
    A = np.array([[8, 2], [1, 9]])
    B = np.array([[6, 4], [3, 7]])

    def test_single_run_matches_per_run_metrics(self):
        agg = ev.aggregate_runs([self.A])
        single = ev.sensitivity_specificity(self.A)
        assert agg.num_runs == 1
        for c in range(2):
            assert agg.sensitivity_mean[c] == pytest.approx(single[c].sensitivity)
            assert agg.sensitivity_std[c] == 0.0

    def test_two_run_closed_form(self):
        agg = ev.aggregate_runs([self.A, self.B])
        np.testing.assert_array_equal(agg.total_confusion, self.A + self.B)
        vals = np.array([0.8, 0.6])  # class-0 sensitivities of A and B
        assert agg.sensitivity_mean[0] == pytest.approx(vals.mean())
        assert agg.sensitivity_std[0] == pytest.approx(vals.std(ddof=0))

    def test_pooled_comes_from_the_summed_matrix(self):
        agg = ev.aggregate_runs([self.A, self.B])
        pooled = ev.sensitivity_specificity(self.A + self.B)
        assert agg.pooled[1].sensitivity == pytest.approx(pooled[1].sensitivity)

    def test_order_invariance(self):
        C = np.array([[5, 5], [5, 5]])
        one = ev.aggregate_runs([self.A, self.B, C])
        two = ev.aggregate_runs([C, self.A, self.B])
        np.testing.assert_array_equal(one.total_confusion, two.total_confusion)
        assert one.sensitivity_mean == pytest.approx(two.sensitivity_mean)
        assert one.sensitivity_std == pytest.approx(two.sensitivity_std)

    def test_undefined_runs_are_left_out_of_stats(self):
        empty_class = np.array([[0, 0], [2, 8]])
        agg = ev.aggregate_runs([self.A, empty_class])
        # class-0 sensitivity exists only for A
        assert agg.sensitivity_mean[0] == pytest.approx(0.8)
        assert agg.sensitivity_std[0] == 0.0

    def test_sample_std_needs_two_defined_runs(self):
        agg = ev.aggregate_runs([self.A], ddof=1)
        assert agg.sensitivity_std[0] is None

    def test_shape_disagreement_and_empty_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            ev.aggregate_runs([self.A, np.zeros((3, 3))])
        with pytest.raises(ValueError, match="at least one"):
            ev.aggregate_runs([])


def tiny_filter_model():
    return build_filter_net(
        FilterNetConfig(stem_channels=4, num_ds_blocks=2, input_size=16), seed=0
    )


class TestEvaluateModel:
    def test_result_internal_consistency(self):
        model = tiny_filter_model()
        x, y = synthetic.filter_arrays(10, 6, size=16, seed=0)
        data = ArrayDataset(x, y)
        result = ev.evaluate_model(model, data, batch_size=4)
        assert result.probabilities.shape == (16, 2)
        np.testing.assert_allclose(result.probabilities.sum(axis=1), 1.0, atol=1e-5)
        np.testing.assert_array_equal(result.y_true, y)
        np.testing.assert_array_equal(result.y_pred, result.probabilities.argmax(axis=1))
        assert result.confusion.sum() == 16
        assert result.accuracy == pytest.approx(
            np.trace(result.confusion) / 16
        )
        direct = ev.sensitivity_specificity(result.confusion)
        assert result.per_class == direct

    def test_batch_size_does_not_change_the_answer(self):
        model = tiny_filter_model()
        x, y = synthetic.filter_arrays(7, 6, size=16, seed=1)
        data = ArrayDataset(x, y)
        small = ev.evaluate_model(model, data, batch_size=3)
        big = ev.evaluate_model(model, data, batch_size=32)
        np.testing.assert_allclose(small.probabilities, big.probabilities, atol=1e-6)
        np.testing.assert_array_equal(small.confusion, big.confusion)


class FlakySubset:
    """Array-backed dataset whose load fails for one index."""

    def __init__(self, x, y, bad_index):
        self.x, self.y, self.bad = x, y, bad_index

    def __len__(self):
        return len(self.x)

    def load(self, i, rng=None):
        if i == self.bad:
            raise OSError("truncated file")
        return self.x[i], int(self.y[i])


class TestExtractEmbeddings:
    MODEL = None

    def model(self):
        if TestExtractEmbeddings.MODEL is None:
            TestExtractEmbeddings.MODEL = build_covid_net(
                CovidNetConfig(growth_rate=4, layers_per_block=1, head_channels=8,
                               input_size=16),
                seed=0,
            )
        return TestExtractEmbeddings.MODEL

    def test_shapes_labels_and_ids(self):
        model = self.model()
        x, y = synthetic.classifier_arrays(
            {"no_finding": 2, "lung_opacity": 2, "covid19": 1}, size=16, seed=0
        )
        emb = ev.extract_embeddings(model, ArrayDataset(x, y), batch_size=2)
        assert emb.vectors.shape == (5, 8)
        assert emb.labels == ["no_finding"] * 2 + ["lung_opacity"] * 2 + ["covid19"]
        assert emb.ids == [str(i) for i in range(5)]
        assert emb.skipped == []

    def test_identical_inputs_give_identical_rows(self):
        model = self.model()
        x, y = synthetic.classifier_arrays({"covid19": 1}, size=16, seed=0)
        x2 = np.concatenate([x, x])
        emb = ev.extract_embeddings(model, ArrayDataset(x2, np.array([2, 2])))
        np.testing.assert_array_equal(emb.vectors[0], emb.vectors[1])

    def test_failing_sample_is_skipped_not_fatal(self):
        model = self.model()
        x, y = synthetic.classifier_arrays({"no_finding": 4}, size=16, seed=3)
        emb = ev.extract_embeddings(model, FlakySubset(x, y, bad_index=2))
        assert emb.vectors.shape[0] == 3
        assert emb.skipped == ["2"]
        assert len(emb.labels) == len(emb.ids) == 3


def eigh_oracle(data, k):
    """Top-k principal axes via the covariance eigenproblem."""
    x = np.asarray(data, dtype=np.float64)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(len(x) - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    return eigvals[order][:k], eigvecs[:, order][:, :k].T


class TestPCA:
    def random_blob(self, n=60, d=6, seed=0):
        rng = np.random.default_rng(seed)
        # anisotropic cloud: distinct spectrum so axes are well separated
        scales = np.array([5.0, 3.0, 1.5, 0.8, 0.3, 0.1])
        return rng.normal(size=(n, d)) * scales + rng.normal(size=d)

    def test_axes_match_eigendecomposition_oracle(self):
        data = self.random_blob()
        result = ev.pca_project(data, 3)
        eigvals, eigvecs = eigh_oracle(data, 3)
        np.testing.assert_allclose(result.explained_variance, eigvals, rtol=1e-10)
        for row, oracle_row in zip(result.components, eigvecs):
            cosine = abs(float(np.dot(row, oracle_row)))
            angle = np.arccos(min(cosine, 1.0))
            assert angle < 1e-4

    def test_near_rank_one_data_concentrates_variance(self):
        rng = np.random.default_rng(1)
        direction = rng.normal(size=8)
        direction /= np.linalg.norm(direction)
        t = rng.normal(size=(100, 1)) * 10.0
        data = t * direction + rng.normal(size=(100, 8)) * 1e-3
        result = ev.pca_project(data, 1)
        assert result.explained_variance_ratio[0] >= 0.999
        assert not result.rank_deficient

    def test_exact_rank_deficiency_truncates_axes(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=(20, 1))
        data = t * np.ones(5)  # exactly rank 1
        result = ev.pca_project(data, 3)
        assert result.rank_deficient
        assert result.components.shape == (1, 5)
        assert result.projected.shape == (20, 1)

    def test_sign_convention_and_determinism(self):
        data = self.random_blob(seed=3)
        a = ev.pca_project(data, 4)
        b = ev.pca_project(data, 4)
        np.testing.assert_array_equal(a.components, b.components)
        for row in a.components:
            assert row[np.abs(row).argmax()] > 0

    def test_projections_are_translation_invariant(self):
        data = self.random_blob(seed=4)
        shifted = data + np.array([100.0, -50.0, 3.0, 0.0, 7.0, 1.0])
        a = ev.pca_project(data, 2)
        b = ev.pca_project(shifted, 2)
        np.testing.assert_allclose(a.projected, b.projected, atol=1e-8)

    def test_projected_columns_are_uncorrelated_with_matching_variance(self):
        data = self.random_blob(seed=5)
        result = ev.pca_project(data, 3)
        cov = np.cov(result.projected, rowvar=False)
        np.testing.assert_allclose(np.diag(cov), result.explained_variance, rtol=1e-10)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 1e-8

    def test_k_bounds_enforced(self):
        data = self.random_blob()
        for k in (0, 7):
            with pytest.raises(ValueError):
                ev.pca_project(data, k)
        with pytest.raises(ValueError):
            ev.pca_project(np.zeros(5), 1)


class TestProjectorFiles:
    def test_round_trip_and_layout(self, tmp_path):
        vectors = np.array([[1.5, -2.25], [0.1, 1e-7]], dtype=np.float64)
        emb = ev.Embeddings(vectors, ["covid19", "no_finding"], ["a.png", "b.png"])
        vec_path, meta_path = ev.write_projector_files(emb, tmp_path / "proj")
        rows = [
            [float(v) for v in line.split("\t")]
            for line in vec_path.read_text().splitlines()
        ]
        np.testing.assert_array_equal(np.array(rows), vectors)
        meta_lines = meta_path.read_text().splitlines()
        assert meta_lines[0] == "label\tid"
        assert meta_lines[1] == "covid19\ta.png"
        assert meta_lines[2] == "no_finding\tb.png"
