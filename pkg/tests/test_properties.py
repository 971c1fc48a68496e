"""Property-based invariants over randomized inputs: simplex outputs, pixel
conservation under quarter turns, bounded interpolation, split partitioning,
and sampling-plan accounting."""

from __future__ import annotations

from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xray_triage import datasets as ds
from xray_triage import imaging
from xray_triage import tensor_core as tc
from xray_triage import training as tr

gray_images = arrays(
    np.uint8,
    st.tuples(st.integers(2, 12), st.integers(2, 12), st.just(1)),
)
logit_matrices = arrays(
    np.float32,
    st.tuples(st.integers(1, 6), st.integers(2, 5)),
    elements=st.floats(-30, 30, width=32),
)


@given(logit_matrices)
def test_softmax_rows_are_probability_vectors(logits):
    p = tc.softmax(logits)
    assert (p >= 0).all() and (p <= 1).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)


@given(logit_matrices, st.floats(0, 50, width=32))
def test_softmax_is_shift_invariant(logits, shift):
    np.testing.assert_allclose(
        tc.softmax(logits), tc.softmax(logits + shift), atol=1e-5
    )


@given(gray_images, st.integers(1, 3))
def test_quarter_turns_preserve_the_pixel_multiset(pixels, turns):
    img = imaging.ImageBuffer.from_array(pixels)
    rotated = imaging.rotate_quarter(img, turns)
    assert Counter(rotated.pixels.ravel()) == Counter(pixels.ravel())


@given(gray_images)
def test_four_quarter_turns_are_the_identity(pixels):
    img = imaging.ImageBuffer.from_array(pixels)
    out = img
    for _ in range(4):
        out = imaging.rotate_quarter(out, 1)
    np.testing.assert_array_equal(out.pixels, img.pixels)


@given(gray_images, st.integers(1, 20), st.integers(1, 20))
def test_bilinear_resize_stays_within_the_input_range(pixels, h, w):
    img = imaging.ImageBuffer.from_array(pixels)
    out = imaging.resize_bilinear(img, h, w)
    assert out.pixels.min() >= pixels.min()
    assert out.pixels.max() <= pixels.max()
    assert (out.height, out.width) == (h, w)


@given(gray_images)
def test_unit_interval_normalization_is_exactly_scaling(pixels):
    img = imaging.ImageBuffer.from_array(pixels)
    x = imaging.normalize(img, "unit_interval")
    np.testing.assert_allclose(
        x[0], pixels[:, :, 0].astype(np.float32) / 255.0, atol=1e-7
    )


@given(
    st.lists(st.integers(0, 4), min_size=1, max_size=12),
    st.floats(0, 0.99, exclude_max=False),
)
def test_smoothed_targets_stay_on_the_simplex(labels, alpha):
    y = tr.one_hot(np.array(labels), 5)
    smoothed = tr.smooth_targets(y, alpha).y_soft
    assert (smoothed >= 0).all()
    np.testing.assert_allclose(smoothed.sum(axis=1), 1.0, atol=1e-5)
    # smoothing never changes the argmax
    np.testing.assert_array_equal(smoothed.argmax(axis=1), y.argmax(axis=1))


@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=6))
def test_majority_class_always_gets_weight_one(counts):
    for mode in ("as_written", "inverse"):
        w = tr.class_weights(counts, mode).weights
        majority = int(np.argmax(counts))
        assert w[majority] == 1.0
        if mode == "as_written":
            assert (w <= 1.0).all()
        else:
            assert (w >= 1.0).all()


@st.composite
def patient_manifests(draw):
    n_patients = draw(st.integers(4, 25))
    records = []
    for p in range(n_patients):
        n_images = draw(st.integers(1, 4))
        label = draw(st.sampled_from(["no_finding", "lung_opacity", "covid19"]))
        for k in range(n_images):
            records.append(ds.SampleRecord(
                f"img/p{p}_{k}.png", "cohen", label, f"pat{p}", None, None
            ))
    return ds.Manifest(records, "classifier")


@settings(max_examples=40)
@given(patient_manifests(), st.integers(0, 500))
def test_patient_split_partitions_without_leakage(manifest, seed):
    assignment = ds.split(manifest, "by_patient", seed=seed)
    seen = set()
    for record in manifest.records:
        which = assignment.of(record)
        assert which in ("train", "validation", "test")
        seen.add(record.image_path)
    assert len(seen) == len(manifest)
    for pid in {r.patient_id for r in manifest.records}:
        splits = {assignment.of(r) for r in manifest.records if r.patient_id == pid}
        assert len(splits) == 1


@settings(max_examples=40)
@given(
    st.lists(st.sampled_from("abc"), min_size=2, max_size=60).filter(
        lambda ls: len(set(ls)) >= 2
    ),
    st.integers(0, 100),
)
def test_equalized_plans_cover_the_requested_length(labels, seed):
    plan = ds.sampling_plan(labels, "equalized", seed=seed)
    assert len(plan.indices) == len(labels)
    assert set(plan.indices.tolist()) <= set(range(len(labels)))
    assert sum(plan.class_draw_counts.values()) == len(labels)
    # every draw really carries the label it is accounted under
    tally = Counter(labels[i] for i in plan.indices)
    assert tally == plan.class_draw_counts


@settings(max_examples=40)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=60), st.integers(0, 100))
def test_natural_plans_are_permutations(labels, seed):
    plan = ds.sampling_plan(labels, "natural", seed=seed)
    assert sorted(plan.indices.tolist()) == list(range(len(labels)))


@given(
    st.lists(st.integers(0, 2), min_size=1, max_size=50),
    st.lists(st.integers(0, 2), min_size=1, max_size=50),
)
def test_confusion_row_sums_count_actual_labels(pred, actual):
    n = min(len(pred), len(actual))
    pred, actual = pred[:n], actual[:n]
    cm = ev_confusion(pred, actual)
    assert cm.sum() == n
    for c in range(3):
        assert cm[c].sum() == actual.count(c)
        assert cm[:, c].sum() == pred.count(c)


def ev_confusion(pred, actual):
    from xray_triage.evaluation import confusion_matrix

    return confusion_matrix(pred, actual, 3)
