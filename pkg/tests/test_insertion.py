import numpy as np
import pytest

from afmi.data import Dataset
from afmi.insertion import (
    MetricCurve,
    accuracy_at_pi,
    auc,
    default_pi_grid,
    evaluate,
    mask_insert,
    method_provider,
    rank_pixels,
    softmax_ratio_at_pi,
    write_auc_csv,
    write_curves_csv,
)
from afmi.model import forward_logits, make_reference, predict
from afmi.tensor import softmax

from helpers import f32, random_cnn_model


@pytest.fixture(scope="module")
def small_setup():
    rng = np.random.default_rng(100)
    model = random_cnn_model(rng)
    images = rng.normal(size=(6, *model.input_shape)).astype(np.float32)
    labels = np.array(
        [int(np.argmax(forward_logits(model, img))) for img in images[:3]]
        + [int(rng.integers(model.class_count)) for _ in range(3)],
        dtype=np.int64,
    )
    dataset = Dataset(images=images, labels=labels)
    reference = make_reference("black", model.input_shape)
    return model, dataset, reference


class TestRankPixels:
    def test_descending_with_row_major_ties(self):
        order = rank_pixels(np.array([[0.9, 0.1], [0.5, 0.5]]))
        assert order.tolist() == [0, 2, 3, 1]

    def test_constant_map_row_major(self):
        order = rank_pixels(np.full((3, 3), 0.5))
        assert order.tolist() == list(range(9))

    def test_permutation_property(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            m = rng.uniform(size=(5, 7))
            order = rank_pixels(m)
            assert sorted(order.tolist()) == list(range(35))
            vals = m.ravel()[order]
            assert np.all(np.diff(vals) <= 0)


class TestMaskInsert:
    def test_full_insertion_is_identity(self):
        rng = np.random.default_rng(1)
        image = rng.normal(size=(3, 4, 4)).astype(np.float32)
        ref = rng.normal(size=(3, 4, 4)).astype(np.float32)
        ranking = rank_pixels(rng.uniform(size=(4, 4)))
        assert np.array_equal(mask_insert(image, ranking, 1.0, ref), image)

    def test_zero_insertion_is_reference(self):
        rng = np.random.default_rng(2)
        image = rng.normal(size=(1, 4, 4)).astype(np.float32)
        ref = rng.normal(size=(1, 4, 4)).astype(np.float32)
        ranking = rank_pixels(rng.uniform(size=(4, 4)))
        assert np.array_equal(mask_insert(image, ranking, 0.0, ref), ref)

    def test_ceil_rule_on_2x2(self):
        image = f32([[[1, 2], [3, 4]]])
        ref = np.zeros((1, 2, 2), np.float32)
        ranking = np.array([3, 0, 1, 2])
        out = mask_insert(image, ranking, 0.5, ref)
        # ceil(0.5 * 4) = 2 pixels: positions 3 and 0
        assert np.array_equal(out, f32([[[1, 0], [0, 4]]]))

    def test_all_channels_move_together(self):
        rng = np.random.default_rng(3)
        image = rng.normal(size=(3, 2, 2)).astype(np.float32)
        ref = np.zeros((3, 2, 2), np.float32)
        out = mask_insert(image, np.array([2, 1, 0, 3]), 0.25, ref)
        assert np.array_equal(out[:, 1, 0], image[:, 1, 0])
        assert np.all(out[:, 0, 0] == 0)


class TestAuc:
    def test_constant_curve(self):
        curve = MetricCurve("accuracy", default_pi_grid(), (0.7,) * 20, 0.7)
        assert abs(auc(curve) - 0.7) < 1e-9

    def test_linear_ramp(self):
        curve = MetricCurve("accuracy", (1.0,), (1.0,), 0.0)
        assert abs(auc(curve) - 0.5) < 1e-12

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            MetricCurve("accuracy", (0.5, 0.2), (1.0, 1.0), 0.0)
        with pytest.raises(ValueError):
            MetricCurve("accuracy", (0.0, 0.5), (1.0, 1.0), 0.0)
        with pytest.raises(ValueError):
            MetricCurve("accuracy", (), (), 0.0)

    def test_accuracy_range_validation(self):
        with pytest.raises(ValueError):
            MetricCurve("accuracy", (0.5, 1.0), (0.2, 1.5), 0.0)
        # softmax ratios may legitimately exceed 1
        MetricCurve("softmax-ratio", (0.5, 1.0), (0.2, 1.5), 0.0)


class TestEndpointIdentities:
    def test_accuracy_at_full_insertion(self, small_setup):
        model, dataset, reference = small_setup
        provider = method_provider("random", model, reference=reference, seed=5)
        got = accuracy_at_pi(model, dataset, provider, 1.0, reference)
        plain = np.mean(
            [
                predict(model, img)[0] == lab
                for img, lab in zip(dataset.images, dataset.labels)
            ]
        )
        assert got == plain

    def test_softmax_ratio_at_full_insertion(self, small_setup):
        model, dataset, reference = small_setup
        provider = method_provider("gradient", model, reference=reference)
        assert softmax_ratio_at_pi(model, dataset, provider, 1.0, reference) == 1.0

    def test_single_point_grid_matches_plain_accuracy(self, small_setup):
        model, dataset, reference = small_setup
        curves = evaluate(model, dataset, ["random"], [1.0], reference=reference)
        acc_curve, sm_curve = curves["random"]
        plain = np.mean(
            [
                predict(model, img)[0] == lab
                for img, lab in zip(dataset.images, dataset.labels)
            ]
        )
        assert acc_curve.values[0] == plain
        assert sm_curve.values[0] == 1.0


class TestEvaluate:
    def test_empty_dataset_rejected(self, small_setup):
        model, dataset, reference = small_setup
        empty = Dataset(
            images=np.zeros((0, *model.input_shape), np.float32),
            labels=np.zeros(0, np.int64),
        )
        with pytest.raises(ValueError):
            evaluate(model, empty, ["random"], [1.0], reference=reference)

    def test_unknown_method_rejected(self, small_setup):
        model, dataset, reference = small_setup
        with pytest.raises(ValueError):
            evaluate(model, dataset, ["occlusion"], [1.0], reference=reference)

    def test_anchor_uses_pure_reference(self, small_setup):
        model, dataset, reference = small_setup
        curves = evaluate(model, dataset, ["random"], [1.0], reference=reference)
        acc_curve, _ = curves["random"]
        ref_pred = int(np.argmax(forward_logits(model, reference)))
        want = float(np.mean(dataset.labels == ref_pred))
        assert acc_curve.anchor == want

    def test_softmax_anchor_value(self, small_setup):
        model, dataset, reference = small_setup
        curves = evaluate(model, dataset, ["random"], [1.0], reference=reference)
        _, sm_curve = curves["random"]
        ref_probs = softmax(forward_logits(model, reference)).astype(np.float64)
        ratios = []
        for img, lab in zip(dataset.images, dataset.labels):
            p = softmax(forward_logits(model, img)).astype(np.float64)[lab]
            ratios.append(ref_probs[lab] / p)
        assert abs(sm_curve.anchor - np.mean(ratios)) < 1e-12

    def test_threaded_matches_serial(self, small_setup):
        model, dataset, reference = small_setup
        grid = (0.25, 0.5, 1.0)
        serial = evaluate(
            model, dataset, ["afmi", "random"], grid, reference=reference, seed=3
        )
        threaded = evaluate(
            model, dataset, ["afmi", "random"], grid,
            reference=reference, seed=3, threads=4,
        )
        for m in serial:
            for cs, ct in zip(serial[m], threaded[m]):
                assert cs == ct

    def test_csv_outputs_deterministic(self, small_setup, tmp_path):
        model, dataset, reference = small_setup
        grid = (0.5, 1.0)
        blobs = []
        for run in range(2):
            curves = evaluate(
                model, dataset, ["afmi", "gradcam", "random"], grid,
                reference=reference, seed=11,
            )
            c_path = tmp_path / f"curves{run}.csv"
            a_path = tmp_path / f"auc{run}.csv"
            write_curves_csv(c_path, curves)
            write_auc_csv(a_path, curves)
            blobs.append((c_path.read_bytes(), a_path.read_bytes()))
        assert blobs[0] == blobs[1]
        text = blobs[0][0].decode()
        assert text.splitlines()[0] == "method,metric,pi,value"
        assert text.count("afmi,accuracy") == 3  # anchor + 2 grid points
        auc_text = blobs[0][1].decode()
        assert auc_text.splitlines()[0] == "method,accuracy_auc,softmax_auc"
        assert len(auc_text.splitlines()) == 4
