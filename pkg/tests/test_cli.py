import numpy as np
import pytest

from afmi.cli import main, parse_pi_grid, parse_reference, write_pgm
from afmi.data import save_idx_images, save_idx_labels
from afmi.model import Model, forward_logits, save_model

from helpers import random_cnn_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small CNN over 8x8 images plus IDX files whose labels the model predicts."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(19)
    m = random_cnn_model(rng)
    weights = dict(m.weights)
    weights["f2b"] = np.zeros(3, np.float32)
    model = Model(
        layers=m.layers,
        weights=weights,
        input_shape=m.input_shape,
        class_count=m.class_count,
        last_conv=m.last_conv,
    )
    (root / "model.afw1").write_bytes(save_model(model))

    data_rng = np.random.default_rng(1019)
    raw = data_rng.integers(0, 256, size=(40, 8, 8), dtype=np.uint8)
    labels = np.array(
        [
            int(np.argmax(forward_logits(model, (img / 255.0)[None].astype(np.float32))))
            for img in raw
        ],
        dtype=np.uint8,
    )
    assert len(set(labels.tolist())) == 3  # every class appears
    (root / "images.idx").write_bytes(save_idx_images(raw))
    (root / "labels.idx").write_bytes(save_idx_labels(labels))

    black = np.zeros((2, 8, 8), dtype=np.uint8)
    (root / "black.idx").write_bytes(save_idx_images(black))
    return root, model, labels


def run(argv):
    return main([str(a) for a in argv])


class TestParsing:
    def test_reference_specs(self):
        assert parse_reference("black") == ("black", 0)
        assert parse_reference("white") == ("white", 0)
        assert parse_reference("random:9") == ("random", 9)
        assert parse_reference("random") == ("random", 0)
        with pytest.raises(ValueError):
            parse_reference("noise")

    def test_pi_grid(self):
        grid = parse_pi_grid("0.05:1.0:0.05")
        assert len(grid) == 20
        assert grid[0] == 0.05 and grid[-1] == 1.0
        assert parse_pi_grid("1.0") == (1.0,)
        assert parse_pi_grid("0.2:0.6:0.2") == (0.2, 0.4, 0.6)
        with pytest.raises(ValueError):
            parse_pi_grid("1:2")

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as e:
            run(["--help"])
        assert e.value.code == 0
        assert "afmi" in capsys.readouterr().out


class TestPredict:
    def test_prints_class_and_probs(self, workspace, capsys):
        root, model, labels = workspace
        code = run(
            ["predict", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--index", "3"]
        )
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == f"class {labels[3]}"
        assert out[1].startswith("probs ")
        assert len(out[1].split()) == 4

    def test_bad_container_exits_nonzero(self, workspace, tmp_path, capsys):
        root, _, _ = workspace
        bad = tmp_path / "bad.afw1"
        blob = bytearray((root / "model.afw1").read_bytes())
        blob[:4] = b"XFW1"
        bad.write_bytes(bytes(blob))
        code = run(
            ["predict", "--model", bad, "--images", root / "images.idx"]
        )
        assert code == 1
        assert "magic" in capsys.readouterr().err


class TestAttribute:
    def test_reference_input_gives_blank_pgm(self, workspace, tmp_path):
        root, _, _ = workspace
        out = tmp_path / "out"
        code = run(
            ["attribute", "--model", root / "model.afw1", "--images",
             root / "black.idx", "--class", "0", "--method", "afmi",
             "--out", out]
        )
        assert code == 0
        pgm = (out / "saliency.pgm").read_bytes()
        header, rest = pgm.split(b"\n", 1)
        assert header == b"P5"
        dims, rest = rest.split(b"\n", 1)
        assert dims == b"8 8"
        maxval, pixels = rest.split(b"\n", 1)
        assert maxval == b"255"
        assert pixels == bytes(64)

    def test_outputs_byte_identical_across_runs(self, workspace, tmp_path):
        root, _, _ = workspace
        blobs = []
        for run_id in range(2):
            out = tmp_path / f"run{run_id}"
            code = run(
                ["attribute", "--model", root / "model.afw1", "--images",
                 root / "images.idx", "--labels", root / "labels.idx",
                 "--index", "1", "--method", "random", "--seed", "42",
                 "--out", out]
            )
            assert code == 0
            blobs.append(
                (
                    (out / "saliency.pgm").read_bytes(),
                    (out / "ranking.csv").read_bytes(),
                    (out / "completeness.csv").read_bytes(),
                )
            )
        assert blobs[0] == blobs[1]

    def test_afmi_completeness_report(self, workspace, tmp_path):
        root, _, _ = workspace
        out = tmp_path / "cr"
        code = run(
            ["attribute", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--labels", root / "labels.idx",
             "--index", "2", "--method", "afmi", "--out", out]
        )
        assert code == 0
        lines = (out / "completeness.csv").read_text().splitlines()
        assert lines[0] == "method,raw_sum,target_delta,completeness_ratio"
        fields = lines[1].split(",")
        assert fields[0] == "afmi"
        float(fields[1]), float(fields[2]), float(fields[3])

    def test_ranking_csv_is_permutation(self, workspace, tmp_path):
        root, _, _ = workspace
        out = tmp_path / "rk"
        run(
            ["attribute", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--labels", root / "labels.idx",
             "--method", "gradient", "--out", out]
        )
        lines = (out / "ranking.csv").read_text().splitlines()[1:]
        assert len(lines) == 64
        seen = {(int(l.split(",")[1]), int(l.split(",")[2])) for l in lines}
        assert len(seen) == 64
        scores = [float(l.split(",")[3]) for l in lines]
        assert scores == sorted(scores, reverse=True)

    def test_needs_class_or_labels(self, workspace, tmp_path, capsys):
        root, _, _ = workspace
        code = run(
            ["attribute", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--method", "afmi", "--out", tmp_path / "x"]
        )
        assert code == 1
        assert "class" in capsys.readouterr().err


class TestEvaluate:
    def test_single_point_grid_equals_plain_accuracy(self, workspace, tmp_path):
        root, model, labels = workspace
        out = tmp_path / "ev"
        code = run(
            ["evaluate", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--labels", root / "labels.idx",
             "--method", "random", "--pi-grid", "1.0", "--count", "10",
             "--out", out]
        )
        assert code == 0
        rows = (out / "curves.csv").read_text().splitlines()
        accuracy_rows = [r for r in rows if r.startswith("random,accuracy,1,")]
        assert len(accuracy_rows) == 1
        # labels were assigned from model predictions, so accuracy is 1
        assert accuracy_rows[0].endswith(",1")

    def test_unknown_method_exits_nonzero(self, workspace, tmp_path, capsys):
        root, _, _ = workspace
        code = run(
            ["evaluate", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--labels", root / "labels.idx",
             "--method", "lime", "--pi-grid", "1.0", "--out", tmp_path / "y"]
        )
        assert code == 1
        assert "unknown" in capsys.readouterr().err

    def test_multi_method_auc_rows(self, workspace, tmp_path):
        root, _, _ = workspace
        out = tmp_path / "ev4"
        code = run(
            ["evaluate", "--model", root / "model.afw1", "--images",
             root / "images.idx", "--labels", root / "labels.idx",
             "--method", "random,gradient", "--method", "gradcam,afmi",
             "--pi-grid", "0.5:1.0:0.5", "--count", "6", "--out", out]
        )
        assert code == 0
        lines = (out / "auc.csv").read_text().splitlines()
        assert lines[0] == "method,accuracy_auc,softmax_auc"
        assert [l.split(",")[0] for l in lines[1:]] == [
            "random", "gradient", "gradcam", "afmi",
        ]

    def test_deterministic_csv_bytes(self, workspace, tmp_path):
        root, _, _ = workspace
        blobs = []
        for run_id in range(2):
            out = tmp_path / f"det{run_id}"
            code = run(
                ["evaluate", "--model", root / "model.afw1", "--images",
                 root / "images.idx", "--labels", root / "labels.idx",
                 "--method", "random,afmi", "--pi-grid", "0.25:1.0:0.25",
                 "--count", "8", "--seed", "7", "--threads", str(1 + run_id * 3),
                 "--out", out]
            )
            assert code == 0
            blobs.append(
                ((out / "curves.csv").read_bytes(), (out / "auc.csv").read_bytes())
            )
        assert blobs[0] == blobs[1]


class TestFaithfulnessCommand:
    def test_train_equals_val_perfect_accuracy(self, workspace, tmp_path):
        root, model, labels = workspace
        # single image per class, labels match predictions by construction
        picks = []
        seen = set()
        for i, lab in enumerate(labels.tolist()):
            if lab not in seen:
                seen.add(lab)
                picks.append(i)
        from afmi.data import load_idx_images

        raw = load_idx_images((root / "images.idx").read_bytes())
        sub = tmp_path / "sub"
        sub.mkdir()
        (sub / "imgs.idx").write_bytes(save_idx_images(raw[picks]))
        (sub / "labs.idx").write_bytes(save_idx_labels(labels[picks]))
        out = tmp_path / "faith"
        code = run(
            ["faithfulness", "--model", root / "model.afw1",
             "--train-images", sub / "imgs.idx", "--train-labels", sub / "labs.idx",
             "--val-images", sub / "imgs.idx", "--val-labels", sub / "labs.idx",
             "--out", out]
        )
        assert code == 0
        report = (out / "accuracy.csv").read_text().splitlines()[1]
        assert report == "3,3,3,1"
        protos = (out / "prototypes.csv").read_text().splitlines()
        assert len(protos) == 1 + 3 * 6  # header + C*K rows

    def test_missing_class_exits_nonzero(self, workspace, tmp_path, capsys):
        root, model, labels = workspace
        keep = [i for i, lab in enumerate(labels.tolist()) if lab != 0]
        from afmi.data import load_idx_images

        raw = load_idx_images((root / "images.idx").read_bytes())
        sub = tmp_path / "nc"
        sub.mkdir()
        (sub / "imgs.idx").write_bytes(save_idx_images(raw[keep]))
        (sub / "labs.idx").write_bytes(save_idx_labels(labels[keep]))
        code = run(
            ["faithfulness", "--model", root / "model.afw1",
             "--train-images", sub / "imgs.idx", "--train-labels", sub / "labs.idx",
             "--val-images", sub / "imgs.idx", "--val-labels", sub / "labs.idx",
             "--out", tmp_path / "nope"]
        )
        assert code == 1
        assert "classes" in capsys.readouterr().err


class TestPgm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        m = rng.uniform(size=(5, 9)).astype(np.float32)
        path = tmp_path / "m.pgm"
        write_pgm(path, m)
        blob = path.read_bytes()
        header, dims, maxval, pixels = blob.split(b"\n", 3)
        assert header == b"P5" and maxval == b"255"
        w, h = (int(v) for v in dims.split())
        assert (w, h) == (9, 5)
        arr = np.frombuffer(pixels, dtype=np.uint8).reshape(5, 9)
        assert np.array_equal(arr, np.floor(m.astype(np.float64) * 255.999))

    def test_quantization_bounds(self, tmp_path):
        m = np.array([[0.0, 0.999, 1.0]])
        path = tmp_path / "q.pgm"
        write_pgm(path, m)
        pixels = path.read_bytes().split(b"\n", 3)[3]
        assert list(pixels) == [0, 255, 255]
