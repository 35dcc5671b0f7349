import numpy as np
import pytest

from avparse import fileio
from avparse.errors import FormatError
from avparse.metrics import DenseAnnotation
from avparse.synth import DatasetConfig, generate


class TestFeatureFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((7, 5))
        path = tmp_path / "x.feat"
        fileio.write_features(path, feats)
        np.testing.assert_array_equal(fileio.read_features(path), feats)

    def test_float32_roundtrip(self, tmp_path):
        feats = np.random.default_rng(1).standard_normal((3, 4)).astype(np.float32)
        path = tmp_path / "x32.feat"
        fileio.write_features(path, feats)
        loaded = fileio.read_features(path)
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(loaded, feats)

    def test_wrong_magic_rejected_before_payload(self, tmp_path):
        path = tmp_path / "bad.feat"
        path.write_bytes(b"WHAT" + b"\x00" * 100)
        with pytest.raises(FormatError) as err:
            fileio.read_features(path)
        assert "magic" in str(err.value)

    def test_truncation_names_offset(self, tmp_path):
        path = tmp_path / "x.feat"
        fileio.write_features(path, np.ones((4, 4)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(FormatError) as err:
            fileio.read_features(path)
        assert "offset" in str(err.value)

    def test_version_mismatch_fails_closed(self, tmp_path):
        path = tmp_path / "x.feat"
        fileio.write_features(path, np.ones((2, 2)))
        blob = bytearray(path.read_bytes())
        blob[4] = 77
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as err:
            fileio.read_features(path)
        assert "version" in str(err.value)


class TestWeakAndDense:
    def test_weak_roundtrip(self, tmp_path):
        weak = np.array([1, 0, 1, 1], dtype=np.uint8)
        path = tmp_path / "y.weak"
        fileio.write_weak(path, weak)
        np.testing.assert_array_equal(fileio.read_weak(path), weak)

    def test_dense_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        dense = DenseAnnotation(
            audio=(rng.random((6, 3)) < 0.4).astype(np.uint8),
            visual=(rng.random((6, 3)) < 0.4).astype(np.uint8),
        )
        path = tmp_path / "z.dense"
        fileio.write_dense(path, dense)
        loaded = fileio.read_dense(path)
        np.testing.assert_array_equal(loaded.audio, dense.audio)
        np.testing.assert_array_equal(loaded.visual, dense.visual)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "y.weak"
        fileio.write_weak(path, np.array([1, 0], dtype=np.uint8))
        with open(path, "ab") as fh:
            fh.write(b"!")
        with pytest.raises(FormatError):
            fileio.read_weak(path)


class TestPredictions:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        preds = {
            f"vid{i}": (
                (rng.random((5, 4)) < 0.5).astype(np.uint8),
                (rng.random((5, 4)) < 0.5).astype(np.uint8),
            )
            for i in range(3)
        }
        path = tmp_path / "split.pred"
        fileio.write_predictions(path, preds)
        loaded = fileio.read_predictions(path)
        assert sorted(loaded) == sorted(preds)
        for vid in preds:
            np.testing.assert_array_equal(loaded[vid][0], preds[vid][0])
            np.testing.assert_array_equal(loaded[vid][1], preds[vid][1])

    def test_deterministic_bytes(self, tmp_path):
        preds = {
            "b": (np.ones((2, 2), np.uint8), np.zeros((2, 2), np.uint8)),
            "a": (np.zeros((2, 2), np.uint8), np.ones((2, 2), np.uint8)),
        }
        p1, p2 = tmp_path / "a.pred", tmp_path / "b.pred"
        fileio.write_predictions(p1, preds)
        fileio.write_predictions(p2, dict(reversed(list(preds.items()))))
        assert p1.read_bytes() == p2.read_bytes()


class TestDatasetOnDisk:
    def test_save_and_load_split(self, tmp_path):
        cfg = DatasetConfig(
            train_videos=4, val_videos=2, test_videos=2, segments=6, classes=3,
            audio_dim=5, visual_dim=7, seed=11,
        )
        data = generate(cfg)
        fileio.save_dataset(data, tmp_path)
        for split in ("train", "val", "test"):
            loaded = fileio.load_split(tmp_path / f"{split}.txt")
            originals = data.split(split)
            assert [v.id for v in loaded] == [v.id for v in originals]
            for lv, ov in zip(loaded, originals):
                np.testing.assert_array_equal(lv.audio, ov.audio)
                np.testing.assert_array_equal(lv.visual, ov.visual)
                np.testing.assert_array_equal(lv.weak, ov.weak)
                np.testing.assert_array_equal(lv.dense.audio, ov.dense.audio)
                np.testing.assert_array_equal(lv.dense.visual, ov.dense.visual)

    def test_manifest_field_count_checked(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("id1\tonly\tthree\tfields\n")
        with pytest.raises(FormatError) as err:
            fileio.read_manifest(bad)
        assert "5" in str(err.value)


class TestExportPredictions:
    def test_probabilities_above_threshold_all_ones(self, tmp_path):
        from avparse.head import PredictionTensor

        preds = {
            "v0": PredictionTensor(
                p_audio=np.full((3, 2), 0.6), p_visual=np.full((3, 2), 0.6),
                p_av=np.full((3, 2), 0.36), p_video=np.zeros(2),
            )
        }
        path = tmp_path / "out.pred"
        binary = fileio.export_predictions(path, preds, threshold=0.5)
        assert binary["v0"][0].all() and binary["v0"][1].all()
        loaded = fileio.read_predictions(path)
        assert loaded["v0"][0].all() and loaded["v0"][1].all()

    def test_boundary_probability_is_positive(self, tmp_path):
        from avparse.head import PredictionTensor

        preds = {
            "v0": PredictionTensor(
                p_audio=np.full((1, 1), 0.5), p_visual=np.full((1, 1), 0.4),
                p_av=np.full((1, 1), 0.2), p_video=np.zeros(1),
            )
        }
        binary = fileio.export_predictions(tmp_path / "b.pred", preds, threshold=0.5)
        assert binary["v0"][0][0, 0] == 1  # p == threshold counts positive
        assert binary["v0"][1][0, 0] == 0
