import hashlib
import struct

import numpy as np
import pytest

from src.aggregation.actionvlad_layer import actionvlad_encode
from src.aggregation.baseline_pooling import average_pool_raw, max_pool_raw
from src.aggregation.feature_map import FeatureMap
from src.codebook.codebook import build_codebook
from src.common.errors import (
    BadMagicError,
    CheckpointError,
    CheckpointVersionError,
    ChecksumMismatchError,
    DimensionOverflowError,
    FeatureFileError,
    FeatureIOError,
    InvalidParameterError,
    ManifestError,
    SizeMismatchError,
    UnsupportedVersionError,
)
from src.config.avlad_configs import SynthConfig, TrainConfig
from src.data_io.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.data_io.feature_file import (
    HEADER,
    decode_feature_map,
    encode_feature_map,
    expected_payload_floats,
    read_feature_file,
    write_feature_file,
)
from src.data_io.manifest import load_manifest
from src.data_io.synth import MANIFEST_NAME, synth_generate, write_synth_dataset
from src.training.classifier import ClassifierModel, classifier_forward
from src.training.optimizer import AdamState

from .helpers import random_codebook, random_feature_map

SMALL_SYNTH = {
    "num_classes": 4,
    "num_sub_actions": 8,
    "sub_actions_per_class": 3,
    "frames": 6,
    "locations": 3,
    "dim": 4,
    "train_per_class": 3,
    "val_per_class": 2,
    "test_per_class": 2,
}


def _write_features(directory, name: str, data: np.ndarray) -> str:
    write_feature_file(FeatureMap(data), directory / name)
    return name


class TestFeatureFile:
    def test_round_trip_is_bitwise(self, tmp_path, rng):
        f = FeatureMap(rng.normal(size=(3, 4, 5)).astype(np.float32))
        path = tmp_path / "v.avf"
        write_feature_file(f, path)
        loaded = read_feature_file(path)
        assert loaded.data.dtype == np.float32
        np.testing.assert_array_equal(loaded.data, f.data)
        assert path.stat().st_size == HEADER.size + 3 * 4 * 5 * 4

    def test_header_layout(self):
        encoded = encode_feature_map(FeatureMap(np.zeros((2, 3, 4), dtype=np.float32)))
        assert encoded[:4] == b"AVF1"
        assert struct.unpack_from("<IIII", encoded, 4) == (1, 2, 3, 4)

    def test_vgg_sized_payload_size(self):
        assert expected_payload_floats(25, 196, 512) == 10_035_200

    def test_truncated_file(self, rng):
        encoded = encode_feature_map(random_feature_map(rng, 2, 2, 2))
        with pytest.raises(SizeMismatchError):
            decode_feature_map(encoded[:-1])
        with pytest.raises(SizeMismatchError):
            decode_feature_map(encoded[:10])

    def test_bad_magic_and_version(self, rng):
        encoded = bytearray(encode_feature_map(random_feature_map(rng, 1, 1, 1)))
        with pytest.raises(BadMagicError):
            decode_feature_map(b"XVF1" + bytes(encoded[4:]))
        encoded[4:8] = struct.pack("<I", 2)
        with pytest.raises(UnsupportedVersionError):
            decode_feature_map(bytes(encoded))

    def test_dimension_overflow(self):
        header = HEADER.pack(b"AVF1", 1, 1 << 16, 1 << 16, 1 << 16)
        with pytest.raises(DimensionOverflowError):
            decode_feature_map(header)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FeatureIOError):
            read_feature_file(tmp_path / "nope.avf")

    def test_fuzzed_headers_never_crash(self, rng):
        valid = encode_feature_map(random_feature_map(rng, 2, 3, 2))
        for _ in range(1000):
            mutated = bytearray(valid)
            for position in rng.integers(0, HEADER.size, size=int(rng.integers(1, 4))):
                mutated[position] = int(rng.integers(0, 256))
            cut = int(rng.integers(0, len(mutated) + 1)) if rng.random() < 0.3 else len(mutated)
            try:
                f = decode_feature_map(bytes(mutated[:cut]))
            except FeatureFileError:
                continue
            assert f.data.size * 4 == cut - HEADER.size


class TestManifest:
    def test_three_line_manifest(self, tmp_path, rng):
        names = [_write_features(tmp_path, f"v{i}.avf", rng.normal(size=(2, 3, 4))) for i in range(3)]
        (tmp_path / "m.tsv").write_text(
            f"{names[0]}\t0\ttrain\n{names[1]}\t1\tval\n\n# comment\n{names[2]}\t1\ttest\n", encoding="utf-8"
        )
        manifest = load_manifest(tmp_path / "m.tsv")
        assert len(manifest.entries) == 3
        assert manifest.num_classes == 2
        assert [entry.video_id for entry in manifest.entries] == ["v0", "v1", "v2"]
        dataset = manifest.load()
        assert len(dataset.split("train")) == 1 and dataset.feature_dim == 4

    def test_non_contiguous_labels(self, tmp_path, rng):
        a = _write_features(tmp_path, "a.avf", rng.normal(size=(1, 1, 2)))
        (tmp_path / "m.tsv").write_text(f"{a}\t0\ttrain\n{a}\t2\ttrain\n", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.tsv")

    def test_paired_streams_have_equal_frames(self, tmp_path, rng):
        a = _write_features(tmp_path, "a.avf", rng.normal(size=(4, 3, 2)))
        b = _write_features(tmp_path, "b.avf", rng.normal(size=(4, 5, 6)))
        (tmp_path / "m.tsv").write_text(f"{a}\t0\ttrain\t{b}\n{a}\t1\ttrain\t{b}\n", encoding="utf-8")
        manifest = load_manifest(tmp_path / "m.tsv")
        video = manifest.load_split("train")[0]
        assert video.num_streams == 2
        assert video.crops(0)[0].T == video.crops(1)[0].T == 4

    def test_paired_streams_with_different_frames(self, tmp_path, rng):
        a = _write_features(tmp_path, "a.avf", rng.normal(size=(4, 3, 2)))
        b = _write_features(tmp_path, "b.avf", rng.normal(size=(5, 3, 2)))
        (tmp_path / "m.tsv").write_text(f"{a}\t0\ttrain\t{b}\n{a}\t1\ttrain\t{b}\n", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.tsv").load_split("train")

    @pytest.mark.parametrize(
        ("second_line", "expected_line"),
        [
            ("a.avf\t1", 2),
            ("a.avf\tone\ttrain", 2),
            ("a.avf\t1\tholdout", 2),
            ("missing.avf\t1\ttrain", 2),
            ("a.avf\t1,1\ttrain", 2),
        ],
    )
    def test_malformed_line_reports_line_number(self, tmp_path, rng, second_line, expected_line):
        _write_features(tmp_path, "a.avf", rng.normal(size=(1, 1, 2)))
        (tmp_path / "m.tsv").write_text(f"a.avf\t0\ttrain\n{second_line}\n", encoding="utf-8")
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(tmp_path / "m.tsv")
        assert excinfo.value.line_number == expected_line

    def test_multi_label_and_crops(self, tmp_path, rng):
        center = _write_features(tmp_path, "c0.avf", rng.normal(size=(2, 2, 3)))
        side = _write_features(tmp_path, "c1.avf", rng.normal(size=(2, 2, 3)))
        (tmp_path / "m.tsv").write_text(f"{center};{side}\t0,1\ttrain\n", encoding="utf-8")
        manifest = load_manifest(tmp_path / "m.tsv")
        assert manifest.is_multi_label
        video = manifest.load_split("train")[0]
        assert video.labels == (0, 1)
        assert len(video.crops(0)) == 2

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "m.tsv").write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.tsv")


def _sample_checkpoint(rng, K: int = 3, D: int = 4, C: int = 5) -> Checkpoint:  # noqa: N803
    cb = random_codebook(rng, K, D, alpha=123.456)
    model = ClassifierModel(W=rng.normal(size=(C, K * D)), b=rng.normal(size=C), dropout_rate=0.25)
    state = AdamState(
        m={"W": rng.normal(size=(C, K * D)), "b": rng.normal(size=C)},
        v={"W": rng.random(size=(C, K * D)), "b": rng.random(size=C)},
        t=17,
    )
    return Checkpoint(
        train_config=TrainConfig(k=K, alpha=123.456, stage2_lr=3e-5, tie_anchors=True),
        codebook=cb,
        model=model,
        adam_state=state,
        stage=2,
        pooling="vlad",
        fusion="concat",
        stream=1,
        num_classes=C,
        feature_dim=D,
    )


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path, rng):
        ckpt = _sample_checkpoint(rng)
        path = tmp_path / "run" / "model.avc"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)

        np.testing.assert_array_equal(loaded.codebook.residual_anchors, ckpt.codebook.residual_anchors)
        np.testing.assert_array_equal(loaded.codebook.assign_anchors, ckpt.codebook.assign_anchors)
        assert loaded.codebook.alpha == ckpt.codebook.alpha
        np.testing.assert_array_equal(loaded.model.W, ckpt.model.W)
        np.testing.assert_array_equal(loaded.model.b, ckpt.model.b)
        assert loaded.model.dropout_rate == 0.25
        assert loaded.adam_state.t == 17
        np.testing.assert_array_equal(loaded.adam_state.v["W"], ckpt.adam_state.v["W"])
        assert loaded.train_config.to_dict() == ckpt.train_config.to_dict()
        assert (loaded.stage, loaded.pooling, loaded.fusion, loaded.stream) == (2, "vlad", "concat", 1)
        assert encode_checkpoint(loaded) == path.read_bytes()

    def test_codebook_only_and_baseline_checkpoints(self, rng):
        codebook_only = Checkpoint(train_config=TrainConfig(), codebook=random_codebook(rng, 2, 3))
        loaded = decode_checkpoint(encode_checkpoint(codebook_only))
        assert loaded.model is None and loaded.adam_state is None and loaded.stage == 0

        baseline = Checkpoint(
            train_config=TrainConfig(pooling="avg"),
            model=ClassifierModel(W=rng.normal(size=(2, 3)), b=np.zeros(2)),
            stage=1,
            pooling="avg",
        )
        loaded = decode_checkpoint(encode_checkpoint(baseline))
        assert loaded.codebook is None
        np.testing.assert_array_equal(loaded.model.W, baseline.model.W)

    def test_corrupted_byte_fails_checksum(self, rng):
        data = bytearray(encode_checkpoint(_sample_checkpoint(rng)))
        data[len(data) // 2] ^= 0x01
        with pytest.raises(ChecksumMismatchError):
            decode_checkpoint(bytes(data))

    def test_version_mismatch(self, rng):
        data = bytearray(encode_checkpoint(_sample_checkpoint(rng)))
        body = data[:-32]
        body[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(bytes(body) + hashlib.sha256(bytes(body)).digest())

    def test_bad_magic(self, rng):
        data = encode_checkpoint(_sample_checkpoint(rng))
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOPE" + data[4:])

    def test_arbitrary_bytes_give_structured_errors(self, rng):
        valid = encode_checkpoint(_sample_checkpoint(rng, K=2, D=2, C=2))
        for _ in range(300):
            cut = int(rng.integers(0, len(valid)))
            with pytest.raises(CheckpointError):
                decode_checkpoint(valid[:cut])
        for _ in range(200):
            junk = rng.integers(0, 256, size=int(rng.integers(0, 80)), dtype=np.uint8).tobytes()
            with pytest.raises(CheckpointError):
                decode_checkpoint(b"AVC1" + junk)

    def test_reloaded_large_model_classifies_identically(self, tmp_path, rng):
        K, D, C = 64, 512, 3  # noqa: N806
        cb = build_codebook(rng.normal(size=(K, D)), alpha=1000.0)
        model = ClassifierModel(W=rng.normal(size=(C, K * D)), b=rng.normal(size=C))
        ckpt = Checkpoint(
            train_config=TrainConfig(k=K), codebook=cb, model=model, stage=1, num_classes=C, feature_dim=D
        )
        save_checkpoint(tmp_path / "big.avc", ckpt)
        loaded = load_checkpoint(tmp_path / "big.avc")

        video = FeatureMap(rng.normal(size=(2, 4, D)))
        before = classifier_forward(actionvlad_encode(video, cb), model)
        after = classifier_forward(actionvlad_encode(video, loaded.codebook), loaded.model)
        np.testing.assert_array_equal(before.values, after.values)


class TestSynth:
    def test_degenerate_configs(self):
        with pytest.raises(InvalidParameterError):
            SynthConfig(num_classes=1)
        with pytest.raises(InvalidParameterError):
            SynthConfig(num_sub_actions=1, sub_actions_per_class=1, layout="disjoint")

    def test_same_seed_gives_identical_files(self, tmp_path):
        cfg = SynthConfig(**SMALL_SYNTH, seed=5)
        first = write_synth_dataset(synth_generate(cfg), tmp_path / "a")
        second = write_synth_dataset(synth_generate(cfg), tmp_path / "b")
        files_a = sorted(p.relative_to(first.parent) for p in first.parent.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(second.parent) for p in second.parent.rglob("*") if p.is_file())
        assert files_a == files_b
        for relative in files_a:
            assert (first.parent / relative).read_bytes() == (second.parent / relative).read_bytes()

    def test_written_dataset_loads_back(self, tmp_path):
        cfg = SynthConfig(**SMALL_SYNTH, streams=2, crops=2)
        synth = synth_generate(cfg)
        manifest_path = write_synth_dataset(synth, tmp_path)
        assert manifest_path.name == MANIFEST_NAME
        manifest = load_manifest(manifest_path)
        assert manifest.num_classes == 4 and manifest.num_streams == 2
        assert len(manifest.entries_for("train")) == 12
        video = manifest.load_split("val")[0]
        original = synth.data.split("val")[0]
        assert video.video_id == original.video_id
        np.testing.assert_array_equal(video.crops(1)[1].data, original.crops(1)[1].data)

    def test_splits_are_disjoint(self):
        synth = synth_generate(SynthConfig(**SMALL_SYNTH))
        train_ids = {v.video_id for v in synth.data.split("train")}
        val_ids = {v.video_id for v in synth.data.split("val")}
        assert train_ids.isdisjoint(val_ids)
        assert len(synth.data.split("test")) == 8

    def test_default_layout_multisets_differ_but_overlap(self):
        synth = synth_generate(SynthConfig(train_per_class=1, val_per_class=0, test_per_class=0))
        multisets = synth.class_multisets
        assert len(set(multisets)) == len(multisets)
        prototypes = synth.prototypes[0]
        for c, ms in enumerate(multisets):
            overlapping = [other for other in range(len(multisets)) if other != c and set(ms) & set(multisets[other])]
            assert overlapping
            for other in overlapping:
                np.testing.assert_allclose(
                    prototypes[list(ms)].mean(axis=0), prototypes[list(multisets[other])].mean(axis=0), atol=1e-12
                )
                np.testing.assert_array_equal(
                    prototypes[list(ms)].max(axis=0), prototypes[list(multisets[other])].max(axis=0)
                )

    def test_disjoint_noise_free_is_separable_by_average(self):
        cfg = SynthConfig(
            num_classes=3,
            num_sub_actions=3,
            sub_actions_per_class=1,
            layout="disjoint",
            noise_sigma=0.0,
            frames=4,
            locations=2,
            dim=5,
            train_per_class=2,
            val_per_class=1,
            test_per_class=0,
        )
        synth = synth_generate(cfg)
        reps = {}
        for video in synth.data.split("train") + synth.data.split("val"):
            reps.setdefault(video.label, []).append(average_pool_raw(video.crops(0)[0]))
        for label, vectors in reps.items():
            for vector in vectors:
                np.testing.assert_array_equal(vector, vectors[0])
            for other, other_vectors in reps.items():
                if other != label:
                    assert np.linalg.norm(vectors[0] - other_vectors[0]) > 0.1

    def test_multiset_layout_equal_means_different_vlad(self, rng):
        cfg = SynthConfig(
            num_classes=2,
            num_sub_actions=4,
            layout="multiset",
            noise_sigma=0.0,
            frames=12,
            locations=3,
            dim=6,
            train_per_class=1,
            val_per_class=0,
            test_per_class=0,
        )
        synth = synth_generate(cfg)
        first, second = synth.data.split("train")
        f0, f1 = first.crops(0)[0], second.crops(0)[0]
        np.testing.assert_allclose(average_pool_raw(f0), average_pool_raw(f1), atol=1e-5)
        np.testing.assert_allclose(max_pool_raw(f0), max_pool_raw(f1), atol=1e-6)

        cb = build_codebook(rng.normal(size=(4, 6)), alpha=1.0)
        difference = actionvlad_encode(f0, cb).values - actionvlad_encode(f1, cb).values
        assert np.linalg.norm(difference) > 1e-2

    def test_styled_layout_confounds_average_and_max(self, rng):
        cfg = SynthConfig(layout="styled", noise_sigma=0.0, train_per_class=1, val_per_class=0, test_per_class=0)
        synth = synth_generate(cfg)
        videos = synth.data.split("train")
        multisets = synth.class_multisets
        partner = next(c for c in range(1, len(multisets)) if set(multisets[c]) & set(multisets[0]))
        assert multisets[partner] != multisets[0]
        assert np.any(synth.style_offsets[0][0] != 0)
        f0, f1 = videos[0].crops(0)[0], videos[partner].crops(0)[0]
        np.testing.assert_allclose(average_pool_raw(f0), average_pool_raw(f1), atol=1e-5)
        np.testing.assert_allclose(max_pool_raw(f0), max_pool_raw(f1), atol=1e-6)

        prototypes = synth.prototypes[0]
        cb = build_codebook(prototypes + 0.05 * rng.normal(size=prototypes.shape), alpha=5.0)
        difference = actionvlad_encode(f0, cb).values - actionvlad_encode(f1, cb).values
        assert np.linalg.norm(difference) > 1e-2
