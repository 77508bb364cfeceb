import numpy as np
import pytest

from src.aggregation.actionvlad_layer import actionvlad_encode, actionvlad_forward
from src.aggregation.feature_map import FeatureMap
from src.common.errors import EmptyInputError, InvalidParameterError, ScoreFileError, ShapeMismatchError
from src.data_io.models import LabeledVideo
from src.fusion.score_fusion import (
    ScoreVector,
    fuse_score_tables,
    late_fuse,
    minmax_normalize,
    read_score_file,
    score_fuse_external,
    write_score_file,
)
from src.fusion.stream_fusion import assemble_video, concat_fuse, early_fuse, multicrop_pool

from .helpers import random_codebook, random_feature_map


class TestStreamFusion:
    def test_concat_stacks_channels(self, rng):
        a, b = random_feature_map(rng, 3, 4, 2), random_feature_map(rng, 3, 4, 5)
        fused = concat_fuse(a, b)
        assert (fused.T, fused.N, fused.D) == (3, 4, 7)
        np.testing.assert_array_equal(fused.data[1, 2], np.concatenate([a.data[1, 2], b.data[1, 2]]))
        np.testing.assert_array_equal(fused.data[..., : a.D], a.data)
        np.testing.assert_array_equal(fused.data[..., a.D :], b.data)

    def test_concat_requires_matching_grid(self, rng):
        with pytest.raises(ShapeMismatchError):
            concat_fuse(random_feature_map(rng, 3, 4, 2), random_feature_map(rng, 3, 5, 2))

    def test_early_fusion_is_additive(self, rng):
        for n_b in (4, 6):
            a, b = random_feature_map(rng, 3, 4, 5), random_feature_map(rng, 2, n_b, 5)
            cb = random_codebook(rng, 3, 5, alpha=0.7)
            fused = actionvlad_forward(early_fuse(a, b), cb).matrix
            separate = actionvlad_forward(a, cb).matrix + actionvlad_forward(b, cb).matrix
            assert np.max(np.abs(fused - separate)) <= 1e-12

    def test_early_fusion_with_empty_side(self, rng):
        a = random_feature_map(rng, 2, 3, 4)
        assert early_fuse(a, FeatureMap(np.zeros((0, 3, 4)))) is a

    def test_early_fusion_empty_side_still_checks_dim(self, rng):
        a = random_feature_map(rng, 2, 3, 4)
        with pytest.raises(ShapeMismatchError):
            early_fuse(a, FeatureMap(np.zeros((0, 3, 5))))
        with pytest.raises(ShapeMismatchError):
            early_fuse(FeatureMap(np.zeros((0, 3, 5))), a)
        with pytest.raises(ShapeMismatchError):
            multicrop_pool([a, FeatureMap(np.zeros((0, 3, 5)))])

    def test_early_fusion_requires_same_dim(self, rng):
        with pytest.raises(ShapeMismatchError):
            early_fuse(random_feature_map(rng, 2, 3, 4), random_feature_map(rng, 2, 3, 5))

    def test_multicrop_duplicate_crops_unchanged(self, rng):
        crop = random_feature_map(rng, 3, 4, 5)
        cb = random_codebook(rng, 4, 5)
        single = actionvlad_encode(multicrop_pool([crop]), cb).values
        tripled = actionvlad_encode(multicrop_pool([crop, crop, crop]), cb).values
        np.testing.assert_array_equal(single, actionvlad_encode(crop, cb).values)
        assert np.max(np.abs(tripled - single)) <= 1e-12

    def test_multicrop_needs_a_crop(self):
        with pytest.raises(EmptyInputError):
            multicrop_pool([])

    def test_assemble_video_modes(self, rng):
        a0, a1 = random_feature_map(rng, 3, 4, 2), random_feature_map(rng, 3, 4, 2)
        b0, b1 = random_feature_map(rng, 3, 4, 2), random_feature_map(rng, 3, 4, 2)
        video = LabeledVideo(video_id="v", labels=(0,), streams=((a0, a1), (b0, b1)))

        assert assemble_video(video) is a0
        assert assemble_video(video, stream=1) is b0
        assert assemble_video(video, multicrop=True).T == 6
        assert assemble_video(video, fusion="concat").D == 4
        assert assemble_video(video, fusion="early").T == 6
        assert assemble_video(video, fusion="early", multicrop=True).T == 12
        with pytest.raises(InvalidParameterError):
            assemble_video(video, fusion="sum")

    def test_two_stream_fusion_needs_two_streams(self, rng):
        video = LabeledVideo(video_id="v", labels=(0,), streams=((random_feature_map(rng, 2, 2, 2),),))
        with pytest.raises(InvalidParameterError):
            assemble_video(video, fusion="concat")


class TestScoreVector:
    def test_probability_must_sum_to_one(self):
        with pytest.raises(InvalidParameterError):
            ScoreVector(np.array([0.5, 0.6]), kind="probability")
        assert ScoreVector(np.array([0.25, 0.75]), kind="probability").argmax == 1

    def test_from_logits(self):
        logits = np.array([1.0, 3.0, 2.0])
        probs = ScoreVector.from_logits(logits)
        assert probs.kind == "probability"
        assert abs(probs.values.sum() - 1.0) <= 1e-12
        assert ScoreVector.from_logits(logits, "logit").values.tolist() == logits.tolist()
        with pytest.raises(InvalidParameterError):
            ScoreVector.from_logits(logits, "rank")


class TestScoreFusion:
    def test_late_fuse_endpoints(self, rng):
        sa = ScoreVector.from_logits(rng.normal(size=5))
        sb = ScoreVector.from_logits(rng.normal(size=5))
        np.testing.assert_array_equal(late_fuse(sa, sb, 1.0).values, sa.values)
        np.testing.assert_array_equal(late_fuse(sa, sb, 0.0).values, sb.values)
        np.testing.assert_allclose(late_fuse(sa, sb, 0.3).values, 0.3 * sa.values + 0.7 * sb.values)
        assert late_fuse(sa, sb).kind == "probability"

    def test_late_fuse_logit_endpoint_is_exact(self, rng):
        sa = ScoreVector.from_logits(rng.normal(size=4), "logit")
        sb = ScoreVector.from_logits(-np.abs(rng.normal(size=4)), "logit")
        np.testing.assert_array_equal(late_fuse(sa, sb, 1.0).values, sa.values)

    def test_late_fuse_is_symmetric_at_half(self, rng):
        for kind in ("probability", "logit"):
            sa = ScoreVector.from_logits(rng.normal(size=6), kind)
            sb = ScoreVector.from_logits(rng.normal(size=6), kind)
            np.testing.assert_array_equal(late_fuse(sa, sb, 0.5).values, late_fuse(sb, sa, 0.5).values)

    def test_late_fuse_argmax_ignores_common_scale(self, rng):
        for _ in range(20):
            a, b = rng.normal(size=7), rng.normal(size=7)
            w = float(rng.uniform())
            reference = late_fuse(ScoreVector(a), ScoreVector(b), w).argmax
            for scale in (0.25, 4.0, 1024.0):
                assert late_fuse(ScoreVector(scale * a), ScoreVector(scale * b), w).argmax == reference

    def test_late_fuse_checks(self):
        sa = ScoreVector(np.array([1.0, 2.0]))
        with pytest.raises(ShapeMismatchError):
            late_fuse(sa, ScoreVector(np.array([1.0, 2.0, 3.0])))
        with pytest.raises(InvalidParameterError):
            late_fuse(sa, sa, 1.5)

    def test_minmax(self):
        np.testing.assert_allclose(minmax_normalize(np.array([2.0, 4.0, 3.0])), [0.0, 1.0, 0.5])
        np.testing.assert_array_equal(minmax_normalize(np.array([7.0, 7.0])), [0.0, 0.0])

    def test_external_fusion(self):
        model = ScoreVector(np.array([0.1, 0.7, 0.2]), kind="probability")
        external = ScoreVector(np.array([-3.0, 0.0, 3.0]))
        fused = score_fuse_external(model, external, 0.5)
        np.testing.assert_allclose(fused.values, [0.0, 0.75, 0.5833333333333333])
        np.testing.assert_allclose(score_fuse_external(model, external, 1.0).values, minmax_normalize(model.values))

    def test_fuse_tables_requires_all_videos(self):
        model = {"a": ScoreVector(np.array([1.0, 0.0])), "b": ScoreVector(np.array([0.0, 1.0]))}
        with pytest.raises(ScoreFileError):
            fuse_score_tables(model, {"a": ScoreVector(np.array([1.0, 0.0]))})
        fused = fuse_score_tables(model, model, 0.5)
        assert list(fused) == ["a", "b"]


class TestScoreFiles:
    def test_round_trip_is_exact(self, tmp_path, rng):
        scores = {f"test/v{i}": ScoreVector(rng.normal(size=4)) for i in range(5)}
        path = tmp_path / "scores.tsv"
        write_score_file(path, scores)
        loaded = read_score_file(path)
        assert list(loaded) == list(scores)
        for video_id, vector in scores.items():
            np.testing.assert_array_equal(loaded[video_id].values, vector.values)

    @pytest.mark.parametrize(
        ("content", "line"),
        [
            ("a\t1,2\nb 1,2\n", 2),
            ("a\t1,2\nb\t1,x\n", 2),
            ("a\t1,2\nb\t1,2,3\n", 2),
            ("# header\na\t1,nan\n", 2),
            ("a\t1,2\na\t3,4\n", 2),
        ],
    )
    def test_malformed_lines_report_line_number(self, tmp_path, content, line):
        path = tmp_path / "bad.tsv"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(ScoreFileError) as excinfo:
            read_score_file(path)
        assert excinfo.value.line_number == line

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScoreFileError):
            read_score_file(tmp_path / "missing.tsv")
