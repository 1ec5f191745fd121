from __future__ import annotations

import numpy as np
import pytest

from conftest import audio_stream, lmm_stream, logit_rows, visual_stream
from oracles import (
    repeat_upsample_oracle,
    sparse_densify_oracle,
    token_map_oracle,
    window_densify_oracle,
)

from latefuse.align import (
    BranchAligner,
    ScoreStream,
    align_video,
    repeat_upsample,
    select_resolutions,
    sparse_densify,
    stack_fused,
    to_token_grid,
    window_densify,
)
from latefuse.timeline import FakeSegment, GroundTruth, TokenGrid


def grid_of(num_tokens: int, token_ms: int = 40) -> TokenGrid:
    return TokenGrid(clip_duration_ms=num_tokens * token_ms, token_ms=token_ms)


class TestScoreStream:
    def test_rejects_empty_scores(self):
        with pytest.raises(ValueError):
            ScoreStream(video_id="v", branch="audio", scores=[], resolution_ms=160)

    def test_rejects_non_pairs(self):
        with pytest.raises(ValueError):
            ScoreStream(video_id="v", branch="audio", scores=[[1, 2, 3]], resolution_ms=160)

    def test_rejects_bad_audio_resolution(self):
        with pytest.raises(ValueError):
            ScoreStream(video_id="v", branch="audio", scores=[[0, 1]], resolution_ms=30)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ScoreStream(video_id="v", branch="audio", scores=[[0, np.inf]], resolution_ms=160)

    def test_lmm_default_stride(self):
        s = ScoreStream(video_id="v", branch="lmm_sparse", scores=[[0, 1]])
        assert s.sparse_stride_frames == 200

    def test_scores_are_immutable(self):
        s = audio_stream(160, 3)
        with pytest.raises(ValueError):
            s.scores[0, 0] = 5.0


class TestRepeatUpsample:
    def test_factor_one_is_identity(self):
        stream = audio_stream(40, 3)
        out = repeat_upsample(stream, grid_of(3))
        assert np.array_equal(out.values, stream.scores)

    def test_factor_four(self):
        stream = audio_stream(160, 2)
        out = repeat_upsample(stream, grid_of(8))
        expected = np.repeat(stream.scores, 4, axis=0)
        assert np.array_equal(out.values, expected)

    def test_tail_fill_repeats_last(self):
        # one 320 ms score over 9 tokens: 8 repeats plus 1 tail fill
        stream = audio_stream(320, 1)
        out = repeat_upsample(stream, grid_of(9))
        assert np.array_equal(out.values, np.repeat(stream.scores, 9, axis=0))

    def test_truncates_excess_source(self):
        stream = audio_stream(160, 5)
        out = repeat_upsample(stream, grid_of(8))
        assert np.array_equal(out.values, np.repeat(stream.scores[:2], 4, axis=0))

    def test_rejects_non_multiple_resolution(self):
        stream = audio_stream(60, 4)
        with pytest.raises(ValueError, match="not a multiple"):
            repeat_upsample(stream, grid_of(6))

    def test_rejects_finer_than_token(self):
        stream = audio_stream(20, 4)
        with pytest.raises(ValueError, match="not a multiple"):
            repeat_upsample(stream, grid_of(2))

    def test_matches_oracle_exhaustively(self):
        # acceptance criterion: exact match on exhaustive small grids
        for factor in range(1, 17):
            for num_tokens in range(1, 65):
                for m in range(1, 13):
                    stream = audio_stream(40 * factor, m)
                    out = repeat_upsample(stream, grid_of(num_tokens))
                    expected = repeat_upsample_oracle(
                        [tuple(row) for row in stream.scores], factor, num_tokens
                    )
                    assert out.values.shape == (num_tokens, 2)
                    assert [tuple(r) for r in out.values] == expected, (factor, num_tokens, m)

    def test_preserves_value_set(self, rng):
        stream = audio_stream(320, 4)
        out = repeat_upsample(stream, grid_of(40))
        source_rows = {tuple(r) for r in stream.scores}
        assert {tuple(r) for r in out.values} <= source_rows

    def test_piecewise_constant_blocks(self):
        stream = audio_stream(320, 5)
        out = repeat_upsample(stream, grid_of(40))
        blocks = out.values.reshape(5, 8, 2)
        for b in blocks:
            assert np.all(b == b[0])


class TestSelectResolutions:
    def test_keeps_exactly_requested(self):
        streams = [audio_stream(r, 2) for r in (20, 40, 80, 160, 320, 640)]
        kept = select_resolutions(streams, {160, 320, 640})
        assert [s.resolution_ms for s in kept] == [160, 320, 640]

    def test_keep_all_is_identity(self):
        streams = [audio_stream(r, 2) for r in (160, 320)]
        kept = select_resolutions(streams, {160, 320})
        assert {s.resolution_ms for s in kept} == {160, 320}

    def test_missing_resolution_named(self):
        streams = [audio_stream(r, 2) for r in (320, 640)]
        with pytest.raises(ValueError, match="160"):
            select_resolutions(streams, {160})

    def test_rejects_non_audio(self):
        with pytest.raises(ValueError, match="audio"):
            select_resolutions([visual_stream(3, 4)], {160})


class TestWindowDensify:
    def test_window_one_is_identity(self):
        stream = visual_stream(1, 5)
        assert np.array_equal(window_densify(stream, 5), stream.scores)

    def test_odd_window_replication(self):
        stream = visual_stream(3, 3)
        out = window_densify(stream, 5)
        p, q, r = stream.scores
        assert np.array_equal(out, np.stack([p, p, q, r, r]))

    def test_even_window_uses_floor_half_center(self):
        # W=4 puts window j's score on frame j+2, so [p,p,p,q,r,r]
        stream = visual_stream(4, 3)
        out = window_densify(stream, 6)
        p, q, r = stream.scores
        assert np.array_equal(out, np.stack([p, p, p, q, r, r]))

    def test_inconsistent_length_rejected(self):
        stream = visual_stream(3, 3)
        with pytest.raises(ValueError, match="windows"):
            window_densify(stream, 6)

    def test_clip_shorter_than_window_rejected(self):
        stream = visual_stream(4, 1)
        with pytest.raises(ValueError, match="shorter"):
            window_densify(stream, 3)

    def test_matches_oracle_exhaustively(self):
        for window in range(1, 9):
            for num_frames in range(window, 65):
                stream = visual_stream(window, num_frames - window + 1)
                out = window_densify(stream, num_frames)
                expected = window_densify_oracle(
                    [tuple(r) for r in stream.scores], num_frames, window
                )
                assert [tuple(r) for r in out] == expected, (window, num_frames)

    def test_constant_input_constant_output(self):
        stream = ScoreStream(
            video_id="v", branch="visual_window", scores=[[0.5, -0.5]] * 4, window_len_frames=3
        )
        out = window_densify(stream, 6)
        assert np.all(out == out[0])

    def test_every_output_value_from_input(self):
        stream = visual_stream(5, 7)
        out = window_densify(stream, 11)
        source = {tuple(r) for r in stream.scores}
        assert {tuple(r) for r in out} <= source


class TestSparseDensify:
    def test_single_sample(self):
        stream = lmm_stream(200, 1)
        out = sparse_densify(stream, 1)
        assert np.array_equal(out, stream.scores)

    def test_tie_goes_to_earlier_sample(self):
        stream = lmm_stream(4, 2)
        out = sparse_densify(stream, 8)
        a, b = stream.scores
        assert np.array_equal(out, np.stack([a, a, a, b, b, b, b, b]))

    def test_long_stride(self):
        stream = lmm_stream(200, 2)
        out = sparse_densify(stream, 400)
        a, b = stream.scores
        assert np.array_equal(out[100], a)  # tie at 100 resolves to the earlier sample
        assert np.array_equal(out[101], b)
        assert np.all(out[:101] == a)
        assert np.all(out[101:] == b)

    def test_exact_at_sample_indices(self):
        stream = lmm_stream(7, 5)
        out = sparse_densify(stream, 31)
        for k in range(5):
            assert np.array_equal(out[7 * k], stream.scores[k])

    def test_inconsistent_length_rejected(self):
        stream = lmm_stream(4, 3)
        with pytest.raises(ValueError, match="samples"):
            sparse_densify(stream, 8)

    def test_matches_oracle_exhaustively(self):
        for stride in range(1, 17):
            for num_frames in range(1, 65):
                count = (num_frames - 1) // stride + 1
                stream = lmm_stream(stride, count)
                out = sparse_densify(stream, num_frames)
                expected = sparse_densify_oracle(
                    [tuple(r) for r in stream.scores], num_frames, stride
                )
                assert [tuple(r) for r in out] == expected, (stride, num_frames)


class TestToTokenGrid:
    def test_identity_at_25fps(self):
        frames = logit_rows(10)
        out = to_token_grid(frames, 25.0, grid_of(10))
        assert np.array_equal(out.values, frames)

    def test_50fps_takes_nearest_frame(self):
        frames = logit_rows(20)
        out = to_token_grid(frames, 50.0, grid_of(10))
        expected = frames[token_map_oracle(20, 10, 50.0, 40)]
        assert np.array_equal(out.values, expected)

    def test_low_fps_frame_serves_two_tokens(self):
        frames = logit_rows(5)
        out = to_token_grid(frames, 12.5, grid_of(10))
        expected = frames[np.repeat(np.arange(5), 2)]
        assert np.array_equal(out.values, expected)

    def test_frame_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="frames"):
            to_token_grid(logit_rows(9), 25.0, grid_of(10))

    def test_matches_oracle_on_awkward_rates(self):
        for fps in (12.5, 24.0, 29.97, 30.0, 50.0, 60.0):
            grid = TokenGrid(clip_duration_ms=1000)
            from latefuse.timeline import frames_in_clip

            n = frames_in_clip(1000, fps)
            frames = logit_rows(n)
            out = to_token_grid(frames, fps, grid)
            expected = frames[token_map_oracle(n, grid.num_tokens, fps, 40)]
            assert np.array_equal(out.values, expected), fps


class TestStackFused:
    def test_canonical_order_single_token(self):
        grid = grid_of(1)
        visual = to_token_grid([[0.0, 1.0]], 25.0, grid, label="visual")
        audio = [
            repeat_upsample(audio_stream(r, 1), grid) for r in (160, 320, 640)
        ]
        frames, layout = stack_fused(visual, audio)
        assert layout == ("visual", "audio160", "audio320", "audio640")
        a, b, c = (r / 1000.0 for r in (160, 320, 640))
        assert frames.tolist() == [[0.0, 1.0, -a, a, -b, b, -c, c]]

    def test_all_zero_inputs_zero_vector(self):
        grid = grid_of(2)
        zeros = np.zeros((2, 2))
        visual = to_token_grid(zeros, 25.0, grid, label="visual")
        audio = [
            repeat_upsample(
                ScoreStream(video_id="v", branch="audio", scores=np.zeros((1, 2)), resolution_ms=r),
                grid,
            )
            for r in (160, 320)
        ]
        frames, _ = stack_fused(visual, audio)
        assert frames.shape == (2, 6)
        assert np.all(frames == 0.0)

    def test_unstack_recovers_streams_bit_exactly(self, rng):
        grid = grid_of(3)
        visual = to_token_grid(rng.normal(size=(3, 2)), 25.0, grid, label="visual")
        audio = [repeat_upsample(audio_stream(r, n), grid) for r, n in ((160, 1), (320, 1))]
        frames, layout = stack_fused(visual, audio)
        assert layout == ("visual", "audio160", "audio320")
        assert np.array_equal(frames[:, 0:2], visual.values)
        assert np.array_equal(frames[:, 2:4], audio[0].values)
        assert np.array_equal(frames[:, 4:6], audio[1].values)

    def test_grid_mismatch_rejected(self):
        visual = to_token_grid(logit_rows(4), 25.0, grid_of(4), label="visual")
        audio = [repeat_upsample(audio_stream(160, 2), grid_of(8))]
        with pytest.raises(ValueError, match="grid"):
            stack_fused(visual, audio)

    def test_unsorted_audio_rejected(self):
        grid = grid_of(8)
        visual = to_token_grid(logit_rows(8), 25.0, grid, label="visual")
        audio = [
            repeat_upsample(audio_stream(320, 1), grid),
            repeat_upsample(audio_stream(160, 2), grid),
        ]
        with pytest.raises(ValueError, match="ascending"):
            stack_fused(visual, audio)


class TestAlignVideo:
    def gt(self, duration=640, video_id="v"):
        return GroundTruth(
            video_id=video_id,
            clip_duration_ms=duration,
            fake_segments=(FakeSegment(80, 240, "both"),),
        )

    def streams(self, duration=640, window=4, video_id="v"):
        frames = duration // 40
        out = [visual_stream(window, frames - window + 1, video_id=video_id)]
        out.append(lmm_stream(200, (frames - 1) // 200 + 1, video_id=video_id))
        for r in (160, 320, 640):
            out.append(audio_stream(r, -(-duration // r), video_id=video_id))
        return out

    def test_default_layout_eight_dims(self):
        seq = align_video(self.streams(), self.gt())
        assert seq.stream_layout == ("visual", "audio160", "audio320", "audio640")
        assert seq.frames.shape == (16, 8)

    def test_audio_only_subset(self):
        seq = align_video(self.streams(), self.gt(), keep_res=(320,))
        assert seq.stream_layout == ("visual", "audio320")
        assert seq.frames.shape == (16, 4)

    def test_no_audio(self):
        seq = align_video(self.streams(), self.gt(), keep_res=())
        assert seq.stream_layout == ("visual",)
        assert seq.frames.shape == (16, 2)

    def test_lmm_appended_after_audio(self):
        seq = align_video(self.streams(), self.gt(), include_lmm=True)
        assert seq.stream_layout == ("visual", "audio160", "audio320", "audio640", "lmm")

    def test_missing_visual_rejected(self):
        streams = [s for s in self.streams() if s.branch != "visual_window"]
        with pytest.raises(ValueError, match="visual_window"):
            align_video(streams, self.gt())

    def test_foreign_stream_rejected(self):
        streams = self.streams() + [audio_stream(160, 4, video_id="other")]
        with pytest.raises(ValueError, match="other"):
            align_video(streams, self.gt())

    def test_stream_values_accessor(self):
        seq = align_video(self.streams(), self.gt())
        assert np.array_equal(seq.stream_values("audio320"), seq.frames[:, 4:6])


class TestBranchAligner:
    def test_transform_matches_function(self):
        helper = TestAlignVideo()
        gt = helper.gt()
        streams = helper.streams()
        aligner = BranchAligner(keep_res=(160, 320, 640))
        (seq,) = aligner.fit().transform([(gt, streams)])
        direct = align_video(streams, gt)
        assert np.array_equal(seq.frames, direct.frames)
        assert seq.stream_layout == direct.stream_layout

    def test_get_params_roundtrip(self):
        aligner = BranchAligner(token_ms=20, keep_res=(320,), include_lmm=True)
        params = aligner.get_params()
        clone = BranchAligner(**params)
        assert clone.token_ms == 20 and clone.keep_res == (320,) and clone.include_lmm
