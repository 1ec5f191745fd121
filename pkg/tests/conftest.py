from __future__ import annotations

import numpy as np
import pytest

from latefuse.align import ScoreStream


def logit_rows(n: int, offset: float = 0.0) -> np.ndarray:
    """n distinct (real, fake) rows; row k is (-(k+offset), k+offset)."""
    vals = np.arange(n, dtype=float) + offset
    return np.stack([-vals, vals], axis=1)


def audio_stream(resolution_ms: int, n: int, video_id: str = "v") -> ScoreStream:
    return ScoreStream(
        video_id=video_id,
        branch="audio",
        scores=logit_rows(n, offset=resolution_ms / 1000.0),
        resolution_ms=resolution_ms,
    )


def visual_stream(window: int, n: int, video_id: str = "v") -> ScoreStream:
    return ScoreStream(
        video_id=video_id,
        branch="visual_window",
        scores=logit_rows(n),
        window_len_frames=window,
    )


def lmm_stream(stride: int, n: int, video_id: str = "v") -> ScoreStream:
    return ScoreStream(
        video_id=video_id,
        branch="lmm_sparse",
        scores=logit_rows(n),
        sparse_stride_frames=stride,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
