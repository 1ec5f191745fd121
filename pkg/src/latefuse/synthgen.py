"""Deterministic synthetic scenario generator for desk-scale verification.

Emits ground truth plus per-branch score streams that mimic what the upstream
branch models would produce: the fake logit is drawn around +hot_logit over
regions forged in that branch's modality and around -hot_logit elsewhere (the
real logit mirrors it), with Gaussian noise on top. Each emitted stream can
independently "miss" a fake segment with probability ``miss_prob``, in which
case it scores that region as real.

Per-video RNG streams are derived from (seed, video index), so generation is
reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import math

import numpy as np

from .align import (
    BRANCH_AUDIO,
    BRANCH_LMM,
    BRANCH_VISUAL,
    DEFAULT_SPARSE_STRIDE,
    DEFAULT_WINDOW_FRAMES,
    ScoreStream,
)
from .timeline import FakeSegment, GroundTruth, frames_in_clip

SCENARIOS = ("RVRA", "FVRA", "RVFA", "FVFA")

VISUAL_SIDE = ("visual", "both")
AUDIO_SIDE = ("audio", "both")

MIN_FAKE_MS = 80
MAX_FAKE_MS = 2000

DEFAULT_MIX = {"RVRA": 0.25, "FVRA": 0.25, "RVFA": 0.25, "FVFA": 0.25}


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for the synthetic benchmark generator."""

    num_videos: int = 100
    seed: int = 0
    duration_range_ms: tuple[int, int] = (8000, 20000)
    fake_duration_mean_ms: float = 320.0
    fakes_per_video_range: tuple[int, int] = (1, 2)
    scenario_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    noise_sigma: float = 0.5
    miss_prob: float = 0.1
    fps: float = 25.0
    window_len_frames: int = DEFAULT_WINDOW_FRAMES
    sparse_stride_frames: int = DEFAULT_SPARSE_STRIDE
    audio_resolutions: tuple[int, ...] = (160, 320, 640)
    hot_logit: float = 2.0

    def __post_init__(self) -> None:
        if self.num_videos < 0:
            raise ValueError("num_videos must be >= 0")
        lo, hi = self.duration_range_ms
        if not 0 < lo <= hi:
            raise ValueError(f"invalid duration range {self.duration_range_ms}")
        if lo < MIN_FAKE_MS:
            raise ValueError(
                f"minimum clip duration {lo} ms cannot hold a fake segment "
                f"(shortest fake is {MIN_FAKE_MS} ms)"
            )
        if frames_in_clip(lo, self.fps) < self.window_len_frames:
            raise ValueError(
                f"minimum clip duration {lo} ms yields fewer frames than the "
                f"{self.window_len_frames}-frame visual window"
            )
        klo, khi = self.fakes_per_video_range
        if not 1 <= klo <= khi:
            raise ValueError(f"invalid fakes_per_video_range {self.fakes_per_video_range}")
        if self.fake_duration_mean_ms <= 0:
            raise ValueError("fake_duration_mean_ms must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must be in [0, 1]")
        mix = dict(self.scenario_mix)
        unknown = set(mix) - set(SCENARIOS)
        if unknown:
            raise ValueError(f"unknown scenario(s) in mix: {sorted(unknown)}")
        weights = np.array([float(mix.get(s, 0.0)) for s in SCENARIOS])
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("scenario weights must be non-negative and sum to a positive value")
        object.__setattr__(self, "scenario_mix", {s: float(mix.get(s, 0.0)) for s in SCENARIOS})
        for r in self.audio_resolutions:
            if r <= 0 or r % 20 != 0:
                raise ValueError(f"audio resolution {r} must be a positive multiple of 20")

    @property
    def scenario_probs(self) -> np.ndarray:
        w = np.array([self.scenario_mix[s] for s in SCENARIOS])
        return w / w.sum()


def scenario_of(gt: GroundTruth) -> str:
    """Scenario class implied by the union of a video's segment modalities."""
    modalities = {seg.modality for seg in gt.fake_segments}
    visual = bool(modalities & set(VISUAL_SIDE))
    audio = bool(modalities & set(AUDIO_SIDE))
    if visual and audio:
        return "FVFA"
    if visual:
        return "FVRA"
    if audio:
        return "RVFA"
    return "RVRA"


def _overlaps(start: float, end: float, segments) -> bool:
    return any(min(end, seg.end_ms) - max(start, seg.start_ms) > 0 for seg in segments)


def _sample_segments(rng, cfg: ScenarioConfig, duration_ms: int, scenario: str) -> list[FakeSegment]:
    count = int(rng.integers(cfg.fakes_per_video_range[0], cfg.fakes_per_video_range[1] + 1))
    # lognormal with the configured mean and fixed shape sigma=0.5
    shape = 0.5
    mu = math.log(cfg.fake_duration_mean_ms) - shape**2 / 2.0
    placed: list[tuple[int, int]] = []
    for _ in range(count):
        length = int(round(rng.lognormal(mu, shape)))
        length = max(MIN_FAKE_MS, min(length, MAX_FAKE_MS, duration_ms))
        for _attempt in range(50):
            start = int(rng.integers(0, duration_ms - length + 1))
            if not any(min(start + length, e) - max(start, s) > 0 for s, e in placed):
                placed.append((start, start + length))
                break
    if scenario == "FVRA":
        modalities = ["visual"] * len(placed)
    elif scenario == "RVFA":
        modalities = ["audio"] * len(placed)
    else:
        modalities = [("visual", "audio", "both")[int(rng.integers(0, 3))] for _ in placed]
        has_visual = any(m in VISUAL_SIDE for m in modalities)
        has_audio = any(m in AUDIO_SIDE for m in modalities)
        if not (has_visual and has_audio):
            modalities[0] = "both"
    segments = [
        FakeSegment(start_ms=s, end_ms=e, modality=m)
        for (s, e), m in zip(placed, modalities)
    ]
    return sorted(segments, key=lambda seg: (seg.start_ms, seg.end_ms))


def _logit_rows(rng, cfg: ScenarioConfig, hot_states: np.ndarray) -> np.ndarray:
    m = np.where(hot_states, cfg.hot_logit, -cfg.hot_logit)
    means = np.stack([-m, m], axis=1)
    return means + rng.normal(0.0, cfg.noise_sigma, size=means.shape)


def _draw_misses(rng, cfg: ScenarioConfig, gt: GroundTruth, stream_plan) -> dict[str, set[int]]:
    """Per-stream sets of segment indices the stream misses (scores as real).

    Misses are drawn independently per (stream, relevant segment), but a miss
    is cancelled when it would leave a segment with no observing stream at
    all: a region invisible to every branch is undetectable by construction
    and would measure label noise rather than fusion quality, so the last
    observer always keeps its signal.
    """
    missed: dict[str, set[int]] = {}
    for name, relevant, observed in stream_plan:
        missed[name] = {i for i in relevant if rng.random() < cfg.miss_prob}
    for seg_index in range(len(gt.fake_segments)):
        observers = [name for name, relevant, observed in stream_plan if seg_index in observed]
        if observers and all(seg_index in missed[name] for name in observers):
            missed[observers[0]].discard(seg_index)
    return missed


def _generate_video(cfg: ScenarioConfig, index: int) -> tuple[GroundTruth, list[ScoreStream]]:
    rng = np.random.default_rng([cfg.seed, index])
    video_id = f"vid{index:05d}"
    scenario = SCENARIOS[int(rng.choice(len(SCENARIOS), p=cfg.scenario_probs))]
    duration_ms = int(rng.integers(cfg.duration_range_ms[0], cfg.duration_range_ms[1] + 1))
    segments = [] if scenario == "RVRA" else _sample_segments(rng, cfg, duration_ms, scenario)
    gt = GroundTruth(
        video_id=video_id,
        clip_duration_ms=duration_ms,
        fps=cfg.fps,
        fake_segments=tuple(segments),
    )

    num_frames = frames_in_clip(duration_ms, cfg.fps)
    frame_ms = 1000.0 / cfg.fps
    visual_idx = [i for i, s in enumerate(gt.fake_segments) if s.modality in VISUAL_SIDE]
    audio_idx = [i for i, s in enumerate(gt.fake_segments) if s.modality in AUDIO_SIDE]
    stride = cfg.sparse_stride_frames
    sample_frames = list(range(0, num_frames, stride))

    def lmm_sees(i: int) -> bool:
        seg = gt.fake_segments[i]
        return any(
            min((f + 1) * frame_ms, seg.end_ms) - max(f * frame_ms, seg.start_ms) > 0
            for f in sample_frames
        )

    # (name, relevant segment indices, indices the stream actually observes);
    # audio blocks and visual windows tile the clip, so they observe every
    # relevant segment, while sparse LMM samples may skip short ones entirely
    stream_plan = [
        ("visual", visual_idx, set(visual_idx)),
        ("lmm", visual_idx, {i for i in visual_idx if lmm_sees(i)}),
    ]
    for r in sorted(cfg.audio_resolutions):
        stream_plan.append((f"audio{r}", audio_idx, set(audio_idx)))
    missed = _draw_misses(rng, cfg, gt, stream_plan)

    def hot_for(name: str, relevant) -> list[FakeSegment]:
        return [gt.fake_segments[i] for i in relevant if i not in missed[name]]

    streams: list[ScoreStream] = []
    # visual branch scores are emitted per sliding window, already smeared the
    # way the upstream model would smear them
    w = cfg.window_len_frames
    hot = hot_for("visual", visual_idx)
    states = np.array(
        [_overlaps(j * frame_ms, (j + w) * frame_ms, hot) for j in range(num_frames - w + 1)]
    )
    streams.append(
        ScoreStream(
            video_id=video_id,
            branch=BRANCH_VISUAL,
            scores=_logit_rows(rng, cfg, states),
            window_len_frames=w,
        )
    )

    hot = hot_for("lmm", visual_idx)
    states = np.array([_overlaps(f * frame_ms, (f + 1) * frame_ms, hot) for f in sample_frames])
    streams.append(
        ScoreStream(
            video_id=video_id,
            branch=BRANCH_LMM,
            scores=_logit_rows(rng, cfg, states),
            sparse_stride_frames=stride,
        )
    )

    for r in sorted(cfg.audio_resolutions):
        blocks = math.ceil(duration_ms / r)
        hot = hot_for(f"audio{r}", audio_idx)
        states = np.array([_overlaps(i * r, (i + 1) * r, hot) for i in range(blocks)])
        streams.append(
            ScoreStream(
                video_id=video_id,
                branch=BRANCH_AUDIO,
                scores=_logit_rows(rng, cfg, states),
                resolution_ms=r,
            )
        )
    return gt, streams


def generate(cfg: ScenarioConfig) -> tuple[list[GroundTruth], list[ScoreStream]]:
    """Generate ground truth and score streams for ``cfg.num_videos`` videos.

    Fully reproducible from ``cfg.seed``; video ``i`` depends only on
    (seed, i), so any subset can be regenerated independently.
    """
    gts: list[GroundTruth] = []
    streams: list[ScoreStream] = []
    for index in range(cfg.num_videos):
        gt, video_streams = _generate_video(cfg, index)
        gts.append(gt)
        streams.extend(video_streams)
    return gts, streams
