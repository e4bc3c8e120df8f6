"""Benchmark interaction timelines with per-chunk ground-truth states.

Each timeline is an ordered list of segments (speech, silence, pause,
backchannel, interrupting speech) plus one dialogue state per 160 ms chunk.
Labeling rules:

  - any chunk overlapping a speech-like segment is USER_NONIDLE;
  - a chunk overlapping a backchannel (and no speech) is USER_BACKCHANNEL;
  - the first fully-silent chunk after a speech-like segment carries that
    segment's boundary decision (USER_COMPLETE or USER_INCOMPLETE);
  - everything else is USER_IDLE.

Boundary decisions only ever land after the speech really ended, so a pause
short enough that speech resumes within the same chunk produces no decision
at all (the degenerate zero-pause case collapses to plain turn-taking).

Scenarios carry transcript placeholders, not synthesized speech; for
acoustic backends ``render_pcm`` fills speech-like segments with
deterministic noise, and a WAV per segment can be attached externally.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ingest import CHUNK_MS, SAMPLES_PER_MS
from .interleave import DuplexState


class BadRange(ValueError):
    """Generator got an unusable count or duration range."""


class SegmentKind(Enum):
    SPEECH = "speech"
    SILENCE = "silence"
    PAUSE = "pause"
    BACKCHANNEL = "backchannel"
    INTERRUPTING_SPEECH = "interrupting_speech"


SPEECH_KINDS = (SegmentKind.SPEECH, SegmentKind.INTERRUPTING_SPEECH)


class Task(str, Enum):
    TURN_TAKING = "turn_taking"
    PAUSE_HANDLING = "pause_handling"
    USER_BACKCHANNEL = "user_backchannel"
    USER_INTERRUPTION = "user_interruption"
    EASY_TURN_COMPLETE = "easy_turn_complete"
    EASY_TURN_INCOMPLETE = "easy_turn_incomplete"


#: published per-subset sample counts, used as generation defaults
DEFAULT_COUNTS = {
    Task.TURN_TAKING: 155,
    Task.PAUSE_HANDLING: 239,
    Task.USER_BACKCHANNEL: 199,
    Task.USER_INTERRUPTION: 161,
    Task.EASY_TURN_COMPLETE: 318,
    Task.EASY_TURN_INCOMPLETE: 299,
}

DEFAULT_SPEECH_MS = (2000, 8000)
DEFAULT_BACKCHANNEL_MS = (300, 700)
DEFAULT_PAUSE_MS = (400, 1200)
GAP_BEFORE_OVERLAP_MS = 3000
TRAILING_SILENCE_MS = 15000


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    duration_ms: int
    transcript: Optional[str] = None

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ValueError("segment duration must be nonnegative")


@dataclass(frozen=True)
class ScenarioTimeline:
    id: str
    task: Task
    language: str
    segments: tuple[Segment, ...]
    ground_truth_states: tuple[DuplexState, ...]

    def __post_init__(self):
        if len(self.ground_truth_states) != self.chunk_count:
            raise ValueError(
                f"{self.id}: {len(self.ground_truth_states)} states for "
                f"{self.chunk_count} chunks")

    @property
    def total_duration_ms(self) -> int:
        return sum(s.duration_ms for s in self.segments)

    @property
    def chunk_count(self) -> int:
        return -(-self.total_duration_ms // CHUNK_MS)

    def intervals(self, *kinds: SegmentKind) -> list[tuple[int, int]]:
        """Absolute [start, end) spans of the requested segment kinds."""
        out = []
        t = 0
        for seg in self.segments:
            if seg.kind in kinds and seg.duration_ms > 0:
                out.append((t, t + seg.duration_ms))
            t += seg.duration_ms
        return out

    def speech_intervals(self) -> list[tuple[int, int]]:
        return self.intervals(*SPEECH_KINDS)

    def pause_intervals(self) -> list[tuple[int, int]]:
        return self.intervals(SegmentKind.PAUSE)

    def backchannel_interval(self) -> Optional[tuple[int, int]]:
        spans = self.intervals(SegmentKind.BACKCHANNEL)
        return spans[0] if spans else None

    def interruption_interval(self) -> Optional[tuple[int, int]]:
        spans = self.intervals(SegmentKind.INTERRUPTING_SPEECH)
        return spans[0] if spans else None

    def user_speech_end_ms(self) -> int:
        """End of the last speech-like segment."""
        spans = self.speech_intervals()
        if not spans:
            raise ValueError(f"{self.id}: no speech segments")
        return spans[-1][1]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "language": self.language,
            "segments": [{"kind": s.kind.value, "duration_ms": s.duration_ms,
                          "transcript": s.transcript} for s in self.segments],
            "ground_truth_states": [s.value for s in self.ground_truth_states],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioTimeline":
        return cls(
            id=data["id"],
            task=Task(data["task"]),
            language=data.get("language", "en"),
            segments=tuple(Segment(SegmentKind(s["kind"]), s["duration_ms"],
                                   s.get("transcript")) for s in data["segments"]),
            ground_truth_states=tuple(DuplexState(v)
                                      for v in data["ground_truth_states"]),
        )


@dataclass
class ScenarioSet:
    """One benchmark subset; ``task`` is the set-level name (easy turn sets
    mix the complete/incomplete per-sample tasks under "easy_turn")."""

    task: str
    samples: list[ScenarioTimeline] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def label_states(segments: Sequence[Segment],
                 end_labels: Sequence[DuplexState]) -> tuple[DuplexState, ...]:
    """Chunk-level ground truth for a segment list.

    ``end_labels`` gives the boundary decision for each speech-like segment
    in order (complete vs incomplete).
    """
    spans = []
    t = 0
    for seg in segments:
        spans.append((t, t + seg.duration_ms, seg.kind))
        t += seg.duration_ms
    total = t
    n_chunks = -(-total // CHUNK_MS)

    speech_spans = [(a, b) for a, b, k in spans if k in SPEECH_KINDS and b > a]
    bc_spans = [(a, b) for a, b, k in spans if k is SegmentKind.BACKCHANNEL and b > a]
    if len(end_labels) != len(speech_spans):
        raise ValueError(f"{len(end_labels)} end labels for {len(speech_spans)} "
                         "speech segments")
    for label in end_labels:
        if label not in (DuplexState.USER_COMPLETE, DuplexState.USER_INCOMPLETE):
            raise ValueError(f"boundary label must be complete/incomplete, got {label}")

    def overlaps(chunk: int, span: tuple[int, int]) -> bool:
        lo, hi = chunk * CHUNK_MS, (chunk + 1) * CHUNK_MS
        return lo < span[1] and span[0] < hi

    states = [DuplexState.USER_IDLE] * n_chunks
    for i in range(n_chunks):
        if any(overlaps(i, s) for s in speech_spans):
            states[i] = DuplexState.USER_NONIDLE
        elif any(overlaps(i, s) for s in bc_spans):
            states[i] = DuplexState.USER_BACKCHANNEL

    # boundary decision = first chunk starting at/after the segment end,
    # unless speech already resumed there (decision swallowed)
    for (start, end), label in zip(speech_spans, end_labels):
        decision = -(-end // CHUNK_MS)
        if decision < n_chunks and states[decision] is DuplexState.USER_IDLE:
            states[decision] = label
    return tuple(states)


def _rng(seed: int, task: str, index: int) -> random.Random:
    # string seeding is hash-randomization-proof (seeded via sha512)
    return random.Random(f"{seed}/{task}/{index}")


def _check_count(count: int) -> None:
    if count < 0:
        raise BadRange(f"count must be nonnegative, got {count}")


def _check_range(name: str, rng_ms: tuple[int, int], minimum: int = 0) -> None:
    lo, hi = rng_ms
    if lo > hi or lo < minimum:
        raise BadRange(f"bad {name} range {rng_ms}")


def _placeholder_text(rng: random.Random, duration_ms: int) -> str:
    words = max(1, duration_ms // 400)
    return " ".join(f"w{rng.randrange(1000)}" for _ in range(words))


def gen_turn_taking(seed: int = 0, count: int = DEFAULT_COUNTS[Task.TURN_TAKING],
                    speech_ms_range: tuple[int, int] = DEFAULT_SPEECH_MS,
                    language: str = "en") -> ScenarioSet:
    """Single utterance, then trailing silence; the turn should be taken."""
    _check_count(count)
    _check_range("speech", speech_ms_range, minimum=1)
    out = ScenarioSet(Task.TURN_TAKING.value)
    for i in range(count):
        rng = _rng(seed, Task.TURN_TAKING.value, i)
        d = rng.randint(*speech_ms_range)
        segments = (
            Segment(SegmentKind.SPEECH, d, _placeholder_text(rng, d)),
            Segment(SegmentKind.SILENCE, TRAILING_SILENCE_MS),
        )
        out.samples.append(ScenarioTimeline(
            id=f"turn_taking_{i:04d}", task=Task.TURN_TAKING, language=language,
            segments=segments,
            ground_truth_states=label_states(segments, [DuplexState.USER_COMPLETE])))
    return out


def gen_pause_handling(seed: int = 0, count: int = DEFAULT_COUNTS[Task.PAUSE_HANDLING],
                       pause_ms_range: tuple[int, int] = DEFAULT_PAUSE_MS,
                       speech_ms_range: tuple[int, int] = DEFAULT_SPEECH_MS,
                       language: str = "en") -> ScenarioSet:
    """One utterance with a mid-utterance pause; the floor must be held."""
    _check_count(count)
    _check_range("speech", speech_ms_range, minimum=1)
    _check_range("pause", pause_ms_range)
    if pause_ms_range[1] >= speech_ms_range[0]:
        raise BadRange("pauses must be shorter than the utterance parts")
    out = ScenarioSet(Task.PAUSE_HANDLING.value)
    for i in range(count):
        rng = _rng(seed, Task.PAUSE_HANDLING.value, i)
        d1 = rng.randint(*speech_ms_range)
        d2 = rng.randint(*speech_ms_range)
        pause = rng.randint(*pause_ms_range)
        segments = (
            Segment(SegmentKind.SPEECH, d1, _placeholder_text(rng, d1)),
            Segment(SegmentKind.PAUSE, pause),
            Segment(SegmentKind.SPEECH, d2, _placeholder_text(rng, d2)),
            Segment(SegmentKind.SILENCE, TRAILING_SILENCE_MS),
        )
        out.samples.append(ScenarioTimeline(
            id=f"pause_handling_{i:04d}", task=Task.PAUSE_HANDLING, language=language,
            segments=segments,
            ground_truth_states=label_states(
                segments, [DuplexState.USER_INCOMPLETE, DuplexState.USER_COMPLETE])))
    return out


def gen_backchannel(seed: int = 0, count: int = DEFAULT_COUNTS[Task.USER_BACKCHANNEL],
                    backchannel_ms_range: tuple[int, int] = DEFAULT_BACKCHANNEL_MS,
                    speech_ms_range: tuple[int, int] = DEFAULT_SPEECH_MS,
                    language: str = "en") -> ScenarioSet:
    """Utterance, 3 s gap, a short backchannel over the assistant's reply,
    then trailing silence; the reply must not stop."""
    _check_count(count)
    _check_range("speech", speech_ms_range, minimum=1)
    _check_range("backchannel", backchannel_ms_range, minimum=1)
    out = ScenarioSet(Task.USER_BACKCHANNEL.value)
    for i in range(count):
        rng = _rng(seed, Task.USER_BACKCHANNEL.value, i)
        d = rng.randint(*speech_ms_range)
        bc = rng.randint(*backchannel_ms_range)
        segments = (
            Segment(SegmentKind.SPEECH, d, _placeholder_text(rng, d)),
            Segment(SegmentKind.SILENCE, GAP_BEFORE_OVERLAP_MS),
            Segment(SegmentKind.BACKCHANNEL, bc, "uh-huh"),
            Segment(SegmentKind.SILENCE, TRAILING_SILENCE_MS),
        )
        out.samples.append(ScenarioTimeline(
            id=f"user_backchannel_{i:04d}", task=Task.USER_BACKCHANNEL,
            language=language, segments=segments,
            ground_truth_states=label_states(segments, [DuplexState.USER_COMPLETE])))
    return out


def gen_interruption(seed: int = 0, count: int = DEFAULT_COUNTS[Task.USER_INTERRUPTION],
                     speech_ms_range: tuple[int, int] = DEFAULT_SPEECH_MS,
                     language: str = "en") -> ScenarioSet:
    """Utterance, 3 s gap, a second utterance cutting into the assistant's
    reply, then trailing silence; the reply must stop, then answer."""
    _check_count(count)
    _check_range("speech", speech_ms_range, minimum=1)
    out = ScenarioSet(Task.USER_INTERRUPTION.value)
    for i in range(count):
        rng = _rng(seed, Task.USER_INTERRUPTION.value, i)
        d1 = rng.randint(*speech_ms_range)
        d2 = rng.randint(*speech_ms_range)
        segments = (
            Segment(SegmentKind.SPEECH, d1, _placeholder_text(rng, d1)),
            Segment(SegmentKind.SILENCE, GAP_BEFORE_OVERLAP_MS),
            Segment(SegmentKind.INTERRUPTING_SPEECH, d2, _placeholder_text(rng, d2)),
            Segment(SegmentKind.SILENCE, TRAILING_SILENCE_MS),
        )
        out.samples.append(ScenarioTimeline(
            id=f"user_interruption_{i:04d}", task=Task.USER_INTERRUPTION,
            language=language, segments=segments,
            ground_truth_states=label_states(
                segments, [DuplexState.USER_COMPLETE, DuplexState.USER_COMPLETE])))
    return out


def gen_easy_turn(seed: int = 0,
                  counts: tuple[int, int] = (DEFAULT_COUNTS[Task.EASY_TURN_COMPLETE],
                                             DEFAULT_COUNTS[Task.EASY_TURN_INCOMPLETE]),
                  speech_ms_range: tuple[int, int] = DEFAULT_SPEECH_MS,
                  language: str = "en") -> ScenarioSet:
    """Pre-segmented single utterances labeled complete or incomplete."""
    complete_count, incomplete_count = counts
    _check_count(complete_count)
    _check_count(incomplete_count)
    _check_range("speech", speech_ms_range, minimum=1)
    out = ScenarioSet("easy_turn")
    specs = [(Task.EASY_TURN_COMPLETE, DuplexState.USER_COMPLETE, complete_count),
             (Task.EASY_TURN_INCOMPLETE, DuplexState.USER_INCOMPLETE, incomplete_count)]
    for task, label, count in specs:
        for i in range(count):
            rng = _rng(seed, task.value, i)
            d = rng.randint(*speech_ms_range)
            segments = (
                Segment(SegmentKind.SPEECH, d, _placeholder_text(rng, d)),
                Segment(SegmentKind.SILENCE, 2000),
            )
            out.samples.append(ScenarioTimeline(
                id=f"{task.value}_{i:04d}", task=task, language=language,
                segments=segments,
                ground_truth_states=label_states(segments, [label])))
    return out


def gen_all(seed: int = 0, language: str = "en") -> list[ScenarioSet]:
    return [
        gen_turn_taking(seed, language=language),
        gen_pause_handling(seed, language=language),
        gen_backchannel(seed, language=language),
        gen_interruption(seed, language=language),
        gen_easy_turn(seed, language=language),
    ]


def save_set(scenario_set: ScenarioSet, out_dir) -> Path:
    """Write one JSON file per sample under <out_dir>/<task>/."""
    task_dir = Path(out_dir) / scenario_set.task
    task_dir.mkdir(parents=True, exist_ok=True)
    for sample in scenario_set.samples:
        path = task_dir / f"{sample.id}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(sample.to_dict(), f, ensure_ascii=False, indent=1)
    return task_dir


def load_set(task_dir) -> ScenarioSet:
    task_dir = Path(task_dir)
    out = ScenarioSet(task_dir.name)
    for path in sorted(task_dir.glob("*.json")):
        with open(path, encoding="utf-8") as f:
            out.samples.append(ScenarioTimeline.from_dict(json.load(f)))
    return out


def load_dir(root) -> dict[str, ScenarioSet]:
    """Load every task subdirectory under a scenario root."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {root}")
    sets = {}
    for task_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        loaded = load_set(task_dir)
        if loaded.samples:
            sets[task_dir.name] = loaded
    if not sets:
        raise FileNotFoundError(f"no scenario files under {root}")
    return sets


def render_pcm(scenario: ScenarioTimeline, amplitude: int = 8192) -> np.ndarray:
    """Deterministic synthetic PCM for a timeline.

    Speech-like and backchannel segments get uniform noise at the given
    amplitude (about -17 dBFS RMS at the default), everything else is
    digital silence; good enough for energy-based backends and for
    exercising the ingest path.
    """
    total = scenario.total_duration_ms * SAMPLES_PER_MS
    pcm = np.zeros(total, dtype=np.int16)
    t = 0
    voiced = SPEECH_KINDS + (SegmentKind.BACKCHANNEL,)
    for idx, seg in enumerate(scenario.segments):
        n = seg.duration_ms * SAMPLES_PER_MS
        if seg.kind in voiced and n:
            digest = hashlib.blake2b(f"{scenario.id}/{idx}".encode(),
                                     digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            pcm[t:t + n] = rng.integers(-amplitude, amplitude + 1, size=n,
                                        dtype=np.int16)
        t += n
    return pcm
