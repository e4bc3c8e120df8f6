"""State-driven turn manager for a half-duplex responder.

The controller consumes one dialogue state per 160 ms chunk and decides
when the assistant speaks, keeps quiet, or cuts itself off.  Phases and
transitions:

    IDLE       --user_nonidle-->  LISTENING
    LISTENING  --user_complete->  RESPONDING   (action: Respond)
    RESPONDING --user_nonidle-->  LISTENING    (action: StopSpeech, barge-in)
    RESPONDING --user_backchannel-> RESPONDING (action: Continue, keep talking)
    RESPONDING --idle/complete/incomplete-> RESPONDING (action: Continue)
    RESPONDING --speech interval ends-->      IDLE

Barge-in fires on the first nonidle chunk while responding; backchannels
never stop speech.  The responder is a timing stub: a response committed at
time t becomes audible at t + llm + tts first-packet delays and lasts a
configured duration.  Everything is driven by the caller's clock, so replay
of the same stream is bit-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .ingest import CHUNK_MS
from .interleave import DuplexState
from .predictor import OutOfOrderChunk


class NonMonotonicTime(ValueError):
    """Decisions must arrive with nondecreasing timestamps."""


class OffsetOutOfRange(ValueError):
    """Endpoint offset must fall inside one chunk, [0, 160)."""


class NegativeResult(ValueError):
    """Subtracting pipeline delays left a negative module latency."""


class AssistantPhase(Enum):
    IDLE = "idle"
    LISTENING = "listening"
    RESPONDING = "responding"


class ActionType(Enum):
    RESPOND = "respond"
    STOP_SPEECH = "stop_speech"
    CONTINUE = "continue"
    NONE = "none"


@dataclass(frozen=True)
class DialogueAction:
    kind: ActionType
    trigger_chunk_index: Optional[int] = None
    emitted_at_ms: float = 0.0


@dataclass(frozen=True)
class ResponderStub:
    """Half-duplex responder reduced to its timing envelope."""

    llm_first_packet_ms: float = 0.0
    tts_first_packet_ms: float = 0.0
    speech_duration_ms: float = 5000.0

    def __post_init__(self):
        for name in ("llm_first_packet_ms", "tts_first_packet_ms", "speech_duration_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def pipeline_ms(self) -> float:
        return self.llm_first_packet_ms + self.tts_first_packet_ms


@dataclass(frozen=True)
class LatencyRecord:
    """Endpoint-to-decision timing for one turn boundary."""

    user_end_ms: float
    decision_ms: float

    @property
    def algorithmic_latency_ms(self) -> float:
        return self.decision_ms - self.user_end_ms


class EventLog:
    """Append-only, millisecond-stamped record of one session."""

    def __init__(self, events: Optional[list[dict]] = None):
        self.events = events if events is not None else []

    def append(self, t_ms: float, event: str, **detail) -> dict:
        entry = {"t_ms": float(t_ms), "event": event, "detail": detail}
        self.events.append(entry)
        return entry

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_type(self, event: str) -> list[dict]:
        return [e for e in self.events if e["event"] == event]

    def state_sequence(self) -> list[tuple[int, str]]:
        return [(e["detail"]["chunk_index"], e["detail"]["state"])
                for e in self.of_type("state")]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, ensure_ascii=False) for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])


@dataclass
class _ActiveResponse:
    seq: int
    action_ms: float
    onset_ms: float
    end_ms: float
    audible: bool = False


class DuplexController:
    """Single-owner phase machine over one session's state stream."""

    def __init__(self, responder: ResponderStub = ResponderStub(),
                 patience_ms: Optional[float] = None):
        self.responder = responder
        self.patience_ms = patience_ms
        self.phase = AssistantPhase.IDLE
        self.log = EventLog()
        self._last_chunk = -1
        self._last_time = -math.inf
        self._response: Optional[_ActiveResponse] = None
        self._response_seq = 0
        self._incomplete_since: Optional[float] = None
        self._closed = False

    def step(self, chunk_index: int, state: DuplexState, now_ms: float) -> DialogueAction:
        if chunk_index <= self._last_chunk:
            raise OutOfOrderChunk(f"chunk {chunk_index} after {self._last_chunk}")
        if now_ms < self._last_time:
            raise NonMonotonicTime(f"{now_ms} ms after {self._last_time} ms")
        self._last_chunk = chunk_index
        self._last_time = now_ms

        self._settle(now_ms)
        self.log.append(now_ms, "state", chunk_index=chunk_index, state=state.value)

        if self.phase is AssistantPhase.RESPONDING:
            action = self._step_responding(chunk_index, state, now_ms)
        elif self.phase is AssistantPhase.LISTENING:
            action = self._step_listening(chunk_index, state, now_ms)
        else:
            action = self._step_idle(chunk_index, state, now_ms)

        if action.kind is not ActionType.NONE:
            self.log.append(now_ms, "action", kind=action.kind.value,
                            trigger_chunk_index=action.trigger_chunk_index,
                            response=self._response.seq if self._response else None)
        return action

    def close(self) -> EventLog:
        """Settle any in-flight response events and seal the log."""
        if not self._closed:
            self._settle(math.inf)
            self._closed = True
        return self.log

    # -- per-phase transitions ------------------------------------------

    def _step_listening(self, chunk_index, state, now_ms) -> DialogueAction:
        if state is DuplexState.USER_COMPLETE:
            return self._respond(chunk_index, now_ms)
        if state is DuplexState.USER_INCOMPLETE:
            self._incomplete_since = now_ms
        elif state is DuplexState.USER_NONIDLE:
            self._incomplete_since = None
        elif (state is DuplexState.USER_IDLE
              and self.patience_ms is not None
              and self._incomplete_since is not None
              and now_ms - self._incomplete_since >= self.patience_ms):
            # patience ran out on a dangling incomplete utterance
            return self._respond(chunk_index, now_ms)
        return DialogueAction(ActionType.NONE, emitted_at_ms=now_ms)

    def _step_responding(self, chunk_index, state, now_ms) -> DialogueAction:
        if state is DuplexState.USER_NONIDLE:
            self._stop_speech(now_ms)
            self._set_phase(AssistantPhase.LISTENING, now_ms, reason="barge_in")
            return DialogueAction(ActionType.STOP_SPEECH, chunk_index, now_ms)
        return DialogueAction(ActionType.CONTINUE, chunk_index, now_ms)

    def _step_idle(self, chunk_index, state, now_ms) -> DialogueAction:
        if state is DuplexState.USER_NONIDLE:
            self._set_phase(AssistantPhase.LISTENING, now_ms, reason="user_speech")
        return DialogueAction(ActionType.NONE, emitted_at_ms=now_ms)

    # -- response lifecycle ---------------------------------------------

    def _respond(self, chunk_index, now_ms) -> DialogueAction:
        onset = now_ms + self.responder.pipeline_ms
        self._response = _ActiveResponse(
            seq=self._response_seq, action_ms=now_ms, onset_ms=onset,
            end_ms=onset + self.responder.speech_duration_ms)
        self._response_seq += 1
        self._incomplete_since = None
        self._set_phase(AssistantPhase.RESPONDING, now_ms, reason="turn_taken")
        return DialogueAction(ActionType.RESPOND, chunk_index, now_ms)

    def _settle(self, now_ms: float) -> None:
        """Emit onset/offset events the clock has passed."""
        resp = self._response
        if resp is None:
            return
        if not resp.audible and resp.onset_ms <= now_ms:
            resp.audible = True
            self.log.append(resp.onset_ms, "audible_onset", response=resp.seq)
        if resp.audible and resp.end_ms <= now_ms:
            self.log.append(resp.end_ms, "audible_offset", response=resp.seq,
                            reason="finished")
            self._response = None
            if self.phase is AssistantPhase.RESPONDING:
                self._set_phase(AssistantPhase.IDLE, resp.end_ms, reason="speech_finished")

    def _stop_speech(self, now_ms: float) -> None:
        resp = self._response
        if resp is None:
            return
        if resp.audible:
            self.log.append(now_ms, "audible_offset", response=resp.seq, reason="stopped")
        else:
            # cut before the first packet ever played
            self.log.append(now_ms, "response_cancelled", response=resp.seq)
        self._response = None

    def _set_phase(self, phase: AssistantPhase, t_ms: float, reason: str) -> None:
        if phase is self.phase:
            return
        self.log.append(t_ms, "phase", old=self.phase.value, new=phase.value,
                        reason=reason)
        self.phase = phase


def run_session(decisions: Iterable[tuple[int, DuplexState, float]],
                responder: ResponderStub = ResponderStub(),
                patience_ms: Optional[float] = None,
                ) -> tuple[list[DialogueAction], EventLog]:
    """Replay a (chunk_index, state, time) stream through a fresh controller.

    Pure function of its inputs: the same stream and stub always produce
    the same actions and the same log.
    """
    controller = DuplexController(responder, patience_ms=patience_ms)
    actions = [controller.step(i, state, t) for i, state, t in decisions]
    controller.close()
    return actions, controller.log


def simulate_endpoint_latency(endpoint_offset_ms: float) -> float:
    """Endpoint-to-decision delay for an endpoint inside one chunk.

    Speech ending at offset o within a chunk is only ruled finished at the
    end of the *following* chunk, so the delay is (160 - o) + 160, i.e.
    (160, 320] ms with a 240 ms mean under uniform offsets.
    """
    if not 0.0 <= endpoint_offset_ms < CHUNK_MS:
        raise OffsetOutOfRange(f"offset {endpoint_offset_ms} outside [0, {CHUNK_MS})")
    return (CHUNK_MS - endpoint_offset_ms) + CHUNK_MS


def endpoint_latency_trials(trials: int, seed: int = 0) -> dict:
    """Monte Carlo of the endpoint decision delay over uniform offsets."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(0.0, CHUNK_MS, size=trials)
    latencies = (CHUNK_MS - offsets) + CHUNK_MS
    edges = np.linspace(CHUNK_MS, 2 * CHUNK_MS, 11)
    counts, _ = np.histogram(latencies, bins=edges)
    return {
        "trials": trials,
        "seed": seed,
        "mean_ms": float(latencies.mean()),
        "min_ms": float(latencies.min()),
        "max_ms": float(latencies.max()),
        "histogram": {
            "edges_ms": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
    }


def estimate_module_latency(observed_response_latency_ms: float,
                            llm_first_packet_ms: float,
                            tts_first_packet_ms: float) -> float:
    """Strip downstream first-packet delays out of an observed speak latency."""
    if min(observed_response_latency_ms, llm_first_packet_ms, tts_first_packet_ms) < 0:
        raise ValueError("latencies must be nonnegative")
    rest = observed_response_latency_ms - llm_first_packet_ms - tts_first_packet_ms
    if rest < 0:
        raise NegativeResult(
            f"pipeline delays exceed the observed latency by {-rest} ms")
    return rest
