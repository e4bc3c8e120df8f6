"""Per-chunk text/state prediction backends.

Every backend consumes one 160 ms chunk at a time and answers with that
chunk's incremental text plus exactly one dialogue state.  Teacher-forced
text is honored by construction: when the input carries teacher text, the
output text equals it verbatim regardless of backend.

Three backends ship here: a scripted oracle (test double for a trained
model, with optional seeded state corruption and injected latency), an
RMS-energy VAD heuristic (the acoustic-only baseline: it can hear silence
but cannot tell a pause from a finished sentence), and a remote client that
forwards chunks to a prediction server over the wire protocol.
"""
from __future__ import annotations

import json
import math
import random
import socket
import time
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .ingest import AudioChunk, CHUNK_SAMPLES
from .interleave import DuplexState
from . import wire


class OutOfOrderChunk(ValueError):
    """Chunk indices of one session must arrive strictly in order."""


class BackendUnavailable(RuntimeError):
    """Remote backend cannot be reached at all."""


class ScriptExhausted(IndexError):
    """Oracle script is shorter than the session."""


@dataclass(frozen=True)
class PredictorInput:
    chunk: AudioChunk
    teacher_text: Optional[Sequence] = None
    history: Any = None  # opaque per-session context handle


@dataclass(frozen=True)
class PredictorOutput:
    text_tokens: tuple
    state: DuplexState
    compute_ms: float = 0.0
    flagged: bool = False

    def __post_init__(self):
        if self.compute_ms < 0:
            raise ValueError("compute_ms must be nonnegative")
        object.__setattr__(self, "text_tokens", tuple(self.text_tokens))


class Predictor:
    """Base class enforcing the per-session contracts.

    One instance serves one session; chunks must arrive in index order and
    each chunk yields exactly one state.  Subclasses implement ``_infer``.
    """

    def predict(self, inp: PredictorInput) -> PredictorOutput:
        last = getattr(self, "_last_index", -1)
        if inp.chunk.index != last + 1:
            raise OutOfOrderChunk(f"expected chunk {last + 1}, got {inp.chunk.index}")
        self._last_index = inp.chunk.index
        out = self._infer(inp)
        if inp.teacher_text is not None:
            out = replace(out, text_tokens=tuple(inp.teacher_text))
        return out

    def _infer(self, inp: PredictorInput) -> PredictorOutput:
        raise NotImplementedError

    def reset(self) -> None:
        self._last_index = -1
        self._reset()

    def _reset(self) -> None:
        pass

    def close(self) -> None:
        pass


@dataclass
class OracleScript:
    """Ground-truth (text, state) per chunk, with optional corruption.

    ``corruption`` maps scripted states to what gets emitted instead; each
    chunk is corrupted independently with probability ``error_rate`` using
    a per-chunk RNG, so outputs depend only on the chunk index, never on
    call order.
    """

    entries: list[tuple[tuple, DuplexState]]
    error_rate: float = 0.0
    extra_delay_ms: float = 0.0
    corruption: dict[DuplexState, DuplexState] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")
        if self.extra_delay_ms < 0:
            raise ValueError("extra_delay_ms must be nonnegative")
        self.entries = [(tuple(text), state) for text, state in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_states(cls, states: Sequence[DuplexState], **kwargs) -> "OracleScript":
        return cls(entries=[((), s) for s in states], **kwargs)

    def to_jsonable(self) -> list[dict]:
        return [{"text": list(text), "state": state.value} for text, state in self.entries]

    @classmethod
    def from_jsonable(cls, data: Sequence[dict], **kwargs) -> "OracleScript":
        entries = [(tuple(d.get("text", ())), DuplexState(d["state"])) for d in data]
        return cls(entries=entries, **kwargs)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_jsonable(), f, ensure_ascii=False)

    @classmethod
    def load(cls, path, **kwargs) -> "OracleScript":
        with open(path, encoding="utf-8") as f:
            return cls.from_jsonable(json.load(f), **kwargs)


class OraclePredictor(Predictor):
    """Replays an OracleScript; the stand-in for a trained state model."""

    def __init__(self, script: OracleScript, seed: int = 0):
        self.script = script
        self.seed = seed
        self.reset()

    def _infer(self, inp: PredictorInput) -> PredictorOutput:
        i = inp.chunk.index
        if i >= len(self.script):
            raise ScriptExhausted(f"script has {len(self.script)} chunks, got index {i}")
        text, state = self.script.entries[i]
        if self.script.error_rate > 0.0:
            rng = random.Random(f"oracle/{self.seed}/{i}")
            if rng.random() < self.script.error_rate:
                state = self.script.corruption.get(state, state)
        return PredictorOutput(text_tokens=text, state=state,
                               compute_ms=self.script.extra_delay_ms)


#: RMS threshold splitting speech from silence over one 160 ms chunk
DEFAULT_ENERGY_THRESHOLD_DBFS = -35.0


def chunk_dbfs(samples: np.ndarray) -> float:
    """RMS level of int16 samples in dBFS; -inf for digital silence."""
    arr = np.asarray(samples, dtype=np.float64)
    rms = math.sqrt(float(np.mean(arr * arr))) if len(arr) else 0.0
    if rms <= 0.0:
        return -math.inf
    return 20.0 * math.log10(rms / 32768.0)


class EnergyVadPredictor(Predictor):
    """Acoustic-only baseline: energy above threshold means speech.

    A chunk above the threshold is USER_NONIDLE; the first chunk below it
    after any speech is USER_COMPLETE (this backend cannot distinguish a
    mid-utterance pause from a finished turn); silence with no prior speech
    is USER_IDLE.  Never emits backchannel or incomplete; no text.
    """

    def __init__(self, threshold_dbfs: float = DEFAULT_ENERGY_THRESHOLD_DBFS):
        self.threshold_dbfs = threshold_dbfs
        self.reset()

    def _reset(self) -> None:
        self._speech_active = False

    def _infer(self, inp: PredictorInput) -> PredictorOutput:
        if chunk_dbfs(inp.chunk.samples) > self.threshold_dbfs:
            self._speech_active = True
            state = DuplexState.USER_NONIDLE
        elif self._speech_active:
            self._speech_active = False
            state = DuplexState.USER_COMPLETE
        else:
            state = DuplexState.USER_IDLE
        return PredictorOutput(text_tokens=(), state=state)


class RemotePredictor(Predictor):
    """Forwards chunks to a prediction server speaking the wire protocol.

    The connection is opened lazily on the first chunk (Hello handshake in
    predictor mode).  A missed deadline degrades instead of failing the
    session: the output falls back to USER_NONIDLE if the previous emitted
    state was nonidle, else USER_IDLE, and is flagged.
    """

    def __init__(self, endpoint: tuple[str, int], deadline_ms: float = 1000.0,
                 language: str = "en", connect_timeout_s: float = 5.0):
        self.endpoint = endpoint
        self.deadline_ms = deadline_ms
        self.language = language
        self.connect_timeout_s = connect_timeout_s
        self._stream: Optional[wire.FrameStream] = None
        self.reset()

    def _reset(self) -> None:
        self._last_state: Optional[DuplexState] = None

    def _connect(self) -> wire.FrameStream:
        if self._stream is not None:
            return self._stream
        try:
            sock = socket.create_connection(self.endpoint, timeout=self.connect_timeout_s)
        except OSError as exc:
            raise BackendUnavailable(f"cannot reach {self.endpoint}: {exc}") from exc
        sock.settimeout(self.deadline_ms / 1000.0)
        stream = wire.FrameStream(sock)
        stream.send(wire.json_frame(wire.MessageType.HELLO, {
            "mode": "predictor",
            "language": self.language,
        }))
        ack = stream.recv()
        if ack is None or ack.type is not wire.MessageType.HELLO:
            stream.close()
            raise wire.ProtocolError("predictor server did not ack the handshake")
        self._stream = stream
        return stream

    def _infer(self, inp: PredictorInput) -> PredictorOutput:
        start = time.monotonic()
        try:
            out = self._round_trip(inp)
        except wire.RemoteTimeout:
            fallback = (DuplexState.USER_NONIDLE
                        if self._last_state is DuplexState.USER_NONIDLE
                        else DuplexState.USER_IDLE)
            out = PredictorOutput(text_tokens=(), state=fallback,
                                  compute_ms=(time.monotonic() - start) * 1000.0,
                                  flagged=True)
        self._last_state = out.state
        return out

    def _round_trip(self, inp: PredictorInput) -> PredictorOutput:
        stream = self._connect()
        start = time.monotonic()
        if inp.teacher_text is not None:
            stream.send(wire.json_frame(wire.MessageType.TEACHER_TEXT, {
                "chunk_index": inp.chunk.index,
                "tokens": list(inp.teacher_text),
            }))
        pcm = np.asarray(inp.chunk.samples, dtype="<i2").tobytes()
        stream.send(wire.WireFrame(wire.MessageType.AUDIO_DATA, pcm))
        text_tokens: tuple = ()
        while True:
            frame = stream.recv()
            if frame is None:
                self._stream = None
                raise wire.ConnectionLost("server closed during prediction")
            if frame.type is wire.MessageType.ASR_PARTIAL:
                text_tokens = tuple(frame.json().get("tokens", ()))
            elif frame.type is wire.MessageType.STATE_EVENT:
                body = frame.json()
                if body.get("chunk_index") != inp.chunk.index:
                    raise wire.ProtocolError(
                        f"state for chunk {body.get('chunk_index')},"
                        f" expected {inp.chunk.index}")
                return PredictorOutput(
                    text_tokens=text_tokens,
                    state=DuplexState(body["state"]),
                    compute_ms=(time.monotonic() - start) * 1000.0,
                    flagged=bool(body.get("flagged", False)))
            elif frame.type is wire.MessageType.ERROR:
                raise wire.ProtocolError(f"server error: {frame.json()}")
            else:
                raise wire.ProtocolError(f"unexpected {frame.type.name} frame")

    def close(self) -> None:
        if self._stream is not None:
            try:
                self._stream.send(wire.WireFrame(wire.MessageType.BYE))
            except ConnectionError:
                pass
            self._stream.close()
            self._stream = None


def placeholder_chunk(index: int, samples: Optional[np.ndarray] = None) -> AudioChunk:
    """Build a chunk for state-only replay (zero samples, null tokens)."""
    if samples is None:
        samples = np.zeros(CHUNK_SAMPLES, dtype=np.int16)
    return AudioChunk(index=index, start_ms=index * 160, samples=samples, tokens=(0, 0))
