"""Fixed-frame audio ingest: 16 kHz mono PCM in, tokenized 160 ms chunks out.

The ingest session slices a continuous stream into 160 ms chunks and runs a
block-causal tokenizer over each chunk's context window (960 ms look-back,
40 ms look-ahead).  A chunk is only emitted once its look-ahead audio has
arrived; ``finalize`` zero-pads and flushes whatever is still pending.
"""
from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16_000
SAMPLES_PER_MS = SAMPLE_RATE // 1000
CHUNK_MS = 160
CHUNK_SAMPLES = CHUNK_MS * SAMPLES_PER_MS  # 2560
TOKENS_PER_CHUNK = 2  # 12.5 Hz token rate over a 160 ms chunk


class SampleRateMismatch(ValueError):
    """Pushed audio is not 16 kHz."""


class SessionClosed(RuntimeError):
    """push() after finalize()."""


class WindowSizeMismatch(ValueError):
    """Tokenizer got a window of the wrong length."""


@dataclass(frozen=True)
class AudioFrame:
    """An arbitrary-length slice of the input stream (may be empty)."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.int16).ravel()
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True)
class AudioChunk:
    """One 160 ms slice of the stream plus its two audio token ids."""

    index: int
    start_ms: int
    samples: np.ndarray
    tokens: tuple[int, int]
    duration_ms: int = CHUNK_MS

    def __post_init__(self):
        if self.duration_ms != CHUNK_MS:
            raise ValueError(f"chunk duration must be {CHUNK_MS} ms")
        if len(self.samples) != CHUNK_SAMPLES:
            raise ValueError(f"chunk must hold {CHUNK_SAMPLES} samples, got {len(self.samples)}")
        if len(self.tokens) != TOKENS_PER_CHUNK:
            raise ValueError(f"chunk must carry {TOKENS_PER_CHUNK} tokens")
        if self.start_ms != self.index * CHUNK_MS:
            raise ValueError("start_ms must equal index * 160")

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.duration_ms


@dataclass(frozen=True)
class TokenizerWindow:
    """Geometry of the block-causal tokenizer context around one chunk.

    The window spans look-back + target + look-ahead and yields a fixed
    token count; the two tokens aligned with the 160 ms target sit at the
    third-to-last and second-to-last window positions (the final token is
    look-ahead spill-over).
    """

    lookback_ms: int = 960
    target_ms: int = CHUNK_MS
    lookahead_ms: int = 40
    receptive_field_ms: int = 1160
    window_token_count: int = 15
    block_size: int = 12
    target_token_indices: tuple[int, int] = (12, 13)

    def __post_init__(self):
        if self.lookback_ms + self.target_ms + self.lookahead_ms != self.receptive_field_ms:
            raise ValueError("window spans must sum to the receptive field")
        if self.target_token_indices != (self.window_token_count - 3, self.window_token_count - 2):
            raise ValueError("target tokens must be the third- and second-to-last window positions")
        if self.window_token_count <= 0 or self.block_size <= 0:
            raise ValueError("token counts must be positive")

    @property
    def window_samples(self) -> int:
        return self.receptive_field_ms * SAMPLES_PER_MS

    @property
    def lookahead_samples(self) -> int:
        return self.lookahead_ms * SAMPLES_PER_MS


class TokenizerBackend:
    """Maps one context window of samples to a fixed number of token ids.

    Implementations must be deterministic: identical windows yield identical
    token ids.
    """

    window: TokenizerWindow = TokenizerWindow()

    def tokenize(self, window_samples: np.ndarray) -> list[int]:
        raise NotImplementedError


class HashTokenizer(TokenizerBackend):
    """Deterministic stand-in tokenizer: token ids derived from a window hash.

    All-zero (silence) windows map to a reserved silence token id so that
    downstream silence handling is testable without a neural codec.
    """

    def __init__(self, vocab_size: int = 4096, silence_token_id: int = 0,
                 window: TokenizerWindow | None = None):
        if vocab_size < 2:
            raise ValueError("vocab needs at least a silence id and one speech id")
        self.vocab_size = vocab_size
        self.silence_token_id = silence_token_id
        if window is not None:
            self.window = window

    def tokenize(self, window_samples: np.ndarray) -> list[int]:
        arr = np.asarray(window_samples, dtype=np.int16).ravel()
        if len(arr) != self.window.window_samples:
            raise WindowSizeMismatch(
                f"expected {self.window.window_samples} samples, got {len(arr)}")
        count = self.window.window_token_count
        if not arr.any():
            return [self.silence_token_id] * count
        digest = hashlib.blake2b(arr.tobytes(), digest_size=2 * count).digest()
        ids = np.frombuffer(digest, dtype=">u2")
        # keep the silence id out of the hashed range
        return [1 + int(v) % (self.vocab_size - 1) for v in ids]


class IngestSession:
    """Single-owner chunker for one audio stream.

    Chunk i becomes available once sample (i+1)*2560 + 640 has been pushed
    (40 ms look-ahead gate); the context window is zero-padded on the left
    at stream start and on the right only during finalize.
    """

    def __init__(self, tokenizer: TokenizerBackend | None = None):
        self.tokenizer = tokenizer if tokenizer is not None else HashTokenizer()
        self._buffer = np.zeros(0, dtype=np.int16)
        self._emitted = 0
        self._closed = False

    @property
    def sample_count(self) -> int:
        return len(self._buffer)

    @property
    def closed(self) -> bool:
        return self._closed

    def push(self, frame: AudioFrame) -> list[AudioChunk]:
        """Append a frame and return every chunk whose look-ahead has arrived."""
        if self._closed:
            raise SessionClosed("push after finalize")
        if frame.sample_rate != SAMPLE_RATE:
            raise SampleRateMismatch(f"expected {SAMPLE_RATE} Hz, got {frame.sample_rate}")
        if len(frame.samples):
            self._buffer = np.concatenate([self._buffer, frame.samples])
        lookahead = self.tokenizer.window.lookahead_samples
        chunks = []
        while (self._emitted + 1) * CHUNK_SAMPLES + lookahead <= len(self._buffer):
            chunks.append(self._build_chunk(self._emitted))
            self._emitted += 1
        return chunks

    def finalize(self) -> list[AudioChunk]:
        """Flush pending chunks, zero-padding missing tails and look-ahead.

        Every pushed sample ends up in exactly one chunk, so an N-sample
        stream totals ceil(N / 2560) chunks; depending on where the stream
        stopped relative to the look-ahead gate this flushes 0, 1 or 2
        chunks.  Idempotent: later calls return nothing.
        """
        if self._closed:
            return []
        self._closed = True
        total = -(-len(self._buffer) // CHUNK_SAMPLES)  # ceil
        chunks = []
        for i in range(self._emitted, total):
            chunks.append(self._build_chunk(i))
        self._emitted = total
        return chunks

    def _build_chunk(self, index: int) -> AudioChunk:
        start = index * CHUNK_SAMPLES
        chunk_samples = self._slice_padded(start, start + CHUNK_SAMPLES)
        win = self.tokenizer.window
        window = self._slice_padded(start - win.lookback_ms * SAMPLES_PER_MS,
                                    start + CHUNK_SAMPLES + win.lookahead_samples)
        ids = self.tokenizer.tokenize(window)
        if len(ids) != win.window_token_count:
            raise WindowSizeMismatch(
                f"tokenizer returned {len(ids)} ids, expected {win.window_token_count}")
        a, b = win.target_token_indices
        return AudioChunk(index=index, start_ms=index * CHUNK_MS,
                          samples=chunk_samples, tokens=(ids[a], ids[b]))

    def _slice_padded(self, start: int, stop: int) -> np.ndarray:
        out = np.zeros(stop - start, dtype=np.int16)
        lo = max(start, 0)
        hi = min(stop, len(self._buffer))
        if hi > lo:
            out[lo - start:hi - start] = self._buffer[lo:hi]
        return out


def read_wav(path) -> AudioFrame:
    """Load a 16 kHz mono 16-bit PCM WAV file as a single frame."""
    with wave.open(str(path), "rb") as wav:
        if wav.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        if wav.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        rate = wav.getframerate()
        if rate != SAMPLE_RATE:
            raise SampleRateMismatch(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
        data = wav.readframes(wav.getnframes())
    return AudioFrame(np.frombuffer(data, dtype="<i2"))


def write_wav(path, samples: np.ndarray) -> None:
    """Write int16 samples as a 16 kHz mono WAV file."""
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(np.asarray(samples, dtype="<i2").tobytes())
