"""Interleaved audio/text/state token streams and their grammar.

A valid stream is one or more chunk groups, each laid out as::

    AUDIO AUDIO TEXT* ASR_EOS STATE

i.e. the two audio tokens of a 160 ms chunk, that chunk's incremental
transcript terminated by an end-of-ASR marker, then exactly one dialogue
state token.  Builders produce the three training-layout variants from a
timestamp-aligned transcript; ``weighted_loss`` is the matching per-token
weighted cross-entropy reduction (pure arithmetic, no model here).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .ingest import CHUNK_MS, TOKENS_PER_CHUNK

#: default cap on text tokens per 160 ms chunk; overflow is a loud error
MAX_TEXT_PER_CHUNK = 16

ASR_EOS_ID = 0


class TokenKind(Enum):
    AUDIO = "audio"
    TEXT = "text"
    ASR_EOS = "asr_eos"
    STATE = "state"


class DuplexState(Enum):
    """The five per-chunk dialogue states driving turn control."""

    USER_IDLE = "user_idle"
    USER_NONIDLE = "user_nonidle"
    USER_BACKCHANNEL = "user_backchannel"
    USER_COMPLETE = "user_complete"
    USER_INCOMPLETE = "user_incomplete"

    @property
    def token(self) -> str:
        return f"<|{self.value}|>"

    @property
    def token_id(self) -> int:
        return _STATE_ORDER.index(self)

    @classmethod
    def from_token_id(cls, token_id: int) -> "DuplexState":
        return _STATE_ORDER[token_id]


_STATE_ORDER = [
    DuplexState.USER_IDLE,
    DuplexState.USER_NONIDLE,
    DuplexState.USER_BACKCHANNEL,
    DuplexState.USER_COMPLETE,
    DuplexState.USER_INCOMPLETE,
]


class GrammarViolation(ValueError):
    """Flat token stream does not match the chunk grammar."""

    def __init__(self, position: int, expected: str, found: str):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(f"at position {position}: expected {expected}, found {found}")


class CountMismatch(ValueError):
    """Audio token count does not match the transcript duration."""


class LabelLengthMismatch(ValueError):
    """State label count does not match the chunk count."""


class ChunkTextOverflow(ValueError):
    """More text assigned to one chunk than the per-chunk cap allows."""


class MissingWeight(KeyError):
    """A token kind in the stream has no weight."""

    def __init__(self, kind: TokenKind):
        self.kind = kind
        super().__init__(f"no weight for token kind {kind.value}")


@dataclass(frozen=True)
class ChunkRecord:
    """One chunk's share of an interleaved stream."""

    audio_tokens: tuple[int, int]
    text_tokens: tuple[int, ...]
    state: DuplexState

    def __post_init__(self):
        if len(self.audio_tokens) != TOKENS_PER_CHUNK:
            raise ValueError(f"chunk records carry {TOKENS_PER_CHUNK} audio tokens")


@dataclass(frozen=True)
class InterleavedSequence:
    chunks: tuple[ChunkRecord, ...]

    def flatten(self) -> list[tuple[TokenKind, int]]:
        out: list[tuple[TokenKind, int]] = []
        for chunk in self.chunks:
            out.extend((TokenKind.AUDIO, t) for t in chunk.audio_tokens)
            out.extend((TokenKind.TEXT, t) for t in chunk.text_tokens)
            out.append((TokenKind.ASR_EOS, ASR_EOS_ID))
            out.append((TokenKind.STATE, chunk.state.token_id))
        return out

    def to_jsonable(self) -> list[dict]:
        return [{"kind": k.value, "id": i} for k, i in self.flatten()]


def validate(tokens: Sequence[tuple[TokenKind, int]]) -> InterleavedSequence:
    """Parse a flat (kind, id) stream against the chunk grammar.

    Total: every stream either parses or raises GrammarViolation with the
    offending position; trailing partial chunks are rejected, nothing is
    silently dropped.
    """
    chunks: list[ChunkRecord] = []
    pos = 0
    n = len(tokens)

    def peek() -> str:
        return tokens[pos][0].value if pos < n else "end of stream"

    while pos < n:
        audio = []
        for _ in range(TOKENS_PER_CHUNK):
            if pos >= n or tokens[pos][0] is not TokenKind.AUDIO:
                raise GrammarViolation(pos, "audio token", peek())
            audio.append(tokens[pos][1])
            pos += 1
        text = []
        while pos < n and tokens[pos][0] is TokenKind.TEXT:
            text.append(tokens[pos][1])
            pos += 1
        if pos >= n or tokens[pos][0] is not TokenKind.ASR_EOS:
            raise GrammarViolation(pos, "text token or asr_eos", peek())
        pos += 1
        if pos >= n or tokens[pos][0] is not TokenKind.STATE:
            raise GrammarViolation(pos, "state token", peek())
        state_id = tokens[pos][1]
        if not 0 <= state_id < len(_STATE_ORDER):
            raise GrammarViolation(pos, "state token id in [0, 5)", str(state_id))
        pos += 1
        chunks.append(ChunkRecord(audio_tokens=(audio[0], audio[1]),
                                  text_tokens=tuple(text),
                                  state=DuplexState.from_token_id(state_id)))
    if not chunks:
        raise GrammarViolation(0, "audio token", "end of stream")
    return InterleavedSequence(tuple(chunks))


@dataclass(frozen=True)
class Word:
    text: str
    start_ms: int
    end_ms: int


@dataclass(frozen=True)
class AlignedTranscript:
    """Word-level transcript with millisecond timestamps over a stream."""

    words: tuple[Word, ...]
    total_duration_ms: int

    def __post_init__(self):
        prev_end = 0
        for w in self.words:
            if w.start_ms < prev_end:
                raise ValueError(f"overlapping or unsorted word at {w.start_ms} ms")
            if w.end_ms < w.start_ms:
                raise ValueError(f"word ends before it starts: {w}")
            if w.end_ms > self.total_duration_ms:
                raise ValueError(f"word ends after the stream: {w}")
            prev_end = w.end_ms

    @property
    def chunk_count(self) -> int:
        return -(-self.total_duration_ms // CHUNK_MS)

    def to_jsonable(self) -> list[dict]:
        return [{"text": w.text, "start_ms": w.start_ms, "end_ms": w.end_ms}
                for w in self.words]

    @classmethod
    def from_jsonable(cls, data: Iterable[dict], total_duration_ms: int) -> "AlignedTranscript":
        return cls(tuple(Word(d["text"], d["start_ms"], d["end_ms"]) for d in data),
                   total_duration_ms)


TextTokenizer = Callable[[str], Sequence[int]]


def word_hash_tokenizer(word: str) -> list[int]:
    """Default text tokenizer: one stable opaque id per word."""
    h = 0
    for ch in word.encode("utf-8"):
        h = (h * 131 + ch) % 1_000_003
    return [h]


def _check_audio_count(transcript: AlignedTranscript, audio_tokens: Sequence[int]) -> int:
    expected = TOKENS_PER_CHUNK * transcript.chunk_count
    if len(audio_tokens) != expected:
        raise CountMismatch(
            f"need {expected} audio tokens for {transcript.total_duration_ms} ms, "
            f"got {len(audio_tokens)}")
    return transcript.chunk_count


def assign_words_to_chunks(transcript: AlignedTranscript,
                           chunk_count: int) -> list[list[Word]]:
    """Assign each word to the chunk containing its end timestamp.

    Chunk intervals are half-open [160*i, 160*(i+1)), so a word ending
    exactly on a boundary belongs to the following chunk; text therefore
    never precedes its audio evidence.  A word ending exactly at the final
    stream boundary folds into the last chunk.
    """
    buckets: list[list[Word]] = [[] for _ in range(chunk_count)]
    for word in transcript.words:
        buckets[min(word.end_ms // CHUNK_MS, chunk_count - 1)].append(word)
    return buckets


def _tokenize_buckets(buckets: list[list[Word]], tokenizer: TextTokenizer,
                      max_text: int) -> list[tuple[int, ...]]:
    per_chunk = []
    for i, bucket in enumerate(buckets):
        ids: list[int] = []
        for word in bucket:
            ids.extend(tokenizer(word.text))
        if len(ids) > max_text:
            raise ChunkTextOverflow(
                f"chunk {i} holds {len(ids)} text tokens (cap {max_text})")
        per_chunk.append(tuple(ids))
    return per_chunk


def build_stage1(transcript: AlignedTranscript, audio_tokens: Sequence[int],
                 tokenizer: TextTokenizer = word_hash_tokenizer) -> list[tuple[TokenKind, int]]:
    """Non-streaming layout: all audio, then all text, then one asr_eos."""
    _check_audio_count(transcript, audio_tokens)
    out = [(TokenKind.AUDIO, int(t)) for t in audio_tokens]
    for word in transcript.words:
        out.extend((TokenKind.TEXT, t) for t in tokenizer(word.text))
    out.append((TokenKind.ASR_EOS, ASR_EOS_ID))
    return out


def build_stage2(transcript: AlignedTranscript, audio_tokens: Sequence[int],
                 tokenizer: TextTokenizer = word_hash_tokenizer,
                 max_text_per_chunk: int = MAX_TEXT_PER_CHUNK) -> InterleavedSequence:
    """Streaming layout with a placeholder state on every chunk.

    The placeholder is USER_NONIDLE so the one grammar covers this stage
    too; give state tokens weight 0 when scoring such sequences.
    """
    n = _check_audio_count(transcript, audio_tokens)
    labels = [DuplexState.USER_NONIDLE] * n
    return build_stage3(transcript, audio_tokens, labels, tokenizer, max_text_per_chunk)


def build_stage3(transcript: AlignedTranscript, audio_tokens: Sequence[int],
                 state_labels: Sequence[DuplexState],
                 tokenizer: TextTokenizer = word_hash_tokenizer,
                 max_text_per_chunk: int = MAX_TEXT_PER_CHUNK) -> InterleavedSequence:
    """Streaming layout with one supplied dialogue state per chunk."""
    n = _check_audio_count(transcript, audio_tokens)
    if len(state_labels) != n:
        raise LabelLengthMismatch(f"{len(state_labels)} labels for {n} chunks")
    buckets = assign_words_to_chunks(transcript, n)
    texts = _tokenize_buckets(buckets, tokenizer, max_text_per_chunk)
    chunks = []
    for i in range(n):
        audio = (int(audio_tokens[2 * i]), int(audio_tokens[2 * i + 1]))
        chunks.append(ChunkRecord(audio_tokens=audio, text_tokens=texts[i],
                                  state=state_labels[i]))
    return InterleavedSequence(tuple(chunks))


def weighted_loss(per_token: Iterable[tuple[TokenKind, float]],
                  weights: dict[TokenKind, float]) -> float:
    """Sum of per-token cross-entropy values scaled by their kind's weight."""
    for kind, w in weights.items():
        if w < 0:
            raise ValueError(f"negative weight for {kind.value}")
    total = 0.0
    for kind, ce in per_token:
        if ce < 0:
            raise ValueError(f"negative cross-entropy value {ce}")
        if kind not in weights:
            raise MissingWeight(kind)
        total += weights[kind] * ce
    return total


def uniform_weights(value: float = 1.0,
                    state_weight: Optional[float] = None) -> dict[TokenKind, float]:
    """Weight table with one value everywhere, optionally overriding states."""
    table = {kind: value for kind in TokenKind}
    if state_weight is not None:
        table[TokenKind.STATE] = state_weight
    return table
