"""Core data types for the streaming translation pipeline.

All timing is in milliseconds on the stream clock. Audio is represented by
encoder-side feature frames with a fixed duration per frame (default 40 ms,
i.e. 10 ms features after 4x convolutional downsampling).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

# Encoder frames default to 40 ms: 10 ms filterbank features downsampled 4x.
DEFAULT_FRAME_MS = 40.0
# Safety cap on greedy continuation length per decode call.
DEFAULT_MAX_NEW_TOKENS = 128
# Attention rows must sum to one within this tolerance.
ATTENTION_ROW_SUM_TOL = 1e-4


class InputError(ValueError):
    """Invalid user-supplied input (bad request, malformed file, ...)."""


class TransportError(RuntimeError):
    """External backend unreachable or violated the wire protocol."""


class ScenarioError(ValueError):
    """A scripted mock scenario was used inconsistently."""


@dataclass
class FeatureSequence:
    """A run of encoder feature frames located on the stream clock.

    ``origin_offset_ms`` places frame 0 on the global stream clock so that
    trimmed histories remember where they start.
    """

    frames: np.ndarray  # float32, shape (n_frames, width)
    frame_duration_ms: float = DEFAULT_FRAME_MS
    origin_offset_ms: float = 0.0

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise InputError(f"frames must be 2-D, got shape {self.frames.shape}")
        if self.frame_duration_ms <= 0:
            raise InputError("frame_duration_ms must be positive")
        if self.origin_offset_ms < 0:
            raise InputError("origin_offset_ms must be non-negative")

    @classmethod
    def empty(cls, width: int, frame_duration_ms: float = DEFAULT_FRAME_MS,
              origin_offset_ms: float = 0.0) -> "FeatureSequence":
        return cls(np.zeros((0, width), dtype=np.float32), frame_duration_ms,
                   origin_offset_ms)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def width(self) -> int:
        return int(self.frames.shape[1])

    @property
    def duration_ms(self) -> float:
        return len(self) * self.frame_duration_ms

    @property
    def end_offset_ms(self) -> float:
        return self.origin_offset_ms + self.duration_ms

    @property
    def origin_frame(self) -> int:
        """Index of frame 0 on the stream-global frame grid."""
        return int(round(self.origin_offset_ms / self.frame_duration_ms))

    def suffix_from(self, frame_index: int) -> "FeatureSequence":
        """Drop everything before ``frame_index``, advancing the origin."""
        if not 0 <= frame_index <= len(self):
            raise InputError(f"frame_index {frame_index} out of range 0..{len(self)}")
        return FeatureSequence(
            self.frames[frame_index:],
            self.frame_duration_ms,
            self.origin_offset_ms + frame_index * self.frame_duration_ms,
        )

    def last_frames(self, count: int) -> "FeatureSequence":
        """Keep only the trailing ``count`` frames (clamped to what exists)."""
        count = max(0, min(count, len(self)))
        return self.suffix_from(len(self) - count)

    def concat(self, other: "FeatureSequence") -> "FeatureSequence":
        """Append a contiguous continuation of this sequence."""
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        if other.frame_duration_ms != self.frame_duration_ms:
            raise InputError("frame_duration_ms mismatch in concat")
        if self.width != other.width:
            raise InputError("feature width mismatch in concat")
        if abs(other.origin_offset_ms - self.end_offset_ms) > 1e-6:
            raise InputError(
                f"non-contiguous concat: {other.origin_offset_ms} != {self.end_offset_ms}")
        return FeatureSequence(
            np.concatenate([self.frames, other.frames], axis=0),
            self.frame_duration_ms,
            self.origin_offset_ms,
        )


@dataclass(frozen=True)
class TokenRecord:
    """One generated subword piece."""

    token_id: int
    surface: str
    begins_word: bool
    is_eos: bool = False


@dataclass
class AttentionMatrix:
    """Cross-attention scores of decoded tokens over input frames.

    Row i is the attention distribution of token i; rows sum to one.
    """

    scores: np.ndarray  # shape (n_tokens, n_frames), non-negative
    layer_index: int = 4  # 1-based decoder layer the scores were read from
    head_reduction: str = "mean"

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise InputError(f"attention must be 2-D, got shape {self.scores.shape}")

    @property
    def num_tokens(self) -> int:
        return int(self.scores.shape[0])

    @property
    def num_frames(self) -> int:
        return int(self.scores.shape[1])

    def validate(self) -> None:
        if np.any(self.scores < 0):
            raise InputError("attention scores must be non-negative")
        if self.num_tokens and self.num_frames:
            sums = self.scores.sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > ATTENTION_ROW_SUM_TOL:
                raise InputError("attention rows must sum to 1 within 1e-4")


@dataclass
class DecodeRequest:
    """Forced-prefix greedy decode request over a feature window."""

    features: FeatureSequence
    forced_prefix: list[TokenRecord] = field(default_factory=list)
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS


@dataclass
class DecodeResult:
    """Decode output: echoed prefix + greedy continuation with attention.

    Attention rows cover every token in ``tokens`` (prefix rows come from the
    same forward pass so history trimming can use them).
    """

    tokens: list[TokenRecord]
    attention: AttentionMatrix
    compute_cost_ms: float = 0.0

    def continuation(self, prefix_len: int) -> list[TokenRecord]:
        return self.tokens[prefix_len:]


class ModelHandle(Protocol):
    """Incremental translation model contract: forced-prefix greedy decode."""

    def decode(self, request: DecodeRequest) -> DecodeResult:
        ...


def decode(request: DecodeRequest, model: ModelHandle) -> DecodeResult:
    """Run one forced-prefix greedy decode, checking the shared contract."""
    if len(request.features) == 0:
        raise InputError("decode requires a non-empty feature window")
    if any(t.is_eos for t in request.forced_prefix):
        raise InputError("forced prefix must not contain EOS")
    if request.max_new_tokens < 1:
        raise InputError("max_new_tokens must be positive")
    result = model.decode(request)
    prefix = request.forced_prefix
    if result.tokens[:len(prefix)] != prefix:
        raise TransportError("model did not echo the forced prefix")
    if result.attention.num_tokens != len(result.tokens):
        raise TransportError("attention rows must cover all result tokens")
    if result.attention.num_frames != len(request.features):
        raise TransportError("attention columns must cover all input frames")
    result.attention.validate()
    if len(result.tokens) - len(prefix) > request.max_new_tokens:
        raise TransportError("continuation exceeds max_new_tokens")
    return result


def group_words(tokens: list[TokenRecord]) -> list[list[TokenRecord]]:
    """Split a token run into words using the begins_word flags.

    A leading run of non-initial tokens (a fragment left over from history
    trimming) counts as one word.
    """
    words: list[list[TokenRecord]] = []
    for tok in tokens:
        if tok.begins_word or not words:
            words.append([tok])
        else:
            words[-1].append(tok)
    return words


def flatten_words(words: list[list[TokenRecord]]) -> list[TokenRecord]:
    return [tok for word in words for tok in word]


def word_surface(word: list[TokenRecord]) -> str:
    """Detokenize one word: concatenation of its token surfaces."""
    return "".join(tok.surface for tok in word)
