"""Attention-guided streaming decision loop.

Each step runs three stages over the retained history plus one new audio
chunk: (1) hypothesis selection - decode greedily and emit only tokens whose
attention peak stays clear of the last ``f`` frames; (2) textual history
selection - keep the last ``n_words`` words, or everything after the last
strong punctuation mark; (3) audio history selection - drop frames before the
earliest frame any retained token attends to. A fixed-duration baseline mode
replaces stages 2-3 with word-count/word-duration truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import (
    DEFAULT_MAX_NEW_TOKENS,
    AttentionMatrix,
    DecodeRequest,
    FeatureSequence,
    InputError,
    ModelHandle,
    TokenRecord,
    decode,
    flatten_words,
    group_words,
    word_surface,
)

HISTORY_MODES = ("fixed_words", "punctuation", "baseline_fixed")
STRONG_MARKS = (".", "!", "?", ";", ":")

Words = list[list[TokenRecord]]


@dataclass(frozen=True)
class PolicyConfig:
    f: int = 4  # emission blocked while attention peaks in the last f frames
    chunk_ms: int = 1000
    n_words: int = 20
    history_mode: str = "fixed_words"
    ms_per_word_baseline: float = 280.0
    attention_layer: int = 4

    def __post_init__(self) -> None:
        if self.f < 0:
            raise InputError("f must be non-negative")
        if self.chunk_ms <= 0:
            raise InputError("chunk_ms must be positive")
        if self.n_words < 1:
            raise InputError("n_words must be at least 1")
        if self.history_mode not in HISTORY_MODES:
            raise InputError(f"history_mode must be one of {HISTORY_MODES}")
        if self.ms_per_word_baseline <= 0:
            raise InputError("ms_per_word_baseline must be positive")


@dataclass
class HistoryState:
    """Retained context carried between steps of one stream session."""

    text_history: list[TokenRecord] = field(default_factory=list)
    audio_history: FeatureSequence | None = None
    emitted_total_words: int = 0

    def text_words(self) -> Words:
        return group_words(self.text_history) if self.text_history else []


@dataclass
class StepResult:
    emitted_tokens: list[TokenRecord]
    new_state: HistoryState
    attention: AttentionMatrix | None
    compute_cost_ms: float
    alignment: list[int]  # per result token, local frame indices
    num_frames: int  # frames visible at this step


def align_tokens(attention: AttentionMatrix) -> list[int]:
    """Map each decoded token to the first frame attaining its row maximum."""
    if attention.num_tokens == 0 or attention.num_frames == 0:
        raise InputError("cannot align an empty attention matrix")
    return [int(i) for i in np.argmax(attention.scores, axis=1)]


def select_emission(alignment: list[int], num_frames: int, f: int) -> int:
    """Length of the emittable prefix: stop at the first token aligned to the
    last ``f`` frames (indices >= num_frames - f)."""
    if f < 0:
        raise InputError("f must be non-negative")
    safe_end = num_frames - f
    count = 0
    for idx in alignment:
        if idx >= safe_end:
            break
        count += 1
    return count


def concat_words(prev: Words, new: Words) -> Words:
    """Word-level concatenation, merging a fragment that continues the last
    previous word (its first token does not begin a word)."""
    if not prev:
        return [list(w) for w in new]
    out = [list(w) for w in prev]
    for word in new:
        if word and not word[0].begins_word:
            out[-1].extend(word)
        else:
            out.append(list(word))
    return out


def textual_history_fw(prev_history: Words, new_hypothesis: Words,
                       n_words: int) -> Words:
    """Keep only the last ``n_words`` words of history plus new hypothesis."""
    combined = concat_words(prev_history, new_hypothesis)
    if n_words < 1:
        raise InputError("n_words must be at least 1")
    return combined[-n_words:] if len(combined) > n_words else combined


def ends_with_strong_mark(word: list[TokenRecord]) -> bool:
    surface = word_surface(word)
    return bool(surface) and surface[-1] in STRONG_MARKS


def textual_history_punct(prev_history: Words, new_hypothesis: Words) -> Words:
    """Keep the words after the last one ending in a strong punctuation mark
    (. ! ? ; :); with no mark anywhere, keep everything."""
    combined = concat_words(prev_history, new_hypothesis)
    cut = -1
    for i, word in enumerate(combined):
        if ends_with_strong_mark(word):
            cut = i
    return combined[cut + 1:]


def audio_history_select(full_audio: FeatureSequence, retained_text: Words,
                         alignment: list[int]) -> FeatureSequence:
    """Keep the audio suffix from the earliest frame any retained token
    attends to; an empty retained text resets the audio history entirely."""
    if not retained_text:
        return FeatureSequence.empty(
            full_audio.width, full_audio.frame_duration_ms,
            full_audio.end_offset_ms)
    n_tokens = len(flatten_words(retained_text))
    if len(alignment) != n_tokens:
        raise RuntimeError(
            f"alignment has {len(alignment)} entries for {n_tokens} retained tokens")
    return full_audio.suffix_from(min(alignment))


def baseline_history(prev: HistoryState, new_hypothesis: Words,
                     full_audio: FeatureSequence,
                     config: PolicyConfig) -> HistoryState:
    """Fixed-size history: last ``n_words`` words of text, and audio for the
    same word count at an assumed fixed duration per word (rounded down to
    whole frames, clamped to what exists)."""
    kept_words = textual_history_fw(prev.text_words(), new_hypothesis,
                                    config.n_words)
    window_ms = len(kept_words) * config.ms_per_word_baseline
    keep_frames = int(window_ms // full_audio.frame_duration_ms)
    audio = full_audio.last_frames(keep_frames)
    return HistoryState(
        text_history=flatten_words(kept_words),
        audio_history=audio,
        emitted_total_words=prev.emitted_total_words,
    )


def _strip_at_eos(tokens: list[TokenRecord]) -> list[TokenRecord]:
    for i, tok in enumerate(tokens):
        if tok.is_eos:
            return tokens[:i]
    return tokens


def policy_step(state: HistoryState, new_chunk: FeatureSequence,
                model: ModelHandle, config: PolicyConfig,
                max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
                f_override: int | None = None) -> StepResult:
    """Run one decision step: decode, select the emission, then select the
    textual and audio history for the next step.

    Withheld continuation tokens are discarded; the next step re-derives them
    with more audio. ``f_override`` supports the end-of-stream flush, which
    re-runs the step with f = 0.
    """
    audio_hist = state.audio_history
    full_audio = audio_hist.concat(new_chunk) if audio_hist is not None else new_chunk
    f = config.f if f_override is None else f_override

    if len(full_audio) == 0:
        # Nothing audible (e.g. flush right after a history reset).
        return StepResult([], HistoryState([], full_audio,
                                           state.emitted_total_words),
                          None, 0.0, [], 0)

    request = DecodeRequest(features=full_audio, forced_prefix=state.text_history,
                            max_new_tokens=max_new_tokens)
    result = decode(request, model)
    # A decode can come back empty (nothing audible resolves to a token yet);
    # there is then nothing to align or emit.
    alignment = align_tokens(result.attention) if result.tokens else []

    prefix_len = len(state.text_history)
    continuation = _strip_at_eos(result.continuation(prefix_len))
    cont_alignment = alignment[prefix_len:prefix_len + len(continuation)]
    emit_count = select_emission(cont_alignment, len(full_audio), f)
    emitted = continuation[:emit_count]

    old_words = state.text_words()
    new_words = group_words(emitted) if emitted else []

    if not old_words and not new_words:
        # Nothing emitted or retained yet: history selection has nothing to
        # work on, so the audio keeps accumulating until a first emission.
        new_state = HistoryState(list(state.text_history), full_audio,
                                 state.emitted_total_words)
    elif config.history_mode == "baseline_fixed":
        new_state = baseline_history(state, new_words, full_audio, config)
    else:
        if config.history_mode == "fixed_words":
            kept_words = textual_history_fw(old_words, new_words, config.n_words)
        else:
            kept_words = textual_history_punct(old_words, new_words)
        # Retained words are a suffix of prefix + emitted, which all have
        # attention rows from this step's forward pass.
        kept_len = len(flatten_words(kept_words))
        end = prefix_len + emit_count
        retained_alignment = alignment[end - kept_len:end]
        audio = audio_history_select(full_audio, kept_words, retained_alignment)
        new_state = HistoryState(
            text_history=flatten_words(kept_words),
            audio_history=audio,
            emitted_total_words=state.emitted_total_words,
        )

    new_state.emitted_total_words += sum(1 for t in emitted if t.begins_word)
    return StepResult(emitted, new_state, result.attention,
                      result.compute_cost_ms, alignment, len(full_audio))


def initial_state(width: int, frame_duration_ms: float) -> HistoryState:
    return HistoryState([], FeatureSequence.empty(width, frame_duration_ms), 0)


def history_words_surfaces(state: HistoryState) -> list[str]:
    return [word_surface(w) for w in state.text_words()]
