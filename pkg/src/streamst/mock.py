"""Scripted deterministic mock of an incremental translation model.

A scenario scripts the full output: each word carries its subword pieces, one
aligned source frame per piece (absolute, on the stream frame grid), and how
many frames past its alignment the model must have heard before it will
produce the word. Decoding is a pure function of the scenario and the
request, so policy behaviour can be traced by hand.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import (
    DEFAULT_FRAME_MS,
    AttentionMatrix,
    DecodeRequest,
    DecodeResult,
    FeatureSequence,
    InputError,
    ScenarioError,
    TokenRecord,
)

DEFAULT_NOISE = 0.2


@dataclass
class MockWord:
    surface: str
    tokens: list[str]
    alignment_frames: list[int]  # absolute frame index per token, non-decreasing
    lookahead_frames: int = 0

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ScenarioError(f"word {self.surface!r} has no tokens")
        if len(self.alignment_frames) != len(self.tokens):
            raise ScenarioError(
                f"word {self.surface!r}: {len(self.tokens)} tokens but "
                f"{len(self.alignment_frames)} alignment frames")
        if "".join(self.tokens) != self.surface:
            raise ScenarioError(
                f"word {self.surface!r} does not detokenize from {self.tokens}")
        if self.lookahead_frames < 0:
            raise ScenarioError("lookahead_frames must be non-negative")


@dataclass
class MockScenario:
    """Scripted output plus synthetic-attention shape parameters.

    ``noise`` is the fraction of each attention row spread uniformly over all
    frames; the rest sits on the aligned frame. 0 gives one-hot rows; the
    aligned frame stays the row argmax for any noise < 1, and holds at least
    half the mass for noise <= 0.5.
    """

    words: list[MockWord]
    noise: float = DEFAULT_NOISE
    frame_duration_ms: float = DEFAULT_FRAME_MS
    feature_width: int = 8
    compute_cost_ms: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise < 1.0:
            raise ScenarioError("noise must be in [0, 1)")
        flat = [a for w in self.words for a in w.alignment_frames]
        if any(b < a for a, b in zip(flat, flat[1:])):
            raise ScenarioError("alignment frames must be non-decreasing across tokens")
        if any(a < 0 for a in flat):
            raise ScenarioError("alignment frames must be non-negative")

    def script_tokens(self) -> list[TokenRecord]:
        """The full scripted token stream; ids are script positions."""
        records: list[TokenRecord] = []
        for word in self.words:
            for i, piece in enumerate(word.tokens):
                records.append(TokenRecord(
                    token_id=len(records), surface=piece, begins_word=(i == 0)))
        return records

    def script_alignments(self) -> list[int]:
        return [a for w in self.words for a in w.alignment_frames]

    def token_word_index(self) -> list[int]:
        return [wi for wi, w in enumerate(self.words) for _ in w.tokens]

    @property
    def num_tokens(self) -> int:
        return sum(len(w.tokens) for w in self.words)

    def min_total_frames(self) -> int:
        """Frames needed before every scripted word becomes available."""
        need = 0
        for w in self.words:
            need = max(need, max(w.alignment_frames) + w.lookahead_frames)
        return need


def synthesize_attention(scenario: MockScenario, decoded_tokens: list[TokenRecord],
                         num_frames: int, frame_offset: int = 0,
                         layer_index: int = 4) -> AttentionMatrix:
    """Build peaked attention rows at each token's scripted alignment.

    ``frame_offset`` shifts absolute scripted frames into the local window;
    peaks falling outside the window clamp to its edges (a trimmed history can
    retain tokens whose audio is gone).
    """
    alignments = scenario.script_alignments()
    rows = np.zeros((len(decoded_tokens), num_frames), dtype=np.float64)
    if num_frames == 0:
        return AttentionMatrix(rows, layer_index=layer_index)
    floor = scenario.noise / num_frames
    for r, tok in enumerate(decoded_tokens):
        if not 0 <= tok.token_id < len(alignments):
            raise ScenarioError(f"token id {tok.token_id} outside the script")
        peak = min(max(alignments[tok.token_id] - frame_offset, 0), num_frames - 1)
        rows[r, :] = floor
        rows[r, peak] += 1.0 - scenario.noise
    return AttentionMatrix(rows, layer_index=layer_index)


class MockModel:
    """ModelHandle over a scripted scenario.

    The request alone determines the output: the forced prefix pins the resume
    position in the script (prefix token ids are script positions), and the
    feature window's stream offset decides which scripted words are audible
    when the prefix is empty.
    """

    def __init__(self, scenario: MockScenario, attention_layer: int = 4,
                 compute_cost_ms: float | None = None):
        self.scenario = scenario
        self.attention_layer = attention_layer
        self.compute_cost_ms = (scenario.compute_cost_ms
                                if compute_cost_ms is None else compute_cost_ms)
        self._script = scenario.script_tokens()
        self._alignments = scenario.script_alignments()
        self._word_of = scenario.token_word_index()

    @property
    def frame_duration_ms(self) -> float:
        return self.scenario.frame_duration_ms

    @property
    def feature_width(self) -> int:
        return self.scenario.feature_width

    def _word_available(self, word_index: int, window_end_frame: int) -> bool:
        # The peak frame itself must have been received (it is an index, so
        # strictly below the end count); the lookahead extends the wait.
        word = self.scenario.words[word_index]
        peak = max(word.alignment_frames)
        return (peak < window_end_frame
                and peak + word.lookahead_frames <= window_end_frame)

    def _resume_index(self, prefix: list[TokenRecord], start_frame: int) -> int:
        if not prefix:
            for idx, align in enumerate(self._alignments):
                if align >= start_frame:
                    return idx
            return len(self._script)
        ids = [t.token_id for t in prefix]
        for tid in ids:
            if not 0 <= tid < len(self._script):
                raise ScenarioError(f"prefix token id {tid} outside the script")
        if any(b != a + 1 for a, b in zip(ids, ids[1:])):
            raise ScenarioError(f"prefix ids {ids} are not contiguous in the script")
        return ids[-1] + 1

    def decode(self, request: DecodeRequest) -> DecodeResult:
        features = request.features
        if features.width != self.feature_width:
            raise InputError(
                f"feature width {features.width} != scenario width {self.feature_width}")
        num_frames = len(features)
        start = features.origin_frame
        end = start + num_frames

        idx = self._resume_index(request.forced_prefix, start)
        continuation: list[TokenRecord] = []
        while idx < len(self._script) and len(continuation) < request.max_new_tokens:
            if not self._word_available(self._word_of[idx], end):
                break
            continuation.append(self._script[idx])
            idx += 1

        tokens = list(request.forced_prefix) + continuation
        attention = synthesize_attention(
            self.scenario, tokens, num_frames, frame_offset=start,
            layer_index=self.attention_layer)
        return DecodeResult(tokens=tokens, attention=attention,
                            compute_cost_ms=self.compute_cost_ms)


# --- scenario (de)serialization ---

def scenario_to_dict(scenario: MockScenario) -> dict:
    return {
        "words": [
            {
                "surface": w.surface,
                "tokens": list(w.tokens),
                "true_alignment_frame_per_token": list(w.alignment_frames),
                "lookahead_frames": w.lookahead_frames,
            }
            for w in scenario.words
        ],
        "noise": scenario.noise,
        "frame_duration_ms": scenario.frame_duration_ms,
        "feature_width": scenario.feature_width,
        "compute_cost_ms": scenario.compute_cost_ms,
    }


def scenario_from_dict(data: dict) -> MockScenario:
    try:
        words = [
            MockWord(
                surface=w["surface"],
                tokens=list(w["tokens"]),
                alignment_frames=[int(a) for a in w["true_alignment_frame_per_token"]],
                lookahead_frames=int(w.get("lookahead_frames", 0)),
            )
            for w in data["words"]
        ]
        return MockScenario(
            words=words,
            noise=float(data.get("noise", DEFAULT_NOISE)),
            frame_duration_ms=float(data.get("frame_duration_ms", DEFAULT_FRAME_MS)),
            feature_width=int(data.get("feature_width", 8)),
            compute_cost_ms=float(data.get("compute_cost_ms", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed scenario: {exc}") from exc


def load_scenario(path: str | Path) -> MockScenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: MockScenario, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- random scenario generation (seeded, for fixtures and property suites) ---

_VOCAB = [
    "alba", "brisa", "calle", "donde", "este", "faro", "gente", "hoja",
    "isla", "junto", "lago", "mar", "noche", "ojos", "puerta", "queda",
    "rio", "sol", "tierra", "viento",
]
_STRONG_MARKS = [".", "!", "?", ";", ":"]


def _split_pieces(surface: str, rng: random.Random) -> list[str]:
    if len(surface) < 3 or rng.random() < 0.5:
        return [surface]
    cut = rng.randint(1, len(surface) - 1)
    if rng.random() < 0.3 and len(surface) - cut >= 2:
        cut2 = rng.randint(cut + 1, len(surface) - 1)
        return [surface[:cut], surface[cut:cut2], surface[cut2:]]
    return [surface[:cut], surface[cut:]]


def generate_scenario(num_words: int, total_frames: int, *, seed: int,
                      noise: float = DEFAULT_NOISE,
                      max_lookahead: int = 3,
                      punct_rate: float = 0.25,
                      frame_duration_ms: float = DEFAULT_FRAME_MS,
                      feature_width: int = 8,
                      compute_cost_ms: float = 0.0) -> MockScenario:
    """Sample a random scripted scenario.

    Every word becomes available by the end of the stream (alignment plus
    lookahead never exceeds ``total_frames``), so a full-stream decode emits
    the whole script.
    """
    if num_words < 1 or total_frames < num_words:
        raise InputError("need at least one frame per word")
    rng = random.Random(seed)
    words: list[MockWord] = []
    pieces_per_word = []
    for _ in range(num_words):
        surface = rng.choice(_VOCAB)
        if rng.random() < punct_rate:
            surface += rng.choice(_STRONG_MARKS) if rng.random() < 0.6 else ","
        pieces = _split_pieces(surface, rng)
        pieces_per_word.append(pieces)
    total_tokens = sum(len(p) for p in pieces_per_word)
    aligns = sorted(rng.randint(0, total_frames - 1) for _ in range(total_tokens))
    pos = 0
    for pieces in pieces_per_word:
        token_aligns = aligns[pos:pos + len(pieces)]
        pos += len(pieces)
        slack = total_frames - max(token_aligns)
        lookahead = rng.randint(0, min(max_lookahead, slack))
        words.append(MockWord(
            surface="".join(pieces), tokens=pieces,
            alignment_frames=token_aligns, lookahead_frames=lookahead))
    return MockScenario(
        words=words, noise=noise, frame_duration_ms=frame_duration_ms,
        feature_width=feature_width, compute_cost_ms=compute_cost_ms)


def synthesize_features(scenario: MockScenario, total_duration_ms: float,
                        origin_offset_ms: float = 0.0) -> FeatureSequence:
    """Placeholder frames for a scripted run; the mock never reads contents."""
    n = int(total_duration_ms // scenario.frame_duration_ms)
    return FeatureSequence(
        np.zeros((n, scenario.feature_width), dtype=np.float32),
        scenario.frame_duration_ms, origin_offset_ms)
