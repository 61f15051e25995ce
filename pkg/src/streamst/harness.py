"""Stream simulation: chunk a talk, drive the policy, log emissions.

The harness feeds fixed-duration chunks of the talk's feature sequence to the
policy and timestamps every emission with two clocks: source audio consumed
so far (the ideal clock) and cumulative computation time (added on top for
the computation-aware clock). After the last chunk a flush step runs with
f = 0 so every remaining token is emitted.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os.path
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mock import MockModel, synthesize_features
from .policy import HistoryState, PolicyConfig, initial_state, policy_step
from .types import (
    DEFAULT_FRAME_MS,
    FeatureSequence,
    InputError,
    ModelHandle,
    TokenRecord,
)


@dataclass
class Segment:
    offset_ms: float
    duration_ms: float
    reference_text: str

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise InputError("segment duration_ms must be positive")
        if self.offset_ms < 0:
            raise InputError("segment offset_ms must be non-negative")
        if not self.reference_text.strip():
            raise InputError("segment reference_text must be non-empty")

    @property
    def end_ms(self) -> float:
        return self.offset_ms + self.duration_ms

    def reference_words(self) -> list[str]:
        return self.reference_text.split()


@dataclass
class StreamManifest:
    talk_id: str
    total_duration_ms: float
    features: str  # "scenario" (synthesize for the mock) or a .npy path
    segments: list[Segment] = field(default_factory=list)
    frame_ms: float = DEFAULT_FRAME_MS

    def __post_init__(self) -> None:
        if self.total_duration_ms < 0:
            raise InputError("total_duration_ms must be non-negative")
        prev_end = 0.0
        for seg in self.segments:
            if seg.offset_ms < prev_end:
                raise InputError("segments must be sorted and non-overlapping")
            if seg.end_ms > self.total_duration_ms + 1e-6:
                raise InputError("segment extends past the stream end")
            prev_end = seg.end_ms


@dataclass
class WordPiece:
    surface: str
    is_word_final: bool


@dataclass
class EmissionEvent:
    step_index: int
    audio_consumed_ms: float
    cumulative_compute_ms: float
    words: list[WordPiece]


@dataclass
class EmissionLog:
    talk_id: str
    config: dict
    events: list[EmissionEvent] = field(default_factory=list)

    def full_text(self) -> str:
        """The hypothesis stream: pieces merged into words, space-joined."""
        words: list[str] = []
        buf = ""
        for event in self.events:
            for piece in event.words:
                buf += piece.surface
                if piece.is_word_final:
                    words.append(buf)
                    buf = ""
        if buf:
            words.append(buf)
        return " ".join(words)


def ca_delay(event: EmissionEvent) -> float:
    """Computation-aware delay: consumed audio plus elapsed computation."""
    return event.audio_consumed_ms + event.cumulative_compute_ms


def resolve_features(manifest: StreamManifest, model: ModelHandle) -> FeatureSequence:
    if manifest.features == "scenario":
        if not isinstance(model, MockModel):
            raise InputError(
                "manifest asks for synthesized features but the model has no scenario")
        return synthesize_features(model.scenario, manifest.total_duration_ms)
    if not manifest.features.endswith(".npy"):
        raise InputError(
            f"features must be 'scenario' or a .npy path, got {manifest.features!r}")
    frames = np.load(manifest.features)
    return FeatureSequence(frames, manifest.frame_ms, 0.0)


def run_stream(manifest: StreamManifest, model: ModelHandle, config: PolicyConfig,
               *, features: FeatureSequence | None = None,
               measure_wall_clock: bool = False) -> EmissionLog:
    """Simulate the full stream and return the emission log.

    Deterministic for a fixed manifest, mock model, and config when
    ``measure_wall_clock`` is off (the default): the computation clock then
    advances by each decode's reported simulated cost.
    """
    if features is None:
        features = resolve_features(manifest, model)
    frame_ms = features.frame_duration_ms
    if config.chunk_ms < frame_ms:
        raise InputError("chunk_ms must be at least one frame long")
    total_ms = manifest.total_duration_ms
    if features.duration_ms > total_ms + 1e-6:
        raise InputError("features extend past the declared stream duration")

    state = initial_state(features.width, frame_ms)
    num_chunks = math.ceil(total_ms / config.chunk_ms)
    emissions: list[tuple[int, float, float, list[TokenRecord]]] = []
    cumulative_compute = 0.0
    boundary = 0

    def run_step(step: int, chunk: FeatureSequence, consumed_ms: float,
                 f_override: int | None) -> HistoryState:
        nonlocal cumulative_compute
        t0 = time.perf_counter()
        try:
            result = policy_step(state, chunk, model, config, f_override=f_override)
        except Exception as exc:
            raise exc.__class__(f"step {step}: {exc}") from exc
        cost = ((time.perf_counter() - t0) * 1000.0 if measure_wall_clock
                else result.compute_cost_ms)
        cumulative_compute += cost
        if result.emitted_tokens:
            emissions.append((step, consumed_ms, cumulative_compute,
                              result.emitted_tokens))
        return result.new_state

    for step in range(num_chunks):
        consumed_ms = min((step + 1) * config.chunk_ms, total_ms)
        new_boundary = int(consumed_ms // frame_ms)
        chunk = FeatureSequence(features.frames[boundary:new_boundary],
                                frame_ms, boundary * frame_ms)
        boundary = new_boundary
        state = run_step(step, chunk, consumed_ms, None)

    flush_chunk = FeatureSequence.empty(features.width, frame_ms,
                                        boundary * frame_ms)
    state = run_step(num_chunks, flush_chunk, total_ms, 0)

    return EmissionLog(
        talk_id=manifest.talk_id,
        config=_config_echo(config),
        events=_build_events(emissions),
    )


def _config_echo(config: PolicyConfig) -> dict:
    return {
        "f": config.f,
        "chunk_ms": config.chunk_ms,
        "n_words": config.n_words,
        "history_mode": config.history_mode,
        "ms_per_word_baseline": config.ms_per_word_baseline,
        "attention_layer": config.attention_layer,
    }


def _build_events(
        emissions: list[tuple[int, float, float, list[TokenRecord]]]
) -> list[EmissionEvent]:
    """Turn per-step token emissions into events with word-final flags.

    A piece is word-final when the next emitted token (possibly in a later
    event) begins a new word, or when the stream ends.
    """
    events: list[EmissionEvent] = []
    for step, consumed, compute, tokens in emissions:
        pieces: list[WordPiece] = []
        for tok in tokens:
            if tok.begins_word or not pieces:
                pieces.append(WordPiece(tok.surface, True))
            else:
                pieces[-1] = WordPiece(pieces[-1].surface + tok.surface, True)
        events.append(EmissionEvent(step, consumed, compute, pieces))
    # Fix up finality across event boundaries: a trailing piece stays open if
    # the next event's first token continues the word.
    for i, event in enumerate(events[:-1]):
        next_first_begins = _first_token_begins_word(emissions[i + 1][3])
        if not next_first_begins:
            last = event.words[-1]
            event.words[-1] = WordPiece(last.surface, False)
    return events


def _first_token_begins_word(tokens: list[TokenRecord]) -> bool:
    return bool(tokens) and tokens[0].begins_word


# --- manifest and log I/O ---

def manifest_to_dict(manifest: StreamManifest) -> dict:
    return {
        "talk_id": manifest.talk_id,
        "duration_ms": manifest.total_duration_ms,
        "features": manifest.features,
        "frame_ms": manifest.frame_ms,
        "segments": [
            {"offset_ms": s.offset_ms, "duration_ms": s.duration_ms,
             "reference": s.reference_text}
            for s in manifest.segments
        ],
    }


def manifest_from_dict(data: dict) -> StreamManifest:
    try:
        return StreamManifest(
            talk_id=str(data["talk_id"]),
            total_duration_ms=float(data["duration_ms"]),
            features=str(data["features"]),
            frame_ms=float(data.get("frame_ms", DEFAULT_FRAME_MS)),
            segments=[
                Segment(float(s["offset_ms"]), float(s["duration_ms"]),
                        str(s["reference"]))
                for s in data.get("segments", [])
            ],
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed manifest: {exc}") from exc


def load_manifest(path: str | Path) -> StreamManifest:
    with open(path, encoding="utf-8") as fh:
        manifest = manifest_from_dict(json.load(fh))
    # A relative feature path inside the file is relative to the file itself,
    # so loading keeps working no matter where the process was started.
    if manifest.features != "scenario" and not os.path.isabs(manifest.features):
        manifest = dataclasses.replace(
            manifest, features=str(Path(path).resolve().parent / manifest.features))
    return manifest


def save_manifest(manifest: StreamManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_log(log: EmissionLog, path: str | Path) -> None:
    """JSON-lines: a header line with talk id and config echo, then one event
    per line. Compact separators keep runs byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"talk_id": log.talk_id, "config": log.config}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for event in log.events:
            fh.write(json.dumps({
                "step_index": event.step_index,
                "audio_consumed_ms": event.audio_consumed_ms,
                "cumulative_compute_ms": event.cumulative_compute_ms,
                "words": [{"surface": p.surface, "is_word_final": p.is_word_final}
                          for p in event.words],
            }, sort_keys=True, separators=(",", ":")) + "\n")


def read_log(path: str | Path) -> EmissionLog:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise InputError(f"empty log file: {path}")
    try:
        header = json.loads(lines[0])
        events = []
        for line in lines[1:]:
            data = json.loads(line)
            events.append(EmissionEvent(
                step_index=int(data["step_index"]),
                audio_consumed_ms=float(data["audio_consumed_ms"]),
                cumulative_compute_ms=float(data["cumulative_compute_ms"]),
                words=[WordPiece(str(w["surface"]), bool(w["is_word_final"]))
                       for w in data["words"]],
            ))
        return EmissionLog(str(header["talk_id"]), dict(header["config"]), events)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed log file {path}: {exc}") from exc
