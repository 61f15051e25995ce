"""Streaming speech-to-text-translation policy engine and latency toolkit."""

from .harness import EmissionEvent, EmissionLog, Segment, StreamManifest, run_stream
from .metrics import DelayedWord, SegmentScore, laal, resegment, stream_laal, wer
from .mock import MockModel, MockScenario, MockWord, generate_scenario
from .policy import HistoryState, PolicyConfig, StepResult, policy_step
from .types import (
    AttentionMatrix,
    DecodeRequest,
    DecodeResult,
    FeatureSequence,
    InputError,
    ScenarioError,
    TokenRecord,
    TransportError,
    decode,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMatrix",
    "DecodeRequest",
    "DecodeResult",
    "DelayedWord",
    "EmissionEvent",
    "EmissionLog",
    "FeatureSequence",
    "HistoryState",
    "InputError",
    "MockModel",
    "MockScenario",
    "MockWord",
    "PolicyConfig",
    "ScenarioError",
    "Segment",
    "SegmentScore",
    "StepResult",
    "StreamManifest",
    "TokenRecord",
    "TransportError",
    "decode",
    "generate_scenario",
    "laal",
    "policy_step",
    "resegment",
    "run_stream",
    "stream_laal",
    "wer",
]
