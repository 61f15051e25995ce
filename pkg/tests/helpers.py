"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from streamst.mock import MockScenario, MockWord
from streamst.types import FeatureSequence, TokenRecord


def toks(spec: str, start_id: int = 0) -> list[TokenRecord]:
    """Build token records from a compact spec: words are space-separated,
    subword pieces inside a word are joined with '+'.

    "hel+lo world." -> [hel (begins), lo, world. (begins)]
    """
    records = []
    for word in spec.split():
        for i, piece in enumerate(word.split("+")):
            records.append(TokenRecord(
                token_id=start_id + len(records),
                surface=piece,
                begins_word=(i == 0),
            ))
    return records


def frames(n: int, width: int = 8, frame_ms: float = 40.0,
           origin_ms: float = 0.0) -> FeatureSequence:
    return FeatureSequence(np.zeros((n, width), dtype=np.float32),
                           frame_ms, origin_ms)


def scripted(words: list[tuple], **kwargs) -> MockScenario:
    """Scenario from (surface, pieces, alignment_frames, lookahead) tuples."""
    mock_words = [
        MockWord(surface=surface, tokens=list(pieces),
                 alignment_frames=list(aligns), lookahead_frames=lookahead)
        for surface, pieces, aligns, lookahead in words
    ]
    return MockScenario(words=mock_words, **kwargs)
