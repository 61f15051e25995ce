"""Latency and quality metrics for unsegmented hypothesis streams.

The stream-level latency score works in three stages: detokenize the emission
log into words with their two delay clocks, split the word stream against the
reference segments with a word-level edit-distance segmenter, then average the
length-adaptive lagging of each segment.
"""

from __future__ import annotations

from dataclasses import dataclass

from .harness import EmissionLog, StreamManifest, ca_delay
from .types import InputError

PUNCTUATION_MARKS = (".", "!", "?", ":", ";", ",")

_STRIP_TABLE = str.maketrans("", "", "".join(PUNCTUATION_MARKS))


@dataclass(frozen=True)
class DelayedWord:
    surface: str
    nca_delay_ms: float
    ca_delay_ms: float

    def __post_init__(self) -> None:
        if self.nca_delay_ms < 0:
            raise InputError("nca_delay_ms must be non-negative")
        if self.ca_delay_ms < self.nca_delay_ms:
            raise InputError("ca_delay_ms must be >= nca_delay_ms")

    def delay(self, mode: str) -> float:
        if mode == "nca":
            return self.nca_delay_ms
        if mode == "ca":
            return self.ca_delay_ms
        raise InputError(f"unknown delay mode: {mode!r}")


@dataclass(frozen=True)
class SegmentScore:
    segment_index: int
    laal_nca_ms: float
    laal_ca_ms: float
    hyp_word_count: int
    ref_word_count: int


def delayed_words(log: EmissionLog) -> list[DelayedWord]:
    """Merge logged word pieces into whole words, stamped with the clocks of
    the event that completed each word."""
    words: list[DelayedWord] = []
    buf = ""
    for event in log.events:
        for piece in event.words:
            buf += piece.surface
            if piece.is_word_final:
                words.append(DelayedWord(buf, event.audio_consumed_ms,
                                         ca_delay(event)))
                buf = ""
    if buf:  # a log truncated mid-word: close it at the last event's clocks
        last = log.events[-1]
        words.append(DelayedWord(buf, last.audio_consumed_ms, ca_delay(last)))
    return words


def laal(delays: list[float], total_duration_ms: float, ref_len: int,
         hyp_len: int | None = None) -> float:
    """Length-adaptive average lagging of one segment, in ms.

    The oracle delay for word i is (i-1) * duration / max(ref_len, hyp_len);
    averaging stops at the first word whose delay reaches the segment end.
    """
    if total_duration_ms <= 0:
        raise InputError("total_duration_ms must be positive")
    if hyp_len is None:
        hyp_len = len(delays)
    elif hyp_len != len(delays):
        raise InputError("hyp_len must equal the number of delays")
    if not delays:
        return 0.0
    rate = total_duration_ms / max(ref_len, hyp_len)
    total = 0.0
    count = 0
    for i, d in enumerate(delays):
        total += d - i * rate
        count += 1
        if d >= total_duration_ms:
            break
    return total / count


def normalize_word(word: str) -> str:
    return word.lower().translate(_STRIP_TABLE)


def _levenshtein_row(hyp: list[str], ref: list[str]) -> list[int]:
    """Distances lev(hyp[:t], ref) for every prefix length t of hyp."""
    m = len(ref)
    prev = list(range(m + 1))
    out = [m]
    for h in hyp:
        cur = [prev[0] + 1]
        for j, r in enumerate(ref, start=1):
            cur.append(min(cur[j - 1] + 1,
                           prev[j] + 1,
                           prev[j - 1] + (h != r)))
        prev = cur
        out.append(prev[m])
    return out


def wer(hyp_words: list[str], ref_words: list[str]) -> float:
    if not ref_words:
        raise InputError("reference must be non-empty for WER")
    return _levenshtein_row(list(hyp_words), list(ref_words))[-1] / len(ref_words)


def resegment(hyp: list[DelayedWord],
              refs: list[list[str]]) -> list[list[DelayedWord]]:
    """Split the hypothesis stream into one chunk per reference segment.

    Boundaries minimize the summed word-level edit distance between each
    chunk and its reference (words compared lowercased with punctuation
    stripped); among minimizers the earliest boundaries win. Words keep
    their delays; none are lost or duplicated.
    """
    if not refs:
        raise InputError("refs must be non-empty")
    n = len(hyp)
    norm_hyp = [normalize_word(w.surface) for w in hyp]
    norm_refs = [[normalize_word(w) for w in ref] for ref in refs]

    inf = float("inf")
    # best[k][i]: minimal cost of aligning hyp[i:] against refs[k:].
    best: list[list[float]] = [[inf] * (n + 1) for _ in range(len(refs) + 1)]
    best[len(refs)][n] = 0.0
    # rows[k][i][t] = lev(hyp[i:i+t], refs[k])
    rows: dict[int, list[list[int]]] = {}
    for k in range(len(refs) - 1, -1, -1):
        rows[k] = [_levenshtein_row(norm_hyp[i:], norm_refs[k])
                   for i in range(n + 1)]
        for i in range(n, -1, -1):
            best[k][i] = min(rows[k][i][j - i] + best[k + 1][j]
                             for j in range(i, n + 1))

    segments: list[list[DelayedWord]] = []
    i = 0
    for k in range(len(refs)):
        for j in range(i, n + 1):
            if rows[k][i][j - i] + best[k + 1][j] == best[k][i]:
                segments.append(hyp[i:j])
                i = j
                break
    return segments


def score_segments(log: EmissionLog, manifest: StreamManifest) -> list[SegmentScore]:
    """Per-segment LAAL on both clocks, with delays made segment-relative
    (offset subtracted, never clamped)."""
    if log.talk_id != manifest.talk_id:
        raise InputError(
            f"talk id mismatch: log {log.talk_id!r} vs manifest {manifest.talk_id!r}")
    words = delayed_words(log)
    refs = [seg.reference_words() for seg in manifest.segments]
    chunks = resegment(words, refs)
    scores = []
    for idx, (seg, chunk) in enumerate(zip(manifest.segments, chunks)):
        nca = laal([w.nca_delay_ms - seg.offset_ms for w in chunk],
                   seg.duration_ms, len(refs[idx]))
        ca = laal([w.ca_delay_ms - seg.offset_ms for w in chunk],
                  seg.duration_ms, len(refs[idx]))
        scores.append(SegmentScore(idx, nca, ca, len(chunk), len(refs[idx])))
    return scores


def stream_laal(log: EmissionLog, manifest: StreamManifest, mode: str) -> float:
    """Unweighted mean of per-segment LAAL over every segment of the stream.

    Segments whose resegmented hypothesis is empty contribute 0 but still
    count in the denominator, keeping the average defined.
    """
    if mode not in ("nca", "ca"):
        raise InputError(f"unknown delay mode: {mode!r}")
    scores = score_segments(log, manifest)
    if not scores:
        raise InputError("manifest has no segments")
    total = 0.0
    for score in scores:
        if score.hyp_word_count == 0:
            continue
        total += score.laal_nca_ms if mode == "nca" else score.laal_ca_ms
    return total / len(scores)


def punctuation_profile(text: str) -> dict[str, int]:
    return {mark: text.count(mark) for mark in PUNCTUATION_MARKS}


def quality_latency_ratio(bleu: float, nca_s: float, ca_s: float) -> float:
    if nca_s + ca_s <= 0:
        raise InputError("latency sum must be positive")
    return bleu / (nca_s + ca_s)


# --- report output ---

REPORT_COLUMNS = ("talk_id", "mode", "segment_index", "stream_laal_ms",
                  "hyp_word_count", "ref_word_count")


def write_score_report(path, talk_id: str, totals: dict[str, float],
                       segment_scores: list[SegmentScore] | None = None) -> None:
    """TSV report: one aggregate row per mode (segment_index column "all"),
    optional per-segment detail rows."""
    lines = ["\t".join(REPORT_COLUMNS)]
    for mode, value in totals.items():
        lines.append("\t".join([talk_id, mode, "all", repr(float(value)), "", ""]))
    for score in segment_scores or []:
        for mode, value in (("nca", score.laal_nca_ms), ("ca", score.laal_ca_ms)):
            lines.append("\t".join([
                talk_id, mode, str(score.segment_index), repr(float(value)),
                str(score.hyp_word_count), str(score.ref_word_count),
            ]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_segmented_hypotheses(path, chunks: list[list[DelayedWord]]) -> None:
    """One segment per line, un-normalized surfaces, for external scoring."""
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(" ".join(w.surface for w in chunk) + "\n")
