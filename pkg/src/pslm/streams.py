"""Multi-stream token layout: interleaving, alignment padding, example assembly.

A decode step ("frame") carries one text token plus one token per speech
stream. A flat speech sequence of length N is split round-robin over S
streams: with 1-based positions, stream s holds the tokens at positions
s, s+S, s+2S, ... Sequences whose length is not divisible by S are
right-padded with the speech pad id so the split is lossless.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import TextTooLongError
from .vocab import VocabSpec

TokenSeq = Sequence[int]


@dataclass(frozen=True)
class StreamLayoutReport:
    """How a flat speech sequence was distributed over streams."""

    original_speech_len: int
    per_stream_len: int
    padded_tail: int


@dataclass(frozen=True)
class MultiStreamSequence:
    """Frame-aligned text stream plus S speech streams of equal length."""

    text_stream: tuple[int, ...]
    speech_streams: tuple[tuple[int, ...], ...]
    prompt_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "text_stream", tuple(self.text_stream))
        object.__setattr__(
            self, "speech_streams", tuple(tuple(s) for s in self.speech_streams)
        )
        if len(self.speech_streams) < 1:
            raise ValueError("at least one speech stream is required")
        lengths = {len(s) for s in self.speech_streams} | {len(self.text_stream)}
        if len(lengths) != 1:
            raise ValueError(f"streams must have equal length, got {sorted(lengths)}")
        if not 0 <= self.prompt_len <= len(self.text_stream):
            raise ValueError("prompt_len out of range")

    @property
    def num_speech_streams(self) -> int:
        return len(self.speech_streams)

    def __len__(self) -> int:
        return len(self.text_stream)


def interleave_speech(
    tokens: TokenSeq, num_streams: int, vocab: VocabSpec
) -> tuple[list[list[int]], StreamLayoutReport]:
    """Split a flat speech sequence round-robin over `num_streams` streams.

    The sequence is right-padded with the speech pad id up to the next
    multiple of `num_streams`, so all streams end up with length
    ceil(N / num_streams). Input tokens must not contain the pad id.
    """
    if num_streams < 1:
        raise ValueError(f"num_streams must be >= 1, got {num_streams}")
    tokens = list(tokens)
    if any(t == vocab.speech_pad_id for t in tokens):
        raise ValueError("input speech tokens must not contain the pad id")
    n = len(tokens)
    per_stream = math.ceil(n / num_streams) if n else 0
    padded_tail = per_stream * num_streams - n
    padded = tokens + [vocab.speech_pad_id] * padded_tail
    streams = [padded[s::num_streams] for s in range(num_streams)]
    report = StreamLayoutReport(
        original_speech_len=n, per_stream_len=per_stream, padded_tail=padded_tail
    )
    return streams, report


def deinterleave_speech(streams: Sequence[TokenSeq], vocab: VocabSpec) -> list[int]:
    """Round-robin merge of speech streams; trailing pad tokens are stripped.

    Inverse of interleave_speech: deinterleave(interleave(x)) == x.
    """
    lengths = {len(s) for s in streams}
    if len(lengths) > 1:
        raise ValueError(f"streams must have equal length, got {sorted(lengths)}")
    merged: list[int] = []
    if streams and lengths != {0}:
        per_stream = lengths.pop()
        for i in range(per_stream):
            merged.extend(s[i] for s in streams)
    while merged and merged[-1] == vocab.speech_pad_id:
        merged.pop()
    return merged


def pad_text_to_length(text: TokenSeq, target_len: int, vocab: VocabSpec) -> list[int]:
    """Right-pad text with the text pad id up to `target_len`."""
    text = list(text)
    if len(text) > target_len:
        raise TextTooLongError(
            f"text of length {len(text)} does not fit target length {target_len}"
        )
    return text + [vocab.text_pad_id] * (target_len - len(text))


def build_pslm_prompt(
    tq: TokenSeq, sq: TokenSeq, num_streams: int, vocab: VocabSpec
) -> MultiStreamSequence:
    """Assemble the prompt region: interleaved SQ streams + right-padded TQ.

    Either of tq/sq may be empty (input-modality ablations); the missing side
    becomes all pad tokens. The text is padded to the *per-stream* speech
    length so frames stay aligned.
    """
    tq, sq = list(tq), list(sq)
    if sq:
        speech, _ = interleave_speech(sq, num_streams, vocab)
        region_len = len(speech[0])
    else:
        region_len = len(tq)
        speech = [[vocab.speech_pad_id] * region_len for _ in range(num_streams)]
    text = pad_text_to_length(tq, region_len, vocab)
    return MultiStreamSequence(
        text_stream=tuple(text),
        speech_streams=tuple(tuple(s) for s in speech),
        prompt_len=region_len,
    )


def build_pslm_example(
    tq: TokenSeq,
    ta: TokenSeq,
    sq: TokenSeq,
    sa: TokenSeq,
    num_streams: int,
    vocab: VocabSpec,
) -> MultiStreamSequence:
    """Assemble a full training example: prompt region followed by answer region.

    Answer region: SA is interleaved and every speech stream gets a trailing
    speech EOS; the text stream is TA + text EOS right-padded to match. The
    text EOS therefore always precedes any answer-region padding.
    """
    prompt = build_pslm_prompt(tq, sq, num_streams, vocab)
    ta, sa = list(ta), list(sa)
    sa_streams, _ = interleave_speech(sa, num_streams, vocab)
    answer_speech = [list(s) + [vocab.speech_eos_id] for s in sa_streams]
    answer_len = len(answer_speech[0])
    answer_text = list(ta) + [vocab.text_eos_id]
    if len(answer_text) > answer_len:
        raise TextTooLongError(
            f"text answer of length {len(ta)} does not fit the answer region "
            f"({answer_len - 1} frames before EOS)"
        )
    answer_text = pad_text_to_length(answer_text, answer_len, vocab)
    return MultiStreamSequence(
        text_stream=tuple(list(prompt.text_stream) + answer_text),
        speech_streams=tuple(
            tuple(list(p) + a) for p, a in zip(prompt.speech_streams, answer_speech)
        ),
        prompt_len=prompt.prompt_len,
    )


def build_com_prompt(
    sq: TokenSeq, vocab: VocabSpec, tq: TokenSeq | None = None
) -> list[int]:
    """Single-stream baseline prompt over the union id space.

    SQ followed by the text marker; when `tq` is given (gold/ASR input modes)
    the text question follows the marker and the model only has to produce
    the text answer onward.
    """
    out = [vocab.to_union_speech(t) for t in sq]
    out.append(vocab.union_text_marker_id)
    if tq is not None:
        out.extend(tq)
    return out


def build_com_example(
    tq: TokenSeq, ta: TokenSeq, sq: TokenSeq, sa: TokenSeq, vocab: VocabSpec
) -> list[int]:
    """Single-stream training layout: SQ, marker, TQ, TA, marker, SA, EOS."""
    out = build_com_prompt(sq, vocab, tq=tq)
    out.extend(ta)
    out.append(vocab.union_speech_marker_id)
    out.extend(vocab.to_union_speech(t) for t in sa)
    out.append(vocab.union_speech_eos_id)
    return out
