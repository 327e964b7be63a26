"""Streaming detokenizer scheduling and a toy waveform synthesizer.

The detokenizer is windowed: the waveform fragment for token i depends only
on tokens with indices [i - R//2, i + R//2] (clamped at sequence edges),
where R is the receptive field. Fragment i can therefore be emitted as soon
as min(i + R//2 + 1, N) tokens are available, and the first fragment after
n_offset(R) = R//2 + 1 tokens. Actual neural vocoding is replaced by a
deterministic hash-seeded oscillator; only scheduling and window locality
are modeled faithfully.
"""

import wave
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

AUDIO_SAMPLE_RATE = 24_000

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class VocoderSpec:
    """Receptive field (tokens) and upsampling factor (samples per token)."""

    receptive_field: int = 26
    upsample: int = 480  # 24 kHz audio at 50 tokens/s

    def __post_init__(self):
        if self.receptive_field < 1:
            raise ValueError("receptive_field must be >= 1")
        if self.upsample < 1:
            raise ValueError("upsample must be >= 1")


@dataclass(frozen=True)
class FragmentPlan:
    fragment_index: int
    window: tuple[int, int]  # inclusive token index interval
    ready_after: int  # tokens that must be decoded before emission
    sample_range: tuple[int, int]  # [start, end) in output samples


@dataclass(frozen=True)
class Fragment:
    index: int
    samples: np.ndarray
    emitted_after: int  # tokens consumed when this fragment was produced


def n_offset(receptive_field: int) -> int:
    """Tokens that must be decoded before the first fragment: R//2 + 1."""
    if receptive_field < 1:
        raise ValueError("receptive_field must be >= 1")
    return receptive_field // 2 + 1


def fragment_schedule(num_tokens: int, spec: VocoderSpec) -> list[FragmentPlan]:
    """Emission-ordered plans for a sequence of `num_tokens` speech tokens."""
    if num_tokens < 1:
        raise ValueError("num_tokens must be >= 1")
    half = spec.receptive_field // 2
    plans = []
    for i in range(num_tokens):
        plans.append(
            FragmentPlan(
                fragment_index=i,
                window=(max(0, i - half), min(num_tokens - 1, i + half)),
                ready_after=min(i + half + 1, num_tokens),
                sample_range=(i * spec.upsample, (i + 1) * spec.upsample),
            )
        )
    return plans


def _mix(value: int) -> int:
    # splitmix64 finalizer; fixed so waveforms are stable across runs
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def toy_waveform(window_tokens: Sequence[int], center_index: int, upsample: int) -> np.ndarray:
    """One fragment of `upsample` samples from the tokens in its window.

    A fixed oscillator per token (frequency and phase derived from a hash of
    the token id), blended with weights that decay away from the window
    center. Pure function of the window contents; output lies in [-1, 1].
    """
    if not 0 <= center_index < len(window_tokens):
        raise ValueError("center_index outside the window")
    n = np.arange(upsample, dtype=np.float64)
    acc = np.zeros(upsample, dtype=np.float64)
    total_weight = 0.0
    for j, token in enumerate(window_tokens):
        h = _mix(int(token))
        cycles = 1 + (h >> 8) % 16
        phase = 2.0 * np.pi * (((h >> 24) & 0xFFFFF) / float(1 << 20))
        weight = 1.0 / (1.0 + abs(j - center_index))
        acc += weight * np.sin(2.0 * np.pi * cycles * n / upsample + phase)
        total_weight += weight
    return acc / total_weight


def synthesize_offline(tokens: Sequence[int], spec: VocoderSpec) -> np.ndarray:
    """Full-sequence synthesis: concatenation of every fragment's samples."""
    tokens = list(tokens)
    if not tokens:
        return np.zeros(0, dtype=np.float64)
    pieces = []
    for plan in fragment_schedule(len(tokens), spec):
        lo, hi = plan.window
        pieces.append(
            toy_waveform(tokens[lo : hi + 1], plan.fragment_index - lo, spec.upsample)
        )
    return np.concatenate(pieces)


class StreamingSynthesizer:
    """Emits waveform fragments as soon as their token window is available.

    feed() returns the fragments unlocked by each new token; finish() flushes
    the tail fragments whose windows clamp at the sequence end. The
    concatenation of all emitted fragments is identical to offline synthesis.
    """

    def __init__(self, spec: VocoderSpec):
        self.spec = spec
        self._tokens: list[int] = []
        self._next_fragment = 0
        self._finished = False

    def _emit(self, index: int, num_tokens: int) -> Fragment:
        half = self.spec.receptive_field // 2
        lo = max(0, index - half)
        hi = min(num_tokens - 1, index + half)
        samples = toy_waveform(self._tokens[lo : hi + 1], index - lo, self.spec.upsample)
        return Fragment(index=index, samples=samples, emitted_after=len(self._tokens))

    def feed(self, token: int) -> list[Fragment]:
        if self._finished:
            raise RuntimeError("synthesizer already finished")
        self._tokens.append(token)
        half = self.spec.receptive_field // 2
        out = []
        # fragment i is complete once token i + half has arrived
        while self._next_fragment + half + 1 <= len(self._tokens):
            out.append(self._emit(self._next_fragment, len(self._tokens)))
            self._next_fragment += 1
        return out

    def finish(self) -> list[Fragment]:
        if self._finished:
            return []
        self._finished = True
        n = len(self._tokens)
        out = []
        while self._next_fragment < n:
            out.append(self._emit(self._next_fragment, n))
            self._next_fragment += 1
        return out


def streaming_synthesize(tokens: Iterable[int], spec: VocoderSpec) -> Iterator[Fragment]:
    """Generator form of StreamingSynthesizer over an incremental token source."""
    synth = StreamingSynthesizer(spec)
    for token in tokens:
        yield from synth.feed(token)
    yield from synth.finish()


def write_wav(path, samples: np.ndarray, sample_rate: int = AUDIO_SAMPLE_RATE) -> None:
    """Dump samples in [-1, 1] as 16-bit little-endian mono WAV."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())
