"""Character error rate, failure counting, and the evaluation harness.

CER here measures the alignment between a decode's text answer and the
"transcription" of its speech answer, where transcription is the exact
inverse of the toy TTS (unmatched speech stretches surface as sentinel
symbols so they cost edits). Failures are counted over all samples; CER is
aggregated over the non-failed ones at the corpus level (total edits over
total reference length).
"""

import json
from dataclasses import dataclass
from typing import Sequence

from .corpus import QAPair, ToyTTS
from .decoding import (
    FAILURE_NO_EOS,
    FAILURE_WRONG_MODALITY,
    DecodeOutcome,
    SamplingParams,
    decode_com,
    decode_pslm,
)
from .model import StreamLM
from .streams import build_com_prompt, build_pslm_prompt

UNMATCHED_SENTINEL = -1


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (x != y),
                )
            )
        previous = current
    return previous[len(b)]


def cer(reference: Sequence, hypothesis: Sequence) -> float:
    """Edit distance over reference length, as a percentage."""
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    return 100.0 * edit_distance(reference, hypothesis) / len(reference)


@dataclass(frozen=True)
class FailureStats:
    n_samples: int
    n_no_eos: int
    n_wrong_modality: int

    @property
    def n_failures(self) -> int:
        return self.n_no_eos + self.n_wrong_modality

    @property
    def failure_rate(self) -> float:
        return 100.0 * self.n_failures / self.n_samples

    @property
    def counts(self) -> dict:
        return {
            FAILURE_NO_EOS: self.n_no_eos,
            FAILURE_WRONG_MODALITY: self.n_wrong_modality,
        }


def failure_rate(outcomes: Sequence[DecodeOutcome]) -> FailureStats:
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    return FailureStats(
        n_samples=len(outcomes),
        n_no_eos=sum(o.failure == FAILURE_NO_EOS for o in outcomes),
        n_wrong_modality=sum(o.failure == FAILURE_WRONG_MODALITY for o in outcomes),
    )


@dataclass(frozen=True)
class EvalReport:
    n_samples: int
    n_no_eos: int
    n_wrong_modality: int
    cer: float
    n_cer_samples: int  # non-failed samples entering the CER aggregate

    @property
    def n_failures(self) -> int:
        return self.n_no_eos + self.n_wrong_modality

    @property
    def failure_rate(self) -> float:
        return 100.0 * self.n_failures / self.n_samples

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_samples": self.n_samples,
                "failure_rate": self.failure_rate,
                "failures": {
                    FAILURE_NO_EOS: self.n_no_eos,
                    FAILURE_WRONG_MODALITY: self.n_wrong_modality,
                },
                "cer": self.cer,
                "n_cer_samples": self.n_cer_samples,
            },
            sort_keys=True,
        )

    def csv_row(self) -> str:
        return (
            f"{self.n_samples},{self.failure_rate:.2f},{self.n_no_eos},"
            f"{self.n_wrong_modality},{self.cer:.2f},{self.n_cer_samples}"
        )

    CSV_HEADER = "n_samples,failure_rate,n_no_eos,n_wrong_modality,cer,n_cer_samples"


def transcribe(tts: ToyTTS, speech: Sequence[int]) -> list[int]:
    """Inverse-TTS transcription with one sentinel symbol per unmatched run."""
    return [
        event[1] if event[0] == "match" else UNMATCHED_SENTINEL
        for event in tts.walk(speech)
    ]


def evaluate(
    model: StreamLM,
    pairs: Sequence[QAPair],
    tts: ToyTTS,
    params: SamplingParams,
    mode: str = "pslm",
    input_mode: str = "gold",
) -> tuple[EvalReport, list[DecodeOutcome]]:
    """Decode every pair's prompt and score alignment + failures.

    In this toy setting ASR is exact, so "gold" and "asr" inputs build the
    same prompt; "sq" drops the text question (single-stream mode only).
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    vocab = model.config.vocab
    outcomes = []
    total_edits = 0
    total_ref = 0
    n_cer = 0
    for i, pair in enumerate(pairs):
        run = SamplingParams(
            temperature=params.temperature,
            top_k=params.top_k,
            top_p=params.top_p,
            seed=params.seed + i,
            max_total_len=params.max_total_len,
        )
        if mode == "pslm":
            prompt = build_pslm_prompt(
                pair.tq, pair.sq, model.config.num_speech_streams, vocab
            )
            outcome = decode_pslm(model, prompt, run)
        elif mode == "com":
            tq = None if input_mode == "sq" else pair.tq
            prompt = build_com_prompt(pair.sq, vocab, tq=tq)
            outcome = decode_com(model, prompt, run, gold_tq=tq is not None)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        outcomes.append(outcome)
        if outcome.failed:
            continue
        reference = list(outcome.text_answer)
        hypothesis = transcribe(tts, outcome.speech_answer)
        total_edits += edit_distance(reference, hypothesis)
        total_ref += len(reference)
        n_cer += 1
    stats = failure_rate(outcomes)
    report = EvalReport(
        n_samples=stats.n_samples,
        n_no_eos=stats.n_no_eos,
        n_wrong_modality=stats.n_wrong_modality,
        cer=100.0 * total_edits / max(total_ref, 1),
        n_cer_samples=n_cer,
    )
    return report, outcomes
