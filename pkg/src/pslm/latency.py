"""Closed-form latency models for the sequential and parallel pipelines.

Latency is the delay between the end of the user's utterance and the first
audio fragment. The sequential (chain-of-modality) pipeline must decode the
text question/answer before any speech token; the parallel pipeline starts
emitting speech tokens immediately, so its latency is independent of the
text answer length and shrinks with the number of speech streams.
"""

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .vocoder import n_offset

COM_INPUT_MODES = ("sq", "asr", "gold")


@dataclass(frozen=True)
class LatencyParams:
    """Pipeline stage delays (seconds) and decode throughput."""

    d_s2t: float = 0.05  # speech tokenization
    d_sq: float = 0.05  # LM prefill of the speech question
    d_asr: float = 0.2  # external ASR
    d_t2s: float = 0.01  # speech detokenization
    tps: float = 50.0  # decoded tokens per second per stream
    num_speech_streams: int = 1
    receptive_field: int = 26

    def __post_init__(self):
        if min(self.d_s2t, self.d_sq, self.d_asr, self.d_t2s) < 0:
            raise ValueError("stage delays must be >= 0")
        if self.tps <= 0:
            raise ValueError("tps must be > 0")
        if self.num_speech_streams < 1:
            raise ValueError("num_speech_streams must be >= 1")


@dataclass(frozen=True)
class LengthRecord:
    """Per-sample token counts used by the dataset-level simulation."""

    n_tq: int
    n_ta: int
    n_sq: int = 0
    n_sa: int = 0

    def __post_init__(self):
        if min(self.n_tq, self.n_ta, self.n_sq, self.n_sa) < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class MethodSpec:
    """A latency-table row: pipeline kind, input mode, stream count."""

    kind: str  # "com" | "pslm"
    input_mode: str  # "sq" | "asr" | "gold"
    num_speech_streams: int = 1

    def __post_init__(self):
        if self.kind not in ("com", "pslm"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.input_mode not in COM_INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.kind == "pslm" and self.input_mode == "sq":
            raise ValueError("the parallel pipeline always receives a text question")
        if self.num_speech_streams < 1:
            raise ValueError("num_speech_streams must be >= 1")

    @property
    def label(self) -> str:
        streams = f"-{self.num_speech_streams}x" if self.num_speech_streams > 1 else ""
        return f"{self.kind}{streams}-{self.input_mode}"

    @classmethod
    def parse(cls, label: str) -> "MethodSpec":
        parts = label.lower().split("-")
        if len(parts) == 3 and parts[1].endswith("x") and parts[1][:-1].isdigit():
            return cls(parts[0], parts[2], int(parts[1][:-1]))
        if len(parts) == 2:
            return cls(parts[0], parts[1], 1)
        raise ValueError(f"cannot parse method label {label!r}")


def latency_com(rec: LengthRecord, params: LatencyParams, input_mode: str) -> float:
    """Sequential pipeline latency for one sample.

    The decode phase covers the text answer plus the first-fragment token
    offset; in "sq" mode the model additionally decodes the text question.
    "asr" mode adds the ASR delay on top of tokenization and prefill.
    """
    if input_mode not in COM_INPUT_MODES:
        raise ValueError(f"unknown input mode {input_mode!r}")
    n_dec = n_offset(params.receptive_field) + rec.n_ta
    if input_mode == "sq":
        n_dec += rec.n_tq
    total = params.d_s2t + params.d_sq + n_dec / params.tps + params.d_t2s
    if input_mode == "asr":
        total += params.d_asr
    return total


def latency_pslm(params: LatencyParams, asr: bool) -> float:
    """Parallel pipeline latency; independent of answer lengths.

    Speech tokenization overlaps ASR so only the ASR delay (when TQ must be
    transcribed) appears; S streams decode the first-fragment offset S times
    faster.
    """
    offset = n_offset(params.receptive_field)
    total = params.d_sq + offset / (params.tps * params.num_speech_streams) + params.d_t2s
    if asr:
        total += params.d_asr
    return total


def method_latency(method: MethodSpec, rec: LengthRecord, params: LatencyParams) -> float:
    p = params
    if method.num_speech_streams != params.num_speech_streams:
        p = replace(params, num_speech_streams=method.num_speech_streams)
    if method.kind == "com":
        return latency_com(rec, p, method.input_mode)
    return latency_pslm(p, asr=method.input_mode == "asr")


def simulate_dataset(
    records: Sequence[LengthRecord], params: LatencyParams, method: MethodSpec
) -> dict:
    """Per-record latencies plus their median (lower-middle for even counts)."""
    if not records:
        raise ValueError("records must be non-empty")
    values = [method_latency(method, rec, params) for rec in records]
    median = sorted(values)[(len(values) - 1) // 2]
    return {"median": median, "all": values}


def latency_curve(
    n_ta_values: Iterable[int],
    params: LatencyParams,
    methods: Sequence[MethodSpec],
    n_tq: int = 0,
) -> list[tuple[str, int, float]]:
    """(method label, N_TA, seconds) rows for latency-vs-answer-length curves."""
    n_ta_values = list(n_ta_values)
    if not n_ta_values or not methods:
        raise ValueError("need at least one N_TA value and one method")
    rows = []
    for method in methods:
        for n_ta in n_ta_values:
            rec = LengthRecord(n_tq=n_tq, n_ta=n_ta)
            rows.append((method.label, n_ta, method_latency(method, rec, params)))
    return rows


def round_report(seconds: float) -> float:
    """Reporting-layer rounding; internal values stay full precision."""
    return round(seconds, 2)


def write_latency_table_csv(path, rows: Sequence[tuple[str, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "latency_s"])
        for label, seconds in rows:
            w.writerow([label, f"{round_report(seconds):.2f}"])


def write_latency_curve_csv(path, rows: Sequence[tuple[str, int, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "n_ta", "latency_s"])
        for label, n_ta, seconds in rows:
            w.writerow([label, n_ta, str(seconds)])
