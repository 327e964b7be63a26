"""Sampling and autoregressive decoding for both pipeline styles.

Multi-stream decoding samples one text token and S speech tokens per frame,
all from the same forward pass, so the streams' distributions never depend
on each other's sample at that frame. The single-stream baseline walks the
union vocabulary and tracks which segment (text or speech answer) it is in;
a token of the wrong modality for the current segment is a failure. Both
stop either at EOS or at a hard length cap; hitting the cap without EOS is
the other failure kind.
"""

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import StreamLM
from .streams import MultiStreamSequence
from .vocab import VocabSpec

GREEDY_TEMPERATURE = 1e-6

FAILURE_NO_EOS = "no-eos"
FAILURE_WRONG_MODALITY = "wrong-modality"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.8
    top_k: int = 60
    top_p: float = 0.8
    seed: int = 0
    max_total_len: int = 2048

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_total_len < 1:
            raise ValueError("max_total_len must be >= 1")


@dataclass(frozen=True)
class DecodeOutcome:
    text_answer: tuple[int, ...]
    speech_answer: tuple[int, ...]
    frames_generated: int
    failure: str | None = None
    mode: str = "pslm"

    def __post_init__(self):
        object.__setattr__(self, "text_answer", tuple(self.text_answer))
        object.__setattr__(self, "speech_answer", tuple(self.speech_answer))

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "mode": self.mode,
                "text_answer": list(self.text_answer),
                "speech_answer": list(self.speech_answer),
                "frames_generated": self.frames_generated,
                "failure": self.failure,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json_line(cls, line: str) -> "DecodeOutcome":
        d = json.loads(line)
        return cls(
            text_answer=tuple(d["text_answer"]),
            speech_answer=tuple(d["speech_answer"]),
            frames_generated=d["frames_generated"],
            failure=d["failure"],
            mode=d["mode"],
        )


def filtered_distribution(
    logits, temperature: float, top_k: int, top_p: float
) -> tuple[np.ndarray, np.ndarray]:
    """Support ids and renormalized probabilities after top-k then top-p.

    Softmax with temperature; keep the k most probable tokens (ties broken
    toward the smallest id); then keep the shortest prefix of those whose
    cumulative (pre-renormalization) probability reaches top_p; renormalize.
    """
    if hasattr(logits, "detach"):
        logits = logits.detach().cpu().numpy()
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be one-dimensional")
    finite = np.isfinite(z)
    if not finite.any():
        raise ValueError("all logits are -inf")
    if np.isnan(z).any() or np.isposinf(z).any():
        raise ValueError("logits must not contain NaN or +inf")
    if temperature < GREEDY_TEMPERATURE:
        best = int(np.argmax(z))
        return np.array([best]), np.array([1.0])
    z = z / temperature
    z = z - z[finite].max()
    p = np.exp(z, where=finite, out=np.zeros_like(z))
    p = p / p.sum()
    order = np.lexsort((np.arange(p.shape[0]), -p))
    kept = order[: min(top_k, p.shape[0])]
    cumulative = np.cumsum(p[kept])
    cut = int(np.searchsorted(cumulative, top_p, side="left"))
    kept = kept[: cut + 1] if cut < kept.shape[0] else kept
    probs = p[kept]
    return kept, probs / probs.sum()


def sample_token(logits, params: SamplingParams, rng: np.random.Generator) -> int:
    ids, probs = filtered_distribution(
        logits, params.temperature, params.top_k, params.top_p
    )
    if ids.shape[0] == 1:
        return int(ids[0])
    cumulative = np.cumsum(probs)
    pick = int(np.searchsorted(cumulative, rng.random(), side="right"))
    return int(ids[min(pick, ids.shape[0] - 1)])


def _strip(tokens, *drop) -> list[int]:
    return [t for t in tokens if t not in drop]


def decode_pslm(
    model: StreamLM, prompt: MultiStreamSequence, params: SamplingParams
) -> DecodeOutcome:
    """Frame-parallel sampling until every speech stream has emitted EOS.

    The text stream is forced to pad once its EOS was sampled, and each
    speech stream is forced to pad after its own EOS. Hitting the cap first
    is recorded as a no-EOS failure, never raised.
    """
    vocab = model.config.vocab
    num_streams = model.config.num_speech_streams
    cap = min(params.max_total_len, model.config.max_context)
    if len(prompt) > cap:
        raise ValueError(f"prompt of {len(prompt)} frames exceeds the cap {cap}")
    rng = np.random.default_rng(params.seed)
    session = model.session()
    logits = session.prefill(prompt)
    text_done = False
    stream_done = [False] * num_streams
    gen_text: list[int] = []
    gen_speech: list[list[int]] = [[] for _ in range(num_streams)]
    total = len(prompt)
    while total < cap and not all(stream_done):
        if text_done:
            text_token = vocab.text_pad_id
        else:
            text_token = sample_token(logits.text_logits, params, rng)
            text_done = text_token == vocab.text_eos_id
        speech_tokens = []
        for s in range(num_streams):
            if stream_done[s]:
                token = vocab.speech_pad_id
            else:
                token = sample_token(logits.speech_logits[s], params, rng)
                stream_done[s] = token == vocab.speech_eos_id
            speech_tokens.append(token)
        gen_text.append(text_token)
        for s, token in enumerate(speech_tokens):
            gen_speech[s].append(token)
        total += 1
        if total < cap and not all(stream_done):
            logits = session.step(text_token, speech_tokens)
    merged: list[int] = []
    for i in range(len(gen_text)):
        merged.extend(stream[i] for stream in gen_speech)
    return DecodeOutcome(
        text_answer=_strip(gen_text, vocab.text_pad_id, vocab.text_eos_id),
        speech_answer=_strip(merged, vocab.speech_pad_id, vocab.speech_eos_id),
        frames_generated=total - len(prompt),
        failure=None if all(stream_done) else FAILURE_NO_EOS,
        mode="pslm",
    )


SEGMENT_SPEECH_QUESTION = "speech-question"
SEGMENT_TEXT = "text"
SEGMENT_SPEECH_ANSWER = "speech-answer"


@dataclass
class ComSegmenter:
    """Tracks which segment a single-stream sequence is in, token by token.

    Marker tokens switch segments; a content token whose modality does not
    match the current segment is a wrong-modality event. Speech EOS inside
    the answer segment ends the sequence.
    """

    vocab: VocabSpec
    segment: str = SEGMENT_SPEECH_QUESTION
    text_tokens: list[int] = field(default_factory=list)
    speech_tokens: list[int] = field(default_factory=list)

    def scan_prompt(self, tokens: Sequence[int]) -> None:
        """Advance segment state over prompt tokens without collecting them."""
        for token in tokens:
            if token == self.vocab.union_text_marker_id:
                self.segment = SEGMENT_TEXT
            elif token == self.vocab.union_speech_marker_id:
                self.segment = SEGMENT_SPEECH_ANSWER

    def push(self, token: int) -> str:
        """Returns "ok", "eos", or "wrong-modality"."""
        is_text = self.vocab.is_text_union_id(token)
        if self.segment == SEGMENT_SPEECH_QUESTION:
            if token == self.vocab.union_text_marker_id:
                self.segment = SEGMENT_TEXT
                return "ok"
            return "ok" if not is_text else FAILURE_WRONG_MODALITY
        if self.segment == SEGMENT_TEXT:
            if token == self.vocab.union_speech_marker_id:
                self.segment = SEGMENT_SPEECH_ANSWER
                return "ok"
            if is_text:
                self.text_tokens.append(token)
                return "ok"
            return FAILURE_WRONG_MODALITY
        # speech answer segment
        if token == self.vocab.union_speech_eos_id:
            return "eos"
        if is_text:
            return FAILURE_WRONG_MODALITY
        self.speech_tokens.append(self.vocab.from_union_speech(token))
        return "ok"


def scan_com_tokens(
    tokens: Sequence[int], vocab: VocabSpec, segment: str = SEGMENT_TEXT
) -> tuple[str | None, ComSegmenter]:
    """Classify a hand-built generated suffix; returns (failure, segmenter)."""
    seg = ComSegmenter(vocab, segment=segment)
    for token in tokens:
        event = seg.push(token)
        if event == FAILURE_WRONG_MODALITY:
            return FAILURE_WRONG_MODALITY, seg
        if event == "eos":
            return None, seg
    return FAILURE_NO_EOS, seg


def decode_com(
    model: StreamLM,
    prompt: Sequence[int],
    params: SamplingParams,
    gold_tq: bool = False,
) -> DecodeOutcome:
    """Single-stream sampling over the union vocabulary until speech EOS.

    The generated text answer is whatever text tokens follow the prompt; in
    gold-TQ prompts that is just the answer, otherwise question and answer
    come out as one undelimited text segment.
    """
    vocab = model.config.vocab
    cap = min(params.max_total_len, model.config.max_context)
    prompt = list(prompt)
    if len(prompt) > cap:
        raise ValueError(f"prompt of {len(prompt)} tokens exceeds the cap {cap}")
    rng = np.random.default_rng(params.seed)
    segmenter = ComSegmenter(vocab)
    segmenter.scan_prompt(prompt)
    session = model.session()
    logits = session.prefill_com(prompt)
    total = len(prompt)
    failure: str | None = None
    finished = False
    while total < cap and not finished:
        token = sample_token(logits, params, rng)
        total += 1
        event = segmenter.push(token)
        if event == "eos":
            finished = True
        elif event == FAILURE_WRONG_MODALITY:
            failure = FAILURE_WRONG_MODALITY
            finished = True
        elif total < cap:
            logits = session.step_com(token)
    if not finished and failure is None:
        failure = FAILURE_NO_EOS
    return DecodeOutcome(
        text_answer=_strip(
            segmenter.text_tokens, vocab.text_pad_id, vocab.text_eos_id
        ),
        speech_answer=_strip(
            segmenter.speech_tokens, vocab.speech_pad_id, vocab.speech_eos_id
        ),
        frames_generated=total - len(prompt),
        failure=failure,
        mode="com",
    )


def write_outcomes_jsonl(path, outcomes: Sequence[DecodeOutcome]) -> None:
    with open(path, "w") as f:
        for outcome in outcomes:
            f.write(outcome.to_json_line() + "\n")


def read_outcomes_jsonl(path) -> list[DecodeOutcome]:
    with open(path) as f:
        return [DecodeOutcome.from_json_line(line) for line in f if line.strip()]
