"""Synthetic QA corpus with a deterministic toy text-to-speech mapping.

Each text token id maps to a fixed signature of 8-14 speech tokens whose
first token is unique to that id, so concatenated signatures decode back to
text exactly. The corpus doubles as ground truth: the inverse mapping plays
the role of transcription when scoring decoded speech against decoded text.
Question/answer lengths follow a long-tailed shape (quartiles roughly at
13%, 22%, and 35% of the maximum) so short texts dominate.
"""

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .vocab import VocabSpec, default_vocab

CORPUS_FORMAT_VERSION = 1

# piecewise-linear inverse CDF knots for text lengths, as fractions of max
_LENGTH_KNOTS = (0.014, 0.128, 0.216, 0.345, 1.0)


@dataclass(frozen=True)
class CorpusConfig:
    n_pairs: int = 32
    expansion_mean: float = 11.1  # speech tokens per text token
    max_text_len: int = 12
    seed: int = 0
    holdout_pairs: int = 4
    tts_seed: int = 0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.expansion_mean < 1:
            raise ValueError("expansion_mean must be >= 1")
        if self.max_text_len < 1:
            raise ValueError("max_text_len must be >= 1")
        if self.holdout_pairs < 0:
            raise ValueError("holdout_pairs must be >= 0")


@dataclass(frozen=True)
class QAPair:
    id: int
    tq: tuple[int, ...]
    ta: tuple[int, ...]
    sq: tuple[int, ...]
    sa: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tq", tuple(self.tq))
        object.__setattr__(self, "ta", tuple(self.ta))
        object.__setattr__(self, "sq", tuple(self.sq))
        object.__setattr__(self, "sa", tuple(self.sa))


@dataclass(frozen=True)
class UnmatchedRun:
    start: int  # speech-token index where decoding lost sync
    length: int


class ToyTTS:
    """Deterministic per-token signature expansion and its exact inverse."""

    def __init__(self, vocab: VocabSpec, expansion_mean: float = 11.1, seed: int = 0):
        self.vocab = vocab
        self.expansion_mean = expansion_mean
        self.seed = seed
        text_ids = vocab.text_content_ids
        speech_ids = vocab.speech_content_ids
        if len(speech_ids) < len(text_ids):
            raise ValueError(
                "speech content vocabulary must be at least as large as the text one"
            )
        rng = np.random.default_rng(seed)
        center = int(round(expansion_mean))
        lo, hi = max(1, center - 3), center + 3
        self._signatures: dict[int, tuple[int, ...]] = {}
        for k, text_id in enumerate(text_ids):
            length = int(rng.integers(lo, hi + 1))
            # unique leading token keeps concatenations exactly decodable
            body = rng.choice(speech_ids, size=length - 1).tolist()
            self._signatures[text_id] = tuple([speech_ids[k]] + [int(t) for t in body])
        self._by_leading = {sig[0]: tid for tid, sig in self._signatures.items()}

    def signature(self, text_id: int) -> tuple[int, ...]:
        return self._signatures[text_id]

    def tts(self, text: Sequence[int]) -> list[int]:
        out: list[int] = []
        for t in text:
            out.extend(self._signatures[t])
        return out

    def walk(self, speech: Sequence[int]) -> list[tuple]:
        """Greedy signature matching, in positional order.

        Yields ("match", text_id, start) and ("run", start, length) events;
        runs are maximal unsynced stretches between signature matches.
        """
        speech = list(speech)
        events: list[tuple] = []
        pos = 0
        run_start = None
        while pos < len(speech):
            tid = self._by_leading.get(speech[pos])
            sig = self._signatures.get(tid) if tid is not None else None
            if sig is not None and tuple(speech[pos : pos + len(sig)]) == sig:
                if run_start is not None:
                    events.append(("run", run_start, pos - run_start))
                    run_start = None
                events.append(("match", tid, pos))
                pos += len(sig)
            else:
                if run_start is None:
                    run_start = pos
                pos += 1
        if run_start is not None:
            events.append(("run", run_start, pos - run_start))
        return events

    def invert(self, speech: Sequence[int]) -> tuple[list[int], list[UnmatchedRun]]:
        """Decoded text plus a report of any unmatched speech runs."""
        text: list[int] = []
        runs: list[UnmatchedRun] = []
        for event in self.walk(speech):
            if event[0] == "match":
                text.append(event[1])
            else:
                runs.append(UnmatchedRun(event[1], event[2]))
        return text, runs

    def mean_signature_length(self) -> float:
        return float(np.mean([len(s) for s in self._signatures.values()]))


def _draw_length(rng: np.random.Generator, max_len: int) -> int:
    """Piecewise-linear inverse CDF over the knot fractions, clamped to [1, max]."""
    u = rng.random()
    knots = np.asarray(_LENGTH_KNOTS) * max_len
    q = np.interp(u, np.linspace(0.0, 1.0, len(knots)), knots)
    return int(min(max_len, max(1, round(q))))


@dataclass(frozen=True)
class Corpus:
    config: CorpusConfig
    vocab: VocabSpec
    train: tuple[QAPair, ...]
    holdout: tuple[QAPair, ...]

    @property
    def pairs(self) -> tuple[QAPair, ...]:
        return self.train + self.holdout

    def tts(self) -> ToyTTS:
        return ToyTTS(self.vocab, self.config.expansion_mean, self.config.tts_seed)


def generate_corpus(cfg: CorpusConfig, vocab: VocabSpec | None = None) -> Corpus:
    """Deterministic corpus: content tokens only, speech sides via the toy TTS.

    Questions are kept distinct so every prompt identifies its answer.
    """
    vocab = vocab or default_vocab()
    tts = ToyTTS(vocab, cfg.expansion_mean, cfg.tts_seed)
    rng = np.random.default_rng(cfg.seed)
    content = vocab.text_content_ids
    pairs = []
    seen_tq: set[tuple[int, ...]] = set()
    for i in range(cfg.n_pairs + cfg.holdout_pairs):
        for _ in range(1000):
            tq = tuple(
                int(t) for t in rng.choice(content, size=_draw_length(rng, cfg.max_text_len))
            )
            if tq not in seen_tq:
                break
        else:
            raise ValueError("could not draw a distinct question; corpus too large "
                             "for the configured text lengths")
        seen_tq.add(tq)
        ta = [int(t) for t in rng.choice(content, size=_draw_length(rng, cfg.max_text_len))]
        pairs.append(QAPair(id=i, tq=tq, ta=tuple(ta), sq=tuple(tts.tts(tq)), sa=tuple(tts.tts(ta))))
    return Corpus(
        config=cfg,
        vocab=vocab,
        train=tuple(pairs[: cfg.n_pairs]),
        holdout=tuple(pairs[cfg.n_pairs :]),
    )


def _vocab_to_dict(vocab: VocabSpec) -> dict:
    return {
        "text_vocab_size": vocab.text_vocab_size,
        "speech_vocab_size": vocab.speech_vocab_size,
        "text_pad_id": vocab.text_pad_id,
        "text_eos_id": vocab.text_eos_id,
        "com_text_marker_id": vocab.com_text_marker_id,
        "speech_pad_id": vocab.speech_pad_id,
        "speech_eos_id": vocab.speech_eos_id,
        "com_speech_marker_id": vocab.com_speech_marker_id,
    }


def _config_to_dict(cfg: CorpusConfig) -> dict:
    return {
        "n_pairs": cfg.n_pairs,
        "expansion_mean": cfg.expansion_mean,
        "max_text_len": cfg.max_text_len,
        "seed": cfg.seed,
        "holdout_pairs": cfg.holdout_pairs,
        "tts_seed": cfg.tts_seed,
    }


def save_corpus(corpus: Corpus, path) -> None:
    """Line-delimited JSON with a versioned header line."""
    header = {
        "format": "qa-corpus",
        "version": CORPUS_FORMAT_VERSION,
        "config": _config_to_dict(corpus.config),
        "vocab": _vocab_to_dict(corpus.vocab),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for split, pairs in (("train", corpus.train), ("holdout", corpus.holdout)):
            for p in pairs:
                rec = {
                    "id": p.id,
                    "split": split,
                    "tq": list(p.tq),
                    "ta": list(p.ta),
                    "sq": list(p.sq),
                    "sa": list(p.sa),
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_corpus(path) -> Corpus:
    with open(path) as f:
        lines = [line for line in f.read().splitlines() if line]
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("format") != "qa-corpus":
        raise ValueError(f"{path}: not a corpus file")
    if header.get("version") != CORPUS_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported corpus version {header.get('version')}")
    cfg = CorpusConfig(**header["config"])
    vocab = VocabSpec(**header["vocab"])
    train, holdout = [], []
    for line in lines[1:]:
        rec = json.loads(line)
        pair = QAPair(id=rec["id"], tq=rec["tq"], ta=rec["ta"], sq=rec["sq"], sa=rec["sa"])
        (train if rec["split"] == "train" else holdout).append(pair)
    return Corpus(config=cfg, vocab=vocab, train=tuple(train), holdout=tuple(holdout))
