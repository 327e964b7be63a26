import pytest

from pslm.corpus import CorpusConfig, generate_corpus
from pslm.model import ModelConfig, StreamLM
from pslm.streams import build_com_example, build_pslm_example
from pslm.training import TrainConfig, train
from pslm.vocab import VocabSpec, default_vocab

SMALL_VOCAB = VocabSpec(text_vocab_size=16, speech_vocab_size=24)


@pytest.fixture(scope="session")
def vocab() -> VocabSpec:
    return default_vocab()


@pytest.fixture(scope="session")
def small_vocab() -> VocabSpec:
    return SMALL_VOCAB


@pytest.fixture(scope="session")
def memorized():
    """One QA pair plus models trained to reproduce it, in both modes."""
    corp = generate_corpus(
        CorpusConfig(n_pairs=1, max_text_len=3, seed=12, holdout_pairs=0), SMALL_VOCAB
    )
    pair = corp.train[0]
    pslm = tiny_model(1, SMALL_VOCAB, hidden_size=32, num_layers=2, max_context=256)
    train(
        pslm,
        [build_pslm_example(pair.tq, pair.ta, pair.sq, pair.sa, 1, SMALL_VOCAB)],
        TrainConfig(steps=250, batch_size=2, learning_rate=2e-3, seed=0),
    )
    com = tiny_model(0, SMALL_VOCAB, hidden_size=32, num_layers=2, max_context=256)
    train(
        com,
        [build_com_example(pair.tq, pair.ta, pair.sq, pair.sa, SMALL_VOCAB)],
        TrainConfig(steps=250, batch_size=2, learning_rate=2e-3, seed=0),
    )
    return corp, pair, pslm, com


def tiny_config(num_speech_streams: int, vocab: VocabSpec, **overrides) -> ModelConfig:
    kwargs = dict(
        num_layers=1,
        hidden_size=16,
        num_heads=2,
        max_context=128,
        num_speech_streams=num_speech_streams,
        vocab=vocab,
        seed=0,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def tiny_model(num_speech_streams: int, vocab: VocabSpec, **overrides) -> StreamLM:
    return StreamLM(tiny_config(num_speech_streams, vocab, **overrides))
