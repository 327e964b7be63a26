"""Desk-scale parallel text+speech token language modeling testbed."""

from .corpus import Corpus, CorpusConfig, QAPair, ToyTTS, generate_corpus, load_corpus, save_corpus
from .decoding import (
    DecodeOutcome,
    SamplingParams,
    decode_com,
    decode_pslm,
    sample_token,
)
from .errors import (
    CheckpointError,
    ContextOverflowError,
    TextTooLongError,
    TrainingDivergedError,
)
from .latency import (
    LatencyParams,
    LengthRecord,
    MethodSpec,
    latency_com,
    latency_curve,
    latency_pslm,
    simulate_dataset,
)
from .metrics import EvalReport, cer, evaluate, failure_rate
from .model import FrameLogits, ModelConfig, StreamLM, load_checkpoint, save_checkpoint
from .streams import (
    MultiStreamSequence,
    StreamLayoutReport,
    build_com_example,
    build_com_prompt,
    build_pslm_example,
    build_pslm_prompt,
    deinterleave_speech,
    interleave_speech,
    pad_text_to_length,
)
from .training import LossBreakdown, TrainConfig, gradcheck, train, weighted_loss
from .vocab import VocabSpec, default_vocab
from .vocoder import (
    FragmentPlan,
    StreamingSynthesizer,
    VocoderSpec,
    fragment_schedule,
    n_offset,
    streaming_synthesize,
    synthesize_offline,
    toy_waveform,
)

__version__ = "0.1.0"
