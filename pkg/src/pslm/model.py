"""Decoder-only transformer over one text stream plus S parallel speech streams.

Per frame, the input vector is the sum of the text embedding, the S speech
embeddings, and a fixed sinusoidal position encoding. A shared causal trunk
feeds S+1 independent output heads. With S=0 the model degenerates to a
single-stream LM over the union text+speech vocabulary, which is what the
chain-of-modality baseline uses. All parameters are float64 so gradients can
be checked against finite differences at tight tolerance.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn

from .errors import CheckpointError, ContextOverflowError
from .streams import MultiStreamSequence
from .vocab import VocabSpec

DTYPE = torch.float64
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 2
    max_context: int = 2048
    num_speech_streams: int = 1
    vocab: VocabSpec = field(default_factory=VocabSpec)
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if self.hidden_size % 2 != 0:
            raise ValueError("hidden_size must be even (sinusoidal positions)")
        if self.max_context < 1:
            raise ValueError("max_context must be >= 1")
        if self.num_speech_streams < 0:
            raise ValueError("num_speech_streams must be >= 0")


@dataclass(frozen=True)
class FrameLogits:
    """Output distributions for one frame: text plus one vector per speech stream."""

    text_logits: torch.Tensor
    speech_logits: tuple[torch.Tensor, ...]


class StreamLogits:
    """Per-frame logits for a whole sequence; indexable as FrameLogits."""

    def __init__(self, text: torch.Tensor, speech: tuple[torch.Tensor, ...]):
        self.text = text  # (L, text vocab)
        self.speech = speech  # S tensors of (L, speech vocab)

    def __len__(self) -> int:
        return self.text.shape[0]

    def __getitem__(self, t: int) -> FrameLogits:
        return FrameLogits(
            text_logits=self.text[t],
            speech_logits=tuple(s[t] for s in self.speech),
        )


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    freq = torch.exp(
        -math.log(10000.0) * torch.arange(0, dim, 2, dtype=DTYPE) / dim
    )
    table = torch.zeros(length, dim, dtype=DTYPE)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)
    return table


class CausalSelfAttention(nn.Module):
    def __init__(self, hidden_size: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = hidden_size // num_heads
        self.qkv = nn.Linear(hidden_size, 3 * hidden_size, dtype=DTYPE)
        self.proj = nn.Linear(hidden_size, hidden_size, dtype=DTYPE)

    def _split(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        length = x.shape[0]
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (length, self.num_heads, self.head_dim)
        return (
            q.view(shape).transpose(0, 1),
            k.view(shape).transpose(0, 1),
            v.view(shape).transpose(0, 1),
        )

    def forward(self, x: torch.Tensor, return_kv: bool = False):
        length = x.shape[0]
        q, k, v = self._split(x)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        out = self.proj(out.transpose(0, 1).reshape(length, -1))
        return (out, (k, v)) if return_kv else out

    def step(self, x_t: torch.Tensor, cache: tuple[torch.Tensor, torch.Tensor]):
        """Attend one new frame against cached keys/values."""
        q, k, v = self._split(x_t)
        k = torch.cat([cache[0], k], dim=1)
        v = torch.cat([cache[1], v], dim=1)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        out = torch.softmax(scores, dim=-1) @ v
        out = self.proj(out.transpose(0, 1).reshape(1, -1))
        return out, (k, v)


class Block(nn.Module):
    def __init__(self, hidden_size: int, num_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden_size, dtype=DTYPE)
        self.attn = CausalSelfAttention(hidden_size, num_heads)
        self.ln2 = nn.LayerNorm(hidden_size, dtype=DTYPE)
        self.mlp = nn.Sequential(
            nn.Linear(hidden_size, 4 * hidden_size, dtype=DTYPE),
            nn.GELU(),
            nn.Linear(4 * hidden_size, hidden_size, dtype=DTYPE),
        )

    def forward(self, x: torch.Tensor, return_kv: bool = False):
        if return_kv:
            a, kv = self.attn(self.ln1(x), return_kv=True)
            x = x + a
            x = x + self.mlp(self.ln2(x))
            return x, kv
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))

    def step(self, x_t: torch.Tensor, cache):
        a, cache = self.attn.step(self.ln1(x_t), cache)
        x_t = x_t + a
        return x_t + self.mlp(self.ln2(x_t)), cache


class StreamLM(nn.Module):
    """The multi-stream LM; construct from a ModelConfig (seeded, deterministic)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h = config.hidden_size
        self.text_embedding = nn.Embedding(self.text_space_size, h, dtype=DTYPE)
        self.speech_embeddings = nn.ModuleList(
            nn.Embedding(config.vocab.speech_vocab_size, h, dtype=DTYPE)
            for _ in range(config.num_speech_streams)
        )
        self.blocks = nn.ModuleList(
            Block(h, config.num_heads) for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(h, dtype=DTYPE)
        self.text_head = nn.Linear(h, self.text_space_size, dtype=DTYPE)
        self.speech_heads = nn.ModuleList(
            nn.Linear(h, config.vocab.speech_vocab_size, dtype=DTYPE)
            for _ in range(config.num_speech_streams)
        )
        self.register_buffer(
            "positions", sinusoidal_positions(config.max_context, h), persistent=False
        )
        self._reset_parameters()

    @property
    def text_space_size(self) -> int:
        """Text head/table width: the union vocabulary for single-stream models."""
        if self.config.num_speech_streams == 0:
            return self.config.vocab.union_vocab_size
        return self.config.vocab.text_vocab_size

    def _reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith(".bias"):
                    p.zero_()
                elif "ln" in name or "final_norm" in name:
                    p.fill_(1.0)
                else:
                    p.normal_(0.0, 0.02, generator=gen)

    # --- shared trunk ---

    def _check_length(self, length: int) -> None:
        if length > self.config.max_context:
            raise ContextOverflowError(
                f"sequence of {length} frames exceeds max_context "
                f"{self.config.max_context}"
            )

    def embed_sequence(self, seq: MultiStreamSequence) -> torch.Tensor:
        """Summed trunk input: text + per-stream speech embeddings + positions."""
        self._check_stream_count(seq)
        self._check_length(len(seq))
        text = torch.tensor(seq.text_stream, dtype=torch.long)
        x = self.text_embedding(text)
        for emb, stream in zip(self.speech_embeddings, seq.speech_streams):
            x = x + emb(torch.tensor(stream, dtype=torch.long))
        return x + self.positions[: len(seq)]

    def embed_com(self, tokens: Sequence[int]) -> torch.Tensor:
        self._check_com()
        self._check_length(len(tokens))
        x = self.text_embedding(torch.tensor(list(tokens), dtype=torch.long))
        return x + self.positions[: x.shape[0]]

    def _trunk(self, x: torch.Tensor, collect_kv: bool = False):
        caches = []
        for block in self.blocks:
            if collect_kv:
                x, kv = block(x, return_kv=True)
                caches.append(kv)
            else:
                x = block(x)
        return self.final_norm(x), caches

    def _check_stream_count(self, seq: MultiStreamSequence) -> None:
        if self.config.num_speech_streams == 0:
            raise ValueError("single-stream model: use forward_com")
        if seq.num_speech_streams != self.config.num_speech_streams:
            raise ValueError(
                f"sequence has {seq.num_speech_streams} speech streams, "
                f"model expects {self.config.num_speech_streams}"
            )

    def _check_com(self) -> None:
        if self.config.num_speech_streams != 0:
            raise ValueError("multi-stream model: use forward")

    def forward(self, seq: MultiStreamSequence) -> StreamLogits:
        x = self.embed_sequence(seq)
        hidden, _ = self._trunk(x)
        return StreamLogits(
            text=self.text_head(hidden),
            speech=tuple(head(hidden) for head in self.speech_heads),
        )

    def forward_com(self, tokens: Sequence[int]) -> torch.Tensor:
        """(L, union vocab) logits for a flat single-stream sequence."""
        hidden, _ = self._trunk(self.embed_com(tokens))
        return self.text_head(hidden)

    def session(self) -> "DecodeSession":
        return DecodeSession(self)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class DecodeSession:
    """Incremental decoding with per-layer key/value caches.

    prefill() runs the same vectorized forward as the full model (capturing
    keys/values); step() extends the sequence one frame at a time. Step logits
    agree with full recompute to float64 rounding (BLAS reduction order
    differs with shape), which the test suite pins at 1e-12.
    """

    def __init__(self, model: StreamLM):
        self.model = model
        self._caches = None
        self._pos = 0

    @property
    def length(self) -> int:
        return self._pos

    def _heads(self, hidden_t: torch.Tensor) -> FrameLogits:
        with torch.no_grad():
            return FrameLogits(
                text_logits=self.model.text_head(hidden_t).squeeze(0),
                speech_logits=tuple(
                    head(hidden_t).squeeze(0) for head in self.model.speech_heads
                ),
            )

    def prefill(self, prompt: MultiStreamSequence) -> FrameLogits:
        if len(prompt) < 1:
            raise ValueError("prompt must contain at least one frame")
        with torch.no_grad():
            x = self.model.embed_sequence(prompt)
            hidden, self._caches = self.model._trunk(x, collect_kv=True)
            # heads over the full matrix, sliced after: bit-identical to forward()
            out = FrameLogits(
                text_logits=self.model.text_head(hidden)[-1],
                speech_logits=tuple(
                    head(hidden)[-1] for head in self.model.speech_heads
                ),
            )
        self._pos = len(prompt)
        return out

    def step(self, text_token: int, speech_tokens: Sequence[int]) -> FrameLogits:
        if len(speech_tokens) != self.model.config.num_speech_streams:
            raise ValueError("wrong number of speech tokens for this model")
        self.model._check_length(self._pos + 1)
        with torch.no_grad():
            x = self.model.text_embedding(torch.tensor([text_token]))
            for emb, tok in zip(self.model.speech_embeddings, speech_tokens):
                x = x + emb(torch.tensor([tok]))
            x = x + self.model.positions[self._pos : self._pos + 1]
            hidden_t = self._step_trunk(x)
        self._pos += 1
        return self._heads(hidden_t)

    def prefill_com(self, tokens: Sequence[int]) -> torch.Tensor:
        if not tokens:
            raise ValueError("prompt must contain at least one token")
        with torch.no_grad():
            x = self.model.embed_com(tokens)
            hidden, self._caches = self.model._trunk(x, collect_kv=True)
            out = self.model.text_head(hidden)[-1]
        self._pos = len(tokens)
        return out

    def step_com(self, token: int) -> torch.Tensor:
        self.model._check_com()
        self.model._check_length(self._pos + 1)
        with torch.no_grad():
            x = self.model.text_embedding(torch.tensor([token]))
            x = x + self.model.positions[self._pos : self._pos + 1]
            out = self.model.text_head(self._step_trunk(x)).squeeze(0)
        self._pos += 1
        return out

    def _step_trunk(self, x: torch.Tensor) -> torch.Tensor:
        new_caches = []
        for block, cache in zip(self.model.blocks, self._caches):
            x, cache = block.step(x, cache)
            new_caches.append(cache)
        self._caches = new_caches
        return self.model.final_norm(x)


# --- checkpoints ---


def _config_to_dict(config: ModelConfig) -> dict:
    d = {
        "num_layers": config.num_layers,
        "hidden_size": config.hidden_size,
        "num_heads": config.num_heads,
        "max_context": config.max_context,
        "num_speech_streams": config.num_speech_streams,
        "seed": config.seed,
        "vocab": {
            "text_vocab_size": config.vocab.text_vocab_size,
            "speech_vocab_size": config.vocab.speech_vocab_size,
            "text_pad_id": config.vocab.text_pad_id,
            "text_eos_id": config.vocab.text_eos_id,
            "com_text_marker_id": config.vocab.com_text_marker_id,
            "speech_pad_id": config.vocab.speech_pad_id,
            "speech_eos_id": config.vocab.speech_eos_id,
            "com_speech_marker_id": config.vocab.com_speech_marker_id,
        },
    }
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["vocab"] = VocabSpec(**d["vocab"])
    return ModelConfig(**d)


def save_checkpoint(model: StreamLM, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": _config_to_dict(model.config),
            "state": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> StreamLM:
    try:
        data = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if not isinstance(data, dict) or data.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    config = config_from_dict(data["config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"{path}: checkpoint config does not match the expected config"
        )
    model = StreamLM(config)
    try:
        model.load_state_dict(data["state"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameter shapes do not match config") from exc
    return model
