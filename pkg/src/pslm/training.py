"""Multi-stream cross-entropy, the training loop, and a finite-difference oracle.

The loss is the sum of per-stream mean cross-entropies under the next-token
convention (logits at frame t score the tokens at frame t+1). All frames
count, prompt and pad positions included: the model has to learn to emit
pads during parallel decoding. With weighting enabled, speech-stream losses
are scaled by 1/S so text never gets drowned out as streams are added.
"""

import csv
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import TrainingDivergedError
from .model import StreamLM, StreamLogits
from .streams import MultiStreamSequence


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    batch_size: int = 8
    learning_rate: float = 3e-4
    weighted_loss: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size must be >= 1 and learning_rate > 0")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-stream mean cross-entropies (nats/token) and their weighted total."""

    text_loss: torch.Tensor | float
    speech_losses: tuple
    speech_weight: float
    total: torch.Tensor | float

    @classmethod
    def combine(cls, text_loss, speech_losses, weighted: bool) -> "LossBreakdown":
        weight = 1.0 / len(speech_losses) if (weighted and speech_losses) else 1.0
        total = text_loss
        for s in speech_losses:
            total = total + weight * s
        return cls(
            text_loss=text_loss,
            speech_losses=tuple(speech_losses),
            speech_weight=weight,
            total=total,
        )

    def detach_floats(self) -> "LossBreakdown":
        as_float = lambda v: float(v.detach()) if torch.is_tensor(v) else float(v)
        return LossBreakdown(
            text_loss=as_float(self.text_loss),
            speech_losses=tuple(as_float(s) for s in self.speech_losses),
            speech_weight=self.speech_weight,
            total=as_float(self.total),
        )


def weighted_loss(
    logits: StreamLogits, targets: MultiStreamSequence, weighted: bool = True
) -> LossBreakdown:
    """Mean cross-entropy per stream over all predicted frames."""
    if len(logits) != len(targets):
        raise ValueError(
            f"logits cover {len(logits)} frames but targets have {len(targets)}"
        )
    if len(targets) < 2:
        raise ValueError("need at least two frames for next-token loss")
    text = torch.tensor(targets.text_stream, dtype=torch.long)
    text_loss = F.cross_entropy(logits.text[:-1], text[1:])
    speech_losses = []
    for stream_logits, stream in zip(logits.speech, targets.speech_streams):
        tokens = torch.tensor(stream, dtype=torch.long)
        speech_losses.append(F.cross_entropy(stream_logits[:-1], tokens[1:]))
    return LossBreakdown.combine(text_loss, speech_losses, weighted)


def com_loss(logits: torch.Tensor, tokens: Sequence[int]) -> LossBreakdown:
    """Single-stream next-token cross-entropy over the union vocabulary."""
    if logits.shape[0] != len(tokens):
        raise ValueError("logits/tokens length mismatch")
    if len(tokens) < 2:
        raise ValueError("need at least two tokens for next-token loss")
    target = torch.tensor(list(tokens), dtype=torch.long)
    loss = F.cross_entropy(logits[:-1], target[1:])
    return LossBreakdown.combine(loss, (), weighted=False)


def example_loss(model: StreamLM, example, weighted: bool = True) -> LossBreakdown:
    """Forward + loss for either kind of training example."""
    if isinstance(example, MultiStreamSequence):
        return weighted_loss(model(example), example, weighted)
    return com_loss(model.forward_com(example), example)


@dataclass
class TrainResult:
    history: list  # LossBreakdown (floats), one per step

    @property
    def final(self) -> "LossBreakdown":
        return self.history[-1]


def corpus_loss(model: StreamLM, examples: Sequence, weighted: bool = True) -> LossBreakdown:
    """Deterministic mean loss over a whole example set (no sampling noise)."""
    if not examples:
        raise ValueError("examples must be non-empty")
    with torch.no_grad():
        breakdowns = [example_loss(model, ex, weighted) for ex in examples]
    return _mean_breakdown(breakdowns)


def train(model: StreamLM, examples: Sequence, cfg: TrainConfig) -> TrainResult:
    """Adam over mean batch loss; deterministic for a fixed seed."""
    if not examples:
        raise ValueError("examples must be non-empty")
    rng = random.Random(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for step in range(cfg.steps):
        batch = [examples[rng.randrange(len(examples))] for _ in range(cfg.batch_size)]
        optimizer.zero_grad()
        breakdowns = [example_loss(model, ex, cfg.weighted_loss) for ex in batch]
        total = torch.stack([b.total for b in breakdowns]).mean()
        if not torch.isfinite(total):
            raise TrainingDivergedError(step)
        total.backward()
        optimizer.step()
        history.append(_mean_breakdown(breakdowns))
    return TrainResult(history=history)


def _mean_breakdown(breakdowns: Sequence[LossBreakdown]) -> LossBreakdown:
    floats = [b.detach_floats() for b in breakdowns]
    n_speech = len(floats[0].speech_losses)
    return LossBreakdown(
        text_loss=float(np.mean([b.text_loss for b in floats])),
        speech_losses=tuple(
            float(np.mean([b.speech_losses[s] for b in floats])) for s in range(n_speech)
        ),
        speech_weight=floats[0].speech_weight,
        total=float(np.mean([b.total for b in floats])),
    )


def write_loss_history_csv(path, history: Sequence[LossBreakdown]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        n_speech = len(history[0].speech_losses) if history else 0
        w.writerow(
            ["step", "text_loss"]
            + [f"speech_loss_{s + 1}" for s in range(n_speech)]
            + ["total"]
        )
        for step, b in enumerate(history):
            w.writerow([step, repr(b.text_loss)] + [repr(s) for s in b.speech_losses] + [repr(b.total)])


# --- gradient verification ---


@dataclass(frozen=True)
class GradcheckResult:
    max_rel_error: float
    coords_checked: int
    per_param: dict

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_rel_error < threshold


def collect_gradients(model: StreamLM, example, weighted: bool = True) -> dict:
    """Analytic gradients of the total loss for every named parameter."""
    model.zero_grad(set_to_none=True)
    loss = example_loss(model, example, weighted).total
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return grads


def loss_value(model: StreamLM, example, weighted: bool = True) -> float:
    with torch.no_grad():
        return float(example_loss(model, example, weighted).total)


def finite_difference(
    model: StreamLM, example, name: str, flat_index: int, epsilon: float,
    weighted: bool = True,
) -> float:
    """Central difference of the loss along one parameter coordinate."""
    param = dict(model.named_parameters())[name]
    flat = param.data.view(-1)
    original = flat[flat_index].item()
    try:
        flat[flat_index] = original + epsilon
        plus = loss_value(model, example, weighted)
        flat[flat_index] = original - epsilon
        minus = loss_value(model, example, weighted)
    finally:
        flat[flat_index] = original
    return (plus - minus) / (2.0 * epsilon)


def relative_error(a: float, b: float, floor: float = 1e-3) -> float:
    """|a-b| over max magnitude, floored so noise on near-zero pairs is ignored."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_coordinates(model: StreamLM, num_coords: int, seed: int = 0) -> list:
    """At least one coordinate per parameter, remainder spread by size.

    Returns at least num_coords coordinates (capped by the model size).
    """
    rng = np.random.default_rng(seed)
    params = [(name, p.numel()) for name, p in model.named_parameters()]
    counts = {name: 1 for name, _ in params}
    remaining = max(0, num_coords - len(params))
    total_size = sum(size for _, size in params)
    for name, size in params:
        counts[name] += int(round(remaining * size / total_size))
    # rounding may undershoot; top up from the largest tensors
    deficit = num_coords - sum(min(counts[n], s) for n, s in params)
    for name, size in sorted(params, key=lambda p: -p[1]):
        if deficit <= 0:
            break
        extra = min(deficit, size - min(counts[name], size))
        counts[name] += extra
        deficit -= extra
    coords = []
    for name, size in params:
        take = min(counts[name], size)
        idxs = rng.choice(size, size=take, replace=False)
        coords.extend((name, int(i)) for i in idxs)
    return coords


def gradcheck(
    model: StreamLM,
    example,
    epsilon: float = 1e-4,
    num_coords: int = 200,
    seed: int = 0,
    weighted: bool = True,
) -> GradcheckResult:
    """Compare analytic gradients against central finite differences.

    Samples coordinates covering every parameter tensor (trunk, every
    embedding table, every head). Intended for small models; cost is two
    forward passes per coordinate.
    """
    grads = collect_gradients(model, example, weighted)
    coords = sample_coordinates(model, num_coords, seed)
    per_param: dict = {}
    worst = 0.0
    for name, idx in coords:
        analytic = float(grads[name].view(-1)[idx])
        numeric = finite_difference(model, example, name, idx, epsilon, weighted)
        err = relative_error(analytic, numeric)
        per_param[name] = max(per_param.get(name, 0.0), err)
        worst = max(worst, err)
    return GradcheckResult(
        max_rel_error=worst, coords_checked=len(coords), per_param=per_param
    )
