import math

import numpy as np
import pytest
import torch

from pslm.corpus import CorpusConfig, generate_corpus
from pslm.errors import TrainingDivergedError
from pslm.model import StreamLogits
from pslm.streams import MultiStreamSequence, build_com_example, build_pslm_example
from pslm.training import (
    LossBreakdown,
    TrainConfig,
    collect_gradients,
    com_loss,
    corpus_loss,
    finite_difference,
    gradcheck,
    loss_value,
    relative_error,
    sample_coordinates,
    train,
    weighted_loss,
    write_loss_history_csv,
)
from pslm.vocab import VocabSpec

from conftest import tiny_model

V = VocabSpec(text_vocab_size=16, speech_vocab_size=24)


def random_targets(length, num_streams, seed=0):
    rng = np.random.default_rng(seed)
    return MultiStreamSequence(
        text_stream=tuple(int(t) for t in rng.integers(0, V.text_vocab_size, length)),
        speech_streams=tuple(
            tuple(int(t) for t in rng.integers(0, V.speech_vocab_size, length))
            for _ in range(num_streams)
        ),
    )


def random_logits(length, num_streams, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return StreamLogits(
        text=torch.randn(length, V.text_vocab_size, dtype=torch.float64, generator=gen),
        speech=tuple(
            torch.randn(length, V.speech_vocab_size, dtype=torch.float64, generator=gen)
            for _ in range(num_streams)
        ),
    )


def small_corpus(num_streams, n_pairs=8, seed=3):
    corp = generate_corpus(
        CorpusConfig(n_pairs=n_pairs, max_text_len=3, seed=seed, holdout_pairs=0), V
    )
    return [
        build_pslm_example(p.tq, p.ta, p.sq, p.sa, num_streams, V) for p in corp.train
    ]


class TestLossBreakdown:
    def test_weighted_combination(self):
        b = LossBreakdown.combine(2.0, (1.0, 3.0), weighted=True)
        assert b.speech_weight == 0.5
        assert b.total == 4.0

    def test_unweighted_combination(self):
        b = LossBreakdown.combine(2.0, (1.0, 3.0), weighted=False)
        assert b.total == 6.0

    def test_single_stream_weighting_is_identity(self):
        w = LossBreakdown.combine(2.0, (1.5,), weighted=True)
        u = LossBreakdown.combine(2.0, (1.5,), weighted=False)
        assert w.total == u.total == 3.5


class TestWeightedLoss:
    def test_uniform_logits_give_log_vocab(self):
        targets = random_targets(6, 2)
        logits = StreamLogits(
            text=torch.zeros(6, V.text_vocab_size, dtype=torch.float64),
            speech=tuple(
                torch.zeros(6, V.speech_vocab_size, dtype=torch.float64)
                for _ in range(2)
            ),
        )
        b = weighted_loss(logits, targets)
        assert float(b.text_loss) == pytest.approx(math.log(V.text_vocab_size), abs=1e-12)
        for s in b.speech_losses:
            assert float(s) == pytest.approx(math.log(V.speech_vocab_size), abs=1e-12)

    def test_total_identity_for_random_logits(self):
        for seed in range(5):
            targets = random_targets(9, 3, seed)
            b = weighted_loss(random_logits(9, 3, seed), targets, weighted=True)
            expected = float(b.text_loss) + sum(float(s) for s in b.speech_losses) / 3
            assert float(b.total) == pytest.approx(expected, abs=1e-12)

    def test_stream_permutation_equivariance(self):
        targets = random_targets(7, 2, seed=1)
        logits = random_logits(7, 2, seed=1)
        base = weighted_loss(logits, targets)
        swapped = weighted_loss(
            StreamLogits(text=logits.text, speech=(logits.speech[1], logits.speech[0])),
            MultiStreamSequence(
                targets.text_stream,
                (targets.speech_streams[1], targets.speech_streams[0]),
            ),
        )
        assert float(base.speech_losses[0]) == float(swapped.speech_losses[1])
        assert float(base.speech_losses[1]) == float(swapped.speech_losses[0])
        assert float(base.total) == pytest.approx(float(swapped.total), abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            weighted_loss(random_logits(5, 1), random_targets(6, 1))

    def test_com_loss_uniform(self):
        logits = torch.zeros(4, V.union_vocab_size, dtype=torch.float64)
        b = com_loss(logits, [1, 2, 3, 4])
        assert float(b.total) == pytest.approx(math.log(V.union_vocab_size), abs=1e-12)
        assert b.speech_losses == ()


class TestTrain:
    def test_loss_decreases_on_memorizable_corpus(self):
        model = tiny_model(1, V, hidden_size=32)
        examples = small_corpus(1)
        result = train(
            model, examples, TrainConfig(steps=200, batch_size=4, learning_rate=1e-3)
        )
        assert result.final.total < result.history[0].total

    def test_zero_steps_leaves_parameters(self):
        model = tiny_model(1, V)
        before = {n: p.clone() for n, p in model.named_parameters()}
        result = train(model, small_corpus(1), TrainConfig(steps=0))
        assert result.history == []
        for n, p in model.named_parameters():
            assert torch.equal(before[n], p)

    def test_deterministic_histories(self):
        cfg = TrainConfig(steps=12, batch_size=2, learning_rate=1e-3, seed=4)
        r1 = train(tiny_model(1, V), small_corpus(1), cfg)
        r2 = train(tiny_model(1, V), small_corpus(1), cfg)
        assert [b.total for b in r1.history] == [b.total for b in r2.history]

    def test_divergence_reports_step(self):
        model = tiny_model(1, V)
        with torch.no_grad():
            model.text_head.bias[0] = float("nan")
        with pytest.raises(TrainingDivergedError) as err:
            train(model, small_corpus(1), TrainConfig(steps=5))
        assert err.value.step == 0

    def test_com_examples_train(self):
        model = tiny_model(0, V, hidden_size=32)
        corp = generate_corpus(
            CorpusConfig(n_pairs=4, max_text_len=3, seed=5, holdout_pairs=0), V
        )
        examples = [build_com_example(p.tq, p.ta, p.sq, p.sa, V) for p in corp.train]
        result = train(model, examples, TrainConfig(steps=40, batch_size=2, learning_rate=1e-3))
        assert result.final.total < result.history[0].total
        assert result.final.speech_losses == ()

    def test_history_csv(self, tmp_path):
        result = train(
            tiny_model(2, V), small_corpus(2), TrainConfig(steps=3, batch_size=2)
        )
        path = tmp_path / "loss.csv"
        write_loss_history_csv(path, result.history)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,text_loss,speech_loss_1,speech_loss_2,total"
        assert len(lines) == 4

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train(tiny_model(1, V), [], TrainConfig(steps=1))


class TestGradcheck:
    def test_analytic_matches_finite_differences(self):
        model = tiny_model(1, V)
        example = small_corpus(1, n_pairs=1)[0]
        result = gradcheck(model, example, epsilon=1e-4, num_coords=120, seed=0)
        assert result.coords_checked >= 120
        assert result.max_rel_error < 1e-4

    def test_coordinates_cover_every_parameter(self):
        model = tiny_model(2, V)
        coords = sample_coordinates(model, 200, seed=1)
        assert len(coords) >= 200
        names = {name for name, _ in coords}
        assert names == {name for name, _ in model.named_parameters()}

    def test_corrupted_gradient_detected(self):
        model = tiny_model(1, V)
        example = small_corpus(1, n_pairs=1)[0]
        grads = collect_gradients(model, example)
        name = "speech_heads.0.weight"
        grads[name] = grads[name] * 2.0  # deliberately wrong analytic gradient
        flat = grads[name].view(-1)
        largest = torch.argsort(flat.abs(), descending=True)[:20]
        worst = 0.0
        for idx in largest.tolist():
            fd = finite_difference(model, example, name, idx, epsilon=1e-4)
            worst = max(worst, relative_error(float(flat[idx]), fd))
        assert worst > 1e-2

    def test_zero_perturbation_changes_nothing(self):
        model = tiny_model(1, V)
        example = small_corpus(1, n_pairs=1)[0]
        assert loss_value(model, example) == loss_value(model, example)

    def test_unweighted_gradients_also_check(self):
        model = tiny_model(2, V)
        example = small_corpus(2, n_pairs=1)[0]
        result = gradcheck(
            model, example, epsilon=1e-4, num_coords=60, seed=2, weighted=False
        )
        assert result.max_rel_error < 1e-4


def test_corpus_loss_is_deterministic_mean():
    model = tiny_model(1, V)
    examples = small_corpus(1, n_pairs=3)
    a = corpus_loss(model, examples)
    b = corpus_loss(model, examples)
    assert a.total == b.total
    with torch.no_grad():
        singles = [float(weighted_loss(model(ex), ex).total) for ex in examples]
    assert a.total == pytest.approx(float(np.mean(singles)), abs=1e-12)
