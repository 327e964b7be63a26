import numpy as np
import pytest
import torch

from pslm.errors import CheckpointError, ContextOverflowError
from pslm.model import load_checkpoint, save_checkpoint, sinusoidal_positions
from pslm.streams import MultiStreamSequence
from pslm.vocab import VocabSpec

from conftest import tiny_config, tiny_model

V = VocabSpec(text_vocab_size=16, speech_vocab_size=24)


def random_sequence(length, num_streams, seed=0, prompt_len=0):
    rng = np.random.default_rng(seed)
    return MultiStreamSequence(
        text_stream=tuple(int(t) for t in rng.integers(0, V.text_vocab_size, length)),
        speech_streams=tuple(
            tuple(int(t) for t in rng.integers(0, V.speech_vocab_size, length))
            for _ in range(num_streams)
        ),
        prompt_len=prompt_len,
    )


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ValueError):
            tiny_config(1, V, hidden_size=18, num_heads=4)

    def test_stream_count_nonnegative(self):
        with pytest.raises(ValueError):
            tiny_config(-1, V)


class TestInit:
    def test_same_seed_bit_identical(self):
        a, b = tiny_model(2, V), tiny_model(2, V)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_different_seed_differs(self):
        a = tiny_model(1, V)
        b = tiny_model(1, V, seed=1)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_two_streams_means_three_tables_and_heads(self):
        m = tiny_model(2, V)
        assert len(m.speech_embeddings) == 2
        assert len(m.speech_heads) == 2
        # text table/head plus one per speech stream
        embeddings = [m.text_embedding, *m.speech_embeddings]
        heads = [m.text_head, *m.speech_heads]
        assert len(embeddings) == 3 and len(heads) == 3

    @pytest.mark.parametrize("num_streams", [0, 1, 3])
    def test_parameter_count_closed_form(self, num_streams):
        m = tiny_model(num_streams, V, num_layers=2)
        h = m.config.hidden_size
        vt = m.text_space_size
        vs = V.speech_vocab_size
        s = num_streams
        per_block = (
            2 * h  # ln1
            + h * 3 * h + 3 * h  # qkv
            + h * h + h  # attn out
            + 2 * h  # ln2
            + h * 4 * h + 4 * h  # mlp in
            + 4 * h * h + h  # mlp out
        )
        expected = (
            vt * h + s * vs * h  # embeddings
            + 2 * per_block
            + 2 * h  # final norm
            + h * vt + vt  # text head
            + s * (h * vs + vs)  # speech heads
        )
        assert m.parameter_count() == expected

    def test_all_parameters_finite(self):
        m = tiny_model(3, V)
        assert all(torch.isfinite(p).all() for p in m.parameters())


class TestForward:
    def test_output_shapes(self):
        m = tiny_model(2, V)
        seq = random_sequence(10, 2)
        logits = m(seq)
        assert len(logits) == 10
        assert logits.text.shape == (10, V.text_vocab_size)
        assert len(logits.speech) == 2
        assert logits.speech[0].shape == (10, V.speech_vocab_size)
        frame = logits[3]
        assert frame.text_logits.shape == (V.text_vocab_size,)
        assert len(frame.speech_logits) == 2

    def test_causality(self):
        m = tiny_model(1, V, num_layers=2)
        seq = random_sequence(12, 1, seed=1)
        base = m(seq)
        for t in (3, 7, 10):
            perturbed = list(seq.text_stream)
            perturbed[t + 1] = (perturbed[t + 1] + 1) % V.text_vocab_size
            speech = [list(s) for s in seq.speech_streams]
            speech[0][t + 1] = (speech[0][t + 1] + 3) % V.speech_vocab_size
            other = m(
                MultiStreamSequence(tuple(perturbed), (tuple(speech[0]),))
            )
            assert torch.equal(base.text[: t + 1], other.text[: t + 1])
            assert torch.equal(base.speech[0][: t + 1], other.speech[0][: t + 1])
            assert not torch.equal(base.text[t + 1 :], other.text[t + 1 :])

    def test_embedding_sum_probe(self):
        m = tiny_model(2, V)
        seq = random_sequence(6, 2, seed=2)
        x = m.embed_sequence(seq)
        for t in range(6):
            expected = (
                m.text_embedding.weight[seq.text_stream[t]]
                + m.speech_embeddings[0].weight[seq.speech_streams[0][t]]
                + m.speech_embeddings[1].weight[seq.speech_streams[1][t]]
                + m.positions[t]
            )
            assert torch.equal(x[t], expected)

    def test_determinism(self):
        m = tiny_model(1, V)
        seq = random_sequence(8, 1)
        a, b = m(seq), m(seq)
        assert torch.equal(a.text, b.text)
        assert torch.equal(a.speech[0], b.speech[0])

    def test_finite_at_max_context(self):
        m = tiny_model(1, V, max_context=128)
        seq = random_sequence(128, 1, seed=3)
        logits = m(seq)
        assert torch.isfinite(logits.text).all()
        assert torch.isfinite(logits.speech[0]).all()

    def test_context_overflow(self):
        m = tiny_model(1, V, max_context=8)
        with pytest.raises(ContextOverflowError):
            m(random_sequence(9, 1))

    def test_stream_count_mismatch(self):
        m = tiny_model(2, V)
        with pytest.raises(ValueError):
            m(random_sequence(4, 1))

    def test_head_independence(self):
        m = tiny_model(2, V)
        seq = random_sequence(5, 2)
        base = m(seq)
        with torch.no_grad():
            m.speech_heads[1].weight.zero_()
            m.speech_heads[1].bias.zero_()
        after = m(seq)
        assert torch.equal(base.text, after.text)
        assert torch.equal(base.speech[0], after.speech[0])
        assert not torch.equal(base.speech[1], after.speech[1])
        assert torch.all(after.speech[1] == 0)


class TestForwardCom:
    def test_shapes_over_union_vocab(self):
        m = tiny_model(0, V)
        logits = m.forward_com([1, 2, 3, 20, 30])
        assert logits.shape == (5, V.union_vocab_size)

    def test_causality(self):
        m = tiny_model(0, V)
        tokens = list(range(10))
        base = m.forward_com(tokens)
        tokens[6] = 39
        other = m.forward_com(tokens)
        assert torch.equal(base[:6], other[:6])
        assert not torch.equal(base[6:], other[6:])

    def test_finite_at_max_context(self):
        m = tiny_model(0, V, max_context=256)
        rng = np.random.default_rng(4)
        tokens = [int(t) for t in rng.integers(0, V.union_vocab_size, 256)]
        assert torch.isfinite(m.forward_com(tokens)).all()

    def test_mode_mixups_rejected(self):
        with pytest.raises(ValueError):
            tiny_model(0, V)(random_sequence(4, 1))
        with pytest.raises(ValueError):
            tiny_model(1, V).forward_com([1, 2, 3])


class TestDecodeSession:
    def test_prefill_matches_forward(self):
        m = tiny_model(2, V, num_layers=2)
        seq = random_sequence(9, 2, seed=5)
        frame = m.session().prefill(seq)
        full = m(seq)
        assert torch.equal(frame.text_logits, full.text[-1])
        assert all(
            torch.equal(frame.speech_logits[s], full.speech[s][-1]) for s in range(2)
        )

    def test_steps_match_full_recompute(self):
        m = tiny_model(2, V, num_layers=2)
        seq = random_sequence(4, 2, seed=6)
        session = m.session()
        frame = session.prefill(seq)
        text = list(seq.text_stream)
        speech = [list(s) for s in seq.speech_streams]
        rng = np.random.default_rng(7)
        for _ in range(6):
            t = int(rng.integers(0, V.text_vocab_size))
            ss = [int(rng.integers(0, V.speech_vocab_size)) for _ in range(2)]
            frame = session.step(t, ss)
            text.append(t)
            for s, tok in zip(speech, ss):
                s.append(tok)
            full = m(MultiStreamSequence(tuple(text), tuple(tuple(s) for s in speech)))
            assert torch.allclose(frame.text_logits, full.text[-1], atol=1e-12, rtol=0)
            for s in range(2):
                assert torch.allclose(
                    frame.speech_logits[s], full.speech[s][-1], atol=1e-12, rtol=0
                )

    def test_com_steps_match_full_recompute(self):
        m = tiny_model(0, V, num_layers=2)
        session = m.session()
        tokens = [3, 18, 25, 1]
        logits = session.prefill_com(tokens)
        for nxt in (7, 30, 12):
            logits = session.step_com(nxt)
            tokens.append(nxt)
            full = m.forward_com(tokens)
            assert torch.allclose(logits, full[-1], atol=1e-12, rtol=0)

    def test_step_past_context_raises(self):
        m = tiny_model(1, V, max_context=4)
        session = m.session()
        session.prefill(random_sequence(4, 1))
        with pytest.raises(ContextOverflowError):
            session.step(0, [0])

    def test_empty_prompt_rejected(self):
        m = tiny_model(0, V)
        with pytest.raises(ValueError):
            m.session().prefill_com([])


class TestSinusoidal:
    def test_shape_and_range(self):
        table = sinusoidal_positions(32, 16)
        assert table.shape == (32, 16)
        assert torch.all(table <= 1.0) and torch.all(table >= -1.0)

    def test_rows_distinct(self):
        table = sinusoidal_positions(64, 16)
        assert len({tuple(row.tolist()) for row in table}) == 64


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = tiny_model(2, V, num_layers=2)
        path = tmp_path / "model.pt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert loaded.config == m.config
        for (name, pa), (_, pb) in zip(
            m.named_parameters(), loaded.named_parameters()
        ):
            assert torch.equal(pa, pb), name

    def test_round_trip_preserves_forward(self, tmp_path):
        m = tiny_model(1, V)
        path = tmp_path / "model.pt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        seq = random_sequence(6, 1)
        assert torch.equal(m(seq).text, loaded(seq).text)

    def test_mismatched_config_rejected(self, tmp_path):
        m = tiny_model(1, V)
        path = tmp_path / "model.pt"
        save_checkpoint(m, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_config=tiny_config(2, V))

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
