import math

import numpy as np
import pytest

from moocdrop import autodiff as ad
from moocdrop.autodiff import Tensor
from moocdrop.errors import InputError
from moocdrop.ngram_embed import (
    LOG_CLAMP,
    NGramEmbeddingModel,
    NGramPretrainConfig,
    context_probabilities,
    encode,
    export_embeddings,
    load_ngram_model,
    save_ngram_model,
    train_ngram_embeddings,
    window_loss,
    window_reconstruction_loss,
    _batch_context,
    _flatten_corpus,
)

from gradcheck import finite_diff, assert_grads_close


def make_model(rng, n=1, m=3):
    V = 10 ** n
    return NGramEmbeddingModel(
        n=n, embed_dim=m,
        W_c=rng.standard_normal((m, V)),
        b_c=rng.standard_normal(m),
        W_o=rng.standard_normal((V, m)),
        b_o=rng.standard_normal(V),
    )


def scalar_window_loss_oracle(model, seq, t, w):
    """Pure-python recomputation of the windowed two-sided objective."""
    V = 10 ** model.n
    u = [model.b_c[k] + model.W_c[k][seq[t]] for k in range(model.embed_dim)]
    v = [model.b_o[j] + sum(model.W_o[j][k] * u[k] for k in range(model.embed_dim))
         for j in range(V)]
    mx = max(v)
    exps = [math.exp(x - mx) for x in v]
    Z = sum(exps)
    p = [e / Z for e in exps]
    total = 0.0
    for i in range(-w, w + 1):
        if i == 0 or not 0 <= t + i < len(seq):
            continue
        g = seq[t + i]
        for j in range(V):
            x_j = 1.0 if j == g else 0.0
            total += -x_j * math.log(max(p[j], LOG_CLAMP))
            total += -(1.0 - x_j) * math.log(max(1.0 - p[j], LOG_CLAMP))
    return total


class TestEncode:
    def test_zero_weights_return_bias(self):
        model = NGramEmbeddingModel(
            n=1, embed_dim=2,
            W_c=np.zeros((2, 10)), b_c=np.array([1.0, 2.0]),
            W_o=np.zeros((10, 2)), b_o=np.zeros(10),
        )
        for idx in (0, 5, 9):
            assert np.array_equal(encode(model, idx), [1.0, 2.0])

    def test_matches_dense_one_hot_path(self):
        rng = np.random.default_rng(3)
        model = make_model(rng, n=2, m=4)
        for idx in (0, 17, 99):
            one_hot = np.zeros(100)
            one_hot[idx] = 1.0
            dense = model.W_c @ one_hot + model.b_c
            assert np.allclose(encode(model, idx), dense, atol=1e-15, rtol=0)

    def test_distinct_columns_distinct_codes(self):
        rng = np.random.default_rng(4)
        model = make_model(rng)
        assert not np.array_equal(encode(model, 0), encode(model, 1))

    def test_out_of_range_index(self):
        rng = np.random.default_rng(5)
        model = make_model(rng)
        with pytest.raises(IndexError):
            encode(model, 10)


class TestWindowLoss:
    def test_uniform_prediction_single_context(self):
        # V = 10, uniform softmax, one context target:
        # loss = -ln(0.1) - 9 ln(0.9)
        model = NGramEmbeddingModel(
            n=1, embed_dim=2,
            W_c=np.zeros((2, 10)), b_c=np.zeros(2),
            W_o=np.zeros((10, 2)), b_o=np.zeros(10),
        )
        got = window_loss(model, [3, 7], t=0, window=1)
        want = -math.log(0.1) - 9.0 * math.log(0.9)
        assert got == pytest.approx(want, abs=1e-12)

    def test_near_one_hot_prediction_loss_vanishes(self):
        b_o = np.zeros(10)
        b_o[7] = 60.0  # softmax is numerically a point mass at 7
        model = NGramEmbeddingModel(
            n=1, embed_dim=2,
            W_c=np.zeros((2, 10)), b_c=np.zeros(2),
            W_o=np.zeros((10, 2)), b_o=b_o,
        )
        assert window_loss(model, [3, 7], t=0, window=1) < 1e-8

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(15):
            model = make_model(rng, n=1, m=3)
            seq = rng.integers(0, 10, size=6).tolist()
            t = int(rng.integers(0, 6))
            got = window_loss(model, seq, t, window=1)
            want = scalar_window_loss_oracle(model, seq, t, 1)
            assert got == pytest.approx(want, abs=1e-12)

    def test_boundary_positions_skip_missing_context(self):
        rng = np.random.default_rng(12)
        model = make_model(rng)
        seq = [1, 2, 3]
        # position 0 has only a right context; position 2 only a left one
        assert window_loss(model, seq, 0, window=1) > 0
        single = window_loss(model, [9, 2], 0, window=5)  # one in-range target
        assert single == pytest.approx(scalar_window_loss_oracle(model, [9, 2], 0, 5), abs=1e-12)

    def test_position_out_of_range(self):
        rng = np.random.default_rng(13)
        model = make_model(rng)
        with pytest.raises(InputError):
            window_loss(model, [1, 2], 5, window=1)


class TestFusedWindowLoss:
    def _setup_batch(self, rng, V=10, m=3, n_seqs=3):
        corpus = [rng.integers(0, V, size=int(rng.integers(2, 7))).tolist()
                  for _ in range(n_seqs)]
        pos = _flatten_corpus(corpus, V, 1)
        batch = np.arange(pos.tokens.size)
        rows, cols, counts = _batch_context(pos, batch)
        return corpus, pos, rows, cols, counts

    @pytest.mark.parametrize("objective", ["two_sided", "categorical"])
    def test_gradients_match_finite_differences(self, objective):
        rng = np.random.default_rng(21)
        for _ in range(10):
            _, pos, rows, cols, counts = self._setup_batch(rng)
            logits = Tensor(rng.standard_normal((pos.tokens.size, 10)), requires_grad=True)
            logits.zero_grad()
            loss = ad.tmean(window_reconstruction_loss(logits, rows, cols, counts, objective))
            loss.backward()
            analytic = [logits.grad.copy()]

            def f():
                return float(ad.tmean(window_reconstruction_loss(
                    logits, rows, cols, counts, objective)).data)

            numeric = finite_diff(f, [logits.data])
            assert_grads_close(analytic, numeric)

    def test_batched_values_match_reference_window_loss(self):
        rng = np.random.default_rng(22)
        model = make_model(rng, n=1, m=3)
        corpus = [rng.integers(0, 10, size=5).tolist() for _ in range(4)]
        pos = _flatten_corpus(corpus, 10, 2)
        batch = np.arange(pos.tokens.size)
        rows, cols, counts = _batch_context(pos, batch)
        logits = (export_embeddings(model)[pos.tokens]) @ model.W_o.T + model.b_o
        fused = window_reconstruction_loss(Tensor(logits), rows, cols, counts).data
        flat = [(seq, t) for seq in corpus for t in range(len(seq))]
        for k, (seq, t) in enumerate(flat):
            assert fused[k] == pytest.approx(window_loss(model, seq, t, 2), abs=1e-10)


class TestTraining:
    def test_repeated_index_concentrates_probability(self):
        corpus = [[5] * 30]
        config = NGramPretrainConfig(n=1, embed_dim=3, window=1, epochs=50,
                                     lr=0.1, seed=0)
        model = train_ngram_embeddings(corpus, config)
        probs = context_probabilities(model, 5)
        assert probs[5] >= 0.9

    def test_zero_epochs_returns_initialization(self):
        corpus = [[1, 2, 3, 4]]
        config = NGramPretrainConfig(n=1, embed_dim=4, window=1, epochs=0, seed=7)
        model = train_ngram_embeddings(corpus, config)
        rng = np.random.default_rng(7)
        from moocdrop.layers import glorot_uniform

        want_enc = glorot_uniform(rng, 10, 4)
        assert np.array_equal(model.W_c, want_enc.T)
        assert np.array_equal(model.b_c, np.zeros(4))
        assert model.epoch_losses == []

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(33)
        corpus = [rng.integers(0, 10, size=8).tolist() for _ in range(5)]
        config = NGramPretrainConfig(n=1, embed_dim=4, window=2, epochs=3, seed=11)
        m1 = train_ngram_embeddings(corpus, config)
        m2 = train_ngram_embeddings(corpus, config)
        assert np.array_equal(m1.W_c, m2.W_c)
        assert np.array_equal(m1.W_o, m2.W_o)
        assert m1.epoch_losses == m2.epoch_losses

    def test_empty_corpus_rejected(self):
        with pytest.raises(InputError):
            train_ngram_embeddings([], NGramPretrainConfig(n=1))
        with pytest.raises(InputError):
            train_ngram_embeddings([[]], NGramPretrainConfig(n=1))

    def test_loss_decreases_from_first_to_last_epoch(self):
        rng = np.random.default_rng(44)
        corpus = [rng.integers(0, 10, size=12).tolist() for _ in range(6)]
        config = NGramPretrainConfig(n=1, embed_dim=4, window=1, epochs=6,
                                     lr=0.05, seed=3)
        model = train_ngram_embeddings(corpus, config)
        assert model.epoch_losses[-1] <= model.epoch_losses[0] + 1e-6

    def test_objective_is_order_invariant_across_users(self):
        rng = np.random.default_rng(55)
        corpus = [rng.integers(0, 10, size=6).tolist() for _ in range(8)]
        model = make_model(rng, n=1, m=3)

        def full_objective(seqs):
            vals = [window_loss(model, s, t, 2) for s in seqs for t in range(len(s))]
            return sum(vals) / len(vals)

        a = full_objective(corpus)
        b = full_objective(list(reversed(corpus)))
        assert a == pytest.approx(b, abs=1e-10)


def markov_corpus(vocab=100, shift=7, walks=20, length=60):
    """Deterministic first-order chain: each index is always followed by index + shift."""
    seqs = []
    for w in range(walks):
        start = (w * 13) % vocab
        seqs.append([(start + k * shift) % vocab for k in range(length)])
    return seqs


def test_markov_successor_probability_dominates_uniform():
    vocab = 100
    corpus = markov_corpus(vocab=vocab)
    config = NGramPretrainConfig(n=2, embed_dim=16, window=1, epochs=40,
                                 lr=0.01, seed=0)
    model = train_ngram_embeddings(corpus, config)
    # every epoch non-increasing within tolerance
    for prev, cur in zip(model.epoch_losses, model.epoch_losses[1:]):
        assert cur <= prev + 1e-6
    uniform = 1.0 / vocab
    seen = sorted({idx for seq in corpus for idx in seq})
    for a in seen:
        succ = (a + 7) % vocab
        assert context_probabilities(model, a)[succ] >= 10.0 * uniform


class TestExportAndPersistence:
    def test_export_rows_equal_encode(self):
        rng = np.random.default_rng(66)
        model = make_model(rng, n=2, m=5)
        table = export_embeddings(model)
        assert table.shape == (100, 5)
        for j in (0, 42, 99):
            assert np.array_equal(table[j], encode(model, j))

    def test_export_shape_for_default_scale(self):
        rng = np.random.default_rng(67)
        model = NGramEmbeddingModel(
            n=4, embed_dim=64,
            W_c=np.zeros((64, 10000)), b_c=np.zeros(64),
            W_o=np.zeros((10000, 64)), b_o=np.zeros(10000),
        )
        assert export_embeddings(model).shape == (10000, 64)

    def test_save_load_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(68)
        model = make_model(rng, n=1, m=3)
        path = str(tmp_path / "ngram.bin")
        save_ngram_model(model, path)
        loaded = load_ngram_model(path)
        assert loaded.n == model.n and loaded.embed_dim == model.embed_dim
        for name in ("W_c", "b_c", "W_o", "b_o"):
            assert np.array_equal(getattr(loaded, name), getattr(model, name))

    def test_tsv_export(self, tmp_path):
        from moocdrop.ngram_embed import export_embeddings_tsv

        rng = np.random.default_rng(69)
        model = make_model(rng, n=1, m=3)
        path = str(tmp_path / "emb.tsv")
        export_embeddings_tsv(model, path)
        lines = open(path).read().splitlines()
        assert len(lines) == 10
        first = lines[0].split("\t")
        assert first[0] == "0"
        got = np.array([float(x) for x in first[1:]])
        assert np.array_equal(got, encode(model, 0))
