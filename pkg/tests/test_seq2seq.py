import numpy as np
import pytest

from dimattn import autodiff as ad
from dimattn.core import DiminishConfig
from dimattn.seq2seq import (
    BOS,
    EOS,
    PAD,
    RESERVED,
    ModelParams,
    TrainConfig,
    TrainingDiverged,
    Vocab,
    decoder_step,
    encode_full,
    evaluate_loss,
    forward_teacher,
    initial_state,
    load_checkpoint,
    make_batch,
    pretrain_then_finetune,
    save_checkpoint,
    teacher_forced_accuracy,
    train,
)
from dimattn.synth import TaskSpec, gen_copy

ATTENTIONS = [DiminishConfig.standard(), DiminishConfig.dim(), DiminishConfig.dydim()]


def tiny_copy(n=60, seed=0):
    spec = TaskSpec(kind="copy", vocab_size=10, min_len=3, max_len=5, delimiters=False, n_train=n, n_val=10, n_test=10, seed=seed)
    corpus = gen_copy(spec)
    return corpus, [(i.source, i.target) for i in corpus.train]


class TestVocab:
    def test_reserved_ids(self):
        v = Vocab(["x"])
        assert v.itos[: len(RESERVED)] == list(RESERVED)
        assert (PAD, BOS, EOS) == (0, 1, 2)
        assert v.encode(["x"]) == [4]

    def test_unknown(self):
        v = Vocab()
        assert v.encode(["?"], strict=False) == [3]
        with pytest.raises(KeyError):
            v.encode(["?"])

    def test_add_is_idempotent(self):
        v = Vocab()
        assert v.add("a") == v.add("a")
        assert len(v) == 5


class TestBatch:
    def test_padding_and_shift(self):
        b = make_batch([([5, 6, 7], [8]), ([5], [9, 9])])
        assert b.src.tolist() == [[5, 6, 7], [5, 0, 0]]
        assert b.tgt_in.tolist() == [[BOS, 8, PAD], [BOS, 9, 9]]
        assert b.tgt_out.tolist() == [[8, EOS, PAD], [9, 9, EOS]]

    def test_empty_source(self):
        with pytest.raises(ValueError):
            make_batch([([], [1])])


class TestInferenceMatchesTraining:
    @pytest.mark.parametrize("att", ATTENTIONS, ids=lambda a: a.spec())
    def test_teacher_logits_equal_stepwise_decoder(self, att):
        params = ModelParams.init(12, d=6, seed=1, scale=0.8)
        src, tgt = [4, 7, 9, 5, 11], [6, 8, 10]
        P = {k: ad.Tensor(v) for k, v in params.arrays.items()}
        logits, raws, effs = forward_teacher(P, make_batch([(src, tgt)]), att)
        z = logits.data[0]
        ref = z - np.log(np.exp(z - z.max(-1, keepdims=True)).sum(-1, keepdims=True)) - z.max(-1, keepdims=True)
        enc = encode_full(params, src)
        state = initial_state(params, enc)
        for t, tok in enumerate([BOS] + tgt):
            logp, state, raw, eff = decoder_step(params, enc, state, [tok], att)
            np.testing.assert_allclose(logp[0], ref[t], atol=1e-10)
            np.testing.assert_allclose(eff[0], effs[t].data[0], atol=1e-12)

    def test_padding_does_not_change_logits(self):
        params = ModelParams.init(12, d=6, seed=2)
        P = {k: ad.Tensor(v) for k, v in params.arrays.items()}
        alone = forward_teacher(P, make_batch([([4, 5], [6])]), ATTENTIONS[2])[0].data[0]
        padded = forward_teacher(P, make_batch([([4, 5], [6]), ([7, 8, 9, 10], [6])]), ATTENTIONS[2])[0].data[0]
        np.testing.assert_allclose(alone, padded, atol=1e-12)

    def test_out_of_vocabulary_source(self):
        params = ModelParams.init(8, d=4)
        with pytest.raises(KeyError):
            encode_full(params, [3, 9])


class TestTraining:
    def test_loss_decreases_and_is_deterministic(self):
        corpus, pairs = tiny_copy()
        cfg = TrainConfig(lr=5e-3, batch_size=16, epochs=6, d=16, seed=3)
        p1, l1 = train(cfg, pairs, len(corpus.vocab))
        p2, l2 = train(cfg, pairs, len(corpus.vocab))
        assert l1 == l2
        assert l1[-1] < l1[0]
        assert all(np.array_equal(p1[k], p2[k]) for k in p1.arrays)

    def test_float64_close_to_float32(self):
        corpus, pairs = tiny_copy(20)
        base = TrainConfig(lr=1e-3, batch_size=10, epochs=1, d=8)
        _, l32 = train(base, pairs, len(corpus.vocab))
        _, l64 = train(TrainConfig(**{**base.__dict__, "dtype": "float64"}), pairs, len(corpus.vocab))
        assert l32[0] == pytest.approx(l64[0], rel=1e-4)

    def test_early_stopping_restores_best(self):
        corpus, pairs = tiny_copy()
        val = [(i.source, i.target) for i in corpus.val]
        cfg = TrainConfig(lr=5e-3, batch_size=16, d=16, patience=1, min_delta=0.5)
        seen = []
        params, losses = train(cfg, pairs, len(corpus.vocab), epochs=20, val=val, log=lambda e, tl, vl: seen.append(vl))
        assert len(losses) < 20
        best = min(seen)
        assert evaluate_loss(params, val, cfg.attention) == pytest.approx(best, rel=1e-5)

    def test_plateau_on_training_loss_without_val(self):
        corpus, pairs = tiny_copy(20)
        cfg = TrainConfig(lr=0.0, batch_size=10, d=8, patience=2)
        _, losses = train(cfg, pairs, len(corpus.vocab), epochs=10)
        # the first epoch sets the reference, two flat epochs exhaust patience
        assert len(losses) == 3

    def test_pretrain_then_finetune_lengths(self):
        corpus, pairs = tiny_copy(20)
        cfg = TrainConfig(lr=1e-3, batch_size=10, epochs=4, d=8, attention="dim:log", finetune_fraction=0.25)
        _, losses = pretrain_then_finetune(cfg, pairs, len(corpus.vocab))
        assert len(losses) == 4

    def test_accuracy_in_unit_interval(self):
        corpus, pairs = tiny_copy(20)
        params = ModelParams.init(len(corpus.vocab), d=8)
        acc = teacher_forced_accuracy(params, pairs, ATTENTIONS[1])
        assert 0.0 <= acc <= 1.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        corpus, pairs = tiny_copy(10)
        params = ModelParams.init(len(corpus.vocab), d=8)
        params.arrays["out_b"][0] = np.inf
        with pytest.raises(TrainingDiverged):
            train(TrainConfig(d=8, epochs=1), pairs, len(corpus.vocab), params=params)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train(TrainConfig(), [], 10)

    @pytest.mark.parametrize("kw", [{"lr": -1}, {"dtype": "float16"}, {"patience": 0}, {"finetune_fraction": 2.0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        vocab = Vocab(["a", "b"])
        params = ModelParams.init(len(vocab), d=4, seed=5)
        save_checkpoint(tmp_path / "ck.json", params, vocab, {"seed": 5})
        loaded, v2, config = load_checkpoint(tmp_path / "ck.json")
        assert v2 == vocab and config == {"seed": 5}
        assert all(np.array_equal(loaded[k], params[k]) for k in params.arrays)

    def test_vocab_size_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "ck.json", ModelParams.init(9, d=4), Vocab(["a"]))

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x.json")
