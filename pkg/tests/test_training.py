import math
import random

import numpy as np
import pytest

from fewner.checkpoint import LINEAR, PROTOTYPE
from fewner.corpus import LabelSet, TaggedCorpus, TokenSequence, parse_conll
from fewner.encoder import encode, encode_backward, init_encoder
from fewner.errors import DataError, NumericError
from fewner.heads import cross_entropy, init_linear_head, linear_backward, linear_forward
from fewner.training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    build_vocabulary,
    generate_soft_labels,
    init_optimizer,
    load_config,
    lr_at,
    pretrain_transfer,
    sample_episode,
    self_train,
    train_linear,
    train_prototype,
)


from builders import word_identity_corpus as _make_corpus


def _tiny_config(**overrides):
    defaults = dict(
        seed=7,
        learning_rate=0.05,
        epochs=3,
        batch_size=8,
        embed_dim=6,
        hidden_dim=10,
        M=2,
        K=2,
        K_prime=2,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestSchedule:
    def _state(self, total, warmup=0.1, base=1e-4):
        return OptimizerState(base_lr=base, warmup_fraction=warmup, total_steps=total)

    def test_ramp_start(self):
        state = self._state(100)
        assert lr_at(state) == 0.0

    def test_ramp_peak_exact(self):
        state = self._state(100)
        state.step = 10
        assert lr_at(state) == 1e-4

    def test_decay_end(self):
        state = self._state(100)
        state.step = 100
        assert lr_at(state) == 0.0

    def test_closed_form_thousand_steps(self):
        base = 3e-3
        state = self._state(1000, base=base)
        expected = {0: 0.0, 100: base, 500: base * 500 / 900, 1000: 0.0}
        for step, want in expected.items():
            state.step = step
            assert lr_at(state) == want

    def test_midway_through_warmup(self):
        state = self._state(1000)
        state.step = 50
        assert lr_at(state) == pytest.approx(5e-5)

    def test_no_warmup(self):
        state = self._state(10, warmup=0.0, base=1.0)
        assert lr_at(state) == 1.0
        state.step = 5
        assert lr_at(state) == 0.5


class TestAdam:
    def test_zero_gradients_fixed_point(self):
        params = {"x": np.array([1.0, -2.0])}
        state = init_optimizer(params, base_lr=0.1, warmup_fraction=0.0, total_steps=10)
        adam_step(state, params, {"x": np.zeros(2)})
        assert np.array_equal(params["x"], [1.0, -2.0])

    def test_first_step_is_signlike(self):
        params = {"x": np.array([0.0])}
        state = init_optimizer(params, base_lr=0.01, warmup_fraction=0.0, total_steps=100)
        adam_step(state, params, {"x": np.array([3.7])})
        assert params["x"][0] == pytest.approx(-0.01, rel=1e-6)

    def test_bitwise_deterministic(self):
        def run():
            rng = np.random.default_rng(5)
            params = {"x": rng.normal(size=4)}
            state = init_optimizer(params, 0.05, 0.1, 50)
            for _ in range(50):
                adam_step(state, params, {"x": np.sin(params["x"])})
            return params["x"]

        assert np.array_equal(run(), run())

    def test_nonfinite_gradient_named(self):
        params = {"blockname": np.zeros(2)}
        state = init_optimizer(params, 0.1, 0.0, 5)
        with pytest.raises(NumericError, match="blockname"):
            adam_step(state, params, {"blockname": np.array([np.nan, 0.0])})

    def test_step_counter_advances(self):
        params = {"x": np.zeros(1)}
        state = init_optimizer(params, 0.1, 0.0, 5)
        adam_step(state, params, {"x": np.ones(1)})
        assert state.step == 1


class TestSampleEpisode:
    def test_budgets_and_disjointness(self):
        corpus = _make_corpus(80, seed=1, types=("A", "B", "C", "D", "E"))
        episode = sample_episode(corpus, 5, 2, 3, seed=3)
        assert len(episode.sampled_types) == 5
        assert len(episode.support) <= 10
        assert len(episode.query) <= 15
        assert not set(episode.support) & set(episode.query)
        for etype in episode.sampled_types:
            assert any(
                any(t.endswith(etype) for t in s.tags) for s in episode.support
            )

    def test_full_type_count(self):
        corpus = _make_corpus(60, seed=2)
        episode = sample_episode(corpus, 2, 2, 2, seed=4)
        assert sorted(episode.sampled_types) == ["LOC", "ORG"]

    def test_deterministic(self):
        corpus = _make_corpus(60, seed=3)
        a = sample_episode(corpus, 2, 2, 3, seed=9)
        b = sample_episode(corpus, 2, 2, 3, seed=9)
        assert a == b

    def test_insufficient_names_type(self):
        corpus = parse_conll("EU B-ORG\n\nx O\ny B-ORG\n\n")
        with pytest.raises(DataError, match="ORG"):
            sample_episode(corpus, 1, 2, 3, seed=0)

    def test_too_many_types_requested(self):
        corpus = _make_corpus(30, seed=4)
        with pytest.raises(DataError):
            sample_episode(corpus, 5, 1, 1, seed=0)


class TestTrainLinear:
    def test_zero_epochs_is_identity(self):
        corpus = _make_corpus(10, seed=5)
        config = _tiny_config(epochs=2)
        init = train_linear(corpus, config)
        resumed = train_linear(corpus, config.with_(epochs=0), init=init)
        assert np.array_equal(resumed.encoder.embedding_table, init.encoder.embedding_table)
        assert np.array_equal(resumed.head.weights, init.head.weights)

    def test_loss_decreases(self):
        corpus = _make_corpus(25, seed=6)
        losses = {}
        train_linear(
            corpus,
            _tiny_config(epochs=11),
            on_epoch=lambda e, loss: losses.__setitem__(e, loss),
        )
        assert losses[10] < losses[0]

    def test_bitwise_deterministic(self):
        corpus = _make_corpus(15, seed=7)
        a = train_linear(corpus, _tiny_config())
        b = train_linear(corpus, _tiny_config())
        assert np.array_equal(a.encoder.embedding_table, b.encoder.embedding_table)
        assert np.array_equal(a.encoder.context_weights, b.encoder.context_weights)
        assert np.array_equal(a.head.weights, b.head.weights)
        assert np.array_equal(a.head.bias, b.head.bias)

    def test_freeze_encoder(self):
        corpus = _make_corpus(10, seed=8)
        config = _tiny_config(freeze_encoder=True, epochs=2)
        model = train_linear(corpus, config)
        fresh = init_encoder(
            build_vocabulary(corpus), config.embed_dim, config.hidden_dim, config.seed
        )
        assert np.array_equal(model.encoder.embedding_table, fresh.embedding_table)
        head0 = init_linear_head(
            len(corpus.labels.tag_vocabulary), config.hidden_dim, config.seed + 1
        )
        assert not np.array_equal(model.head.weights, head0.weights)

    def test_five_shot_preset(self):
        config = TrainConfig.five_shot(seed=1)
        assert config.batch_size == 4
        assert config.learning_rate == 1e-4
        assert (config.K, config.K_prime) == (2, 3)
        assert config.epochs == 10

    def test_empty_corpus_rejected(self):
        corpus = parse_conll("")
        with pytest.raises(DataError):
            train_linear(corpus, _tiny_config())


class TestFullBatchDescent:
    def test_plain_gd_strictly_decreases_loss(self):
        corpus = _make_corpus(2, seed=9)
        tags = corpus.labels.tag_vocabulary
        tag_index = {t: i for i, t in enumerate(tags)}
        encoder = init_encoder(build_vocabulary(corpus), 5, 8, seed=2)
        head = init_linear_head(len(tags), 8, seed=3)

        def full_batch():
            loss = 0.0
            grads = {k: np.zeros_like(v) for k, v in encoder.arrays().items()}
            head_grads = {k: np.zeros_like(v) for k, v in head.arrays().items()}
            count = 0
            for sent in corpus.sentences:
                reprs = encode(encoder, sent)
                upstream = np.zeros_like(reprs)
                for j, tag in enumerate(sent.tags):
                    target = np.zeros(len(tags))
                    target[tag_index[tag]] = 1.0
                    loss += cross_entropy(linear_forward(head, reprs[j]), target)
                    d_w, d_b, d_z = linear_backward(head, reprs[j], target)
                    head_grads["weights"] += d_w
                    head_grads["bias"] += d_b
                    upstream[j] = d_z
                    count += 1
                enc = encode_backward(encoder, sent, upstream)
                for k, v in enc.arrays().items():
                    grads[k] += v
            return loss / count, grads, head_grads, count

        lr = 1e-2
        prev, grads, head_grads, count = full_batch()
        for _ in range(20):
            for k, v in encoder.arrays().items():
                v -= lr * grads[k] / count
            for k, v in head.arrays().items():
                v -= lr * head_grads[k] / count
            loss, grads, head_grads, count = full_batch()
            assert loss < prev
            prev = loss


class TestTrainPrototype:
    def test_zero_encoder_gives_log_uniform_loss(self):
        corpus = _make_corpus(8, seed=10, types=("LOC",))
        config = _tiny_config(M=1, K=2, K_prime=2, epochs=1)
        zero = init_encoder(build_vocabulary(corpus), 6, 10, seed=0)
        for arr in zero.arrays().values():
            arr[:] = 0.0
        losses = []
        train_prototype(
            corpus, config, init=zero, on_epoch=lambda e, loss: losses.append(loss)
        )
        # every repr is identical, so every episode's loss is ln(#labels)
        # with labels {O, B-LOC}
        assert losses[0] == pytest.approx(math.log(2), abs=1e-9)

    def test_one_step_changes_encoder(self):
        corpus = _make_corpus(20, seed=11)
        config = _tiny_config(epochs=1)
        model = train_prototype(corpus, config)
        fresh = init_encoder(
            build_vocabulary(corpus), config.embed_dim, config.hidden_dim, config.seed
        )
        assert not np.array_equal(model.encoder.embedding_table, fresh.embedding_table)
        assert model.head_kind == PROTOTYPE
        assert model.head is None

    def test_bitwise_deterministic(self):
        corpus = _make_corpus(20, seed=12)
        a = train_prototype(corpus, _tiny_config())
        b = train_prototype(corpus, _tiny_config())
        assert np.array_equal(a.encoder.embedding_table, b.encoder.embedding_table)
        assert np.array_equal(a.encoder.context_weights, b.encoder.context_weights)

    def test_m_clamped_to_type_count(self):
        corpus = _make_corpus(20, seed=13)
        model = train_prototype(corpus, _tiny_config(M=5, epochs=1))
        assert model.head_kind == PROTOTYPE

    def test_freeze_rejected(self):
        corpus = _make_corpus(10, seed=14)
        with pytest.raises(ValueError):
            train_prototype(corpus, _tiny_config(freeze_encoder=True))


class TestPretrainTransfer:
    def test_stage2_starts_from_stage1_encoder(self):
        source = _make_corpus(20, seed=15, types=("FINEA", "FINEB"))
        target = _make_corpus(12, seed=16)
        config = _tiny_config(scheme="lc+nsp", epochs=0)
        source_config = _tiny_config(epochs=2)
        transferred = pretrain_transfer(source, target, config, source_config=source_config)
        stage1 = train_linear(source, source_config)
        assert np.array_equal(
            transferred.encoder.embedding_table, stage1.encoder.embedding_table
        )
        assert np.array_equal(
            transferred.encoder.context_weights, stage1.encoder.context_weights
        )

    def test_stage2_head_fresh_and_sized_for_target(self):
        source = _make_corpus(20, seed=17, types=("FINEA", "FINEB", "FINEC"))
        target = _make_corpus(12, seed=18)
        config = _tiny_config(scheme="lc+nsp", epochs=0)
        transferred = pretrain_transfer(
            source, target, config, source_config=_tiny_config(epochs=1)
        )
        want = init_linear_head(
            len(target.labels.tag_vocabulary),
            transferred.encoder.hidden_dim,
            config.seed + 1,
        )
        assert np.array_equal(transferred.head.weights, want.weights)

    def test_prototype_objective(self):
        source = _make_corpus(20, seed=19, types=("FINEA", "FINEB"))
        target = _make_corpus(12, seed=20)
        config = _tiny_config(scheme="proto+nsp", epochs=1)
        model = pretrain_transfer(source, target, config)
        assert model.head_kind == PROTOTYPE


class TestSoftLabels:
    def test_distributions_sum_to_one(self):
        corpus = _make_corpus(10, seed=21)
        teacher = train_linear(corpus, _tiny_config(epochs=1))
        soft = generate_soft_labels(teacher, [("paris", "w1"), ("acme",)])
        for tokens, probs in soft.items:
            assert probs.shape == (len(tokens), len(teacher.labels.tag_vocabulary))
            assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_teacher_uniform(self):
        corpus = _make_corpus(6, seed=22)
        teacher = train_linear(corpus, _tiny_config(epochs=0))
        teacher.head.weights[:] = 0.0
        teacher.head.bias[:] = 0.0
        soft = generate_soft_labels(teacher, [("w0", "w1")])
        n = len(teacher.labels.tag_vocabulary)
        assert np.allclose(soft.items[0][1], 1.0 / n)

    def test_saturated_teacher_near_one_hot(self):
        corpus = _make_corpus(6, seed=23)
        teacher = train_linear(corpus, _tiny_config(epochs=0))
        teacher.head.weights[:] = 0.0
        teacher.head.bias[:] = 0.0
        teacher.head.bias[0] = 50.0
        soft = generate_soft_labels(teacher, [("w0",)])
        assert soft.items[0][1][0, 0] > 0.999999

    def test_prototype_teacher_rejected(self):
        corpus = _make_corpus(10, seed=24)
        teacher = train_prototype(corpus, _tiny_config(epochs=1))
        with pytest.raises(DataError):
            generate_soft_labels(teacher, [("w0",)])


class TestSelfTrain:
    def test_lambda_zero_identity(self):
        corpus = _make_corpus(10, seed=25)
        config = _tiny_config(scheme="lc+st", lambda_u=0.0, epochs=2)
        student = self_train(corpus, [("w0", "w1"), ("paris",)], config)
        plain = train_linear(corpus, config)
        assert np.array_equal(student.encoder.embedding_table, plain.encoder.embedding_table)
        assert np.array_equal(student.head.weights, plain.head.weights)

    def test_empty_unlabeled_identity(self):
        corpus = _make_corpus(10, seed=26)
        config = _tiny_config(scheme="lc+st", epochs=2)
        student = self_train(corpus, [], config)
        plain = train_linear(corpus, config)
        assert np.array_equal(student.head.weights, plain.head.weights)

    def test_student_vocabulary_covers_unlabeled(self):
        corpus = _make_corpus(10, seed=27)
        config = _tiny_config(scheme="lc+st", epochs=1)
        student = self_train(corpus, [("brandnewword", "w0")], config)
        assert "brandnewword" in student.encoder.vocab

    def test_respects_init_encoder(self):
        corpus = _make_corpus(10, seed=28)
        config = _tiny_config(scheme="lc+st", epochs=0)
        pre = init_encoder(build_vocabulary(corpus), 6, 10, seed=99)
        student = self_train(corpus, [("w0",)], config, init=pre)
        assert student.encoder.vocab == pre.vocab

    def test_deterministic(self):
        corpus = _make_corpus(10, seed=29)
        config = _tiny_config(scheme="lc+st", epochs=2)
        unlabeled = [("w0", "paris", "w2"), ("acme", "w1")]
        a = self_train(corpus, unlabeled, config)
        b = self_train(corpus, unlabeled, config)
        assert np.array_equal(a.head.weights, b.head.weights)
        assert np.array_equal(a.encoder.embedding_table, b.encoder.embedding_table)


class TestConfigFile:
    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"seed": 3, "learning_rate": 0.01, "scheme": "lc+st"}')
        config = load_config(path)
        assert config.seed == 3
        assert config.learning_rate == 0.01
        assert config.scheme == "lc+st"
        assert config.lambda_u == 0.5

    def test_seed_mandatory(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"learning_rate": 0.01}')
        with pytest.raises(DataError, match="seed"):
            load_config(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"seed": 1, "learning_rte": 0.01}')
        with pytest.raises(DataError, match="learning_rte"):
            load_config(path)

    def test_bad_scheme_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"seed": 1, "scheme": "magic"}')
        with pytest.raises(DataError):
            load_config(path)
