import numpy as np
import pytest

from smartcrop.canvas import init_canvas
from smartcrop.model import (
    DiffusionLM,
    LogitOracle,
    ModelConfig,
    ScriptedOracle,
    TrainingConfig,
    forward,
    load_weights,
    make_training_example,
    masked_eval_loss,
    save_weights,
    train,
)
from smartcrop.neural import OptimizerConfig, gradient_check, row_softmax
from smartcrop.tasks import gen_copyk
from smartcrop.vocab import Vocabulary


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.standard(32)


@pytest.fixture
def tiny(vocab):
    return DiffusionLM(ModelConfig(vocab=vocab, d_model=16, n_layers=2, n_heads=2, max_positions=32), seed=3)


def loss_fn(model, tokens, targets, mask):
    def f(store):
        assert store is model.store
        loss = model.loss_and_grads(tokens, targets, mask)
        return loss, {k: g.copy() for k, g in store.grads.items()}
    return f


def test_full_gradient_check(tiny, vocab):
    rng = np.random.default_rng(0)
    B, L = 2, 9
    tokens = rng.integers(0, vocab.size, (B, L))
    targets = rng.integers(0, vocab.size, (B, L))
    mask = rng.uniform(size=(B, L)) < 0.5
    mask[:, 0] = True
    names = list(tiny.store.params)
    coords = []
    for _ in range(40):
        name = names[rng.integers(len(names))]
        shape = tiny.store.params[name].shape
        coords.append((name, tuple(int(rng.integers(s)) for s in shape)))
    err = gradient_check(loss_fn(tiny, tokens, targets, mask), tiny.store, h=1e-5, coords=coords)
    assert err < 1e-4


def test_protocol_and_logit_shape(tiny, vocab):
    assert isinstance(tiny, LogitOracle)
    c = init_canvas([vocab.id("<copy>"), 12], 7, vocab.mask_id)
    out = tiny.logits(c)
    assert out.shape == (9, vocab.size)
    np.testing.assert_array_equal(out, forward(tiny, c))


def test_attention_is_bidirectional(tiny, vocab):
    # changing a late token must change early logits
    c = init_canvas([12, 13, 14], 5, vocab.mask_id)
    a = tiny.logits(c)
    c.tokens[7] = 20
    c.masked[7] = False
    b = tiny.logits(c)
    assert not np.allclose(a[0], b[0])


def test_batch_rows_are_independent(tiny, vocab):
    rng = np.random.default_rng(1)
    toks = rng.integers(0, vocab.size, (3, 6))
    batch, _ = tiny.forward_batch(toks)
    single, _ = tiny.forward_batch(toks[1:2])
    np.testing.assert_allclose(batch[1], single[0], rtol=1e-12, atol=1e-12)


def test_canvas_too_long(tiny, vocab):
    with pytest.raises(ValueError):
        forward(tiny, init_canvas([12], 40, vocab.mask_id))


def test_training_example_layout(vocab):
    rng = np.random.default_rng(0)
    canvas, targets, mask = make_training_example([20, 21], [9, 10, 11], 6, rng, vocab, mask_ratio=1.0)
    eos = vocab.eos_id
    assert list(targets) == [9, 10, 11, 20, 21, eos, eos, eos, eos]
    assert canvas.prompt_len == 3
    assert mask[3:].all() and not mask[:3].any()
    assert (canvas.tokens[3:] == vocab.mask_id).all()


def test_training_example_mask_ratio_statistics(vocab):
    rng = np.random.default_rng(5)
    fracs = [make_training_example([20], [9], 50, rng, vocab)[2][1:].mean() for _ in range(2000)]
    # t ~ U(0, 1) then Bernoulli(t) per slot: average masked fraction 1/2
    assert np.mean(fracs) == pytest.approx(0.5, abs=0.02)


def test_training_example_validation(vocab):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        make_training_example([20, 21, 22], [9], 2, rng, vocab)
    with pytest.raises(ValueError):
        make_training_example([20], [], 4, rng, vocab)
    with pytest.raises(ValueError):
        make_training_example([20], [9], 4, rng, vocab, mask_ratio=0.0)


def test_training_reduces_loss(vocab):
    model = DiffusionLM(ModelConfig(vocab=vocab, d_model=16, n_layers=1, n_heads=2, max_positions=32), seed=0)
    corpus = gen_copyk(vocab, 0, 64, k_range=(1, 5))
    before = masked_eval_loss(model, corpus, 8, seed=1)
    cfg = TrainingConfig(epochs=8, batch_size=8, l_new=8, seed=0, warmup_steps=5,
                         optimizer=OptimizerConfig(1e-2), log_every=0)
    history = train(model, corpus, cfg)
    after = masked_eval_loss(model, corpus, 8, seed=1)
    assert len(history) == 8 * 8
    assert after < 0.6 * before


def test_training_is_deterministic(vocab):
    corpus = gen_copyk(vocab, 0, 16, k_range=(1, 4))
    cfg = dict(epochs=1, batch_size=4, l_new=6, seed=7, warmup_steps=1, log_every=0)
    runs = []
    for _ in range(2):
        m = DiffusionLM(ModelConfig(vocab=vocab, d_model=8, n_layers=1, n_heads=2, max_positions=16), seed=1)
        runs.append(train(m, corpus, TrainingConfig(**cfg)))
    assert runs[0] == runs[1]


def test_training_rejects_long_answers(vocab):
    m = DiffusionLM(ModelConfig(vocab=vocab, d_model=8, n_layers=1, n_heads=2, max_positions=16), seed=1)
    with pytest.raises(ValueError):
        train(m, gen_copyk(vocab, 0, 4, k_range=(9, 9)), TrainingConfig(l_new=6, log_every=0))


def test_learning_rate_schedule():
    cfg = TrainingConfig(warmup_steps=10, optimizer=OptimizerConfig(1.0), min_lr_ratio=0.1)
    assert cfg.learning_rate(0, 110) == pytest.approx(0.1)
    assert cfg.learning_rate(9, 110) == pytest.approx(1.0)
    assert cfg.learning_rate(10, 110) == pytest.approx(1.0)
    assert cfg.learning_rate(60, 110) == pytest.approx(0.55)
    assert cfg.learning_rate(110, 110) == pytest.approx(0.1)


def test_weights_round_trip(tiny, vocab, tmp_path):
    path = tmp_path / "m.bin"
    save_weights(tiny, path)
    loaded = load_weights(path, expected=tiny.config)
    c = init_canvas([12, 13], 6, vocab.mask_id)
    np.testing.assert_array_equal(tiny.logits(c), loaded.logits(c))
    assert path.read_bytes()[:8] == b"SCDLMW\x00\x00"


def test_weights_rejections(tiny, vocab, tmp_path):
    path = tmp_path / "m.bin"
    save_weights(tiny, path)
    data = path.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="magic"):
        load_weights(tmp_path / "magic.bin")
    (tmp_path / "ver.bin").write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
    with pytest.raises(ValueError, match="version"):
        load_weights(tmp_path / "ver.bin")
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_weights(tmp_path / "short.bin")
    other = ModelConfig(vocab=vocab, d_model=32, n_layers=2, n_heads=2, max_positions=32)
    with pytest.raises(ValueError, match="d_model"):
        load_weights(path, expected=other)
    big = ModelConfig(vocab=Vocabulary.standard(40), d_model=16, n_layers=2, n_heads=2, max_positions=32)
    with pytest.raises(ValueError, match="vocabulary"):
        load_weights(path, expected=big)


def test_scripted_oracle_reproduces_schedule(vocab):
    sched = [0.0, 0.25, 0.5, 1.0]
    o = ScriptedOracle(vocab, sched)
    c = init_canvas([12, 13], 4, vocab.mask_id)
    p = row_softmax(o.logits(c))
    np.testing.assert_allclose(p[2:, vocab.eos_id], sched, atol=1e-12)
    c.tokens[3], c.masked[3] = 25, False
    assert row_softmax(o.logits(c))[3].argmax() == 25


def test_config_validation(vocab):
    with pytest.raises(ValueError):
        ModelConfig(vocab=vocab, d_model=10, n_heads=3)
