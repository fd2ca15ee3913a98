import math

import numpy as np
import pytest

from nngec.corpus import Vocabulary, build_vocab
from nngec.neural import SGDConfig, grad_check
from nngec.nnglm import (
    GlobalLexiconModel,
    HypothesisScorer,
    Rescaler,
    class_weights,
    cross_entropy_loss,
    fit_weighted_logistic,
    hypothesis_feature,
    precompute_hypothesis_table,
    rescale,
    train_nnglm,
    train_rescaler,
    weighted_logistic_objective,
)

from conftest import toks

SV = Vocabulary(list("abcdef"))
TV = Vocabulary(list("uvwxyz"))


def _model(seed=0, hidden=5):
    rng = np.random.default_rng(seed)
    m = GlobalLexiconModel(SV, TV, hidden, rng=rng)
    for k in m.params:
        m.params[k] = rng.normal(0, 0.7, size=m.params[k].shape)
    return m


def test_zero_output_layer_gives_half():
    m = _model()
    m.params["W2"][:] = 0
    m.params["b2"][:] = 0
    assert np.all(m.word_probs(toks("a b")) == 0.5)


def test_binary_bag():
    m = _model()
    assert np.array_equal(m.word_probs(toks("a a b b b")), m.word_probs(toks("b a")))


def test_forward_matches_direct_formula():
    m = _model(seed=4)
    src = toks("a c zzz")
    s_hat = np.zeros(len(SV))
    for t in set(src):
        s_hat[SV.id(t)] = 1.0
    p = m.params
    o1 = np.tanh(p["W1"] @ s_hat + p["b1"])
    expect = 1.0 / (1.0 + np.exp(-(p["W2"] @ o1 + p["b2"])))
    assert np.allclose(m.word_probs(src), expect, rtol=1e-13, atol=0)
    assert np.all((expect > 0) & (expect < 1))


def test_loss_matches_direct_formula():
    m = _model(seed=2)
    X = m.bag([toks("a b"), toks("c")])
    Y = m.target_indicator([toks("u v"), toks("w")])
    loss, _ = cross_entropy_loss(m.params, X, Y, average=True)
    probs = 1 / (1 + np.exp(-m.logits(X)[0]))
    per_pair = -(Y * np.log(probs) + (1 - Y) * np.log(1 - probs)).sum(axis=1) / len(TV)
    assert loss == pytest.approx(per_pair.mean(), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_random_instances(seed):
    rng = np.random.default_rng(100 + seed)
    m = _model(seed=seed, hidden=int(rng.integers(2, 6)))
    batch = int(rng.integers(1, 5))
    X = (rng.random((batch, len(SV))) < 0.4).astype(float)
    Y = (rng.random((batch, len(TV))) < 0.3).astype(float)
    avg = bool(seed % 2)
    err = grad_check(lambda ps: cross_entropy_loss(ps, X, Y, avg), m.params)
    assert err < 1e-4


def _tiny_pairs():
    return [(toks("a b c"), toks("u v")), (toks("b d"), toks("v w")), (toks("e f a"), toks("x u")), (toks("c d e"), toks("y z w"))]


def test_zero_learning_rate_leaves_params():
    sv = build_vocab([s for s, _ in _tiny_pairs()], 10)
    tv = build_vocab([t for _, t in _tiny_pairs()], 10)
    ref = GlobalLexiconModel(sv, tv, 4, rng=np.random.default_rng(9)).params
    m = train_nnglm(_tiny_pairs(), sv, tv, SGDConfig(0.0, 2, 3), hidden_size=4, seed=9)
    for k in ref:
        assert np.array_equal(m.params[k], ref[k])


def test_loss_non_increasing_first_epochs():
    pairs = _tiny_pairs() * 5
    sv = build_vocab([s for s, _ in pairs], 10)
    tv = build_vocab([t for _, t in pairs], 10)
    m = train_nnglm(pairs, sv, tv, SGDConfig(1.0, 4, 5), hidden_size=8, seed=1)
    h = m.loss_history
    assert all(b <= a * 1.01 for a, b in zip(h, h[1:]))


def test_overfit_single_pair():
    pair = (toks("a b"), toks("u v"))
    sv = build_vocab([pair[0], toks("c d")], 10)
    tv = build_vocab([pair[1], toks("w x y")], 10)
    m = train_nnglm([pair] * 20, sv, tv, SGDConfig(10.0, 5, 200), hidden_size=8, seed=3)
    p = m.word_probs(pair[0])
    assert p[tv.id("u")] > 0.9 and p[tv.id("v")] > 0.9
    assert p[tv.id("x")] < 0.1


def test_save_load(tmp_path):
    m = _model(seed=5)
    r = Rescaler(2.0, -1.0, 10, 8, 2, 0.625, 2.5, 1e-4)
    m.save(tmp_path / "g.bin", r)
    again, r2 = GlobalLexiconModel.load(tmp_path / "g.bin")
    assert r2 == r
    assert np.array_equal(again.word_probs(toks("a d")), m.word_probs(toks("a d")))


def test_class_weights():
    assert class_weights(10, 8, 2) == (0.625, 2.5)
    assert class_weights(12, 6, 6) == (1.0, 1.0)


def test_rescale_map():
    assert rescale(Rescaler(0.0, 0.0), 0.3) == 0.5
    assert rescale(Rescaler(1.0, 0.0), 0.0) == 0.5
    q = rescale(Rescaler(3.0, -1.0), np.linspace(0, 1, 11))
    assert np.all(np.diff(q) > 0)


def test_weighted_fit_matches_reference_optimizer():
    from scipy.optimize import minimize

    rng = np.random.default_rng(0)
    x = rng.random(300) ** 3
    y = (rng.random(300) < 0.2 + 0.6 * x).astype(float)
    m, f1 = len(x), int(y.sum())
    c0, c1 = class_weights(m, m - f1, f1)
    w, b = fit_weighted_logistic(x, y, c0, c1, 1e-2)
    ref = minimize(lambda u: weighted_logistic_objective(u[0], u[1], x, y, c0, c1, 1e-2), [0.0, 0.0], method="BFGS",
                   options={"gtol": 1e-12})
    assert weighted_logistic_objective(w, b, x, y, c0, c1, 1e-2) <= ref.fun + 1e-8
    assert w == pytest.approx(ref.x[0], rel=1e-3) and b == pytest.approx(ref.x[1], rel=1e-3, abs=1e-4)


def test_separable_instances_positive_above_half():
    x = np.array([0.01, 0.02, 0.05, 0.03, 0.2, 0.3])
    y = np.array([0, 0, 0, 0, 1, 1.0])
    c0, c1 = class_weights(6, 4, 2)
    w, b = fit_weighted_logistic(x, y, c0, c1, 1e-4)
    q = Rescaler(w, b).rescale(x)
    assert np.all(q[y == 1] > 0.5)
    assert w > 0


def test_rescaler_on_desk_data(desk_corpus):
    train, dev, _ = desk_corpus
    sv = build_vocab([s for s, _ in train], 2000)
    tv = build_vocab([t for _, t in train], 2000)
    m = train_nnglm(train, sv, tv, SGDConfig(10.0, 100, 5), hidden_size=32, seed=0)
    r = train_rescaler(m, dev[:200])
    assert r.w > 0
    assert r.M == 200 * len(tv) and r.f0 + r.f1 == r.M
    assert (r.c0, r.c1) == class_weights(r.M, r.f0, r.f1)
    p = m.word_probs(dev[0][0])
    assert np.array_equal(np.argsort(p, kind="stable"), np.argsort(r.rescale(p), kind="stable"))


def test_rescaler_rejects_degenerate():
    m = _model()
    with pytest.raises(ValueError):
        train_rescaler(m, [])


def test_hypothesis_feature():
    m = _model(seed=1)
    r = Rescaler(0.0, 0.0)
    tab = precompute_hypothesis_table(m, r, toks("a b"))
    assert hypothesis_feature(tab, TV, ()) == 0.0
    assert hypothesis_feature(tab, TV, toks("u w")) == pytest.approx(2 * math.log(0.5))
    r = Rescaler(2.0, -0.5)
    scorer = HypothesisScorer(m, r)
    src = toks("a b e")
    hyp = toks("u zzz w u")
    q = r.rescale(m.word_probs(src))
    expect = sum(math.log(q[TV.id(t)]) for t in hyp)
    assert scorer.feature(src, hyp) == pytest.approx(expect, rel=1e-12)


def test_precompute_matches_lazy_and_persists(tmp_path):
    m = _model(seed=6)
    r = Rescaler(1.5, 0.2)
    sources = [toks("a b"), toks("c"), toks("d e f")]
    eager = HypothesisScorer(m, r)
    eager.precompute(sources)
    lazy = HypothesisScorer(m, r)
    for s in sources:
        assert np.allclose(eager.table(s), lazy.table(s), rtol=1e-14, atol=0)
    eager.save_tables(tmp_path / "t.bin")
    loaded = HypothesisScorer(m, r)
    loaded.load_tables(tmp_path / "t.bin")
    for s in sources:
        assert np.array_equal(loaded.table(s), eager.table(s))
