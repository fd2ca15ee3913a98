import numpy as np
import pytest

from nngec.decoder import FeatureWeights
from nngec.m2 import extract_edits
from nngec.mert import CandidatePool, interval_scores, line_search, mert, optimize

from conftest import toks

WORDS = list("abcdefg")


def _random_problem(rng, n_sent=12, n_cand=6, dims=3):
    sources, gold, nbests = [], [], []
    for _ in range(n_sent):
        src = tuple(rng.choice(WORDS, 5))
        fix = list(src)
        fix[int(rng.integers(5))] = str(rng.choice(WORDS))
        sources.append(src)
        gold.append([extract_edits(src, fix)])
        cands = {tuple(fix), src}
        while len(cands) < n_cand:
            c = list(src)
            for _ in range(int(rng.integers(1, 3))):
                c[int(rng.integers(5))] = str(rng.choice(WORDS))
            cands.add(tuple(c))
        # a few exactly repeated feature vectors exercise the tie rules
        feats = np.round(rng.normal(0, 1, (len(cands), dims)), 1)
        nbests.append(list(zip(sorted(cands), feats.tolist())))
    return sources, gold, nbests


def _pool(seed, **kw):
    rng = np.random.default_rng(seed)
    sources, gold, nbests = _random_problem(rng, **kw)
    pool = CandidatePool(sources, gold)
    pool.add(nbests)
    return pool, rng


@pytest.mark.parametrize("seed", range(15))
def test_interval_scores_match_dense_grid(seed):
    pool, rng = _pool(seed)
    dims = pool.arrays()[0].shape[1]
    w = rng.normal(0, 1, dims)
    d = rng.normal(0, 1, dims)
    lo, hi, fs = interval_scores(pool, w, d)
    bps = hi[:-1]
    assert np.all(np.diff(bps) > 0)
    reach = float(np.abs(bps).max()) * 1.5 + 1.0 if len(bps) else 5.0
    grid = np.linspace(-reach, reach, 1000)
    grid_f = []
    for g in grid:
        if len(bps) and np.min(np.abs(bps - g)) < 1e-9:
            continue
        k = int(np.searchsorted(bps, g))
        f = pool.f_score(w + g * d)
        assert f == pytest.approx(fs[k], abs=1e-12)
        grid_f.append(f)
    gamma, best = line_search(pool, w, d)
    assert best >= max(grid_f) - 1e-12
    assert pool.f_score(w + gamma * d) == pytest.approx(best, abs=1e-12)


def test_line_search_sign():
    src = toks("a b")
    gold = [[extract_edits(src, toks("a c"))]]
    pool = CandidatePool([src], gold)
    pool.add([[(toks("a c"), [1.0]), (src, [0.0])]])
    gamma, f = line_search(pool, [-1.0], [1.0])
    assert f == 1.0
    assert gamma > 1.0
    gamma, f = line_search(pool, [1.0], [1.0])
    assert (gamma, f) == (0.0, 1.0)


def test_identical_hypotheses_do_not_move():
    src = toks("a b c")
    pool = CandidatePool([src], [[extract_edits(src, toks("a b d"))]])
    pool.add([[(toks("a b d"), [0.3, -1.0]), (toks("a b d"), [2.0, 4.0])]])
    for d in ([1.0, 0.0], [0.0, 1.0], [0.5, -2.0]):
        assert line_search(pool, [0.1, 0.1], d) == (0.0, 1.0)


def test_optimize_never_lowers_pool_score():
    for seed in range(5):
        pool, rng = _pool(50 + seed)
        start = rng.normal(0, 1, 3)
        w, f = optimize(pool, start)
        assert f >= pool.f_score(start)
        assert f == pool.f_score(w)


def _fixed_nbest(nbests):
    def fn(weights, n):
        out = []
        for entries in nbests:
            scored = sorted(entries, key=lambda e: (-weights.dot(e[1]), e[0]))
            out.append(scored[:n])
        return out
    return fn


def test_pool_grows_monotonically():
    rng = np.random.default_rng(4)
    sources, gold, nbests = _random_problem(rng, n_sent=20, n_cand=10)
    init = FeatureWeights(["f0", "f1", "f2"], [0.1, 0.1, 0.1])
    weights, run = mert(sources, gold, _fixed_nbest(nbests), init, iterations=6, restarts=3, nbest_n=3, seed=1)
    assert all(a <= b for a, b in zip(run.pool_sizes, run.pool_sizes[1:]))
    assert sum(abs(v) for v in weights.values) == pytest.approx(1.0)
    assert len(run.seeds) == 3 * run.iteration


def test_junk_feature_gets_small_weight():
    rng = np.random.default_rng(9)
    sources, gold, nbests = [], [], []
    for _ in range(60):
        src = tuple(rng.choice(WORDS, 6))
        fix = list(src)
        fix[int(rng.integers(6))] = "z"
        sources.append(src)
        gold.append([extract_edits(src, fix)])
        cands = [tuple(fix), src] + [tuple(rng.choice(WORDS, 6)) for _ in range(6)]
        entries = []
        for c in cands:
            useful = (1.0 if c == tuple(fix) else 0.0) + rng.normal(0, 0.3)
            entries.append((c, [useful, float(rng.normal(0, 1.0))]))
        nbests.append(entries)
    init = FeatureWeights(["useful", "junk"], [0.1, 0.0])
    weights, _ = mert(sources, gold, _fixed_nbest(nbests), init, iterations=5, restarts=10, nbest_n=4, seed=0)
    assert abs(weights["junk"]) <= 0.05
    assert weights["useful"] > 0


def test_mert_is_deterministic():
    rng = np.random.default_rng(2)
    sources, gold, nbests = _random_problem(rng)
    init = FeatureWeights(["f0", "f1", "f2"], [0.2, 0.0, -0.1])
    a = mert(sources, gold, _fixed_nbest(nbests), init, iterations=3, restarts=4, nbest_n=3, seed=7)
    b = mert(sources, gold, _fixed_nbest(nbests), init, iterations=3, restarts=4, nbest_n=3, seed=7)
    assert a[0].values == b[0].values
    assert a[1].log_lines() == b[1].log_lines()
    assert a[1].seeds == b[1].seeds


def test_returns_best_redecoded_iteration():
    rng = np.random.default_rng(3)
    sources, gold, nbests = _random_problem(rng, n_sent=15, n_cand=8)
    init = FeatureWeights(["f0", "f1", "f2"], [0.3, 0.3, 0.3])
    fn = _fixed_nbest(nbests)
    weights, run = mert(sources, gold, fn, init, iterations=4, restarts=2, nbest_n=2, seed=0)
    pool = CandidatePool(sources, gold)
    pool.add(fn(weights, 1))
    assert pool.f_score(weights.values) == pytest.approx(max(run.dev_f))


def test_empty_dev_set_rejected():
    with pytest.raises(ValueError):
        mert([], [], lambda w, n: [], FeatureWeights(["a"], [1.0]))
    with pytest.raises(ValueError):
        CandidatePool([], [])
