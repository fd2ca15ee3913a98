"""Minimum error rate training on corpus F0.5.

Each iteration decodes n-best lists with the current weights, merges them
into a growing pool, and maximizes pool F0.5 by exact line searches along
coordinate directions, from the current point and from random restarts.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .decoder import FeatureWeights
from .m2 import extract_edits, precision_recall_f, sentence_stats

log = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-12


class CandidatePool:
    """Merged n-best candidates with their per-sentence edit statistics."""

    def __init__(self, sources, gold, beta=0.5):
        if not sources:
            raise ValueError("empty development set")
        self.sources = [tuple(s) for s in sources]
        self.gold = gold
        self.beta = beta
        self.candidates = [dict() for _ in sources]  # (target, features) -> stats
        self._stat_cache = [dict() for _ in sources]
        self._arrays = None

    def __len__(self):
        return sum(len(c) for c in self.candidates)

    def stats_for(self, sid, target):
        cache = self._stat_cache[sid]
        st = cache.get(target)
        if st is None:
            st = sentence_stats(extract_edits(self.sources[sid], target), self.gold[sid], self.beta)
            cache[target] = st
        return st

    def add(self, nbests):
        """Merge per-sentence lists of (target, features); returns #new entries."""
        added = 0
        for sid, entries in enumerate(nbests):
            bucket = self.candidates[sid]
            for target, feats in entries:
                key = (tuple(target), tuple(float(x) for x in feats))
                if key not in bucket:
                    bucket[key] = self.stats_for(sid, key[0])
                    added += 1
        if added:
            self._arrays = None
        return added

    def arrays(self):
        """Stacked (features, stats, sentence ids, segment starts).

        Within a sentence candidates are ordered by target string, so the
        lowest index breaks exact score ties the same way the decoder does.
        """
        if self._arrays is None:
            feats, stats, sids, starts = [], [], [], []
            for sid, bucket in enumerate(self.candidates):
                starts.append(len(sids))
                for (target, f), st in sorted(bucket.items(), key=lambda kv: (kv[0][0], kv[0][1])):
                    feats.append(f)
                    stats.append(st)
                    sids.append(sid)
            self._arrays = (
                np.asarray(feats, dtype=np.float64),
                np.asarray(stats, dtype=np.int64).reshape(-1, 3),
                np.asarray(sids, dtype=np.int64),
                np.asarray(starts, dtype=np.int64),
            )
        return self._arrays

    def best_indices(self, weights):
        feats, _, sids, starts = self.arrays()
        scores = feats @ np.asarray(weights, dtype=np.float64)
        order = np.lexsort((np.arange(len(scores)), -scores, sids))
        first = np.ones(len(order), dtype=bool)
        first[1:] = sids[order][1:] != sids[order][:-1]
        return order[first]

    def f_score(self, weights):
        _, stats, _, _ = self.arrays()
        tp, fp, fn = stats[self.best_indices(weights)].sum(axis=0)
        return precision_recall_f(int(tp), int(fp), int(fn), self.beta)[2]


def _segment_first(mask, sids, n_sent):
    """Index of the first True per sentence (or -1)."""
    idx = np.flatnonzero(mask)
    out = np.full(n_sent, -1, dtype=np.int64)
    if len(idx):
        s = sids[idx]
        keep = np.ones(len(idx), dtype=bool)
        keep[1:] = s[1:] != s[:-1]
        out[s[keep]] = idx[keep]
    return out


def envelope_events(a, b, sids, starts):
    """Upper envelopes of the lines a + gamma * b, one per sentence.

    Candidates are stacked sentence by sentence with segment offsets
    ``starts``.  Returns the starting candidate per sentence (best as
    gamma -> -inf) and a list of (gamma, sentence, old, new) switch events.
    """
    n_sent = len(starts)
    seg_min = np.minimum.reduceat(b, starts)
    on_min = b == seg_min[sids]
    seg_a = np.maximum.reduceat(np.where(on_min, a, -np.inf), starts)
    cur = _segment_first(on_min & (a == seg_a[sids]), sids, n_sent)
    start = cur.copy()
    cur_x = np.full(n_sent, -np.inf)
    events = []
    active = np.ones(n_sent, dtype=bool)
    while active.any():
        cb = b[cur[sids]]
        ca = a[cur[sids]]
        steeper = (b > cb) & active[sids]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(steeper, (ca - a) / (b - cb), np.inf)
        x = np.where(steeper, np.maximum(x, cur_x[sids]), np.inf)
        seg_x = np.minimum.reduceat(x, starts)
        hit = steeper & (x == seg_x[sids])
        seg_b = np.maximum.reduceat(np.where(hit, b, -np.inf), starts)
        hit &= b == seg_b[sids]
        nxt = _segment_first(hit, sids, n_sent)
        moved = nxt >= 0
        for s in np.flatnonzero(moved):
            events.append((seg_x[s], s, cur[s], nxt[s]))
        cur_x[moved] = seg_x[moved]
        cur[moved] = nxt[moved]
        active = moved
    return start, events


def interval_scores(pool, weights, direction):
    """Pool F0.5 on every interval of the line ``weights + gamma * direction``.

    Returns (lo, hi, F) arrays; interval k is (lo[k], hi[k]) and the first
    and last intervals are unbounded.
    """
    feats, stats, sids, starts = pool.arrays()
    w = np.asarray(weights, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    a = feats @ w
    b = feats @ d
    start, events = envelope_events(a, b, sids, starts)
    base = stats[start].sum(axis=0).astype(np.int64)
    if events:
        events.sort(key=lambda e: e[0])
        xs = np.array([e[0] for e in events])
        old = np.array([e[2] for e in events])
        new = np.array([e[3] for e in events])
        cum = np.cumsum(stats[new] - stats[old], axis=0)
        # keep only the last event at each distinct breakpoint
        last = np.ones(len(xs), dtype=bool)
        last[:-1] = xs[1:] != xs[:-1]
        bps = xs[last]
        interval_stats = np.vstack([base[None, :], base + cum[last]])
    else:
        bps = np.zeros(0)
        interval_stats = base[None, :]
    fs = np.array([precision_recall_f(int(tp), int(fp), int(fn), pool.beta)[2] for tp, fp, fn in interval_stats])
    lo = np.concatenate([[-np.inf], bps])
    hi = np.concatenate([bps, [np.inf]])
    return lo, hi, fs


def line_search(pool, weights, direction):
    """Best step along ``direction`` for pool F0.5.

    Returns (gamma, F).  Every interval between envelope breakpoints is
    scored exactly; the chosen gamma is 0 when the current point is already
    optimal, otherwise the midpoint of the best interval (or one unit past
    the last breakpoint for unbounded intervals).
    """
    lo, hi, fs = interval_scores(pool, weights, direction)
    cands = []
    for k in range(len(fs)):
        if lo[k] < 0 < hi[k] or (len(fs) == 1):
            g = 0.0
        elif np.isinf(lo[k]):
            g = hi[k] - 1.0
        elif np.isinf(hi[k]):
            g = lo[k] + 1.0
        else:
            g = 0.5 * (lo[k] + hi[k])
        cands.append((fs[k], -abs(g), g))
    f_best, _, g_best = max(cands)
    return float(g_best), float(f_best)


@dataclass
class TuningRun:
    iteration: int = 0
    weights: list = field(default_factory=list)
    pool_f: list = field(default_factory=list)
    dev_f: list = field(default_factory=list)
    pool_sizes: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def log_lines(self):
        lines = ["iteration\tpool_size\tdev_f\tpool_f"]
        for i in range(len(self.dev_f)):
            pf = self.pool_f[i] if i < len(self.pool_f) else float("nan")
            ps = self.pool_sizes[i] if i < len(self.pool_sizes) else 0
            lines.append(f"{i}\t{ps}\t{self.dev_f[i]!r}\t{pf!r}")
        return lines


def optimize(pool, start, max_sweeps=20):
    """Coordinate ascent with exact line searches; returns (weights, F)."""
    w = np.asarray(start, dtype=np.float64).copy()
    cur = pool.f_score(w)
    for _ in range(max_sweeps):
        best = None
        for f in range(len(w)):
            d = np.zeros(len(w))
            d[f] = 1.0
            g, score = line_search(pool, w, d)
            if score > cur + IMPROVEMENT_EPS and (best is None or score > best[0]):
                best = (score, f, g)
        if best is None:
            break
        _, f, g = best
        w[f] += g
        cur = pool.f_score(w)
    return w, cur


def mert(
    dev_sources,
    dev_gold,
    nbest_fn,
    initial,
    iterations=10,
    restarts=20,
    nbest_n=100,
    seed=0,
    beta=0.5,
):
    """Tune weights to maximize dev-set F0.5.

    ``nbest_fn(weights, n)`` returns, per dev sentence, a list of
    (target tokens, feature vector) with the 1-best first.  The returned
    weights are those whose re-decoded dev F0.5 was highest (ties go to the
    later iteration), scaled to unit L1 norm.
    """
    if not dev_sources:
        raise ValueError("empty development set")
    names = initial.names
    pool = CandidatePool(dev_sources, dev_gold, beta)
    run = TuningRun()
    rng = np.random.default_rng(seed)
    w = np.asarray(initial.values, dtype=np.float64)
    tried = []
    for it in range(iterations + 1):
        nbests = nbest_fn(FeatureWeights(names, w), nbest_n)
        one_best = np.array([pool.stats_for(s, tuple(nb[0][0])) for s, nb in enumerate(nbests)]).sum(axis=0)
        dev_f = precision_recall_f(*(int(x) for x in one_best), beta)[2]
        run.dev_f.append(dev_f)
        run.weights.append(w.tolist())
        tried.append((dev_f, it, w.copy()))
        added = pool.add(nbests)
        run.pool_sizes.append(len(pool))
        log.info("mert iteration %d: dev F %.4f, %d new candidates (pool %d)", it, dev_f, added, len(pool))
        if it == iterations or (it > 0 and added == 0):
            break
        best_w, best_f = optimize(pool, w)
        for _ in range(restarts):
            s = int(rng.integers(2**31))
            run.seeds.append(s)
            start = np.random.default_rng(s).uniform(-1.0, 1.0, size=len(w))
            cand_w, cand_f = optimize(pool, start)
            if cand_f > best_f + IMPROVEMENT_EPS:
                best_w, best_f = cand_w, cand_f
        run.pool_f.append(best_f)
        run.iteration = it + 1
        w = best_w
    dev_f, _, best = max(tried, key=lambda t: (t[0], t[1]))
    final = FeatureWeights(names, best.tolist()).normalized()
    return final, run
