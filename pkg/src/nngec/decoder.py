"""Monotone phrase-based stack decoder over a log-linear feature model.

Hypotheses are grouped into stacks by how many source tokens they cover.
Two hypotheses in a stack are recombined when their last target words agree
(as many words as the longest-history feature needs); losers are kept as
extra incoming arcs so that n-best lists can be read off the search lattice.

Sign conventions: the word penalty feature is minus the target length, the
phrase penalty feature is minus the number of phrases.
"""

import heapq
from dataclasses import dataclass, field

from .alignment import PhraseEntry
from .corpus import BOS
from .lm import EOS
from .nnjm import JointScorer, affiliations, source_window

TM_FEATURES = ("p_fwd", "p_inv", "lex_fwd", "lex_inv")
FEATURE_ORDER = TM_FEATURES + ("word_penalty", "phrase_penalty", "lm1", "lm2", "nnglm", "nnjm")


class FeatureWeights:
    def __init__(self, names, values=None):
        self.names = tuple(names)
        if values is None:
            values = [0.0] * len(self.names)
        if isinstance(values, dict):
            values = [values.get(n, 0.0) for n in self.names]
        self.values = [float(v) for v in values]
        if len(self.values) != len(self.names):
            raise ValueError(f"{len(self.values)} weights for {len(self.names)} features")

    def __getitem__(self, name):
        return self.values[self.names.index(name)]

    def as_dict(self):
        return dict(zip(self.names, self.values))

    def dot(self, vec):
        total = 0.0
        for w, h in zip(self.values, vec):
            total += w * h
        return total

    def scaled(self, c):
        return FeatureWeights(self.names, [c * v for v in self.values])

    def normalized(self):
        norm = sum(abs(v) for v in self.values)
        return self.scaled(1.0 / norm) if norm else FeatureWeights(self.names, self.values)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for n, v in zip(self.names, self.values):
                f.write(f"{n}\t{v!r}\n")

    @classmethod
    def load(cls, path):
        names, values = [], []
        with open(path, encoding="utf-8") as f:
            for line in f.read().splitlines():
                n, v = line.split("\t")
                names.append(n)
                values.append(float(v))
        return cls(names, values)


@dataclass
class Models:
    """Everything the decoder scores with.

    ``lms`` holds up to two n-gram models; ``nnglm`` is a
    :class:`~nngec.nnglm.HypothesisScorer` and ``nnjm`` a joint model.
    """

    phrase_table: object
    lms: list = field(default_factory=list)
    nnglm: object = None
    nnjm: object = None
    table_limit: int = 20

    def __post_init__(self):
        if len(self.lms) > 2:
            raise ValueError("at most two language model features are supported")
        self._jscorer = JointScorer(self.nnjm) if self.nnjm is not None else None
        self._lm_cache = [dict() for _ in self.lms]

    @property
    def feature_names(self):
        names = list(TM_FEATURES) + ["word_penalty", "phrase_penalty"]
        names += [f"lm{i + 1}" for i in range(len(self.lms))]
        if self.nnglm is not None:
            names.append("nnglm")
        if self.nnjm is not None:
            names.append("nnjm")
        return tuple(names)

    @property
    def history_size(self):
        h = max((lm.order - 1 for lm in self.lms), default=0)
        if self.nnjm is not None:
            h = max(h, self.nnjm.n - 1)
        return h

    def lm_logprob(self, idx, word, history):
        lm = self.lms[idx]
        ctx = history[len(history) - (lm.order - 1) :] if lm.order > 1 else ()
        key = (ctx, word)
        cache = self._lm_cache[idx]
        lp = cache.get(key)
        if lp is None:
            lp = lm.logprob(word, ctx)
            cache[key] = lp
        return lp


@dataclass(frozen=True)
class Step:
    """One phrase application in a derivation."""

    src_start: int
    src_end: int
    target: tuple
    alignment: tuple
    scores: tuple  # log TM scores


@dataclass
class Derivation:
    steps: list
    features: list
    total: float

    @property
    def target(self):
        out = []
        for s in self.steps:
            out.extend(s.target)
        return tuple(out)


class _Node:
    __slots__ = ("frontier", "state", "score", "vec", "target", "arcs", "best_arc", "kbest", "cand")

    def __init__(self, frontier, state, score, vec, target, arc):
        self.frontier = frontier
        self.state = state
        self.score = score
        self.vec = vec
        self.target = target
        self.arcs = [arc] if arc is not None else []
        self.best_arc = arc
        self.kbest = None
        self.cand = None


class _Arc:
    __slots__ = ("prev", "step", "delta", "gain")

    def __init__(self, prev, step, delta, gain):
        self.prev = prev
        self.step = step
        self.delta = delta
        self.gain = gain


def _better(score_a, target_a, score_b, target_b):
    return score_a > score_b or (score_a == score_b and target_a < target_b)


class SentenceDecoder:
    def __init__(self, source, models, weights, beam_size=100):
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        self.source = tuple(source)
        self.models = models
        self.names = models.feature_names
        if isinstance(weights, FeatureWeights):
            if weights.names != self.names:
                weights = FeatureWeights(self.names, weights.as_dict())
        else:
            weights = FeatureWeights(self.names, weights)
        self.weights = weights
        self.beam_size = beam_size
        self.H = models.history_size
        self.idx = {n: i for i, n in enumerate(self.names)}
        self._prepare()

    def _prepare(self):
        src = self.source
        m = self.models
        if m.nnglm is not None:
            tab = m.nnglm.table(src)
            tv = m.nnglm.model.target_vocab.token_to_id
            self._glm = (tab, tv)
        if m.nnjm is not None:
            self._src_ids = m.nnjm.source_vocab.ids(src)
        self.options = {}
        L = len(src)
        limit = m.phrase_table.max_source_length
        for i in range(L):
            for j in range(i + 1, min(L, i + max(limit, 1)) + 1):
                entries = m.phrase_table.get(src[i:j])[: m.table_limit]
                if j == i + 1 and not entries:
                    entries = [PhraseEntry((src[i],), (1.0, 1.0, 1.0, 1.0), ((0, 0),))]
                    opts = [self._option(i, j, e, passthrough=True) for e in entries]
                else:
                    opts = [self._option(i, j, e) for e in entries]
                if opts:
                    self.options[(i, j)] = opts

    def _option(self, i, j, entry, passthrough=False):
        logs = (0.0, 0.0, 0.0, 0.0) if passthrough else entry.log_scores()
        step = Step(i, j, entry.target, entry.alignment, logs)
        glm = None
        if self.models.nnglm is not None:
            tab, tv = self._glm
            glm = [float(tab[tv.get(t, 0)]) for t in entry.target]
        windows = None
        if self.models.nnjm is not None:
            jm = self.models.nnjm
            affil = affiliations(entry.alignment, len(entry.target), i, j - i)
            windows = [source_window(self._src_ids, a, jm.m) for a in affil]
        return step, glm, windows

    def _extend(self, vec, state, option):
        """Feature vector and state after applying ``option``.

        Per-word contributions are added one word at a time so the totals
        match a left-to-right recomputation over the whole sentence.
        """
        step, glm, windows = option
        m = self.models
        idx = self.idx
        vec = list(vec)
        for k in range(4):
            vec[k] += step.scores[k]
        vec[4] += -len(step.target)
        vec[5] += -1.0
        history = state
        if m.nnjm is not None:
            jn = m.nnjm.n - 1
            js = m._jscorer
            tid = js.target_id
            hist_ids = [tid(t) for t in history[len(history) - jn :]]
        j_idx = idx.get("nnjm")
        g_idx = idx.get("nnglm")
        for pos, tok in enumerate(step.target):
            for li in range(len(m.lms)):
                vec[6 + li] += m.lm_logprob(li, tok, history)
            if glm is not None:
                vec[g_idx] += glm[pos]
            if windows is not None:
                wid = tid(tok)
                vec[j_idx] += js.score(windows[pos], tuple(hist_ids[len(hist_ids) - jn :]), wid)
                hist_ids.append(wid)
            history = history + (tok,)
        if self.H:
            history = history[len(history) - self.H :]
        else:
            history = ()
        return vec, history

    def _final_vec(self, vec, state):
        vec = list(vec)
        for li in range(len(self.models.lms)):
            vec[6 + li] += self.models.lm_logprob(li, EOS, state)
        return vec

    def search(self):
        L = len(self.source)
        zero = [0.0] * len(self.names)
        start_state = (BOS,) * self.H
        root = _Node(0, start_state, 0.0, zero, (), None)
        stacks = [dict() for _ in range(L + 1)]
        stacks[0][start_state] = root
        w = self.weights
        for i in range(L):
            stack = self._prune(stacks[i])
            for node in stack:
                for j in range(i + 1, L + 1):
                    opts = self.options.get((i, j))
                    if not opts:
                        continue
                    for opt in opts:
                        vec, state = self._extend(node.vec, node.state, opt)
                        score = w.dot(vec)
                        target = node.target + opt[0].target
                        delta = [a - b for a, b in zip(vec, node.vec)]
                        arc = _Arc(node, opt[0], delta, score - node.score)
                        other = stacks[j].get(state)
                        if other is None:
                            stacks[j][state] = _Node(j, state, score, vec, target, arc)
                            continue
                        other.arcs.append(arc)
                        if _better(score, target, other.score, other.target):
                            other.score, other.vec, other.target, other.best_arc = score, vec, target, arc
        finals = self._prune(stacks[L])
        goal = _Node(L + 1, None, None, None, None, None)
        best = None
        for node in finals:
            vec = self._final_vec(node.vec, node.state)
            score = w.dot(vec)
            delta = [a - b for a, b in zip(vec, node.vec)]
            arc = _Arc(node, None, delta, score - node.score)
            goal.arcs.append(arc)
            if best is None or _better(score, node.target, best[0], best[1]):
                best = (score, node.target, arc, vec)
        goal.score, goal.target, goal.best_arc, goal.vec = best
        self.goal = goal
        return goal

    def _prune(self, stack):
        nodes = sorted(stack.values(), key=lambda n: (-n.score, n.target))
        return nodes[: self.beam_size]

    def best(self):
        goal = self.search() if not hasattr(self, "goal") else self.goal
        steps = []
        arc = goal.best_arc.prev.best_arc
        while arc is not None:
            steps.append(arc.step)
            arc = arc.prev.best_arc
        steps.reverse()
        return Derivation(steps, list(goal.vec), goal.score)

    # lazy k-best extraction over the recombination lattice
    def _kth(self, node, k):
        if node.kbest is None:
            if not node.arcs:
                node.kbest = [(0.0, None, 0)]
                node.cand = []
            else:
                node.kbest = []
                node.cand = []
                for a_i, arc in enumerate(node.arcs):
                    first = self._kth(arc.prev, 0)
                    heapq.heappush(node.cand, (-(first[0] + arc.gain), a_i, 0))
        while len(node.kbest) <= k and node.cand:
            neg, a_i, j = heapq.heappop(node.cand)
            node.kbest.append((-neg, a_i, j))
            arc = node.arcs[a_i]
            nxt = self._kth(arc.prev, j + 1)
            if nxt is not None:
                heapq.heappush(node.cand, (-(nxt[0] + arc.gain), a_i, j + 1))
        return node.kbest[k] if k < len(node.kbest) else None

    def _derivation(self, node, k):
        steps = []
        vec = [0.0] * len(self.names)
        while True:
            entry = self._kth(node, k)
            _, a_i, j = entry
            if a_i is None:
                break
            arc = node.arcs[a_i]
            if arc.step is not None:
                steps.append(arc.step)
            for f, d in enumerate(arc.delta):
                vec[f] += d
            node, k = arc.prev, j
        steps.reverse()
        return steps, vec

    def nbest(self, n, distinct=True, max_tries=None):
        goal = self.search() if not hasattr(self, "goal") else self.goal
        first = self.best()
        out = [first]
        seen = {first.target if distinct else tuple(first.steps)}
        max_tries = max_tries if max_tries is not None else 50 * n
        k = 0
        while len(out) < n and k < max_tries:
            if self._kth(goal, k) is None:
                break
            steps, vec = self._derivation(goal, k)
            k += 1
            key = tuple(t for s in steps for t in s.target) if distinct else tuple(steps)
            if key in seen:
                continue
            seen.add(key)
            out.append(Derivation(steps, vec, self.weights.dot(vec)))
        rest = sorted(out[1:], key=lambda d: (-d.total, d.target))
        return [first] + rest


def decode(source, models, weights, beam_size=100):
    if not source:
        return ()
    return SentenceDecoder(source, models, weights, beam_size).best().target


def decode_nbest(source, models, weights, beam_size=100, n=100, distinct=True):
    if n < 1:
        raise ValueError("n must be >= 1")
    if not source:
        names = models.feature_names
        vec = [0.0] * len(names)
        for li, lm in enumerate(models.lms):
            vec[6 + li] = lm.logprob(EOS, (BOS,))
        w = weights if isinstance(weights, FeatureWeights) else FeatureWeights(names, weights)
        return [Derivation([], vec, w.dot(vec))]
    return SentenceDecoder(source, models, weights, beam_size).nbest(n, distinct)


def rescore(source, derivation_steps, models):
    """Whole-sentence feature recomputation for a derivation."""
    from . import nnjm as nnjm_mod

    names = models.feature_names
    vec = [0.0] * len(names)
    target = tuple(t for s in derivation_steps for t in s.target)
    for s in derivation_steps:
        for k in range(4):
            vec[k] += s.scores[k]
    vec[4] = -float(len(target))
    vec[5] = -float(len(derivation_steps))
    for li, lm in enumerate(models.lms):
        vec[6 + li] = lm.sentence_logprob(target)
    if models.nnglm is not None:
        vec[names.index("nnglm")] = models.nnglm.feature(source, target)
    if models.nnjm is not None:
        vec[names.index("nnjm")] = nnjm_mod.hypothesis_feature(models.nnjm, source, derivation_steps)
    return vec


def write_nbest(path, nbests, names):
    with open(path, "w", encoding="utf-8") as f:
        for sid, entries in enumerate(nbests):
            for d in entries:
                feats = " ".join(f"{n}={v!r}" for n, v in zip(names, d.features))
                f.write(f"{sid} ||| {' '.join(d.target)} ||| {feats} ||| {d.total!r}\n")


def read_nbest(path):
    """Parse an n-best file into per-sentence lists of (target, features, total)."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f.read().splitlines():
            sid, tgt, feats, total = line.split(" ||| ")
            vec = {}
            for item in feats.split():
                name, val = item.split("=")
                vec[name] = float(val)
            out.setdefault(int(sid), []).append((tuple(tgt.split()), vec, float(total)))
    return [out[k] for k in sorted(out)]
