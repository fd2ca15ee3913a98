"""Neural joint model over a source window and the target history.

The network scores target word t_i from the m source words centred on the
source position affiliated with t_i plus the n - 1 preceding target words.
It is trained with noise contrastive estimation while the normalizer is held
at 1, so at decoding time its raw output is used directly as a log
probability.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .corpus import BOS_ID, SRC_PAD_END_ID, SRC_PAD_START_ID, Vocabulary
from .neural import DivergenceError, init_uniform, load_params, log_sigmoid, save_params, sigmoid

log = logging.getLogger(__name__)

EXACT_VOCAB_CAP = 5000
NOISE_FLOOR = 1e-9


def affiliations(links, target_length, source_start=0, source_length=None):
    """Affiliated source position for every target word of a phrase.

    ``links`` are (source, target) index pairs relative to the phrase; the
    returned positions are offset by ``source_start``.  A linked word takes
    the middle of its sorted linked sources (rounding down).  An unlinked word
    copies the nearest linked neighbour, looking right before left at each
    distance.  With no links at all, the source span midpoint is used.
    """
    by_tgt = {}
    for i, j in links:
        by_tgt.setdefault(j, []).append(i)
    direct = {}
    for j, srcs in by_tgt.items():
        srcs = sorted(srcs)
        direct[j] = srcs[(len(srcs) - 1) // 2]
    if not direct:
        span = source_length if source_length is not None else 1
        mid = (span - 1) // 2
        return [source_start + mid] * target_length
    out = []
    for j in range(target_length):
        if j in direct:
            out.append(source_start + direct[j])
            continue
        for d in range(1, target_length):
            if j + d in direct:
                out.append(source_start + direct[j + d])
                break
            if j - d in direct:
                out.append(source_start + direct[j - d])
                break
    return out


def affiliate(links, target_index, target_length, source_start=0, source_length=None):
    return affiliations(links, target_length, source_start, source_length)[target_index]


def source_window(source_ids, position, m):
    half = (m - 1) // 2
    n = len(source_ids)
    out = []
    for p in range(position - half, position + half + 1):
        if p < 0:
            out.append(SRC_PAD_START_ID)
        elif p >= n:
            out.append(SRC_PAD_END_ID)
        else:
            out.append(source_ids[p])
    return tuple(out)


def target_history(target_ids, i, n):
    """The n - 1 target ids before position i, left-padded with BOS."""
    if n <= 1:
        return ()
    hist = list(target_ids[max(0, i - n + 1) : i])
    return tuple([BOS_ID] * (n - 1 - len(hist)) + hist)


@dataclass(frozen=True)
class JointContext:
    source: tuple
    target: tuple


class NoiseDistribution:
    def __init__(self, q, k):
        q = np.asarray(q, dtype=np.float64)
        if k < 1:
            raise ValueError("NCE needs at least one noise sample per instance")
        if np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ValueError("noise distribution must be positive and sum to 1")
        self.q = q
        self.k = k
        self.log_kq = np.log(k * q)
        self._cdf = np.cumsum(q)
        self._cdf[-1] = 1.0

    @classmethod
    def unigram(cls, target_id_seqs, vocab_size, k):
        counts = np.zeros(vocab_size)
        for seq in target_id_seqs:
            np.add.at(counts, np.asarray(seq, dtype=np.int64), 1.0)
        q = counts / max(counts.sum(), 1.0)
        q = np.maximum(q, NOISE_FLOOR)
        return cls(q / q.sum(), k)

    def sample(self, rng, shape):
        return np.searchsorted(self._cdf, rng.random(shape), side="right").clip(0, len(self.q) - 1)


def nce_posterior(p, q_t, k):
    """(P(C=1 | t, h), P(C=0 | t, h)) for model probability p and noise q_t."""
    if k < 1:
        raise ValueError("k must be >= 1")
    true = p / (k + 1)
    noise = k * q_t / (k + 1)
    return true / (true + noise), noise / (true + noise)


class JointModel:
    def __init__(self, source_vocab, target_vocab, m=5, n=5, embed_dim=192, hidden_size=512, rng=None, params=None):
        if m % 2 != 1:
            raise ValueError("source window size must be odd")
        if n < 2:
            raise ValueError("target n-gram order must be >= 2")
        self.source_vocab = source_vocab
        self.target_vocab = target_vocab
        self.m = m
        self.n = n
        self.self_normalized = False
        self.loss_history = []
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            width = (m + n - 1) * embed_dim
            params = {
                "Es": init_uniform(rng, (len(source_vocab), embed_dim)),
                "Et": init_uniform(rng, (len(target_vocab), embed_dim)),
                "W1": init_uniform(rng, (hidden_size, width)),
                "b1": init_uniform(rng, (hidden_size,)),
                "W2": init_uniform(rng, (len(target_vocab), hidden_size)),
                # start near log(1/|V|) so sums of exp(U) begin close to 1
                "b2": init_uniform(rng, (len(target_vocab),)) - np.log(len(target_vocab)),
            }
        self.params = params

    @property
    def embed_dim(self):
        return self.params["Es"].shape[1]

    @property
    def output_size(self):
        return self.params["W2"].shape[0]

    def hidden(self, src_ctx, tgt_ctx, params=None):
        """Hidden-layer output for batches of context id arrays."""
        p = params or self.params
        src_ctx = np.asarray(src_ctx, dtype=np.int64).reshape(-1, self.m)
        tgt_ctx = np.asarray(tgt_ctx, dtype=np.int64).reshape(-1, self.n - 1)
        batch = src_ctx.shape[0]
        x = np.concatenate([p["Es"][src_ctx].reshape(batch, -1), p["Et"][tgt_ctx].reshape(batch, -1)], axis=1)
        return np.maximum(x @ p["W1"].T + p["b1"], 0.0)

    def scores(self, context):
        """Unnormalized outputs U(h) over the whole output vocabulary."""
        h = self.hidden([context.source], [context.target])[0]
        return self.params["W2"] @ h + self.params["b2"]

    def log_normalizer(self, context):
        u = self.scores(context)
        top = u.max()
        return float(top + np.log(np.exp(u - top).sum()))

    def logprob_word(self, context, word_id, exact=False, cap=EXACT_VOCAB_CAP):
        if exact:
            if self.output_size > cap:
                raise ValueError(f"exact normalization over {self.output_size} words exceeds cap {cap}")
            u = self.scores(context)
            top = u.max()
            return float(u[word_id] - top - np.log(np.exp(u - top).sum()))
        if not self.self_normalized:
            raise ValueError("model was not trained with NCE; use exact=True")
        h = self.hidden([context.source], [context.target])[0]
        return float(self.params["W2"][word_id] @ h + self.params["b2"][word_id])

    def sentence_contexts(self, source, target, links):
        """Contexts and output ids for every word of an aligned sentence pair."""
        src_ids = self.source_vocab.ids(source)
        tgt_ids = self.target_vocab.ids(target)
        affil = affiliations(links, len(target), 0, len(source))
        ctxs = [
            JointContext(source_window(src_ids, a, self.m), target_history(tgt_ids, i, self.n))
            for i, a in enumerate(affil)
        ]
        return ctxs, tgt_ids

    def save(self, path, noise=None):
        meta = {
            "source_vocab": self.source_vocab.id_to_token,
            "target_vocab": self.target_vocab.id_to_token,
            "m": self.m,
            "n": self.n,
            "k": noise.k if noise else None,
            "self_normalized": self.self_normalized,
            "loss_history": self.loss_history,
        }
        params = dict(self.params)
        if noise is not None:
            params["noise_q"] = noise.q
        save_params(path, params, meta)

    @classmethod
    def load(cls, path):
        params, meta = load_params(path)
        q = params.pop("noise_q", None)
        model = cls(
            Vocabulary(meta["source_vocab"]),
            Vocabulary(meta["target_vocab"]),
            meta["m"],
            meta["n"],
            params=params,
        )
        model.self_normalized = meta["self_normalized"]
        model.loss_history = meta["loss_history"]
        noise = NoiseDistribution(q, meta["k"]) if q is not None else None
        return model, noise


def nce_loss(model, params, src_ctx, tgt_ctx, words, noise_words, log_kq, average=True):
    """NCE loss with the normalizer fixed to 1, and gradients.

    ``words`` holds the true output id per instance, ``noise_words`` a
    (batch, k) array of sampled ids.  The loss is
    -sum[log P(C=1 | t, h) + sum_j log P(C=0 | noise_j, h)], averaged over
    the batch when ``average`` is set.
    """
    batch = len(words)
    m = model.m
    es, et = params["Es"], params["Et"]
    x = np.concatenate([es[src_ctx].reshape(batch, -1), et[tgt_ctx].reshape(batch, -1)], axis=1)
    a1 = x @ params["W1"].T + params["b1"]
    h = np.maximum(a1, 0.0)
    W2, b2 = params["W2"], params["b2"]

    u_true = np.einsum("bh,bh->b", h, W2[words]) + b2[words]
    u_noise = np.einsum("bh,bkh->bk", h, W2[noise_words]) + b2[noise_words]
    d_true = u_true - log_kq[words]
    d_noise = u_noise - log_kq[noise_words]
    scale = 1.0 / batch if average else 1.0
    loss = -(log_sigmoid(d_true).sum() + log_sigmoid(-d_noise).sum()) * scale

    g_true = (sigmoid(d_true) - 1.0) * scale
    g_noise = sigmoid(d_noise) * scale
    vo = W2.shape[0]
    k = noise_words.shape[1]
    rows = np.concatenate([np.arange(batch), np.repeat(np.arange(batch), k)])
    cols = np.concatenate([words, noise_words.reshape(-1)])
    vals = np.concatenate([g_true, g_noise.reshape(-1)])
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(batch, vo))
    dW2 = np.asarray((G.T @ h))
    db2 = np.bincount(cols, weights=vals, minlength=vo)
    dh = np.asarray(G @ W2)
    da1 = dh * (a1 > 0)
    dW1 = da1.T @ x
    db1 = da1.sum(axis=0)
    dx = da1 @ params["W1"]
    d = es.shape[1]
    dEs = np.zeros_like(es)
    dEt = np.zeros_like(et)
    np.add.at(dEs, src_ctx.reshape(-1), dx[:, : m * d].reshape(-1, d))
    np.add.at(dEt, tgt_ctx.reshape(-1), dx[:, m * d :].reshape(-1, d))
    grads = {"Es": dEs, "Et": dEt, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
    return loss, grads


def training_instances(model, pairs, alignments):
    src_rows, tgt_rows, words = [], [], []
    for (source, target), links in zip(pairs, alignments):
        ctxs, ids = model.sentence_contexts(source, target, links)
        for ctx, w in zip(ctxs, ids):
            src_rows.append(ctx.source)
            tgt_rows.append(ctx.target)
            words.append(w)
    return (
        np.asarray(src_rows, dtype=np.int64).reshape(-1, model.m),
        np.asarray(tgt_rows, dtype=np.int64).reshape(-1, model.n - 1),
        np.asarray(words, dtype=np.int64),
    )


def train_nce(
    pairs,
    alignments,
    source_vocab,
    target_vocab,
    config,
    k=100,
    m=5,
    n=5,
    embed_dim=192,
    hidden_size=512,
    seed=0,
):
    """Mini-batch SGD on the NCE objective with unigram noise.

    Returns the trained model and the noise distribution.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    model = JointModel(source_vocab, target_vocab, m, n, embed_dim, hidden_size, rng=rng)
    src, tgt, words = training_instances(model, pairs, alignments)
    noise = NoiseDistribution.unigram([words], len(target_vocab), k)
    params = model.params
    for epoch in range(config.epochs):
        order = rng.permutation(len(words))
        total = 0.0
        for start in range(0, len(order), config.mini_batch_size):
            idx = order[start : start + config.mini_batch_size]
            samples = noise.sample(rng, (len(idx), k))
            loss, grads = nce_loss(model, params, src[idx], tgt[idx], words[idx], samples, noise.log_kq, config.average_gradient)
            if not np.isfinite(loss):
                raise DivergenceError(f"NCE loss diverged in epoch {epoch + 1} at batch offset {start}")
            total += loss * (len(idx) if config.average_gradient else 1)
            for name in params:
                params[name] -= config.learning_rate * grads[name]
        mean = total / max(len(words), 1)
        model.loss_history.append(mean)
        log.info("nnjm epoch %d loss %.6f", epoch + 1, mean)
    model.self_normalized = True
    return model, noise


def derivation_target(derivation):
    out = []
    for step in derivation:
        out.extend(step.target)
    return tuple(out)


def hypothesis_feature(model, source, derivation, exact=False):
    """Sum of ln P(t_i | h_i) over the target words of a derivation.

    ``derivation`` is a sequence of phrase steps with ``src_start``,
    ``src_end``, ``target`` and ``alignment`` attributes.
    """
    src_ids = model.source_vocab.ids(source)
    tgt_ids = model.target_vocab.ids(derivation_target(derivation))
    total = 0.0
    pos = 0
    for step in derivation:
        affil = affiliations(step.alignment, len(step.target), step.src_start, step.src_end - step.src_start)
        for a in affil:
            ctx = JointContext(source_window(src_ids, a, model.m), target_history(tgt_ids, pos, model.n))
            total += model.logprob_word(ctx, tgt_ids[pos], exact=exact)
            pos += 1
    return total


class JointScorer:
    """Cached self-normalized scoring for one model, used by the decoder."""

    def __init__(self, model):
        self.model = model
        self._hidden = {}
        self._tok = model.target_vocab.token_to_id
        self._W2 = model.params["W2"]
        self._b2 = model.params["b2"]

    def target_id(self, token):
        return self._tok.get(token, 0)

    def score(self, window, history, word_id):
        key = (window, history)
        h = self._hidden.get(key)
        if h is None:
            h = self.model.hidden([window], [history])[0]
            self._hidden[key] = h
        return float(self._W2[word_id] @ h + self._b2[word_id])

    def clear(self):
        self._hidden.clear()
