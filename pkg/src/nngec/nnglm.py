"""Neural global lexicon model.

A single-hidden-layer network maps the binary bag of words of a source
sentence to independent presence probabilities for every target-vocabulary
word.  After training, a two-parameter logistic function fitted on a
development set remaps those probabilities to undo their bias towards zero.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Vocabulary
from .neural import DivergenceError, init_uniform, load_params, log_sigmoid, save_params, sigmoid

log = logging.getLogger(__name__)


class GlobalLexiconModel:
    def __init__(self, source_vocab, target_vocab, hidden_size=2000, rng=None, params=None):
        self.source_vocab = source_vocab
        self.target_vocab = target_vocab
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            vs, vt = len(source_vocab), len(target_vocab)
            params = {
                "W1": init_uniform(rng, (hidden_size, vs)),
                "b1": init_uniform(rng, (hidden_size,)),
                "W2": init_uniform(rng, (vt, hidden_size)),
                "b2": init_uniform(rng, (vt,)),
            }
        self.params = params
        self.loss_history = []

    @property
    def hidden_size(self):
        return self.params["W1"].shape[0]

    def bag(self, sentences):
        """Binary bag-of-words matrix, one row per sentence."""
        X = np.zeros((len(sentences), len(self.source_vocab)))
        for r, sent in enumerate(sentences):
            X[r, self.source_vocab.ids(sent)] = 1.0
        return X

    def target_indicator(self, sentences):
        Y = np.zeros((len(sentences), len(self.target_vocab)))
        for r, sent in enumerate(sentences):
            Y[r, self.target_vocab.ids(sent)] = 1.0
        return Y

    def logits(self, X, params=None):
        p = params or self.params
        hidden = np.tanh(X @ p["W1"].T + p["b1"])
        return hidden @ p["W2"].T + p["b2"], hidden

    def word_probs(self, source):
        """P(t | S) for every target word t."""
        return sigmoid(self.logits(self.bag([source]))[0][0])

    def save(self, path, rescaler=None):
        meta = {
            "source_vocab": self.source_vocab.id_to_token,
            "target_vocab": self.target_vocab.id_to_token,
            "rescaler": asdict(rescaler) if rescaler else None,
            "loss_history": self.loss_history,
        }
        save_params(path, self.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = load_params(path)
        model = cls(Vocabulary(meta["source_vocab"]), Vocabulary(meta["target_vocab"]), params=params)
        model.loss_history = meta["loss_history"]
        rescaler = Rescaler(**meta["rescaler"]) if meta["rescaler"] else None
        return model, rescaler


def cross_entropy_loss(params, X, Y, average=True):
    """Mean (or summed) per-pair binary cross entropy and its gradients.

    Each pair's cost is averaged over the target vocabulary.
    """
    A1 = X @ params["W1"].T + params["b1"]
    H = np.tanh(A1)
    A2 = H @ params["W2"].T + params["b2"]
    batch, vt = Y.shape
    per_word = -(Y * log_sigmoid(A2) + (1.0 - Y) * log_sigmoid(-A2))
    scale = 1.0 / vt / (batch if average else 1)
    loss = per_word.sum() * scale
    dA2 = (sigmoid(A2) - Y) * scale
    dH = dA2 @ params["W2"]
    dA1 = dH * (1.0 - H * H)
    grads = {
        "W1": dA1.T @ X,
        "b1": dA1.sum(axis=0),
        "W2": dA2.T @ H,
        "b2": dA2.sum(axis=0),
    }
    return loss, grads


def train_nnglm(pairs, source_vocab, target_vocab, config, hidden_size=2000, seed=0):
    """Mini-batch SGD on the vocabulary-averaged binary cross entropy."""
    rng = np.random.default_rng(seed)
    model = GlobalLexiconModel(source_vocab, target_vocab, hidden_size, rng=rng)
    pairs = list(pairs)
    X = model.bag([s for s, _ in pairs])
    Y = model.target_indicator([t for _, t in pairs])
    params = model.params
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.mini_batch_size):
            idx = order[start : start + config.mini_batch_size]
            loss, grads = cross_entropy_loss(params, X[idx], Y[idx], config.average_gradient)
            if not np.isfinite(loss):
                raise DivergenceError(f"NNGLM loss diverged in epoch {epoch + 1} at batch offset {start}")
            total += loss * (len(idx) if config.average_gradient else 1)
            for k in params:
                params[k] -= config.learning_rate * grads[k]
        mean = total / max(len(pairs), 1)
        model.loss_history.append(mean)
        log.info("nnglm epoch %d loss %.6f", epoch + 1, mean)
    return model


def class_weights(m, f0, f1):
    """Weights inversely proportional to class frequency: M / (2 f)."""
    return m / (2 * f0), m / (2 * f1)


@dataclass
class Rescaler:
    w: float
    b: float
    M: int = 0
    f0: int = 0
    f1: int = 0
    c0: float = 1.0
    c1: float = 1.0
    l2: float = 1e-4

    def rescale(self, p):
        return sigmoid(self.w * np.asarray(p, dtype=np.float64) + self.b)

    def log_rescale(self, p):
        return log_sigmoid(self.w * np.asarray(p, dtype=np.float64) + self.b)


def rescale(rescaler, p):
    return rescaler.rescale(p)


def weighted_logistic_objective(w, b, x, y, c0, c1, l2):
    """Class-weighted cross entropy plus ``l2 * w**2``, divided by M."""
    z = w * x + b
    ll = c1 * y * log_sigmoid(z) + c0 * (1.0 - y) * log_sigmoid(-z)
    return (-ll.sum() + l2 * w * w) / len(x)


def fit_weighted_logistic(x, y, c0, c1, l2, tol=1e-9, max_iter=100000):
    """Full-batch gradient descent with backtracking on standardized inputs.

    Returns (w, b) in the original input scale.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = len(x)
    mu = x.mean()
    sd = x.std() or 1.0
    z = (x - mu) / sd
    sample_w = c1 * y + c0 * (1.0 - y)

    def objective(u):
        ws, bs = u
        logits = ws * z + bs
        ll = c1 * y * log_sigmoid(logits) + c0 * (1.0 - y) * log_sigmoid(-logits)
        return (-ll.sum() + l2 * (ws / sd) ** 2) / m

    def gradient(u):
        ws, bs = u
        p = sigmoid(ws * z + bs)
        g = sample_w * p - c1 * y
        return np.array([(g @ z + 2 * l2 * ws / sd**2) / m, g.sum() / m])

    u = np.zeros(2)
    cur = objective(u)
    step = 1.0
    for _ in range(max_iter):
        g = gradient(u)
        gg = g @ g
        if gg == 0.0:
            break
        while True:
            cand = u - step * g
            new = objective(cand)
            if new <= cur - 1e-4 * step * gg or step < 1e-12:
                break
            step *= 0.5
        done = abs(cur - new) < tol
        u, cur = cand, new
        step *= 2.0
        if done:
            break
    ws, bs = u
    return ws / sd, bs - ws * mu / sd


def train_rescaler(model, dev_pairs, l2=1e-4):
    dev_pairs = list(dev_pairs)
    if not dev_pairs:
        raise ValueError("rescaler needs a non-empty development set")
    logits, _ = model.logits(model.bag([s for s, _ in dev_pairs]))
    x = sigmoid(logits).reshape(-1)
    y = model.target_indicator([t for _, t in dev_pairs]).reshape(-1)
    m = len(x)
    f1 = int(y.sum())
    f0 = m - f1
    if f1 == 0 or f0 == 0:
        raise ValueError(f"degenerate rescaler data: {f1} positive and {f0} negative instances")
    c0, c1 = class_weights(m, f0, f1)
    w, b = fit_weighted_logistic(x, y, c0, c1, l2)
    return Rescaler(float(w), float(b), m, f0, f1, c0, c1, l2)


def sentence_key(source):
    return hashlib.sha1(" ".join(source).encode("utf-8")).hexdigest()


class HypothesisScorer:
    """Per-source table of ln Q(t | S) for the decoder feature.

    The feature of a hypothesis is the sum of table entries of its words;
    words outside the target vocabulary use the unknown-word entry.
    """

    def __init__(self, model, rescaler):
        self.model = model
        self.rescaler = rescaler
        self.cache = {}

    def table(self, source):
        key = sentence_key(source)
        tab = self.cache.get(key)
        if tab is None:
            tab = precompute_hypothesis_table(self.model, self.rescaler, source)
            self.cache[key] = tab
        return tab

    def precompute(self, sources):
        sources = list(sources)
        if not sources:
            return
        probs = sigmoid(self.model.logits(self.model.bag(sources))[0])
        for src, p in zip(sources, probs):
            self.cache[sentence_key(src)] = log_q(self.rescaler, p)

    def word_scores(self, source):
        """Dict token -> ln Q for in-vocabulary tokens, plus the UNK score."""
        tab = self.table(source)
        vocab = self.model.target_vocab
        return {tok: float(tab[i]) for i, tok in enumerate(vocab.id_to_token)}, float(tab[0])

    def feature(self, source, hypothesis):
        tab = self.table(source)
        total = 0.0
        for i in self.model.target_vocab.ids(hypothesis):
            total += float(tab[i])
        return total

    def save_tables(self, path):
        save_params(path, dict(sorted(self.cache.items())))

    def load_tables(self, path):
        tables, _ = load_params(path)
        self.cache.update(tables)


def precompute_hypothesis_table(model, rescaler, source):
    return log_q(rescaler, model.word_probs(source))


def log_q(rescaler, p):
    if rescaler is None:
        return np.log(np.maximum(p, 1e-300))
    return rescaler.log_rescale(p)


def hypothesis_feature(table, target_vocab, hypothesis):
    total = 0.0
    for i in target_vocab.ids(hypothesis):
        total += float(table[i])
    return total

