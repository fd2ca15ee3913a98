"""Interpolated modified Kneser-Ney n-gram language model.

Probabilities are stored in backoff form: ``prob[ngram]`` is the fully
interpolated probability of a seen n-gram and ``backoff[context]`` is the
interpolation weight of the lower order, so an unseen ``w`` after ``h``
scores ``backoff[h] * P(w | h[1:])``.  Values are natural logs.
"""

import json
import logging
import math
from collections import Counter, defaultdict

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
FALLBACK_DISCOUNT = 0.75
LOG_FLOOR = math.log(1e-12)

log = logging.getLogger(__name__)


def modified_kn_discounts(count_of_counts):
    """Closed-form (D1, D2, D3+) from n1..n4, or None when degenerate."""
    n1, n2, n3, n4 = (count_of_counts.get(i, 0) for i in (1, 2, 3, 4))
    if min(n1, n2, n3, n4) == 0:
        return None
    y = n1 / (n1 + 2 * n2)
    d = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)
    if not all(0 < dk <= k + 1 for k, dk in enumerate(d)):
        return None
    return d


class NGramModel:
    def __init__(self, order, prob, backoff, vocab, discounts, degenerate_orders=()):
        self.order = order
        self.prob = prob  # ngram tuple -> ln P, one dict per order merged
        self.backoff = backoff  # context tuple -> ln weight
        self.vocab = vocab  # predictable words, includes EOS and UNK
        self.discounts = discounts  # per order (D1, D2, D3+)
        self.degenerate_orders = tuple(degenerate_orders)

    @property
    def warning(self):
        return bool(self.degenerate_orders)

    def _map(self, token):
        return token if token in self.vocab or token == BOS else UNK

    def logprob(self, word, context=()):
        """ln P(word | context); only the last ``order - 1`` tokens are used."""
        n = self.order - 1
        ctx = tuple(self._map(t) for t in context[len(context) - n :]) if n else ()
        return self._score(self._map(word), ctx)

    def _score(self, word, ctx):
        prob, backoff = self.prob, self.backoff
        acc = 0.0
        while True:
            p = prob.get(ctx + (word,))
            if p is not None:
                return max(acc + p, LOG_FLOOR)
            acc += backoff.get(ctx, 0.0)
            ctx = ctx[1:]

    def sentence_logprob(self, sentence):
        history = (BOS,)
        total = 0.0
        for tok in tuple(sentence) + (EOS,):
            total += self.logprob(tok, history)
            history = history + (tok,)
        return total

    def save(self, path):
        data = {
            "order": self.order,
            "vocab": sorted(self.vocab),
            "discounts": self.discounts,
            "degenerate_orders": list(self.degenerate_orders),
            "prob": [[" ".join(g), p] for g, p in sorted(self.prob.items(), key=lambda kv: (len(kv[0]), kv[0]))],
            "backoff": [[" ".join(h), b] for h, b in sorted(self.backoff.items(), key=lambda kv: (len(kv[0]), kv[0]))],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            data = json.load(f)

        def key(s):
            return tuple(s.split(" ")) if s else ()

        return cls(
            data["order"],
            {key(g): p for g, p in data["prob"]},
            {key(h): b for h, b in data["backoff"]},
            set(data["vocab"]),
            [tuple(d) for d in data["discounts"]],
            data["degenerate_orders"],
        )

    def write_arpa(self, path):
        by_order = defaultdict(list)
        for g in self.prob:
            by_order[len(g)].append(g)
        by_order[1].append((BOS,))
        ln10 = math.log(10)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n\\data\\\n")
            for k in range(1, self.order + 1):
                f.write(f"ngram {k}={len(by_order[k])}\n")
            for k in range(1, self.order + 1):
                f.write(f"\n\\{k}-grams:\n")
                for g in sorted(by_order[k]):
                    p = -99.0 if g == (BOS,) else self.prob[g] / ln10
                    line = f"{p!r}\t{' '.join(g)}"
                    if k < self.order and g in self.backoff:
                        line += f"\t{self.backoff[g] / ln10!r}"
                    f.write(line + "\n")
            f.write("\n\\end\\\n")

    @classmethod
    def read_arpa(cls, path):
        ln10 = math.log(10)
        prob, backoff, vocab = {}, {}, set()
        order = 0
        section = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line == "\\data\\" or line == "\\end\\":
                    continue
                if line.startswith("ngram "):
                    order = max(order, int(line.split()[1].split("=")[0]))
                    continue
                if line.startswith("\\") and line.endswith("-grams:"):
                    section = int(line[1:].split("-")[0])
                    continue
                fields = line.split("\t")
                g = tuple(fields[1].split(" "))
                if len(g) != section:
                    raise ValueError(f"malformed {section}-gram line: {line}")
                if g != (BOS,):
                    prob[g] = float(fields[0]) * ln10
                if section == 1 and g != (BOS,):
                    vocab.add(g[0])
                if len(fields) > 2:
                    backoff[g] = float(fields[2]) * ln10
        return cls(order, prob, backoff, vocab, [])


def count_ngrams(sentences, order):
    counts = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        padded = (BOS,) + tuple(sent) + (EOS,)
        for i in range(1, len(padded)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[k][padded[i - k + 1 : i + 1]] += 1
    return counts


def train_kn(sentences, order=5, discounts=None):
    """Train an interpolated modified Kneser-Ney model.

    ``discounts`` optionally fixes (D1, D2, D3+) for every order instead of
    estimating them from count-of-counts.
    """
    sentences = [tuple(s) for s in sentences]
    if not sentences:
        raise ValueError("cannot train a language model on an empty corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    raw = count_ngrams(sentences, order)

    # lower orders use continuation counts, except n-grams pinned to <s>
    adjusted = [None] * (order + 1)
    adjusted[order] = raw[order]
    for k in range(order - 1, 0, -1):
        left = Counter()
        for g in raw[k + 1]:
            left[g[1:]] += 1
        adjusted[k] = Counter({g: (c if g[0] == BOS else left[g]) for g, c in raw[k].items()})

    vocab = {g[0] for g in raw[1]} | {EOS, UNK}
    prob, backoff = {}, {}
    fixed = tuple(discounts) if discounts is not None else None
    discounts, degenerate = [], []
    for k in range(1, order + 1):
        counts = adjusted[k]
        d = fixed or modified_kn_discounts(Counter(counts.values()))
        if d is None:
            degenerate.append(k)
            d = (FALLBACK_DISCOUNT,) * 3
        discounts.append(d)

        totals = defaultdict(int)
        mass = defaultdict(float)
        for g, c in counts.items():
            h = g[:-1]
            totals[h] += c
            mass[h] += d[min(c, 3) - 1]
        gammas = {h: mass[h] / totals[h] for h in totals}

        for g, c in counts.items():
            h = g[:-1]
            p = (c - d[min(c, 3) - 1]) / totals[h]
            if k == 1:
                lower = 1.0 / len(vocab)
            else:
                lower = math.exp(_lookup(prob, backoff, g[1:]))
            prob[g] = math.log(p + gammas[h] * lower)
        if k == 1:
            prob[(UNK,)] = math.log(gammas[()] / len(vocab))
        for h, gamma in gammas.items():
            if h:
                backoff[h] = math.log(gamma)
    if degenerate:
        log.warning("degenerate count-of-counts at orders %s; using discount %s", degenerate, FALLBACK_DISCOUNT)
    return NGramModel(order, prob, backoff, vocab, discounts, degenerate)


def _lookup(prob, backoff, ngram):
    acc = 0.0
    ctx, word = ngram[:-1], ngram[-1]
    while True:
        p = prob.get(ctx + (word,))
        if p is not None:
            return acc + p
        acc += backoff.get(ctx, 0.0)
        ctx = ctx[1:]
