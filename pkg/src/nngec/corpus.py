"""Parallel corpus loading, cleaning and vocabulary construction.

Sentences are pre-tokenized: one sentence per line, tokens separated by
whitespace.  A sentence is represented as a tuple of token strings.
"""

import os
from collections import Counter
from dataclasses import dataclass, field

UNK = "<unk>"
BOS = "<s>"
SRC_PAD_START = "<src>"
SRC_PAD_END = "</src>"
RESERVED = (UNK, BOS, SRC_PAD_START, SRC_PAD_END)
UNK_ID, BOS_ID, SRC_PAD_START_ID, SRC_PAD_END_ID = range(4)

MAX_SENTENCE_LENGTH = 80
MAX_LENGTH_RATIO = 9.0


class CorpusError(ValueError):
    pass


def tokenize_line(line):
    return tuple(line.split())


@dataclass
class ParallelCorpus:
    pairs: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sources(self):
        return [s for s, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]


def read_sentences(path):
    if not os.path.exists(path):
        raise CorpusError(f"missing file: {path}")
    with open(path, encoding="utf-8") as f:
        return [tokenize_line(line) for line in f.read().splitlines()]


def write_sentences(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")


def load_parallel(source_path, target_path):
    sources = read_sentences(source_path)
    targets = read_sentences(target_path)
    if len(sources) != len(targets):
        raise CorpusError(
            f"line-count mismatch: {source_path} has {len(sources)} lines, "
            f"{target_path} has {len(targets)}"
        )
    return ParallelCorpus(list(zip(sources, targets)))


def keep_pair(source, target):
    if not source or not target:
        return False
    if len(source) > MAX_SENTENCE_LENGTH or len(target) > MAX_SENTENCE_LENGTH:
        return False
    longer, shorter = max(len(source), len(target)), min(len(source), len(target))
    return longer / shorter <= MAX_LENGTH_RATIO


def clean_corpus(corpus):
    """Drop empty pairs, pairs with a side over 80 tokens, and pairs whose
    length ratio (longer side over shorter side) exceeds 9."""
    return ParallelCorpus([(s, t) for s, t in corpus.pairs if keep_pair(s, t)])


class Vocabulary:
    """Frequency-ranked token <-> id map.

    Ids 0-3 are reserved (unknown word, target sentence start, and the left
    and right source padding symbols); regular tokens follow in rank order.
    """

    def __init__(self, tokens=(), counts=None):
        self.id_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = dict(counts or {})

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def id(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def ids(self, tokens):
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def token(self, idx):
        return self.id_to_token[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for rank, tok in enumerate(self.id_to_token):
                f.write(f"{rank}\t{tok}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path):
        tokens, counts = [], {}
        with open(path, encoding="utf-8") as f:
            for line in f.read().splitlines():
                rank, tok, count = line.split("\t")
                if int(rank) < len(RESERVED):
                    if tok != RESERVED[int(rank)]:
                        raise CorpusError(f"bad reserved entry at rank {rank}: {tok}")
                else:
                    tokens.append(tok)
                counts[tok] = int(count)
        counts = {t: c for t, c in counts.items() if c}
        return cls(tokens, counts)


def build_vocab(sentences, size_limit):
    """Keep the ``size_limit`` most frequent tokens; ties go to the token
    seen first."""
    if size_limit < 1:
        raise ValueError("size_limit must be >= 1")
    counts = Counter()
    first_seen = {}
    for sent in sentences:
        for tok in sent:
            if tok in RESERVED:
                continue
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))[:size_limit]
    return Vocabulary(ranked, {t: counts[t] for t in ranked})
