"""Word alignment, phrase extraction and phrase-table scoring."""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

NULL = None
PROB_FLOOR = 1e-12


def edit_distance_alignment(source, target):
    """Link matched and substituted tokens of a minimal-cost edit script.

    Costs are 0 for a match and 1 for a substitution, insertion or deletion.
    Among optimal scripts the backtrace prefers match, then substitution,
    then deletion, then insertion.
    """
    ops = levenshtein_ops(source, target)
    return {(i, j) for op, i, j in ops if op in ("match", "sub")}


def levenshtein_ops(source, target):
    """Minimal edit script as a list of (op, source_index, target_index).

    ``op`` is one of ``match``, ``sub``, ``del`` (source token dropped; target
    index is the insertion point) and ``ins`` (target token added; source
    index is the insertion point).  The list is in left-to-right order.
    """
    n, m = len(source), len(target)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        s = source[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if s == target[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and source[i - 1] == target[j - 1] and dist[i - 1][j - 1] == here:
            ops.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i - 1][j - 1] + 1 == here:
            ops.append(("sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1][j] + 1 == here:
            ops.append(("del", i - 1, j))
            i -= 1
        else:
            ops.append(("ins", i, j - 1))
            j -= 1
    ops.reverse()
    return ops


class IBMModel1:
    """Lexical translation table t(target | source) trained by EM.

    Every source sentence is extended with a NULL token; the table starts
    uniform over the target vocabulary.
    """

    def __init__(self, pairs, iterations=10):
        target_vocab = {w for _, tgt in pairs for w in tgt}
        uniform = 1.0 / max(len(target_vocab), 1)
        self.table = defaultdict(lambda: uniform)
        for _ in range(iterations):
            counts = defaultdict(float)
            totals = defaultdict(float)
            for src, tgt in pairs:
                src_null = (NULL,) + tuple(src)
                for t in tgt:
                    norm = sum(self.table[(s, t)] for s in src_null)
                    for s in src_null:
                        c = self.table[(s, t)] / norm
                        counts[(s, t)] += c
                        totals[s] += c
            table = defaultdict(float)
            for (s, t), c in counts.items():
                table[(s, t)] = c / totals[s]
            self.table = table

    def best_links(self, source, target):
        links = set()
        src_null = (NULL,) + tuple(source)
        for j, t in enumerate(target):
            scores = [self.table.get((s, t), 0.0) for s in src_null]
            best = max(range(len(src_null)), key=lambda k: (scores[k], -k))
            if best > 0:
                links.add((best - 1, j))
        return links


def ibm1_alignments(pairs, iterations=10):
    """Intersect the argmax alignments of Model 1 trained in both directions."""
    pairs = [(tuple(s), tuple(t)) for s, t in pairs]
    fwd = IBMModel1(pairs, iterations)
    rev = IBMModel1([(t, s) for s, t in pairs], iterations)
    out = []
    for s, t in pairs:
        a = fwd.best_links(s, t)
        b = {(i, j) for j, i in rev.best_links(t, s)}
        out.append(a & b)
    return out


def align_words(pair, mode="edit-distance", model=None):
    source, target = pair
    if mode == "edit-distance":
        return edit_distance_alignment(source, target)
    if mode == "ibm1":
        if model is None:
            return ibm1_alignments([pair])[0]
        fwd, rev = model
        b = {(i, j) for j, i in rev.best_links(target, source)}
        return fwd.best_links(source, target) & b
    raise ValueError(f"unknown alignment mode: {mode}")


def align_corpus(pairs, mode="edit-distance", iterations=10):
    if mode == "ibm1":
        return ibm1_alignments(pairs, iterations)
    return [align_words(p, mode) for p in pairs]


@dataclass(frozen=True)
class PhrasePair:
    source: tuple
    target: tuple
    alignment: tuple  # sorted (source_offset, target_offset) links inside the pair


def extract_phrases(pair, alignment, max_phrase_length=7):
    """All alignment-consistent phrase pairs containing at least one link.

    A pair is consistent when no link connects a word inside the pair to a
    word outside it.  Unaligned target words adjacent to the tight block are
    absorbed into the target span, which is what lets insertions be learned.
    """
    source, target = pair
    n, m = len(source), len(target)
    if not alignment:
        return []
    # plain dicts: membership tests below must not see keys created by lookups
    tgt_by_src = {}
    src_by_tgt = {}
    for i, j in alignment:
        tgt_by_src.setdefault(i, []).append(j)
        src_by_tgt.setdefault(j, []).append(i)
    out = []
    for s1 in range(n):
        for s2 in range(s1, min(n, s1 + max_phrase_length)):
            linked = [j for i in range(s1, s2 + 1) for j in tgt_by_src.get(i, ())]
            if not linked:
                continue
            t1, t2 = min(linked), max(linked)
            if t2 - t1 + 1 > max_phrase_length:
                continue
            if any(not s1 <= i <= s2 for j in range(t1, t2 + 1) for i in src_by_tgt.get(j, ())):
                continue
            lo = t1
            while True:
                hi = t2
                while True:
                    if hi - lo + 1 > max_phrase_length:
                        break
                    links = tuple(
                        sorted((i - s1, j - lo) for i, j in alignment if s1 <= i <= s2 and lo <= j <= hi)
                    )
                    out.append(PhrasePair(tuple(source[s1 : s2 + 1]), tuple(target[lo : hi + 1]), links))
                    hi += 1
                    if hi >= m or hi in src_by_tgt:
                        break
                lo -= 1
                if lo < 0 or lo in src_by_tgt or t2 - lo + 1 > max_phrase_length:
                    break
    return out


class WordLexicon:
    """Word translation relative frequencies w(t|s) and w(s|t) from links.

    Unaligned words are counted against NULL.
    """

    def __init__(self):
        self.joint = Counter()
        self.src_totals = Counter()
        self.tgt_totals = Counter()

    def add(self, source, target, alignment):
        src_linked = {i for i, _ in alignment}
        tgt_linked = {j for _, j in alignment}
        for i, j in alignment:
            self._count(source[i], target[j])
        for i, s in enumerate(source):
            if i not in src_linked:
                self._count(s, NULL)
        for j, t in enumerate(target):
            if j not in tgt_linked:
                self._count(NULL, t)

    def _count(self, s, t):
        self.joint[(s, t)] += 1
        self.src_totals[s] += 1
        self.tgt_totals[t] += 1

    def t_given_s(self, t, s):
        return self.joint[(s, t)] / self.src_totals[s] if self.src_totals[s] else 0.0

    def s_given_t(self, s, t):
        return self.joint[(s, t)] / self.tgt_totals[t] if self.tgt_totals[t] else 0.0

    @classmethod
    def from_corpus(cls, pairs, alignments):
        lex = cls()
        for (s, t), a in zip(pairs, alignments):
            lex.add(s, t, a)
        return lex


def lexical_weight(source, target, alignment, prob):
    """Average-over-links lexical weight of ``target`` given ``source``.

    ``prob(t, s)`` is the word translation probability; unlinked target words
    are scored against NULL.  ``alignment`` holds (source, target) offsets.
    """
    by_tgt = defaultdict(list)
    for i, j in alignment:
        by_tgt[j].append(i)
    weight = 1.0
    for j, t in enumerate(target):
        links = by_tgt.get(j)
        if links:
            weight *= sum(prob(t, source[i]) for i in links) / len(links)
        else:
            weight *= prob(t, NULL)
    return weight


@dataclass
class PhraseEntry:
    target: tuple
    scores: tuple  # (p_fwd, p_inv, lex_fwd, lex_inv)
    alignment: tuple

    def log_scores(self):
        return tuple(math.log(max(p, PROB_FLOOR)) for p in self.scores)


class PhraseTable:
    def __init__(self, entries=None):
        self.entries = entries if entries is not None else {}
        self.max_source_length = max((len(s) for s in self.entries), default=0)

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def __eq__(self, other):
        return isinstance(other, PhraseTable) and self.entries == other.entries

    def get(self, source_phrase):
        return self.entries.get(tuple(source_phrase), [])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for src in sorted(self.entries):
                for e in self.entries[src]:
                    scores = " ".join(repr(p) for p in e.scores)
                    links = " ".join(f"{i}-{j}" for i, j in e.alignment)
                    f.write(f"{' '.join(src)} ||| {' '.join(e.target)} ||| {scores} ||| {links}\n")

    @classmethod
    def load(cls, path):
        entries = {}
        with open(path, encoding="utf-8") as f:
            for line in f.read().splitlines():
                src, tgt, scores, links = line.split(" ||| ")
                links = links.strip()
                alignment = tuple(tuple(int(x) for x in l.split("-")) for l in links.split()) if links else ()
                entry = PhraseEntry(tuple(tgt.split()), tuple(float(p) for p in scores.split()), alignment)
                entries.setdefault(tuple(src.split()), []).append(entry)
        return cls(entries)


def score_phrase_table(phrase_pairs, lexicon=None):
    """Relative-frequency phrase probabilities plus lexical weights.

    Without a corpus-level ``lexicon`` the word statistics are taken from the
    phrase pairs' own internal links.
    """
    phrase_pairs = list(phrase_pairs)
    if not phrase_pairs:
        raise ValueError("no phrase pairs to score")
    if lexicon is None:
        lexicon = WordLexicon()
        for pp in phrase_pairs:
            lexicon.add(pp.source, pp.target, pp.alignment)
    pair_counts = Counter()
    align_counts = defaultdict(Counter)
    src_counts = Counter()
    tgt_counts = Counter()
    for pp in phrase_pairs:
        pair_counts[(pp.source, pp.target)] += 1
        align_counts[(pp.source, pp.target)][pp.alignment] += 1
        src_counts[pp.source] += 1
        tgt_counts[pp.target] += 1
    entries = {}
    for (src, tgt), c in pair_counts.items():
        # Counter preserves insertion order, so ties go to the first seen
        alignment = max(align_counts[(src, tgt)].items(), key=lambda kv: kv[1])[0]
        inv_alignment = [(j, i) for i, j in alignment]
        lex_fwd = lexical_weight(src, tgt, alignment, lexicon.t_given_s)
        lex_inv = lexical_weight(tgt, src, inv_alignment, lexicon.s_given_t)
        scores = (c / src_counts[src], c / tgt_counts[tgt], lex_fwd, lex_inv)
        entries.setdefault(src, []).append(PhraseEntry(tgt, scores, alignment))
    for src in entries:
        entries[src].sort(key=lambda e: (-e.scores[0], e.target))
    return PhraseTable(entries)


def build_phrase_table(pairs, alignments, max_phrase_length=7):
    lexicon = WordLexicon.from_corpus(pairs, alignments)
    extracted = []
    for pair, a in zip(pairs, alignments):
        extracted.extend(extract_phrases(pair, a, max_phrase_length))
    return score_phrase_table(extracted, lexicon)
