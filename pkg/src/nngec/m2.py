"""Edit extraction, F0.5 scoring and bootstrap significance for GEC output.

Edits are matched exactly on (start, end, replacement) against each
annotator's gold edit set; per sentence the annotator giving the best
F0.5 contribution is used.
"""

from dataclasses import dataclass, field

import numpy as np

from .alignment import levenshtein_ops

NOOP = "noop"


@dataclass(frozen=True, order=True)
class Edit:
    start: int
    end: int
    replacement: tuple = ()
    type: str = field(default="", compare=False)

    @property
    def key(self):
        return (self.start, self.end, self.replacement)


def extract_edits(source, hypothesis):
    """Token-level Levenshtein edits, adjacent changes merged into one span."""
    edits = []
    cur = None  # [start, end, replacement tokens]
    for op, i, j in levenshtein_ops(tuple(source), tuple(hypothesis)):
        if op == "match":
            if cur is not None:
                edits.append(Edit(cur[0], cur[1], tuple(cur[2])))
                cur = None
            continue
        if cur is None:
            cur = [i, i, []]
        if op == "sub":
            cur[1] = i + 1
            cur[2].append(hypothesis[j])
        elif op == "del":
            cur[1] = i + 1
        else:
            cur[2].append(hypothesis[j])
    if cur is not None:
        edits.append(Edit(cur[0], cur[1], tuple(cur[2])))
    return edits


def apply_edits(source, edits):
    out = []
    pos = 0
    for e in sorted(edits, key=lambda e: (e.start, e.end)):
        out.extend(source[pos : e.start])
        out.extend(e.replacement)
        pos = e.end
    out.extend(source[pos:])
    return tuple(out)


def f_beta(p, r, beta=0.5):
    b2 = beta * beta
    if p == 0 and r == 0:
        return 0.0
    return (1 + b2) * p * r / (b2 * p + r)


def precision_recall_f(tp, fp, fn, beta=0.5):
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    return p, r, f_beta(p, r, beta)


@dataclass
class ScoreReport:
    tp: int
    fp: int
    fn: int
    beta: float = 0.5

    @property
    def precision(self):
        return precision_recall_f(self.tp, self.fp, self.fn, self.beta)[0]

    @property
    def recall(self):
        return precision_recall_f(self.tp, self.fp, self.fn, self.beta)[1]

    @property
    def f(self):
        return precision_recall_f(self.tp, self.fp, self.fn, self.beta)[2]

    def __str__(self):
        return f"P={self.precision:.4f} R={self.recall:.4f} F{self.beta}={self.f:.4f}"


def sentence_stats(system_edits, annotator_sets, beta=0.5):
    """(tp, fp, fn) against the annotator that maximizes the sentence F.

    Ties are broken by the lower annotator index.
    """
    sys_keys = {e.key for e in system_edits}
    best = None
    best_f = None
    for gold in annotator_sets or [[]]:
        gold_keys = {e.key for e in gold}
        tp = len(sys_keys & gold_keys)
        stats = (tp, len(sys_keys) - tp, len(gold_keys) - tp)
        f = precision_recall_f(*stats, beta)[2]
        # prefer higher F, then more true positives, then fewer gold edits
        rank = (f, stats[0], -stats[2])
        if best is None or rank > best_f:
            best, best_f = stats, rank
    return best


def corpus_stats(hypotheses, sources, gold, beta=0.5):
    if not (len(hypotheses) == len(sources) == len(gold)):
        raise ValueError(
            f"sentence count mismatch: {len(hypotheses)} hypotheses, {len(sources)} sources, {len(gold)} gold entries"
        )
    return np.array(
        [sentence_stats(extract_edits(s, h), g, beta) for h, s, g in zip(hypotheses, sources, gold)],
        dtype=np.int64,
    ).reshape(-1, 3)


def score_corpus(hypotheses, sources, gold, beta=0.5):
    """Corpus P/R/F from edit counts summed over sentences.

    ``gold`` holds, per sentence, a list of annotator edit lists.
    """
    tp, fp, fn = (int(x) for x in corpus_stats(hypotheses, sources, gold, beta).sum(axis=0))
    return ScoreReport(tp, fp, fn, beta)


def stats_f(stats, beta=0.5):
    tp, fp, fn = stats
    return precision_recall_f(tp, fp, fn, beta)[2]


def bootstrap_sign_test(hyps_a, hyps_b, sources, gold, samples=100, seed=0, beta=0.5):
    """One-tailed p-value for 'A scores higher than B' by paired resampling.

    p = (1 + #{resamples with F(A) <= F(B)}) / (samples + 1).
    """
    stats_a = corpus_stats(hyps_a, sources, gold, beta)
    stats_b = corpus_stats(hyps_b, sources, gold, beta)
    n = len(sources)
    rng = np.random.default_rng(seed)
    not_better = 0
    for _ in range(samples):
        idx = rng.integers(0, n, size=n) if n else np.zeros(0, dtype=np.int64)
        fa = stats_f(stats_a[idx].sum(axis=0), beta)
        fb = stats_f(stats_b[idx].sum(axis=0), beta)
        if fa <= fb:
            not_better += 1
    return (1 + not_better) / (samples + 1)


@dataclass
class M2Entry:
    source: tuple
    edits: dict  # annotator id -> list of Edit (possibly empty)

    def annotator_sets(self):
        return [self.edits[a] for a in sorted(self.edits)] or [[]]


def _parse_edit_line(line):
    fields = line[2:].split("|||")
    start, end = (int(x) for x in fields[0].split())
    etype = fields[1]
    correction = fields[2]
    replacement = () if correction in ("", "-NONE-") else tuple(correction.split())
    annotator = int(fields[5])
    return annotator, Edit(start, end, replacement, etype)


def parse_m2(text):
    entries = []
    for block in text.split("\n\n"):
        lines = [l for l in block.split("\n") if l]
        if not lines:
            continue
        if not lines[0].startswith("S "):
            raise ValueError(f"M2 block does not start with a sentence line: {lines[0]!r}")
        source = tuple(lines[0][2:].split())
        edits = {}
        for line in lines[1:]:
            if not line.startswith("A "):
                raise ValueError(f"unexpected M2 line: {line!r}")
            annotator, edit = _parse_edit_line(line)
            bucket = edits.setdefault(annotator, [])
            if edit.type != NOOP and edit.start >= 0:
                bucket.append(edit)
        entries.append(M2Entry(source, edits))
    return entries


def format_m2(entries):
    blocks = []
    for entry in entries:
        lines = ["S " + " ".join(entry.source)]
        for annotator in sorted(entry.edits):
            edits = entry.edits[annotator]
            if not edits:
                lines.append(f"A -1 -1|||{NOOP}|||-NONE-|||REQUIRED|||-NONE-|||{annotator}")
            for e in edits:
                corr = " ".join(e.replacement)
                lines.append(f"A {e.start} {e.end}|||{e.type or 'Other'}|||{corr}|||REQUIRED|||-NONE-|||{annotator}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def read_m2(path):
    with open(path, encoding="utf-8") as f:
        return parse_m2(f.read())


def write_m2(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_m2(entries))
