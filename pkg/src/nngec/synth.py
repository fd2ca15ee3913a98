"""Synthetic learner-error corpora for desk-scale experiments.

``generate_sentences`` produces grammatical sentences from a small seeded
grammar; ``synthesize_corpus`` corrupts them with token-level error rules and
derives gold edits that undo the corruptions.
"""

import random
from dataclasses import dataclass, field

from .corpus import ParallelCorpus
from .m2 import M2Entry, Edit, extract_edits

NOUNS = {
    "cat": "cats", "dog": "dogs", "book": "books", "apple": "apples", "teacher": "teachers",
    "student": "students", "friend": "friends", "car": "cars", "house": "houses", "letter": "letters",
    "song": "songs", "movie": "movies", "phone": "phones", "computer": "computers", "pen": "pens",
    "idea": "ideas", "problem": "problems", "question": "questions", "child": "children", "man": "men",
    "woman": "women", "city": "cities", "country": "countries", "company": "companies", "story": "stories",
    "box": "boxes", "bus": "buses", "egg": "eggs", "orange": "oranges", "umbrella": "umbrellas",
    "doctor": "doctors", "engineer": "engineers", "artist": "artists", "bird": "birds", "picture": "pictures",
    "game": "games", "meal": "meals", "job": "jobs", "report": "reports", "window": "windows",
}
VOWEL_START = set("aeiou")
ADJECTIVES = [
    "big", "small", "old", "new", "happy", "young", "good", "bad", "interesting", "important",
    "expensive", "cheap", "beautiful", "useful", "easy", "difficult", "red", "honest", "early", "quiet",
]
VERBS = {
    "eat": "eats", "like": "likes", "see": "sees", "want": "wants", "read": "reads", "buy": "buys",
    "make": "makes", "find": "finds", "need": "needs", "love": "loves", "write": "writes", "have": "has",
    "watch": "watches", "carry": "carries", "open": "opens", "visit": "visits", "help": "helps",
    "choose": "chooses", "sell": "sells", "draw": "draws",
}
SINGULAR_PRONOUNS = ["he", "she", "it"]
PLURAL_PRONOUNS = ["they", "we", "you", "I"]
PLACES = [
    ("in", "park"), ("in", "kitchen"), ("in", "garden"), ("in", "library"), ("on", "table"), ("on", "bus"),
    ("on", "train"), ("on", "beach"), ("at", "station"), ("at", "school"), ("at", "airport"), ("at", "office"),
]
TIMES = [
    ("every", "day"), ("every", "morning"), ("at", "night"), ("on", "sunday"), ("in", "summer"), ("in", "winter"),
]
ADVERBS = {"quickly": "quick", "carefully": "careful", "really": "real", "slowly": "slow", "happily": "happy"}
SINGULAR_DETS = ["a", "the", "this", "every", "one"]
PLURAL_DETS = ["the", "many", "two", "three", "these", "some", "several"]
SG_TRIGGERS = {"a", "an", "this", "every", "one"}
PL_TRIGGERS = {"many", "two", "three", "these", "several"}
PREPOSITIONS = ["in", "on", "at"]
CONFUSIONS = {"number": "amount", "few": "little", "much": "many", "advice": "advices", "its": "it's"}

PLURAL_TO_SINGULAR = {v: k for k, v in NOUNS.items()}
THIRD_TO_BASE = {v: k for k, v in VERBS.items()}
THIRD_TO_BASE["is"] = "are"
BASE_TO_THIRD = dict(VERBS)
BASE_TO_THIRD["are"] = "is"
PLURAL_SUBJECT_CUES = set(PLURAL_PRONOUNS) | set(PLURAL_TO_SINGULAR)


def _article(word):
    return "an" if word[0] in VOWEL_START else "a"


def _noun_phrase(rng, plural):
    noun = rng.choice(sorted(NOUNS))
    adj = rng.choice(ADJECTIVES) if rng.random() < 0.4 else None
    if plural:
        det = rng.choice(PLURAL_DETS)
        words = [NOUNS[noun]]
    else:
        det = rng.choice(SINGULAR_DETS)
        words = [noun]
    if adj:
        words.insert(0, adj)
    if det == "a":
        det = _article(words[0])
    return [det] + words


def _subject(rng):
    r = rng.random()
    if r < 0.25:
        return [rng.choice(SINGULAR_PRONOUNS)], False
    if r < 0.45:
        return [rng.choice(PLURAL_PRONOUNS)], True
    plural = rng.random() < 0.45
    return _noun_phrase(rng, plural), plural


def generate_sentence(rng):
    subj, plural = _subject(rng)
    verb = rng.choice(sorted(VERBS))
    words = list(subj)
    if rng.random() < 0.15:
        words.append(rng.choice(sorted(ADVERBS)))
    words.append(verb if plural else VERBS[verb])
    words += _noun_phrase(rng, rng.random() < 0.4)
    if rng.random() < 0.5:
        prep, place = rng.choice(PLACES)
        words += [prep, "the", place]
    if rng.random() < 0.3:
        words += list(rng.choice(TIMES))
    if rng.random() < 0.08:
        words += ["with", "a", "large", "number", "of", "friends"]
    words.append(".")
    return tuple(words)


def generate_sentences(count, seed=0):
    rng = random.Random(seed)
    return [generate_sentence(rng) for _ in range(count)]


@dataclass
class SyntheticErrorSpec:
    """Per-site application probability for each error rule."""

    rules: dict = field(
        default_factory=lambda: {
            "verb_agreement": 0.25,
            "noun_number": 0.2,
            "article_drop": 0.08,
            "article_swap": 0.3,
            "preposition_swap": 0.15,
            "word_choice": 0.3,
        }
    )
    seed: int = 0

    def __post_init__(self):
        for name, p in self.rules.items():
            if name not in RULES:
                raise ValueError(f"unknown error rule: {name}")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {name} must be in [0, 1], got {p}")


def _verb_agreement(tokens, i, rng):
    tok = tokens[i]
    if tok in THIRD_TO_BASE:
        return [THIRD_TO_BASE[tok]]
    if tok in BASE_TO_THIRD and i > 0 and tokens[i - 1] in PLURAL_SUBJECT_CUES:
        return [BASE_TO_THIRD[tok]]
    return None


def _noun_number(tokens, i, rng):
    tok = tokens[i]
    prev = tokens[i - 1] if i > 0 else None
    if tok in NOUNS and prev in SG_TRIGGERS:
        return [NOUNS[tok]]
    if tok in PLURAL_TO_SINGULAR and prev in PL_TRIGGERS:
        return [PLURAL_TO_SINGULAR[tok]]
    return None


def _article_drop(tokens, i, rng):
    return [] if tokens[i] in ("a", "an", "the") else None


def _article_swap(tokens, i, rng):
    swap = {"a": "an", "an": "a"}
    return [swap[tokens[i]]] if tokens[i] in swap else None


def _preposition_swap(tokens, i, rng):
    tok = tokens[i]
    if tok not in PREPOSITIONS:
        return None
    return [rng.choice([p for p in PREPOSITIONS if p != tok])]


def _word_choice(tokens, i, rng):
    tok = tokens[i]
    if tok in CONFUSIONS:
        return [CONFUSIONS[tok]]
    if tok in ADVERBS:
        return [ADVERBS[tok]]
    return None


RULES = {
    "verb_agreement": _verb_agreement,
    "noun_number": _noun_number,
    "article_drop": _article_drop,
    "article_swap": _article_swap,
    "preposition_swap": _preposition_swap,
    "word_choice": _word_choice,
}
RULE_ORDER = tuple(RULES)


def corrupt(tokens, spec, rng):
    """Apply the error rules; returns (corrupted tokens, per-token rule names).

    Each original token is changed by at most one rule.  The second value
    maps every original position to the rule that changed it (or None).
    """
    tokens = tuple(tokens)
    out = [[t] for t in tokens]
    applied = [None] * len(tokens)
    for name in RULE_ORDER:
        p = spec.rules.get(name, 0.0)
        if p <= 0.0:
            continue
        fn = RULES[name]
        for i in range(len(tokens)):
            if applied[i] is not None:
                continue
            repl = fn(tokens, i, rng)
            if repl is None or rng.random() >= p:
                continue
            out[i] = repl
            applied[i] = name
    corrupted = tuple(t for piece in out for t in piece)
    return corrupted, applied, out


def _edit_types(out, applied, edits):
    """Label each gold edit with the rule whose corrupted span it touches."""
    spans = []
    pos = 0
    for piece, rule in zip(out, applied):
        spans.append((pos, pos + len(piece), rule))
        pos += len(piece)
    labelled = []
    for e in edits:
        etype = "Other"
        for lo, hi, rule in spans:
            if rule is None:
                continue
            if (lo < e.end and e.start < hi) or (lo == hi and e.start <= lo <= e.end):
                etype = rule
                break
        labelled.append(Edit(e.start, e.end, e.replacement, etype))
    return labelled


def synthesize_corpus(sentences, spec):
    """Corrupted/clean parallel pairs plus gold M2 entries (annotator 0).

    The gold edits turn each corrupted source back into its clean target.
    """
    sentences = [tuple(s) for s in sentences]
    if not sentences:
        raise ValueError("no sentences to corrupt")
    rng = random.Random(spec.seed)
    pairs, entries = [], []
    for sent in sentences:
        corrupted, applied, out = corrupt(sent, spec, rng)
        edits = _edit_types(out, applied, extract_edits(corrupted, sent))
        pairs.append((corrupted, sent))
        entries.append(M2Entry(corrupted, {0: edits}))
    return ParallelCorpus(pairs), entries
