import itertools
import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from nngec.alignment import (
    PhrasePair,
    PhraseTable,
    align_corpus,
    align_words,
    build_phrase_table,
    edit_distance_alignment,
    extract_phrases,
    ibm1_alignments,
    levenshtein_ops,
    score_phrase_table,
)

from conftest import toks

words = st.lists(st.sampled_from(list("abcd")), min_size=0, max_size=6).map(tuple)


def brute_distance(a, b):
    """Edit distance by plain recursion (tiny inputs only)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        brute_distance(a[1:], b[1:]) + (a[0] != b[0]),
        brute_distance(a[1:], b) + 1,
        brute_distance(a, b[1:]) + 1,
    )


def script_cost(ops):
    return sum(op != "match" for op, _, _ in ops)


def test_identity_alignment():
    s = toks("the cat sat")
    assert align_words((s, s)) == {(0, 0), (1, 1), (2, 2)}


def test_substitution_alignment():
    assert align_words((toks("a cat eat fish"), toks("a cat eats fish"))) == {(0, 0), (1, 1), (2, 2), (3, 3)}


def test_insertion_alignment():
    assert align_words((toks("a cat"), toks("a big cat"))) == {(0, 0), (1, 2)}


@given(words, words)
def test_edit_script_is_minimal_and_valid(a, b):
    ops = levenshtein_ops(a, b)
    assert script_cost(ops) == brute_distance(a, b)
    # replaying the script rebuilds the target
    out = []
    for op, i, j in ops:
        if op in ("match", "sub", "ins"):
            out.append(b[j])
        if op == "match":
            assert a[i] == b[j]
    assert tuple(out) == b
    assert [i for op, i, _ in ops if op != "ins"] == list(range(len(a)))


@given(words, words)
def test_alignment_indices_in_range(a, b):
    for i, j in edit_distance_alignment(a, b):
        assert 0 <= i < len(a) and 0 <= j < len(b)


def brute_phrases(pair, alignment, max_len):
    """Every span pair consistent with the links, by the definition."""
    source, target = pair
    out = Counter()
    for s1, s2 in itertools.combinations(range(len(source) + 1), 2):
        for t1, t2 in itertools.combinations(range(len(target) + 1), 2):
            if s2 - s1 > max_len or t2 - t1 > max_len:
                continue
            inside = [(i, j) for i, j in alignment if s1 <= i < s2 and t1 <= j < t2]
            crossing = [(i, j) for i, j in alignment if (s1 <= i < s2) != (t1 <= j < t2)]
            if inside and not crossing:
                links = tuple(sorted((i - s1, j - t1) for i, j in inside))
                out[PhrasePair(source[s1:s2], target[t1:t2], links)] += 1
    return out


def test_two_token_identity_extraction():
    pp = extract_phrases((toks("w1 w2"), toks("w1 w2")), {(0, 0), (1, 1)}, 7)
    assert {(p.source, p.target) for p in pp} == {
        (toks("w1"), toks("w1")), (toks("w2"), toks("w2")), (toks("w1 w2"), toks("w1 w2"))
    }


def test_unaligned_pair_extracts_nothing():
    assert extract_phrases((toks("a b"), toks("c d")), set(), 7) == []


def test_max_length_one():
    s = toks("x y z")
    pp = extract_phrases((s, s), {(0, 0), (1, 1), (2, 2)}, 1)
    assert sorted((p.source, p.target) for p in pp) == [((t,), (t,)) for t in sorted(s)]


def test_insertion_is_learnable():
    pair = (toks("a cat"), toks("a big cat"))
    pp = extract_phrases(pair, align_words(pair), 7)
    assert (toks("cat"), toks("big cat")) in {(p.source, p.target) for p in pp}


@settings(max_examples=60)
@given(words.filter(bool), words.filter(bool), st.integers(1, 4))
def test_extraction_matches_definition(a, b, max_len):
    links = edit_distance_alignment(a, b)
    got = extract_phrases((a, b), links, max_len)
    assert Counter(got) == brute_phrases((a, b), links, max_len)
    for p in got:
        assert p.alignment
        # monotone alignments give co-ordered spans
        assert list(p.alignment) == sorted(p.alignment, key=lambda l: (l[1], l[0]))


def test_forward_probability_hand_count():
    link = ((0, 0),)
    pairs = [PhrasePair(toks("eat"), toks("eats"), link)] * 3 + [PhrasePair(toks("eat"), toks("ate"), link)]
    table = score_phrase_table(pairs)
    by_target = {e.target: e for e in table.get(toks("eat"))}
    assert by_target[toks("eats")].scores[0] == 0.75
    assert by_target[toks("ate")].scores[0] == 0.25
    assert by_target[toks("eats")].scores[1] == 1.0


def test_single_target_has_unit_forward():
    table = score_phrase_table([PhrasePair(toks("x"), toks("y"), ((0, 0),))])
    assert table.get(toks("x"))[0].scores[0] == 1.0


def _corpus():
    return [
        (toks("a cat eat fish"), toks("a cat eats fish")),
        (toks("the dog eat"), toks("the dog eats")),
        (toks("cat eat"), toks("cat eats")),
        (toks("a dog"), toks("a big dog")),
        (toks("dogs eats"), toks("dogs eat")),
    ]


def test_table_normalization_and_range():
    pairs = _corpus()
    table = build_phrase_table(pairs, align_corpus(pairs), 3)
    inv = {}
    for src, entries in table.entries.items():
        assert math.isclose(sum(e.scores[0] for e in entries), 1.0, abs_tol=1e-9)
        for e in entries:
            assert all(0.0 < p <= 1.0 for p in e.scores)
            assert e.alignment
            inv.setdefault(e.target, 0.0)
            inv[e.target] += e.scores[1]
    for total in inv.values():
        assert math.isclose(total, 1.0, abs_tol=1e-9)


def test_symmetric_corpus_symmetric_scores():
    sents = [toks("a b c"), toks("b c"), toks("c a")]
    pairs = [(s, s) for s in sents]
    table = build_phrase_table(pairs, align_corpus(pairs), 3)
    for entries in table.entries.values():
        for e in entries:
            assert e.scores[0] == e.scores[1]
            assert e.scores[2] == e.scores[3]


def test_floor_before_log():
    from nngec.alignment import PhraseEntry

    e = PhraseEntry(toks("x"), (1.0, 0.0, 0.5, 1.0), ((0, 0),))
    assert e.log_scores()[1] == math.log(1e-12)


def test_phrase_table_round_trip(tmp_path):
    pairs = _corpus()
    table = build_phrase_table(pairs, align_corpus(pairs), 3)
    table.save(tmp_path / "pt")
    again = PhraseTable.load(tmp_path / "pt")
    assert again == table
    again.save(tmp_path / "pt2")
    assert (tmp_path / "pt").read_bytes() == (tmp_path / "pt2").read_bytes()


def test_ibm1_recovers_diagonal_on_near_copies():
    pairs = [(toks("a b c"), toks("a b c")), (toks("a c"), toks("a c")), (toks("b c d"), toks("b c d")), (toks("d a"), toks("d a"))]
    for (s, t), links in zip(pairs, ibm1_alignments(pairs)):
        assert links == {(i, i) for i in range(len(s))}


def test_ibm1_mode_via_align_corpus():
    pairs = [(toks("a b"), toks("a b")), (toks("b a"), toks("b a"))]
    assert align_corpus(pairs, "ibm1") == ibm1_alignments(pairs)
    with pytest.raises(ValueError):
        align_words(pairs[0], "giza")
