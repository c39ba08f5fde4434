import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phrasal.aligner import Alignment
from phrasal.corpus import Sentence, SentencePair, build_vocab
from phrasal.extract import (
    ExtractionConfig,
    PhrasePair,
    PhraseSpan,
    all_spans,
    apply_filters,
    enumerate_consistent,
    phrase_pair_rows,
    segmentation_examples,
)


def mk_pair(xs, ys, i=0):
    return SentencePair(
        Sentence(tuple(xs), "de", i), Sentence(tuple(ys), "en", i), i
    )


def brute_force_consistent(pair, links, max_len, strict=False):
    """O(|x|^2 |y|^2) oracle: test the definition on every span pair."""
    nx, ny = len(pair.x), len(pair.y)
    found = set()
    for i in range(nx):
        for j in range(i, min(nx, i + max_len)):
            for u in range(ny):
                for v in range(u, min(ny, u + max_len)):
                    connecting = any(i <= a <= j and u <= b <= v for a, b in links)
                    if not connecting:
                        continue
                    src_ok = all(
                        u <= b <= v for a, b in links if i <= a <= j
                    )
                    tgt_ok = all(
                        i <= a <= j for a, b in links if u <= b <= v
                    )
                    if not (src_ok and tgt_ok):
                        continue
                    if strict:
                        src_links = {a for a, _ in links}
                        tgt_links = {b for _, b in links}
                        if any(t not in src_links for t in range(i, j + 1)):
                            continue
                        if any(t not in tgt_links for t in range(u, v + 1)):
                            continue
                    found.add((i, j, u, v))
    return found


def spans_of(pairs):
    return {(p.src.s, p.src.e, p.tgt.s, p.tgt.e) for p in pairs}


# ----------------------------------------------------------------------
# enumerate_consistent
# ----------------------------------------------------------------------


def test_mutually_enclosed_spans_are_emitted():
    # the German span pairs with a longer English span through 1-2 links
    pair = mk_pair(
        ["mit", "einer", "Schweigeminute", "begonnen"],
        ["began", "with", "a", "minute", "'s", "silence"],
    )
    links = {(0, 1), (1, 2), (2, 3), (2, 5), (3, 0)}
    align = Alignment(frozenset(links), 4, 6)
    got = spans_of(enumerate_consistent(pair, align, max_len=8))
    assert (1, 2, 2, 5) in got  # "einer Schweigeminute" <-> "a minute 's silence"
    # y[2..4] drops "silence" while x[2] still links to it: a crossing link
    assert (1, 2, 2, 4) not in got
    assert got == brute_force_consistent(pair, links, 8)


def test_monotone_identity_yields_all_subspans():
    n = 5
    pair = mk_pair([f"s{i}" for i in range(n)], [f"t{i}" for i in range(n)])
    align = Alignment(frozenset((k, k) for k in range(n)), n, n)
    got = spans_of(enumerate_consistent(pair, align, max_len=n))
    assert got == {(i, j, i, j) for i in range(n) for j in range(i, n)}
    assert len(got) == n * (n + 1) // 2
    # the length cap prunes longer spans
    capped = spans_of(enumerate_consistent(pair, align, max_len=2))
    assert capped == {(i, j, i, j) for i in range(n) for j in range(i, min(n, i + 2))}


def test_empty_alignment_yields_nothing():
    pair = mk_pair(["a", "b"], ["x", "y"])
    align = Alignment(frozenset(), 2, 2)
    assert enumerate_consistent(pair, align) == []


def test_unaligned_boundary_extension():
    # y[1] and y[2] are unaligned: the target span may absorb them, and
    # the length cap prunes the longest variant
    pair = mk_pair(["a"], ["x", "pad", "pad2"])
    align = Alignment(frozenset({(0, 0)}), 1, 3)
    got = spans_of(enumerate_consistent(pair, align, max_len=3))
    assert got == {(0, 0, 0, 0), (0, 0, 0, 1), (0, 0, 0, 2)}
    capped = spans_of(enumerate_consistent(pair, align, max_len=2))
    assert capped == {(0, 0, 0, 0), (0, 0, 0, 1)}


def test_mismatched_alignment_rejected():
    pair = mk_pair(["a"], ["x"])
    with pytest.raises(ValueError):
        enumerate_consistent(pair, Alignment(frozenset(), 2, 1))


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_matches_brute_force(data):
    nx = data.draw(st.integers(1, 7))
    ny = data.draw(st.integers(1, 7))
    cells = [(i, j) for i in range(nx) for j in range(ny)]
    links = frozenset(data.draw(st.sets(st.sampled_from(cells), max_size=10)))
    max_len = data.draw(st.integers(1, 8))
    strict = data.draw(st.booleans())
    pair = mk_pair([f"s{i}" for i in range(nx)], [f"t{j}" for j in range(ny)])
    align = Alignment(links, nx, ny)
    got = spans_of(enumerate_consistent(pair, align, max_len, strict))
    assert got == brute_force_consistent(pair, links, max_len, strict)


def test_no_link_crosses_any_emitted_boundary():
    rng = random.Random(17)
    for _ in range(50):
        nx, ny = rng.randint(1, 9), rng.randint(1, 9)
        links = frozenset(
            (rng.randrange(nx), rng.randrange(ny))
            for _ in range(rng.randint(0, 10))
        )
        pair = mk_pair([f"s{i}" for i in range(nx)], [f"t{j}" for j in range(ny)])
        out = enumerate_consistent(pair, Alignment(links, nx, ny), max_len=8)
        for pp in out:
            for a, b in links:
                in_src = pp.src.s <= a <= pp.src.e
                in_tgt = pp.tgt.s <= b <= pp.tgt.e
                assert in_src == in_tgt, (pp, (a, b))


def test_pair_ids_sequential_and_sorted():
    pair = mk_pair(["a", "b"], ["x", "y"])
    align = Alignment(frozenset({(0, 0), (1, 1)}), 2, 2)
    out = enumerate_consistent(pair, align, start_pair_id=10)
    assert [p.pair_id for p in out] == list(range(10, 10 + len(out)))
    keys = [(p.src.s, p.src.e, p.tgt.s, p.tgt.e) for p in out]
    assert keys == sorted(keys)


# ----------------------------------------------------------------------
# apply_filters
# ----------------------------------------------------------------------


def _span(tokens, s, e, lang="en", sid=0):
    return PhraseSpan(Sentence(tuple(tokens), lang, sid), s, e)


def test_filter_boundary_frequency():
    vocab_x = build_vocab([Sentence(("the",) * 40 + ("treaty",), "de", 0)])
    vocab_y = build_vocab([Sentence(("x",), "en", 0)])
    pair = PhrasePair(
        _span(["the", "treaty"], 0, 1, "de"), _span(["x"], 0, 0), 0
    )
    cfg = ExtractionConfig(boundary_freq_threshold=30)
    assert apply_filters([pair], vocab_x, vocab_y, cfg) == []
    # below the threshold the pair survives
    assert apply_filters([pair], vocab_x, vocab_y, ExtractionConfig(boundary_freq_threshold=100)) == [pair]


def test_filter_numeric_punct_only():
    vocab = build_vocab([])
    pair = PhrasePair(
        _span(["gut"], 0, 0, "de"), _span(["1994", ","], 0, 1), 0
    )
    assert apply_filters([pair], vocab, vocab, ExtractionConfig()) == []
    kept = apply_filters(
        [pair], vocab, vocab, ExtractionConfig(drop_numeric_punct=False)
    )
    assert kept == [pair]


def test_filters_match_rule_recheck_on_random_pairs():
    rng = random.Random(23)
    words = [f"w{i}" for i in range(20)] + ["1994", ",", "99"]
    freq_x = build_vocab(
        [Sentence(tuple(rng.choices(words, k=400)), "de", 0)]
    )
    freq_y = build_vocab(
        [Sentence(tuple(rng.choices(words, k=400)), "en", 0)]
    )
    cfg = ExtractionConfig(boundary_freq_threshold=20)
    pairs = []
    for n in range(200):
        xs = rng.choices(words, k=rng.randint(1, 4))
        ys = rng.choices(words, k=rng.randint(1, 4))
        pairs.append(
            PhrasePair(
                _span(xs, 0, len(xs) - 1, "de", n), _span(ys, 0, len(ys) - 1, "en", n), n
            )
        )
    survivors = apply_filters(pairs, freq_x, freq_y, cfg)
    # independent literal re-check of both rules
    def numeric_punct(tok):
        return all(c.isdigit() or not c.isalnum() for c in tok)
    expected = []
    for p in pairs:
        sx, sy = p.src.tokens, p.tgt.tokens
        if freq_x.freq(sx[0]) > 20 or freq_x.freq(sx[-1]) > 20:
            continue
        if freq_y.freq(sy[0]) > 20 or freq_y.freq(sy[-1]) > 20:
            continue
        if all(numeric_punct(t) for t in sx) or all(numeric_punct(t) for t in sy):
            continue
        expected.append(p)
    assert survivors == expected


def test_filters_never_modify_spans():
    vocab = build_vocab([])
    pair = PhrasePair(_span(["a", "b"], 0, 1, "de"), _span(["x"], 0, 0), 7)
    (kept,) = apply_filters([pair], vocab, vocab, ExtractionConfig())
    assert kept is pair


# ----------------------------------------------------------------------
# segmentation_examples
# ----------------------------------------------------------------------


def test_single_token_sentence_no_negatives():
    sent = Sentence(("w",), "en", 0)
    out = segmentation_examples([PhraseSpan(sent, 0, 0)], sent, random.Random(0))
    assert [(sp.s, sp.e, label) for sp, label in out] == [(0, 0, 1)]


def test_balanced_negative_count():
    sent = Sentence(tuple(f"w{i}" for i in range(5)), "en", 0)
    positives = [PhraseSpan(sent, 0, 0), PhraseSpan(sent, 1, 2), PhraseSpan(sent, 3, 4)]
    out = segmentation_examples(positives, sent, random.Random(1), max_len=4)
    pos = [sp for sp, label in out if label == 1]
    neg = [sp for sp, label in out if label == 0]
    assert len(pos) == 3
    assert len(neg) == 3


def test_sample_deterministic_and_disjoint():
    sent = Sentence(tuple(f"w{i}" for i in range(8)), "en", 0)
    positives = [PhraseSpan(sent, 0, 1), PhraseSpan(sent, 2, 4)]
    a = segmentation_examples(positives, sent, random.Random(42), max_len=5)
    b = segmentation_examples(positives, sent, random.Random(42), max_len=5)
    assert a == b
    universe = set(all_spans(8, 5))
    pos_set = {(sp.s, sp.e) for sp, label in a if label == 1}
    for sp, label in a:
        if label == 0:
            assert (sp.s, sp.e) in universe
            assert (sp.s, sp.e) not in pos_set


@given(
    st.integers(1, 10),
    st.integers(1, 8),
    st.integers(0, 2**30),
)
def test_balanced_count_property(n, max_len, seed):
    sent = Sentence(tuple(f"w{i}" for i in range(n)), "en", 0)
    rng = random.Random(seed)
    universe = all_spans(n, max_len)
    n_pos = rng.randint(1, len(universe))
    positives = [PhraseSpan(sent, s, e) for s, e in rng.sample(universe, n_pos)]
    out = segmentation_examples(positives, sent, random.Random(seed), max_len)
    n_neg = sum(1 for _, label in out if label == 0)
    available = len(universe) - n_pos
    assert n_neg == min(n_pos, available)


def test_phrase_pair_rows_format():
    pair = PhrasePair(
        _span(["einer", "Schweigeminute"], 0, 1, "de"),
        _span(["a", "minute", "'s", "silence"], 0, 3),
        3,
    )
    (row,) = list(phrase_pair_rows([pair], sent_id=9))
    assert row == {
        "pair_id": 3,
        "sent_id": 9,
        "src": {"s": 0, "e": 1, "text": "einer Schweigeminute"},
        "tgt": {"s": 0, "e": 3, "text": "a minute 's silence"},
    }
