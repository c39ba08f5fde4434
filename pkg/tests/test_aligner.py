import random
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phrasal.aligner import (
    NULL,
    Alignment,
    EMConfig,
    EmptyCorpusError,
    TranslationTable,
    align_corpus,
    corpus_log_likelihood,
    format_pharaoh,
    read_pharaoh,
    symmetrize,
    train_model1,
    viterbi_align,
    write_pharaoh,
)
from phrasal.corpus import Sentence, SentencePair


def mk_pair(xs, ys, i=0):
    return SentencePair(
        Sentence(tuple(xs), "xx", i), Sentence(tuple(ys), "yy", i), i
    )


def reference_em(pairs, iterations, use_null):
    """Straight-line Model 1 EM over dense dicts, written independently."""
    t = {}
    rows = defaultdict(set)
    for xs, ys in pairs:
        src = list(xs) + ([NULL] if use_null else [])
        for e in src:
            rows[e].update(ys)
    for e, fs in rows.items():
        for f in fs:
            t[(e, f)] = 1.0 / len(fs)
    for _ in range(iterations):
        count = defaultdict(float)
        total = defaultdict(float)
        for xs, ys in pairs:
            src = list(xs) + ([NULL] if use_null else [])
            for f in ys:
                z = sum(t[(e, f)] for e in src)
                for e in src:
                    count[(e, f)] += t[(e, f)] / z
                    total[e] += t[(e, f)] / z
        t = {(e, f): c / total[e] for (e, f), c in count.items()}
    return t


# ----------------------------------------------------------------------
# train_model1
# ----------------------------------------------------------------------


def test_single_cooccurrence_forces_mass():
    table = train_model1([mk_pair(["hund"], ["dog"])], EMConfig(iterations=2, use_null=False))
    assert table.prob("hund", "dog") == pytest.approx(1.0, abs=1e-12)


def test_second_pair_disambiguates():
    pairs = [mk_pair(["a", "b"], ["x", "y"], 0), mk_pair(["a"], ["x"], 1)]
    cfg = EMConfig(iterations=5, use_null=False)
    table = train_model1(pairs, cfg)
    assert table.prob("a", "x") > table.prob("a", "y")
    # exact agreement with the independently written EM
    ref = reference_em([(("a", "b"), ("x", "y")), (("a",), ("x",))], 5, False)
    for (e, f), p in ref.items():
        assert table.prob(e, f) == pytest.approx(p, rel=1e-12)


def test_em_matches_reference_with_null():
    rng = random.Random(5)
    words_x = [f"s{i}" for i in range(12)]
    words_y = [f"t{i}" for i in range(12)]
    pairs = []
    raw = []
    for i in range(30):
        xs = tuple(rng.choices(words_x, k=rng.randint(1, 5)))
        ys = tuple(rng.choices(words_y, k=rng.randint(1, 5)))
        pairs.append(mk_pair(xs, ys, i))
        raw.append((xs, ys))
    cfg = EMConfig(iterations=3, use_null=True)
    table = train_model1(pairs, cfg)
    ref = reference_em(raw, 3, True)
    for (e, f), p in ref.items():
        assert table.prob(e, f) == pytest.approx(p, rel=1e-10), (e, f)


def _synthetic_corpus(n_pairs=100, seed=11):
    rng = random.Random(seed)
    src_vocab = [f"s{i}" for i in range(30)]
    mapping = {w: f"t{i}" for i, w in enumerate(src_vocab)}
    pairs = []
    for i in range(n_pairs):
        xs = rng.choices(src_vocab, k=rng.randint(2, 8))
        ys = [mapping[w] for w in xs]
        if rng.random() < 0.3:
            ys = ys[::-1]
        pairs.append(mk_pair(xs, ys, i))
    return pairs


def test_log_likelihood_non_decreasing_and_rows_stochastic():
    pairs = _synthetic_corpus()
    lls = []
    table = train_model1(pairs, EMConfig(iterations=5), log_likelihoods=lls)
    assert len(lls) == 5
    # recompute the final iteration's value independently from the table
    recomputed = corpus_log_likelihood(pairs, table, use_null=True)
    assert recomputed == pytest.approx(lls[-1], abs=1e-9)
    for prev, cur in zip(lls, lls[1:]):
        assert cur >= prev - 1e-9
    for e, row in table.rows.items():
        assert sum(row.values()) == pytest.approx(1.0, abs=1e-9), e
        assert all(0.0 <= p <= 1.0 for p in row.values())


def test_row_stochastic_after_every_iteration():
    pairs = _synthetic_corpus(40, seed=3)
    for iters in (1, 2, 3):
        table = train_model1(pairs, EMConfig(iterations=iters))
        for e, row in table.rows.items():
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)


def test_empty_corpus_raises():
    with pytest.raises(EmptyCorpusError):
        train_model1([], EMConfig())


def test_empty_side_pairs_skipped():
    # an empty-side pair cannot be constructed as a Sentence is non-empty
    # only by convention; emulate by filtering upstream: train on the rest
    pairs = [mk_pair(["a"], ["x"], 0)]
    table = train_model1(pairs, EMConfig(iterations=1, use_null=False))
    assert table.prob("a", "x") == pytest.approx(1.0)


# ----------------------------------------------------------------------
# viterbi_align
# ----------------------------------------------------------------------


def test_viterbi_trivial():
    pair = mk_pair(["hund"], ["dog"])
    table = TranslationTable()
    table.rows = {"hund": {"dog": 1.0}}
    assert viterbi_align(pair, table, "fwd").links == {(0, 0)}


def test_viterbi_uniform_tie_breaks_smallest_index():
    pair = mk_pair(["a", "b"], ["x"])
    table = TranslationTable()
    table.rows = {"a": {"x": 0.5}, "b": {"x": 0.5}}
    assert viterbi_align(pair, table, "fwd").links == {(0, 0)}


def test_viterbi_null_absorbs_only_on_strict_improvement():
    pair = mk_pair(["a"], ["x"])
    table = TranslationTable()
    table.rows = {"a": {"x": 0.2}, NULL: {"x": 0.2}}
    assert viterbi_align(pair, table, "fwd").links == {(0, 0)}
    table.rows[NULL]["x"] = 0.9
    assert viterbi_align(pair, table, "fwd").links == set()


def test_viterbi_reverse_direction_source_major():
    pair = mk_pair(["a", "b"], ["x", "y"])
    table = TranslationTable()  # trained t(x-token | y-token)
    table.rows = {"x": {"b": 1.0}, "y": {"a": 1.0}}
    assert viterbi_align(pair, table, "rev").links == {(1, 0), (0, 1)}


def test_viterbi_matches_brute_force_argmax():
    rng = random.Random(7)
    xs = [f"s{i}" for i in range(10)]
    ys = [f"t{i}" for i in range(10)]
    pair = mk_pair(xs, ys)
    table = TranslationTable(epsilon=1e-6)
    table.rows = {
        e: {f: rng.random() for f in ys} for e in xs + [NULL]
    }
    got = viterbi_align(pair, table, "fwd").links
    expect = set()
    for j, f in enumerate(ys):
        scores = [(table.prob(e, f), -i) for i, e in enumerate(xs)]
        best_p, neg_i = max(scores)
        if table.prob(NULL, f) <= best_p:
            expect.add((-neg_i, j))
    assert got == expect


# ----------------------------------------------------------------------
# symmetrize
# ----------------------------------------------------------------------


def _al(links, n=6, m=6):
    return Alignment(frozenset(links), n, m)


def test_symmetrize_idempotent_on_identical_inputs():
    a = _al({(0, 0), (2, 3)})
    for h in ("intersection", "union", "grow-diag-final-and"):
        assert symmetrize(a, a, h).links == a.links


def test_symmetrize_set_identities():
    fwd = _al({(0, 0), (1, 1)})
    rev = _al({(0, 0)})
    assert symmetrize(fwd, rev, "intersection").links == {(0, 0)}
    assert symmetrize(fwd, rev, "union").links == {(0, 0), (1, 1)}


def test_symmetrize_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        symmetrize(_al(set(), 3, 3), _al(set(), 4, 3), "union")


def reference_gdfa(fwd, rev, n, m):
    """Independent transcription of the published grow-diag-final-and
    pseudocode: explicit aligned-row/col bookkeeping, queue-free."""
    union = set(fwd) | set(rev)
    a = set(fwd) & set(rev)
    def aligned_rows():
        return {i for i, _ in a}
    def aligned_cols():
        return {j for _, j in a}
    neighbor_order = [
        (-1, 0), (0, -1), (1, 0), (0, 1),
        (-1, -1), (-1, 1), (1, -1), (1, 1),
    ]
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(m):
                if (i, j) not in a:
                    continue
                for di, dj in neighbor_order:
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < n and 0 <= nj < m):
                        continue
                    if (ni, nj) in a or (ni, nj) not in union:
                        continue
                    if ni not in aligned_rows() or nj not in aligned_cols():
                        a.add((ni, nj))
                        changed = True
    for cand in (fwd, rev):
        for i in range(n):
            for j in range(m):
                if (i, j) in cand and i not in aligned_rows() and j not in aligned_cols():
                    a.add((i, j))
    return a


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_gdfa_matches_reference_on_random_links(data):
    n, m = 6, 6
    cells = [(i, j) for i in range(n) for j in range(m)]
    fwd = frozenset(data.draw(st.sets(st.sampled_from(cells), max_size=10)))
    rev = frozenset(data.draw(st.sets(st.sampled_from(cells), max_size=10)))
    got = symmetrize(_al(fwd, n, m), _al(rev, n, m), "grow-diag-final-and").links
    assert got == reference_gdfa(fwd, rev, n, m)
    # sandwich property
    assert fwd & rev <= got <= fwd | rev


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_intersection_subset_gdfa_subset_union(data):
    cells = [(i, j) for i in range(5) for j in range(5)]
    fwd = frozenset(data.draw(st.sets(st.sampled_from(cells), max_size=8)))
    rev = frozenset(data.draw(st.sets(st.sampled_from(cells), max_size=8)))
    inter = symmetrize(_al(fwd, 5, 5), _al(rev, 5, 5), "intersection").links
    gdfa = symmetrize(_al(fwd, 5, 5), _al(rev, 5, 5), "grow-diag-final-and").links
    union = symmetrize(_al(fwd, 5, 5), _al(rev, 5, 5), "union").links
    assert inter <= gdfa <= union


# ----------------------------------------------------------------------
# pharaoh + table dump + end-to-end alignment
# ----------------------------------------------------------------------


def test_pharaoh_roundtrip(tmp_path):
    pairs = [mk_pair(["a", "b"], ["x", "y"], 0), mk_pair(["c"], ["z"], 1)]
    alignments = [
        Alignment(frozenset({(0, 0), (1, 1)}), 2, 2),
        Alignment(frozenset({(0, 0)}), 1, 1),
    ]
    path = tmp_path / "align.pharaoh"
    write_pharaoh(alignments, str(path))
    assert path.read_text().splitlines() == ["0-0 1-1", "0-0"]
    back = read_pharaoh(str(path), pairs)
    assert [a.links for a in back] == [a.links for a in alignments]


def test_pharaoh_line_count_mismatch(tmp_path):
    path = tmp_path / "align.pharaoh"
    path.write_text("0-0\n")
    with pytest.raises(ValueError):
        read_pharaoh(str(path), [mk_pair(["a"], ["x"], 0), mk_pair(["b"], ["y"], 1)])


def test_format_pharaoh_sorted():
    a = Alignment(frozenset({(2, 1), (0, 0), (1, 2)}), 3, 3)
    assert format_pharaoh(a) == "0-0 1-2 2-1"


def test_table_dump_rows():
    table = TranslationTable()
    table.rows = {"a": {"x": 1.0}, NULL: {"x": 1.0}}
    rows = sorted(table.dump_rows(), key=lambda r: str(r["e"]))
    assert {"e": "a", "f": "x", "p": 1.0} in rows
    assert {"e": None, "f": "x", "p": 1.0} in rows


def test_align_corpus_recovers_monotone_mapping():
    pairs = _synthetic_corpus(60, seed=2)
    alignments = align_corpus(pairs, EMConfig(iterations=5))
    # the generator's cipher maps s{i} -> t{i} globally
    mapping = {f"s{i}": f"t{i}" for i in range(30)}
    correct = total = 0
    for pair, align in zip(pairs, alignments):
        for i, j in align.links:
            total += 1
            correct += pair.y.tokens[j] == mapping[pair.x.tokens[i]]
    assert total > 0
    assert correct / total > 0.9
