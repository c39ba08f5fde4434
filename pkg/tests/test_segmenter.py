import pytest
import torch

from phrasal.corpus import Sentence, build_vocab
from phrasal.encoder import DropoutMask, EncoderConfig, PhraseEncoder, UNK_TOKEN, token_ids
from phrasal.segmenter import SegmentConfig, segment, segment_rows


def setup(seed=0):
    sent = Sentence(tuple(f"w{i}" for i in range(6)), "en", 3)
    vocab = build_vocab([sent], specials=(UNK_TOKEN,))
    cfg = EncoderConfig(
        vocab_size=len(vocab), d=16, layers=1, heads=2, o=8,
        dropout=0.2, max_positions=16, ffn_multiplier=2,
    )
    return sent, vocab, PhraseEncoder(cfg, seed=seed)


def test_config_validation():
    with pytest.raises(ValueError):
        SegmentConfig(index_threshold=0.0)
    with pytest.raises(ValueError):
        SegmentConfig(query_threshold=1.0)
    with pytest.raises(ValueError):
        SegmentConfig(max_span_len=0)


def test_zero_head_all_spans_score_half():
    sent, vocab, model = setup()
    with torch.no_grad():
        model.seg_head.weight.zero_()
        model.seg_head.bias.zero_()
    assert segment(sent, model, vocab, threshold=0.7) == []
    low = segment(sent, model, vocab, threshold=0.4, max_len=3)
    # every span of length <= 3 comes back, scored exactly 0.5
    n = len(sent)
    expected = sum(min(3, n - s) for s in range(n))
    assert len(low) == expected
    assert all(score == pytest.approx(0.5, abs=0) for _, score in low)


def test_threshold_monotone_subset():
    sent, vocab, model = setup(seed=5)
    strict = {(sp.s, sp.e) for sp, _ in segment(sent, model, vocab, 0.9)}
    loose = {(sp.s, sp.e) for sp, _ in segment(sent, model, vocab, 0.7)}
    assert strict <= loose


def test_sorted_and_deterministic():
    sent, vocab, model = setup(seed=7)
    a = segment(sent, model, vocab, 0.3)
    b = segment(sent, model, vocab, 0.3)
    assert a == b
    keys = [(sp.s, sp.e) for sp, _ in a]
    assert keys == sorted(keys)


def test_span_count_bound():
    sent, vocab, model = setup(seed=9)
    out = segment(sent, model, vocab, threshold=1e-9, max_len=4)
    assert len(out) <= len(sent) * 4


def test_scores_match_per_span_head_calls():
    sent, vocab, model = setup(seed=11)
    out = segment(sent, model, vocab, threshold=0.0 + 1e-9, max_len=4)
    with torch.no_grad():
        h = model.encode(token_ids(sent.tokens, vocab), DropoutMask.inference())
        for sp, score in out:
            single = float(model.span_prob(h, sp.s, sp.e))
            assert score == pytest.approx(single, rel=1e-6)


def test_empty_sentence_rejected():
    sent, vocab, model = setup()
    with pytest.raises(ValueError):
        segment(Sentence((), "en", 0), model, vocab, 0.5)


def test_segment_rows_format():
    sent, vocab, model = setup(seed=13)
    out = segment(sent, model, vocab, threshold=1e-9, max_len=2)
    rows = segment_rows(sent, out)
    assert rows[0]["sent_id"] == 3
    assert set(rows[0]) == {"sent_id", "s", "e", "score", "text"}
    assert rows[0]["text"] == " ".join(sent.tokens[rows[0]["s"] : rows[0]["e"] + 1])
