"""Grid-probe training recipes on a reduced cipher corpus.

Reports strict and lenient acc@1 plus segmentation AUC per recipe so the
desk configuration can be chosen on evidence.  Not part of the test
suite; run ad hoc.
"""

import json
import sys
import time

from phrasal.aligner import EMConfig, align_corpus
from phrasal.corpus import build_vocab
from phrasal.encoder import EncoderConfig, PhraseEncoder, UNK_TOKEN
from phrasal.extract import ExtractionConfig, apply_filters, enumerate_consistent
from phrasal.pipeline import eval_acc_at_1, eval_with_distractors
from phrasal.synthetic import (
    CipherConfig,
    CipherCorpus,
    DeskRunConfig,
    segmentation_quality,
)
from phrasal.trainer import TrainConfig, train


def run_recipe(
    shared, lr, temperature, dropout, batch_size, steps, beta=1.0,
    d=64, layers=2, heads=2, max_pairs=4,
):
    corpus, train_pairs, extracted, vocab, gold, distractors = shared
    enc_cfg = EncoderConfig(
        vocab_size=len(vocab), d=d, layers=layers, heads=heads, o=32,
        dropout=dropout,
    )
    model = PhraseEncoder(enc_cfg, seed=0)
    cfg = TrainConfig(
        learning_rate=lr, dropout=dropout, batch_size=batch_size,
        steps=steps, temperature=temperature, beta=beta, seed=0,
        max_pairs_per_sentence=max_pairs,
    )
    t0 = time.perf_counter()
    train(train_pairs, extracted, vocab, model, cfg, max_phrase_len=8)
    train_s = time.perf_counter() - t0
    strict, idx = eval_with_distractors(gold, distractors, model, vocab)
    lenient = eval_acc_at_1(gold, model, vocab, idx, lenient=True)
    desk = DeskRunConfig(cipher=corpus.cfg, n_auc_sentences=200)
    auc, violations = segmentation_quality(corpus, model, vocab, desk)
    return {
        "lr": lr, "temp": temperature, "dropout": dropout,
        "batch": batch_size, "steps": steps, "beta": beta,
        "d": d, "layers": layers, "heads": heads, "max_pairs": max_pairs,
        "strict": round(strict, 3), "lenient": round(lenient, 3),
        "auc": round(auc, 3), "violations": violations,
        "train_s": round(train_s, 1),
    }


def main():
    cipher = CipherConfig(n_train=1000, n_gold=150, n_distractors=2000, seed=0)
    corpus = CipherCorpus(cipher)
    train_pairs, _ = corpus.generate(cipher.n_train, "train")
    gold_pairs, gold_aligns = corpus.generate(cipher.n_gold, "gold", start_id=1_000_000)
    gold = corpus.gold_items(gold_pairs, gold_aligns)
    distractors = corpus.distractor_spans(cipher.n_distractors)
    alignments = align_corpus(train_pairs, EMConfig(iterations=5))
    vocab_x = build_vocab(p.x for p in train_pairs)
    vocab_y = build_vocab(p.y for p in train_pairs)
    extracted = {
        p.id: apply_filters(
            enumerate_consistent(p, a, 8), vocab_x, vocab_y, ExtractionConfig()
        )
        for p, a in zip(train_pairs, alignments)
    }
    vocab = build_vocab(
        [p.x for p in train_pairs] + [p.y for p in train_pairs],
        specials=(UNK_TOKEN,),
    )
    shared = (corpus, train_pairs, extracted, vocab, gold, distractors)

    recipes = json.loads(sys.argv[1]) if len(sys.argv) > 1 else [
        {"lr": 2e-3, "temperature": 1.0, "dropout": 0.2, "batch_size": 16, "steps": 800},
        {"lr": 2e-3, "temperature": 0.2, "dropout": 0.2, "batch_size": 16, "steps": 800},
        {"lr": 2e-3, "temperature": 1.0, "dropout": 0.1, "batch_size": 16, "steps": 800},
        {"lr": 3e-3, "temperature": 0.2, "dropout": 0.1, "batch_size": 16, "steps": 800},
    ]
    for recipe in recipes:
        print(json.dumps(run_recipe(shared, **recipe)), flush=True)


if __name__ == "__main__":
    main()
