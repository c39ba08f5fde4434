#!/usr/bin/env python3
"""Run the cipher-corpus benchmark end to end and print the metrics.

This is the same pipeline the acceptance suite drives: generate bitext,
align, extract, train the encoder, index gold targets among distractors,
and report retrieval accuracy plus segmentation quality.

    python scripts/run_synthetic.py                 # full desk scale
    python scripts/run_synthetic.py --quick         # ~1 minute smoke run
    python scripts/run_synthetic.py --steps 500     # custom budget
"""

import argparse
import json

from phrasal.synthetic import CipherConfig, DeskRunConfig, end_to_end


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="small corpus, few steps")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="print raw metrics JSON only")
    args = parser.parse_args()

    if args.quick:
        cipher = CipherConfig(
            n_train=400, n_gold=50, n_distractors=800, seed=args.seed
        )
        cfg = DeskRunConfig(
            cipher=cipher, steps=args.steps or 300, n_auc_sentences=100
        )
    else:
        cipher = CipherConfig(seed=args.seed)
        cfg = DeskRunConfig(cipher=cipher, steps=args.steps or 2000)

    out = end_to_end(cfg, log=not args.json)
    if args.json:
        print(json.dumps(out, indent=2))
        return
    print()
    print(f"acc@1 (trained)    {out['acc_trained']:.3f}")
    print(f"acc@1 (untrained)  {out['acc_untrained']:.3f}")
    print(f"segmentation AUC   {out['seg_auc']:.3f}")
    print(f"subset violations  {out['subset_violations']}")
    print(f"index size         {out['index_size']}")
    total = sum(out["timings"].values())
    print(f"total wall time    {total/60:.1f} min")


if __name__ == "__main__":
    main()
