"""Full fine-tuning vs LoRA at several ranks on the separable toy task.

    python3 scripts/lab_sweep.py [--n 600] [--epochs 3]

Prints trainable parameter counts and final validation micro f1 per setting.
"""

import argparse

from releval.adapter_lab import TrainConfig, train
from releval.synth import separable_texts


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    texts, labels = separable_texts(args.n, args.seed)
    settings = [("full", None)] + [("lora", r) for r in (1, 2, 4, 8)]
    print(f"{'mode':<6} {'rank':>4} {'params':>8} {'val f1':>7} {'final lr':>9}")
    for mode, rank in settings:
        cfg = TrainConfig(mode=mode, rank=rank or 4, alpha=float(rank or 4), epochs=args.epochs,
                          seed=args.seed)
        res = train(texts, labels, cfg)
        last = res.history[-1]
        print(f"{mode:<6} {rank or '-':>4} {res.model.trainable_count():>8} "
              f"{last.val_micro_f1:>7.3f} {last.lr:>9.4g}")


if __name__ == "__main__":
    main()
