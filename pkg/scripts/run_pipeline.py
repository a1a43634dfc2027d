"""End-to-end demo on a synthetic fixture set.

    python3 scripts/run_pipeline.py OUT_DIR [--noise 0.15] [--seed 0]

Generates qips/annotations/experiments, then runs every CLI stage with a
noisy-oracle judge.  Outputs land in OUT_DIR/run.
"""

import argparse
import json
import pathlib
import sys

from releval import cli

STAGES = ("ingest", "stats", "render", "judge", "evaluate", "reenact", "analyze", "lab")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--noise", type=float, default=0.15)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--experiments", type=int, default=40)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    fx = args.out / "fixtures"
    code = cli.run(["synth", "--out", str(fx), "--seed", str(args.seed),
                    "--queries", str(args.queries), "--n-experiments", str(args.experiments)])
    if code:
        return code
    cfg = args.out / "config.json"
    cfg.write_text(json.dumps({
        "paths": {"qips": str(fx / "qips.jsonl"), "annotations": str(fx / "annotations.jsonl"),
                  "experiments": str(fx / "experiments.jsonl"), "output_dir": str(args.out / "run")},
        "seed": args.seed,
        "judge": {"kind": "noisy_oracle", "noise_rate": args.noise},
        "lab": {"epochs": 2, "d_hidden": 16},
    }, indent=2))
    for stage in STAGES:
        code = cli.run([stage, "--config", str(cfg)])
        if code:
            print(f"stage {stage} failed with exit code {code}", file=sys.stderr)
            return code
    print((args.out / "run" / "agreement.txt").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
