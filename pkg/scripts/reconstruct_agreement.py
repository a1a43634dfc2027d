"""Rebuild the published verdict-agreement table from its raw counts.

    python3 scripts/reconstruct_agreement.py [tests/fixtures/agreement_counts.json]

Prints the agreement report and a per-block check of the combined score
against the published value.  Exit status 1 on any mismatch.
"""

import json
import pathlib
import sys

from releval.experiment import AgreementMatrix, agreement_table, combined_score, reversal_check

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main(path: pathlib.Path) -> int:
    raw = json.loads(path.read_text())
    matrices = {judge: {int(k): AgreementMatrix.from_counts(c, int(k), rows=raw["rows"])
                        for k, c in by_k.items()}
                for judge, by_k in raw["judges"].items()}
    print(agreement_table(matrices))
    bad = 0
    for judge, by_k in matrices.items():
        for (k, m), want in zip(sorted(by_k.items()), raw["published_combined"][judge]):
            got = f"{combined_score(m):.3f}"
            ok = got == want and reversal_check(m)
            bad += not ok
            print(f"{'ok ' if ok else 'BAD'} {judge:>14} @{k:<2} combined {got} (published {want})")
    return 1 if bad else 0


if __name__ == "__main__":
    arg = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "tests/fixtures/agreement_counts.json"
    sys.exit(main(arg))
