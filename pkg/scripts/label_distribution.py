"""Label distribution (truncated percentages) from raw label counts.

    python3 scripts/label_distribution.py [tests/fixtures/label_counts.json]
"""

import json
import pathlib
import sys

from releval.dataset import label_distribution_from_counts

ROOT = pathlib.Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    path = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "tests/fixtures/label_counts.json"
    counts = {int(k): v for k, v in json.loads(path.read_text()).items()}
    dist = label_distribution_from_counts(counts)
    for label in (2, 1, 0):
        print(f"label {label}: {dist[label].count:>10,}  {dist[label].percent:6.2f}%")
    print(f"total  : {sum(s.count for s in dist.values()):>10,}")
