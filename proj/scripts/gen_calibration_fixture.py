#!/usr/bin/env python3
"""Writes an imbalanced, over-confident binary dev set (edos-a labels).

About a quarter of the records are positive. The specialist's logit gap is
drawn from two overlapping Gaussians and then doubled, so temperature scaling
has something to correct.
"""

import json
import random
from pathlib import Path


def main():
    rng = random.Random(8675309)
    out = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "calibration" / "realistic_dev.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(600):
        positive = rng.random() < 0.25
        gap = rng.gauss(1.0, 1.5) if positive else rng.gauss(-2.0, 1.5)
        gap *= 2.0
        lines.append(json.dumps({
            "instance_id": f"cal-{i:04d}",
            "text": f"calibration record {i}",
            "gold_label": "sexist" if positive else "not sexist",
            "logits": [round(-gap / 2, 6), round(gap / 2, 6)],
        }))
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
