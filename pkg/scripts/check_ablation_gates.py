#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Check an ablation comparison.csv against the variant ordering gates."""
import sys
from pathlib import Path

import pandas as pd

METRIC = "P@10"
NO_RAD_MARGIN = 1.0


def check_gates(frame: pd.DataFrame, metric: str = METRIC, margin: float = NO_RAD_MARGIN):
    """Return (passed, violations) messages for the seed-averaged metric per variant."""
    means = frame.groupby("variant")[metric].mean()
    if "full" not in means:
        return [], ["comparison has no 'full' rows"]

    full = means["full"]
    passed, violations = [], []

    # Gates 1-3: full is not worse than any ablation
    for variant in ("no-FDRQ", "no-SAD", "no-RAD"):
        if variant not in means:
            continue
        if full >= means[variant]:
            passed.append(f"full {full:.2f} >= {variant} {means[variant]:.2f}")
        else:
            violations.append(f"full {full:.2f} < {variant} {means[variant]:.2f}")

    # Gate 4: removing retrieval costs at least the margin
    if "no-RAD" in means:
        gap = full - means["no-RAD"]
        if gap >= margin:
            passed.append(f"full - no-RAD = {gap:.2f} >= {margin:g}")
        else:
            violations.append(f"full - no-RAD = {gap:.2f} < {margin:g}")

    return passed, violations


def main():
    path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("comparison.csv")

    if not path.exists():
        print(f"❌ {path} not found. Run 'python app.py ablate' first.")
        sys.exit(1)

    passed, violations = check_gates(pd.read_csv(path))
    for message in passed:
        print(f"  ✅ {message}")
    for message in violations:
        print(f"  ❌ {message}")

    if violations:
        print(f"\n❌ ABLATION GATES FAILED ({len(violations)} violation(s))")
        sys.exit(1)
    print(f"\n✅ ALL {len(passed)} ABLATION GATES PASSED")
    sys.exit(0)


if __name__ == "__main__":
    main()
