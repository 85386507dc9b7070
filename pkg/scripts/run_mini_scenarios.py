#!/usr/bin/env python3
"""K-sweep and layout optimisation on the desk-scale scenarios.

Usage: python3 scripts/run_mini_scenarios.py [OUTDIR] [SCENARIO ...]

Without scenario names, runs the sweep and the steady scenarios 1 and 3;
pass e.g. ``scenario2-mini scenario4-mini`` for the tidal cases (slower).
"""
import sys
from pathlib import Path

from tidalopt.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out")
names = sys.argv[2:] or ["scenario1-mini", "scenario3-mini"]
status = main(["sweep-k", "--config", "single-turbine-mini", "--out", str(out / "sweep")])
for name in names:
    print(f"$ tidalopt optimise --config {name}")
    status = max(status, main(["optimise", "--config", name, "--out", str(out / name)]))
sys.exit(status)
