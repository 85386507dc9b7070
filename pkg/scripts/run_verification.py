#!/usr/bin/env python3
"""Run the convergence and gradient checks and write their tables.

Usage: python3 scripts/run_verification.py [OUTDIR]
"""
import sys

from tidalopt.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else "out/verification"
status = 0
for argv in (["verify", "mms-spatial"], ["verify", "mms-temporal"],
             ["verify", "taylor", "--config", "single-turbine-mini"]):
    print("$ tidalopt", " ".join(argv))
    status = max(status, main(argv + ["--out", out]))
sys.exit(status)
