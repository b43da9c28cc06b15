#!/usr/bin/env python3
"""Run every shipped simulation script in-process and print the reports."""
import sys
from pathlib import Path

from examforge.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run() -> int:
    worst = 0
    for script in sorted((ROOT / "simulations").glob("*.json")):
        code = main(["--exercises-dir", str(ROOT / "exercises"),
                     "simulate", str(script)])
        worst = max(worst, code)
        print()
    return worst


if __name__ == "__main__":
    sys.exit(run())
