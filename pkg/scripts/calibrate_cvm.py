"""Regenerate src/reliafit/data/cvm_critical.csv.

    python3 scripts/calibrate_cvm.py --workers 4
"""
import sys
from pathlib import Path

from reliafit.calibrate import main

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "reliafit" / "data" / "cvm_critical.csv"
    sys.exit(main(["--out", str(out), *sys.argv[1:]]))
