"""Run the acceptance suite and print one PASS/FAIL line per criterion.

Usage: python3 scripts/run_acceptance.py [--slow]
"""
import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slow", action="store_true", help="include the long infall reproduction")
    args = ap.parse_args(argv)
    marker = "slow or not slow" if args.slow else "not slow"
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"),
           "-q", "-m", marker]
    return subprocess.call(cmd, cwd=ROOT)


if __name__ == "__main__":
    sys.exit(main())
