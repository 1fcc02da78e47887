"""Scan the receiver switch-on time and report the non-direct signal features.

Usage: python3 scripts/switch_scan.py [--config scripts/configs/switch_scan.json]
       [--preset desk|paper] [--smoothing gaussian|heat|heat-rx] [--cache DIR]
"""
import argparse
import json
from pathlib import Path

import numpy as np

from bhsignal import scenarios as sc
from bhsignal.cid import SMOOTHINGS

HERE = Path(__file__).resolve().parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(HERE / "configs" / "switch_scan.json"))
    ap.add_argument("--preset", choices=sorted(sc.PRESET_POINTS), default="desk")
    ap.add_argument("--smoothing", choices=SMOOTHINGS)
    ap.add_argument("--cache", default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    data = json.loads(Path(args.config).read_text())
    if args.smoothing:
        data.setdefault("solver", {})["smoothing"] = args.smoothing
    cfg = sc.load_config(data, "scan-switch", args.preset, out=args.out, cache=args.cache)
    text = sc.run(cfg)
    _, rows = sc.read_csv_text(text)
    ok = [r for r in rows if r["status"] == "ok"]
    B1 = np.array([float(r["B1"]) for r in ok])
    nd = np.array([abs(sc.parse_complex(r["C2_nd"])) for r in ok])
    direct = abs(sc.parse_complex(ok[0]["C2_d_B1_0"]))

    print(f"{'B1/M':>8} {'|C2_nd|':>12} {'ratio':>8}")
    for b, v in zip(B1, nd):
        print(f"{b:8.3f} {v:12.5e} {v / direct:8.4f}")
    inner = (np.diff(np.sign(np.diff(nd))) < 0).nonzero()[0] + 1
    peaks = ", ".join(f"{B1[k]:.2f}M ({nd[k] / direct:.3f})" for k in inner)
    print(f"local maxima: {peaks or 'none'}")
    if len(rows) != len(ok):
        print(f"{len(rows) - len(ok)} rows not ok; see the status column")


if __name__ == "__main__":
    main()
