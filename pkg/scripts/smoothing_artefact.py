"""Compare multipole smoothings on the flat-space field at coincident angles.

The exact flat-space value vanishes there for dt > 0, so any residual is a
smoothing artefact. Usage: python3 scripts/smoothing_artefact.py [--ell-max 150]
"""
import argparse

import numpy as np

from bhsignal.cid import ModeSumConfig, flat_mode


def residual(cfg, r, dt):
    w = cfg.weights(1.0)
    ells = np.arange(cfg.ell_max + 1)
    modes = np.array([flat_mode(int(l), r, r, dt) for l in ells])
    return -float(np.dot(w, modes)) / (r * r)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ell-max", type=int, default=150)
    ap.add_argument("--r", type=float, default=6.0)
    args = ap.parse_args(argv)
    dts = (2.0, 3.0, 5.0, 8.0)
    print(f"{'smoothing':>10} {'cut':>6} " + " ".join(f"{'dt=' + str(d):>10}" for d in dts))
    for sm in ("gaussian", "heat", "heat-rx"):
        cfg = ModeSumConfig(args.ell_max, smoothing=sm)
        vals = " ".join(f"{abs(residual(cfg, args.r, d)):10.2e}" for d in dts)
        print(f"{sm:>10} {cfg.cut:6.1f} {vals}")


if __name__ == "__main__":
    main()
