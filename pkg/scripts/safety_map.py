"""Classify a grid of grasp targets and draw the map as text.

    python3 scripts/safety_map.py --length 0.6 --resolution 0.05

S = Safe, c = Caution, . = Risky. The base of the branch is marked with +.
"""

import argparse
import sys

from branchmanip.dlo import BranchParams
from branchmanip.safety import GridMode, SafetyLabel, build_safety_map

GLYPH = {SafetyLabel.SAFE: "S", SafetyLabel.CAUTION: "c", SafetyLabel.RISKY: "."}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=float, default=0.6, help="branch length L, meters")
    ap.add_argument("--ei", type=float, default=0.5, help="flexural rigidity EI, N m^2")
    ap.add_argument("--resolution", type=float, default=None, help="cell size (default L/15)")
    ap.add_argument("--csv", default=None, help="also write the samples to this CSV file")
    args = ap.parse_args()

    params = BranchParams(length_L=args.length, flexural_rigidity_EI=args.ei)
    L = params.length_L
    res = args.resolution or L / 15
    smap = build_safety_map(params, GridMode((-1.2 * L, 1.2 * L, -1.2 * L, 1.2 * L), res))
    cells = {(round(x, 9), round(z, 9)): lab for x, z, lab in smap.samples}
    xs = sorted({k[0] for k in cells})
    zs = sorted({k[1] for k in cells}, reverse=True)
    base_x = min(xs, key=abs)
    base_z = min(zs, key=abs)
    for z in zs:
        print("".join("+" if (x, z) == (base_x, base_z) else GLYPH[cells[(x, z)]] for x in xs))
    print(" ".join(f"{k} {v}" for k, v in smap.counts().items()))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(smap.to_csv())
    return 0


if __name__ == "__main__":
    sys.exit(main())
