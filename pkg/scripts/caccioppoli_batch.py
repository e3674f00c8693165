"""Caccioppoli batch: 20 instances at two resolutions, fitted constants and stability.

    python3 scripts/caccioppoli_batch.py --out results/caccioppoli
"""
import argparse
import json
import time
from pathlib import Path

from hfrac.cli import write_text
from hfrac.studies import caccioppoli_batch, stability_ratios


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/caccioppoli")
    ap.add_argument("--resolutions", default="16,24")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = tuple(int(r) for r in args.resolutions.split(","))
    t0 = time.perf_counter()
    csv, records = caccioppoli_batch(res, seed=args.seed,
                                     progress=lambda r: print(f"{r['instance']:24s} {r['resolution']:3d} "
                                                              f"c={r['fitted_c']:.4f} {r['seconds']:.1f}s",
                                                              flush=True))
    write_text(out / "caccioppoli.csv", csv)
    ratios = stability_ratios(records)
    (out / "stability.json").write_text(json.dumps({"max_over_min": ratios, "seconds": time.perf_counter() - t0},
                                                   indent=2, sort_keys=True) + "\n")
    worst = max(ratios, key=ratios.get)
    print(f"worst max/min {ratios[worst]:.3f} ({worst}); total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
