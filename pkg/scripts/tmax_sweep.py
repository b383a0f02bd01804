"""Delivery rate against the delay budget, one content size.

    python3 scripts/tmax_sweep.py --tmax 10..120:10 --seeds 10
"""
import argparse
import sys

from d2drelay.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tmax", default="10..120:10")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--bits", default="4.56e6")
    ap.add_argument("--out", default="results/tmax_sweep")
    a = ap.parse_args()
    return cli_main(["run", "--tmax", a.tmax, "--seeds", str(a.seeds), "--set", f"content_bits={a.bits}",
                     "--out", a.out])


if __name__ == "__main__":
    sys.exit(main())
