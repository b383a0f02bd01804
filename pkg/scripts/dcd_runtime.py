"""Runtime of the greedy community detector against exhaustive search, and
of the greedy alone on larger random contact graphs."""
import argparse
import itertools
import time

import numpy as np

from d2drelay.community import dcd, dcd_oracle
from d2drelay.social import ContactGraph


def random_graph(n, m, seed):
    rng = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(n), 2))
    pick = rng.choice(len(pairs), min(m, len(pairs)), replace=False)
    return ContactGraph.from_weights({pairs[k]: float(1 - rng.random()) for k in pick}, range(n))


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--small", default="6,7,8,9,10")
    ap.add_argument("--large", default="50,100,170,250")
    a = ap.parse_args()
    print("n   m    dcd_s    oracle_s  R_dcd/R_opt")
    for n in map(int, a.small.split(",")):
        g = random_graph(n, n * (n - 1) // 4, n)
        d, td = timed(dcd, g, 0)
        o, to = timed(dcd_oracle, g)
        print(f"{n:<3d} {len(g.edges):<4d} {td:8.4f} {to:9.4f}  {d.objective / o.objective if o.objective else 1:.3f}")
    print("n    m     dcd_s   k")
    for n in map(int, a.large.split(",")):
        g = random_graph(n, int(n * 1500 / 170), n)
        d, td = timed(dcd, g, 0)
        print(f"{n:<4d} {len(g.edges):<5d} {td:7.3f} {d.k}")


if __name__ == "__main__":
    main()
