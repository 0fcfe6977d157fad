"""Monte-Carlo estimate of E[S(t2)/S(t1)] on the raw (untailed) TSLA generators.

The raw generators go negative far in the left tail, so the ratio has no
finite mean; the sample standard error fails to settle as paths grow.
"""

import argparse

from colloc.clv import Ratio, simulate_sweep
from colloc.synthetic import tsla_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--counts", default="100000,400000,1600000,4000000")
    args = ap.parse_args()
    counts = [int(c) for c in args.counts.split(",")]
    model = tsla_model(extrapolate=False)
    print("seed," + ",".join(f"mean@{n},stderr@{n}" for n in counts))
    for seed in range(args.seeds):
        res = simulate_sweep(model, Ratio(0, 1), counts, seed, allow_nonpositive=True)
        print(f"{seed}," + ",".join(f"{r.mean:.6g},{r.stderr:.3g}" for r in res))


if __name__ == "__main__":
    main()
