"""Forward ratios E[S(t_j)/S(t_i)] under Wiener and calibrated correlations.

Compares the deterministic ratio F_j/F_i with the quadrature value and a
Monte-Carlo estimate for each pair.
"""

import argparse

from colloc.clv import ExplicitCorrelation, Ratio, calibrate_autocorrelations, expected_forward_ratio, simulate
from colloc.synthetic import tsla_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=2018)
    args = ap.parse_args()
    wiener = tsla_model()
    C, _ = calibrate_autocorrelations(wiener)
    calibrated = wiener.with_correlation(ExplicitCorrelation(C))
    print("correlation,pair,rho,deterministic,quadrature,mc,stderr")
    for label, m in (("wiener", wiener), ("calibrated", calibrated)):
        R = m.matrix()
        n = len(m.slices)
        for i in range(n):
            for j in range(i + 1, n):
                si, sj = m.slices[i], m.slices[j]
                q = expected_forward_ratio(si, sj, R[i, j])
                mc = simulate(m, Ratio(i, j), args.paths, args.seed)
                print(f"{label},{i + 1}-{j + 1},{R[i, j]:.4f},{sj.forward / si.forward:.6f},{q:.6f},{mc.mean:.6f},{mc.stderr:.2g}")


if __name__ == "__main__":
    main()
