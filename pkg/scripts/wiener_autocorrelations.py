"""Brownian autocorrelations sqrt(t_i/t_j) between the three TSLA expiries."""

from colloc.clv import WienerCorrelation, correlation_matrix
from colloc.synthetic import EXPIRIES, tsla_times

times = tsla_times()
C = correlation_matrix(times, WienerCorrelation())
print("from,to,rho")
for i in range(len(times)):
    for j in range(i + 1, len(times)):
        print(f"{EXPIRIES[i]},{EXPIRIES[j]},{C[i, j]:.4f}")
