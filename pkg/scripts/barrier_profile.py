"""Relative error of the naive barrier-ratio price against the CLV value.

For barriers B on the second expiry, compares E[1{S2 > B} S3/S2] with the
product P(S2 > B) F3/F2 using the calibrated correlation.
"""

import numpy as np

from colloc.clv import barrier_probability, calibrate_autocorrelations, expected_barrier_ratio
from colloc.synthetic import tsla_model

m = tsla_model()
C, _ = calibrate_autocorrelations(m)
s2, s3 = m.slices[1], m.slices[2]
print("barrier,clv,naive,relative_error")
for B in np.linspace(20.0, 400.0, 20):
    clv = expected_barrier_ratio(s2, s3, C[1, 2], B)
    naive = barrier_probability(s2, B) * s3.forward / s2.forward
    print(f"{B:.0f},{clv:.6f},{naive:.6f},{clv / naive - 1:+.4f}")
