"""Vol RMSE of each tail variant fitted to the short TSLA smile.

Quotes come from the July slice on strikes 200..500; the pure lognormal
variant pins g(0) = 0 and cannot follow the steep left wing.
"""

import numpy as np

from colloc.calibrator import CalibrationConfig, calibrate_slice, quotes_from_slice
from colloc.errors import NumericalError
from colloc.synthetic import tsla_slices

q = quotes_from_slice(tsla_slices()[0], np.linspace(200.0, 500.0, 20))
print("variant,rmse_vol,iterations")
for v in ("none", "absorption", "reflected_absorption", "reflection", "exp_extrapolation", "lognormal", "lognormal_extrapolation"):
    try:
        _, rep = calibrate_slice(q, CalibrationConfig(variant=v))
        print(f"{v},{rep.rmse_vol:.3e},{rep.iterations}")
    except NumericalError as exc:
        print(f"{v},failed,{type(exc).__name__}")
