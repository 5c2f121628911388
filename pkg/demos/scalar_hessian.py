"""Curvature of the scalar problem x+ = 2x + u with and without feedback.

The closed-form Delta_t sums print next to the diagonal of a finite-difference
Hessian.  Open loop, the diagonal spreads by a factor of a^2 per step and the
matrix is dense, so its condition number runs far beyond the ratio of the
sums.  Tracking feedback with gain 1.5 pulls the closed loop to rate 0.5; the
sums then stay below 2 and the full Hessian stays well conditioned as T grows.
"""
import numpy as np

from polgrad.running_example import hessian_table

rows = hessian_table(horizons=(3, 5, 10))
for mode in ("open_loop", "feedback"):
    print(f"\n{mode}")
    for T in (3, 5, 10):
        sel = [r for r in rows if r["mode"] == mode and r["T"] == T]
        delta = np.array([r["delta_reference"] for r in sel])
        diag = np.array([r["hessian_fd_diag"] for r in sel])
        print(f"  T={T:2d}  kappa sums {sel[0]['kappa_reference']:10.4g}  kappa fd {sel[0]['kappa_fd']:10.4g}")
        if T == 3:
            print(f"        Delta_t  {np.round(delta, 4)}")
            print(f"        diag H   {np.round(diag, 4)}")
