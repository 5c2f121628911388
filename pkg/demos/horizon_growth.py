"""How bias and variance of the model-based gradient grow with the horizon.

The true system has a = 1.2 and the model a = 1.3.  Open-loop inputs inherit
the instability; a proportional tracker with gain 0.7 makes both closed loops
contract at rate 0.5.  Each study fits log y against T and against log T and
names the better fit.
"""
from polgrad.diagnostics import scaling_study
from polgrad.running_example import bias_study, variance_study

for make in (bias_study, variance_study):
    for mode in ("open_loop", "feedback"):
        res = scaling_study(make(mode))
        for quantity, fit in res.fits.items():
            series = res.series(quantity)
            print(f"{res.name:20s} {quantity:9s} {fit.regime:12s} slope {fit.slope_exp:8.4f}  "
                  f"T={res.horizons[0]}: {series[0]:.3g}  T={res.horizons[-1]}: {series[-1]:.3g}")
