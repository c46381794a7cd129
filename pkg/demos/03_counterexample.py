"""dX = -d dt + a X dB started at x0 > 0.

The strong solution Y (x0 - d int 1/Y) with Y = exp(aB - a^2 t/2) goes
negative, while the random-walk method X_m = x0 exp(a B_m) stays positive by
construction. Both are weak solutions in the right sense; they are just not
the same process.
"""
import numpy as np

from twistshrink.simulate import RunConfig, _counterexample_path, simulate_qm_path
from twistshrink.verify import counterexample_study

cfg = RunConfig(preset="counterexample", a=1.0, d=1.0, x0=1.0, T=5.0, m=5, seed=7)
run = simulate_qm_path(cfg)
strong = _counterexample_path(run.times, run.path.W, 1.0, 1.0, 1.0)
print(f"method path: min {run.X.min():.3e}, X_m(5) = {run.terminal:.3e}")
first = np.flatnonzero(strong < 0)
print(f"strong solution on the same W_m: X(5) = {strong[-1]:.3f}, first negative at "
      f"t = {run.times[first[0]]:.3f}" if first.size else "strong solution stayed positive")

print(counterexample_study(N=300, seed=7).to_text())
