"""One geometric Brownian motion path under the tilted measure.

X_m = phi(t, B_m) with phi(t, u) = exp(u). Under Q_m the walk steps up with
probability 1/2 - tanh(psi 2^-m)/2 and W_m is the driving martingale, so the
exact solution x0 exp((c - a^2/2) t + a W_m) should track X_m closely.
"""
import numpy as np

from twistshrink.simulate import RunConfig, exact_companion, simulate_qm_path

for m in (4, 5, 6):
    cfg = RunConfig(preset="gbm", a=1.0, c=1.0, x0=1.0, T=5.0, m=m, seed=42)
    run = simulate_qm_path(cfg)
    exact = exact_companion(run)
    rel = np.max(np.abs(run.X - exact) / exact)
    print(f"m={m}: {run.path.n_steps} steps, X_m(5) = {run.terminal:.4f}, exact = {exact[-1]:.4f}, "
          f"max relative gap {rel:.3e}, q+ = {run.path.q_plus[0]:.6f}")

# the kernel is constant for GBM: psi = (a^2/2 - c)/a
print("psi on the path:", np.unique(run.path.psi))
