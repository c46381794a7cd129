"""How fast X_m approaches the solution along one Brownian path.

The finest level M stands in for Brownian motion; coarser walks are read off
it by first passages so that all levels share the same path. The sup error
shrinks by roughly sqrt(2) per level, slower at small m because of the
logarithmic factor.
"""
from twistshrink.simulate import RunConfig
from twistshrink.verify import convergence_study, lambda_convergence, local_drift_test, residual_test

cfg = RunConfig(preset="gbm", a=1.0, c=1.0, x0=1.0, T=1.0)
rep = convergence_study(cfg, range(3, 8), 10, list(range(8)))
print(rep.to_text())
print(lambda_convergence(cfg, range(3, 8), 10, range(8)).to_text())
print(local_drift_test(cfg, range(3, 8), range(8)).to_text())
print(residual_test(cfg, range(3, 8), range(8)).to_text())
