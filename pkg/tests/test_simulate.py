import math

import numpy as np
import pytest

from twistshrink.errors import ConfigError, PositivityError
from twistshrink.simulate import (
    RunConfig,
    exact_companion,
    gbm_law,
    oracle_gbm,
    ou_law,
    run_ensemble,
    simulate_qm_path,
    write_run_csv,
)


def test_forced_up_step():
    run = simulate_qm_path(RunConfig(preset="gbm", m=0, T=1), uniforms=[0.0])
    assert np.allclose(run.X, [1.0, math.e])


def test_deterministic_and_positive_gbm():
    a = simulate_qm_path(RunConfig(preset="gbm", m=4, seed=9))
    b = simulate_qm_path(RunConfig(preset="gbm", m=4, seed=9))
    assert np.array_equal(a.X, b.X)
    assert np.all(a.X > 0)
    assert a.path.n_steps == 256


def test_exact_companion_tracks_gbm():
    run = simulate_qm_path(RunConfig(preset="gbm", m=6, seed=3))
    exact = exact_companion(run)
    assert np.max(np.abs(exact - run.X) / exact) < 0.05


def test_zero_kernel_gives_fair_coin():
    # sigma constant, mu = 0: psi = 0 and q+ = 1/2
    N = 4000
    ens = run_ensemble(RunConfig(preset="ou", b=1, c=0, d=0, x0=0, m=0, T=1, seed=5), N)
    up = np.mean(ens.terminal_B > 0)
    assert abs(up - 0.5) <= 4 / math.sqrt(N)


def test_ensemble_independent_of_jobs_and_batches():
    cfg = RunConfig(preset="gbm", m=3, seed=2)
    a = run_ensemble(cfg, 300, jobs=1, batch_size=300)
    b = run_ensemble(cfg, 300, jobs=3, batch_size=64)
    assert np.array_equal(a.terminal, b.terminal)


def test_gbm_ensemble_mean():
    ens = run_ensemble(RunConfig(preset="gbm", m=4, seed=1), 4000)
    assert abs(ens.mean() - math.e) <= 4 * ens.se()


def test_laws():
    assert gbm_law(1.0).mean() == pytest.approx(math.e)
    law = ou_law(2.0, b=1.0, c=-1.0, d=1.0, x0=0.0)
    assert law.mean() == pytest.approx(1 - math.exp(-2))
    assert law.var() == pytest.approx((1 - math.exp(-4)) / 2)
    assert ou_law(1.0, c=0.0).var() == pytest.approx(1.0)
    assert oracle_gbm(0.0, 0.0) == 1.0


def test_positivity_abort_keeps_partial():
    cfg = RunConfig(preset=None, mu="0", sigma="x - 2*t", x0=1.0, m=2, T=1.0)
    with pytest.raises(PositivityError) as info:
        simulate_qm_path(cfg)
    assert info.value.partial is not None
    assert info.value.t <= 1.0


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"preset": "gbm", "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig(preset="gbm", m=5, M=3)
    with pytest.raises(ConfigError):
        RunConfig(preset="gbm", d=1.0).coefficients()
    assert RunConfig().fine_level == 9


def test_csv_roundtrip(tmp_path):
    run = simulate_qm_path(RunConfig(preset="gbm", m=2, seed=1))
    f = tmp_path / "p.csv"
    write_run_csv(run, f, exact=exact_companion(run))
    lines = f.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1].split(",")[-1] == "X_exact"
    assert len(lines) == 2 + 17
    x = np.array([float(r.split(",")[3]) for r in lines[2:]])
    assert np.array_equal(x, run.X)
    assert lines[-1].split(",")[5] == ""
