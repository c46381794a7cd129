"""Numerical checks of the method: convergence against a fine proxy,
martingale identities, distributional agreement, local drift and the
discrete SDE residual.

Every comparison against "the" Brownian path is really against the finest
twist-and-shrink level ``M`` built from the same seed; reports say so.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, ResourceError
from .girsanov import evaluate_paths, path_log_probabilities
from .phi import solve_phi
from .simulate import RunConfig, _counterexample_path, gbm_law, ou_law, run_ensemble
from .walker import build_twisted_hierarchy, shrink, skorohod_embed

__all__ = [
    "ConvergenceReport",
    "convergence_study",
    "MartingaleReport",
    "martingale_tests",
    "enumerate_measure",
    "KSReport",
    "distribution_test",
    "TrendReport",
    "local_drift_test",
    "residual_test",
    "lambda_convergence",
    "CounterexampleReport",
    "counterexample_study",
    "write_json",
]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(report, path) -> None:
    data = report.to_dict() if hasattr(report, "to_dict") else report
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- convergence --------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Sup-errors ``e_m`` of ``X_m`` against the level-``M`` proxy.

    ``errors[i, j]`` belongs to ``seeds[i]`` and ``levels[j]``.
    """

    levels: list
    reference_level: int
    seeds: list
    errors: np.ndarray
    T: float
    reference_margin: float

    @property
    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    @property
    def ratios(self) -> np.ndarray:
        """Per-seed ratios ``e_m / e_{m+1}`` for consecutive levels."""
        e = self.errors
        with np.errstate(divide="ignore", invalid="ignore"):
            return e[:, :-1] / e[:, 1:]

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.errors.shape[1] > 1 else math.nan

    def to_dict(self):
        return dict(
            reference=f"twist-and-shrink level {self.reference_level} (proxy for Brownian motion)",
            reference_level=self.reference_level,
            levels=list(self.levels),
            seeds=list(self.seeds),
            T=self.T,
            mean_errors=self.mean_errors,
            mean_ratio_per_level=self.ratios.mean(axis=0) if self.errors.shape[1] > 1 else [],
            mean_ratio=self.mean_ratio,
            errors=self.errors,
        )

    def to_text(self):
        lines = [f"convergence against level-{self.reference_level} proxy, T={self.T}, {len(self.seeds)} seeds"]
        for j, m in enumerate(self.levels):
            lines.append(f"  m={m:2d}  mean e_m = {self.mean_errors[j]:.6g}")
        lines.append(f"  mean ratio e_m/e_(m+1) = {self.mean_ratio:.4f}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "seed", "e_m"])
            for i, s in enumerate(self.seeds):
                for j, m in enumerate(self.levels):
                    w.writerow([m, s, f"{self.errors[i, j]:.17g}"])


def _embedded_levels(seed, levels, M, T, margin):
    """Reference walk and embedded coarse walks, enlarging the reference
    horizon until every embedding covers ``[0, T]``."""
    for _ in range(6):
        ref = shrink(build_twisted_hierarchy(seed, M, T * margin)[M])
        try:
            return ref, {m: skorohod_embed(ref, m, horizon=T) for m in levels}
        except ResourceError:
            margin *= 2
    raise ResourceError(f"seed {seed}: reference too short even with margin {margin}")


def convergence_study(config: RunConfig, m_range, M: int, seeds, reference_margin: float = 2.0) -> ConvergenceReport:
    """``e_m = max_{t_r <= T} |phi(t_r, B_m(t_r)) - phi(t_r, B_M(t_r))|``.

    One hierarchy per seed; each level ``m`` is Skorohod-embedded in level
    ``M`` which is built over ``reference_margin * T`` so the embeddings
    reach ``T``.
    """
    levels = list(m_range)
    if max(levels) > M:
        raise ConfigError("levels must not exceed the reference level")
    T = config.T
    coeffs = config.coefficients()
    sol = solve_phi(coeffs, config.phi_mode, u_extent=max(4.0, 6 * math.sqrt(T)), m=M)
    errs = np.zeros((len(seeds), len(levels)))
    for i, seed in enumerate(seeds):
        ref, emb = _embedded_levels(seed, levels, M, T, reference_margin)
        for j, m in enumerate(levels):
            if m == M:
                continue
            n = int(math.floor(T * 4 ** m + 1e-9))
            t = np.arange(n + 1) * 4.0 ** -m
            bm = emb[m].values[: n + 1]
            bM = ref.values[np.arange(n + 1) * 4 ** (M - m)]
            errs[i, j] = np.max(np.abs(sol.phi(t, bm) - sol.phi(t, bM)))
    return ConvergenceReport(levels, M, list(seeds), errs, T, reference_margin)


# --- martingale identities ----------------------------------------------------

def enumerate_measure(config: RunConfig, m: int, n: int, sol=None):
    """Exact expectations over all ``2^n`` sign sequences at level ``m``.

    Returns ``(E_P[Lambda], E_P[Lambda W], sum of Q_m path probabilities)``
    at step ``n``.
    """
    coeffs = config.coefficients() if sol is None else sol.coeffs
    sol = solve_phi(coeffs, config.phi_mode, u_extent=n * 2.0 ** -m + 1, m=m) if sol is None else sol
    signs = np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.int64).reshape(-1, n)
    pos = np.concatenate((np.zeros((signs.shape[0], 1), dtype=np.int64), np.cumsum(signs, axis=1)), axis=1)
    d = evaluate_paths(sol, coeffs, pos, m)
    lam = np.exp(d["log_lambda"][:, -1])
    weight = 2.0 ** -n
    e_lam = float(np.sum(lam) * weight)
    e_lam_w = float(np.sum(lam * d["W"][:, -1]) * weight)
    total_q = float(np.sum(np.exp(path_log_probabilities(d["psi"], signs, m))))
    return e_lam, e_lam_w, total_q


@dataclass
class MartingaleReport:
    m: int
    N: int
    seed: int
    n_steps: int
    mc_mean: float
    mc_se: float
    n_enum: int
    enum_level: int
    enum_E_lambda: float
    enum_E_lambda_W: float
    enum_total_probability: float
    tolerance: float = 1e-12

    @property
    def mc_pass(self):
        return abs(self.mc_mean - 1.0) <= 4 * self.mc_se or (self.mc_se == 0 and self.mc_mean == 1.0)

    @property
    def enum_pass(self):
        return (abs(self.enum_E_lambda - 1) <= self.tolerance and abs(self.enum_E_lambda_W) <= self.tolerance
                and abs(self.enum_total_probability - 1) <= self.tolerance)

    def to_dict(self):
        return dict(asdict(self), mc_pass=self.mc_pass, enum_pass=self.enum_pass,
                    mc_band="|mean - 1| <= 4 SE")

    def to_text(self):
        return (f"E_P Lambda_m(T), m={self.m}, N={self.N}, seed={self.seed}: "
                f"{self.mc_mean:.6f} +- {self.mc_se:.6f} ({'pass' if self.mc_pass else 'FAIL'})\n"
                f"enumeration over 2^{self.n_enum} paths at m={self.enum_level}: E Lambda - 1 = "
                f"{self.enum_E_lambda - 1:.3g}, E Lambda W = {self.enum_E_lambda_W:.3g}, "
                f"sum Q_m = {self.enum_total_probability:.17g} ({'pass' if self.enum_pass else 'FAIL'})")


def lambda_under_p(config: RunConfig, m: int, N: int, seed: int, batch: int = 10000, sol=None) -> np.ndarray:
    """Terminal ``Lambda_m(T)`` on ``N`` fair-coin paths."""
    coeffs = config.coefficients() if sol is None else sol.coeffs
    n = int(math.floor(config.T * 4 ** m + 1e-9))
    sol = solve_phi(coeffs, config.phi_mode, u_extent=max(4.0, 6 * math.sqrt(config.T)), m=m) if sol is None else sol
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for start in range(0, N, batch):
        k = min(batch, N - start)
        signs = 2 * rng.integers(0, 2, size=(k, n), dtype=np.int64) - 1
        pos = np.concatenate((np.zeros((k, 1), dtype=np.int64), np.cumsum(signs, axis=1)), axis=1)
        d = evaluate_paths(sol, coeffs, pos, m)
        out.append(np.exp(d["log_lambda"][:, -1]))
    return np.concatenate(out)


def martingale_tests(config: RunConfig, m: int, N: int, n_enum: int = 8, enum_level: int | None = None,
                     seed: int | None = None) -> MartingaleReport:
    """Monte Carlo ``E_P Lambda_m(T) = 1`` plus exact enumeration checks."""
    if n_enum > 14:
        raise ConfigError("n_enum must be <= 14")
    seed = config.seed if seed is None else seed
    lam = lambda_under_p(config, m, N, seed)
    se = float(lam.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    level = m if enum_level is None else enum_level
    e1, e2, tot = enumerate_measure(config, level, n_enum)
    return MartingaleReport(m, N, seed, int(math.floor(config.T * 4 ** m + 1e-9)), float(lam.mean()), se,
                            n_enum, level, e1, e2, tot)


# --- distribution -------------------------------------------------------------

@dataclass
class KSReport:
    preset: str
    m: int
    N: int
    T: float
    statistic: float
    pvalue: float
    threshold: float
    insufficient: bool
    sampling_quantile_95: float

    @property
    def passed(self):
        return self.statistic < self.threshold

    def to_dict(self):
        return dict(asdict(self), passed=self.passed,
                    note="threshold covers the sampling quantile plus the lattice/discretisation bias at level m")

    def to_text(self):
        flag = " (insufficient N)" if self.insufficient else ""
        return (f"KS {self.preset} m={self.m} T={self.T} N={self.N}: D={self.statistic:.5f} "
                f"(threshold {self.threshold}, 95% sampling quantile {self.sampling_quantile_95:.4f}){flag}")


def oracle_law(config: RunConfig, t: float):
    cfg = config.resolved()
    if cfg["preset"] == "gbm":
        return gbm_law(t, cfg["a"], cfg["c"], cfg["x0"])
    if cfg["preset"] == "ou":
        return ou_law(t, cfg["b"], cfg["c"], cfg["d"], cfg["x0"])
    raise ConfigError(f"no oracle law for preset {cfg['preset']!r}")


def distribution_test(config: RunConfig, m: int, N: int, threshold: float = 0.03, jobs: int = 1) -> KSReport:
    """Two-sided KS distance between ``N`` terminal samples of ``X_m(T)`` under
    ``Q_m`` and the exact law."""
    law = oracle_law(config, config.T)
    cfg = RunConfig.from_dict({**{k: v for k, v in config.__dict__.items()}, "m": m, "N": N})
    ens = run_ensemble(cfg, N, jobs=jobs)
    x = ens.terminal[~ens.aborted]
    res = stats.kstest(x, law.cdf)
    q95 = 1.358 / math.sqrt(max(x.size, 1))
    return KSReport(cfg.preset, m, int(x.size), config.T, float(res.statistic), float(res.pvalue), threshold,
                    x.size < 35, q95)


# --- trend tests --------------------------------------------------------------

@dataclass
class TrendReport:
    """Per-seed, per-level sup discrepancies and their trend in ``m``."""

    name: str
    levels: list
    seeds: list
    values: np.ndarray

    @property
    def means(self):
        return self.values.mean(axis=0)

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.means) < 0))

    @property
    def exact_zero(self) -> bool:
        return bool(np.all(self.values == 0.0))

    def to_dict(self):
        return dict(name=self.name, levels=list(self.levels), seeds=list(self.seeds),
                    mean_per_level=self.means, decreasing=self.decreasing, exact_zero=self.exact_zero,
                    values=self.values, paths="P-walks from the twist-and-shrink hierarchy")

    def to_text(self):
        body = ", ".join(f"m={m}: {v:.4g}" for m, v in zip(self.levels, self.means))
        trend = "exactly zero" if self.exact_zero else ("decreasing" if self.decreasing else "NOT decreasing")
        return f"{self.name}: {body} ({trend})"


def _walk_levels(seed, levels, T):
    hier = build_twisted_hierarchy(seed, max(levels), T)
    out = {}
    for m in levels:
        w = shrink(hier[m])
        out[m] = w.truncate(w.steps_until(T))
    return out


def _trapezoid_from_zero(sol, t, k, m, chunk=256):
    """``T_{u=0}^{k 2^-m} phi_u(t_i, u) 2^-m`` for paired arrays ``t``, ``k``."""
    h = 2.0 ** -m
    kmax = int(np.max(np.abs(k))) if k.size else 0
    nodes = np.arange(-kmax, kmax + 1) * h
    out = np.empty(t.size)
    for s in range(0, t.size, chunk):
        tt = t[s : s + chunk]
        rows = sol.phi_u(tt[:, None], nodes[None, :])
        # cumulative trapezoid outward from the centre node u = 0
        mid = 0.5 * (rows[:, 1:] + rows[:, :-1]) * h
        right = np.concatenate((np.zeros((tt.size, 1)), np.cumsum(mid[:, kmax:], axis=1)), axis=1)
        left = np.concatenate((np.zeros((tt.size, 1)), np.cumsum(mid[:, :kmax][:, ::-1], axis=1)), axis=1)
        kk = k[s : s + chunk]
        out[s : s + chunk] = np.where(kk >= 0, right[np.arange(tt.size), np.maximum(kk, 0)],
                                      -left[np.arange(tt.size), np.maximum(-kk, 0)])
    return out


def local_drift_sup(sol, walk, T):
    """``max_r |nu_m(t_r, B(t_{r-1}), B(t_r)) - nu(t_r, B(t_r))|`` on one walk."""
    m = walk.level
    n = walk.steps_until(T)
    k = walk.positions[: n + 1]
    h, dt = 2.0 ** -m, 4.0 ** -m
    t = np.arange(n + 1) * dt
    b = k * h
    nu_m = np.empty(n + 1)
    nu_m[0] = 0.5 * float(sol.phi_uu(0.0, 0.0))
    if n:
        if sol.coeffs.time_homogeneous:
            time_part = np.zeros(n)
        else:
            time_part = (_trapezoid_from_zero(sol, t[1:], k[1:], m)
                         - _trapezoid_from_zero(sol, t[:-1], k[1:], m)) / dt
        fu = sol.phi_u(t[:-1], b[1:]) - sol.phi_u(t[:-1], b[:-1])
        nu_m[1:] = time_part + 0.5 * fu / (b[1:] - b[:-1])
    return float(np.max(np.abs(nu_m - sol.nu(t, b))))


def local_drift_test(config: RunConfig, m_range, seeds=range(10)) -> TrendReport:
    """Sup distance between the discrete local drift and ``nu`` along nested walks."""
    levels = list(m_range)
    coeffs = config.coefficients()
    sol = solve_phi(coeffs, config.phi_mode, u_extent=max(4.0, 6 * math.sqrt(config.T)), m=max(levels))
    vals = np.zeros((len(seeds), len(levels)))
    for i, s in enumerate(seeds):
        walks = _walk_levels(s, levels, config.T)
        for j, m in enumerate(levels):
            vals[i, j] = local_drift_sup(sol, walks[m], config.T)
    return TrendReport("local drift", levels, list(seeds), vals)


def residual_sup(sol, coeffs, walk, T):
    """``max_n |X_m(t_n) - x0 - sum sigma dW_m - sum mu dt|`` on one walk."""
    m = walk.level
    n = walk.steps_until(T)
    pos = walk.positions[: n + 1]
    d = evaluate_paths(sol, coeffs, pos, m)
    dt = 4.0 ** -m
    t = np.arange(n + 1) * dt
    x = d["X"]
    dw = np.diff(d["W"])
    incr = coeffs.sigma(t[:-1], x[:-1]) * dw + coeffs.mu(t[:-1], x[:-1]) * dt
    rhs = np.concatenate(([0.0], np.cumsum(incr)))
    return float(np.max(np.abs(x - coeffs.x0 - rhs)))


def residual_test(config: RunConfig, m_range, seeds=range(10)) -> TrendReport:
    """Sup gap between ``X_m`` and its Euler recursion driven by ``W_m``, per seed and level."""
    levels = list(m_range)
    coeffs = config.coefficients()
    sol = solve_phi(coeffs, config.phi_mode, u_extent=max(4.0, 6 * math.sqrt(config.T)), m=max(levels))
    vals = np.zeros((len(seeds), len(levels)))
    for i, s in enumerate(seeds):
        walks = _walk_levels(s, levels, config.T)
        for j, m in enumerate(levels):
            vals[i, j] = residual_sup(sol, coeffs, walks[m], config.T)
    return TrendReport("discrete SDE residual", levels, list(seeds), vals)


def lambda_convergence(config: RunConfig, m_range, M: int, seeds=range(10), reference_margin: float = 2.0) -> TrendReport:
    """``|Lambda_m(T) - Lambda_M(T)|`` along walks embedded in the level-``M`` proxy."""
    levels = list(m_range)
    T = config.T
    coeffs = config.coefficients()
    sol = solve_phi(coeffs, config.phi_mode, u_extent=max(4.0, 6 * math.sqrt(T)), m=M)
    vals = np.zeros((len(seeds), len(levels)))
    for i, s in enumerate(seeds):
        ref, emb = _embedded_levels(s, levels, M, T, reference_margin)
        nM = ref.steps_until(T)
        lam_M = np.exp(evaluate_paths(sol, coeffs, ref.positions[: nM + 1], M)["log_lambda"][-1])
        for j, m in enumerate(levels):
            w = emb[m]
            n = w.steps_until(T)
            lam = np.exp(evaluate_paths(sol, coeffs, w.positions[: n + 1], m)["log_lambda"][-1])
            vals[i, j] = abs(lam - lam_M)
    return TrendReport(f"|Lambda_m(T) - Lambda_{M}(T)|", levels, list(seeds), vals)


# --- counterexample -----------------------------------------------------------

@dataclass
class CounterexampleReport:
    a: float
    d: float
    x0: float
    T: float
    m: int
    M: int
    N: int
    seed: int
    p_negative: float
    method_positive_fraction: float
    method_min: float

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        return (f"counterexample a={self.a} d={self.d} x0={self.x0} T={self.T}: strong solution negative at T "
                f"with frequency {self.p_negative:.3f} over {self.N} level-{self.M} paths; "
                f"method paths positive: {100 * self.method_positive_fraction:.1f}% (min {self.method_min:.3g})")


def counterexample_study(a=1.0, d=1.0, x0=1.0, T=5.0, m=5, M=7, N=1000, seed=0, jobs=1) -> CounterexampleReport:
    """Strong solution on ``N`` fine proxies versus ``N`` method paths."""
    neg = 0
    for ss in np.random.SeedSequence(seed).spawn(N):
        fine_seed = int(ss.generate_state(1)[0])
        ref = shrink(build_twisted_hierarchy(fine_seed, M, T)[M])
        n = ref.steps_until(T)
        x = _counterexample_path(ref.times[: n + 1], ref.values[: n + 1], a, d, x0)
        neg += x[-1] < 0
    cfg = RunConfig(preset="counterexample", a=a, d=d, x0=x0, T=T, m=m, M=M, seed=seed, N=N)
    ens = run_ensemble(cfg, N, jobs=jobs)
    done = ~ens.aborted
    positive = float(np.mean((ens.min_X > 0) & done))
    return CounterexampleReport(a, d, x0, T, m, M, N, seed, neg / N, positive, float(np.min(ens.min_X)))
