"""Path generation under ``Q_m`` and closed-form oracles for the presets.

A path is generated step by step: evaluate the kernel ``psi`` at the current
walk value, compute ``q+``, draw ``U ~ U[0, 1)`` and step up iff ``U <= q+``.
The solution is read off as ``X_m(t_r) = phi(t_r, B_m(t_r))``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .coefficients import PRESET_DEFAULTS, CoefficientField, from_expressions, preset
from .errors import ConfigError, PositivityError
from .girsanov import QPathSample, log_lambda_series, q_plus, w_series
from .phi import PhiSolution, solve_phi

__all__ = [
    "RunConfig",
    "SimulationRun",
    "EnsembleResult",
    "path_seeds",
    "simulate_qm_path",
    "simulate_batch",
    "run_ensemble",
    "oracle_gbm",
    "gbm_law",
    "oracle_ou",
    "ou_law",
    "oracle_counterexample",
    "write_run_csv",
]

_PARAM_KEYS = ("a", "b", "c", "d", "x0")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    Either ``preset`` (with parameters ``a, b, c, d, x0`` as it accepts) or
    the expression pair ``mu``/``sigma`` (with ``x0``) selects the SDE.
    ``M`` defaults to ``m + 4``.
    """

    preset: str | None = "gbm"
    a: float | None = None
    b: float | None = None
    c: float | None = None
    d: float | None = None
    x0: float | None = None
    mu: str | None = None
    sigma: str | None = None
    T: float = 1.0
    m: int = 5
    M: int | None = None
    seed: int = 0
    N: int = 1
    phi_mode: str = "auto"
    u_extent: float | None = None

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; valid keys: {cls.keys()}")
        return cls(**data)

    def validate(self):
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.m < 0:
            raise ConfigError("m must be >= 0")
        if self.M is not None and self.M < self.m:
            raise ConfigError("need 0 <= m <= M")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.preset is None and (self.mu is None or self.sigma is None):
            raise ConfigError("give either a preset or both mu and sigma expressions")
        if self.preset is not None and self.preset not in PRESET_DEFAULTS:
            raise ConfigError(f"unknown preset {self.preset!r}; known: {sorted(PRESET_DEFAULTS)}")

    @property
    def fine_level(self) -> int:
        return self.m + 4 if self.M is None else self.M

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T * 4 ** self.m + 1e-9))

    def resolved(self) -> dict:
        """Config echo with preset defaults filled in."""
        out = asdict(self)
        out["M"] = self.fine_level
        if self.preset is not None:
            for k, v in PRESET_DEFAULTS[self.preset].items():
                if out[k] is None:
                    out[k] = v
        return out

    def coefficients(self) -> CoefficientField:
        params = {k: getattr(self, k) for k in _PARAM_KEYS if getattr(self, k) is not None}
        if self.preset is not None:
            allowed = PRESET_DEFAULTS[self.preset]
            extra = sorted(set(params) - set(allowed))
            if extra:
                raise ConfigError(f"preset {self.preset!r} takes {sorted(allowed)}; got {extra}")
            return preset(self.preset, T=self.T, **params)
        x0 = params.pop("x0", 0.0)
        return from_expressions(self.mu, self.sigma, x0=x0, T=self.T, params=params)

    def solution(self, coeffs: CoefficientField | None = None) -> PhiSolution:
        coeffs = self.coefficients() if coeffs is None else coeffs
        extent = self.u_extent if self.u_extent is not None else max(4.0, 6.0 * math.sqrt(self.T))
        return solve_phi(coeffs, self.phi_mode, u_extent=extent, m=self.m)


@dataclass
class SimulationRun:
    """One simulated path and its summary."""

    config: RunConfig
    path: QPathSample
    uniforms: np.ndarray

    @property
    def X(self):
        return self.path.X

    @property
    def times(self):
        return self.path.times

    @property
    def terminal(self) -> float:
        return float(self.path.X[-1])

    @property
    def running_sup(self) -> float:
        return float(np.max(self.path.X))

    @property
    def log_lambda_T(self) -> float:
        return float(self.path.log_lambda[-1])

    def summary(self) -> dict:
        return dict(terminal=self.terminal, running_sup=self.running_sup, log_lambda_T=self.log_lambda_T,
                    n_steps=self.path.n_steps)


def path_seeds(seed, N):
    """Child seeds of the per-path streams of an ensemble."""
    return np.random.SeedSequence(seed).spawn(N)


def _uniforms(seed, n):
    return np.random.Generator(np.random.PCG64(seed)).random(n)


def simulate_batch(sol: PhiSolution, coeffs: CoefficientField, m: int, uniforms: np.ndarray):
    """Step a batch of walks under ``Q_m`` from pre-drawn uniforms.

    ``uniforms`` has shape ``(N, n)``. Returns ``(positions, psi, abort_step)``;
    a path whose ``sigma`` turns non-positive is frozen and its abort step
    recorded (``-1`` for paths that finished).
    """
    u = np.atleast_2d(uniforms)
    N, n = u.shape
    h, dt = 2.0 ** -m, 4.0 ** -m
    pos = np.zeros((N, n + 1), dtype=np.int64)
    psi = np.zeros((N, n))
    alive = np.ones(N, dtype=bool)
    abort = np.full(N, -1, dtype=np.int64)
    for r in range(n):
        p, sig = sol.psi_parts(r * dt, pos[:, r] * h, coeffs)
        p = np.broadcast_to(p, (N,))
        bad = alive & ~((sig > 0) & np.isfinite(p))
        if bad.any():
            abort[bad] = r
            alive &= ~bad
        p = np.where(alive, p, 0.0)
        psi[:, r] = p
        step = np.where(u[:, r] <= q_plus(p, m), 1, -1)
        pos[:, r + 1] = pos[:, r] + np.where(alive, step, 0)
    return pos, psi, abort


def _assemble(sol, coeffs, m, pos, psi, n_keep):
    pos = pos[: n_keep + 1]
    psi = psi[:n_keep]
    h = 2.0 ** -m
    t = np.arange(n_keep + 1) * 4.0 ** -m
    b = pos * h
    return QPathSample(
        level=m,
        positions=pos,
        psi=psi,
        q_plus=q_plus(psi, m),
        W=w_series(b, psi, m),
        X=sol.phi(t, b),
        log_lambda=log_lambda_series(psi, np.diff(pos), m),
        horizon=n_keep * 4.0 ** -m,
    )


def simulate_qm_path(config: RunConfig, seed=None, uniforms=None, sol: PhiSolution | None = None) -> SimulationRun:
    """Generate one path of ``X_m`` under ``Q_m``.

    ``seed`` (int or ``SeedSequence``) defaults to ``config.seed``; explicit
    ``uniforms`` override the random draws. Raises :class:`PositivityError`
    with the partial run attached if ``sigma <= 0`` is reached.
    """
    coeffs = config.coefficients() if sol is None else sol.coeffs
    sol = config.solution(coeffs) if sol is None else sol
    n = config.n_steps
    if uniforms is None:
        uniforms = _uniforms(config.seed if seed is None else seed, n)
    uniforms = np.asarray(uniforms, dtype=float).reshape(-1)
    if uniforms.size < n:
        raise ConfigError(f"{n} uniforms needed, got {uniforms.size}")
    uniforms = uniforms[:n]
    pos, psi, abort = simulate_batch(sol, coeffs, config.m, uniforms[None, :])
    if abort[0] >= 0:
        k = int(abort[0])
        partial = SimulationRun(config, _assemble(sol, coeffs, config.m, pos[0], psi[0], k), uniforms[:k])
        t = k * 4.0 ** -config.m
        x = float(sol.phi(t, pos[0, k] * 2.0 ** -config.m))
        raise PositivityError(f"sigma <= 0 at t={t:g}, x={x:g}; path aborted", t=t, x=x, partial=partial)
    return SimulationRun(config, _assemble(sol, coeffs, config.m, pos[0], psi[0], n), uniforms)


@dataclass
class EnsembleResult:
    """Per-path terminal data of an ensemble. Aborted paths carry NaN."""

    config: RunConfig
    terminal: np.ndarray
    running_sup: np.ndarray
    log_lambda_T: np.ndarray
    terminal_B: np.ndarray
    abort_step: np.ndarray
    min_X: np.ndarray = field(default=None)

    @property
    def aborted(self):
        return self.abort_step >= 0

    @property
    def n_aborted(self) -> int:
        return int(self.aborted.sum())

    def mean(self):
        ok = self.terminal[~self.aborted]
        return float(ok.mean()) if ok.size else math.nan

    def se(self):
        ok = self.terminal[~self.aborted]
        return float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan

    def summary(self) -> dict:
        ok = ~self.aborted
        return dict(
            N=int(self.terminal.size),
            completed=int(ok.sum()),
            abort_count=self.n_aborted,
            abort_times=[float(s * 4.0 ** -self.config.m) for s in self.abort_step[self.aborted]],
            terminal_mean=self.mean(),
            terminal_se=self.se(),
            running_sup_mean=float(self.running_sup[ok].mean()) if ok.any() else math.nan,
            log_lambda_T_mean=float(self.log_lambda_T[ok].mean()) if ok.any() else math.nan,
        )


def run_ensemble(config: RunConfig, N: int | None = None, jobs: int = 1, batch_size: int = 1000,
                 sol: PhiSolution | None = None) -> EnsembleResult:
    """``N`` independent ``Q_m`` paths from the child seeds of ``config.seed``.

    Path ``i`` uses ``path_seeds(config.seed, N)[i]``, so results do not depend
    on ``jobs`` or ``batch_size``.
    """
    N = config.N if N is None else N
    if N < 1:
        raise ConfigError("N must be >= 1")
    coeffs = config.coefficients() if sol is None else sol.coeffs
    sol = config.solution(coeffs) if sol is None else sol
    m, n = config.m, config.n_steps
    seeds = path_seeds(config.seed, N)
    chunks = [seeds[i : i + batch_size] for i in range(0, N, batch_size)]

    def work(chunk):
        u = np.stack([_uniforms(s, n) for s in chunk]) if n else np.zeros((len(chunk), 0))
        pos, psi, abort = simulate_batch(sol, coeffs, m, u)
        t = np.arange(n + 1) * 4.0 ** -m
        x = sol.phi(t, pos * 2.0 ** -m)
        ll = log_lambda_series(psi, np.diff(pos, axis=1), m)[:, -1]
        bad = abort >= 0
        x_t = np.where(bad, np.nan, x[:, -1])
        return x_t, np.where(bad, np.nan, x.max(axis=1)), np.where(bad, np.nan, ll), pos[:, -1] * 2.0 ** -m, abort, x.min(axis=1)

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    cols = [np.concatenate(c) for c in zip(*parts)]
    return EnsembleResult(config, *cols[:5], min_X=cols[5])


# --- oracles ---------------------------------------------------------------

def oracle_gbm(t, w_value, a=1.0, c=1.0, x0=1.0):
    """``x0 exp((c - a^2/2) t + a w)``: GBM driven by the ``Q``-Brownian path."""
    t = np.asarray(t, dtype=float)
    return x0 * np.exp((c - 0.5 * a * a) * t + a * np.asarray(w_value, dtype=float))


def gbm_law(t, a=1.0, c=1.0, x0=1.0):
    """Lognormal law of the GBM at time ``t`` (frozen scipy distribution)."""
    return stats.lognorm(s=a * math.sqrt(t), scale=x0 * math.exp((c - 0.5 * a * a) * t))


def ou_law(t, b=1.0, c=-1.0, d=0.0, x0=0.0):
    """Gaussian law of ``dX = (cX + d) dt + b dW`` at time ``t``."""
    if t == 0:
        return stats.norm(loc=x0, scale=0.0)
    if abs(c) < 1e-12:
        mean, var = x0 + d * t, b * b * t
    else:
        e = math.exp(c * t)
        mean = x0 * e + d / c * (e - 1.0)
        var = b * b * (math.exp(2 * c * t) - 1.0) / (2 * c)
    return stats.norm(loc=mean, scale=math.sqrt(var))


def oracle_ou(t, b=1.0, c=-1.0, d=0.0, x0=0.0, w_path=None):
    """OU oracle: the exact law at time ``t`` or, with ``w_path``, a path.

    With ``w_path`` the argument ``t`` is the time grid and ``w_path`` the
    driving values on it; the path is built with the exponential integrator
    ``X' = e^{c dt} (X + b dW) + d (e^{c dt} - 1) / c``.
    """
    if w_path is None:
        return ou_law(float(t), b, c, d, x0)
    t = np.asarray(t, dtype=float)
    w = np.asarray(w_path, dtype=float)
    x = np.empty_like(w)
    x[0] = x0
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        e = math.exp(c * dt)
        g = dt if abs(c) < 1e-12 else (e - 1.0) / c
        x[k] = e * (x[k - 1] + b * (w[k] - w[k - 1])) + d * g
    return x


def oracle_counterexample(fine_path, a=1.0, d=1.0, x0=1.0, horizon=None):
    """Strong solution of ``dX = -d dt + a X dB`` along a fine walk proxy of ``B``.

    ``X(t) = Y(t) (x0 - d int_0^t 1/Y(s) ds)`` with
    ``Y = exp(a B - a^2 t / 2)``; the integral uses the trapezoid rule on the
    fine time grid. Returns ``(times, X)``.
    """
    n = fine_path.n_steps if horizon is None else fine_path.steps_until(horizon)
    t = fine_path.times[: n + 1]
    b = fine_path.values[: n + 1]
    return t, _counterexample_path(t, b, a, d, x0)


def _counterexample_path(t, b, a, d, x0):
    log_y = a * b - 0.5 * a * a * t
    inv = np.exp(-log_y)
    dt = np.diff(t, axis=-1)
    z = np.concatenate((np.zeros(inv.shape[:-1] + (1,)), np.cumsum(0.5 * dt * (inv[..., 1:] + inv[..., :-1]), axis=-1)), axis=-1)
    return np.exp(log_y) * (x0 - d * z)


# --- output ----------------------------------------------------------------

def _fmt(v):
    return "" if v is None else f"{float(v):.17g}"


def exact_companion(run: SimulationRun):
    """Pathwise oracle driven by ``W_m`` where the preset has one, else None."""
    cfg = run.config.resolved()
    if cfg["preset"] == "gbm":
        return oracle_gbm(run.times, run.path.W, cfg["a"], cfg["c"], cfg["x0"])
    if cfg["preset"] == "ou":
        return oracle_ou(run.times, cfg["b"], cfg["c"], cfg["d"], cfg["x0"], w_path=run.path.W)
    return None


def write_run_csv(run: SimulationRun, path, exact=None) -> None:
    """Per-step CSV: ``r, t_r, B_m, X_m, W_m, psi_m, q_plus, log_lambda``.

    ``psi_m`` and ``q_plus`` on row ``r`` drive the step from ``r`` to
    ``r+1`` and are empty on the last row. An ``X_exact`` column is appended
    when ``exact`` is given. The first line is a ``#`` comment carrying the
    resolved config.
    """
    p = run.path
    header = ["r", "t_r", "B_m", "X_m", "W_m", "psi_m", "q_plus", "log_lambda"]
    if exact is not None:
        header.append("X_exact")
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(run.config.resolved(), sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        n = p.n_steps
        for r in range(n + 1):
            row = [r, _fmt(p.times[r]), _fmt(p.B[r]), _fmt(p.X[r]), _fmt(p.W[r]),
                   _fmt(p.psi[r]) if r < n else "", _fmt(p.q_plus[r]) if r < n else "",
                   _fmt(p.log_lambda[r])]
            if exact is not None:
                row.append(_fmt(exact[r]))
            w.writerow(row)
