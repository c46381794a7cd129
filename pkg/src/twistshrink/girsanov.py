"""Discrete change of measure on level-``m`` walks.

Under ``P`` the walk ``B_m`` is a fair coin walk. The density

    Lambda_m(t_n) = exp(-sum psi_{r-1} dB_r - sum log cosh(psi_{r-1} 2^-m))

defines ``Q_m``, under which the walk steps up with probability
``q+ = 1/2 - tanh(psi 2^-m) / 2`` and ``W_m = B_m + sum tanh(psi 2^-m) 2^-m``
is a martingale. Everything is accumulated in the log domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .coefficients import CoefficientField
from .errors import HorizonError
from .phi import PhiSolution, psi_tilde

__all__ = [
    "log_cosh",
    "QStepLaw",
    "QPathSample",
    "psi_m",
    "step_law",
    "q_plus",
    "log_lambda_series",
    "w_series",
    "path_log_probabilities",
    "evaluate_path",
    "evaluate_paths",
    "lambda_m",
    "w_m",
    "path_probability",
    "continuous_lambda_approx",
]


def log_cosh(x):
    """``log(cosh(x))`` without overflow: ``|x| + log1p(exp(-2|x|)) - log 2``,
    switching to ``log1p(2 sinh(x/2)^2)`` for ``|x| < 1`` to avoid cancellation."""
    ax = np.abs(np.asarray(x, dtype=float))
    small = np.minimum(ax, 1.0)
    return np.where(ax < 1.0, np.log1p(2.0 * np.sinh(0.5 * small) ** 2),
                    ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0))


@dataclass(frozen=True)
class QStepLaw:
    psi_value: float
    level: int
    q_plus: float
    q_minus: float
    log_lambda_increment_up: float
    log_lambda_increment_down: float


def psi_m(sol: PhiSolution, coeffs: CoefficientField, t_r, b_value):
    """Girsanov kernel evaluated on the walk, ``psi(t_r, B_m(t_r))``."""
    return psi_tilde(sol, coeffs, t_r, b_value)


def q_plus(psi, m):
    """Up-step probability ``1/2 - tanh(psi 2^-m)/2``, computed as
    ``expit(-2 psi 2^-m)`` so it stays strictly inside (0, 1)."""
    return expit(-2.0 * np.asarray(psi, dtype=float) * 2.0 ** -m)


def step_law(psi_value: float, m: int) -> QStepLaw:
    """One-step law of ``Q_m`` given the current kernel value.

    >>> round(step_law(-0.5, 0).q_plus, 6)
    0.731059
    """
    if not np.isfinite(psi_value):
        raise ValueError(f"psi must be finite, got {psi_value}")
    x = psi_value * 2.0 ** -m
    qp = float(q_plus(psi_value, m))
    lc = float(log_cosh(x))
    return QStepLaw(float(psi_value), m, qp, 1.0 - qp, -x - lc, x - lc)


def log_lambda_series(psi, increments, m):
    """``log Lambda_m(t_n)`` for ``n = 0..N`` along the last axis.

    ``psi[..., r-1]`` is the kernel at ``t_{r-1}`` and ``increments`` are the
    +-1 steps of the integer walk.
    """
    psi = np.asarray(psi, dtype=float)
    x = psi * 2.0 ** -m
    terms = -x * np.asarray(increments, dtype=float) - log_cosh(x)
    zero = np.zeros(terms.shape[:-1] + (1,))
    return np.concatenate((zero, np.cumsum(terms, axis=-1)), axis=-1)


def w_series(b_values, psi, m):
    """``W_m(t_n) = B_m(t_n) + sum_{r<=n} tanh(psi_{r-1} 2^-m) 2^-m``."""
    h = 2.0 ** -m
    drift = np.tanh(np.asarray(psi, dtype=float) * h) * h
    zero = np.zeros(drift.shape[:-1] + (1,))
    return np.asarray(b_values, dtype=float) + np.concatenate((zero, np.cumsum(drift, axis=-1)), axis=-1)


def path_log_probabilities(psi, increments, m):
    """``sum_r log q^{eps_r}(t_{r-1})`` along the last axis."""
    x = 2.0 * np.asarray(psi, dtype=float) * 2.0 ** -m
    eps = np.asarray(increments, dtype=float)
    # log q+ = log_expit(-2x), log q- = log_expit(2x)
    return np.sum(log_expit(-eps * x), axis=-1)


@dataclass(frozen=True)
class QPathSample:
    """A level-``m`` path with its change-of-measure bookkeeping.

    Series are indexed by ``r = 0..n``; ``psi`` and ``q_plus`` by the step
    ``r = 1..n`` (stored at ``r-1``, the time they were evaluated).
    """

    level: int
    positions: np.ndarray
    psi: np.ndarray
    q_plus: np.ndarray
    W: np.ndarray
    X: np.ndarray
    log_lambda: np.ndarray
    horizon: float

    @property
    def mesh(self):
        return 2.0 ** -self.level

    @property
    def n_steps(self):
        return self.positions.size - 1

    @property
    def times(self):
        return np.arange(self.positions.size) * 4.0 ** -self.level

    @property
    def B(self):
        return self.positions * self.mesh

    @property
    def increments(self):
        return np.diff(self.positions)

    def truncate(self, n):
        return QPathSample(self.level, self.positions[: n + 1], self.psi[:n], self.q_plus[:n],
                           self.W[: n + 1], self.X[: n + 1], self.log_lambda[: n + 1],
                           n * 4.0 ** -self.level)


def evaluate_paths(sol: PhiSolution, coeffs: CoefficientField, positions, m: int):
    """Kernel, density and ``W``/``X`` series for a batch of integer paths.

    ``positions`` has shape ``(..., n+1)``. Returns a dict of arrays. Raises
    :class:`PositivityError` if ``sigma <= 0`` anywhere on the batch.
    """
    pos = np.asarray(positions, dtype=np.int64)
    h, dt = 2.0 ** -m, 4.0 ** -m
    n = pos.shape[-1] - 1
    t = np.arange(n + 1) * dt
    b = pos * h
    psi = psi_tilde(sol, coeffs, t[:-1], b[..., :-1]) if n else np.zeros(pos.shape[:-1] + (0,))
    inc = np.diff(pos, axis=-1)
    return dict(
        B=b,
        X=sol.phi(t, b),
        psi=psi,
        q_plus=q_plus(psi, m),
        W=w_series(b, psi, m),
        log_lambda=log_lambda_series(psi, inc, m),
    )


def evaluate_path(sol: PhiSolution, coeffs: CoefficientField, positions, m: int) -> QPathSample:
    """:class:`QPathSample` for one integer path ``2^m B_m``."""
    pos = np.asarray(positions, dtype=np.int64).reshape(-1)
    d = evaluate_paths(sol, coeffs, pos, m)
    return QPathSample(m, pos, d["psi"], d["q_plus"], d["W"], d["X"], d["log_lambda"],
                       (pos.size - 1) * 4.0 ** -m)


def lambda_m(path: QPathSample, n: int | None = None) -> float:
    """``Lambda_m(t_n)``; the terminal value by default."""
    n = path.n_steps if n is None else n
    return float(np.exp(path.log_lambda[n]))


def w_m(path: QPathSample) -> np.ndarray:
    return w_series(path.B, path.psi, path.level)


def path_probability(path: QPathSample) -> float:
    """Log-probability of the path's step signs under ``Q_m``."""
    return float(path_log_probabilities(path.psi, path.increments, path.level))


def continuous_lambda_approx(fine_path, sol: PhiSolution, coeffs: CoefficientField, T: float) -> float:
    """Fine-level stand-in for ``dQ/dP = Lambda(T)``.

    Accumulates the discrete density along a fine :class:`WalkLevel` up to
    ``floor(T 4^M)`` steps.
    """
    n = fine_path.steps_until(T)
    if n > fine_path.n_steps:
        raise HorizonError(f"fine path covers {fine_path.horizon}, T={T} requested")
    pos = fine_path.positions[: n + 1]
    d = evaluate_paths(sol, coeffs, pos, fine_path.level)
    return float(np.exp(d["log_lambda"][-1]))
