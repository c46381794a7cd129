"""The space ODE ``phi_u(t, u) = sigma(t, phi(t, u))``, ``phi(t, 0) = x0``.

``X = phi(t, B)`` has the right diffusion coefficient; its unwanted drift is
``nu = phi_t + phi_uu / 2`` and the Girsanov kernel is
``psi = (nu - mu(t, phi)) / sigma(t, phi)``.

In numeric mode ``phi`` is tabulated by classic RK4 on the nodes ``k 2^-m``,
marching out from ``u = 0`` in both directions. ``phi_u`` and ``phi_uu`` come
from the ODE itself; ``phi_t`` from finite differences across neighbouring
time rows ``t +- 4^-m``. Off-node ``u`` uses cubic Hermite interpolation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField
from .errors import ConfigError, PositivityError, RangeError

__all__ = [
    "PhiSolution",
    "GrowthReport",
    "solve_phi",
    "nu",
    "psi_tilde",
    "growth_diagnostics",
]

_ROW_BLOCK = 128
_ROW_CACHE_LIMIT = 4096


def _rk4_march(sigma, t, x0, h, n, substeps):
    """Values at ``0, h, ..., n h`` for each time in ``t`` (shape (len(t), n+1))."""
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, n + 1))
    y = np.full(t.size, float(x0))
    out[:, 0] = y
    dh = h / substeps
    with np.errstate(over="raise", invalid="raise"):
        try:
            for i in range(1, n + 1):
                for _ in range(substeps):
                    k1 = sigma(t, y)
                    k2 = sigma(t, y + 0.5 * dh * k1)
                    k3 = sigma(t, y + 0.5 * dh * k2)
                    k4 = sigma(t, y + dh * k3)
                    y = y + dh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                out[:, i] = y
        except FloatingPointError:
            raise RangeError(f"phi overflowed while integrating to |u| = {i * abs(h):g}") from None
    if not np.all(np.isfinite(out)):
        raise RangeError("phi is not finite on the requested range")
    return out


class PhiSolution:
    """Solution of the space ODE with the derivatives needed downstream.

    Use :func:`solve_phi` to construct. All evaluation methods broadcast over
    ``t`` and ``u``.
    """

    def __init__(self, coeffs: CoefficientField, mode: str, m: int, u_extent: float, substeps: int = 2):
        self.coeffs = coeffs
        self.mode = mode
        self.m = m
        self.h = 2.0 ** -m
        self.dt = 4.0 ** -m
        self.substeps = substeps
        self.n_nodes = max(1, math.ceil(u_extent / self.h))
        self._rows = {}

    @property
    def x0(self):
        return self.coeffs.x0

    @property
    def u_extent(self):
        return self.n_nodes * self.h

    # -- numeric tables ---------------------------------------------------
    def _solve_rows(self, times):
        n = self.n_nodes
        sig = self.coeffs.sigma
        up = _rk4_march(sig, times, self.x0, self.h, n, self.substeps)
        down = _rk4_march(sig, times, self.x0, -self.h, n, self.substeps)
        return np.concatenate((down[:, :0:-1], up), axis=1)

    def _row_key(self, t):
        if self.coeffs.time_homogeneous:
            return 0.0
        return float(t)

    def _table(self, t):
        """Rows for each distinct time in ``t``; returns (rows, inverse)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        keys = np.array([self._row_key(v) for v in t.ravel()])
        uniq, inv = np.unique(keys, return_inverse=True)
        missing = [k for k in uniq if k not in self._rows]
        if missing:
            if len(self._rows) + len(missing) > _ROW_CACHE_LIMIT:
                self._rows.clear()
            todo = set(missing)
            for k in missing:
                r = k / self.dt
                if abs(r - round(r)) < 1e-9:
                    # Grid time: solve a whole block of grid rows at once.
                    r0 = int(round(r))
                    block = [(r0 + j) * self.dt for j in range(_ROW_BLOCK)]
                    todo.update(v for v in block if v not in self._rows)
            todo = sorted(todo)
            for k, row in zip(todo, self._solve_rows(np.array(todo))):
                self._rows[k] = row
        rows = np.stack([self._rows[k] for k in uniq])
        return rows, inv.reshape(t.shape)

    def extend(self, u_extent: float) -> None:
        """Re-solve with at least ``u_extent`` on each side."""
        self.n_nodes = max(2 * self.n_nodes, math.ceil(u_extent / self.h))
        self._rows.clear()

    def _lookup(self, t, u):
        t, u = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(u, dtype=float))
        pos = u / self.h
        if np.any(np.abs(pos) > self.n_nodes):
            self.extend(float(np.max(np.abs(u))) + 1.0)
        rows, inv = self._table(t)
        inv = inv.ravel()
        centre = self.n_nodes
        pos_f = pos.ravel()
        k = np.rint(pos_f)
        if np.all(np.abs(pos_f - k) < 1e-9):
            return rows[inv, k.astype(np.int64) + centre].reshape(u.shape)
        # Cubic Hermite between nodes using phi and phi_u = sigma(t, phi).
        lo = np.clip(np.floor(pos_f).astype(np.int64), -centre, centre - 1)
        s = pos_f - lo
        y0 = rows[inv, lo + centre]
        y1 = rows[inv, lo + 1 + centre]
        tf = t.ravel()
        d0 = self.coeffs.sigma(tf, y0) * self.h
        d1 = self.coeffs.sigma(tf, y1) * self.h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return (h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1).reshape(u.shape)

    # -- public evaluators ------------------------------------------------
    def phi(self, t, u):
        if self.mode == "analytic":
            return np.asarray(self.coeffs.analytic.phi(t, u), dtype=float)
        return self._lookup(t, u)

    def phi_u(self, t, u):
        if self.mode == "analytic":
            return np.asarray(self.coeffs.analytic.phi_u(t, u), dtype=float)
        return self.coeffs.sigma(t, self.phi(t, u))

    def phi_uu(self, t, u):
        if self.mode == "analytic":
            return np.asarray(self.coeffs.analytic.phi_uu(t, u), dtype=float)
        x = self.phi(t, u)
        return self.coeffs.sigma_x(t, x) * self.coeffs.sigma(t, x)

    def phi_t(self, t, u):
        if self.mode == "analytic":
            return np.asarray(self.coeffs.analytic.phi_t(t, u), dtype=float)
        t, u = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(u, dtype=float))
        if self.coeffs.time_homogeneous:
            return np.zeros(t.shape)
        dt, T = self.dt, self.coeffs.T
        f = lambda s: self._lookup(s, u)
        central = (f(t + dt) - f(t - dt)) / (2 * dt)
        fwd = (-3 * f(t) + 4 * f(t + dt) - f(t + 2 * dt)) / (2 * dt)
        bwd = (3 * f(t) - 4 * f(t - dt) + f(t - 2 * dt)) / (2 * dt)
        out = np.where(t - dt < -1e-12, fwd, central)
        return np.where(t + dt > T + 1e-12, bwd, out)

    def nu(self, t, u):
        return self.phi_t(t, u) + 0.5 * self.phi_uu(t, u)

    def psi_parts(self, t, u, coeffs=None):
        """``(psi, sigma)`` without the positivity check, for batch callers."""
        coeffs = self.coeffs if coeffs is None else coeffs
        x = self.phi(t, u)
        sig = coeffs.sigma(t, x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            psi = (self.nu(t, u) - coeffs.mu(t, x)) / sig
        return psi, sig


def solve_phi(coeffs: CoefficientField, mode: str = "auto", u_extent: float = 8.0, m: int = 6,
              substeps: int = 2) -> PhiSolution:
    """Solve the space ODE for ``coeffs``.

    ``mode`` is ``"analytic"`` (requires a closed form), ``"numeric"`` or
    ``"auto"``. Numeric tables use RK4 with node spacing ``2^-m``, split into
    ``substeps`` equal RK4 steps per node (two keep the global error of
    ``sigma = x`` below 1e-7 on ``|u| <= 4`` at ``m = 6``; one does not).
    """
    if mode == "auto":
        mode = "analytic" if coeffs.analytic is not None else "numeric"
    if mode not in ("analytic", "numeric"):
        raise ConfigError(f"unknown phi mode {mode!r}")
    if mode == "analytic" and coeffs.analytic is None:
        raise ConfigError(f"no closed form registered for {coeffs.name!r}")
    s0 = float(np.asarray(coeffs.sigma(0.0, coeffs.x0)))
    if not s0 > 0:
        raise PositivityError(f"sigma(0, x0) = {s0} is not positive", t=0.0, x=coeffs.x0)
    return PhiSolution(coeffs, mode, m, u_extent, substeps)


def nu(sol: PhiSolution, t, u):
    """Drift picked up by ``phi(t, B)``: ``phi_t + phi_uu / 2``."""
    return sol.nu(t, u)


def psi_tilde(sol: PhiSolution, coeffs: CoefficientField, t, u):
    """Girsanov kernel ``(nu - mu(t, phi)) / sigma(t, phi)``.

    Raises :class:`PositivityError` where ``sigma(t, phi(t, u)) <= 0``.
    """
    psi, sig = sol.psi_parts(t, u, coeffs)
    bad = ~(sig > 0)
    if np.any(bad):
        tb, ub = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(u, dtype=float))
        j = np.flatnonzero(bad.ravel())[0]
        tj, uj = float(tb.ravel()[j]), float(ub.ravel()[j])
        xj = float(np.asarray(sol.phi(tj, uj)))
        raise PositivityError(f"sigma <= 0 at t={tj:g}, x=phi={xj:g}", t=tj, x=xj)
    return psi


@dataclass(frozen=True)
class GrowthReport:
    """Finite-grid estimates of the linear-growth constants.

    ``K0_hat`` bounds ``|sigma(t,x)| / (1 + |x - x0|)``; ``K_hat`` bounds
    ``|psi(t,u)| / (1 + |u|)``; ``K_hat_half`` is the same on half the
    extent. These are estimates on a finite grid, never proofs.
    """

    K0_hat: float
    K_hat: float
    K_hat_half: float
    sigma_positive: bool
    u_extent: float
    growth_warning: bool

    def to_dict(self):
        return dict(self.__dict__, estimate="finite-grid")


def growth_diagnostics(sol: PhiSolution, coeffs: CoefficientField, u_extent: float,
                       grid_step: float = 0.125, t_points: int = 5,
                       warn_ratio: float = 1.5) -> GrowthReport:
    """Estimate the growth constants behind the sufficient conditions for
    the change of measure.

    A ``K_hat`` that keeps growing with the extent (ratio above
    ``warn_ratio`` between the full and half extent) signals that the
    density process is probably not a martingale; a ``RuntimeWarning`` is
    emitted in that case.
    """
    u = np.arange(-u_extent, u_extent + 0.5 * grid_step, grid_step)
    ts = np.linspace(0.0, coeffs.T, t_points)
    tt, uu = np.meshgrid(ts, u, indexing="ij")
    with np.errstate(over="ignore", invalid="ignore"):
        x = sol.phi(tt, uu)
        sig = coeffs.sigma(tt, x)
        psi, _ = sol.psi_parts(tt, uu, coeffs)
        k0 = np.abs(sig) / (1 + np.abs(x - coeffs.x0))
        k = np.abs(psi) / (1 + np.abs(uu))
    positive = bool(np.all(sig > 0))
    half = np.abs(uu) <= 0.5 * u_extent + 1e-12
    k_full = float(np.nanmax(k)) if positive else math.inf
    k_half = float(np.nanmax(k[half])) if positive else math.inf
    warn = (not positive) or not math.isfinite(k_full) or k_full > warn_ratio * max(k_half, 1e-300)
    if warn:
        warnings.warn(
            f"psi grows faster than linearly on the grid (K_hat {k_half:.3g} -> {k_full:.3g}); "
            "the change of measure may fail",
            RuntimeWarning,
            stacklevel=2,
        )
    return GrowthReport(float(np.nanmax(k0)), k_full, k_half, positive, float(u_extent), bool(warn))
