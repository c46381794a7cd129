"""SDE coefficient fields ``dX = mu(t, X) dt + sigma(t, X) dB`` and presets.

Custom coefficients are parsed from expression strings in ``t`` and ``x``
(arithmetic, ``exp``, ``log``, ``tanh``); derivatives are taken symbolically.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "CoefficientField",
    "AnalyticPhi",
    "PRESETS",
    "PRESET_DEFAULTS",
    "preset",
    "from_expressions",
]


@dataclass(frozen=True)
class AnalyticPhi:
    """Closed-form solution of ``phi_u = sigma(t, phi), phi(t, 0) = x0``."""

    phi: Callable
    phi_u: Callable
    phi_uu: Callable
    phi_t: Callable


@dataclass(frozen=True)
class CoefficientField:
    """Drift, diffusion and the derivatives of the diffusion used downstream.

    All callables take ``(t, x)`` and broadcast over numpy arrays.
    """

    mu: Callable
    sigma: Callable
    sigma_x: Callable
    sigma_t: Callable
    x0: float
    T: float = 1.0
    time_homogeneous: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)
    analytic: AnalyticPhi | None = None


def _const(value):
    return lambda t, x: np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, float(value))


def _linear_sigma(a, b, c, d, x0, T, name="linear-sigma"):
    if not a > 0 or b < 0:
        raise ConfigError("linear-sigma needs a > 0 and b >= 0")
    shift = x0 + b / a

    def phi(t, u):
        return shift * np.exp(a * np.asarray(u, dtype=float)) - b / a

    def phi_u(t, u):
        return a * shift * np.exp(a * np.asarray(u, dtype=float))

    def phi_uu(t, u):
        return a * a * shift * np.exp(a * np.asarray(u, dtype=float))

    def zero(t, u):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(u)).shape)

    return CoefficientField(
        mu=lambda t, x: c * np.asarray(x, dtype=float) + d + 0.0 * np.asarray(t),
        sigma=lambda t, x: a * np.asarray(x, dtype=float) + b + 0.0 * np.asarray(t),
        sigma_x=_const(a),
        sigma_t=_const(0.0),
        x0=x0,
        T=T,
        time_homogeneous=True,
        name=name,
        params=dict(a=a, b=b, c=c, d=d, x0=x0),
        analytic=AnalyticPhi(phi, phi_u, phi_uu, zero),
    )


def _gbm(a=1.0, c=1.0, x0=1.0, T=1.0):
    f = _linear_sigma(a, 0.0, c, 0.0, x0, T, name="gbm")
    return replace(f, params=dict(a=a, c=c, x0=x0))


def _counterexample(a=1.0, d=1.0, x0=1.0, T=1.0):
    if not (a > 0 and d > 0 and x0 > 0):
        raise ConfigError("counterexample needs a, d, x0 > 0")
    f = _linear_sigma(a, 0.0, 0.0, -d, x0, T, name="counterexample")
    return replace(f, params=dict(a=a, d=d, x0=x0))


def _ou(b=1.0, c=-1.0, d=0.0, x0=0.0, T=1.0):
    if not b > 0:
        raise ConfigError("ou needs b > 0")

    def zero(t, u):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(u)).shape)

    return CoefficientField(
        mu=lambda t, x: c * np.asarray(x, dtype=float) + d + 0.0 * np.asarray(t),
        sigma=_const(b),
        sigma_x=_const(0.0),
        sigma_t=_const(0.0),
        x0=x0,
        T=T,
        time_homogeneous=True,
        name="ou",
        params=dict(b=b, c=c, d=d, x0=x0),
        analytic=AnalyticPhi(
            phi=lambda t, u: b * np.asarray(u, dtype=float) + x0 + 0.0 * np.asarray(t),
            phi_u=_const(b),
            phi_uu=zero,
            phi_t=zero,
        ),
    )


PRESETS = {
    "gbm": _gbm,
    "linear-sigma": lambda a=1.0, b=0.0, c=0.0, d=0.0, x0=1.0, T=1.0: _linear_sigma(a, b, c, d, x0, T),
    "ou": _ou,
    "counterexample": _counterexample,
}

PRESET_DEFAULTS = {
    "gbm": dict(a=1.0, c=1.0, x0=1.0),
    "linear-sigma": dict(a=1.0, b=0.0, c=0.0, d=0.0, x0=1.0),
    "ou": dict(b=1.0, c=-1.0, d=0.0, x0=0.0),
    "counterexample": dict(a=1.0, d=1.0, x0=1.0),
}


def preset(name: str, T: float = 1.0, **params) -> CoefficientField:
    """Coefficient field of a named preset.

    >>> preset("gbm", a=1, c=1, x0=1).params
    {'a': 1.0, 'c': 1.0, 'x0': 1.0}
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    allowed = PRESET_DEFAULTS[name]
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigError(f"preset {name!r} takes {sorted(allowed)}, got {sorted(unknown)}")
    merged = {k: float(params.get(k, v)) for k, v in allowed.items()}
    return PRESETS[name](T=float(T), **merged)


# --- expression coefficients -------------------------------------------------

_ALLOWED_FUNCS = {"exp", "log", "tanh"}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def _check_expr(src, names):
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"disallowed syntax {type(node).__name__} in {src!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise ConfigError(f"only exp, log, tanh may be called in {src!r}")
            if len(node.args) != 1 or node.keywords:
                raise ConfigError(f"functions take exactly one argument in {src!r}")
        elif isinstance(node, ast.Name) and node.id not in names | _ALLOWED_FUNCS:
            raise ConfigError(f"unknown name {node.id!r} in {src!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant in {src!r}")


def _vectorise(expr, symbols):
    import sympy

    fn = sympy.lambdify(symbols, expr, modules="numpy")

    def wrapped(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(t, x), dtype=float), np.broadcast(t, x).shape).copy()

    return wrapped


def from_expressions(mu: str, sigma: str, x0: float, T: float = 1.0, params: dict | None = None) -> CoefficientField:
    """Coefficient field from expression strings in ``t`` and ``x``.

    ``params`` supplies named constants usable in the expressions.
    """
    import sympy

    params = {k: float(v) for k, v in (params or {}).items()}
    names = {"t", "x"} | set(params)
    for src in (mu, sigma):
        _check_expr(src, names)
    t, x = sympy.symbols("t x", real=True)
    local = {"t": t, "x": x, "exp": sympy.exp, "log": sympy.log, "tanh": sympy.tanh}
    local.update({k: sympy.Float(v) for k, v in params.items()})
    mu_e = sympy.sympify(mu, locals=local)
    sig_e = sympy.sympify(sigma, locals=local)
    return CoefficientField(
        mu=_vectorise(mu_e, (t, x)),
        sigma=_vectorise(sig_e, (t, x)),
        sigma_x=_vectorise(sympy.diff(sig_e, x), (t, x)),
        sigma_t=_vectorise(sympy.diff(sig_e, t), (t, x)),
        x0=float(x0),
        T=float(T),
        time_homogeneous=t not in (mu_e.free_symbols | sig_e.free_symbols),
        name="custom",
        params=dict(mu=mu, sigma=sigma, **params),
    )
