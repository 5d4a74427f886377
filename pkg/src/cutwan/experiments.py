"""Manufactured-solution presets: a nonlinear parabolic problem, a Poisson problem and a
quasilinear problem with a gradient nonlinearity, each with its training defaults.

Sources are derived symbolically from the exact solutions; boundary and
initial data are restrictions of the exact solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
import torch

from .geometry import BoxDomain
from .losses import PdeSpec

_TORCH_FUNCS = {"sin": torch.sin, "cos": torch.cos, "exp": torch.exp, "sqrt": torch.sqrt,
                "log": torch.log, "tanh": torch.tanh}

BASE_SETTINGS = {
    "d": 5, "N_r": 4000, "N_b": 4000, "n_T": 20, "K_u": 2, "K_phi": 1,
    "alpha": 1e7, "beta": 1e5, "gamma": 0.0, "gamma_d": 1e-3, "epsilon": 1e-2,
    "l_theta": 0.015, "l_eta": 0.04, "u_layers": 8, "u_hid-dim1": 20, "u_hid-dim2": 10,
    "v_layers": 9, "v_hid-dim": 50, "N_max": 300,
}

DEFAULTS = {
    "ex1": {**BASE_SETTINGS, "loss": "cwan", "model": "xnode-recursive"},
    "ex2": {**BASE_SETTINGS, "alpha": 1e5, "beta": 1e7, "gamma": 1e5,
            "loss": "cwan", "model": "pseudo-time-xnode-recursive"},
    "ex3": {**BASE_SETTINGS, "alpha": 6e7, "beta": 12e7, "gamma": 12e7, "l_eta": 0.03, "u_layers": 12,
            "N_max": 600, "gamma_d": 0.5, "loss": "cwan", "model": "pseudo-time-xnode"},
}


def to_torch(expr: sp.Expr, symbols) -> Callable[[torch.Tensor], torch.Tensor]:
    """Column-wise torch evaluator of ``expr``; rows of X are points ordered like ``symbols``."""
    fn = sp.lambdify(symbols, expr, modules=[_TORCH_FUNCS, "math"])
    n = len(symbols)

    def f(X: torch.Tensor) -> torch.Tensor:
        if X.shape[1] != n:
            raise ValueError(f"expected {n} columns, got {X.shape[1]}")
        r = fn(*[X[:, i] for i in range(n)])
        if not isinstance(r, torch.Tensor):
            return torch.full((X.shape[0],), float(r), dtype=X.dtype)
        return r if r.shape == (X.shape[0],) else r.expand(X.shape[0])

    return f


def to_numpy(expr: sp.Expr, symbols) -> Callable[[np.ndarray], np.ndarray]:
    fn = sp.lambdify(symbols, expr, modules="numpy")

    def f(X: np.ndarray) -> np.ndarray:
        r = fn(*[X[:, i] for i in range(len(symbols))])
        return np.broadcast_to(np.asarray(r, dtype=np.float64), (X.shape[0],)).copy()

    return f


@dataclass
class Preset:
    id: str
    d: int
    domain: BoxDomain
    symbols: tuple
    u_expr: sp.Expr
    f_expr: sp.Expr
    pde: PdeSpec
    exact: Callable[[torch.Tensor], torch.Tensor]
    exact_np: Callable[[np.ndarray], np.ndarray]
    source_np: Callable[[np.ndarray], np.ndarray]
    defaults: dict
    models: tuple[str, ...]
    losses: tuple[str, ...]
    extras: dict = field(default_factory=dict)

    @property
    def clock_axis(self):
        """Spatial axis used as pseudo-time (static problems only)."""
        return None if self.domain.T is not None else 0


def _ex1(d: int):
    if d < 2:
        raise ValueError("ex1 needs d >= 2")
    t = sp.Symbol("t")
    xs = sp.symbols(f"x1:{d + 1}")
    u = 2 * sp.sin(sp.pi * xs[0] / 2) * sp.cos(sp.pi * xs[1] / 2) * sp.exp(-t)
    f = sp.diff(u, t) - sum(sp.diff(u, x, 2) for x in xs) - u ** 2
    f = sp.simplify(f)
    syms = (t, *xs)
    dom = BoxDomain.time_box(d, 1.0, -1.0, 1.0)
    exact = to_torch(u, syms)
    pde = PdeSpec("parabolic", dom, source=to_torch(f, syms), boundary=exact, initial=exact,
                  reaction=lambda u_, X: -u_)
    return syms, u, f, dom, pde, ("dnn", "dnn-recursive", "xnode", "xnode-recursive"), \
        ("pinn", "wan", "cwan", "scwan")


def _ex2(d: int):
    xs = sp.symbols(f"x1:{d + 1}")
    u = sum(sp.sin(sp.pi * x / 2) for x in xs)
    f = -sum(sp.diff(u, x, 2) for x in xs)
    dom = BoxDomain.unit(d)
    exact = to_torch(u, xs)
    pde = PdeSpec("poisson", dom, source=to_torch(f, xs), boundary=exact)
    return xs, u, f, dom, pde, ("dnn", "dnn-recursive", "pseudo-time-xnode",
                                "pseudo-time-xnode-recursive"), ("pinn", "wan", "cwan", "scwan")


def _ex3(d: int):
    if d < 2:
        raise ValueError("ex3 needs d >= 2")
    xs = sp.symbols(f"x1:{d + 1}")
    u = sp.sin(sp.Rational(1, 2) * sp.pi * xs[0] ** 2 + sp.Rational(1, 2) * xs[1] ** 2)
    a = 1 + sum(x ** 2 for x in xs)
    grad = [sp.diff(u, x) for x in xs]
    f = -sum(sp.diff(a * g, x) for g, x in zip(grad, xs)) + sp.Rational(1, 2) * sum(g ** 2 for g in grad)
    dom = BoxDomain.unit(d)
    exact = to_torch(u, xs)
    a_t = to_torch(a, xs)
    pde = PdeSpec("nonlinear-gradient", dom, source=to_torch(f, xs), boundary=exact,
                  diffusion=a_t, gradient_term=lambda g, X: 0.5 * (g * g).sum(1))
    return xs, u, f, dom, pde, ("dnn", "dnn-recursive", "pseudo-time-xnode",
                                "pseudo-time-xnode-recursive"), ("pinn", "wan", "cwan", "scwan")


_BUILDERS = {"ex1": _ex1, "ex2": _ex2, "ex3": _ex3}
PRESET_IDS = tuple(_BUILDERS)


def build_preset(pid: str, d: int | None = None) -> Preset:
    """Preset ``pid`` in dimension ``d`` (default: the tabulated d)."""
    if pid not in _BUILDERS:
        raise KeyError(f"unknown preset {pid!r}; choose from {PRESET_IDS}")
    defaults = {"preset": pid, **DEFAULTS[pid], "seed": 0}
    if d is not None:
        defaults["d"] = int(d)
    dd = defaults["d"]
    syms, u, f, dom, pde, models, losses = _BUILDERS[pid](dd)
    return Preset(pid, dd, dom, syms, u, f, pde, to_torch(u, syms), to_numpy(u, syms),
                  to_numpy(f, syms), defaults, models, losses)


def manufactured_source(preset: Preset, points) -> np.ndarray:
    """f at the given points (rows ordered like the preset's symbols)."""
    return preset.source_np(np.atleast_2d(np.asarray(points, dtype=np.float64)))
