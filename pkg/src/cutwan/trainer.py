"""Alternating descent/ascent training of trial and adversarial networks.

Each outer step draws a fresh batch, takes ``K_u`` Adam descent steps on the
trial parameters and ``K_phi`` Adam ascent steps on the test parameters
(same loss expression, opposite sign), then measures the relative error on
a fixed test set.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from . import networks
from .experiments import Preset, build_preset
from .geometry import Cutoff, make_batch, sample_interior
from .losses import DegenerateTestFunction, LossSpec, evaluate_loss

DIVERGENCE_LIMIT = 1e12


class Adam:
    """Adam with bias correction; ``ascent=True`` climbs the loss instead of descending."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 ascent: bool = False):
        self.params = list(params)
        self.lr, (self.b1, self.b2), self.eps, self.ascent = lr, betas, eps, ascent
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0
        self.skipped: list[dict] = []

    @torch.no_grad()
    def step(self, grads) -> bool:
        """Apply one update; a non-finite gradient aborts the step and is logged."""
        grads = [torch.zeros_like(p) if g is None else g for p, g in zip(self.params, grads)]
        bad = [i for i, g in enumerate(grads) if not bool(torch.isfinite(g).all())]
        if bad:
            self.skipped.append({"step": self.t + 1, "params": bad})
            return False
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        sign = 1.0 if self.ascent else -1.0
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m.mul_(self.b1).add_(g, alpha=1.0 - self.b1)
            v.mul_(self.b2).addcmul_(g, g, value=1.0 - self.b2)
            p.add_(sign * self.lr * (m / c1) / ((v / c2).sqrt() + self.eps))
        return True


def relative_error(u_pred, u_exact) -> float:
    """sum (u - u_theta)^2 / sum u^2 (no square root)."""
    u_pred = np.asarray(u_pred, dtype=np.float64)
    u_exact = np.asarray(u_exact, dtype=np.float64)
    den = float(np.sum(u_exact ** 2))
    if den == 0.0:
        raise ValueError("exact solution vanishes on the test set")
    return float(np.sum((u_exact - u_pred) ** 2)) / den


# JSON name -> attribute name
FIELD_NAMES = {
    "preset": "preset", "d": "d", "N_r": "N_r", "N_b": "N_b", "n_T": "n_T", "K_u": "K_u",
    "K_phi": "K_phi", "alpha": "alpha", "beta": "beta", "gamma": "gamma", "gamma_d": "gamma_d",
    "epsilon": "epsilon", "l_theta": "l_theta", "l_eta": "l_eta", "u_layers": "u_layers",
    "u_hid-dim1": "u_hid1", "u_hid-dim2": "u_hid2", "v_layers": "v_layers",
    "v_hid-dim": "v_hid", "N_max": "N_max", "loss": "loss", "model": "model", "seed": "seed",
}
_INT = {"d", "N_r", "N_b", "n_T", "K_u", "K_phi", "u_layers", "u_hid1", "u_hid2", "v_layers",
        "v_hid", "N_max", "seed"}
_STR = {"preset", "loss", "model"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class TrainConfig:
    preset: str
    d: int
    N_r: int
    N_b: int
    n_T: int
    K_u: int
    K_phi: int
    alpha: float
    beta: float
    gamma: float
    gamma_d: float
    epsilon: float
    l_theta: float
    l_eta: float
    u_layers: int
    u_hid1: int
    u_hid2: int
    v_layers: int
    v_hid: int
    N_max: int
    loss: str
    model: str
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        unknown = sorted(set(raw) - set(FIELD_NAMES))
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        kw = {}
        for jname, attr in FIELD_NAMES.items():
            if jname not in raw:
                if attr == "seed":
                    continue
                raise ConfigError(jname, "missing required field")
            kw[attr] = _coerce(jname, attr, raw[jname])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        out = {j: d[a] for j, a in FIELD_NAMES.items()}
        if math.isinf(out["epsilon"]):
            out["epsilon"] = "inf"
        return out

    def validate(self):
        from .experiments import PRESET_IDS

        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.preset in PRESET_IDS, "preset", f"must be one of {PRESET_IDS}")
        for name in ("d", "N_r", "N_b", "n_T", "u_layers", "u_hid-dim1", "u_hid-dim2",
                     "v_layers", "v_hid-dim", "N_max"):
            need(getattr(self, FIELD_NAMES[name]) >= 1, name, "must be >= 1")
        need(self.K_u >= 0, "K_u", "must be >= 0")
        need(self.K_phi >= 0, "K_phi", "must be >= 0")
        for name in ("alpha", "beta", "gamma"):
            need(getattr(self, name) >= 0, name, "must be >= 0")
        need(self.epsilon > 0, "epsilon", "must be > 0")
        need(self.l_theta > 0, "l_theta", "must be > 0")
        need(self.l_eta > 0, "l_eta", "must be > 0")
        need(self.loss in ("pinn", "wan", "cwan", "scwan"), "loss", "must be pinn|wan|cwan|scwan")
        need(self.model in networks.MODEL_KINDS, "model", f"must be one of {networks.MODEL_KINDS}")
        if self.loss in ("cwan", "scwan"):
            need(self.gamma_d > 0, "gamma_d", "must be > 0 for cwan/scwan")
        if self.model.startswith("pseudo-time"):
            need(self.d >= 2, "d", "pseudo-time models need d >= 2")
            need(self.preset != "ex1", "model", "pseudo-time models are for static problems")
        if self.model.startswith("xnode"):
            need(self.preset == "ex1", "model", "xnode models need a time-dependent problem")
        if self.preset in ("ex1", "ex3"):
            need(self.d >= 2, "d", f"{self.preset} needs d >= 2")


def _coerce(jname, attr, value):
    if attr in _STR:
        if not isinstance(value, str):
            raise ConfigError(jname, "must be a string")
        return value
    if isinstance(value, bool):
        raise ConfigError(jname, "must be a number")
    if attr in _INT:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(jname, "must be an integer")
        return value
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    if not isinstance(value, (int, float)):
        raise ConfigError(jname, "must be a number")
    return float(value)


@dataclass
class StepRecord:
    step: int
    loss: float
    rel_error: float
    seconds: float
    phase_seconds: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)
    initial_error: float = math.nan
    stop_reason: str = ""
    steps: int = 0
    diagnostics: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def final_error(self) -> float:
        return self.records[-1].rel_error if self.records else self.initial_error

    def rel_errors(self) -> np.ndarray:
        return np.array([r.rel_error for r in self.records])

    def to_csv(self, with_timing: bool = False) -> str:
        lines = ["step,loss,rel_error,seconds"]
        for r in self.records:
            sec = repr(r.seconds) if with_timing else ""
            lines.append(f"{r.step},{r.loss!r},{r.rel_error!r},{sec}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"stop_reason": self.stop_reason, "steps": self.steps,
                "initial_error": self.initial_error, "final_error": self.final_error,
                "min_error": float(min([r.rel_error for r in self.records], default=self.initial_error)),
                "diagnostics": self.diagnostics}


@dataclass
class Problem:
    """Everything a run needs besides the config."""

    preset: Preset
    u_net: torch.nn.Module
    v_net: Optional[torch.nn.Module]
    cutoff: Cutoff
    spec: LossSpec
    clock_axis: Optional[int]


def _initial_datum(preset: Preset):
    data = preset.pde.initial if preset.domain.T is not None else preset.pde.boundary

    def h(x_sp: torch.Tensor) -> torch.Tensor:
        zeros = torch.zeros(x_sp.shape[0], 1, dtype=x_sp.dtype)
        return data(torch.cat([zeros, x_sp], 1))
    return h


def build_problem(cfg: TrainConfig, preset: Optional[Preset] = None) -> Problem:
    preset = preset or build_preset(cfg.preset, cfg.d)
    pseudo = cfg.model.startswith("pseudo-time")
    n_in = preset.domain.n_coords
    u_net = networks.build_trial(cfg.model, n_in, cfg.u_layers, cfg.u_hid1, cfg.u_hid2, cfg.n_T,
                                 initial_datum=_initial_datum(preset),
                                 T=preset.domain.T or 1.0, seed=cfg.seed)
    v_net = None
    if cfg.loss != "pinn":
        v_net = networks.build_test(n_in, cfg.v_layers, cfg.v_hid, seed=cfg.seed)
    # alpha weighs the initial misfit only where an initial slice exists
    has_initial = preset.domain.T is not None or pseudo
    spec = LossSpec(cfg.loss, alpha=cfg.alpha if has_initial else 0.0, beta=cfg.beta,
                    gamma=cfg.gamma, gamma_d=cfg.gamma_d, include_terminal=pseudo)
    return Problem(preset, u_net, v_net, Cutoff(preset.domain), spec, 0 if pseudo else None)


def train(cfg: TrainConfig, problem: Optional[Problem] = None, log=None) -> TrainHistory:
    """Run the alternating min-max loop until the tolerance or ``N_max`` outer steps."""
    t_start = time.perf_counter()
    prob = problem or build_problem(cfg)
    preset, u_net, v_net = prob.preset, prob.u_net, prob.v_net
    K_u, K_phi = (1, 0) if cfg.loss == "pinn" else (cfg.K_u, cfg.K_phi)
    theta = list(u_net.parameters())
    eta = list(v_net.parameters()) if v_net is not None and K_phi > 0 else []
    opt_u = Adam(theta, cfg.l_theta)
    opt_v = Adam(eta, cfg.l_eta, ascent=True) if eta else None

    test_pts = sample_interior(preset.domain, cfg.N_r, cfg.seed, "test")
    u_test = preset.exact_np(test_pts)
    test_t = torch.from_numpy(test_pts)

    def current_error() -> float:
        with torch.no_grad():
            pred = u_net(test_t).numpy()
        return relative_error(pred, u_test)

    pseudo = prob.clock_axis is not None
    hist = TrainHistory(initial_error=current_error())

    def loss_on(batch):
        return evaluate_loss(prob.spec, u_net, v_net, prob.cutoff, batch, preset.pde)

    if not hist.initial_error >= cfg.epsilon:
        hist.stop_reason = "tolerance-met"
    step = 0
    while not hist.stop_reason and step < cfg.N_max:
        t0 = time.perf_counter()
        batch = make_batch(preset.domain, cfg.N_r, cfg.N_b, cfg.n_T, cfg.seed, step,
                           clock_axis=prob.clock_axis,
                           initial=preset.domain.T is not None or pseudo, terminal=pseudo)
        recorded = math.nan
        try:
            t1 = time.perf_counter()
            for k in range(K_u):
                loss = loss_on(batch)
                if k == 0:
                    recorded = loss.item()
                grads = torch.autograd.grad(loss, theta, allow_unused=True)
                if not opt_u.step(grads):
                    hist.diagnostics.append({"step": step + 1, "phase": "theta",
                                             "event": "non-finite gradient, update skipped"})
            t2 = time.perf_counter()
            for k in range(K_phi):
                loss = loss_on(batch)
                if K_u == 0 and k == 0:
                    recorded = loss.item()
                grads = torch.autograd.grad(loss, eta, allow_unused=True)
                if not opt_v.step(grads):
                    hist.diagnostics.append({"step": step + 1, "phase": "eta",
                                             "event": "non-finite gradient, update skipped"})
            t3 = time.perf_counter()
        except DegenerateTestFunction as exc:
            hist.diagnostics.append({"step": step + 1, "event": str(exc)})
            hist.stop_reason = "degenerate-test-function"
            break
        step += 1
        err = current_error()
        t4 = time.perf_counter()
        hist.records.append(StepRecord(step, recorded, err, t4 - t0, (t2 - t1, t3 - t2, t4 - t3)))
        if log is not None:
            log(hist.records[-1])
        if not (math.isfinite(recorded) and math.isfinite(err)) or abs(recorded) > DIVERGENCE_LIMIT:
            hist.stop_reason = "diverged"
        elif err < cfg.epsilon:
            hist.stop_reason = "tolerance-met"
    if not hist.stop_reason:
        hist.stop_reason = "max-iterations"
    hist.steps = step
    hist.wall_seconds = time.perf_counter() - t_start
    return hist


def config_for(preset_id: str, **overrides) -> TrainConfig:
    """Preset defaults with JSON-named overrides, validated."""
    raw = dict(build_preset(preset_id).defaults)
    raw.update(overrides)
    if "d" in overrides:
        raw["d"] = overrides["d"]
    return TrainConfig.from_dict(raw)


__all__ = ["Adam", "TrainConfig", "TrainHistory", "StepRecord", "ConfigError", "relative_error",
           "build_problem", "train", "config_for"]
