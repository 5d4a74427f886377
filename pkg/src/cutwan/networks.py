"""Trial and test function classes: feed-forward DNN, recursive DNN, XNODE and pseudo-time XNODE.

All networks run in float64. Parameters are initialised uniformly in
``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` from a seeded Philox stream.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from ._rng import stream

DTYPE = torch.float64

ACTIVATIONS = {
    "tanh": (torch.tanh, ad.tanh),
    "relu": (torch.relu, ad.relu),
    "identity": (lambda z: z, lambda z: z),
}


@dataclass(frozen=True)
class DnnArch:
    """``widths = [n_in, hidden..., n_out]`` with one activation tag per hidden layer."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]
    recursive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 3:
            raise ValueError("a DNN needs an input, an output and at least one hidden layer")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 2:
            raise ValueError(
                f"need {len(self.widths) - 2} activation tags, got {len(self.activations)}"
            )
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}; choose from {sorted(ACTIVATIONS)}")

    @classmethod
    def uniform(cls, n_in: int, hidden: int, n_hidden: int, n_out: int, act: str = "tanh",
                last: str | None = None, recursive: bool = False) -> "DnnArch":
        acts = [act] * n_hidden
        if last is not None:
            acts[-1] = last
        return cls((n_in, *([hidden] * n_hidden), n_out), tuple(acts), recursive)

    @property
    def n_transforms(self) -> int:
        return len(self.widths) - 1

    def _shares_previous(self, l: int) -> bool:
        # transform l maps layer l -> l+1; hidden layers are indices 1..len-2
        w = self.widths
        hidden_to_hidden = 1 <= l and l + 1 <= len(w) - 2 and w[l] == w[l + 1]
        prev_same = l - 1 >= 1 and w[l - 1] == w[l]
        return self.recursive and hidden_to_hidden and prev_same

    def slots(self) -> list[int]:
        """Parameter slot used by each transform; shared transforms repeat a slot."""
        out, nxt = [], 0
        for l in range(self.n_transforms):
            if l > 0 and self._shares_previous(l):
                out.append(out[-1])
            else:
                out.append(nxt)
                nxt += 1
        return out

    def slot_shapes(self) -> list[tuple[int, int]]:
        shapes: dict[int, tuple[int, int]] = {}
        for l, s in enumerate(self.slots()):
            shapes.setdefault(s, (self.widths[l + 1], self.widths[l]))
        return [shapes[s] for s in sorted(shapes)]

    def param_count(self) -> int:
        return sum(o * (i + 1) for o, i in self.slot_shapes())

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations),
                "recursive": self.recursive}

    @classmethod
    def from_dict(cls, d: dict) -> "DnnArch":
        return cls(tuple(d["widths"]), tuple(d["activations"]), bool(d.get("recursive", False)))


def _uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int):
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=(out_dim,))
    return torch.tensor(w, dtype=DTYPE), torch.tensor(b, dtype=DTYPE)


class Dnn(nn.Module):
    """Feed-forward network; no activation after the output layer."""

    def __init__(self, arch: DnnArch, seed: int = 0, key: str = "dnn"):
        super().__init__()
        self.arch = arch
        self._slots = arch.slots()
        rng = stream(seed, "init", key)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for o, i in arch.slot_shapes():
            w, b = _uniform_init(rng, o, i)
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(b))

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.arch.widths[0]:
            raise ValueError(f"expected input dim {self.arch.widths[0]}, got {x.shape[-1]}")
        z = x.to(DTYPE)
        last = self.arch.n_transforms - 1
        for l, s in enumerate(self._slots):
            z = z @ self.weights[s].T + self.biases[s]
            if l < last:
                z = ACTIVATIONS[self.arch.activations[l]][0](z)
        return z.squeeze(0) if squeeze else z

    def named_scalars(self) -> dict[str, float]:
        """Every trainable scalar keyed ``W{slot}[i,j]`` / ``b{slot}[i]``."""
        out = {}
        for s, (w, b) in enumerate(zip(self.weights, self.biases)):
            wn = w.detach().numpy()
            bn = b.detach().numpy()
            for i in range(wn.shape[0]):
                for j in range(wn.shape[1]):
                    out[f"W{s}[{i},{j}]"] = float(wn[i, j])
                out[f"b{s}[{i}]"] = float(bn[i])
        return out

    def scalar_forward(self, xs: Sequence, p: dict) -> list:
        """Forward pass on scalar tape nodes (or floats) with parameters looked up in ``p``."""
        if len(xs) != self.arch.widths[0]:
            raise ValueError(f"expected input dim {self.arch.widths[0]}, got {len(xs)}")
        z = list(xs)
        last = self.arch.n_transforms - 1
        for l, s in enumerate(self._slots):
            o, i = self.weights[s].shape
            nz = []
            for r in range(o):
                acc = p[f"b{s}[{r}]"]
                for c in range(i):
                    acc = acc + p[f"W{s}[{r},{c}]"] * z[c]
                nz.append(acc)
            if l < last:
                act = ACTIVATIONS[self.arch.activations[l]][1]
                nz = [act(v) for v in nz]
            z = nz
        return z


@dataclass(frozen=True)
class XnodeArch:
    """Embedding ``N_init``, vector field ``N_vec`` and a linear readout."""

    n_init: DnnArch
    n_vec: DnnArch
    hidden: int
    d_spatial: int

    @classmethod
    def from_hyper(cls, d_spatial: int, u_hid1: int, u_hid2: int, u_layers: int,
                   recursive: bool = False) -> "XnodeArch":
        # N_init arch [1, h1, h1, h1]: ReLU after the input layer and after the hidden layer
        n_init = DnnArch((1, u_hid1, u_hid1, u_hid1), ("relu", "relu"), False)
        n_vec = DnnArch((u_hid1 + 1 + d_spatial, *([u_hid2] * u_layers), u_hid1),
                        ("tanh",) * u_layers, recursive)
        return cls(n_init, n_vec, u_hid1, d_spatial)

    def param_count(self) -> int:
        return self.n_init.param_count() + self.n_vec.param_count() + self.hidden + 1

    def to_dict(self) -> dict:
        return {"n_init": self.n_init.to_dict(), "n_vec": self.n_vec.to_dict(),
                "hidden": self.hidden, "d_spatial": self.d_spatial}


def param_count(arch) -> int:
    return arch.param_count()


def uniform_grid(n_T: int, T: float = 1.0) -> torch.Tensor:
    if n_T < 1:
        raise ValueError("n_T must be at least 1")
    return torch.linspace(0.0, T, n_T + 1, dtype=DTYPE)


class Xnode(nn.Module):
    """u(t, x) = readout(h(t)) with h(0) = N_init(h0(x)) and forward-Euler h' = N_vec(h, t, x).

    Inputs to :meth:`forward` are rows ``(t, x_1..x_d)``. Off-grid times are
    linearly interpolated between Euler nodes, so the time derivative inside
    a step equals ``readout_W . N_vec(h_k, t_k, x)`` exactly.
    """

    def __init__(self, arch: XnodeArch, initial_datum: Callable[[torch.Tensor], torch.Tensor],
                 n_T: int, T: float = 1.0, seed: int = 0, key: str = "xnode"):
        super().__init__()
        self.arch = arch
        self.initial_datum = initial_datum
        self.register_buffer("grid", uniform_grid(n_T, T))
        self.n_init = Dnn(arch.n_init, seed, key + "/init")
        self.n_vec = Dnn(arch.n_vec, seed, key + "/vec")
        w, b = _uniform_init(stream(seed, "init", key + "/readout"), 1, arch.hidden)
        self.readout_w = nn.Parameter(w)
        self.readout_b = nn.Parameter(b)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def readout(self, h: torch.Tensor) -> torch.Tensor:
        return (h @ self.readout_w.T + self.readout_b).squeeze(-1)

    def hidden_trajectory(self, x: torch.Tensor, h0: torch.Tensor, grid: torch.Tensor | None = None):
        """Hidden states at every grid node: shape (N, n_T+1, hidden)."""
        grid = self.grid if grid is None else grid
        if grid.dim() != 1 or grid.numel() < 2 or float(grid[0]) != 0.0:
            raise ValueError("time grid must be 1-D, start at 0 and have at least two nodes")
        if not bool(torch.all(grid[1:] > grid[:-1])):
            raise ValueError("time grid must be strictly increasing")
        if x.shape[-1] != self.arch.d_spatial:
            raise ValueError(f"expected {self.arch.d_spatial} spatial coordinates, got {x.shape[-1]}")
        n = x.shape[0]
        h = self.n_init(h0.reshape(n, 1))
        states = [h]
        ones = torch.ones(n, 1, dtype=DTYPE)
        for i in range(grid.numel() - 1):
            dt = grid[i + 1] - grid[i]
            h = h + dt * self.n_vec(torch.cat([h, grid[i] * ones, x], dim=1))
            states.append(h)
        return torch.stack(states, dim=1)

    def trajectory(self, x: torch.Tensor, h0: torch.Tensor | None = None,
                   grid: torch.Tensor | None = None) -> torch.Tensor:
        """Outputs o_x(t_i) at every grid node: shape (N, n_T+1)."""
        x = x.to(DTYPE)
        if h0 is None:
            h0 = self.initial_datum(x)
        return self.readout(self.hidden_trajectory(x, h0, grid))

    def forward(self, tx: torch.Tensor) -> torch.Tensor:
        tx = tx.to(DTYPE)
        t, x = tx[:, 0], tx[:, 1:]
        grid = self.grid
        if bool(torch.any(t < grid[0])) or bool(torch.any(t > grid[-1])):
            raise ValueError(f"time outside [0, {self.T}]")
        traj = self.trajectory(x)
        k = (torch.searchsorted(grid, t.detach().contiguous(), right=True) - 1).clamp(0, grid.numel() - 2)
        g0, g1 = grid[k], grid[k + 1]
        w = (t - g0) / (g1 - g0)
        o0 = traj.gather(1, k.unsqueeze(1)).squeeze(1)
        o1 = traj.gather(1, (k + 1).unsqueeze(1)).squeeze(1)
        return (1.0 - w) * o0 + w * o1


class PseudoTimeXnode(Xnode):
    """XNODE for static problems on [0,1]^d: x_1 is the clock, (x_2..x_d) the spatial input."""

    def __init__(self, arch: XnodeArch, initial_datum, n_T: int, seed: int = 0, key: str = "xnode"):
        if arch.d_spatial < 1:
            raise ValueError("pseudo-time XNODE needs d >= 2")
        super().__init__(arch, initial_datum, n_T, 1.0, seed, key)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.to(DTYPE)
        if bool(torch.any(x < 0.0)) or bool(torch.any(x > 1.0)):
            raise ValueError("pseudo-time XNODE inputs must lie in [0,1]^d")
        return super().forward(x)


MODEL_KINDS = ("dnn", "dnn-recursive", "xnode", "xnode-recursive",
               "pseudo-time-xnode", "pseudo-time-xnode-recursive")


def build_trial(kind: str, d_in: int, u_layers: int, u_hid1: int, u_hid2: int, n_T: int,
                initial_datum=None, T: float = 1.0, seed: int = 0) -> nn.Module:
    """Trial network u_theta for an input of ``d_in`` coordinates (time first if present)."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    recursive = kind.endswith("-recursive")
    if kind.startswith("dnn"):
        arch = DnnArch.uniform(d_in, u_hid1, u_layers, 1, "tanh", recursive=recursive)
        return _ScalarDnn(arch, seed, "u")
    if initial_datum is None:
        raise ValueError(f"{kind} needs an initial datum")
    arch = XnodeArch.from_hyper(d_in - 1, u_hid1, u_hid2, u_layers, recursive)
    if kind.startswith("pseudo-time"):
        return PseudoTimeXnode(arch, initial_datum, n_T, seed, "u")
    return Xnode(arch, initial_datum, n_T, T, seed, "u")


def build_test(d_in: int, v_layers: int, v_hid: int, seed: int = 0, recursive: bool = False) -> nn.Module:
    """Adversarial network: ``v_layers + 1`` hidden layers, ReLU except a tanh last hidden layer."""
    arch = DnnArch.uniform(d_in, v_hid, v_layers + 1, 1, "relu", last="tanh", recursive=recursive)
    return _ScalarDnn(arch, seed, "v")


class _ScalarDnn(Dnn):
    """Dnn with a single output, returned as shape (N,)."""

    def forward(self, x):
        return super().forward(x).squeeze(-1)
