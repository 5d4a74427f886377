"""Box domains, uniform Monte Carlo sampling, product cutoffs and Monte Carlo norms.

Point layout: for a time-box the first column is t, followed by the spatial
coordinates. For pseudo-time problems the clock is a spatial axis of a static
box (``clock_axis``); its two faces act as initial and terminal slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ._rng import stream


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    T: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper need the same, nonzero length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("need lower < upper in every coordinate")
        if self.T is not None and not self.T > 0:
            raise ValueError("time horizon must be positive")

    @classmethod
    def unit(cls, d: int) -> "BoxDomain":
        return cls((0.0,) * d, (1.0,) * d)

    @classmethod
    def time_box(cls, d: int, T: float = 1.0, lo: float = -1.0, hi: float = 1.0) -> "BoxDomain":
        return cls((lo,) * d, (hi,) * d, T)

    @property
    def kind(self) -> str:
        return "static-box" if self.T is None else "time-box"

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def n_coords(self) -> int:
        return self.d + (self.T is not None)

    @property
    def offset(self) -> int:
        """Column index of the first spatial coordinate."""
        return 0 if self.T is None else 1

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def spatial_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volume(self) -> float:
        return self.spatial_volume * (1.0 if self.T is None else self.T)

    def full_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if self.T is not None:
            lo, hi = np.concatenate([[0.0], lo]), np.concatenate([[self.T], hi])
        return lo, hi

    def lateral_faces(self, clock_axis: int | None = None) -> list[tuple[int, int, float]]:
        """(column, side 0=lower/1=upper, measure) of every boundary face used by L_bdry."""
        faces = []
        for i in range(self.d):
            if i == clock_axis:
                continue
            m = self.volume / self.widths[i]
            faces += [(self.offset + i, 0, m), (self.offset + i, 1, m)]
        return faces

    def boundary_measure(self, clock_axis: int | None = None) -> float:
        return float(sum(m for _, _, m in self.lateral_faces(clock_axis)))

    def slice_measure(self, clock_axis: int | None = None) -> float:
        """Measure of Omega(0) (equal to that of Omega(T))."""
        if self.T is not None:
            return self.spatial_volume
        if clock_axis is None:
            raise ValueError("a static box has initial/terminal slices only with a clock axis")
        return self.spatial_volume / self.widths[clock_axis]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.full_bounds()
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def _strict_uniform(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    pts = rng.uniform(lo, hi, size=(n, lo.size))
    bad = np.any(pts <= lo, axis=1)
    while bad.any():  # uniform(lo, hi) can return lo exactly; redraw those rows
        pts[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), lo.size))
        bad = np.any(pts <= lo, axis=1)
    return pts


def sample_interior(domain: BoxDomain, n: int, seed: int, key="interior") -> np.ndarray:
    if n <= 0:
        raise ValueError("need at least one sample")
    lo, hi = domain.full_bounds()
    return _strict_uniform(stream(seed, key), lo, hi, n)


def sample_boundary(domain: BoxDomain, n: int, seed: int, clock_axis: int | None = None,
                    key="boundary") -> np.ndarray:
    """Uniform on the lateral boundary; faces drawn with probability proportional to measure.

    Time-box slices t=0, t=T and the clock faces of a pseudo-time box are excluded.
    """
    if n <= 0:
        raise ValueError("need at least one sample")
    rng = stream(seed, key)
    faces = domain.lateral_faces(clock_axis)
    m = np.array([f[2] for f in faces])
    pick = rng.choice(len(faces), size=n, p=m / m.sum())
    lo, hi = domain.full_bounds()
    pts = _strict_uniform(rng, lo, hi, n)
    for k, (col, side, _) in enumerate(faces):
        rows = pick == k
        pts[rows, col] = hi[col] if side else lo[col]
    return pts


def sample_slice(domain: BoxDomain, n: int, seed: int, which: str, clock_axis: int | None = None,
                 key=None) -> np.ndarray:
    """Uniform points on Omega(0) (``which='initial'``) or Omega(T) (``which='terminal'``)."""
    if which not in ("initial", "terminal"):
        raise ValueError(f"unknown slice {which!r}")
    if n <= 0:
        raise ValueError("need at least one sample")
    col = 0 if domain.T is not None else (None if clock_axis is None else clock_axis)
    if col is None:
        raise ValueError("a static box has initial/terminal slices only with a clock axis")
    lo, hi = domain.full_bounds()
    pts = _strict_uniform(stream(seed, key or which), lo, hi, n)
    pts[:, col] = lo[col] if which == "initial" else hi[col]
    return pts


@dataclass
class SampleBatch:
    interior: np.ndarray
    interior_volume: float
    boundary: np.ndarray
    boundary_area: float
    initial: np.ndarray | None
    initial_area: float | None
    terminal: np.ndarray | None
    terminal_area: float | None
    grid: np.ndarray
    seed: int

    def tensors(self) -> dict[str, torch.Tensor | None]:
        t = lambda a: None if a is None else torch.from_numpy(a)  # noqa: E731
        return {"interior": t(self.interior), "boundary": t(self.boundary),
                "initial": t(self.initial), "terminal": t(self.terminal)}


def make_batch(domain: BoxDomain, n_r: int, n_b: int, n_T: int, seed: int, step: int = 0,
               clock_axis: int | None = None, initial: bool = False, terminal: bool = False,
               ) -> SampleBatch:
    """Training batch for outer step ``step``; every slice drawn from its own keyed stream."""
    has_slices = domain.T is not None or clock_axis is not None
    if (initial or terminal) and not has_slices:
        raise ValueError("initial/terminal slices need a time-box or a clock axis")
    sa = domain.slice_measure(clock_axis) if has_slices else None
    T = domain.T if domain.T is not None else (
        domain.upper[clock_axis] if clock_axis is not None else 1.0)
    return SampleBatch(
        interior=sample_interior(domain, n_r, seed, ("interior", step)),
        interior_volume=domain.volume,
        boundary=sample_boundary(domain, n_b, seed, clock_axis, ("boundary", step)),
        boundary_area=domain.boundary_measure(clock_axis),
        initial=sample_slice(domain, n_b, seed, "initial", clock_axis, ("initial", step)) if initial else None,
        initial_area=sa if initial else None,
        terminal=sample_slice(domain, n_b, seed, "terminal", clock_axis, ("terminal", step)) if terminal else None,
        terminal_area=sa if terminal else None,
        grid=np.linspace(0.0, T, n_T + 1),
        seed=seed,
    )


class Cutoff:
    """phi(x) = prod_i (x_i - lo_i)(hi_i - x_i) over spatial axes; zero on the spatial boundary.

    On [0,1] each factor is x(1-x); on [-1,1] it is 1-x^2. The time column of a
    time-box is not part of the product.
    """

    def __init__(self, domain: BoxDomain):
        self.domain = domain

    def _factors(self, x):
        dom = self.domain
        cols = [x[:, dom.offset + i] for i in range(dom.d)]
        f = [(c - lo) * (hi - c) for c, lo, hi in zip(cols, dom.lower, dom.upper)]
        df = [(lo + hi) - 2.0 * c for c, lo, hi in zip(cols, dom.lower, dom.upper)]
        return f, df

    def value(self, x):
        f, _ = self._factors(x)
        out = f[0]
        for g in f[1:]:
            out = out * g
        return out

    def __call__(self, x):
        """(phi, grad phi) for numpy arrays or torch tensors of shape (N, n_coords)."""
        f, df = self._factors(x)
        n = len(f)
        prefix = [None] * (n + 1)
        suffix = [None] * (n + 1)
        one = x[:, 0] * 0.0 + 1.0
        prefix[0] = one
        suffix[n] = one
        for i in range(n):
            prefix[i + 1] = prefix[i] * f[i]
        for i in range(n - 1, -1, -1):
            suffix[i] = suffix[i + 1] * f[i]
        grads = [df[i] * prefix[i] * suffix[i + 1] for i in range(n)]
        if self.domain.T is not None:
            grads = [x[:, 0] * 0.0] + grads
        stack = torch.stack if isinstance(x, torch.Tensor) else np.stack
        return prefix[n], stack(grads, 1)


def _cumsum_total(values):
    if isinstance(values, torch.Tensor):
        return torch.cumsum(values.reshape(-1), 0)[-1]
    return np.cumsum(np.asarray(values, dtype=np.float64).reshape(-1))[-1]


def mc_integral(values, volume: float):
    """volume * mean(values), summed left to right."""
    n = values.shape[0] if hasattr(values, "shape") else len(values)
    if n == 0:
        raise ValueError("need at least one sample")
    return volume * (_cumsum_total(values) / n)


def mc_norm_sq(kind: str, values, factor: float, grads=None):
    """Monte Carlo squared norm: ``L2`` / ``L2-boundary``: int g^2; ``H1``: int |grad g|^2 + g^2;
    ``H1_0``: int |grad g|^2."""
    if kind in ("L2", "L2-domain", "L2-boundary"):
        return mc_integral(values * values, factor)
    if kind in ("H1", "H1-domain", "H1_0"):
        if grads is None:
            raise ValueError(f"{kind} norm needs gradients")
        gsq = (grads * grads).sum(1)
        return mc_integral(gsq + values * values if kind != "H1_0" else gsq, factor)
    raise ValueError(f"unknown norm kind {kind!r}")
