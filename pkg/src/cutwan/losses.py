"""Weak-form pairings and the PINN, WAN, CutWAN and shifted CutWAN loss functionals.

Everything is batched torch float64. Networks (or analytic callables) map an
(N, n_coords) tensor to an (N,) tensor; spatial derivatives come from torch
autograd with ``create_graph=True`` so that parameter gradients of the loss
see through them.

Generic PDE (time term only on time-boxes)::

    d_t u - div(A grad u) + b . grad u + c(u, x) u + q(grad u) = f

The weak pairing integrates the diffusion term by parts once against the
cutoff-weighted test function ``phi v``, which vanishes on the spatial boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

from .geometry import BoxDomain, Cutoff, SampleBatch, mc_integral, mc_norm_sq

Field = Callable[[torch.Tensor], torch.Tensor]

LOSS_KINDS = ("pinn", "wan", "cwan", "scwan")
DEGENERATE_NORM = 1e-12


class DegenerateTestFunction(ValueError):
    """The cutoff-weighted test function has (numerically) zero L2 norm."""


@dataclass
class PdeSpec:
    """Coefficients of the generic PDE on a box domain.

    ``diffusion`` returns either (N,) (isotropic a(x)) or (N, d, d); ``None`` means identity.
    ``reaction(u, X)`` returns c(u, x); ``gradient_term(grad_u, X)`` returns q.
    ``initial`` and ``boundary`` are evaluated on full point rows.
    """

    kind: str
    domain: BoxDomain
    source: Field
    boundary: Field
    initial: Optional[Field] = None
    diffusion: Optional[Field] = None
    drift: Optional[Field] = None
    reaction: Optional[Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = None
    gradient_term: Optional[Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("parabolic", "poisson", "nonlinear-gradient"):
            raise ValueError(f"unknown pde kind {self.kind!r}")
        if self.kind == "parabolic" and self.domain.T is None:
            raise ValueError("a parabolic problem needs a time-box domain")


@dataclass
class LossSpec:
    kind: str
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    gamma_d: float = 1.0
    include_terminal: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.kind in ("cwan", "scwan") and not self.gamma_d > 0:
            raise ValueError("gamma_d must be positive for cwan/scwan")


def _tensor(a) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(torch.float64)
    return torch.as_tensor(a, dtype=torch.float64)


def value_and_grad(net: Field, X: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """net(X) and its gradient w.r.t. every coordinate column, kept differentiable."""
    u = net(X)
    if not u.requires_grad:
        return u, torch.zeros_like(X)
    (g,) = torch.autograd.grad(u.sum(), X, create_graph=True, allow_unused=True)
    return u, (torch.zeros_like(X) if g is None else g)


def _flux(pde: PdeSpec, X: torch.Tensor, grad_x: torch.Tensor) -> torch.Tensor:
    if pde.diffusion is None:
        return grad_x
    A = pde.diffusion(X)
    if A.dim() == 1:
        return A.unsqueeze(1) * grad_x
    return torch.einsum("nij,nj->ni", A, grad_x)


def _lower_order(pde: PdeSpec, X, u, grad_u) -> torch.Tensor:
    """Terms of the operator that carry no derivative of the test function, minus f."""
    off = pde.domain.offset
    gx = grad_u[:, off:]
    r = -pde.source(X)
    if off:
        r = r + grad_u[:, 0]
    if pde.drift is not None:
        r = r + (pde.drift(X) * gx).sum(1)
    if pde.reaction is not None:
        r = r + pde.reaction(u, X) * u
    if pde.gradient_term is not None:
        r = r + pde.gradient_term(gx, X)
    return r


@dataclass
class WeakTerms:
    pairing: torch.Tensor
    l2_sq: torch.Tensor
    h1_sq: torch.Tensor
    h10_sq: torch.Tensor


def weak_terms(u_net: Field, v_net: Field, cutoff: Cutoff, points, volume: float,
               pde: PdeSpec) -> WeakTerms:
    """Pairing (A(u) - f, phi v) and the L2 / H1 / H1_0 squared norms of phi v."""
    if cutoff.domain != pde.domain:
        raise ValueError("cutoff and pde live on different domains")
    X = _tensor(points).detach().clone().requires_grad_(True)
    if X.shape[1] != pde.domain.n_coords:
        raise ValueError(f"batch has {X.shape[1]} columns, domain needs {pde.domain.n_coords}")
    off = pde.domain.offset
    u, gu = value_and_grad(u_net, X)
    v, gv = value_and_grad(v_net, X)
    phi, gphi = cutoff(X.detach())
    w = phi * v
    gw = (phi.unsqueeze(1) * gv + v.unsqueeze(1) * gphi)[:, off:]
    integrand = (_flux(pde, X, gu[:, off:]) * gw).sum(1) + _lower_order(pde, X, u, gu) * w
    return WeakTerms(
        pairing=mc_integral(integrand, volume),
        l2_sq=mc_norm_sq("L2", w, volume),
        h1_sq=mc_norm_sq("H1", w, volume, gw),
        h10_sq=mc_norm_sq("H1_0", w, volume, gw),
    )


def weak_pairing(u_net, v_net, cutoff, batch: SampleBatch, pde: PdeSpec) -> torch.Tensor:
    return weak_terms(u_net, v_net, cutoff, batch.interior, batch.interior_volume, pde).pairing


def _sq_misfit(u_net, pts, area, data: Field) -> torch.Tensor:
    X = _tensor(pts)
    r = u_net(X) - data(X)
    return mc_norm_sq("L2-boundary", r, area)


@dataclass
class BoundaryTerms:
    """Squared misfits; ``None`` where the slice was not requested."""

    init_sq: Optional[torch.Tensor] = None
    bdry_sq: Optional[torch.Tensor] = None
    last_sq: Optional[torch.Tensor] = None

    @staticmethod
    def root(sq):
        return None if sq is None else torch.sqrt(sq)


def boundary_terms_sq(u_net, batch: SampleBatch, pde: PdeSpec, which=("init", "bdry", "last")
                      ) -> BoundaryTerms:
    out = BoundaryTerms()
    if "init" in which:
        if batch.initial is None:
            raise ValueError("batch has no initial slice")
        data = pde.initial if pde.initial is not None else pde.boundary
        out.init_sq = _sq_misfit(u_net, batch.initial, batch.initial_area, data)
    if "bdry" in which:
        if batch.boundary is None:
            raise ValueError("batch has no boundary points")
        out.bdry_sq = _sq_misfit(u_net, batch.boundary, batch.boundary_area, pde.boundary)
    if "last" in which:
        if batch.terminal is None:
            raise ValueError("batch has no terminal slice")
        out.last_sq = _sq_misfit(u_net, batch.terminal, batch.terminal_area, pde.boundary)
    return out


def loss_boundary_terms(u_net, batch, pde, which=("init", "bdry", "last")):
    """(L_init, L_bdry, L_last): unsquared Monte Carlo L2 misfits; ``None`` if not requested."""
    b = boundary_terms_sq(u_net, batch, pde, which)
    return BoundaryTerms.root(b.init_sq), BoundaryTerms.root(b.bdry_sq), BoundaryTerms.root(b.last_sq)


def _penalties(spec: LossSpec, batch: SampleBatch, u_net, pde) -> BoundaryTerms:
    which = ["bdry"]
    if spec.alpha and batch.initial is not None:
        which.append("init")
    elif spec.alpha and pde.domain.T is not None:
        raise ValueError("batch has no initial slice")
    if spec.include_terminal:
        which.append("last")
    return boundary_terms_sq(u_net, batch, pde, tuple(which))


def _add_penalties(loss, spec: LossSpec, b: BoundaryTerms, squared: bool):
    def term(weight, sq):
        if sq is None or not weight:
            return 0.0
        return weight * (sq if squared else torch.sqrt(sq))

    return loss + term(spec.alpha, b.init_sq) + term(spec.beta, b.bdry_sq)


def wan_log_term(terms: WeakTerms) -> torch.Tensor:
    if terms.l2_sq.item() < DEGENERATE_NORM:
        raise DegenerateTestFunction(
            f"degenerate test function: ||phi v||^2 = {terms.l2_sq.item():.3e} < {DEGENERATE_NORM:g}")
    return torch.log(terms.pairing ** 2) - torch.log(terms.l2_sq)


def loss_wan(u_net, v_net, cutoff, batch, pde, spec: LossSpec) -> torch.Tensor:
    """log(pairing^2 / ||phi v||^2) + alpha L_init^2 + beta L_bdry^2 (+ gamma L_last, unsquared)."""
    t = weak_terms(u_net, v_net, cutoff, batch.interior, batch.interior_volume, pde)
    b = _penalties(spec, batch, u_net, pde)
    loss = _add_penalties(wan_log_term(t), spec, b, squared=True)
    if spec.include_terminal and spec.gamma:
        loss = loss + spec.gamma * torch.sqrt(b.last_sq)
    return loss


def _cwan_core(t: WeakTerms, spec: LossSpec) -> torch.Tensor:
    return torch.abs(t.pairing) - spec.gamma_d * t.h1_sq


def loss_cwan(u_net, v_net, cutoff, batch, pde, spec: LossSpec) -> torch.Tensor:
    """|pairing| - gamma_d ||phi v||_H1^2 + alpha L_init^2 + beta L_bdry^2 (+ gamma L_last^2)."""
    t = weak_terms(u_net, v_net, cutoff, batch.interior, batch.interior_volume, pde)
    b = _penalties(spec, batch, u_net, pde)
    loss = _add_penalties(_cwan_core(t, spec), spec, b, squared=True)
    if spec.include_terminal and spec.gamma:
        loss = loss + spec.gamma * b.last_sq
    return loss


def loss_scwan(u_net, v_net, cutoff, batch, pde, spec: LossSpec) -> torch.Tensor:
    """loss_cwan + ||phi v||_{H1_0} (gradient seminorm, unsquared)."""
    t = weak_terms(u_net, v_net, cutoff, batch.interior, batch.interior_volume, pde)
    b = _penalties(spec, batch, u_net, pde)
    loss = _add_penalties(_cwan_core(t, spec) + torch.sqrt(t.h10_sq), spec, b, squared=True)
    if spec.include_terminal and spec.gamma:
        loss = loss + spec.gamma * b.last_sq
    return loss


def _reject_for_pinn(u_net):
    from .networks import Dnn, PseudoTimeXnode

    if isinstance(u_net, PseudoTimeXnode):
        raise ValueError("PINN loss needs second derivatives in every coordinate; the pseudo-time "
                         "clock is piecewise linear, so d^2u/dx_1^2 vanishes almost everywhere")
    if isinstance(u_net, Dnn) and all(a in ("relu", "identity") for a in u_net.arch.activations):
        raise ValueError("PINN loss with a piecewise-linear (ReLU) network: the Laplacian is "
                         "identically zero almost everywhere")


def strong_residual(u_net, points, pde: PdeSpec) -> torch.Tensor:
    """d_t u - div(A grad u) + b.grad u + c u + q - f at each point."""
    X = _tensor(points).detach().clone().requires_grad_(True)
    off = pde.domain.offset
    u, gu = value_and_grad(u_net, X)
    flux = _flux(pde, X, gu[:, off:])
    div = torch.zeros_like(u)
    if not flux.requires_grad:  # u (and a) independent of the coordinates
        return _lower_order(pde, X, u, gu)
    for i in range(pde.domain.d):
        (gi,) = torch.autograd.grad(flux[:, i].sum(), X, create_graph=True, allow_unused=True)
        if gi is not None:
            div = div + gi[:, off + i]
    return _lower_order(pde, X, u, gu) - div


def loss_pinn(u_net, batch, pde, spec: LossSpec) -> torch.Tensor:
    """||strong residual||_L2 + alpha L_init + beta L_bdry (all unsquared)."""
    _reject_for_pinn(u_net)
    r = strong_residual(u_net, batch.interior, pde)
    loss = torch.sqrt(mc_norm_sq("L2", r, batch.interior_volume))
    b = _penalties(spec, batch, u_net, pde)
    loss = _add_penalties(loss, spec, b, squared=False)
    if spec.include_terminal and spec.gamma:
        loss = loss + spec.gamma * torch.sqrt(b.last_sq)
    return loss


def evaluate_loss(spec: LossSpec, u_net, v_net, cutoff, batch, pde) -> torch.Tensor:
    if spec.kind == "pinn":
        return loss_pinn(u_net, batch, pde, spec)
    fn = {"wan": loss_wan, "cwan": loss_cwan, "scwan": loss_scwan}[spec.kind]
    return fn(u_net, v_net, cutoff, batch, pde, spec)
