"""Finite-dimensional surrogates for the WAN analysis: dual norms, stabilized suprema,
inf-sup constants and quasi-best-approximation (Cea-type) bounds.

Trial and test classes are idealised as linear spans. A test space carries a
Gram matrix G; a bilinear form restricted to (trial, test) is a matrix A with
``A[i, j] = a(w_i, v_j)``. The functional ``v -> a(w, v)`` of a trial
coefficient vector ``w`` has test coefficients ``A.T @ w`` and dual norm
``sqrt(l^T G^{-1} l)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg, optimize

Fn = Callable[[np.ndarray], np.ndarray]


class SingularGram(ValueError):
    pass


class AscentFailed(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# spaces and operators


@dataclass
class Quadrature1D:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def composite(cls, n_intervals: int, order: int = 8, a: float = 0.0, b: float = 1.0):
        """Composite Gauss-Legendre on ``n_intervals`` equal cells of [a, b]."""
        x, w = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(a, b, n_intervals + 1)
        h = np.diff(edges)
        nodes = (edges[:-1, None] + 0.5 * h[:, None] * (x[None, :] + 1.0)).ravel()
        weights = (0.5 * h[:, None] * w[None, :]).ravel()
        return cls(nodes, weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(values @ self.weights)


@dataclass
class Basis1D:
    """Functions on [0,1] with values and first derivatives."""

    funcs: list[tuple[Fn, Fn]]
    name: str = "custom"

    def __len__(self):
        return len(self.funcs)

    @classmethod
    def sines(cls, n: int, start: int = 1) -> "Basis1D":
        def make(k):
            return (lambda x: np.sin(k * np.pi * x), lambda x: k * np.pi * np.cos(k * np.pi * x))
        return cls([make(k) for k in range(start, start + n)], f"sine{n}")

    @classmethod
    def hats(cls, n_interior: int) -> "Basis1D":
        """Piecewise-linear hats on the uniform mesh with ``n_interior`` interior nodes."""
        h = 1.0 / (n_interior + 1)

        def make(i):
            c = i * h
            val = lambda x: np.clip(1.0 - np.abs(x - c) / h, 0.0, None)  # noqa: E731
            der = lambda x: np.where(np.abs(x - c) < h, -np.sign(x - c) / h, 0.0)  # noqa: E731
            return val, der
        return cls([make(i) for i in range(1, n_interior + 1)], f"hat{n_interior}")

    def __add__(self, other: "Basis1D") -> "Basis1D":
        return Basis1D(self.funcs + other.funcs, f"{self.name}+{other.name}")

    def tabulate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(values, derivatives), each of shape (n_basis, n_points)."""
        return (np.array([f(x) for f, _ in self.funcs]), np.array([g(x) for _, g in self.funcs]))


def gram_matrix(basis: Basis1D, quad: Quadrature1D, norm: str = "H1_0") -> np.ndarray:
    """Gram matrix of the H1_0 seminorm (int w'v') or full H1 (int w'v' + wv)."""
    val, der = basis.tabulate(quad.nodes)
    G = (der * quad.weights) @ der.T
    if norm == "H1":
        G = G + (val * quad.weights) @ val.T
    elif norm != "H1_0":
        raise ValueError(f"unknown norm {norm!r}")
    return 0.5 * (G + G.T)


class SurrogateSpace:
    """A finite-dimensional space given by its Gram matrix (and optionally a 1-D basis)."""

    def __init__(self, gram: np.ndarray, basis: Optional[Basis1D] = None, norm: str = "H1_0"):
        G = np.asarray(gram, dtype=np.float64)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] == 0:
            raise ValueError("Gram matrix must be square and nonempty")
        if not np.allclose(G, G.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(G).max())):
            raise SingularGram("Gram matrix is not symmetric")
        try:
            self.chol = linalg.cholesky(G, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularGram(f"Gram matrix is not positive definite: {exc}") from None
        self.gram = G
        self.basis = basis
        self.norm = norm

    @classmethod
    def euclidean(cls, n: int) -> "SurrogateSpace":
        return cls(np.eye(n))

    @classmethod
    def from_basis(cls, basis: Basis1D, quad: Quadrature1D, norm: str = "H1_0") -> "SurrogateSpace":
        return cls(gram_matrix(basis, quad, norm), basis, norm)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    def norm_of(self, y: np.ndarray) -> float:
        return float(np.sqrt(max(y @ self.gram @ y, 0.0)))

    def whiten(self, ell: np.ndarray) -> np.ndarray:
        """L^{-1} ell, whose Euclidean norm is the dual norm of the functional ell."""
        return linalg.solve_triangular(self.chol, ell, lower=True)


@dataclass
class BilinearOperator:
    matrix: np.ndarray
    trial: SurrogateSpace
    test: SurrogateSpace

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (self.trial.dim, self.test.dim):
            raise ValueError(f"operator shape {self.matrix.shape} does not match spaces "
                             f"({self.trial.dim}, {self.test.dim})")

    def whitened(self) -> np.ndarray:
        """L_W^{-1} A L_V^{-T}: the operator in orthonormal coordinates."""
        left = linalg.solve_triangular(self.trial.chol, self.matrix, lower=True)
        return linalg.solve_triangular(self.test.chol, left.T, lower=True).T

    def functional(self, w: np.ndarray) -> np.ndarray:
        return self.matrix.T @ np.asarray(w, dtype=np.float64)

    def continuity(self) -> float:
        """Sharp continuity constant M on the spans."""
        return float(np.linalg.svd(self.whitened(), compute_uv=False)[0])


# ---------------------------------------------------------------------------
# dual norms and stabilized suprema


def dual_norm(ell: np.ndarray, space: SurrogateSpace) -> float:
    """sup over the span of ell(v)/||v||."""
    return float(np.linalg.norm(space.whiten(np.asarray(ell, dtype=np.float64))))


def op_norm(w: np.ndarray, op: BilinearOperator) -> float:
    return dual_norm(op.functional(w), op.test)


def _functional_value(ell, space, y, gamma_d, shifted):
    q = float(y @ space.gram @ y)
    val = float(ell @ y) - 0.5 * gamma_d * q
    if shifted:
        val += np.sqrt(max(q, 0.0))
    return val


def _ell(w_or_ell, op_or_space):
    if isinstance(op_or_space, BilinearOperator):
        return op_or_space.functional(w_or_ell), op_or_space.test
    return np.asarray(w_or_ell, dtype=np.float64), op_or_space


def stabilized_sup(w, op, gamma_d: float) -> float:
    """sup_v a(w, v) - gamma_d/2 ||v||^2, evaluated at the stationary point G y = ell / gamma_d.

    ``op`` is a :class:`BilinearOperator` (``w`` trial coefficients) or a
    :class:`SurrogateSpace` (``w`` is then the functional itself).
    """
    if not gamma_d > 0:
        raise ValueError("gamma_d must be positive")
    ell, space = _ell(w, op)
    y = np.linalg.solve(space.gram, ell) / gamma_d
    return _functional_value(ell, space, y, gamma_d, shifted=False)


def shifted_sup(w, op, gamma_d: float) -> float:
    """sup_v a(w, v) - gamma_d/2 ||v||^2 + ||v||.

    Along the maximizing direction d (unit norm, a(w, d) = c = dual norm) the
    objective is r c - gamma_d r^2 / 2 + r, maximal at r = (c + 1) / gamma_d.
    """
    if not gamma_d > 0:
        raise ValueError("gamma_d must be positive")
    ell, space = _ell(w, op)
    z = np.linalg.solve(space.gram, ell)
    c2 = float(ell @ z)
    if c2 > 0.0:
        d = z / np.sqrt(c2)
    else:  # zero functional: every unit direction is optimal
        d = np.zeros(space.dim)
        d[0] = 1.0
        d = d / space.norm_of(d)
    r = (np.sqrt(max(c2, 0.0)) + 1.0) / gamma_d
    return _functional_value(ell, space, r * d, gamma_d, shifted=True)


def ascent_sup(w, op, gamma_d: float, shifted: bool = False, start=None, tol: float = 1e-12,
               max_iter: int = 10_000) -> float:
    """Numerical maximization of the (shifted) stabilized functional; cross-check only."""
    ell, space = _ell(w, op)
    # orthonormal coordinates z = L^T y make the quadratic term isotropic
    lt = space.chol.T
    ell_z = linalg.solve_triangular(lt, ell, lower=False, trans="T")

    def neg(z):
        q = float(z @ z)
        val = float(ell_z @ z) - 0.5 * gamma_d * q + (np.sqrt(q) if shifted else 0.0)
        g = ell_z - gamma_d * z + (z / np.sqrt(q) if shifted and q > 0 else 0.0)
        return -val, -g

    z0 = np.ones(space.dim) / np.sqrt(space.dim) if start is None else lt @ np.asarray(start)
    res = optimize.minimize(neg, z0, jac=True, method="BFGS",
                            options={"gtol": tol, "maxiter": max_iter})
    gnorm = float(np.linalg.norm(neg(res.x)[1]))
    if not np.isfinite(res.fun) or gnorm > 1e-6 * max(1.0, np.linalg.norm(ell_z)):
        raise AscentFailed("gradient ascent did not converge",
                           {"message": res.message, "grad_norm": gnorm, "iterations": res.nit,
                            "value": -float(res.fun)})
    return -float(res.fun)


# ---------------------------------------------------------------------------
# inf-sup and coercivity


@dataclass
class InfSup:
    kappa: float
    rank_deficient: bool
    singular_values: np.ndarray = field(repr=False)


def infsup_probe(op: BilinearOperator, rtol: float = 1e-12) -> InfSup:
    """kappa = min over unit trial vectors of the dual norm of a(w, .)."""
    s = np.linalg.svd(op.whitened(), compute_uv=False)
    if op.trial.dim > op.test.dim:
        return InfSup(0.0, True, s)
    kappa = float(s[-1])
    if kappa <= rtol * max(float(s[0]), 1e-300):
        return InfSup(0.0, True, s)
    return InfSup(kappa, False, s)


def infsup_eigen_oracle(op: BilinearOperator) -> float:
    """kappa^2 as the smallest generalized eigenvalue of (A G_V^{-1} A^T, G_W)."""
    S = op.matrix @ np.linalg.solve(op.test.gram, op.matrix.T)
    S = 0.5 * (S + S.T)
    lam = linalg.eigh(S, op.trial.gram, eigvals_only=True)
    return float(np.sqrt(max(lam[0], 0.0)))


def coercivity(matrix_same_space: np.ndarray, space: SurrogateSpace) -> float:
    """Largest alpha with alpha ||w||^2 <= a(w, w) on the span (may be <= 0)."""
    sym = 0.5 * (matrix_same_space + matrix_same_space.T)
    return float(linalg.eigh(sym, space.gram, eigvals_only=True)[0])


# ---------------------------------------------------------------------------
# 1-D model problems and the Cea-type experiment


@dataclass
class Problem1D:
    """a(w, v) = int k w'v' + b w'v + c w v on (0,1) with homogeneous Dirichlet data."""

    u: Fn
    du: Fn
    k: Fn = lambda x: np.ones_like(x)  # noqa: E731
    b: Fn = lambda x: np.zeros_like(x)  # noqa: E731
    c: Fn = lambda x: np.zeros_like(x)  # noqa: E731

    def form(self, quad, wv, wd, vv, vd) -> np.ndarray:
        x, q = quad.nodes, quad.weights
        k, b, c = self.k(x), self.b(x), self.c(x)
        return ((wd * (k * q)) @ vd.T + (wd * (b * q)) @ vv.T + (wv * (c * q)) @ vv.T)

    def operator(self, trial: Basis1D, test: Basis1D, quad: Quadrature1D, norm="H1_0"
                 ) -> BilinearOperator:
        wv, wd = trial.tabulate(quad.nodes)
        vv, vd = test.tabulate(quad.nodes)
        return BilinearOperator(self.form(quad, wv, wd, vv, vd),
                                SurrogateSpace.from_basis(trial, quad, norm),
                                SurrogateSpace.from_basis(test, quad, norm))

    def exact_row(self, test: Basis1D, quad: Quadrature1D) -> np.ndarray:
        x = quad.nodes
        vv, vd = test.tabulate(x)
        return self.form(quad, self.u(x)[None, :], self.du(x)[None, :], vv, vd)[0]


def _orthonormal_span(G: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Matrix T with T^T G T = I spanning the numerically nonsingular part of G."""
    lam, Q = linalg.eigh(0.5 * (G + G.T))
    keep = lam > rtol * lam[-1]
    return Q[:, keep] / np.sqrt(lam[keep])


@dataclass
class CeaResult:
    error: float
    best_error: float
    ratio: float
    bound: float
    coercive: bool
    M: float
    alpha: float
    kappa: float
    coefficients: np.ndarray = field(repr=False)

    @property
    def holds(self) -> bool:
        return self.ratio <= self.bound * (1.0 + 1e-10)


def cea_experiment(problem: Problem1D, trial: Basis1D, test: Basis1D,
                   quad: Optional[Quadrature1D] = None, norm: str = "H1_0") -> CeaResult:
    """Minimize the discrete residual dual norm over the trial span and compare with the best
    approximation; the test span should contain the trial span.

    Constants: alpha is the coercivity constant on the trial span, M the continuity
    constant of a on span(trial, u) x test. Without coercivity the bound uses
    the inf-sup constant kappa with R = A^T, for which alpha* = kappa and M* = M.
    """
    quad = quad or Quadrature1D.composite(840, 6)
    x, q = quad.nodes, quad.weights
    op = problem.operator(trial, test, quad, norm)
    ell_u = problem.exact_row(test, quad)
    # min_c || L_V^{-1} (ell_u - A^T c) ||
    Lw = op.test.whiten(op.matrix.T)
    rhs = op.test.whiten(ell_u)
    coef, *_ = np.linalg.lstsq(Lw, rhs, rcond=None)

    wv, wd = trial.tabulate(x)
    uv, ud = problem.u(x), problem.du(x)

    def w_norm(val, der):
        s = der * der + (val * val if norm == "H1" else 0.0)
        return float(np.sqrt(max(quad.integrate(s), 0.0)))

    err = w_norm(uv - coef @ wv, ud - coef @ wd)
    # best approximation: W-orthogonal projection of u onto the trial span
    Gw = op.trial.gram
    proj_rhs = (wd * q) @ ud + ((wv * q) @ uv if norm == "H1" else 0.0)
    pc = np.linalg.solve(Gw, proj_rhs)
    best = w_norm(uv - pc @ wv, ud - pc @ wd)

    # continuity on span(trial, u) x test
    amb = trial + Basis1D([(problem.u, problem.du)], "u")
    av, ad_ = amb.tabulate(x)
    Ga = gram_matrix(amb, quad, norm)
    Aa = problem.form(quad, av, ad_, *test.tabulate(x))
    T = _orthonormal_span(Ga)
    Aw = linalg.solve_triangular(op.test.chol, (T.T @ Aa).T, lower=True).T
    M = float(np.linalg.svd(Aw, compute_uv=False)[0])

    alpha = coercivity(problem.form(quad, wv, wd, wv, wd), op.trial)
    kappa = infsup_probe(op).kappa
    coercive = alpha > 0
    if coercive:
        bound = 1.0 + 2.0 * M / alpha
    elif kappa > 0:
        bound = 1.0 + 2.0 * (M / kappa) * (M / kappa)
    else:
        bound = np.inf
    ratio = err / best if best > 0 else (1.0 if err <= 1e-12 else np.inf)
    return CeaResult(err, best, ratio, bound, coercive, M, alpha, kappa, coef)


# ---------------------------------------------------------------------------
# random instances and the verification suite


def random_instance(rng: np.random.Generator, n_trial: int | None = None, n_test: int | None = None):
    """Random trial/test Gram matrices, operator and trial vector."""
    n_test = n_test or int(rng.integers(2, 9))
    n_trial = n_trial or int(rng.integers(1, n_test + 1))

    def spd(n):
        B = rng.standard_normal((n, n))
        return B @ B.T + n * 0.1 * np.eye(n)

    op = BilinearOperator(rng.standard_normal((n_trial, n_test)),
                          SurrogateSpace(spd(n_trial)), SurrogateSpace(spd(n_test)))
    return op, rng.standard_normal(n_trial)


def random_problem(rng: np.random.Generator) -> Problem1D:
    """Coercive 1-D problem with a smooth exact solution vanishing at both ends."""
    k0, k1 = 1.0 + rng.uniform(0, 1), rng.uniform(-0.5, 0.5)
    bb = rng.uniform(-2, 2)
    c0 = rng.uniform(0, 3)
    p, s = rng.uniform(-1, 1), rng.uniform(1, 4)
    u = lambda x: x * (1 - x) * (1 + p * np.sin(s * x))  # noqa: E731
    du = lambda x: (1 - 2 * x) * (1 + p * np.sin(s * x)) + x * (1 - x) * p * s * np.cos(s * x)  # noqa: E731
    return Problem1D(u=u, du=du,
                     k=lambda x: k0 + k1 * np.sin(np.pi * x),
                     b=lambda x: np.full_like(x, bb),
                     c=lambda x: np.full_like(x, c0))


@dataclass
class Check:
    name: str
    expected: str
    observed: str
    passed: bool

    def __post_init__(self):
        self.passed = bool(self.passed)


def run_verification(seed: int = 0, n_draws: int = 100) -> list[Check]:
    """The fixed battery of closed-form and bound checks; every row carries expected/observed values."""
    rng = np.random.default_rng(np.random.Philox(seed))
    rows: list[Check] = []

    e2 = SurrogateSpace.euclidean(2)
    c = np.array([3.0, 4.0])
    for name, got, want in [
        ("dual_norm_c34", dual_norm(c, e2), 5.0),
        ("stabilized_c34_g1", stabilized_sup(c, e2, 1.0), 12.5),
        ("stabilized_c34_g0.5", stabilized_sup(c, e2, 0.5), 25.0),
        ("shifted_c34_g1", shifted_sup(c, e2, 1.0), 18.0),
        ("shifted_zero_g2", shifted_sup(np.zeros(2), e2, 2.0), 0.25),
    ]:
        rows.append(Check(name, f"{want:.12g}", f"{got:.12g}", abs(got - want) <= 1e-9 * max(1, want)))

    worst4 = worst5 = 0.0
    for _ in range(n_draws):
        op, w = random_instance(rng)
        g = float(rng.uniform(0.1, 10.0))
        nrm = op_norm(w, op)
        scale = max(1.0, nrm ** 2)
        worst4 = max(worst4, abs(stabilized_sup(w, op, g) - nrm ** 2 / (2 * g)) / scale)
        worst5 = max(worst5, abs(shifted_sup(w, op, g) - (nrm + 1) ** 2 / (2 * g)) / scale)
    rows.append(Check("stabilized_equals_opnorm_sq", "<= 1e-6", f"{worst4:.3e}", worst4 <= 1e-6))
    rows.append(Check("shifted_equals_opnorm_plus1_sq", "<= 1e-6", f"{worst5:.3e}", worst5 <= 1e-6))

    worst_asc = 0.0
    for _ in range(10):
        op, w = random_instance(rng)
        g = float(rng.uniform(0.1, 10.0))
        for shifted, fn in ((False, stabilized_sup), (True, shifted_sup)):
            ref = fn(w, op, g)
            worst_asc = max(worst_asc, abs(ascent_sup(w, op, g, shifted) - ref) / max(1.0, abs(ref)))
    rows.append(Check("ascent_cross_check", "<= 1e-6", f"{worst_asc:.3e}", worst_asc <= 1e-6))

    quad = Quadrature1D.composite(560, 6)
    pois = Problem1D(u=lambda x: x * (1 - x) / 2, du=lambda x: 0.5 - x)
    op = pois.operator(Basis1D.hats(3), Basis1D.hats(6), quad)
    k_probe, k_oracle = infsup_probe(op).kappa, infsup_eigen_oracle(op)
    rows.append(Check("infsup_vs_eigen_oracle", f"{k_oracle:.12g}", f"{k_probe:.12g}",
                      abs(k_probe - k_oracle) <= 1e-8))
    ident = BilinearOperator(np.eye(3), SurrogateSpace.euclidean(3), SurrogateSpace.euclidean(3))
    rows.append(Check("infsup_identity", "1", f"{infsup_probe(ident).kappa:.12g}",
                      abs(infsup_probe(ident).kappa - 1.0) <= 1e-12))

    worst_ratio, worst_gap = 0.0, np.inf
    for i in range(20):
        prob = random_problem(rng)
        nt = 1 + i % 4
        res = cea_experiment(prob, Basis1D.sines(nt), Basis1D.sines(nt + 3 + i % 3), quad)
        worst_ratio = max(worst_ratio, res.ratio / res.bound)
        opi = prob.operator(Basis1D.sines(nt), Basis1D.sines(nt + 3), quad)
        worst_gap = min(worst_gap, infsup_probe(opi).kappa - res.alpha)
    rows.append(Check("cea_ratio_within_bound", "ratio/bound <= 1", f"{worst_ratio:.6f}",
                      worst_ratio <= 1.0 + 1e-10))
    rows.append(Check("kappa_at_least_alpha", "kappa - alpha >= 0", f"{worst_gap:.3e}",
                      worst_gap >= -1e-10))
    return rows
