"""One test per acceptance criterion; each records a PASS/FAIL line shown in the summary."""
import json
import os
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_LINES
from cutwan import cli
from cutwan import losses as L
from cutwan import networks as nw
from cutwan import theory_lab as tl
from cutwan.experiments import PRESET_IDS, build_preset
from cutwan.geometry import Cutoff, make_batch, sample_interior
from cutwan.trainer import config_for, train


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# property-based


def _sup_protocol(fn, target):
    rng = np.random.default_rng(np.random.Philox(2024))
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        op, w = tl.random_instance(rng)
        g = float(rng.uniform(0.1, 10.0))
        nrm = tl.op_norm(w, op)
        worst = max(worst, abs(fn(w, op, g) - target(nrm, g)) / max(1.0, nrm ** 2))
    return worst, time.perf_counter() - t0


def test_criterion_1_stabilized_sup():
    worst, secs = _sup_protocol(tl.stabilized_sup, lambda n, g: n * n / (2 * g))
    report(1, worst <= 1e-6 and secs < 5, f"worst scaled gap {worst:.2e} (<= 1e-6), {secs:.2f} s (< 5)")


def test_criterion_2_shifted_sup():
    worst, secs = _sup_protocol(tl.shifted_sup, lambda n, g: (n + 1) ** 2 / (2 * g))
    report(2, worst <= 1e-6 and secs < 5, f"worst scaled gap {worst:.2e} (<= 1e-6), {secs:.2f} s (< 5)")


def test_criterion_3_cea_bound():
    t0 = time.perf_counter()
    quad = tl.Quadrature1D.composite(400, 6)
    rng = np.random.default_rng(np.random.Philox(3))
    worst, n_coercive = 0.0, 0
    for i in range(24):
        res = tl.cea_experiment(tl.random_problem(rng), tl.Basis1D.sines(1 + i % 4),
                                tl.Basis1D.sines(4 + i % 4 + i % 3), quad)
        n_coercive += res.coercive
        worst = max(worst, res.ratio / (1 + 2 * res.M / res.alpha))
    secs = time.perf_counter() - t0
    ok = n_coercive >= 20 and worst <= 1.0 and secs < 10
    report(3, ok, f"{n_coercive} coercive instances, max ratio/(1+2M/alpha) = {worst:.4f}, {secs:.2f} s")


def test_criterion_4_infsup():
    t0 = time.perf_counter()
    quad = tl.Quadrature1D.composite(300, 6)
    rng = np.random.default_rng(np.random.Philox(4))
    gap, worst_oracle = np.inf, 0.0
    for i in range(10):
        prob = tl.random_problem(rng)
        nt = 1 + i % 4
        trial, test = tl.Basis1D.sines(nt), tl.Basis1D.sines(nt + 2 + i % 3)
        op = prob.operator(trial, test, quad)
        wv, wd = trial.tabulate(quad.nodes)
        alpha = tl.coercivity(prob.form(quad, wv, wd, wv, wd), op.trial)
        kappa = tl.infsup_probe(op).kappa
        assert alpha > 0
        gap = min(gap, kappa - alpha)
        worst_oracle = max(worst_oracle, abs(kappa - tl.infsup_eigen_oracle(op)))
        # random operators between unrelated spaces exercise the oracle beyond Galerkin pairs
        rop, _ = tl.random_instance(rng, n_trial=nt, n_test=nt + 3)
        worst_oracle = max(worst_oracle, abs(tl.infsup_probe(rop).kappa - tl.infsup_eigen_oracle(rop)))
    secs = time.perf_counter() - t0
    ok = gap >= -1e-12 and worst_oracle <= 1e-8 and secs < 10
    report(4, ok, f"min(kappa - alpha) = {gap:.3e}, oracle gap {worst_oracle:.2e} (<= 1e-8), {secs:.2f} s")


class _ReluPatterns:
    """Records the sign pattern of every ReLU input during one loss evaluation."""

    def __init__(self):
        self.current = []

    def __call__(self, z):
        self.current.append((z > 0).detach().clone())
        return torch.relu(z)

    def take(self):
        out, self.current = self.current, []
        return out


def _fd_check(loss_fn, params, rng, relu, n_coords=20, h=1e-4):
    """Worst relative gap between autograd and a five-point central difference, over
    ``n_coords`` random coordinates whose stencil crosses no ReLU kink."""
    flat = [(i, j) for i, p in enumerate(params) for j in range(p.numel())]
    order = rng.permutation(len(flat))
    relu.take()
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    base = relu.take()
    worst, used, kinked = 0.0, 0, 0
    for k in order:
        if used == n_coords:
            break
        i, j = flat[k]
        p = params[i].data.view(-1)
        old = p[j].item()
        vals, smooth = [], True
        # the loss itself differentiates in x, so it must run with autograd enabled
        for m in (2, 1, -1, -2):
            p[j] = old + m * h
            vals.append(loss_fn().item())
            pat = relu.take()
            smooth = smooth and all(torch.equal(a, b) for a, b in zip(pat, base))
        p[j] = old
        if not smooth:
            kinked += 1
            continue
        used += 1
        fd = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        ad = 0.0 if grads[i] is None else grads[i].view(-1)[j].item()
        # rounding in the stencil: 18 loss values of relative error eps over 12 h
        noise = 1.5 * np.finfo(np.float64).eps * max(abs(x) for x in vals) / h
        gap = max(abs(ad - fd) - noise, 0.0)
        worst = max(worst, gap / max(abs(ad), abs(fd), 1e-300) if gap > 0 else 0.0)
    assert used == min(n_coords, len(flat))
    return worst, kinked


def test_criterion_5_gradients(monkeypatch):
    t0 = time.perf_counter()
    relu = _ReluPatterns()
    monkeypatch.setitem(nw.ACTIVATIONS, "relu", (relu, nw.ACTIVATIONS["relu"][1]))
    rng = np.random.default_rng(5)
    p = build_preset("ex1", d=2)
    batch = make_batch(p.domain, 200, 100, 6, seed=0, initial=True)
    cut = Cutoff(p.domain)

    def h(x):
        return p.exact(torch.cat([torch.zeros(x.shape[0], 1, dtype=x.dtype), x], 1))
    cases = []
    for model in ("xnode", "xnode-recursive", "dnn"):
        u = nw.build_trial(model, 3, 3, 8, 6, 6, initial_datum=h, seed=1)
        v = nw.build_test(3, 2, 10, seed=2)
        for kind in ("wan", "cwan", "scwan"):
            cases.append((model, kind, u, v))
        if model == "dnn":
            cases.append((model, "pinn", u, None))
    worst, largest, kinked = 0.0, 0, 0
    rows = []
    for model, kind, u, v in cases:
        spec = L.LossSpec(kind, alpha=3.0, beta=2.0, gamma=0.0, gamma_d=0.5)
        largest = max(largest, u.param_count(), 0 if v is None else v.param_count())

        def f():
            return L.evaluate_loss(spec, u, v, cut, batch, p.pde)
        e, k = _fd_check(f, list(u.parameters()), rng, relu)
        if v is not None:
            e2, k2 = _fd_check(f, list(v.parameters()), rng, relu)
            e, k = max(e, e2), k + k2
        rows.append(f"{model}/{kind}:{e:.1e}")
        worst, kinked = max(worst, e), kinked + k
    secs = time.perf_counter() - t0
    ok = worst <= 1e-5 and largest <= 500 and secs < 60
    report(5, ok, f"worst relative FD gap {worst:.2e} (<= 1e-5), largest net {largest} params, "
                  f"{kinked} kink-straddling coordinates redrawn, {secs:.1f} s; " + " ".join(rows))


def test_criterion_6_parameter_counts():
    got = (nw.param_count(nw.XnodeArch.from_hyper(5, 20, 10, 8, recursive=False)),
           nw.param_count(nw.XnodeArch.from_hyper(5, 20, 10, 8, recursive=True)),
           nw.build_test(6, 9, 50).param_count())
    report(6, got == (2161, 1501, 23351), f"counts {got} vs (2161, 1501, 23351)")


def test_criterion_7_manufactured_residuals():
    worst = {}
    for pid in PRESET_IDS:
        for d in (2, None):
            pr = build_preset(pid, d)
            pts = sample_interior(pr.domain, 1000, seed=7, key="acceptance")
            r = L.strong_residual(pr.exact, pts, pr.pde).detach().numpy()
            worst[f"{pid}/d={pr.d}"] = float(np.max(np.abs(r)))
    m = max(worst.values())
    report(7, m < 1e-10, f"max |residual| {m:.2e} (< 1e-10) over {sorted(worst)}")


def test_criterion_8_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUT_ROOT_ENV, raising=False)
    cfg = config_for("ex1", d=2, N_r=200, N_b=100, N_max=5, epsilon=1e-9).to_dict()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    for name in ("a", "b"):
        cli.main(["run", str(path), "--out", str(tmp_path / name)])
    a = (tmp_path / "a" / "history.csv").read_bytes()
    b = (tmp_path / "b" / "history.csv").read_bytes()
    report(8, a == b and a.count(b"\n") == 6, f"history.csv identical: {a == b} ({len(a)} bytes)")


# ---------------------------------------------------------------------------
# statistical, desk scale

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def desk_runs():
    """ex1, d=2, N_r=N_b=1000, tabulated settings otherwise; the tolerance is set below reach
    so that every run spans the full 300 steps and both criteria read the same histories."""
    out = {}
    for seed in SEEDS:
        for loss in ("cwan", "wan"):
            cfg = config_for("ex1", d=2, N_r=1000, N_b=1000, N_max=300, seed=seed, loss=loss,
                             epsilon=1e-12)
            out[loss, seed] = train(cfg).rel_errors()
    return out


@pytest.mark.slow
def test_criterion_9_desk_scale_convergence(desk_runs):
    hits = []
    for seed in SEEDS:
        e = desk_runs["cwan", seed][:300]
        below = np.flatnonzero(e < 0.05)
        hits.append(int(below[0]) + 1 if below.size else None)
    n = sum(h is not None for h in hits)
    report(9, n >= 2, f"first step below 5% per seed {hits}; {n}/3 seeds (need >= 2)")


@pytest.mark.slow
def test_criterion_10_cwan_is_steadier_than_wan(desk_runs):
    def jitter(e):
        return float(np.std(np.diff(np.log(e[99:300]))))
    pairs = [(jitter(desk_runs["cwan", s]), jitter(desk_runs["wan", s])) for s in SEEDS]
    wins = sum(c < w for c, w in pairs)
    detail = ", ".join(f"seed {s}: cwan {c:.4f} vs wan {w:.4f}" for s, (c, w) in zip(SEEDS, pairs))
    report(10, wins >= 2, f"std of step-to-step log error change, steps 100-300: {detail}; "
                          f"{wins}/3 (need >= 2)")


@pytest.mark.fullscale
@pytest.mark.skipif(os.environ.get("CUTWAN_FULL_SCALE") != "1",
                    reason="full-scale run takes hours; set CUTWAN_FULL_SCALE=1")
def test_criterion_11_full_scale():
    h = train(config_for("ex1"))
    e = h.rel_errors()
    ok = h.stop_reason == "tolerance-met" and h.steps <= 300
    report(11, ok, f"{h.stop_reason} after {h.steps} steps, final error {e[-1]:.4g}, "
                   f"{h.wall_seconds / max(h.steps, 1):.1f} s/step")
