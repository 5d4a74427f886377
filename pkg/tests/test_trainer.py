import math

import numpy as np
import pytest
import torch

from cutwan.trainer import (Adam, ConfigError, TrainConfig, build_problem, config_for,
                            relative_error, train)

SMALL = {"d": 2, "N_r": 64, "N_b": 32, "n_T": 4, "u_layers": 3, "u_hid-dim1": 6,
         "u_hid-dim2": 4, "v_layers": 2, "v_hid-dim": 8, "N_max": 3}


def _small(preset="ex1", **kw):
    return config_for(preset, **{**SMALL, **kw})


def test_adam_first_step_moves_by_lr():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64))
    opt = Adam([p], lr=0.1)
    assert opt.step([torch.tensor([0.5, -4.0, 1e-3], dtype=torch.float64)])
    # after bias correction m/sqrt(v) = sign(g) up to eps
    assert torch.allclose(p.detach(), torch.tensor([0.9, -1.9, 2.9], dtype=torch.float64), atol=1e-5)


def test_adam_second_step_matches_hand_algebra():
    b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
    g1, g2 = 2.0, -1.0
    p = torch.nn.Parameter(torch.tensor([0.0], dtype=torch.float64))
    opt = Adam([p], lr)
    opt.step([torch.tensor([g1], dtype=torch.float64)])
    opt.step([torch.tensor([g2], dtype=torch.float64)])
    x = 0.0
    m = v = 0.0
    for t, g in ((1, g1), (2, g2)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert p.item() == pytest.approx(x, rel=1e-14)


def test_adam_ascent_mirrors_descent():
    a = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
    b = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
    da, db = Adam([a], 0.05), Adam([b], 0.05, ascent=True)
    gen = torch.Generator().manual_seed(0)
    for _ in range(5):
        g = torch.randn(3, dtype=torch.float64, generator=gen)
        da.step([g])
        db.step([g])
    assert torch.equal(a.detach(), -b.detach())


def test_adam_zero_and_nonfinite_gradients():
    p = torch.nn.Parameter(torch.tensor([1.0, 2.0], dtype=torch.float64))
    opt = Adam([p], 0.1)
    assert opt.step([None])
    assert torch.equal(p.detach(), torch.tensor([1.0, 2.0], dtype=torch.float64))
    assert not opt.step([torch.tensor([math.nan, 0.0], dtype=torch.float64)])
    assert opt.t == 1 and opt.skipped == [{"step": 2, "params": [0]}]
    assert torch.equal(p.detach(), torch.tensor([1.0, 2.0], dtype=torch.float64))


def test_relative_error_examples():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert relative_error([2.0], [1.0]) == 1.0
    # squared ratio, no square root
    assert relative_error([1.5, 0.0], [1.0, 0.0]) == 0.25
    with pytest.raises(ValueError):
        relative_error([1.0], [0.0])


def test_config_round_trip_and_errors():
    cfg = _small()
    raw = cfg.to_dict()
    assert raw["u_hid-dim1"] == 6 and "u_hid1" not in raw
    assert TrainConfig.from_dict(raw) == cfg
    with pytest.raises(ConfigError) as e:
        TrainConfig.from_dict({**raw, "learning_rate": 0.1})
    assert e.value.field == "learning_rate"
    missing = dict(raw)
    del missing["N_r"]
    with pytest.raises(ConfigError) as e:
        TrainConfig.from_dict(missing)
    assert e.value.field == "N_r"
    for field, bad in (("N_r", 2.5), ("N_r", 0), ("loss", "dg"), ("model", "cnn"),
                       ("epsilon", 0.0), ("K_u", True), ("preset", 3), ("alpha", -1.0)):
        with pytest.raises(ConfigError) as e:
            TrainConfig.from_dict({**raw, field: bad})
        assert e.value.field == field
    assert TrainConfig.from_dict({**raw, "N_r": 64.0}).N_r == 64
    inf = TrainConfig.from_dict({**raw, "epsilon": "inf"})
    assert math.isinf(inf.epsilon) and inf.to_dict()["epsilon"] == "inf"


def test_config_cross_field_rules():
    with pytest.raises(ConfigError):
        _small(model="pseudo-time-xnode")
    with pytest.raises(ConfigError):
        _small("ex2", model="xnode")
    with pytest.raises(ConfigError):
        _small(loss="cwan", gamma_d=0.0)


def test_single_outer_step():
    h = train(_small(N_max=1, epsilon=1e-9))
    assert h.steps == 1 and len(h.records) == 1 and h.stop_reason == "max-iterations"
    r = h.records[0]
    assert r.step == 1 and math.isfinite(r.loss) and r.rel_error > 0


def test_infinite_tolerance_stops_before_training():
    h = train(_small(epsilon="inf"))
    assert h.stop_reason == "tolerance-met" and h.steps == 0 and h.records == []
    assert h.to_csv() == "step,loss,rel_error,seconds\n"
    assert h.final_error == h.initial_error


def test_training_is_deterministic():
    cfg = _small(N_max=2, epsilon=1e-9, seed=5)
    a, b = train(cfg), train(cfg)
    assert a.to_csv() == b.to_csv()
    c = train(_small(N_max=2, epsilon=1e-9, seed=6))
    assert c.to_csv() != a.to_csv()


def test_csv_timing_column():
    h = train(_small(N_max=2, epsilon=1e-9))
    plain = h.to_csv().splitlines()
    assert plain[1].endswith(",")
    timed = h.to_csv(with_timing=True).splitlines()
    assert float(timed[1].split(",")[3]) > 0
    assert h.summary()["min_error"] == min(h.rel_errors())


def test_pinn_runs_descent_only():
    cfg = _small(loss="pinn", K_u=3, K_phi=2, N_max=1, epsilon=1e-9, model="dnn")
    prob = build_problem(cfg)
    assert prob.v_net is None
    before = [p.detach().clone() for p in prob.u_net.parameters()]
    h = train(cfg, prob)
    assert h.steps == 1
    # K_u is forced to 1: one Adam step moves each weight by at most lr
    moved = max(float((p.detach() - q).abs().max()) for p, q in zip(prob.u_net.parameters(), before))
    assert 0 < moved <= cfg.l_theta * (1 + 1e-9)


def test_descent_and_ascent_touch_their_own_parameters():
    cfg = _small(K_u=0, K_phi=1, N_max=1, epsilon=1e-9, model="dnn")
    prob = build_problem(cfg)
    u0 = [p.detach().clone() for p in prob.u_net.parameters()]
    v0 = [p.detach().clone() for p in prob.v_net.parameters()]
    train(cfg, prob)
    assert all(torch.equal(p.detach(), q) for p, q in zip(prob.u_net.parameters(), u0))
    assert any(not torch.equal(p.detach(), q) for p, q in zip(prob.v_net.parameters(), v0))


def test_static_problem_drops_initial_weight():
    prob = build_problem(_small("ex3", model="dnn"))
    assert prob.spec.alpha == 0.0 and prob.clock_axis is None
    pt = build_problem(_small("ex3"))
    assert pt.spec.alpha > 0 and pt.clock_axis == 0 and pt.spec.include_terminal


def test_log_callback_sees_every_record():
    seen = []
    h = train(_small(N_max=2, epsilon=1e-9), log=seen.append)
    assert [r.step for r in seen] == [1, 2] and seen == h.records
    assert np.array_equal(h.rel_errors(), [r.rel_error for r in seen])
