"""Compiled vs pure-Python tape core on a small MLP: recording, first- and
second-order reverse sweeps, and replay with new leaf values.

    python benchmarks/bench_tape.py [--width 16] [--repeats 5] [--json out.json]
"""
import argparse
import json
import statistics
import time

import numpy as np

from cutwan.autodiff import CTapeCore, GraphTape, PyTapeCore, grad_nodes, grad_values
from cutwan.networks import Dnn, DnnArch


def _record(core_cls, net, params, x):
    tape = GraphTape(core_cls())
    xs = [tape.leaf(f"x{i}", v) for i, v in enumerate(x)]
    ps = {k: tape.leaf(k, v) for k, v in params.items()}
    (u,) = net.scalar_forward(xs, ps)
    return tape, u, xs


def _workloads(core_cls, net, params, x):
    def record():
        _record(core_cls, net, params, x)

    tape, u, xs = _record(core_cls, net, params, x)
    names = list(params)

    def first_order():
        grad_values(tape, u, names)

    def laplacian():
        t, root, leaves = _record(core_cls, net, params, x)
        gs = grad_nodes(root, leaves)
        lap = gs[0].tape.const(0.0)
        for g, xi in zip(gs, leaves):
            lap = lap + grad_nodes(g, [xi])[0]
        return lap.value

    rng = np.random.default_rng(0)

    def replay():
        tape.evaluate(**{f"x{i}": float(v) for i, v in enumerate(rng.uniform(-1, 1, len(x)))})

    return {"record": record, "grad (all params)": first_order,
            "laplacian (record + 2nd order)": laplacian, "replay": replay}


def _time(fn, repeats):
    fn()  # warm up
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--depth", type=int, default=3, help="hidden layers")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    net = Dnn(DnnArch.uniform(3, args.width, args.depth, 1, "tanh"), seed=0)
    params = net.named_scalars()
    x = [0.3, -0.2, 0.7]
    cores = {"python": PyTapeCore}
    if CTapeCore is not None:
        cores["compiled"] = CTapeCore
    else:
        print("compiled core unavailable; timing the pure-Python core only")

    # both cores must agree before timings mean anything
    vals = {}
    for name, cls in cores.items():
        tape, u, _ = _record(cls, net, params, x)
        vals[name] = (u.value, grad_values(tape, u, list(params)))
    if len(vals) == 2:
        assert vals["python"] == vals["compiled"], "cores disagree"

    results = {name: {w: _time(fn, args.repeats) for w, fn in _workloads(cls, net, params, x).items()}
               for name, cls in cores.items()}
    print(f"MLP 3 -> {args.depth} x {args.width} -> 1, {len(params)} parameters, "
          f"tape of {len(_record(PyTapeCore, net, params, x)[0])} nodes")
    head = f"{'workload':<32}" + "".join(f"{n:>12}" for n in results) + \
        ("     speedup" if len(results) == 2 else "")
    print(head)
    for w in results["python"]:
        row = f"{w:<32}" + "".join(f"{results[n][w] * 1e3:>10.2f}ms" for n in results)
        if len(results) == 2:
            row += f"{results['python'][w] / results['compiled'][w]:>11.1f}x"
        print(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"width": args.width, "depth": args.depth, "seconds": results}, fh, indent=2)


if __name__ == "__main__":
    main()
