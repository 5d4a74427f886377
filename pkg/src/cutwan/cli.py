"""Command-line front end: ``run``, ``preset``, ``verify`` and ``plot``.

Exit codes: 0 tolerance met / all checks pass, 2 stopped at the iteration
limit, 1 bad input or failed run, 3 failing verification check.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITER, EXIT_VERIFY = 0, 1, 2, 3
OUT_ROOT_ENV = "CUTWAN_OUT_ROOT"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_config(path: str):
    from .trainer import TrainConfig

    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return TrainConfig.from_dict(raw), text


def _resolve_out(out: str | None, default_name: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    if out is None:
        return Path(root or "runs") / default_name
    p = Path(out)
    return Path(root) / p if root and not p.is_absolute() else p


def _run_one(cfg_dict: dict, config_text_hash: str, out_dir: str, timing: bool) -> tuple[int, str]:
    from . import __version__
    from .trainer import TrainConfig, train

    cfg = TrainConfig.from_dict(cfg_dict)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    hist = train(cfg)
    files = {
        "history.csv": hist.to_csv(with_timing=timing),
        "summary.json": json.dumps({**hist.summary(), "wall_seconds": hist.wall_seconds,
                                    "seed": cfg.seed, "config": cfg.to_dict()}, indent=2) + "\n",
    }
    for name, body in files.items():
        (out / name).write_text(body)
    canonical = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "input_hash": _sha256(canonical + f"|{__version__}".encode()),
        "config_file_hash": config_text_hash,
        "outputs": {name: {"path": str(out / name), "sha256": _sha256(body.encode())}
                    for name, body in files.items()},
        "started": started,
        "finished": _now(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    code = {"tolerance-met": EXIT_OK, "max-iterations": EXIT_MAX_ITER}.get(hist.stop_reason, EXIT_ERROR)
    msg = (f"seed {cfg.seed}: {hist.stop_reason} after {hist.steps} steps, "
           f"relative error {hist.final_error:.4g} -> {out}")
    return code, msg


def cmd_run(args) -> int:
    try:
        cfg, text = load_config(args.config)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    seeds = [cfg.seed]
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            _err(f"--seeds: expected comma-separated integers, got {args.seeds!r}")
            return EXIT_ERROR
    elif args.seed is not None:
        seeds = [args.seed]
    base = _resolve_out(args.out, f"{cfg.preset}-{cfg.model}-{cfg.loss}")
    jobs = []
    for s in seeds:
        d = cfg.to_dict()
        d["seed"] = s
        out = base / f"seed-{s}" if len(seeds) > 1 else base
        jobs.append((d, _sha256(text.encode()), str(out), args.timing))
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                results = list(ex.map(_run_one, *zip(*jobs)))
        else:
            results = [_run_one(*j) for j in jobs]
    except Exception as exc:  # a failed run is reported, not raised
        _err(f"run failed: {exc}")
        return EXIT_ERROR
    for _, msg in results:
        print(msg)
    codes = [c for c, _ in results]
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_MAX_ITER if EXIT_MAX_ITER in codes else EXIT_OK


def cmd_preset(args) -> int:
    from .experiments import PRESET_IDS, build_preset

    if args.id not in PRESET_IDS:
        _err(f"unknown preset {args.id!r}; choose from {', '.join(PRESET_IDS)}")
        return EXIT_ERROR
    from .trainer import TrainConfig

    cfg = TrainConfig.from_dict(build_preset(args.id, args.d).defaults)
    body = json.dumps(cfg.to_dict(), indent=2) + "\n"
    if args.out is None:
        sys.stdout.write(body)
        return EXIT_OK
    out = _resolve_out(args.out, "")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(body)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import theory_lab

    rows = theory_lab.run_verification(seed=args.seed)
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  expected {r.expected}  "
              f"observed {r.observed}")
    if args.out:
        out = _resolve_out(args.out, "")
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "expected", "observed", "pass"])
            for r in rows:
                w.writerow([r.name, r.expected, r.observed, int(r.passed)])
    return EXIT_OK if all(r.passed for r in rows) else EXIT_VERIFY


def read_history(path: str) -> tuple[list[int], list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"step", "loss", "rel_error", "seconds"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        steps, errs = [], []
        for i, row in enumerate(reader, start=2):
            try:
                steps.append(int(row["step"]))
                errs.append(float(row["rel_error"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: line {i}: malformed row") from None
    if not steps:
        raise ValueError(f"{path}: no data rows")
    return steps, errs


def cmd_plot(args) -> int:
    try:
        series = [(p, *read_history(p)) for p in args.csv]
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    labels = args.labels.split(",") if args.labels else [Path(p).parent.name or p for p, *_ in series]
    for (p, steps, errs), lab in zip(series, labels):
        pos = [(s, e) for s, e in zip(steps, errs) if e > 0 and math.isfinite(e)]
        ax.plot([s for s, _ in pos], [e for _, e in pos], label=lab, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("relative error")
    if len(series) > 1 or args.labels:
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    out = _resolve_out(args.out, "")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, format=args.format or (out.suffix.lstrip(".") or "svg"))
    plt.close(fig)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cutwan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="train from a JSON config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--seeds", help="comma-separated seeds; one run (and sub-directory) each")
    r.add_argument("--out", help=f"output directory (relative to ${OUT_ROOT_ENV} if set)")
    r.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")
    r.add_argument("--timing", action="store_true",
                   help="fill the seconds column (makes history.csv machine dependent)")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("preset", help="write a preset config")
    s.add_argument("id")
    s.add_argument("--out")
    s.add_argument("--d", type=int, help="override the dimension")
    s.set_defaults(fn=cmd_preset)

    v = sub.add_parser("verify", help="run the theory-lab checks")
    v.add_argument("--out", help="CSV report path")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    pl = sub.add_parser("plot", help="relative error vs step, log scale")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", required=True)
    pl.add_argument("--labels")
    pl.add_argument("--format", choices=["svg", "pdf", "eps"])
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
