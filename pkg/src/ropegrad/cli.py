"""Command line entry point: ``ropegrad verify | bench | grad | gen``."""

import argparse
import json
import logging
import os
import sys
import time

from threadpoolctl import threadpool_limits

from .errors import ConfigError, RopeGradError
from .exact import exact_gradient
from .harness import gen_instance, print_slopes, run_bench, write_csv
from .lowrank import fast_gradient
from .model import MODES, forward, load_instance, save_instance
from .report import GradReport
from .verify import load_config, run_verify

BENCH_DEFAULTS = {
    "n_list": [256, 512, 1024, 2048],
    "d": 4,
    "mode": "rotary",
    "eps": 0.05,
    "B": 0.5,
    "exact": False,
    "fast": False,
    "repeat": 5,
    "warmup": 2,
    "out": None,
    "verify": False,
    "degree": None,
    "seed": 0,
    "parallel": False,
}


def env_threads():
    raw = os.environ.get("ROPEGRAD_THREADS", "")
    if not raw:
        return 1
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"ROPEGRAD_THREADS must be an integer, got {raw!r}") from None
    if val < 1:
        raise ConfigError(f"ROPEGRAD_THREADS must be >= 1, got {val}")
    return val


def _n_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad n-list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="ropegrad", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--config", help="JSON file with checks, seed, tolerances, budgets, scaling")
    v.add_argument("--seed", type=int)
    v.add_argument("--checks", help="comma-separated check names or numbers")
    v.add_argument("--json", dest="json_out", help="also write the results to this file")

    b = sub.add_parser("bench", help="time exact and fast gradients over n")
    b.add_argument("--config", help="JSON file using the flag names as keys")
    # Defaults are None so that explicit flags can be told apart from the file.
    b.add_argument("--n-list", type=_n_list, dest="n_list")
    b.add_argument("--d", type=int)
    b.add_argument("--mode", choices=MODES)
    b.add_argument("--eps", type=float)
    b.add_argument("--B", type=float, dest="B")
    b.add_argument("--exact", action="store_true", default=None)
    b.add_argument("--fast", action="store_true", default=None)
    b.add_argument("--repeat", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--degree", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.add_argument("--verify", action="store_true", default=None,
                   help="fill linf_err against the exact gradient")
    b.add_argument("--parallel", action="store_true", default=None,
                   help="do not pin BLAS to one thread")

    g = sub.add_parser("grad", help="gradient of one instance file")
    g.add_argument("--instance", required=True)
    g.add_argument("--method", choices=("exact", "fast"), required=True)
    g.add_argument("--eps", type=float, default=1e-2)
    g.add_argument("--degree", type=int)
    g.add_argument("--verify", action="store_true", help="fast method: compare to exact")
    g.add_argument("--emit-json", action="store_true", help="print the full report as JSON")

    n = sub.add_parser("gen", help="write a random instance file")
    n.add_argument("--n", type=int, required=True)
    n.add_argument("--d", type=int, required=True)
    n.add_argument("--mode", choices=MODES, default="rotary")
    n.add_argument("--B", type=float, default=0.5, dest="B")
    n.add_argument("--base", type=float, default=10000.0)
    n.add_argument("--sigma", type=float, default=0.1)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", required=True)
    return p


def cmd_verify(args):
    config = load_config(args.config) if args.config else {}
    if args.seed is not None:
        config["seed"] = args.seed
    if args.checks:
        config["checks"] = [int(c) if c.strip().isdigit() else c.strip()
                            for c in args.checks.split(",") if c.strip()]
    status, results = run_verify(config)
    if args.json_out and status != 2:
        with open(args.json_out, "w") as fh:
            json.dump({"status": status, "checks": [r.to_json() for r in results]}, fh, indent=2)
    return status


def resolve_bench(args):
    cfg = dict(BENCH_DEFAULTS)
    if args.config:
        doc = load_config(args.config)
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(doc) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown bench config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if isinstance(cfg["n_list"], str):
        cfg["n_list"] = _n_list(cfg["n_list"])
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def cmd_bench(args):
    cfg = resolve_bench(args)
    methods = tuple(m for m in ("exact", "fast") if cfg[m]) or ("exact", "fast")
    kwargs = dict(d=cfg["d"], mode=cfg["mode"], eps=cfg["eps"], B=cfg["B"], methods=methods,
                  repeat=cfg["repeat"], warmup=cfg["warmup"], seed=cfg["seed"],
                  verify=cfg["verify"], degree=cfg["degree"])
    if cfg["parallel"]:
        rows = run_bench(cfg["n_list"], threads=env_threads(), **kwargs)
    else:
        with threadpool_limits(1):
            rows = run_bench(cfg["n_list"], threads=1, **kwargs)
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    print_slopes(rows)
    return 0


def cmd_grad(args):
    inst = load_instance(args.instance)
    if args.method == "exact":
        t0 = time.perf_counter_ns()
        st = forward(inst)
        t1 = time.perf_counter_ns()
        g = exact_gradient(inst, state=st).g
        t2 = time.perf_counter_ns()
        report = GradReport(
            g_exact=g,
            stage_timings={"forward": max(1, t1 - t0), "gradient": max(1, t2 - t1)},
            config_echo={"n": inst.n, "d": inst.d, "mode": inst.weights.mode, "method": "exact"},
        )
    else:
        report = fast_gradient(inst, args.eps, verify=args.verify, degree=args.degree,
                               threads=env_threads())
        report.config_echo["method"] = "fast"
    if args.emit_json:
        json.dump(report.to_json(), sys.stdout)
        sys.stdout.write("\n")
    else:
        g = report.g_approx if report.g_approx is not None else report.g_exact
        print(f"method={args.method} n={inst.n} d={inst.d} mode={inst.weights.mode}")
        print(f"|g|_inf = {abs(g).max():.6g}")
        if report.linf_diff is not None:
            print(f"linf_diff = {report.linf_diff:.3g}")
        total = sum(report.stage_timings.values()) / 1e9
        print(f"time = {total:.3f}s")
    return 0


def cmd_gen(args):
    inst = gen_instance(args.seed, args.n, args.d, B=args.B, mode=args.mode, base=args.base,
                        sigma=args.sigma)
    save_instance(inst, args.out)
    return 0


COMMANDS = {"verify": cmd_verify, "bench": cmd_bench, "grad": cmd_grad, "gen": cmd_gen}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RopeGradError as exc:
        where = f" [stage {exc.stage}]" if exc.stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
