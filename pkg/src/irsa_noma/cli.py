"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``); explicit
flags override values from the file. Outputs go to ``--out`` (default
``results``) and embed the resolved config: CSV files start with a
``# config {...}`` comment line, JSON files carry a ``config`` field.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import de, fa, optimizer, sim
from .decodable import all_decodable_sets
from .policy import Policy, resolve_policy

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SIMULATE_FIELDS = ["eta_target", "type", "eta_hat_mean", "eta_hat_stderr", "plr_mean",
                   "plr_stderr", "trials", "N", "seed"]
FA_SIMULATE_FIELDS = ["g", "type", "plr", "N", "W", "seeds"]


class ConfigError(ValueError):
    pass


# --- helpers ----------------------------------------------------------------


def _grid(spec) -> list[float]:
    """A list of values, or ``{"start", "stop", "step"}`` with ``stop`` included."""
    if isinstance(spec, dict):
        try:
            start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid {spec!r}") from exc
        if step <= 0 or stop < start:
            raise ConfigError(f"bad grid {spec!r}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(n)]
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list) and spec:
        return [float(v) for v in spec]
    raise ConfigError(f"bad grid {spec!r}")


def _int_list(v) -> list[int]:
    return [int(x) for x in (v if isinstance(v, list) else [v])]


def _policy(spec) -> Policy:
    try:
        return resolve_policy(spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _policy_id(spec, policy: Policy) -> str:
    return spec if isinstance(spec, str) else (policy.name or "inline")


def _jsonable(cfg: dict) -> dict:
    return json.loads(json.dumps(cfg, default=lambda o: o.to_dict() if hasattr(o, "to_dict") else str(o)))


def write_csv(path: Path, fields: list[str], rows: list[dict], config: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# config " + json.dumps(_jsonable(config), sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})
    return path


def write_json(path: Path, payload: dict, config: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": _jsonable(config), **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path: Path) -> tuple[dict, list[dict]]:
    """Inverse of ``write_csv``: the embedded config and the data rows."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# config "):
            raise ValueError(f"{path}: missing config line")
        return json.loads(first[len("# config "):]), list(csv.DictReader(fh))


# --- subcommands ------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path, threads: int) -> list[Path]:
    policy = _policy(cfg.get("policy", "P1"))
    Ns = _int_list(cfg.get("N", 1500))
    etas = _grid(cfg.get("eta", {"start": 0.1, "stop": 1.6, "step": 0.05}))
    trials = int(cfg.get("trials", 200))
    seed = int(cfg.get("seed", 0))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rows = []
    try:
        for N in Ns:
            for eta in etas:
                fc = sim.FrameConfig.for_load(policy, eta, N, seed)
                rows += sim.run_trials(fc, trials, seed, workers=threads).rows(eta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = {**cfg, "policy": policy.to_dict(), "N": Ns, "eta": etas, "trials": trials, "seed": seed}
    return [write_csv(out / "simulate.csv", SIMULATE_FIELDS, rows, cfg),
            write_json(out / "simulate.json", {"rows": rows}, cfg)]


def cmd_threshold(cfg: dict, out: Path, threads: int) -> list[Path]:
    if cfg.get("frame_async"):
        return cmd_fa_threshold(cfg, out, threads)
    specs = cfg.get("policies", ["P1", "P2", "P3", "P4", "P5"])
    if not specs:
        raise ConfigError("empty policy list")
    eps = float(cfg.get("eps", de.DEFAULT_EPS))
    max_iter = int(cfg.get("max_iter", de.DEFAULT_MAX_ITER))
    tol = float(cfg.get("bisect_tol", 1e-3))
    results = []
    for spec in specs:
        p = _policy(spec)
        r = de.threshold_search(p, eps, max_iter, tol)
        d = r.to_dict()
        d["policy_id"] = _policy_id(spec, p)
        results.append(d)
    cfg = {**cfg, "policies": specs, "eps": eps, "max_iter": max_iter, "bisect_tol": tol}
    return [write_json(out / "threshold.json", {"results": results}, cfg)]


def cmd_fa_threshold(cfg: dict, out: Path, threads: int) -> list[Path]:
    specs = cfg.get("policies", ["regular:3:2"])
    if not specs:
        raise ConfigError("empty policy list")
    Ns = _int_list(cfg.get("N", 200))
    eps = float(cfg.get("eps", de.DEFAULT_EPS))
    max_iter = int(cfg.get("max_iter", de.DEFAULT_MAX_ITER))
    tol = float(cfg.get("bisect_tol", 5e-3))
    results = []
    for spec in specs:
        p = _policy(spec)
        if p.T != 2:
            raise ConfigError("frame-asynchronous DE needs T=2 policies")
        for N in Ns:
            I_max = int(cfg.get("I_max_frames", fa.DEFAULT_HORIZON_FRAMES)) * N
            tail = int(cfg.get("tail_frames", fa.DEFAULT_WINDOW_FRAMES)) * N
            g = fa.fa_threshold(p.left, p.shares, N, I_max, eps, max_iter, tol, tail)
            results.append({"policy_id": _policy_id(spec, p), "g_star": g, "N": N,
                            "I_max": I_max, "tail": tail, "eps": eps, "bisect_tol": tol})
    cfg = {**cfg, "policies": specs, "N": Ns, "eps": eps, "max_iter": max_iter, "bisect_tol": tol}
    return [write_json(out / "fa_threshold.json", {"results": results}, cfg)]


def cmd_de_trace(cfg: dict, out: Path, threads: int) -> list[Path]:
    spec = cfg.get("policy", "P1")
    p = _policy(spec)
    if "eta" not in cfg and "g" not in cfg:
        raise ConfigError("de-trace needs eta (or g with --frame-async)")
    eps = float(cfg.get("eps", de.DEFAULT_EPS))
    max_iter = int(cfg.get("max_iter", de.DEFAULT_MAX_ITER))
    if cfg.get("frame_async"):
        if p.T != 2:
            raise ConfigError("frame-asynchronous DE needs T=2 policies")
        g = float(cfg.get("g", cfg.get("eta")))
        N = int(cfg.get("N", 200))
        I_max = int(cfg.get("I_max_frames", 10)) * N
        iters = int(cfg.get("iterations", 2000))
        every = int(cfg.get("every", 100))
        model = fa.FaDeModel(p.left, (p.shares[0] * g, p.shares[1] * g), N)
        rows = [{"l": l, "class": i + 1, "y_1": y[0, i], "y_2": y[1, i]}
                for l, y in fa.fa_de_trajectory(model, I_max, iters, every) for i in range(I_max)]
        cfg = {**cfg, "policy": p.to_dict(), "g": g, "N": N, "I_max": I_max}
        return [write_csv(out / "fa_de_trace.csv", ["l", "class", "y_1", "y_2"], rows, cfg)]
    eta = float(cfg["eta"])
    model = cfg.get("right_model", "poisson")
    try:
        outcome = de.run_de(de.DeProblem(p, eta, model), eps, max_iter)
    except (ValueError, NotImplementedError) as exc:
        raise ConfigError(str(exc)) from exc
    T = p.T
    fields = ["l"] + [f"y_{t}" for t in range(1, T + 1)] + [f"y_next_{t}" for t in range(1, T + 1)]
    rows = [dict(zip(fields, r)) for r in de.export_evolution_path(outcome)]
    cfg = {**cfg, "policy": p.to_dict(), "eta": eta, "eps": eps, "max_iter": max_iter,
           "converged": outcome.converged}
    return [write_csv(out / "de_trace.csv", fields, rows, cfg)]


def cmd_optimize(cfg: dict, out: Path, threads: int) -> list[Path]:
    keys = {f for f in optimizer.OptConfig.__dataclass_fields__}
    unknown = set(cfg) - keys - {"frame_async"}
    if unknown:
        raise ConfigError(f"unknown optimize keys: {sorted(unknown)}")
    try:
        oc = optimizer.OptConfig.from_dict({k: v for k, v in cfg.items() if k in keys})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    res = optimizer.optimize(oc, workers=threads)
    return [write_json(out / "optimize.json", res.to_dict(), oc.to_dict())]


def cmd_fa_simulate(cfg: dict, out: Path, threads: int) -> list[Path]:
    p = _policy(cfg.get("policy", "regular:3:2"))
    Ns = _int_list(cfg.get("N", 200))
    gs = _grid(cfg.get("g", {"start": 1.0, "stop": 1.5, "step": 0.05}))
    seeds = int(cfg.get("seeds", 4))
    seed = int(cfg.get("seed", 0))
    frames = int(cfg.get("total_frames", 100))
    decoder = cfg.get("decoder", "window")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    rows = []
    try:
        for N in Ns:
            W = int(cfg.get("window_frames", fa.DEFAULT_WINDOW_FRAMES)) * N
            for g in gs:
                fc = fa.FaConfig(N, tuple(a * g for a in p.shares), frames * N, p.left, W, seed,
                                 decoder)
                rows += fa.fa_simulate(fc, seeds, workers=threads).rows()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = {**cfg, "policy": p.to_dict(), "N": Ns, "g": gs, "seeds": seeds, "seed": seed,
           "total_frames": frames, "decoder": decoder}
    return [write_csv(out / "fa_simulate.csv", FA_SIMULATE_FIELDS, rows, cfg)]


def cmd_decodable_set(cfg: dict, out: Path, threads: int) -> list[Path]:
    T = int(cfg.get("T", 2))
    if T < 1:
        raise ConfigError("T must be >= 1")
    sets = {str(ds.t): [list(c) for c in ds] for ds in all_decodable_sets(T)}
    print(json.dumps({"T": T, "sets": sets}))
    return [write_json(out / "decodable_set.json", {"T": T, "sets": sets}, {**cfg, "T": T})]


COMMANDS = {
    "simulate": cmd_simulate,
    "threshold": cmd_threshold,
    "de-trace": cmd_de_trace,
    "optimize": cmd_optimize,
    "fa-simulate": cmd_fa_simulate,
    "fa-threshold": cmd_fa_threshold,
    "decodable-set": cmd_decodable_set,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irsa-noma", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("--threads", type=int, default=1, help="worker cap (results do not depend on it)")
    common.add_argument("--frame-async", dest="frame_async", action="store_true", default=None)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=JSON",
                        help="override any config key, e.g. --set N=[150,1500]")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="frame-synchronous Monte Carlo sweep")
    s.add_argument("--policy")
    s.add_argument("--N", type=int, nargs="+")
    s.add_argument("--eta", type=float, nargs="+")
    s.add_argument("--trials", type=int)

    s = sub.add_parser("threshold", parents=[common], help="DE thresholds")
    s.add_argument("--policies", nargs="*")
    s.add_argument("--N", type=int, nargs="+")
    s.add_argument("--bisect-tol", dest="bisect_tol", type=float)

    s = sub.add_parser("de-trace", parents=[common], help="DE evolution path as CSV")
    s.add_argument("--policy")
    s.add_argument("--eta", type=float)
    s.add_argument("--g", type=float)
    s.add_argument("--N", type=int)
    s.add_argument("--right-model", dest="right_model", choices=["poisson", "exact"])

    s = sub.add_parser("optimize", parents=[common], help="differential-evolution policy search")
    s.add_argument("--T", type=int)
    s.add_argument("--d-max", dest="d_max", type=int)
    s.add_argument("--population-size", dest="population_size", type=int)
    s.add_argument("--generations", type=int)

    s = sub.add_parser("fa-simulate", parents=[common], help="frame-asynchronous loss-rate sweep")
    s.add_argument("--policy")
    s.add_argument("--N", type=int, nargs="+")
    s.add_argument("--g", type=float, nargs="+")
    s.add_argument("--seeds", type=int)
    s.add_argument("--decoder", choices=list(fa.DECODERS))

    s = sub.add_parser("fa-threshold", parents=[common], help="frame-asynchronous DE thresholds")
    s.add_argument("--policies", nargs="*")
    s.add_argument("--N", type=int, nargs="+")
    s.add_argument("--bisect-tol", dest="bisect_tol", type=float)

    s = sub.add_parser("decodable-set", parents=[common], help="print decodable sets as JSON")
    s.add_argument("--T", type=int)
    return ap


_NOT_CONFIG = {"command", "config", "out", "threads", "overrides"}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in args.overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=JSON, got {item!r}")
        try:
            cfg[key] = json.loads(val)
        except json.JSONDecodeError:
            cfg[key] = val
    for k, v in vars(args).items():
        if k not in _NOT_CONFIG and v is not None:
            cfg[k] = v
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(args)
        paths = COMMANDS[args.command](cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (de.ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
