"""Command-line entry point: ``xorirl <subcommand> ...``.

Every source of randomness is derived from ``--seed``; trajectory and metric
files are byte-identical across repeated runs with the same inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .baselines import masked_maxent_train, maxent_fb, maxent_train, reirl_train
from .constraints import ConstraintSet, load_constraints
from .encoding import encode, parse_text
from .errors import ConfigurationError, XorIrlError
from .evaluation import generate, occupancy, path_kl, valid_fraction
from .exact import enumerate_space
from .learner import TrainConfig, train
from .mdp import load_gridworld_spec, read_trajectories, write_trajectories
from .oracle import OracleProblem, OracleStats, brute_force_count, solve, solve_all_count
from .presets import PRESETS, Environment, ExperimentConfig, config_from_json, make_demos, preset
from .sampler import SamplerConfig, batch_sample

METHODS = ("xmen", "maxent", "reirl", "masked")

# spawn-key tags of the runner's random streams
_DEMOS, _GENERATE, _ROLLOUT = 10, 11, 12


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _fmt(v) -> str:
    return repr(float(v))


# -- shared stages -----------------------------------------------------------------

def train_method(method: str, tcfg: TrainConfig, env: Environment, cset: ConstraintSet, demos,
                 encoding=None) -> dict:
    """Train one method; returns ``theta``, ``state`` and a sampling model."""
    mdp, fmap = env.mdp, env.fmap
    if method == "xmen":
        theta, state = train(tcfg, env, cset, demos, encoding=encoding)
        return {"theta": theta, "state": state, "model": None}
    if method == "maxent":
        theta, state = maxent_train(mdp, fmap, demos, tcfg)
        return {"theta": theta, "state": state, "model": mdp}
    if method == "reirl":
        theta, state = reirl_train(mdp, fmap, demos, tcfg)
        return {"theta": theta, "state": state, "model": mdp}
    if method == "masked":
        theta, state, masked = masked_maxent_train(mdp, fmap, demos, tcfg, cset)
        return {"theta": theta, "state": state, "model": masked}
    raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")


def generate_method(method: str, trained: dict, env: Environment, cset: ConstraintSet,
                    sampler_cfg: SamplerConfig, pool_size: int, out_size: int, seed: int,
                    encoding=None, stats=None) -> list:
    if method == "xmen":
        return generate(trained["theta"], env, cset, sampler_cfg, pool_size, out_size,
                        _stream(seed, _GENERATE), encoding=encoding, stats=stats)
    table = maxent_fb(trained["model"], env.fmap, trained["theta"])
    return table.sample(_stream(seed, _ROLLOUT), out_size)


def metrics_rows(method, trajs, demos, cset):
    kl = path_kl(trajs, demos) if demos else float("nan")
    return [[method, _fmt(valid_fraction(trajs, cset)), _fmt(kl), str(len(trajs))]]


def occupancy_rows(trajs, mdp):
    occ = occupancy(trajs, states=mdp.states)
    return [[str(x), str(y), _fmt(v)] for x, y, v in occ.grid_rows()]


def write_trace(path, state) -> None:
    cols = ["k", "grad_norm", "queries", "wall_ms"]
    if any("nll" in r for r in state.trace):
        cols.append("nll")
    rows = [[str(r.get(c, "")) if c in ("k", "queries") else _fmt(r[c]) if c in r else ""
             for c in cols] for r in state.trace]
    _write_csv(path, cols, rows)


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> dict:
    """gen-demos, train, generate and eval; writes all artifacts into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    env = cfg.environment()
    space = enumerate_space(env.mdp, cfg.constraints, env.fmap)
    demos = make_demos(cfg, env, _stream(cfg.seed, _DEMOS), space=space)
    write_trajectories(os.path.join(out_dir, "demos.jsonl"), demos)
    encoding = encode(env.mdp, cfg.constraints) if cfg.method == "xmen" else None
    t_train = time.perf_counter()
    trained = train_method(cfg.method, cfg.train, env, cfg.constraints, demos, encoding)
    train_seconds = time.perf_counter() - t_train
    state = trained["state"]
    gen_stats = OracleStats()
    t_gen = time.perf_counter()
    trajs = generate_method(cfg.method, trained, env, cfg.constraints, cfg.train.sampler,
                            cfg.eval.pool_size, cfg.eval.out_size, cfg.seed, encoding, gen_stats)
    gen_seconds = time.perf_counter() - t_gen
    write_trajectories(os.path.join(out_dir, "trajectories.jsonl"), trajs)
    _write_json(os.path.join(out_dir, "theta.json"), {
        "method": cfg.method, "theta_bar": [float(v) for v in trained["theta"]],
        "theta_last": [float(v) for v in state.theta_k],
        "iterations_run": state.k, "stopped_early": state.stopped_early,
        "feature_names": list(env.fmap.names) if env.fmap.names else None})
    write_trace(os.path.join(out_dir, "trace.csv"), state)
    _write_csv(os.path.join(out_dir, "metrics.csv"), ["method", "valid_fraction", "kl", "n"],
               metrics_rows(cfg.method, trajs, demos, cfg.constraints))
    _write_csv(os.path.join(out_dir, "occupancy.csv"), ["x", "y", "marginal"],
               occupancy_rows(trajs, env.mdp))
    stats = {
        "method": cfg.method, "seed": cfg.seed,
        "train_oracle": state.stats.as_dict(), "generate_oracle": gen_stats.as_dict(),
        "feasible_trajectories": len(space),
        "wall_seconds": {"train": train_seconds, "generate": gen_seconds,
                         "total": time.perf_counter() - t0},
        "budget": cfg.reference_budget, "config": cfg.to_json(),
        "kl_direction": "demo_model",
    }
    _write_json(os.path.join(out_dir, "stats.json"), stats)
    return stats


# -- subcommands ---------------------------------------------------------------------

def _env_and_constraints(args):
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
        return cfg.environment(), cfg.constraints
    if not args.env or not args.constraints:
        raise ConfigurationError("give --preset or both --env and --constraints")
    return Environment.from_spec(load_gridworld_spec(args.env)), load_constraints(args.constraints)


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            obj = json.load(fh)
        if args.seed is not None:
            obj["seed"] = args.seed
        return config_from_json(obj)
    if getattr(args, "preset", None):
        if args.seed is None:
            raise ConfigurationError("--seed is required")
        return preset(args.preset, args.seed)
    raise ConfigurationError("give --config or --preset")


def cmd_gen_demos(args) -> int:
    cfg = _config(args)
    if args.n is not None:
        cfg = replace(cfg, demos=replace(cfg.demos, n=args.n))
    env = cfg.environment()
    demos = make_demos(cfg, env, _stream(cfg.seed, _DEMOS))
    write_trajectories(args.out, demos)
    return 0


def _train_config(args) -> TrainConfig:
    sampler = SamplerConfig(delta=args.delta, failure_prob=args.failure_prob, search=args.search)
    return TrainConfig(iterations=args.iterations, learning_rate=args.learning_rate,
                       demo_batch=args.demo_batch, model_batch=args.model_batch,
                       sampler=sampler, seed=args.seed, gradient=args.gradient,
                       max_wall_seconds=args.max_wall_seconds)


def cmd_train(args) -> int:
    env, cset = _env_and_constraints(args)
    demos = read_trajectories(args.demos)
    tcfg = _train_config(args)
    trained = train_method(args.method, tcfg, env, cset, demos)
    state = trained["state"]
    _write_json(args.out, {
        "method": args.method, "theta_bar": [float(v) for v in trained["theta"]],
        "iterations_run": state.k, "stopped_early": state.stopped_early,
        "oracle": state.stats.as_dict(), "trace": state.trace})
    trace_path = args.trace or os.path.splitext(args.out)[0] + "_trace.csv"
    write_trace(trace_path, state)
    return 0


def _parse_theta(text: str, dim: int) -> np.ndarray:
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(vals) != dim:
        raise ConfigurationError(f"--theta has {len(vals)} entries, features have {dim}")
    return np.array(vals)


def cmd_sample(args) -> int:
    cfg = _config(args)
    env = cfg.environment()
    theta = _parse_theta(args.theta, env.fmap.dim)
    base = cfg.train.sampler
    scfg = replace(base, delta=args.delta if args.delta is not None else base.delta,
                   failure_prob=args.failure_prob if args.failure_prob is not None
                   else base.failure_prob)
    enc, lin = encode(env.mdp, cfg.constraints)
    res = batch_sample(args.count, theta, enc, lin, scfg, cfg.seed, env.fmap)
    write_trajectories(args.out, res.trajectories)
    stats = {"oracle": res.stats.as_dict(), "parity_count": res.parity_count,
             "first_sample_queries": res.first_sample_queries, "attempts": res.attempts,
             "log2_count_estimate": res.log2_count, "wall_seconds": res.wall_seconds}
    if args.stats:
        _write_json(args.stats, stats)
    else:
        print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    trajs = read_trajectories(args.trajectories)
    demos = read_trajectories(args.demos) if args.demos else []
    if args.preset:
        cfg = preset(args.preset)
        cset, env = cfg.constraints, cfg.environment()
    else:
        if not args.constraints:
            raise ConfigurationError("give --preset or --constraints")
        cset = load_constraints(args.constraints)
        env = Environment.from_spec(load_gridworld_spec(args.env)) if args.env else None
    os.makedirs(args.out_dir, exist_ok=True)
    _write_csv(os.path.join(args.out_dir, "metrics.csv"), ["method", "valid_fraction", "kl", "n"],
               metrics_rows(args.method, trajs, demos, cset))
    if env is not None:
        rows = occupancy_rows(trajs, env.mdp)
    else:
        rows = [[str(x), str(y), _fmt(v)] for x, y, v in occupancy(trajs).grid_rows()]
    _write_csv(os.path.join(args.out_dir, "occupancy.csv"), ["x", "y", "marginal"], rows)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.method:
        cfg = replace(cfg, method=args.method)
    if args.max_wall_seconds is not None:
        cfg = replace(cfg, train=replace(cfg.train, max_wall_seconds=args.max_wall_seconds))
    out_dir = args.out_dir or cfg.output_dir
    if not out_dir:
        raise ConfigurationError("give --out-dir or set output_dir in the config")
    run_experiment(cfg, out_dir)
    return 0


def cmd_enumerate(args) -> int:
    env, cset = _env_and_constraints(args)
    if args.unconstrained:
        cset = ConstraintSet(())
    theta = _parse_theta(args.theta, env.fmap.dim) if args.theta else np.zeros(env.fmap.dim)
    space = enumerate_space(env.mdp, cset, env.fmap, cap=args.cap, theta=theta)
    out = {"count": len(space), "log_partition": space.log_partition if len(space) else None,
           "partition": space.partition if len(space) else 0.0}
    if args.out:
        _write_json(args.out, out)
    else:
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_oracle_check(args) -> int:
    with open(args.problem) as fh:
        n_vars, linear, parity = parse_text(fh.read())
    problem = OracleProblem(n_vars, linear, parity)
    res = solve(problem, rng_seed=args.seed)
    out = {"status": res.status.value, "n_vars": n_vars,
           "verified": bool(res.sat and problem.is_satisfied_by(res.assignment))}
    if res.sat:
        out["assignment"] = [int(v) for v in res.assignment]
    if args.count_cap:
        c = solve_all_count(problem, args.count_cap)
        out["count"] = c.count
        out["count_exceeded"] = c.exceeded
        if n_vars <= 22:
            out["brute_force_count"] = brute_force_count(problem)
    print(json.dumps(out, sort_keys=True))
    return 0 if res.status.value != "timeout" else 1


# -- parser ---------------------------------------------------------------------------

def _add_env(p):
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--env", help="grid world JSON")
    p.add_argument("--constraints", help="constraint set JSON")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xorirl", description="Constrained max-ent IRL with XOR sampling")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="write synthetic demonstrations as JSONL")
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="learn theta from demonstrations")
    _add_env(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--method", choices=METHODS, default="xmen")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--demo-batch", type=int, default=16)
    p.add_argument("--model-batch", type=int, default=8)
    p.add_argument("--delta", type=float, default=1.3)
    p.add_argument("--failure-prob", type=float, default=0.05)
    p.add_argument("--gradient", choices=("xor", "exact-sampler", "exact"), default="xor")
    p.add_argument("--search", choices=("bisect", "scan"), default="bisect",
                   help="parity-count search of the sampler")
    p.add_argument("--max-wall-seconds", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="XOR-sample trajectories at a fixed theta")
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--theta", required=True, help="comma-separated parameter vector")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--delta", type=float)
    p.add_argument("--failure-prob", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metrics.csv and occupancy.csv for a trajectory file")
    _add_env(p)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--demos")
    p.add_argument("--method", default="unknown")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="demos, training, generation and evaluation end to end")
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--out-dir")
    p.add_argument("--max-wall-seconds", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("enumerate", help="count feasible trajectories and the partition function")
    _add_env(p)
    p.add_argument("--theta")
    p.add_argument("--cap", type=int, default=2_000_000)
    p.add_argument("--unconstrained", action="store_true", help="drop the constraint set")
    p.add_argument("--out")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("oracle-check", help="solve a text-format problem and verify the answer")
    p.add_argument("--problem", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-cap", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except XorIrlError as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
