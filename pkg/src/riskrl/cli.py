"""Command-line front end: ``riskrl {env,solve,demos,irl,eval,sweep} ...``.

Every command writes its artifact plus ``<artifact>.manifest.json`` recording
the command line, configuration, seeds, input/output checksums, wall time and
solver diagnostics.  Exit codes: 0 success, 2 configuration or input errors,
3 solver failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import environments as env
from . import evaluation as ev
from .errors import AllRestartsFailed, NoAdmissibleK, RiskRLError, SolverError
from .forward import SolverConfig, boltzmann_policy, solve_q_fixed_point
from .inverse import IRLConfig, irl_fit
from .mdp import DemonstrationSet, FiniteMDP, QTable, sample_demonstrations, validate
from .value_fn import ValueFnSpec

log = logging.getLogger("riskrl")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class CLIError(Exception):
    """Configuration problem detected by the CLI itself (exit 2)."""


# ---------------------------------------------------------------------------
# manifests and files


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    version: str = __version__

    def add_input(self, name, path):
        self.inputs[name] = {"path": str(path), "sha256": sha256(path)}

    def add_output(self, name, path):
        self.outputs[name] = {"path": str(path), "sha256": sha256(path)}

    def write(self, artifact) -> Path:
        path = manifest_path(artifact)
        path.write_text(json.dumps(asdict(self), indent=2, default=_jsonable) + "\n")
        return path


def manifest_path(artifact) -> Path:
    p = Path(artifact)
    return p.with_name(p.name + ".manifest.json")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_json(path, record) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(record, indent=1, default=_jsonable) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CLIError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: not valid JSON ({exc})") from None


def load_mdp(path) -> FiniteMDP:
    try:
        mdp = FiniteMDP.from_record(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RiskRLError):
            raise
        raise CLIError(f"{path}: malformed MDP file ({exc})") from None
    validate(mdp)
    return mdp


def load_spec(path) -> ValueFnSpec:
    rec = read_json(path)
    # accept an IRL result document as well as a bare value-function record
    if "best_spec" in rec:
        rec = rec["best_spec"]
    try:
        spec = ValueFnSpec.from_record(rec)
    except (KeyError, TypeError) as exc:
        raise CLIError(f"{path}: malformed value-function file ({exc})") from None
    spec.validate()
    return spec


def _strip_timing(diag: dict | None) -> dict:
    return {k: v for k, v in (diag or {}).items() if k != "seconds"}


def default_seed() -> int:
    raw = os.environ.get("RISKRL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CLIError(f"RISKRL_SEED={raw!r} is not an integer") from None


def start_distribution(mdp: FiniteMDP):
    """Start state for episodes: the MDP's declared start, else uniform over declared or free states."""
    meta = mdp.meta or {}
    if "start" in meta:
        return int(meta["start"])
    states = meta.get("start_states") or np.flatnonzero(~mdp.absorbing).tolist()
    p = np.zeros(mdp.n_states)
    p[states] = 1.0 / len(states)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_env(args) -> int:
    t0 = time.perf_counter()
    if args.kind == "gridworld":
        grid = env.load_map(args.map) if args.map else env.default_map()
        spec = env.GridSpec(grid, slip=args.slip, intended_prob=args.intended_prob, gamma=args.gamma)
        spec.validate()
        mdp = env.build_gridworld(spec, args.absorbing_reward_mode)
        config = {"kind": "gridworld", "map": list(spec.map), "slip": spec.slip,
                  "intended_prob": spec.intended_prob, "gamma": spec.gamma,
                  "absorbing_reward_mode": args.absorbing_reward_mode}
    else:
        cfg = env.RideshareConfig.from_record(read_json(args.config)) if args.config else env.RideshareConfig()
        surge = args.surge or env.bundled_surge_fixture()
        P = env.ingest_surge_csv(env.read_surge_csv(surge))
        mdp = env.build_rideshare(cfg, P)
        config = {"kind": "rideshare", "rideshare": cfg.to_record(), "price_transition": P.tolist()}
    validate(mdp)
    mdp.save(args.out)
    man = RunManifest("env " + args.kind, sys.argv[1:], config)
    if args.kind == "gridworld" and args.map:
        man.add_input("map", args.map)
    if args.kind == "rideshare":
        if args.config:
            man.add_input("config", args.config)
        man.add_input("surge", surge)
    man.add_output("mdp", args.out)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = {"n_states": mdp.n_states, "n_actions": mdp.n_actions, "reward_bound": mdp.reward_bound}
    man.write(args.out)
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    cfg = SolverConfig(tol=args.tol, max_iters=args.max_iters, strict_k=args.strict_k)
    cfg.validate()
    return cfg


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    mdp = load_mdp(args.env)
    spec = load_spec(args.vf)
    cfg = _solver_config(args)
    Q = solve_q_fixed_point(mdp, spec, cfg)
    log.info("solve diagnostics %s", json.dumps(Q.diagnostics, default=_jsonable))
    out = QTable(Q.values, spec, _strip_timing(Q.diagnostics))
    write_json(args.out, out.to_record())
    man = RunManifest("solve", sys.argv[1:], {"solver": asdict(cfg), "spec": spec.to_record()})
    man.add_input("env", args.env)
    man.add_input("vf", args.vf)
    man.add_output("q", args.out)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = Q.diagnostics
    man.write(args.out)
    return EXIT_OK


def cmd_demos(args) -> int:
    t0 = time.perf_counter()
    mdp = load_mdp(args.env)
    Q = QTable.from_record(read_json(args.q))
    if Q.values.shape != (mdp.n_states, mdp.n_actions):
        raise CLIError(f"Q table shape {Q.values.shape} does not match the MDP")
    seed = args.seed if args.seed is not None else default_seed()
    policy = boltzmann_policy(Q, args.beta, mdp)
    demos = sample_demonstrations(mdp, policy, args.episodes, start_distribution(mdp), args.max_steps, seed)
    demos.save(args.out)
    man = RunManifest("demos", sys.argv[1:],
                      {"beta": args.beta, "episodes": args.episodes, "max_steps": args.max_steps},
                      seeds={"sampling": seed})
    man.add_input("env", args.env)
    man.add_input("q", args.q)
    man.add_output("demos", args.out)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = {"pairs": demos.N, "visited_states": int(demos.visited.sum())}
    man.write(args.out)
    return EXIT_OK


def cmd_irl(args) -> int:
    t0 = time.perf_counter()
    mdp = load_mdp(args.env)
    demos = DemonstrationSet.load(args.demos, mdp.n_states, mdp.n_actions)
    seed = args.seed if args.seed is not None else default_seed()
    template = ValueFnSpec(args.family, epsilon=args.epsilon)
    template.validate()
    cfg = IRLConfig(restarts=args.restarts, loss=args.loss, beta=args.beta, max_outer_iters=args.max_iters,
                    grad_tol=args.grad_tol, solver=SolverConfig(tol=args.tol))
    result = irl_fit(mdp, demos, template, cfg, rng_seed=seed, n_jobs=args.jobs)
    rec = result.to_record()
    rec["env_sha256"] = sha256(args.env)
    write_json(args.out, rec)
    man = RunManifest("irl", sys.argv[1:], {"family": template.family, "restarts": cfg.restarts,
                                            "loss": cfg.loss, "beta": cfg.beta,
                                            "max_outer_iters": cfg.max_outer_iters, "grad_tol": cfg.grad_tol,
                                            "tol": args.tol, "param_box": cfg.box(template.family)},
                      seeds={"restarts": [seed + k for k in range(cfg.restarts)]})
    man.add_input("env", args.env)
    man.add_input("demos", args.demos)
    man.add_output("result", args.out)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = {"best_loss": result.best_loss, "best_index": result.best_index}
    man.write(args.out)
    return EXIT_OK


def _check_env_checksum(path, env_path) -> None:
    """Refuse a value-function artifact produced against a different environment file."""
    digest = sha256(env_path)
    rec = read_json(path)
    recorded = rec.get("env_sha256")
    if recorded is None:
        mp = manifest_path(path)
        if mp.exists():
            recorded = read_json(mp).get("inputs", {}).get("env", {}).get("sha256")
    if recorded is not None and recorded != digest:
        raise CLIError(f"{path} was produced for a different environment (checksum mismatch)")


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    mdp = load_mdp(args.env)
    for p in (args.true_vf, args.learned_vf):
        _check_env_checksum(p, args.env)
    true_spec, learned_spec = load_spec(args.true_vf), load_spec(args.learned_vf)
    cfg = SolverConfig(tol=args.tol)
    pi_true = boltzmann_policy(solve_q_fixed_point(mdp, true_spec, cfg), args.beta, mdp)
    pi_learned = boltzmann_policy(solve_q_fixed_point(mdp, learned_spec, cfg), args.beta, mdp)
    report = ev.policy_tv_report(pi_true, pi_learned, ev.free_states(mdp))
    out = Path(args.out)
    report.write_csv(out)
    start = start_distribution(mdp)
    summary = {**report.summary()}
    if np.ndim(start) == 0:
        summary["path_true"] = ev.max_likelihood_path(mdp, pi_true, start)
        summary["path_learned"] = ev.max_likelihood_path(mdp, pi_learned, start)
        summary["paths_match"] = summary["path_true"] == summary["path_learned"]
    summary_path = out.with_name(out.stem + ".summary.json")
    write_json(summary_path, summary)
    man = RunManifest("eval", sys.argv[1:], {"beta": args.beta, "tol": args.tol,
                                             "true_spec": true_spec.to_record(),
                                             "learned_spec": learned_spec.to_record()})
    man.add_input("env", args.env)
    man.add_input("true_vf", args.true_vf)
    man.add_input("learned_vf", args.learned_vf)
    man.add_output("tv_table", out)
    man.add_output("summary", summary_path)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = summary
    man.write(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    mdp = load_mdp(args.env)
    true_spec = load_spec(args.true_vf)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise CLIError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    seed = args.seed if args.seed is not None else default_seed()
    irl_cfg = IRLConfig(beta=args.beta, loss=args.loss)
    res = ev.sample_complexity_experiment(mdp, true_spec, sizes, args.datasets, args.restarts, seed,
                                          start=start_distribution(mdp), max_steps=args.max_steps,
                                          irl_cfg=irl_cfg, n_jobs=args.jobs)
    out = Path(args.out)
    res.write_csv(out)
    summary_path = out.with_name(out.stem + ".summary.json")
    write_json(summary_path, {**res.summary(), "per_dataset": [
        {"size": n, "dataset": j, "mean_tv": tv, "theta": th} for n, j, tv, th in res.per_dataset]})
    man = RunManifest("sweep", sys.argv[1:], {"sizes": sizes, "datasets": args.datasets,
                                              "restarts": args.restarts, "beta": args.beta,
                                              "true_spec": true_spec.to_record()},
                      seeds={"base": seed})
    man.add_input("env", args.env)
    man.add_input("true_vf", args.true_vf)
    man.add_output("table", out)
    man.add_output("summary", summary_path)
    man.wall_time = time.perf_counter() - t0
    man.diagnostics = res.summary()
    man.write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskrl", description="Risk-sensitive forward and inverse RL on finite MDPs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("env", help="build an environment MDP file")
    esub = pe.add_subparsers(dest="kind", required=True)
    g = esub.add_parser("gridworld", help="Grid World from a map file")
    g.add_argument("--map", help="map file (default: the bundled map)")
    g.add_argument("--gamma", type=float, default=0.95)
    g.add_argument("--slip", type=float, default=0.01)
    g.add_argument("--intended-prob", type=float, default=0.93)
    g.add_argument("--absorbing-reward-mode", choices=("entry", "recurring"), default="entry")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_env)
    r = esub.add_parser("rideshare", help="ride-sharing passenger MDP")
    r.add_argument("--config", help="JSON file with RideshareConfig fields (default: built-in defaults)")
    r.add_argument("--surge", help="surge CSV with header timestamp,multiplier (default: bundled fixture)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_env)

    s = sub.add_parser("solve", help="solve for Q* under a value function")
    s.add_argument("--env", required=True)
    s.add_argument("--vf", required=True, help="value-function JSON record")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.add_argument("--strict-k", action="store_true", help="fail when no admissible radius K exists")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("demos", help="sample demonstrations from the Boltzmann policy of a Q table")
    d.add_argument("--env", required=True)
    d.add_argument("--q", required=True)
    d.add_argument("--beta", type=float, default=4.0)
    d.add_argument("--episodes", type=int, required=True)
    d.add_argument("--max-steps", type=int, default=100)
    d.add_argument("--seed", type=int, default=None, help="default: $RISKRL_SEED or 0")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demos)

    i = sub.add_parser("irl", help="fit value-function parameters to demonstrations")
    i.add_argument("--env", required=True)
    i.add_argument("--demos", required=True)
    i.add_argument("--family", required=True, choices=("prospect", "lprospect", "entropic", "linear"),
                   type=str.lower)
    i.add_argument("--restarts", type=int, default=5)
    i.add_argument("--loss", choices=("nll", "kl"), default="nll")
    i.add_argument("--beta", type=float, default=4.0)
    i.add_argument("--epsilon", type=float, default=1e-2, help="LProspect smoothing")
    i.add_argument("--max-iters", type=int, default=200)
    i.add_argument("--grad-tol", type=float, default=1e-6)
    i.add_argument("--tol", type=float, default=1e-10, help="inner solver tolerance")
    i.add_argument("--jobs", type=int, default=1)
    i.add_argument("--seed", type=int, default=None, help="default: $RISKRL_SEED or 0")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_irl)

    e = sub.add_parser("eval", help="compare true and learned policies")
    e.add_argument("--env", required=True)
    e.add_argument("--true-vf", required=True)
    e.add_argument("--learned-vf", required=True, help="value-function record or IRL result")
    e.add_argument("--beta", type=float, default=4.0)
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--out", required=True, help="CSV of per-state TV distances")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="sample-complexity experiment")
    w.add_argument("--env", required=True)
    w.add_argument("--true-vf", required=True)
    w.add_argument("--sizes", required=True, help="comma-separated episode counts")
    w.add_argument("--datasets", type=int, default=5)
    w.add_argument("--restarts", type=int, default=5)
    w.add_argument("--beta", type=float, default=4.0)
    w.add_argument("--loss", choices=("nll", "kl"), default="nll")
    w.add_argument("--max-steps", type=int, default=100)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--seed", type=int, default=None, help="default: $RISKRL_SEED or 0")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SolverError, NoAdmissibleK, AllRestartsFailed) as exc:
        print(f"riskrl: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (RiskRLError, CLIError, OSError) as exc:
        print(f"riskrl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
