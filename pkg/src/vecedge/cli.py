"""Command-line front end.

Subcommands:

* ``train``: train a policy, writing ``manifest.json``, ``metrics.jsonl`` and
  ``checkpoint/`` under ``--outdir``. ``--from-manifest`` replays a run.
* ``evaluate``: greedy rollouts of a checkpoint; prints mean and std of the
  time-averaged cost, delay and energy.
* ``sweep``: train and evaluate every (grid value, seed) cell and write tidy
  CSV tables for plotting.
* ``oracle-check``: optimality gaps against the exact single-slot solver.

Config precedence: the TOML file (``--config``, else the bundled Table
defaults, else desk scale for ``sweep`` and ``oracle-check``), then
``VECEDGE_<FIELD>`` environment variables holding TOML literals (for
example ``VECEDGE_NUM_VEHICLES=8`` or ``VECEDGE_TASK_SIZE_RANGE_MB="[2, 2]"``),
then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (EmptySummaryError, RandomPolicy, evaluate, idtocra_train, make_policy,
                        nto_actions, rollout, summarize)
from .environment import EQUAL, VecEdgeEnv
from .maddpg import Maddpg, episode_seed, train
from .nn import CheckpointError
from .oracle import OraclePolicy, SizeBoundError, policy_gaps, random_instances, save_instances, solve_exact
from .scenario import (ConfigError, ScenarioConfig, apply_env_overrides, config_from_mapping,
                       default_config, desk_config, dump_config, load_config)

POLICIES = ("jtocra", "nto", "ecra", "idtocra", "random")
MANIFEST_FORMAT = "vecedge-run-manifest"
SWEEP_PARAMETERS = ("num_vehicles", "task_size", "server_cpu")
SWEEP_COLUMNS = ("parameter", "value", "policy", "seeds", "avg_cost", "avg_cost_std", "avg_delay",
                 "avg_delay_std", "avg_energy", "avg_energy_std", "reward", "reward_std")
SEED_COLUMNS = ("parameter", "value", "policy", "seed", "episodes", "avg_cost", "avg_delay",
                "avg_energy", "reward")
GAP_COLUMNS = ("policy", "instance", "policy_cost", "oracle_cost", "gap")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def resolve_config(path: str | None, paper_scale: bool = False, desk_default: bool = False,
                   desk: bool = False) -> ScenarioConfig:
    if path:
        cfg = load_config(path)
    elif desk or (desk_default and not paper_scale):
        cfg = desk_config()
    else:
        cfg = default_config()
    return apply_env_overrides(cfg)


def apply_sweep_value(cfg: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """Grid value in display units: vehicles (count), task size (Mb), server CPU (GHz)."""
    if parameter == "num_vehicles":
        return cfg.replace(num_vehicles=int(value))
    if parameter == "task_size":
        return cfg.replace(task_size_range=(value * 1e6, value * 1e6))
    if parameter == "server_cpu":
        return cfg.replace(server_cpu_range=(value * 1e9, value * 1e9))
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def train_policy(cfg: ScenarioConfig, policy: str, episodes: int, seed: int, log=None):
    """Dispatch training per policy. Returns (learner or None, metrics)."""
    if policy == "jtocra":
        return train(cfg, episodes=episodes, seed=seed, log=log)
    if policy == "idtocra":
        return idtocra_train(cfg, episodes=episodes, seed=seed, log=log)
    if policy == "nto":
        return train(cfg, episodes=episodes, seed=seed, log=log,
                     action_hook=lambda a, env: nto_actions(a, env.observations()))
    if policy == "ecra":
        return train(cfg, episodes=episodes, seed=seed, log=log, allocation=EQUAL)
    if policy == "random":
        env = VecEdgeEnv(cfg)
        rand = RandomPolicy(env.action_dim, seed)
        metrics = []
        for ep in range(episodes):
            rec = rollout(env, rand, episode_seed(seed, ep))
            rec["episode"] = ep
            metrics.append(rec)
            if log is not None:
                log(rec)
        return None, metrics
    raise ValueError(f"unknown policy {policy!r}")


def _jsonl_logger(fh):
    def log(rec):
        fh.write(json.dumps(rec) + "\n")
        fh.flush()
    return log


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{path}: not a run manifest")
    return doc


def run_training(cfg: ScenarioConfig, policy: str, seed: int, episodes: int, outdir: Path,
                 argv: list[str]) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "artifact_version": __version__,
        "command": ["train", "--policy", policy, "--seed", str(seed), "--episodes", str(episodes)],
        "argv": argv,
        "policy": policy,
        "seed": seed,
        "episodes": episodes,
        "config": cfg.to_dict(),
        "started_at": _now(),
        "finished_at": None,
        "outputs": {"metrics": "metrics.jsonl", "checkpoint": None if policy == "random" else "checkpoint",
                    "config": "config.toml"},
    }
    write_manifest(outdir / "manifest.json", manifest)
    (outdir / "config.toml").write_text(dump_config(cfg))
    with open(outdir / "metrics.jsonl", "w") as fh:
        learner, _ = train_policy(cfg, policy, episodes, seed, _jsonl_logger(fh))
    if learner is not None:
        ckpt = outdir / "checkpoint"
        learner.save(ckpt)
        (ckpt / "config.toml").write_text(dump_config(cfg))
        (ckpt / "policy.json").write_text(json.dumps({"policy": policy}) + "\n")
    manifest["finished_at"] = _now()
    write_manifest(outdir / "manifest.json", manifest)
    return manifest


def load_checkpoint(directory) -> tuple[Maddpg, ScenarioConfig, str]:
    d = Path(directory)
    if not (d / "learner.json").exists() and (d / "checkpoint" / "learner.json").exists():
        d = d / "checkpoint"
    if not (d / "learner.json").exists():
        raise CheckpointError(f"{directory}: no learner.json found")
    cfg = load_config(d / "config.toml")
    policy = json.loads((d / "policy.json").read_text())["policy"] if (d / "policy.json").exists() else "jtocra"
    return Maddpg.load(d, cfg), cfg, policy


# -- subcommands --------------------------------------------------------------------------

def cmd_train(args) -> int:
    argv = list(args.argv)
    if args.from_manifest:
        man = read_manifest(args.from_manifest)
        cfg = config_from_mapping(man["config"])
        policy, seed, episodes = man["policy"], man["seed"], man["episodes"]
    else:
        cfg = resolve_config(args.config, args.paper_scale, desk=args.desk)
        policy = args.policy
        seed = cfg.rng_seed if args.seed is None else args.seed
        episodes = cfg.episodes if args.episodes is None else args.episodes
        cfg = cfg.replace(rng_seed=seed, episodes=episodes)
    outdir = Path(args.outdir)
    t0 = time.time()
    run_training(cfg, policy, seed, episodes, outdir, argv)
    print(f"trained {policy} for {episodes} episodes (seed {seed}) in {time.time() - t0:.1f}s -> {outdir}")
    return 0


def cmd_evaluate(args) -> int:
    if args.episodes < 0:
        raise ValueError("--episodes must be non-negative")
    if args.policy == "random" and not args.checkpoint:
        cfg = resolve_config(args.config, args.paper_scale, desk=args.desk)
        policy = make_policy("random", None, cfg.num_servers + 2, args.seed or 0)
    else:
        if not args.checkpoint:
            raise ValueError("evaluate needs --checkpoint")
        learner, cfg, trained = load_checkpoint(args.checkpoint)
        name = args.policy or ("idtocra" if trained == "idtocra" else "jtocra")
        policy = make_policy(name, learner, learner.action_dim, args.seed or 0)
    records = evaluate(policy, cfg, args.episodes, args.seed or 0)
    summary = summarize(records)
    text = json.dumps(summary, indent=2)
    print(text)
    if args.outdir:
        out = Path(args.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text + "\n")
        with open(out / "episodes.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return 0


def run_sweep(base: ScenarioConfig, parameter: str, grid, policies, seeds, episodes: int,
              eval_episodes: int, outdir: Path, checkpoint=None, log=print) -> list[dict]:
    """Train per (value, seed) cell unless ``checkpoint`` is given, then evaluate
    every policy on the cell's config. Returns the per-seed rows."""
    outdir.mkdir(parents=True, exist_ok=True)
    if checkpoint is not None and parameter == "num_vehicles":
        raise ValueError("a fixed checkpoint cannot be reused across vehicle counts")
    rows = []
    for value in grid:
        cfg = apply_sweep_value(base, parameter, value)
        for seed in seeds:
            learners: dict[str, Maddpg] = {}
            norm_cfg = None
            if checkpoint is not None:
                learners["jtocra"], norm_cfg, _ = load_checkpoint(checkpoint)
            else:
                cell = outdir / "cells" / f"{parameter}={value:g}" / f"seed{seed}"
                needs = {"idtocra" if p == "idtocra" else "jtocra" for p in policies if p != "random"}
                for kind in sorted(needs):
                    run_training(cfg, kind, seed, episodes, cell / kind, ["sweep"])
                    learners[kind], _, _ = load_checkpoint(cell / kind)
            for pol in policies:
                learner = learners.get("idtocra" if pol == "idtocra" else "jtocra")
                policy = make_policy(pol, learner, cfg.num_servers + 2, seed)
                summ = summarize(evaluate(policy, cfg, eval_episodes, seed, norm_cfg))
                row = {"parameter": parameter, "value": value, "policy": pol, "seed": seed,
                       "episodes": eval_episodes, **{k: summ[k] for k in SEED_COLUMNS[5:]}}
                rows.append(row)
                if log:
                    log(f"{parameter}={value:g} seed={seed} {pol}: cost={row['avg_cost']:.4f} "
                        f"delay={row['avg_delay']:.4f} energy={row['avg_energy']:.4f}")
    write_csv(outdir / "sweep_seeds.csv", SEED_COLUMNS, rows)
    write_csv(outdir / "sweep.csv", SWEEP_COLUMNS, aggregate_sweep(rows))
    return rows


def aggregate_sweep(rows: list[dict]) -> list[dict]:
    out = []
    keys = []
    for r in rows:
        k = (r["parameter"], r["value"], r["policy"])
        if k not in keys:
            keys.append(k)
    for k in keys:
        sel = [r for r in rows if (r["parameter"], r["value"], r["policy"]) == k]
        row = {"parameter": k[0], "value": k[1], "policy": k[2], "seeds": len(sel)}
        for m in ("avg_cost", "avg_delay", "avg_energy", "reward"):
            vals = np.array([r[m] for r in sel])
            row[m] = float(vals.mean())
            row[m + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def cmd_sweep(args) -> int:
    if not args.grid:
        raise ValueError("--grid must not be empty")
    cfg = resolve_config(args.config, args.paper_scale, desk_default=True)
    episodes = args.episodes if args.episodes is not None else (cfg.episodes if args.paper_scale else 300)
    run_sweep(cfg, args.parameter, args.grid, args.policies, args.seeds, episodes, args.eval_episodes,
              Path(args.outdir), args.checkpoint)
    print(f"wrote {Path(args.outdir) / 'sweep.csv'}")
    return 0


def oracle_report(cfg: ScenarioConfig, count: int, seed: int, learner: Maddpg | None = None) -> dict:
    instances = random_instances(cfg, count, seed)
    policies = {"oracle": OraclePolicy(), "random": RandomPolicy(cfg.num_servers + 2, seed)}
    if learner is not None:
        for name in ("jtocra", "nto", "ecra"):
            policies[name] = make_policy(name, learner, learner.action_dim, seed)
    oracle_costs = [solve_exact(inst).cost for inst in instances]
    rows, summary = [], {}
    for name, pol in policies.items():
        gaps = policy_gaps(pol, instances, cfg, oracle_costs)
        for g in gaps:
            rows.append({"policy": name, **g})
        summary[name] = float(np.mean([g["gap"] for g in gaps]))
    return {"instances": instances, "rows": rows, "mean_gap": summary}


def cmd_oracle_check(args) -> int:
    learner = None
    if args.checkpoint:
        learner, cfg, _ = load_checkpoint(args.checkpoint)
    else:
        cfg = resolve_config(args.config, False, desk_default=True)
    report = oracle_report(cfg, args.instances, args.seed, learner)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    save_instances(report["instances"], out / "instances.json")
    write_csv(out / "gaps.csv", GAP_COLUMNS, report["rows"])
    detail = []
    for k, inst in enumerate(report["instances"]):
        best = solve_exact(inst)
        detail.append({"instance": k, "assignment": list(best.assignment), "allocation": best.allocation.tolist(),
                       "cost": best.cost, "breakdown": best.breakdown})
    (out / "oracle_solutions.json").write_text(json.dumps(detail, indent=2) + "\n")
    (out / "summary.json").write_text(json.dumps(report["mean_gap"], indent=2) + "\n")
    print(json.dumps(report["mean_gap"], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecedge", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy_default="jtocra"):
        sp.add_argument("--config", help="scenario TOML file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--policy", choices=POLICIES, default=policy_default)
        sp.add_argument("--outdir")
        sp.add_argument("--paper-scale", action="store_true",
                        help="use the full Table defaults instead of desk scale")
        sp.add_argument("--desk", action="store_true",
                        help="use the desk-scale scenario (4 vehicles, 2 servers, 500 episodes)")

    t = sub.add_parser("train", help="train a policy")
    common(t)
    t.add_argument("--from-manifest", help="replay the run recorded in a manifest.json")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint")
    common(e, policy_default=None)
    e.add_argument("--checkpoint")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="parameter sweep over trained policies")
    common(s)
    s.add_argument("--parameter", choices=SWEEP_PARAMETERS, required=True)
    s.add_argument("--grid", type=float, nargs="*", required=True)
    s.add_argument("--policies", nargs="+", choices=POLICIES, default=["jtocra", "nto", "ecra"])
    s.add_argument("--seeds", type=int, nargs="+", default=[0])
    s.add_argument("--eval-episodes", type=int, default=20)
    s.add_argument("--checkpoint", help="evaluate this checkpoint at every grid point instead of retraining")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", help="optimality gaps against the exact solver")
    common(o)
    o.add_argument("--instances", type=int, default=50)
    o.add_argument("--checkpoint")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    if args.command == "evaluate" and args.episodes is None:
        args.episodes = 100
    if args.command in ("train", "sweep", "oracle-check") and args.outdir is None:
        parser.error(f"{args.command} requires --outdir")
    if args.command == "oracle-check" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, SizeBoundError, EmptySummaryError, ValueError,
            FileNotFoundError) as exc:
        print(f"vecedge: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
