"""Comparison policies and the shared evaluation harness.

A policy maps the (num_agents, obs_dim) observation matrix to raw joint
actions and names the server allocation rule it runs under. The hybrid
baselines wrap a trained actor: NTO overrides the offloading target with the
nearest server, ECRA overrides the allocation with an even split.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .compute import OffloadDecision
from .environment import EQUAL, PROPORTIONAL, VecEdgeEnv
from .maddpg import INDEPENDENT, Maddpg, _accumulate, _episode_record, episode_seed, train
from .scenario import ScenarioConfig

EVAL_STREAM = 1
METRICS = ("avg_cost", "avg_delay", "avg_energy", "reward")


class EmptySummaryError(ValueError):
    pass


def nearest_server(position, server_positions) -> int:
    d = np.linalg.norm(np.asarray(server_positions, dtype=float) - np.asarray(position, dtype=float), axis=1)
    return int(np.argmin(d))


def nto_policy(position, server_positions, server_cpu: Sequence[float], fraction: float) -> OffloadDecision:
    """Offload to the nearest server; ``fraction`` comes from the learned allocation head."""
    m = nearest_server(position, server_positions)
    return OffloadDecision(m, fraction * server_cpu[m], fraction)


def ecra_allocation(server_cpu: float, assigned: Sequence[int]) -> dict[int, float]:
    if not assigned:
        raise ValueError("ECRA needs at least one assigned vehicle")
    share = server_cpu / len(assigned)
    return {v: share for v in assigned}


class Policy:
    allocation = PROPORTIONAL

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ActorPolicy(Policy):
    """Greedy decentralized execution of a trained learner."""

    def __init__(self, learner: Maddpg):
        self.learner = learner

    def __call__(self, obs):
        return self.learner.act(obs)


class RandomPolicy(Policy):
    def __init__(self, action_dim: int, seed: int = 0):
        self.action_dim = action_dim
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1CE]))

    def __call__(self, obs):
        return self.rng.uniform(-1.0, 1.0, size=(len(obs), self.action_dim))


def nearest_from_observations(obs: np.ndarray) -> np.ndarray:
    """Nearest server per agent, read from the observation's position fields.

    Positions are all scaled by the same area side, so the argmin matches
    the one in meters.
    """
    obs = np.asarray(obs, dtype=float)
    own = obs[:, :2]
    servers = obs[:, 6:].reshape(len(obs), -1, 2)
    d = np.linalg.norm(servers - own[:, None, :], axis=-1)
    return np.argmin(d, axis=1)


def nto_actions(actions: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Rewrite offloading logits to pick the nearest server, keeping the CPU request entry."""
    out = np.array(actions, dtype=float, copy=True)
    near = nearest_from_observations(obs)
    out[:, :-1] = -1.0
    out[np.arange(len(out)), near + 1] = 1.0
    return out


class NtoPolicy(Policy):
    def __init__(self, base: Policy):
        self.base = base

    def __call__(self, obs):
        return nto_actions(self.base(obs), obs)


class EcraPolicy(Policy):
    allocation = EQUAL

    def __init__(self, base: Policy):
        self.base = base

    def __call__(self, obs):
        return self.base(obs)


def make_policy(name: str, learner: Maddpg | None, action_dim: int, seed: int = 0) -> Policy:
    if name == "random":
        return RandomPolicy(action_dim, seed)
    if learner is None:
        raise ValueError(f"policy {name!r} needs a trained learner")
    base = ActorPolicy(learner)
    if name in ("jtocra", "idtocra"):
        return base
    if name == "nto":
        return NtoPolicy(base)
    if name == "ecra":
        return EcraPolicy(base)
    raise ValueError(f"unknown policy {name!r}")


def idtocra_train(cfg: ScenarioConfig, env: VecEdgeEnv | None = None, episodes: int | None = None,
                  seed: int | None = None, log=None):
    """Independent DDPG: each critic sees only its own observation and action."""
    return train(cfg, env, episodes, seed, critic_mode=INDEPENDENT, log=log)


def rollout(env: VecEdgeEnv, policy: Policy, seed: int) -> dict:
    """One greedy episode; returns the same record schema as training."""
    _, obs = env.reset(seed)
    totals = dict(reward=0.0, cost=0.0, delay=0.0, energy=0.0, deadline=0, vehicle_energy=0,
                  server_energy=0, failed=0)
    done = False
    while not done:
        out = env.step(policy(obs), policy.allocation)
        _accumulate(totals, out)
        obs, done = out.observations, out.done
    return _episode_record(0, totals, env.cfg.horizon)


def evaluate(policy: Policy, cfg: ScenarioConfig, episodes: int, seed: int = 0,
             norm_cfg: ScenarioConfig | None = None) -> list[dict]:
    """Evaluation episodes on seeds disjoint from training; identical seeds
    across policies give paired comparisons."""
    env = VecEdgeEnv(cfg, norm_cfg=norm_cfg)
    records = []
    for ep in range(episodes):
        rec = rollout(env, policy, episode_seed(seed, ep, EVAL_STREAM))
        rec["episode"] = ep
        records.append(rec)
    return records


def summarize(records: list[dict]) -> dict:
    if not records:
        raise EmptySummaryError("no evaluation episodes to summarize")
    out = {"episodes": len(records)}
    for key in METRICS:
        vals = np.array([r[key] for r in records], dtype=float)
        out[key] = float(vals.mean())
        out[key + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return out


def sign_test_p(wins: int, n: int) -> float:
    """One-sided binomial sign test: P(X >= wins) under X ~ Bin(n, 1/2)."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n
