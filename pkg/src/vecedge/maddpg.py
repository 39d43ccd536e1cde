"""Multi-agent DDPG with centralized critics and decentralized actors.

Each agent owns an actor mapping its local observation to a raw action in
(-1, 1)^(M+2). Critics score (global state, joint action); with
``shared_critic`` one critic serves every agent. ``critic_mode="independent"``
gives the independent-DDPG variant whose critics see only the agent's own
observation and action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .environment import VecEdgeEnv
from .nn import AdamState, Mlp, adam_step, backward, forward, init_mlp, load_params, save_params
from .scenario import ScenarioConfig

CENTRALIZED, INDEPENDENT = "centralized", "independent"


class UnderfullBufferError(ValueError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    next_state: np.ndarray
    actions: np.ndarray  # (N, action_dim)
    obs: np.ndarray  # (N, obs_dim)
    next_obs: np.ndarray
    reward: float
    done: bool


class Batch(NamedTuple):
    state: np.ndarray
    next_state: np.ndarray
    actions: np.ndarray
    obs: np.ndarray
    next_obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int, num_agents: int, obs_dim: int,
                 action_dim: int, dtype=np.float32):
        self.capacity = capacity
        self.size = 0
        self.cursor = 0
        self.state = np.zeros((capacity, state_dim), dtype)
        self.next_state = np.zeros((capacity, state_dim), dtype)
        self.actions = np.zeros((capacity, num_agents, action_dim), dtype)
        self.obs = np.zeros((capacity, num_agents, obs_dim), dtype)
        self.next_obs = np.zeros((capacity, num_agents, obs_dim), dtype)
        self.reward = np.zeros(capacity, dtype)
        self.done = np.zeros(capacity, dtype)

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self.cursor
        self.state[i] = tr.state
        self.next_state[i] = tr.next_state
        self.actions[i] = tr.actions
        self.obs[i] = tr.obs
        self.next_obs[i] = tr.next_obs
        self.reward[i] = tr.reward
        self.done[i] = float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch_size:
            raise UnderfullBufferError(f"buffer holds {self.size} transitions, need {batch_size}")
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.state[idx], self.next_state[idx], self.actions[idx], self.obs[idx],
                     self.next_obs[idx], self.reward[idx], self.done[idx])


@dataclass
class Agent:
    actor: Mlp
    actor_target: Mlp
    critic: Mlp
    critic_target: Mlp
    actor_opt: AdamState
    critic_opt: AdamState


def soft_update(online: Mlp, target: Mlp, rate: float) -> Mlp:
    """target <- rate * online + (1 - rate) * target, in place."""
    for p, q in zip(online.params(), target.params()):
        q *= 1.0 - rate
        q += rate * p
    return target


def act_greedy(agent: Agent, observation) -> np.ndarray:
    """Noise-free action from the agent's own observation only."""
    return forward(agent.actor, observation)[0]


def build_actor(obs_dim, action_dim, hidden, rng, dtype) -> Mlp:
    sizes = [obs_dim, *hidden, action_dim]
    acts = ["relu"] * len(hidden) + ["tanh"]
    return init_mlp(sizes, acts, rng, final_scale=1e-3, dtype=dtype)


def build_critic(in_dim, hidden, rng, dtype) -> Mlp:
    sizes = [in_dim, *hidden, 1]
    return init_mlp(sizes, ["relu"] * len(hidden) + ["identity"], rng, dtype=dtype)


class Maddpg:
    def __init__(self, num_agents: int, obs_dim: int, action_dim: int, state_dim: int,
                 cfg: ScenarioConfig, seed: int = 0, critic_mode: str = CENTRALIZED):
        if critic_mode not in (CENTRALIZED, INDEPENDENT):
            raise ValueError(f"unknown critic mode {critic_mode!r}")
        self.cfg = cfg
        self.num_agents, self.obs_dim = num_agents, obs_dim
        self.action_dim, self.state_dim = action_dim, state_dim
        self.critic_mode = critic_mode
        self.shared_critic = cfg.shared_critic and critic_mode == CENTRALIZED
        self.dtype = np.dtype(cfg.dtype)
        self.gamma = cfg.discount
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
        self.critic_in_dim = (state_dim + num_agents * action_dim if critic_mode == CENTRALIZED
                              else obs_dim + action_dim)
        shared = None
        self.agents: list[Agent] = []
        for _ in range(num_agents):
            actor = build_actor(obs_dim, action_dim, cfg.actor_hidden, rng, self.dtype)
            if shared is None or not self.shared_critic:
                critic = build_critic(self.critic_in_dim, cfg.critic_hidden, rng, self.dtype)
                critic_parts = (critic, critic.copy(), AdamState.for_net(critic, cfg.lr_critic))
                shared = critic_parts
            critic, critic_target, critic_opt = shared
            self.agents.append(Agent(actor, actor.copy(), critic, critic_target,
                                     AdamState.for_net(actor, cfg.lr_actor), critic_opt))

    # -- acting ---------------------------------------------------------
    def act(self, obs, noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
        obs = np.asarray(obs)
        acts = np.stack([act_greedy(ag, o) for ag, o in zip(self.agents, obs)]).astype(float)
        if noise_std > 0:
            acts = np.clip(acts + rng.normal(0.0, noise_std, size=acts.shape), -1.0, 1.0)
        return acts

    # -- critic plumbing ------------------------------------------------
    def critic_input(self, n: int, state, obs, actions) -> np.ndarray:
        """Critic input for agent ``n`` from batched state (B, S), obs (B, N, O), actions (B, N, A)."""
        if self.critic_mode == CENTRALIZED:
            return np.concatenate([state, actions.reshape(len(actions), -1)], axis=1)
        return np.concatenate([obs[:, n], actions[:, n]], axis=1)

    def _action_slice(self, n: int) -> slice:
        if self.critic_mode == CENTRALIZED:
            start = self.state_dim + n * self.action_dim
        else:
            start = self.obs_dim
        return slice(start, start + self.action_dim)

    def target_values(self, n: int, batch: Batch) -> np.ndarray:
        """r + gamma * Q'(s', a') with a' from the target actors; no bootstrap at episode end."""
        if self.critic_mode == CENTRALIZED:
            next_actions = np.stack(
                [forward(ag.actor_target, batch.next_obs[:, j])[0] for j, ag in enumerate(self.agents)],
                axis=1)
        else:
            next_actions = np.zeros_like(batch.actions)
            next_actions[:, n] = forward(self.agents[n].actor_target, batch.next_obs[:, n])[0]
        x = self.critic_input(n, batch.next_state, batch.next_obs, next_actions)
        q_next = forward(self.agents[n].critic_target, x)[0][:, 0]
        return batch.reward + self.gamma * (1.0 - batch.done) * q_next

    def critic_loss(self, n: int, batch: Batch, targets=None) -> float:
        y = self.target_values(n, batch) if targets is None else targets
        q = forward(self.agents[n].critic, self.critic_input(n, batch.state, batch.obs, batch.actions))[0][:, 0]
        return float(np.mean((y - q) ** 2))

    def update_critic(self, n: int, batch: Batch) -> float:
        """One Adam step on the mean squared TD error; returns the pre-step loss."""
        ag = self.agents[n]
        y = self.target_values(n, batch)
        x = self.critic_input(n, batch.state, batch.obs, batch.actions)
        q, cache = forward(ag.critic, x)
        resid = q[:, 0] - y
        grad_out = (2.0 / len(y)) * resid[:, None]
        grads, _ = backward(ag.critic, cache, grad_out)
        adam_step(ag.critic, grads, ag.critic_opt)
        return float(np.mean(resid ** 2))

    def actor_objective(self, n: int, batch: Batch) -> float:
        ag = self.agents[n]
        actions = batch.actions.copy()
        actions[:, n] = forward(ag.actor, batch.obs[:, n])[0]
        q = forward(ag.critic, self.critic_input(n, batch.state, batch.obs, actions))[0]
        return float(np.mean(q))

    def actor_gradients(self, n: int, batch: Batch):
        """Gradient of -mean Q w.r.t. the actor parameters, plus the objective."""
        ag = self.agents[n]
        a_n, a_cache = forward(ag.actor, batch.obs[:, n])
        actions = batch.actions.copy()
        actions[:, n] = a_n
        q, c_cache = forward(ag.critic, self.critic_input(n, batch.state, batch.obs, actions))
        B = len(q)
        _, dq_dx = backward(ag.critic, c_cache, np.full((B, 1), -1.0 / B, dtype=q.dtype),
                            param_grads=False)
        grads, _ = backward(ag.actor, a_cache, dq_dx[:, self._action_slice(n)])
        return grads, float(np.mean(q))

    def update_actor(self, n: int, batch: Batch) -> float:
        """One Adam ascent step on mean Q(s, a | a_n = actor(o_n)); returns the pre-step objective."""
        grads, objective = self.actor_gradients(n, batch)
        adam_step(self.agents[n].actor, grads, self.agents[n].actor_opt)
        return objective

    def update_shared(self, batches: list[Batch]) -> float:
        """Shared-critic step: one critic update on the agents' stacked batches,
        then one actor update per agent against the updated critic.

        Agent ``n``'s actor is trained on ``batches[n]``; all critic passes run
        as a single stacked matrix product.
        """
        if not self.shared_critic:
            raise RuntimeError("update_shared requires a shared centralized critic")
        B = len(batches[0].reward)
        stacked = Batch(*(np.concatenate(parts) for parts in zip(*batches)))
        loss = self.update_critic(0, stacked)

        critic = self.agents[0].critic
        actions = stacked.actions.copy()
        actor_caches = []
        for n, ag in enumerate(self.agents):
            rows = slice(n * B, (n + 1) * B)
            a_n, cache = forward(ag.actor, stacked.obs[rows, n])
            actions[rows, n] = a_n
            actor_caches.append(cache)
        q, c_cache = forward(critic, self.critic_input(0, stacked.state, stacked.obs, actions))
        _, dq_dx = backward(critic, c_cache, np.full(q.shape, -1.0 / B, dtype=q.dtype),
                            param_grads=False)
        for n, ag in enumerate(self.agents):
            rows = slice(n * B, (n + 1) * B)
            grads, _ = backward(ag.actor, actor_caches[n], dq_dx[rows, self._action_slice(n)])
            adam_step(ag.actor, grads, ag.actor_opt)
            soft_update(ag.actor, ag.actor_target, self.cfg.soft_update_rate)
        soft_update(critic, self.agents[0].critic_target, self.cfg.soft_update_rate)
        return loss

    def update_step(self, buffer: "ReplayBuffer", rng: np.random.Generator) -> float:
        """Per-step learning: every agent samples its own batch and updates."""
        batches = [buffer.sample(self.cfg.batch_size, rng) for _ in range(self.num_agents)]
        if self.shared_critic:
            return self.update_shared(batches)
        losses = []
        for n, batch in enumerate(batches):
            losses.append(self.update_critic(n, batch))
            self.update_actor(n, batch)
            self.update_targets(n)
        return float(np.mean(losses))

    def update_targets(self, n: int) -> None:
        ag, lam = self.agents[n], self.cfg.soft_update_rate
        soft_update(ag.critic, ag.critic_target, lam)
        soft_update(ag.actor, ag.actor_target, lam)

    # -- persistence ----------------------------------------------------
    def save(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for n, ag in enumerate(self.agents):
            for name, net in (("actor", ag.actor), ("actor_target", ag.actor_target),
                              ("critic", ag.critic), ("critic_target", ag.critic_target)):
                if name.startswith("critic") and self.shared_critic and n > 0:
                    continue
                p = d / f"agent{n}_{name}.npz"
                save_params(net, p)
                paths.append(p)
        meta = {"num_agents": self.num_agents, "obs_dim": self.obs_dim, "action_dim": self.action_dim,
                "state_dim": self.state_dim, "critic_mode": self.critic_mode,
                "shared_critic": self.shared_critic}
        (d / "learner.json").write_text(json.dumps(meta, indent=2))
        return paths

    @classmethod
    def load(cls, directory, cfg: ScenarioConfig) -> "Maddpg":
        d = Path(directory)
        meta = json.loads((d / "learner.json").read_text())
        cfg = cfg.replace(shared_critic=bool(meta["shared_critic"]))
        learner = cls(meta["num_agents"], meta["obs_dim"], meta["action_dim"], meta["state_dim"],
                      cfg, critic_mode=meta["critic_mode"])
        for n, ag in enumerate(learner.agents):
            ag.actor = load_params(d / f"agent{n}_actor.npz")
            ag.actor_target = load_params(d / f"agent{n}_actor_target.npz")
            if not learner.shared_critic or n == 0:
                critic = load_params(d / f"agent{n}_critic.npz")
                critic_target = load_params(d / f"agent{n}_critic_target.npz")
            ag.critic, ag.critic_target = critic, critic_target
            ag.actor_opt = AdamState.for_net(ag.actor, cfg.lr_actor)
        return learner


def episode_seed(seed: int, episode: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([seed, stream, episode]).generate_state(1)[0])


def noise_schedule(cfg: ScenarioConfig, episode: int, episodes: int) -> float:
    frac = episode / (episodes - 1) if episodes > 1 else 1.0
    return cfg.noise_start + (cfg.noise_end - cfg.noise_start) * frac


ActionHook = Callable[[np.ndarray, VecEdgeEnv], np.ndarray]


def train(cfg: ScenarioConfig, env: VecEdgeEnv | None = None, episodes: int | None = None,
          seed: int | None = None, critic_mode: str = CENTRALIZED,
          action_hook: ActionHook | None = None, allocation: str | None = None,
          log: Callable[[dict], None] | None = None) -> tuple[Maddpg, list[dict]]:
    """Run the CTDE training loop and return the learner and per-episode metrics.

    ``action_hook`` post-processes the noisy joint action before execution
    (used by the hybrid baselines); the executed action is what gets stored.
    """
    env = env or VecEdgeEnv(cfg)
    episodes = cfg.episodes if episodes is None else episodes
    seed = cfg.rng_seed if seed is None else seed
    learner = Maddpg(env.num_agents, env.obs_dim, env.action_dim, env.state_dim, cfg, seed, critic_mode)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim, env.num_agents, env.obs_dim,
                          env.action_dim, learner.dtype)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0B]))
    warmup = max(cfg.batch_size, cfg.warmup_batches * cfg.batch_size)
    metrics = []
    for ep in range(episodes):
        noise = noise_schedule(cfg, ep, episodes)
        state, obs = env.reset(episode_seed(seed, ep))
        totals = dict(reward=0.0, cost=0.0, delay=0.0, energy=0.0, deadline=0, vehicle_energy=0,
                      server_energy=0, failed=0)
        losses = []
        done = False
        while not done:
            actions = learner.act(obs, noise, rng)
            if action_hook is not None:
                actions = action_hook(actions, env)
            out = env.step(actions, allocation)
            done = out.done
            buffer.push(Transition(state, out.state, actions, obs, out.observations, out.reward, done))
            _accumulate(totals, out)
            state, obs = out.state, out.observations
            if len(buffer) >= warmup:
                losses.append(learner.update_step(buffer, rng))
        rec = _episode_record(ep, totals, cfg.horizon)
        rec["noise_std"] = noise
        rec["critic_loss"] = float(np.mean(losses)) if losses else None
        metrics.append(rec)
        if log is not None:
            log(rec)
    return learner, metrics


def _accumulate(totals: dict, out) -> None:
    totals["reward"] += out.reward
    totals["cost"] += out.total_cost
    totals["delay"] += out.total_delay
    totals["energy"] += out.total_energy
    totals["deadline"] += int(out.deadline_violations.sum())
    totals["vehicle_energy"] += int(out.vehicle_energy_violations.sum())
    totals["server_energy"] += int(out.server_energy_violations.sum())
    totals["failed"] += int(out.failed_offloads.sum())


def _episode_record(ep: int, totals: dict, horizon: int) -> dict:
    return {
        "episode": ep,
        "reward": totals["reward"],
        "avg_cost": totals["cost"] / horizon,
        "avg_delay": totals["delay"] / horizon,
        "avg_energy": totals["energy"] / horizon,
        "deadline_violations": totals["deadline"],
        "vehicle_energy_violations": totals["vehicle_energy"],
        "server_energy_violations": totals["server_energy"],
        "failed_offloads": totals["failed"],
    }
