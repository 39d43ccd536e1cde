"""Multi-agent vehicular edge-computing environment.

Each vehicle is an agent. At every slot it observes its own position, task
and CPU plus the (static) server positions, and emits a raw action vector of
``M + 2`` reals in [-1, 1]: ``M + 1`` offloading logits (index 0 = local,
index ``m`` = server ``m - 1``) followed by a CPU-request entry.

Vector layouts (``LAYOUT_VERSION``); every feature is scaled to [0, 1] by
its configured range (positions by the area side):

* global state: for each vehicle ``[x, y, F_v, E_v, l, mu, tau]``, then for
  each server ``[x, y, F_m, E_m]``.
* observation: ``[x, y, l, mu, tau, F_n]`` then ``[x_m, y_m]`` for every server.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mobility
from .channel import channel_gain, transmission_rate
from .compute import CostBreakdown, OffloadDecision, RateZeroError, task_cost
from .scenario import ScenarioConfig, Task, generate_scenario, sample_tasks

LAYOUT_VERSION = 1
PROPORTIONAL, EQUAL = "proportional", "equal"


def decode_action(raw, server_cpu: Sequence[float], min_fraction: float = 0.05) -> OffloadDecision:
    raw = np.asarray(raw, dtype=float)
    num_servers = len(server_cpu)
    if raw.shape != (num_servers + 2,):
        raise ValueError(f"expected {num_servers + 2} action entries, got {raw.shape}")
    target = int(np.argmax(raw[: num_servers + 1]))
    frac = float(np.clip((raw[-1] + 1.0) / 2.0, min_fraction, 1.0))
    if target == 0:
        return OffloadDecision(None, 0.0, frac)
    m = target - 1
    return OffloadDecision(m, frac * server_cpu[m], frac)


def resolve_allocation(requests: dict[int, list[tuple[int, float]]],
                       capacity: Sequence[float]) -> dict[int, float]:
    """Grant CPU requests, scaling a server's requests down proportionally
    when they exceed its capacity."""
    granted = {}
    for m, reqs in requests.items():
        total = sum(f for _, f in reqs)
        scale = 1.0 if total <= capacity[m] else capacity[m] / total
        for v, f in reqs:
            granted[v] = f * scale
    return granted


def equal_allocation(requests: dict[int, list[tuple[int, float]]],
                     capacity: Sequence[float]) -> dict[int, float]:
    """Split each server's capacity evenly across its clients, ignoring requests."""
    return {v: capacity[m] / len(reqs) for m, reqs in requests.items() for v, _ in reqs}


def compute_reward(costs: Sequence[CostBreakdown], vehicle_energy_over=(), server_energy_over=(),
                   penalty_deadline: float = 1.0, penalty_energy: float = 1.0) -> float:
    cost = sum(c.cost for c in costs)
    penalty = (penalty_deadline * sum(c.deadline_overrun for c in costs)
               + penalty_energy * sum(vehicle_energy_over)
               + penalty_energy * sum(server_energy_over))
    return -(cost + penalty)


@dataclass
class SlotResult:
    costs: list[CostBreakdown]
    granted: np.ndarray
    vehicle_energy_over: np.ndarray
    server_energy_over: np.ndarray
    failed: np.ndarray
    reward: float

    @property
    def deadline_violations(self) -> np.ndarray:
        return np.array([c.deadline_overrun > 0 for c in self.costs])


def evaluate_slot(tasks: Sequence[Task], decisions: Sequence[OffloadDecision], cpu, capacitance,
                  power, energy_budget, rates, server_cpu, server_energy,
                  cfg: ScenarioConfig, allocation=PROPORTIONAL) -> SlotResult:
    """Resolve allocations and cost every vehicle's task for one slot.

    ``allocation`` names a rule (``PROPORTIONAL`` or ``EQUAL``) or is a
    callable with the signature of ``resolve_allocation``.

    ``rates[v, m]`` is the realized uplink rate from vehicle ``v`` to server
    ``m``. An offload over a zero-rate link fails: its delay is the deadline
    plus one slot and the vehicle transmits for the whole slot.
    """
    V, M = len(tasks), len(server_cpu)
    requests: dict[int, list[tuple[int, float]]] = {}
    for v, dec in enumerate(decisions):
        if not dec.is_local:
            requests.setdefault(dec.server, []).append((v, dec.requested_cpu))
    if callable(allocation):
        resolve = allocation
    else:
        resolve = equal_allocation if allocation == EQUAL else resolve_allocation
    grants = resolve(requests, server_cpu)

    costs, failed = [], np.zeros(V, dtype=bool)
    granted = np.zeros(V)
    veh_over = np.zeros(V)
    server_load = np.zeros(M)
    for v, (task, dec) in enumerate(zip(tasks, decisions)):
        rate = 0.0 if dec.is_local else float(rates[v, dec.server])
        granted[v] = grants.get(v, 0.0)
        try:
            c = task_cost(task, dec, cpu[v], capacitance[v], power[v], rate,
                          cfg.mec_energy_per_cycle, cfg.weight_delay, cfg.weight_energy,
                          granted_cpu=granted[v] if not dec.is_local else None)
        except RateZeroError:
            failed[v] = True
            delay = task.deadline + cfg.slot_duration
            energy = power[v] * cfg.slot_duration
            c = CostBreakdown(delay, energy, cfg.weight_delay * delay + cfg.weight_energy * energy,
                              cfg.slot_duration, delay, 0.0, energy, 0.0)
        costs.append(c)
        if dec.is_local:
            veh_over[v] = max(0.0, c.energy - energy_budget[v])
        else:
            server_load[dec.server] += c.energy
    srv_over = np.maximum(0.0, server_load - np.asarray(server_energy, dtype=float))
    reward = compute_reward(costs, veh_over, srv_over, cfg.penalty_deadline, cfg.penalty_energy)
    return SlotResult(costs, granted, veh_over, srv_over, failed, reward)


def _unit(x, bounds):
    lo, hi = bounds
    if hi <= lo:
        return np.full(np.shape(x), 0.5)
    return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class GlobalState:
    positions: np.ndarray
    cpu: np.ndarray
    energy_budget: np.ndarray
    tasks: np.ndarray
    server_positions: np.ndarray
    server_cpu: np.ndarray
    server_energy: np.ndarray
    t: int

    def flat(self, cfg: ScenarioConfig) -> np.ndarray:
        A = cfg.area_side
        veh = np.column_stack([
            self.positions / A,
            _unit(self.cpu, cfg.vehicle_cpu_range),
            _unit(self.energy_budget, cfg.vehicle_energy_range),
            _unit(self.tasks[:, 0], cfg.task_size_range),
            _unit(self.tasks[:, 1], cfg.task_intensity_range),
            _unit(self.tasks[:, 2], cfg.task_deadline_range),
        ])
        srv = np.column_stack([
            self.server_positions / A,
            _unit(self.server_cpu, cfg.server_cpu_range),
            _unit(self.server_energy, (0.0, cfg.server_energy)),
        ])
        return np.concatenate([veh.ravel(), srv.ravel()])


def observations(state: GlobalState, cfg: ScenarioConfig) -> np.ndarray:
    A = cfg.area_side
    own = np.column_stack([
        state.positions / A,
        _unit(state.tasks[:, 0], cfg.task_size_range),
        _unit(state.tasks[:, 1], cfg.task_intensity_range),
        _unit(state.tasks[:, 2], cfg.task_deadline_range),
        _unit(state.cpu, cfg.vehicle_cpu_range),
    ])
    servers = np.broadcast_to((state.server_positions / A).ravel(),
                              (len(own), 2 * len(state.server_positions)))
    return np.hstack([own, servers])


@dataclass
class StepOutcome:
    observations: np.ndarray
    state: np.ndarray
    reward: float
    rewards: np.ndarray
    costs: list[CostBreakdown]
    decisions: list[OffloadDecision]
    granted: np.ndarray
    deadline_violations: np.ndarray
    vehicle_energy_violations: np.ndarray
    server_energy_violations: np.ndarray
    failed_offloads: np.ndarray
    done: bool
    t: int
    info: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return sum(c.cost for c in self.costs)

    @property
    def total_delay(self) -> float:
        return sum(c.delay for c in self.costs)

    @property
    def total_energy(self) -> float:
        return sum(c.energy for c in self.costs)


class VecEdgeEnv:
    """Steppable Markov game over one scenario.

    Independent RNG streams drive mobility, task arrivals and channel
    fading, and the channel of every (vehicle, server) pair is realized each
    slot whether or not it is used, so two policies run on the same seed see
    identical tasks, trajectories and fading.

    ``norm_cfg`` (defaults to ``cfg``) supplies the ranges used to scale
    observations; it lets a policy trained on one config be evaluated on
    another without shifting its input features.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None,
                 norm_cfg: ScenarioConfig | None = None, allocation: str = PROPORTIONAL):
        self.cfg = cfg
        self.norm_cfg = norm_cfg or cfg
        self.allocation = allocation
        self.seed = cfg.rng_seed if seed is None else seed
        self.num_agents = cfg.num_vehicles
        self.num_servers = cfg.num_servers
        self.obs_dim = 6 + 2 * cfg.num_servers
        self.action_dim = cfg.num_servers + 2
        self.state_dim = 7 * cfg.num_vehicles + 4 * cfg.num_servers
        self._state: GlobalState | None = None

    def reset(self, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        if seed is not None:
            self.seed = seed
        cfg = self.cfg
        vehicles, servers = generate_scenario(cfg, self.seed)
        ss = np.random.SeedSequence([self.seed, 0x5EED])
        self._mob_rng, self._task_rng, self._chan_rng = (np.random.default_rng(s) for s in ss.spawn(3))
        self.velocity = np.array([v.velocity for v in vehicles])
        self.mean_velocity = np.array([v.mean_velocity for v in vehicles])
        self.tx_power = np.array([v.tx_power for v in vehicles])
        self.capacitance = np.array([v.capacitance for v in vehicles])
        self.vehicles, self.servers = vehicles, servers
        self._state = GlobalState(
            positions=np.array([v.position for v in vehicles]),
            cpu=np.array([v.cpu for v in vehicles]),
            energy_budget=np.array([v.energy_budget for v in vehicles]),
            tasks=sample_tasks(cfg, self._task_rng, cfg.num_vehicles),
            server_positions=np.array([s.position for s in servers]),
            server_cpu=np.array([s.cpu for s in servers]),
            server_energy=np.array([s.energy_budget for s in servers]),
            t=0,
        )
        return self.state_vector(), self.observations()

    @property
    def state(self) -> GlobalState:
        if self._state is None:
            raise RuntimeError("call reset() first")
        return self._state

    @property
    def t(self) -> int:
        return self.state.t

    def state_vector(self) -> np.ndarray:
        return self.state.flat(self.norm_cfg)

    def observations(self) -> np.ndarray:
        return observations(self.state, self.norm_cfg)

    def tasks(self) -> list[Task]:
        return [Task(*row) for row in self.state.tasks]

    def distances(self) -> np.ndarray:
        s = self.state
        return np.linalg.norm(s.positions[:, None, :] - s.server_positions[None, :, :], axis=-1)

    def realize_rates(self) -> np.ndarray:
        cfg = self.cfg
        chan = channel_gain(self.distances(), cfg, self._chan_rng)
        return transmission_rate(cfg.bandwidth, self.tx_power[:, None], chan.gain, cfg.noise_power)

    def step(self, actions, allocation: str | None = None) -> StepOutcome:
        cfg, s = self.cfg, self.state
        if s.t >= cfg.horizon:
            raise RuntimeError("episode finished; call reset()")
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.num_agents, self.action_dim):
            raise ValueError(f"expected actions of shape {(self.num_agents, self.action_dim)}")
        decisions = [decode_action(a, s.server_cpu, cfg.min_cpu_fraction) for a in actions]
        rates = self.realize_rates()
        slot = evaluate_slot(self.tasks(), decisions, s.cpu, self.capacitance, self.tx_power,
                             s.energy_budget, rates, s.server_cpu, s.server_energy, cfg,
                             allocation or self.allocation)

        pos, self.velocity, self.mean_velocity = mobility.advance(
            s.positions, self.velocity, self.mean_velocity, cfg.memory_degree, cfg.vel_std,
            cfg.slot_duration, cfg.area_side, self._mob_rng)
        s.positions = pos
        s.tasks = sample_tasks(cfg, self._task_rng, cfg.num_vehicles)
        s.t += 1
        done = s.t >= cfg.horizon
        return StepOutcome(
            observations=self.observations(),
            state=self.state_vector(),
            reward=slot.reward,
            rewards=np.full(self.num_agents, slot.reward),
            costs=slot.costs,
            decisions=decisions,
            granted=slot.granted,
            deadline_violations=slot.deadline_violations,
            vehicle_energy_violations=slot.vehicle_energy_over > 0,
            server_energy_violations=slot.server_energy_over > 0,
            failed_offloads=slot.failed,
            done=done,
            t=s.t,
            info={"rates": rates},
        )


class TrajectoryWriter:
    """JSON-lines trajectory dump, one record per step after a header line."""

    def __init__(self, path):
        self._fh = open(path, "w")
        self._fh.write(json.dumps({"format": "vecedge-trajectory", "layout_version": LAYOUT_VERSION}) + "\n")

    def write(self, outcome: StepOutcome, actions) -> None:
        rec = {
            "slot": outcome.t - 1,
            "actions": np.asarray(actions).tolist(),
            "decisions": [{"server": d.server, "requested_cpu": d.requested_cpu} for d in outcome.decisions],
            "costs": [c.__dict__ for c in outcome.costs],
            "granted_cpu": outcome.granted.tolist(),
            "reward": outcome.reward,
            "violations": {
                "deadline": outcome.deadline_violations.tolist(),
                "vehicle_energy": outcome.vehicle_energy_violations.tolist(),
                "server_energy": outcome.server_energy_violations.tolist(),
                "failed_offload": outcome.failed_offloads.tolist(),
            },
        }
        self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
