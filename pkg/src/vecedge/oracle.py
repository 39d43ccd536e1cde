"""Exact single-slot solver for small instances.

Enumerates every categorical offloading assignment and, for each server,
allocates CPU optimally for the chosen clients. Costs are evaluated with a
vectorized path written independently of the environment's per-vehicle
evaluation so the two can be cross-checked.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compute import OffloadDecision
from .environment import EQUAL, PROPORTIONAL, GlobalState, VecEdgeEnv, decode_action, evaluate_slot, observations
from .scenario import ScenarioConfig, Task

MAX_VEHICLES, MAX_SERVERS = 6, 3


class SizeBoundError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass
class SlotInstance:
    tasks: np.ndarray  # (V, 3): size, intensity, deadline
    cpu: np.ndarray
    capacitance: np.ndarray
    power: np.ndarray
    energy_budget: np.ndarray
    server_cpu: np.ndarray
    server_energy: np.ndarray
    rates: np.ndarray  # (V, M), frozen realization
    positions: np.ndarray
    server_positions: np.ndarray
    weight_delay: float = 0.5
    weight_energy: float = 0.5
    penalty_deadline: float = 1.0
    penalty_energy: float = 1.0
    energy_per_cycle: float = 8.2e-28
    slot_duration: float = 1.0

    @property
    def num_vehicles(self) -> int:
        return len(self.tasks)

    @property
    def num_servers(self) -> int:
        return len(self.server_cpu)

    def config(self, base: ScenarioConfig) -> ScenarioConfig:
        """``base`` with this instance's cost parameters."""
        return base.replace(weight_delay=self.weight_delay, weight_energy=self.weight_energy,
                            penalty_deadline=self.penalty_deadline, penalty_energy=self.penalty_energy,
                            mec_energy_per_cycle=self.energy_per_cycle, slot_duration=self.slot_duration,
                            num_vehicles=self.num_vehicles, num_servers=self.num_servers)

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SlotInstance":
        arrays = {"tasks", "cpu", "capacitance", "power", "energy_budget", "server_cpu",
                  "server_energy", "rates", "positions", "server_positions"}
        return cls(**{k: (np.asarray(v, dtype=float) if k in arrays else float(v)) for k, v in d.items()})


def save_instances(instances: Sequence[SlotInstance], path) -> None:
    with open(path, "w") as fh:
        json.dump({"format": "vecedge-slot-instances", "version": 1,
                   "instances": [inst.to_dict() for inst in instances]}, fh)


def load_instances(path) -> list[SlotInstance]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "vecedge-slot-instances":
        raise ValueError(f"{path}: not a slot-instance file")
    return [SlotInstance.from_dict(d) for d in doc["instances"]]


def instance_from_env(env: VecEdgeEnv) -> SlotInstance:
    """Freeze the environment's current slot, realizing one channel draw."""
    s, cfg = env.state, env.cfg
    return SlotInstance(
        tasks=s.tasks.copy(), cpu=s.cpu.copy(), capacitance=env.capacitance.copy(),
        power=env.tx_power.copy(), energy_budget=s.energy_budget.copy(),
        server_cpu=s.server_cpu.copy(), server_energy=s.server_energy.copy(),
        rates=env.realize_rates(), positions=s.positions.copy(),
        server_positions=s.server_positions.copy(),
        weight_delay=cfg.weight_delay, weight_energy=cfg.weight_energy,
        penalty_deadline=cfg.penalty_deadline, penalty_energy=cfg.penalty_energy,
        energy_per_cycle=cfg.mec_energy_per_cycle, slot_duration=cfg.slot_duration,
    )


def random_instances(cfg: ScenarioConfig, count: int, seed: int) -> list[SlotInstance]:
    env = VecEdgeEnv(cfg)
    out = []
    for k in range(count):
        env.reset(int(np.random.SeedSequence([seed, 0x0AC1E, k]).generate_state(1)[0]))
        out.append(instance_from_env(env))
    return out


# -- allocation ---------------------------------------------------------------

def optimal_allocation(capacity: float, workloads) -> np.ndarray:
    """Minimize sum(w_i / f_i) s.t. sum(f_i) <= capacity: f_i proportional to sqrt(w_i).

    ``workloads`` are delay-weighted cycle counts ``w_D * l * mu``.
    """
    w = np.sqrt(np.asarray(workloads, dtype=float))
    if w.sum() == 0:
        return np.full(len(w), capacity / len(w))
    return capacity * w / w.sum()


def deadline_aware_allocation(capacity: float, cycles, tx_delay, deadline, weight_delay: float,
                              penalty_deadline: float) -> np.ndarray | None:
    """Minimize sum(w_D*(t + c/f) + phi*max(0, t + c/f - tau)) s.t. sum(f) <= capacity.

    Each term is convex in f with one kink at f_k = c / (tau - t), so for a
    multiplier nu the best f is clip(f_k, sqrt(w_D c/nu), sqrt((w_D+phi) c/nu)).
    The multiplier is found by bisection. ``penalty_deadline=inf`` makes the
    deadlines hard; None is returned when they cannot all be met.
    """
    c = np.asarray(cycles, dtype=float)
    t = np.asarray(tx_delay, dtype=float)
    tau = np.asarray(deadline, dtype=float)
    slack = tau - t
    with np.errstate(divide="ignore"):
        f_kink = np.where(slack > 0, c / np.where(slack > 0, slack, 1.0), np.inf)
    hard = np.isinf(penalty_deadline)
    if hard and (np.any(np.isinf(f_kink)) or f_kink.sum() > capacity):
        return None
    lo_coef = weight_delay * c
    hi_coef = (weight_delay + penalty_deadline) * c if not hard else np.full_like(c, np.inf)
    if lo_coef.sum() == 0 and (hard or np.all(hi_coef == 0)):
        return np.full(len(c), capacity / len(c))

    def alloc(nu):
        f_lo = np.sqrt(lo_coef / nu)
        f_hi = np.sqrt(hi_coef / nu)
        return np.minimum(np.maximum(f_kink, f_lo), f_hi)

    # bracket nu in log space so that sum(alloc) straddles capacity
    lo, hi = -200.0, 200.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if alloc(np.exp(mid)).sum() > capacity:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    f = alloc(np.exp(hi))
    # hand residual capacity to clients not pinned at a kink
    residual = capacity - f.sum()
    if residual > 0:
        free = ~np.isclose(f, f_kink, rtol=1e-12) if not hard else np.ones(len(f), bool)
        if free.any():
            f[free] += residual * f[free] / f[free].sum()
    return f


# -- evaluation -----------------------------------------------------------------

@dataclass
class AssignmentResult:
    assignment: tuple[int, ...]  # 0 = local, m + 1 = server m
    allocation: np.ndarray  # granted cycles/s per vehicle (0 for local)
    cost: float  # penalized objective (= -reward)
    system_cost: float
    delay: np.ndarray
    energy: np.ndarray
    breakdown: dict = field(default_factory=dict)


def _terms(inst: SlotInstance, assignment, alloc):
    """Per-vehicle delay/energy plus penalty terms, vectorized."""
    a = np.asarray(assignment)
    size, intensity, deadline = inst.tasks.T
    cycles = size * intensity
    local = a == 0
    V = len(a)
    idx = np.arange(V)
    rate = np.where(local, 1.0, inst.rates[idx, np.maximum(a - 1, 0)])
    f = np.where(local, 1.0, alloc)
    d_off = np.where(local, 0.0, size / rate)
    d_comp = np.where(local, cycles / inst.cpu, cycles / f)
    e_tx = np.where(local, 0.0, inst.power * size / rate)
    e_comp = np.where(local, inst.capacitance * inst.cpu ** 2 * cycles, inst.energy_per_cycle * cycles)
    delay = d_off + d_comp
    energy = e_tx + e_comp
    overrun = np.maximum(0.0, delay - deadline)
    veh_over = np.where(local, np.maximum(0.0, energy - inst.energy_budget), 0.0)
    load = np.zeros(inst.num_servers)
    np.add.at(load, a[~local] - 1, energy[~local])
    srv_over = np.maximum(0.0, load - inst.server_energy)
    system = inst.weight_delay * delay + inst.weight_energy * energy
    return delay, energy, system, overrun, veh_over, srv_over


def evaluate_assignment(inst: SlotInstance, assignment, alloc) -> AssignmentResult:
    delay, energy, system, overrun, veh_over, srv_over = _terms(inst, assignment, alloc)
    penalties = {
        "deadline": inst.penalty_deadline * overrun.sum(),
        "vehicle_energy": inst.penalty_energy * veh_over.sum(),
        "server_energy": inst.penalty_energy * srv_over.sum(),
    }
    total = system.sum() + sum(penalties.values())
    return AssignmentResult(tuple(int(x) for x in assignment), np.asarray(alloc, dtype=float),
                            float(total), float(system.sum()), delay, energy,
                            {"system_cost": float(system.sum()), **{k: float(v) for k, v in penalties.items()},
                             "deadline_violations": int((overrun > 0).sum()),
                             "vehicle_energy_violations": int((veh_over > 0).sum()),
                             "server_energy_violations": int((srv_over > 0).sum())})


def _allocate(inst: SlotInstance, assignment, strict: bool, memo: dict | None = None) -> np.ndarray | None:
    """Best CPU split on every server; ``memo`` caches per (server, client set)."""
    a = np.asarray(assignment)
    size, intensity, deadline = inst.tasks.T
    alloc = np.zeros(len(a))
    phi = np.inf if strict else inst.penalty_deadline
    for m in range(inst.num_servers):
        clients = np.flatnonzero(a == m + 1)
        if len(clients) == 0:
            continue
        key = (m, tuple(clients))
        if memo is not None and key in memo:
            f = memo[key]
        else:
            rates = inst.rates[clients, m]
            f = deadline_aware_allocation(inst.server_cpu[m], size[clients] * intensity[clients],
                                          size[clients] / rates, deadline[clients],
                                          inst.weight_delay, phi)
            if memo is not None:
                memo[key] = f
        if f is None:
            return None
        alloc[clients] = f
    return alloc


def enumerate_assignments(inst: SlotInstance, strict: bool = False):
    """Yield an AssignmentResult for every admissible assignment.

    Offloading over a zero-rate link is never admissible. In strict mode
    assignments that violate a deadline or an energy budget are skipped.
    """
    V, M = inst.num_vehicles, inst.num_servers
    memo: dict = {}
    for assignment in itertools.product(range(M + 1), repeat=V):
        a = np.asarray(assignment)
        off = np.flatnonzero(a > 0)
        if np.any(inst.rates[off, a[off] - 1] <= 0):
            continue
        alloc = _allocate(inst, a, strict, memo)
        if alloc is None:
            continue
        res = evaluate_assignment(inst, a, alloc)
        if strict and (res.breakdown["deadline_violations"] or res.breakdown["vehicle_energy_violations"]
                       or res.breakdown["server_energy_violations"]):
            continue
        yield res


def solve_exact(inst: SlotInstance, strict: bool = False) -> AssignmentResult:
    if inst.num_vehicles > MAX_VEHICLES or inst.num_servers > MAX_SERVERS:
        raise SizeBoundError(f"exact enumeration supports at most {MAX_VEHICLES} vehicles and "
                             f"{MAX_SERVERS} servers, got {inst.num_vehicles}x{inst.num_servers}")
    best = None
    for res in enumerate_assignments(inst, strict):
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise InfeasibleError("no admissible assignment")
    return best


def decisions_for(inst: SlotInstance, result: AssignmentResult) -> list[OffloadDecision]:
    """Express an oracle result as offload decisions requesting exactly the granted CPU."""
    out = []
    for v, target in enumerate(result.assignment):
        if target == 0:
            out.append(OffloadDecision())
        else:
            f = float(result.allocation[v])
            out.append(OffloadDecision(target - 1, f, f / inst.server_cpu[target - 1]))
    return out


def environment_cost(inst: SlotInstance, decisions: Sequence[OffloadDecision], cfg: ScenarioConfig,
                     allocation=PROPORTIONAL) -> float:
    """Penalized cost (negated reward) of ``decisions`` through the environment's evaluation path."""
    return -environment_slot(inst, decisions, cfg, allocation).reward


def environment_assignment_cost(inst: SlotInstance, assignment, alloc, cfg: ScenarioConfig) -> float:
    """Environment-path cost of an assignment with the given grants imposed exactly."""
    result = AssignmentResult(tuple(assignment), np.asarray(alloc, dtype=float), 0.0, 0.0,
                              np.empty(0), np.empty(0))
    grants = {v: float(alloc[v]) for v, m in enumerate(assignment) if m > 0}
    return environment_cost(inst, decisions_for(inst, result), cfg,
                            lambda requests, capacity: grants)


def environment_slot(inst: SlotInstance, decisions: Sequence[OffloadDecision], cfg: ScenarioConfig,
                     allocation=PROPORTIONAL):
    return evaluate_slot([Task(*row) for row in inst.tasks], decisions, inst.cpu, inst.capacitance,
                        inst.power, inst.energy_budget, inst.rates, inst.server_cpu, inst.server_energy,
                        inst.config(cfg), allocation)


def instance_observations(inst: SlotInstance, cfg: ScenarioConfig) -> np.ndarray:
    state = GlobalState(inst.positions, inst.cpu, inst.energy_budget, inst.tasks,
                        inst.server_positions, inst.server_cpu, inst.server_energy, 0)
    return observations(state, cfg)


class OraclePolicy:
    """Plays the exact optimum; its gap is zero by construction."""

    def decisions(self, inst: SlotInstance) -> list[OffloadDecision]:
        return decisions_for(inst, solve_exact(inst))

    def allocation(self, requests, capacity):
        # requests already carry the oracle's grants, which never exceed capacity
        return {v: f for reqs in requests.values() for v, f in reqs}


def policy_cost(policy, inst: SlotInstance, cfg: ScenarioConfig) -> float:
    if hasattr(policy, "decisions"):
        decisions = policy.decisions(inst)
    else:
        raw = policy(instance_observations(inst, cfg))
        decisions = [decode_action(a, inst.server_cpu, cfg.min_cpu_fraction) for a in raw]
    return environment_cost(inst, decisions, cfg, getattr(policy, "allocation", PROPORTIONAL))


def policy_gaps(policy, instances: Sequence[SlotInstance], cfg: ScenarioConfig,
                oracle_costs: Sequence[float] | None = None) -> list[dict]:
    """Per-instance relative gaps; pass ``oracle_costs`` to reuse exact solutions."""
    if oracle_costs is None:
        oracle_costs = [solve_exact(inst).cost for inst in instances]
    rows = []
    for k, (inst, best) in enumerate(zip(instances, oracle_costs)):
        cost = policy_cost(policy, inst, cfg)
        rows.append({"instance": k, "policy_cost": float(cost), "oracle_cost": float(best),
                     "gap": float((cost - best) / best)})
    return rows


def policy_gap(policy, instances: Sequence[SlotInstance], cfg: ScenarioConfig,
               oracle_costs: Sequence[float] | None = None) -> float:
    """Mean relative optimality gap of ``policy`` over ``instances``."""
    return float(np.mean([r["gap"] for r in policy_gaps(policy, instances, cfg, oracle_costs)]))


__all__ = [
    "SlotInstance", "SizeBoundError", "InfeasibleError", "optimal_allocation",
    "deadline_aware_allocation", "solve_exact", "enumerate_assignments", "evaluate_assignment",
    "policy_gap", "policy_gaps", "OraclePolicy", "random_instances", "instance_from_env",
    "environment_cost", "environment_assignment_cost", "decisions_for", "save_instances", "load_instances", "EQUAL",
]
