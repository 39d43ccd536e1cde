"""Delay, energy and weighted system cost for local execution and offloading."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .scenario import Task


class RateZeroError(ValueError):
    """The uplink rate is zero, so the task cannot be offloaded."""


@dataclass(frozen=True)
class OffloadDecision:
    """Where a task runs: ``server=None`` means local execution.

    ``requested_cpu`` is the server capacity asked for (cycles/s) and is only
    meaningful for offloaded tasks.
    """

    server: Optional[int] = None
    requested_cpu: float = 0.0
    fraction: float = 0.0

    def __post_init__(self):
        if self.server is not None and not self.requested_cpu > 0:
            raise ValueError("an offloaded task needs a positive CPU request")

    @property
    def is_local(self) -> bool:
        return self.server is None


@dataclass(frozen=True)
class CostBreakdown:
    delay: float
    energy: float
    cost: float
    deadline_overrun: float
    offload_delay: float
    compute_delay: float
    tx_energy: float
    compute_energy: float


def local_delay(task: Task, cpu: float) -> float:
    return task.size * task.intensity / cpu


def local_energy(task: Task, cpu: float, capacitance: float) -> float:
    return capacitance * cpu ** 2 * task.size * task.intensity


def edge_delay(task: Task, rate: float, cpu: float) -> float:
    if rate <= 0:
        raise RateZeroError("uplink rate is zero")
    return task.size / rate + task.size * task.intensity / cpu


def edge_energy(task: Task, power: float, rate: float, energy_per_cycle: float) -> float:
    if rate <= 0:
        raise RateZeroError("uplink rate is zero")
    return power * task.size / rate + energy_per_cycle * task.size * task.intensity


def task_cost(task: Task, decision: OffloadDecision, cpu: float, capacitance: float,
              power: float, rate: float, energy_per_cycle: float,
              weight_delay: float, weight_energy: float,
              granted_cpu: float | None = None) -> CostBreakdown:
    """Cost of completing ``task`` under ``decision``.

    For offloaded tasks ``rate`` is the uplink rate to the chosen server and
    ``granted_cpu`` the capacity actually granted (defaults to the request).
    """
    if decision.is_local:
        d_comp = local_delay(task, cpu)
        e_comp = local_energy(task, cpu, capacitance)
        d_off = e_tx = 0.0
    else:
        f = decision.requested_cpu if granted_cpu is None else granted_cpu
        if rate <= 0:
            raise RateZeroError("uplink rate is zero")
        d_off = task.size / rate
        d_comp = task.size * task.intensity / f
        e_tx = power * task.size / rate
        e_comp = energy_per_cycle * task.size * task.intensity
    delay = d_off + d_comp
    energy = e_tx + e_comp
    return CostBreakdown(
        delay=delay,
        energy=energy,
        cost=weight_delay * delay + weight_energy * energy,
        deadline_overrun=max(0.0, delay - task.deadline),
        offload_delay=d_off,
        compute_delay=d_comp,
        tx_energy=e_tx,
        compute_energy=e_comp,
    )
