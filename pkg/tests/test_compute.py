import pytest
from hypothesis import given
from hypothesis import strategies as st

from vecedge.compute import (OffloadDecision, RateZeroError, edge_delay, edge_energy, local_delay,
                             local_energy, task_cost)
from vecedge.scenario import Task

TASK = Task(2e6, 1000.0, 5.0)


def test_local_delay():
    assert local_delay(TASK, 2e9) == pytest.approx(1.0, rel=1e-9)
    assert local_delay(TASK, 4e9) == pytest.approx(0.5, rel=1e-9)


def test_local_energy():
    assert local_energy(TASK, 2e9, 1e-28) == pytest.approx(0.8, rel=1e-9)
    assert local_energy(TASK, 2e9, 0.0) == 0.0
    assert local_energy(TASK, 4e9, 1e-28) == pytest.approx(3.2, rel=1e-9)


def test_edge_delay():
    assert edge_delay(TASK, 2e7, 4e9) == pytest.approx(0.6, rel=1e-9)
    assert edge_delay(TASK, 2e7, 1e30) == pytest.approx(0.1, rel=1e-9)
    assert edge_delay(TASK, 1e30, 4e9) == pytest.approx(0.5, rel=1e-9)


def test_edge_energy():
    assert edge_energy(TASK, 0.1, 2e7, 8.2e-28) == pytest.approx(0.01 + 1.64e-18, rel=1e-9)
    assert edge_energy(TASK, 0.0, 2e7, 0.0) == 0.0
    assert edge_energy(TASK, 0.1, 4e7, 8.2e-28) < edge_energy(TASK, 0.1, 2e7, 8.2e-28)


def test_zero_rate_raises():
    with pytest.raises(RateZeroError):
        edge_delay(TASK, 0.0, 1e9)
    with pytest.raises(RateZeroError):
        edge_energy(TASK, 0.1, 0.0, 8.2e-28)
    with pytest.raises(RateZeroError):
        task_cost(TASK, OffloadDecision(0, 1e9), 2e9, 1e-28, 0.1, 0.0, 8.2e-28, 0.5, 0.5)


def _edge(wd, we):
    return task_cost(TASK, OffloadDecision(0, 4e9), 2e9, 1e-28, 0.1, 2e7, 8.2e-28, wd, we)


def test_weight_collapse():
    c = _edge(1.0, 0.0)
    assert c.cost == c.delay
    c = _edge(0.0, 1.0)
    assert c.cost == c.energy


def test_local_composition():
    c = task_cost(TASK, OffloadDecision(), 2e9, 1e-28, 0.1, 0.0, 8.2e-28, 0.5, 0.5)
    assert c.cost == pytest.approx(0.5 * 1.0 + 0.5 * 0.8, rel=1e-9)
    assert (c.offload_delay, c.tx_energy) == (0.0, 0.0)
    assert c.deadline_overrun == 0.0


def test_granted_cpu_overrides_request():
    c = task_cost(TASK, OffloadDecision(0, 1e9), 2e9, 1e-28, 0.1, 2e7, 8.2e-28, 1.0, 0.0, granted_cpu=4e9)
    assert c.delay == pytest.approx(0.6, rel=1e-9)


def test_deadline_overrun():
    c = task_cost(Task(2e6, 1000.0, 0.25), OffloadDecision(), 2e9, 1e-28, 0.1, 0.0, 8.2e-28, 0.5, 0.5)
    assert c.deadline_overrun == pytest.approx(0.75, rel=1e-9)


def test_offload_needs_positive_request():
    with pytest.raises(ValueError):
        OffloadDecision(1, 0.0)
    assert OffloadDecision().is_local and not OffloadDecision(0, 1.0).is_local


@given(st.floats(1e5, 1e7), st.floats(100, 2000), st.floats(0.1, 5), st.floats(1e8, 1e10),
       st.floats(1e5, 1e9), st.floats(0.001, 1), st.floats(0, 1), st.floats(0.1, 10), st.booleans())
def test_costs_nonnegative_and_linear(size, intensity, deadline, cpu, rate, power, wd, scale, local):
    task = Task(size, intensity, deadline)
    dec = OffloadDecision() if local else OffloadDecision(0, cpu * 10)
    c = task_cost(task, dec, cpu, 1e-28, power, rate, 8.2e-28, wd, 1 - wd)
    assert c.delay >= 0 and c.energy >= 0 and c.cost >= 0 and c.deadline_overrun >= 0
    assert c.delay == pytest.approx(c.offload_delay + c.compute_delay, rel=1e-12)
    assert c.energy == pytest.approx(c.tx_energy + c.compute_energy, rel=1e-12)
    scaled = task_cost(task, dec, cpu, 1e-28, power, rate, 8.2e-28, scale * wd, scale * (1 - wd))
    assert scaled.cost == pytest.approx(scale * c.cost, rel=1e-9, abs=1e-300)
