import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vecedge.scenario import (ConfigError, ScenarioConfig, Task, apply_env_overrides, config_from_mapping,
                              dbm_to_watts, default_config, default_config_path, desk_config, dump_config,
                              generate_scenario, grid_positions, load_config, sample_tasks, watts_to_dbm)


def test_default_file_matches_parameter_table():
    cfg = default_config()
    assert cfg.num_vehicles == 20 and cfg.num_servers == 4
    assert cfg.vehicle_cpu_range == (1e9, 5e9)
    assert cfg.vehicle_energy_range == (5.0, 25.0)
    assert cfg.task_size_range == (1e6, 3e6)
    assert cfg.task_intensity_range == (500.0, 1500.0)
    assert cfg.task_deadline_range == (0.1, 5.0)
    assert cfg.server_energy == 1000.0
    assert cfg.server_cpu_range == (50e9, 100e9)
    assert cfg.bandwidth == 20e6
    assert cfg.tx_power_range == pytest.approx((dbm_to_watts(10), dbm_to_watts(25)), rel=1e-12)
    assert cfg.noise_power == pytest.approx(dbm_to_watts(-98), rel=1e-12)
    assert (cfg.alpha1, cfg.alpha2) == (18.0, 36.0)
    assert cfg.memory_degree == 0.9 and cfg.vel_std == 2.0
    assert cfg.cap_coeff == 1e-28 and cfg.mec_energy_per_cycle == 8.2e-28
    assert cfg.lr_critic == 5e-4 and cfg.lr_actor == 5e-4
    assert cfg.soft_update_rate == 5e-3 and cfg.buffer_capacity == 100_000 and cfg.batch_size == 128
    assert (cfg.nakagami_m_los, cfg.nakagami_m_nlos) == (4.0, 2.0)
    assert (cfg.pathloss_exp_los, cfg.pathloss_exp_nlos) == (2.42, 4.28)
    assert (cfg.shadow_std_los, cfg.shadow_std_nlos) == (4.0, 6.0)
    assert cfg.light_speed == 3e8 and cfg.ref_distance == 1.0 and cfg.carrier_freq == 2e9
    assert cfg.episodes == 3000


def test_file_and_dataclass_defaults_agree():
    assert default_config() == ScenarioConfig()


def test_memory_degree_out_of_range_names_field():
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig(memory_degree=1.5)
    assert exc.value.field == "memory_degree"


def test_missing_field_is_named(tmp_path):
    text = default_config_path().read_text().replace("task_size_range_mb = [1.0, 3.0]\n", "")
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError, match="task_size_range"):
        load_config(p)


def test_malformed_file_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[topology\nnum_vehicles = ")
    with pytest.raises(ConfigError, match="parse"):
        load_config(p)


def test_unknown_key_rejected():
    doc = ScenarioConfig().to_dict()
    doc["warp_speed"] = 9
    with pytest.raises(ConfigError, match="warp_speed"):
        config_from_mapping(doc)


@pytest.mark.parametrize("changes", [
    dict(task_size_range=(3e6, 1e6)),
    dict(nakagami_m_los=0.4),
    dict(num_servers=0),
    dict(weight_delay=-0.1),
    dict(area_side=0.0),
])
def test_invalid_values_rejected(changes):
    with pytest.raises(ConfigError):
        ScenarioConfig(**changes)


def test_zero_weights_allowed():
    ScenarioConfig(weight_delay=0.0, weight_energy=1.0)


def test_dbm_examples():
    assert dbm_to_watts(30) == 1.0
    assert dbm_to_watts(20) == pytest.approx(0.1, rel=1e-12)
    assert dbm_to_watts(-98) == pytest.approx(1.5848931924611135e-13, rel=1e-12)


@given(st.floats(-150, 60))
def test_dbm_roundtrip(p):
    assert watts_to_dbm(dbm_to_watts(p)) == pytest.approx(p, abs=1e-9)


def test_dump_config_roundtrips(tmp_path):
    cfg = desk_config(task_size_range=(2e6, 2e6), rng_seed=7)
    p = tmp_path / "c.toml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_env_overrides():
    cfg = apply_env_overrides(ScenarioConfig(), {"VECEDGE_NUM_VEHICLES": "8",
                                                 "VECEDGE_TASK_SIZE_RANGE_MB": "[2, 2]",
                                                 "VECEDGE_SHARED_CRITIC": "false",
                                                 "OTHER": "1"})
    assert cfg.num_vehicles == 8
    assert cfg.task_size_range == (2e6, 2e6)
    assert cfg.shared_critic is False


def test_env_override_validation():
    with pytest.raises(ConfigError):
        apply_env_overrides(ScenarioConfig(), {"VECEDGE_MEMORY_DEGREE": "2.0"})


def test_same_seed_identical_scenario(cfg):
    a = generate_scenario(cfg, 11)
    b = generate_scenario(cfg, 11)
    for x, y in zip(a[0], b[0]):
        for f in ("position", "velocity", "mean_velocity"):
            assert getattr(x, f).tobytes() == getattr(y, f).tobytes()
        assert (x.cpu, x.energy_budget, x.tx_power) == (y.cpu, y.energy_budget, y.tx_power)
    assert [s.cpu for s in a[1]] == [s.cpu for s in b[1]]


def test_different_seed_differs(cfg):
    a, _ = generate_scenario(cfg, 1)
    b, _ = generate_scenario(cfg, 2)
    assert not np.array_equal(a[0].position, b[0].position)


def test_initial_speeds_in_range(cfg):
    for seed in range(20):
        vehicles, _ = generate_scenario(cfg, seed)
        speeds = [np.linalg.norm(v.velocity) for v in vehicles]
        assert len(speeds) == 20
        assert min(speeds) >= 10.0 - 1e-9 and max(speeds) <= 25.0 + 1e-9


def test_scenario_entities_within_ranges(cfg):
    vehicles, servers = generate_scenario(cfg, 3)
    for v in vehicles:
        assert np.all((v.position >= 0) & (v.position <= cfg.area_side))
        assert cfg.vehicle_cpu_range[0] <= v.cpu <= cfg.vehicle_cpu_range[1]
        assert cfg.tx_power_range[0] <= v.tx_power <= cfg.tx_power_range[1]
        assert v.capacitance == cfg.cap_coeff
    for s in servers:
        assert cfg.server_cpu_range[0] <= s.cpu <= cfg.server_cpu_range[1]
        assert s.energy_budget == cfg.server_energy


def test_four_servers_on_grid():
    pos = grid_positions(4, 1000.0)
    assert sorted(map(tuple, pos)) == [(250, 250), (250, 750), (750, 250), (750, 750)]


@given(st.integers(1, 12), st.floats(10, 5000))
def test_grid_positions_inside_area(m, area):
    pos = grid_positions(m, area)
    assert pos.shape == (m, 2)
    assert np.all((pos > 0) & (pos < area))
    assert len({tuple(p) for p in pos}) == m


def test_sampled_tasks_within_ranges(cfg, rng):
    tasks = sample_tasks(cfg, rng, 10_000)
    for col, (lo, hi) in enumerate([cfg.task_size_range, cfg.task_intensity_range, cfg.task_deadline_range]):
        assert tasks[:, col].min() >= lo and tasks[:, col].max() <= hi


def test_task_invariants():
    assert Task(2e6, 1000, 1.0).cycles == 2e9
    with pytest.raises(ValueError):
        Task(0.0, 1000, 1.0)
    with pytest.raises(ValueError):
        Task(1e6, 1000, -1.0)


def test_frozen_config():
    cfg = ScenarioConfig()
    with pytest.raises(Exception):
        cfg.num_vehicles = 3
