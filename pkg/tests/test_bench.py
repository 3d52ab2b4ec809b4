"""Benchmark harness tests.

Reference-trajectory landmarks are frozen from the circle parameterization
by hand (the near-pass clearance is exactly 1.5 - sqrt(2)); metrics come
from a two-record fixture small enough to reduce on paper; serialization is
checked by round trip. Closed-loop runs here use a 2 s hover slice so the
whole file stays fast; the full mission lives in the acceptance tests.
"""
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from sdcmpc.bench import (
    CSV_COLUMNS,
    EmptyTelemetry,
    MetricsSummary,
    ScenarioConfig,
    TelemetryRecord,
    compute_metrics,
    config_from_dict,
    config_to_dict,
    disturbance_digest,
    generate_disturbances,
    generate_reference,
    load_config,
    metrics_to_text,
    parse_metrics_text,
    run_closed_loop,
    telemetry_to_csv,
    write_run,
)
from sdcmpc.cli import main


def short_cfg(**kw):
    kw.setdefault("duration", 2.0)
    kw.setdefault("disturbance_mode", "none")
    return ScenarioConfig(**kw)


# ---------------------------------------------------------------------------
# reference trajectory
# ---------------------------------------------------------------------------

def test_reference_hovers_before_step_time():
    cfg = ScenarioConfig()
    for t in (0.0, 1.7, 3.999):
        ref = generate_reference(t, cfg)
        np.testing.assert_allclose(ref[0:3], [1.5, 0.0, 1.0], atol=0.0)
        np.testing.assert_allclose(ref[3:], 0.0, atol=0.0)


def test_reference_circle_is_position_continuous_at_step_time():
    cfg = ScenarioConfig()
    before = generate_reference(3.999999, cfg)
    at = generate_reference(4.0, cfg)
    np.testing.assert_allclose(at[0:3], before[0:3], atol=1e-12)
    # the velocity reference steps onto the tangential feedforward r*omega
    np.testing.assert_allclose(at[3:6], [0.0, 1.5 * 0.45, 0.0], atol=1e-12)


def test_reference_near_pass_clearance_is_radius_minus_diagonal():
    # closest approach to the obstacle happens at circle angle 225 degrees,
    # reached (5 pi / 4) / 0.45 seconds after the step; clearance from
    # (-1, -1) is then sqrt(2) * (1.5 * sqrt(2)/2 - 1) = 1.5 - sqrt(2)
    cfg = ScenarioConfig()
    t_star = 4.0 + (5.0 * np.pi / 4.0) / 0.45
    assert abs(t_star - 12.7266462599716) <= 1e-12
    ref = generate_reference(t_star, cfg)
    np.testing.assert_allclose(
        ref[0:2], [-1.0606601717798214, -1.0606601717798212], atol=1e-12)
    clearance = np.linalg.norm(ref[0:2] - np.array([-1.0, -1.0]))
    np.testing.assert_allclose(clearance, 1.5 - np.sqrt(2.0), atol=1e-12)
    assert clearance < 0.5  # the raw reference cuts inside the keep-out disk


def test_reference_attitude_and_rate_channels_stay_zero():
    cfg = ScenarioConfig()
    for t in np.linspace(0.0, cfg.duration, 41):
        assert np.all(generate_reference(float(t), cfg)[6:12] == 0.0)


# ---------------------------------------------------------------------------
# disturbance generation
# ---------------------------------------------------------------------------

def test_disturbance_mode_none_is_all_zeros():
    d = generate_disturbances(ScenarioConfig(disturbance_mode="none"))
    assert d.shape == (200, 6)
    assert np.all(d == 0.0)


def test_disturbance_mode_constant_bias_repeats_config_vector():
    cfg = ScenarioConfig(disturbance_mode="constant-bias",
                         disturbance_bias=(0.3, 0.3, 0.0, 0.0, 0.0, 0.0))
    d = generate_disturbances(cfg)
    np.testing.assert_array_equal(
        d, np.tile([0.3, 0.3, 0.0, 0.0, 0.0, 0.0], (200, 1)))


def test_disturbance_same_seed_bitwise_identical_distinct_seed_not():
    a = generate_disturbances(ScenarioConfig(seed=7))
    b = generate_disturbances(ScenarioConfig(seed=7))
    c = generate_disturbances(ScenarioConfig(seed=8))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_disturbance_sample_std_matches_config():
    # 10^4 draws per channel: sample std within 5% of the configured levels
    cfg = ScenarioConfig(duration=1000.0, seed=0)
    d = generate_disturbances(cfg)
    assert d.shape == (10000, 6)
    force_std = d[:, 0:3].std()
    torque_std = d[:, 3:6].std()
    assert abs(force_std - 0.3) <= 0.05 * 0.3
    assert abs(torque_std - 0.1) <= 0.05 * 0.1


def test_disturbance_digest_tracks_content():
    d = generate_disturbances(ScenarioConfig(seed=3))
    digest = disturbance_digest(d)
    assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
    assert digest == disturbance_digest(d.copy())
    d2 = d.copy()
    d2[0, 0] += 1e-12
    assert disturbance_digest(d2) != digest


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def hand_record(t, p, p_ref, stage_cost, cpu_ms, obst, feasible):
    state = np.zeros(12)
    state[0:3] = p
    return TelemetryRecord(
        t=t, state=state, u=np.zeros(4), d_true=np.zeros(6),
        d_hat=np.zeros(6), stage_cost=stage_cost, objective=0.0,
        cpu_ms=cpu_ms, obstacle_distance=obst, qp_iterations=3,
        feasible=feasible, p_ref=np.asarray(p_ref, dtype=float))


def test_metrics_reduce_matches_hand_computation():
    records = [
        hand_record(0.0, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                    stage_cost=2.0, cpu_ms=4.0, obst=0.8, feasible=True),
        hand_record(0.1, [0.0, 2.0, 0.0], [0.0, 0.0, 0.0],
                    stage_cost=3.0, cpu_ms=6.0, obst=0.6, feasible=False),
    ]
    m = compute_metrics(records)
    assert m == MetricsSummary(avg_cpu_ms=5.0, mse_m2=2.5, total_cost=5.0,
                               min_obstacle_distance=0.6, infeasible_steps=1)


def test_metrics_of_empty_telemetry_raise():
    with pytest.raises(EmptyTelemetry):
        compute_metrics([])


def test_metrics_text_round_trip():
    m = MetricsSummary(avg_cpu_ms=3.25, mse_m2=0.03125, total_cost=1234.5,
                       min_obstacle_distance=0.625, infeasible_steps=2)
    parsed = parse_metrics_text(metrics_to_text(m))
    assert parsed == {"avg_cpu_ms": 3.25, "mse_m2": 0.03125,
                      "total_cost": 1234.5, "min_obstacle_distance": 0.625,
                      "infeasible_steps": 2.0}


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

def test_closed_loop_emits_one_record_per_step():
    cfg = short_cfg()
    records = run_closed_loop("sdc", cfg, generate_disturbances(cfg))
    assert len(records) == cfg.steps == 20
    np.testing.assert_allclose([r.t for r in records],
                               0.1 * np.arange(20), atol=1e-12)
    assert all(r.feasible for r in records)
    assert all(np.all(r.d_true == 0.0) for r in records)


def test_closed_loop_holds_hover_during_short_slice():
    cfg = short_cfg()
    records = run_closed_loop("sdc", cfg, generate_disturbances(cfg))
    final_err = np.linalg.norm(records[-1].state[0:3]
                               - np.array(cfg.hover_point))
    assert final_err <= 0.05


def test_closed_loop_telemetry_reproducible_except_cpu():
    cfg = short_cfg(disturbance_mode="gaussian", seed=11)
    dist = generate_disturbances(cfg)

    def stripped(records):
        lines = telemetry_to_csv(records).splitlines()
        cpu = lines[0].split(",").index("cpu_ms")
        return ["," .join(v for i, v in enumerate(line.split(",")) if i != cpu)
                for line in lines]

    first = stripped(run_closed_loop("robust-sdc", cfg, dist))
    second = stripped(run_closed_loop("robust-sdc", cfg, dist))
    assert first == second


def test_robust_run_carries_nonzero_estimates_under_noise():
    cfg = short_cfg(disturbance_mode="gaussian", seed=5)
    records = run_closed_loop("robust-sdc", cfg, generate_disturbances(cfg))
    assert np.all(records[0].d_hat == 0.0)  # observer inactive at step 0
    assert any(np.any(r.d_hat != 0.0) for r in records[1:])


# ---------------------------------------------------------------------------
# csv
# ---------------------------------------------------------------------------

def test_csv_layout_and_formatting():
    records = [hand_record(0.0, [1.0, 2.0, 3.0], [0.25, 0.0, 0.0],
                           stage_cost=1.0 / 3.0, cpu_ms=1.5, obst=2.0,
                           feasible=True)]
    lines = telemetry_to_csv(records).splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(CSV_COLUMNS) == 38
    row = lines[1].split(",")
    assert len(row) == 38
    assert row[0] == "0"
    assert row[CSV_COLUMNS.index("stage_cost")] == "0.333333333"  # 9 digits
    assert row[CSV_COLUMNS.index("feasible")] == "1"
    assert row[CSV_COLUMNS.index("p_ref_0")] == "0.25"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_dict_round_trip_preserves_everything():
    cfg = ScenarioConfig(seed=42, duration=6.0, disturbance_mode="none",
                         hover_point=(0.5, -0.25, 2.0))
    assert config_to_dict(config_from_dict(config_to_dict(cfg))) \
        == config_to_dict(cfg)


def test_config_empty_dict_gives_default_scenario():
    assert config_to_dict(config_from_dict({})) \
        == config_to_dict(ScenarioConfig())
    assert config_to_dict(config_from_dict(None)) \
        == config_to_dict(ScenarioConfig())


def test_config_rejects_unknown_keys_at_each_level():
    with pytest.raises(ValueError, match="wind_model"):
        config_from_dict({"wind_model": "gusty"})
    with pytest.raises(ValueError, match="mpc"):
        config_from_dict({"mpc": {"horizn": 30}})
    with pytest.raises(ValueError, match="params"):
        config_from_dict({"params": {"masss": 2.0}})


def test_config_accepts_diagonal_weight_shorthand():
    cfg = config_from_dict({"mpc": {"Q": [1.0] * 12, "R": [2.0] * 4}})
    np.testing.assert_array_equal(cfg.mpc.Q, np.eye(12))
    np.testing.assert_array_equal(cfg.mpc.R, 2.0 * np.eye(4))


def test_config_null_obstacle_disables_avoidance():
    cfg = config_from_dict({"obstacle": None})
    assert cfg.obstacle is None


def test_config_invariants_reject_bad_values():
    with pytest.raises(ValueError):
        ScenarioConfig(duration=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(noise_std_force=-0.1)
    with pytest.raises(ValueError):
        ScenarioConfig(seed=-1)
    with pytest.raises(ValueError):
        ScenarioConfig(controllers=("sdc", "pid"))
    with pytest.raises(ValueError):
        ScenarioConfig(disturbance_mode="windy")
    with pytest.raises(ValueError):
        ScenarioConfig(disturbance_bias=(0.1, 0.2))


def test_load_config_reads_yaml_and_rejects_non_mapping(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(ScenarioConfig(seed=9))),
                    encoding="utf-8")
    assert load_config(path).seed == 9
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="mapping"):
        load_config(bad)


# ---------------------------------------------------------------------------
# artifacts and cli
# ---------------------------------------------------------------------------

def test_write_run_emits_all_artifacts(tmp_path):
    cfg = short_cfg()
    dist = generate_disturbances(cfg)
    records = run_closed_loop("sdc", cfg, dist)
    run_dir = write_run(tmp_path, "sdc", cfg, records,
                        disturbance_digest(dist))
    assert (run_dir / "telemetry.csv").exists()
    metrics = parse_metrics_text((run_dir / "metrics.txt").read_text())
    assert metrics["infeasible_steps"] == 0.0
    meta = json.loads((run_dir / "metadata.json").read_text())
    assert meta["record_count"] == 20
    assert meta["fault"] is None
    assert meta["config"]["duration"] == 2.0


def write_short_config(tmp_path) -> Path:
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump({"duration": 2.0,
                                    "disturbance_mode": "none"}),
                    encoding="utf-8")
    return path


def test_cli_run_and_compare_round_trip(tmp_path, capsys):
    config = write_short_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--controller", "sdc",
                 "--seed", "0", "--out", str(out)]) == 0
    assert (out / "sdc" / "telemetry.csv").exists()
    capsys.readouterr()
    assert main(["compare", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "sdc" in table and "mse" in table.lower()


def test_cli_run_all_sequential_writes_three_runs(tmp_path):
    config = write_short_config(tmp_path)
    out = tmp_path / "all"
    assert main(["run", "--config", str(config), "--controller", "all",
                 "--seed", "0", "--out", str(out), "--sequential"]) == 0
    for kind in ("nmpc", "sdc", "robust-sdc"):
        assert (out / kind / "metrics.txt").exists()


def test_cli_disturbance_flag_overrides_config(tmp_path):
    config = write_short_config(tmp_path)  # config says none
    out = tmp_path / "biased"
    assert main(["run", "--config", str(config), "--controller", "sdc",
                 "--seed", "0", "--out", str(out),
                 "--disturbance", "constant-bias"]) == 0
    meta = json.loads((out / "sdc" / "metadata.json").read_text())
    assert meta["disturbance_mode"] == "constant-bias"


def test_cli_compare_without_runs_fails(tmp_path):
    assert main(["compare", "--out", str(tmp_path / "nothing")]) == 2
