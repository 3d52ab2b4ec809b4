"""Closed-loop benchmark harness.

Runs the obstacle-avoidance tracking mission for each selected controller
against the same seeded disturbance realization, logs per-step telemetry,
and reduces it to the comparison metrics (average CPU per step, tracking
MSE, accumulated stage cost, worst obstacle clearance, infeasible count).

The mission: hover at a fixed point, step onto a circular sweep at
``step_time``, and pass close to a cylindrical keep-out zone. Disturbances
are zero-mean Gaussian force/torque noise, a constant bias, or nothing.

Artifacts per run: ``telemetry.csv`` (one row per control step, 9
significant digits), ``metrics.txt`` (flat ``key=value`` block) and
``metadata.json`` (config echo, disturbance digest, metrics).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from numpy.typing import NDArray

from . import __version__
from .mpc import CONTROLLER_KINDS, MpcConfig, ObstacleSpec, TerminalMode, \
    make_controller
from .rigidbody import N_DISTURBANCES, N_STATES, POS, VEL, QuadrotorParams
from .systems import QuadrotorSystem

DISTURBANCE_MODES = ("gaussian", "constant-bias", "none")


class EmptyTelemetry(ValueError):
    """Metrics were requested for an empty record list."""


class ControllerFault(RuntimeError):
    """A controller raised mid-mission; partial telemetry is attached."""

    def __init__(self, controller: str, step: int, records: list, cause: str):
        super().__init__(
            f"controller {controller!r} faulted at step {step}: {cause}")
        self.controller = controller
        self.step = step
        self.records = records
        self.cause = cause


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one benchmark mission."""

    params: QuadrotorParams = field(default_factory=QuadrotorParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    obstacle: ObstacleSpec | None = field(default_factory=ObstacleSpec)
    noise_std_force: float = 0.3
    noise_std_torque: float = 0.1
    duration: float = 20.0
    seed: int = 0
    hover_point: tuple[float, float, float] = (1.5, 0.0, 1.0)
    step_time: float = 4.0
    circle_center: tuple[float, float] = (0.0, 0.0)
    circle_radius: float = 1.5
    circle_rate: float = 0.45
    circle_altitude: float = 1.0
    controllers: tuple[str, ...] = CONTROLLER_KINDS
    disturbance_mode: str = "gaussian"
    disturbance_bias: tuple[float, ...] = (0.3, 0.3, 0.0, 0.0, 0.0, 0.0)
    plant_substeps: int = 10

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.noise_std_force < 0.0 or self.noise_std_torque < 0.0:
            raise ValueError("noise standard deviations must be nonnegative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.step_time < 0.0:
            raise ValueError("step_time must be nonnegative")
        if self.circle_radius <= 0.0:
            raise ValueError("circle_radius must be positive")
        if int(self.plant_substeps) < 1:
            raise ValueError("plant_substeps must be at least 1")
        object.__setattr__(self, "plant_substeps", int(self.plant_substeps))
        controllers = tuple(self.controllers)
        unknown = [c for c in controllers if c not in CONTROLLER_KINDS]
        if unknown or not controllers:
            raise ValueError(f"controllers must be a nonempty subset of "
                             f"{CONTROLLER_KINDS}, got {controllers}")
        object.__setattr__(self, "controllers", controllers)
        if self.disturbance_mode not in DISTURBANCE_MODES:
            raise ValueError(f"disturbance_mode must be one of "
                             f"{DISTURBANCE_MODES}, got "
                             f"{self.disturbance_mode!r}")
        bias = tuple(float(b) for b in self.disturbance_bias)
        if len(bias) != N_DISTURBANCES:
            raise ValueError(f"disturbance_bias needs {N_DISTURBANCES} entries")
        object.__setattr__(self, "disturbance_bias", bias)
        object.__setattr__(self, "hover_point",
                           tuple(float(v) for v in self.hover_point))
        object.__setattr__(self, "circle_center",
                           tuple(float(v) for v in self.circle_center))

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.mpc.ts))


@dataclass
class TelemetryRecord:
    """One closed-loop control step. ``state`` is the measurement the
    controller acted on; ``obstacle_distance`` is the smallest horizontal
    distance to the obstacle center over the following plant interval."""

    t: float
    state: NDArray        # (12,)
    u: NDArray            # (4,)
    d_true: NDArray       # (6,)
    d_hat: NDArray        # (6,)
    stage_cost: float
    objective: float
    cpu_ms: float
    obstacle_distance: float
    qp_iterations: int
    feasible: bool
    p_ref: NDArray        # (3,) reference position at t, kept for metrics


@dataclass(frozen=True)
class MetricsSummary:
    avg_cpu_ms: float
    mse_m2: float
    total_cost: float
    min_obstacle_distance: float
    infeasible_steps: int


def generate_reference(t: float, cfg: ScenarioConfig) -> NDArray:
    """Full-state reference at time t: position/velocity set by the mission
    (hover, then circle), attitude and rates zero."""
    state = np.zeros(N_STATES)
    if t < cfg.step_time:
        state[POS] = cfg.hover_point
        return state
    theta = cfg.circle_rate * (t - cfg.step_time)
    r, (cx, cy) = cfg.circle_radius, cfg.circle_center
    state[0] = cx + r * np.cos(theta)
    state[1] = cy + r * np.sin(theta)
    state[2] = cfg.circle_altitude
    state[3] = -r * cfg.circle_rate * np.sin(theta)
    state[4] = r * cfg.circle_rate * np.cos(theta)
    return state


def generate_disturbances(cfg: ScenarioConfig) -> NDArray:
    """(K, 6) disturbance sequence, one row held constant per control step.

    Generated once per scenario from the scenario seed and shared by every
    controller so comparisons are paired.
    """
    K = cfg.steps
    if cfg.disturbance_mode == "none":
        return np.zeros((K, N_DISTURBANCES))
    if cfg.disturbance_mode == "constant-bias":
        return np.tile(np.asarray(cfg.disturbance_bias, dtype=float), (K, 1))
    rng = np.random.default_rng(cfg.seed)
    scale = np.array([cfg.noise_std_force] * 3 + [cfg.noise_std_torque] * 3)
    return rng.normal(0.0, 1.0, size=(K, N_DISTURBANCES)) * scale


def disturbance_digest(disturbances: NDArray) -> str:
    """SHA-256 over the raw sequence bytes; proves runs were paired."""
    arr = np.ascontiguousarray(np.asarray(disturbances, dtype=float))
    return hashlib.sha256(arr.tobytes()).hexdigest()


def run_closed_loop(controller_id: str, cfg: ScenarioConfig,
                    disturbances: NDArray) -> list[TelemetryRecord]:
    """Fly the mission with one controller under the given disturbances.

    Exact state feedback; the applied input and the k-th disturbance row
    are held over each sample interval on the RK4 plant. A controller
    exception aborts the run and raises ControllerFault carrying the
    records logged so far.
    """
    disturbances = np.asarray(disturbances, dtype=float)
    system = QuadrotorSystem(cfg.params, plant_substeps=1)

    def reference(t: float) -> NDArray:
        return generate_reference(t, cfg)

    controller = make_controller(controller_id, system, cfg.mpc,
                                 obstacle=cfg.obstacle, reference=reference)
    x = system.trim_state(cfg.hover_point)
    ts = cfg.mpc.ts
    dt = ts / cfg.plant_substeps
    Q, R = cfg.mpc.Q, cfg.mpc.R

    def center_distance(state: NDArray) -> float:
        if cfg.obstacle is None:
            return float(np.inf)
        return float(np.linalg.norm(state[0:2] - cfg.obstacle.center))

    records: list[TelemetryRecord] = []
    for k in range(disturbances.shape[0]):
        t_k = k * ts
        x_k = x.copy()
        d_hat = np.zeros(N_DISTURBANCES)
        if controller_id == "robust-sdc" and k > 0:
            d_hat = controller.observe(x_k)
        try:
            res = controller.step(x_k, t_k)
        except Exception as exc:
            raise ControllerFault(controller_id, k, records,
                                  f"{type(exc).__name__}: {exc}") from exc
        u = np.asarray(res.u_applied, dtype=float)
        x_ref = reference(t_k)
        err = x_k - x_ref
        stage_cost = float(err @ Q @ err + u @ R @ u)

        d_k = disturbances[k]
        clearance = center_distance(x)
        for _ in range(cfg.plant_substeps):
            x = system.plant_step(x, u, d_k, dt)
            clearance = min(clearance, center_distance(x))

        records.append(TelemetryRecord(
            t=t_k, state=x_k, u=u, d_true=d_k.copy(),
            d_hat=np.asarray(d_hat, dtype=float),
            stage_cost=stage_cost, objective=float(res.objective),
            cpu_ms=res.cpu_seconds * 1e3, obstacle_distance=clearance,
            qp_iterations=int(res.qp_iterations), feasible=bool(res.feasible),
            p_ref=x_ref[POS].copy()))
    return records


def compute_metrics(records: Sequence[TelemetryRecord]) -> MetricsSummary:
    """Reduce telemetry to the benchmark comparison numbers."""
    if not records:
        raise EmptyTelemetry("no telemetry records")
    errors = np.array([r.state[0:3] - r.p_ref for r in records])
    return MetricsSummary(
        avg_cpu_ms=float(np.mean([r.cpu_ms for r in records])),
        mse_m2=float(np.mean(np.sum(errors ** 2, axis=1))),
        total_cost=float(np.sum([r.stage_cost for r in records])),
        min_obstacle_distance=float(min(r.obstacle_distance
                                        for r in records)),
        infeasible_steps=int(sum(not r.feasible for r in records)))


# ---------------------------------------------------------------------------
# serialization

CSV_COLUMNS: tuple[str, ...] = (
    ("t",)
    + tuple(f"state_{i}" for i in range(N_STATES))
    + tuple(f"u_{i}" for i in range(4))
    + tuple(f"d_true_{i}" for i in range(N_DISTURBANCES))
    + tuple(f"d_hat_{i}" for i in range(N_DISTURBANCES))
    + ("stage_cost", "objective", "cpu_ms", "obstacle_distance",
       "qp_iterations", "feasible")
    + tuple(f"p_ref_{i}" for i in range(3)))


def _record_row(r: TelemetryRecord) -> list[str]:
    values = ([r.t] + list(r.state) + list(r.u) + list(r.d_true)
              + list(r.d_hat)
              + [r.stage_cost, r.objective, r.cpu_ms, r.obstacle_distance])
    row = [f"{v:.9g}" for v in values]
    row += [str(int(r.qp_iterations)), str(int(r.feasible))]
    row += [f"{v:.9g}" for v in r.p_ref]
    return row


def telemetry_to_csv(records: Sequence[TelemetryRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(_record_row(r)) for r in records]
    return "\n".join(lines) + "\n"


def metrics_to_text(m: MetricsSummary) -> str:
    return (f"avg_cpu_ms={m.avg_cpu_ms:.9g}\n"
            f"mse_m2={m.mse_m2:.9g}\n"
            f"total_cost={m.total_cost:.9g}\n"
            f"min_obstacle_distance={m.min_obstacle_distance:.9g}\n"
            f"infeasible_steps={m.infeasible_steps}\n")


def parse_metrics_text(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key] = float(value)
    return out


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-python mirror of the config, reusable as a config file body."""

    def plain(value):
        if isinstance(value, np.ndarray):
            return [plain(v) for v in value.tolist()]
        if isinstance(value, TerminalMode):
            return value.value
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        return value

    def section(obj) -> dict:
        return {f.name: plain(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}

    out = section(cfg)
    out["params"] = section(cfg.params)
    out["mpc"] = section(cfg.mpc)
    out["obstacle"] = None if cfg.obstacle is None else section(cfg.obstacle)
    return out


def _weight_matrix(value, size: int, name: str) -> NDArray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == size:
        return np.diag(arr)
    if arr.shape == (size, size):
        return arr
    raise ValueError(f"{name} must be a length-{size} diagonal or a "
                     f"{size}x{size} matrix")


def _build_section(cls, data: dict, name: str, convert=None) -> dict:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
    if convert:
        data = convert(dict(data))
    return data


def config_from_dict(data: dict | None) -> ScenarioConfig:
    """Build a scenario from a nested plain dict; missing keys default.

    An empty dict (or None, from an empty file) reproduces the default
    benchmark scenario.
    """
    data = dict(data or {})

    def mpc_convert(section: dict) -> dict:
        if "Q" in section:
            section["Q"] = _weight_matrix(section["Q"], N_STATES, "Q")
        if "R" in section:
            section["R"] = _weight_matrix(section["R"], 4, "R")
        if "terminal_mode" in section:
            section["terminal_mode"] = TerminalMode(section["terminal_mode"])
        if section.get("observer_saturation") is not None:
            section["observer_saturation"] = tuple(
                section["observer_saturation"])
        return section

    kwargs: dict = {}
    if "params" in data:
        kwargs["params"] = QuadrotorParams(
            **_build_section(QuadrotorParams, data.pop("params"), "params"))
    if "mpc" in data:
        kwargs["mpc"] = MpcConfig(
            **_build_section(MpcConfig, data.pop("mpc"), "mpc", mpc_convert))
    if "obstacle" in data:
        section = data.pop("obstacle")
        kwargs["obstacle"] = None if section is None else ObstacleSpec(
            **_build_section(ObstacleSpec, section, "obstacle"))
    scenario_fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(data) - scenario_fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(data)
    return ScenarioConfig(**kwargs)


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got "
                         f"{type(data).__name__}")
    return config_from_dict(data)


def write_run(out_dir: str | Path, controller_id: str, cfg: ScenarioConfig,
              records: Sequence[TelemetryRecord], digest: str,
              fault: str | None = None) -> Path:
    """Write telemetry.csv, metrics.txt and metadata.json for one run.

    Returns the per-controller directory. A faulted run still writes its
    partial telemetry; metrics are computed when any records exist.
    """
    run_dir = Path(out_dir) / controller_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "telemetry.csv").write_text(telemetry_to_csv(records),
                                           encoding="utf-8")
    metrics = compute_metrics(records) if records else None
    if metrics is not None:
        (run_dir / "metrics.txt").write_text(metrics_to_text(metrics),
                                             encoding="utf-8")
    metadata = {
        "version": __version__,
        "controller": controller_id,
        "seed": cfg.seed,
        "disturbance_mode": cfg.disturbance_mode,
        "disturbance_digest": digest,
        "record_count": len(records),
        "fault": fault,
        "metrics": None if metrics is None else dataclasses.asdict(metrics),
        "config": config_to_dict(cfg),
    }
    with open(run_dir / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir
