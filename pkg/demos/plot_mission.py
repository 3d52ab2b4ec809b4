"""Plot the benchmark mission: reference, flown path, keep-out disk.

Runs the per-step factored controller on the default noisy scenario and
draws the horizontal plane: the commanded hover-then-circle reference,
the path actually flown, the keep-out disk with its planning margin, and
the point where the vehicle squeezes past the obstacle. Writes
``mission.png`` next to this script (or to the path given as the first
command-line argument).
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from sdcmpc.bench import (
    ScenarioConfig,
    generate_disturbances,
    generate_reference,
    run_closed_loop,
)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).with_name("mission.png")
    cfg = ScenarioConfig()
    records = run_closed_loop("sdc", cfg, generate_disturbances(cfg))

    path = np.array([r.state[0:2] for r in records])
    ref = np.array([generate_reference(r.t, cfg)[0:2] for r in records])
    clearances = np.array([r.obstacle_distance for r in records])
    pinch = int(np.argmin(clearances))

    fig, ax = plt.subplots(figsize=(7, 7))
    ax.plot(ref[:, 0], ref[:, 1], "k--", lw=1, label="reference")
    ax.plot(path[:, 0], path[:, 1], "C0", lw=1.5, label="flown")
    ax.plot(*path[0], "C0o", ms=7, label="start (hover)")
    ax.plot(*path[pinch], "C3x", ms=9, mew=2,
            label=f"closest pass ({clearances[pinch]:.3f} m)")

    cx, cy = cfg.obstacle.center
    disk = plt.Circle((cx, cy), cfg.obstacle.radius, color="C3", alpha=0.35,
                      label=f"keep-out disk (r={cfg.obstacle.radius:g} m)")
    ring = plt.Circle((cx, cy), cfg.obstacle.inflated_radius, color="C3",
                      fill=False, ls=":", lw=1.2,
                      label="planning margin")
    ax.add_patch(disk)
    ax.add_patch(ring)

    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{cfg.duration:g} s mission, '{cfg.disturbance_mode}' "
                 f"noise, seed {cfg.seed}")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper left", fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    print(f"wrote {out}")
    print(f"minimum clearance to obstacle center: {clearances.min():.3f} m "
          f"(disk radius {cfg.obstacle.radius:g} m)")


if __name__ == "__main__":
    main()
