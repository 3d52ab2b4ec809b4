"""What the disturbance observer buys under a steady wind.

A constant 0.3 N force pushes the vehicle along +x and +y for the whole
mission -- think of a light steady wind the model knows nothing about.
The nominal controller re-plans from every measurement, which rejects
most of the push, but each plan still assumes the wind away and settles
with a steady offset downwind. The robust variant runs a first-order
observer on the one-step prediction error and feeds the estimate back
into the plan's offsets, so the bias is cancelled instead of fought.

The script prints the observer estimate converging onto the true bias
(geometric, factor 0.9 per step) and the tail tracking error of both
loops once transients are gone.
"""
import numpy as np

from sdcmpc.bench import (
    ScenarioConfig,
    compute_metrics,
    generate_disturbances,
    run_closed_loop,
)


def tail_mse(records, t_from):
    err = np.array([r.state[0:3] - r.p_ref for r in records if r.t >= t_from])
    return float(np.mean(np.sum(err ** 2, axis=1)))


def main():
    cfg = ScenarioConfig(disturbance_mode="constant-bias")
    bias = np.asarray(cfg.disturbance_bias)
    disturbances = generate_disturbances(cfg)
    print(f"true bias: force {bias[0:3]} N, torque {bias[3:6]} N m\n")

    nominal = run_closed_loop("sdc", cfg, disturbances)
    robust = run_closed_loop("robust-sdc", cfg, disturbances)

    print("observer estimate of the x-force component:")
    print("   t      d_hat_x    remaining fraction")
    for k in (1, 2, 5, 10, 20, 40, 80):
        r = robust[k]
        remaining = 1.0 - r.d_hat[0] / bias[0]
        print(f"  {r.t:4.1f} s   {r.d_hat[0]:7.4f}    {remaining:10.2e}")

    t_tail = cfg.duration - 5.0
    mse_n = tail_mse(nominal, t_tail)
    mse_r = tail_mse(robust, t_tail)
    print(f"\ntracking MSE over the final 5 s:")
    print(f"  nominal  {mse_n:.6f} m^2")
    print(f"  robust   {mse_r:.6f} m^2   ({mse_r / mse_n:.1%} of nominal)")

    m_n = compute_metrics(nominal)
    m_r = compute_metrics(robust)
    print(f"\nwhole-mission MSE: nominal {m_n.mse_m2:.4f}, "
          f"robust {m_r.mse_m2:.4f} m^2")
    print("\nThe estimate halves its distance to the truth every ~7 steps")
    print("(0.9 per step); after two seconds the plan carries essentially")
    print("the exact wind, and the downwind offset is gone.")


if __name__ == "__main__":
    main()
