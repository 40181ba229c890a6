"""The estimation benchmark: an oscillating target, a sensor ring, and the
privacy/accuracy dial of a randomized estimator.

A planar oscillator is tracked by ten saturating range sensors on a ring.
Adjacent inputs move one sensor slightly along the ring while every noise
draw is shared, so the two observation sequences differ only through the
sensor displacement.  A windowed least-squares estimator with entropy
factor s releases position estimates: s = 1 is deterministic (no privacy),
smaller s injects more output noise (more privacy, less accuracy).
"""

import warnings

import numpy as np

from dpverify import (TestConfig, adjacent_sensor_pair, critical_epsilon_sweep,
                      estimation_error, make_network, make_surrogate_mhe,
                      sample_runs, simulate_target)
from dpverify.mechanisms import OscillatorSystem, sensor_data_distance

system = OscillatorSystem()
network = make_network("Q1")
truth = simulate_target(system, system.horizon, rng=0)
print("Target trajectory (positions):")
for k in (0, 4, 8):
    print(f"  t={k}: {np.round(truth[k, :2], 3)}")
print()

y1, y2 = adjacent_sensor_pair(network, sensor_index=0, delta=10.0,
                              target_trajectory=truth, rng=1)
print(f"observation sequences: shape {y1.shape}, distance "
      f"{sensor_data_distance(y1, y2):.1f}")
print("(the nominal rotation rule understates the saturating sensor's")
print(" sensitivity, so this distance exceeds delta; pass")
print(" rotation=certified_rotation(...) for a provably adjacent pair)")
print()

print("Privacy/accuracy dial of the windowed estimator")
print("-----------------------------------------------")
grid = list(np.round(np.linspace(0.1, 2.5, 9), 4))
cfg = TestConfig(delta=10.0, n=5000, seed=0, r=2)
for s in (1.0, 0.8, 0.7):
    mech = make_surrogate_mhe(system, network, window=5, entropy_factor=s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep = critical_epsilon_sweep(cfg, mech, y1, y2, grid)
    runs = sample_runs(mech, y1, 1000, rng=42)
    err = estimation_error(runs, truth[:mech.steps, :2])
    eps_c = sweep.epsilon_critical
    print(f"  s={s:3.1f}: critical level = "
          f"{'none (never accepted)' if eps_c is None else eps_c}   "
          f"estimate error = {err:.4f}")
print()
print("s = 1 is perfectly distinguishable (rejected at every level); "
      "lowering s buys privacy at the cost of accuracy.")
print()
print("The same comparison across sensor setups and against the")
print("input-perturbation and Kalman-filter baselines:")
print("  dpverify bench --config configs/tracking_benchmark.json --out bench")
