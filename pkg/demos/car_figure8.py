"""Train a neural correction on a figure-8 tracking task with a simplified car model.

Rollouts run on the high-fidelity car while gradients use the kinematic
bicycle model's Jacobians.  Pass a seed on the command line to change the run.
"""
import sys
from pathlib import Path

from polgrad.config import load_config, training_config
from polgrad.trainer import train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else None
cfg = training_config(load_config(Path(__file__).parent.parent / "configs" / "car_figure8.ini").with_seed(seed))


def show(entry, theta):
    print(f"iter {entry.iter:2d}  reward {entry.mean_reward:.6f}  rms {entry.rms_error:.4f}  "
          f"clamps {entry.clamp_events}")


log = train(cfg, callback=show)
print(f"rms error {log.rms_errors[0]:.4f} -> {log.rms_errors[-1]:.4f}")
