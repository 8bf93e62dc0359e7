"""Predator-prey ring: can the data tell that predators ignore each other?

The true predator-predator kernel is identically zero.  This script fits the
single-trajectory ring dataset with default and with optimized
hyperparameters and prints the largest value of the learned kernel.

    python demos/ring_zero_kernel.py [master_seed]

About 15 seconds per seed.
"""
import sys
import warnings

import numpy as np

from ipgp import experiments as ex
from ipgp import gpcore as gc
from ipgp.metrics import empirical_rho

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = ex.load_config("demos/configs/predator_prey_ring.yaml", seed=seed)
ds = ex.simulate(cfg, 0)
support = empirical_rho(ds.positions, ds.config, (2, 2)).r
R = max(gc.data_radius(ds).values())
print(f"predator-predator distances in the data: {support.min():.2f} to {support.max():.2f}")

for mode in ("default", "optimize"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", gc.OptimizationWarning)
        hp, model = ex.train(ex.ExperimentConfig(**{**cfg.to_dict(), "hyperparameters": mode}), ds)
    c = gc.posterior_curve(model, (2, 2), np.linspace(0, R, 1000))
    on = (c.grid >= support.min()) & (c.grid <= support.max())
    print(
        f"{mode:8s}  s2_22 {hp[(2, 2)].s2:9.3g}  omega_22 {hp[(2, 2)].omega:7.3g}  "
        f"sup|phi22| {np.abs(c.mean).max():.3f}  on support {np.abs(c.mean[on]).max():.3f}  "
        f"mean std on support {c.std[on].mean():.3f}"
    )

# The predator-predator term contributes about |phi22| * r / N to a
# predator's velocity, so with two predators among 17 agents a constant of
# 0.2 moves them by roughly the noise level.
