# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Atomized proliferation
#
# Density control runs four rules over a snapshot of the population: prune
# faint or oversized Gaussians, clone any Gaussian with a large positional
# gradient (whatever its size), split large Gaussians against a threshold that
# ramps up during a warm-up phase, and turn small Gaussians into isotropic
# "atoms" whose scale follows a shrinking schedule.

# %%
import numpy as np

from atomgs.density import DensityConfig, atom_scale_at, density_step, split_threshold
from atomgs.scene import GaussianSet, inverse_sigmoid

cfg = DensityConfig()
print("thresholds: clone %g, split %g, prune %g" % (cfg.clone_grad_threshold, cfg.split_grad_threshold,
                                                     cfg.prune_opacity_threshold))

# %% [markdown]
# ## Schedules
#
# The atom scale decays geometrically to p * S0 by t_a; the split bar ramps
# linearly to its full value by t_w.

# %%
for it in (0, 1750, 3500, 7000, 10000):
    print(f"it {it:5d}  S/S0 {atom_scale_at(it, 1.0, cfg):.4f}  split bar {split_threshold(it, cfg):.5f}")

# %% [markdown]
# ## One exemplar per rule
#
# Six Gaussians at iteration 3500 with S = 0.1: a transparent one, an existing
# atom with a large gradient, a large one whose gradient clears the ramped
# split bar, a flat one thinner than S, and two bystanders.

# %%
S = 0.1
scales = np.array([[0.3, 0.3, 0.3], [S, S, S], [0.3, 0.2, 0.2], [0.05, 0.3, 0.3], [0.3, 0.3, 0.2], [0.4, 0.2, 0.3]])
scene = GaussianSet(np.arange(18.0).reshape(6, 3), np.tile([1.0, 0, 0, 0], (6, 1)), np.log(scales),
                    inverse_sigmoid(np.array([0.001, 0.9, 0.9, 0.9, 0.9, 0.9])), np.zeros((6, 1, 3)),
                    is_atom=[False, True, False, False, False, False])
scene.grad_accum[:] = [0.0, 0.003, 0.0015, 0.0, 0.0, 0.0]
scene.grad_count[:] = 1.0
step = density_step(scene, 3500, S, cfg, scene_radius=10.0, rng=np.random.default_rng(0))
print(step.report)
print("new population:", step.scene.count, "atoms:", int(step.scene.is_atom.sum()))
print("where each new Gaussian came from:", step.origin, "fresh:", step.fresh.astype(int))
