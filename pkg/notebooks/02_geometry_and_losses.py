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
# # Depth to normals, curvature and the edge-aware normal loss
#
# A depth map is lifted to world positions, normals come from the cross
# product of the position map's image gradients, and curvature is the
# gradient magnitude of the normal map. The normal loss penalises curvature
# except where the reference image itself has an edge.

# %%
import numpy as np

from atomgs import fixtures
from atomgs.geometry import edge_map, geometry_maps
from atomgs.losses import LossWeights, composite_loss, edge_aware_normal_loss, omega
from atomgs.rasterizer import render

# %% [markdown]
# ## Analytic sphere
#
# The exact ray-sphere depth gives normals that should match the radial
# direction away from the silhouette.

# %%
cam = fixtures.orbit_cameras(1, distance=3.0, width=128, height=128, offset=0.3)[0]
depth = fixtures.sphere_depth(cam, 1.0)
maps = geometry_maps(depth, cam)
ok = maps.normal_valid
radial = maps.positions[ok] / np.linalg.norm(maps.positions[ok], axis=1, keepdims=True)
angle = np.degrees(np.arccos(np.clip(np.sum(maps.normals[ok] * radial, axis=1), -1, 1)))
print("normal error, degrees: median %.3f, 99th percentile %.3f" % (np.median(angle), np.percentile(angle, 99)))
print("curvature on the sphere: mean %.4f" % maps.curvature[maps.valid].mean())

# %% [markdown]
# ## The weight function
#
# omega(x) = (x - 1)^q is 1 on flat image regions and 0 on the strongest
# edges. Larger even q relaxes the penalty faster.

# %%
x = np.linspace(0, 1, 6)
for q in (2, 4, 8):
    print(q, np.round(omega(x, q), 4))

# %% [markdown]
# ## The loss on a render
#
# Render the fixture and score it against itself: the photometric terms vanish,
# the normal term does not, because the discs meet at creases.

# %%
scene = fixtures.textured_sphere(50)
cams, _ = fixtures.sphere_rig(16, 4)
out = render(scene, cams[0])
target = np.clip(out.rgb, 0, 1)
edge = edge_map(target)
res = composite_loss(out, target, cams[0], LossWeights())
print("self-comparison:", {k: round(v, 5) for k, v in res.parts.items()})
print("normal loss with no edges anywhere:",
      edge_aware_normal_loss(res.geometry.curvature, np.zeros_like(edge), 2, res.geometry.valid)[0])
print("normal loss with edges everywhere:",
      edge_aware_normal_loss(res.geometry.curvature, np.ones_like(edge), 2, res.geometry.valid)[0])
