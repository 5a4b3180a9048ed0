"""Generate one synthetic shape and look at it: voxel slices and the
orthographic depth views the dataset stores.
"""

import numpy as np

from setfusion import make_shape
from setfusion.data import VIEW_COUNT, render_view

G = 16
spec, occ = make_shape(seed=0, index=5, grid_side=G)

print(f"shape {len(spec.primitives)} primitives, occupancy {occ.mean():.3f}")
for prim in spec.primitives:
    kind = prim[0]
    if kind == "box":
        print(f"  box    center {np.round(prim[1], 1)}  half-extents {np.round(prim[2], 1)}")
    else:
        print(f"  sphere center {np.round(prim[1], 1)}  radius {prim[2]:.1f}")

print("\nmid-grid z-slices (#: occupied voxel):")
for z in (5, 8, 11):
    print(f"  z={z}:")
    for row in occ[:, :, z]:
        print("    " + "".join("#" if v else "." for v in row))

names = ("+x", "-x", "+y", "-y", "+z", "-z", "+x+y", "+x+z")
shades = " .:-=+*#%@"
print("\ndepth views (darker = farther, blank = empty ray):")
for d in range(VIEW_COUNT):
    img = render_view(occ, d, G)
    print(f"  view {d} ({names[d]}):")
    for row in img:
        print("    " + "".join(shades[int(v * (len(shades) - 1))] for v in row))
