"""Sparse MIMO layout and its virtual aperture.

Eight transmitters and sixteen receivers sit on a 1.5 m arc around the
scene.  Every Tx/Rx pair behaves like a monostatic element halfway between
the two, so 24 physical antennas give a 128-element vertical aperture.
"""

import numpy as np

from misar.arraygeom import (build_default_geometry, channel_positions, linear_coordinates,
                             virtual_channels)

geom = build_default_geometry()
print(f"physical antennas: {len(geom.tx_positions)} Tx + {len(geom.rx_positions)} Rx")

vcs = virtual_channels(geom)
centers = np.array([vc.effective_center for vc in vcs])
print(f"virtual channels: {len(vcs)}")

# along the unwrapped array line the midpoints fill a uniform grid
tx_s, rx_s = linear_coordinates()
mid = np.sort(((tx_s[:, None] + rx_s[None, :]) / 2).ravel())
print(f"unwrapped virtual pitch {np.diff(mid).mean() * 1e3:.5f} mm, "
      f"spread {np.ptp(np.diff(mid)) * 1e3:.1e} mm, distinct positions {np.unique(mid.round(12)).size}")

# on the arc the same midpoints bend with the array
z = np.sort(centers[:, 2])
print(f"vertical span of the bent aperture {z[-1] - z[0]:.4f} m")

# every antenna stays on the arc
r = np.linalg.norm(geom.antenna_positions, axis=1)
print(f"antenna radius range: {r.min():.6f} .. {r.max():.6f} m")

tx, rx = channel_positions(geom)
print("first three slots (tx z, rx z):")
for k in range(3):
    print(f"  slot {k}: {tx[k, 2]:+.4f}  {rx[k, 2]:+.4f}")
