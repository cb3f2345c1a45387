"""A walk through one chart of the cat map.

Run with ``python3 demos/cat_map_tour.py``. Takes a few seconds.

The cat map is linear, so every object below has a closed form to compare
against: the splitting is the eigenframe, the local map is diagonal and the
shadow of an orbit chain is the orbit point itself.
"""

import math

import numpy as np

from nuhcode.alphabet import coarse_grain, orbit_to_chain, sample_orbits
from nuhcode.charts import local_map
from nuhcode.manifolds import shadow
from nuhcode.reduction import point_reduction
from nuhcode.surface_model import cat_map

CHI, EPS = 0.5, 0.01

fmap = cat_map()
x = np.array([0.3, 0.7])

frame, scales, lin, size = point_reduction(fmap, x, CHI, EPS)
print("stable / unstable directions:", frame.e_s.round(6), frame.e_u.round(6))
print(f"s_chi = {scales.s_chi:.6f}   closed form "
      f"{math.sqrt(2 / (1 - math.exp(2 * CHI) * ((3 - 5 ** 0.5) / 2) ** 2)):.6f}")
print(f"chart size Q_eps = {size.Q_eps:.3e} (lattice level {size.level})")

# A chart this small is why every orbit below is computed at high precision.
sample = sample_orbits(fmap, CHI, EPS, n_orbits=2, orbit_len=100, seed=4)
alphabet = coarse_grain(sample)
print(f"\n{sample.n_points} stored orbit points, {len(alphabet)} alphabet charts")

site = next(s for s in sample.sites(margin=12) if s[0] != 0)
c = sample.chart(site)
nxt = sample.chart((site[0], site[1] + 1))
lm = local_map(fmap, c, nxt, c.eta)
print(f"local map at {site}: A = {lm.A:+.6f}, B = {lm.B:+.6f}, "
      f"off-diagonal {np.abs(lm.O).max():.1e}")

chain = orbit_to_chain(alphabet, site, 10)
# radius 9, so the shifted window used by the equivariance check still fits
res = shadow(chain, fmap, EPS, CHI, 9, check_equivariance=True)
anchor = sample.orbits[site[0]].anchors[site[1]]
print(f"\nchain window of radius 9 shadows its orbit point to {res.distance_to(anchor):.1e}")
print(f"convergence gap {res.convergence_gap:.1e}, equivariance gap {res.equivariance_gap:.1e}")
