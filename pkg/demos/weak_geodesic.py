"""Weak geodesic from 0 to a cosine bump, and what it looks like at the midpoint.

    python demos/weak_geodesic.py
"""

import numpy as np

from pluripot.acceptance import geodesic_pair
from pluripot.geodesics import boundary_continuity_check, linear_interpolant, weak_geodesic

problem = geodesic_pair(64, 16)
result = weak_geodesic(problem)
rep = result.report
print(f"{result.iterations} sweeps; boundary error {rep['boundary_error']:.1e}")
print(f"interior MA residual: median {rep['interior_ma_residual']['median']:.4f} "
      f"(grid tolerance {rep['eps_grid']:.4f})")
print(f"sup eigenvalue over all slices {rep['eigen_cap']:.4f}; min {rep['slice_min_eigenvalue']:.4f}")

# convexity in t pulls the geodesic below the straight line between its ends
mid = problem.Nt // 2
gap = linear_interpolant(problem)[mid] - result.phi[mid]
print(f"at t = {problem.t[mid]:.3f} the geodesic lies up to {gap.max():.4f} below the linear interpolant")

bc = boundary_continuity_check(result)
print(f"Lipschitz constants at the ends: C0 = {bc['C0']:.3f}, C1 = {bc['C1']:.3f}")
half = result.phi.shape[1] // 2
print("phi at x = 1/2 along t:", np.round(result.phi[:, half, 0], 4))
