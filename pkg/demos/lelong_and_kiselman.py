"""Regularize a Green potential, read off its Lelong number, then cap it with the Kiselman-Legendre transform.

    python demos/lelong_and_kiselman.py
"""

from pluripot.geometry import AlphaForm, TorusGrid
from pluripot.regularize import (RegularizationParams, SmoothingKernel, estimate_K, hessian_floor_check,
                                 kiselman_transform, lelong_estimate)
from pluripot.supercanonical import green_function

N = 256
grid = TorusGrid(1, N)
kernel = SmoothingKernel(1)
pole = (N // 3, N // 2)

for c in (0.5, 1.0, 2.0):
    psi = green_function(grid, pole) * c
    est = lelong_estimate(psi, pole, 8 * grid.h, RegularizationParams(), kernel)
    print(f"c = {c:3.1f}: Lelong estimate {est:.4f}")

# psi = 2 G is (2 omega)-psh; the transform with c = 1 trades the steep pole for a log t floor
alpha = AlphaForm.constant(grid, 2.0)
psi = green_function(grid, pole) * 2.0
params = RegularizationParams(K=estimate_K(alpha, kernel), c=1.0, delta=0.1)
capped = kiselman_transform(psi, params, kernel)
print(f"value at the pole: psi {psi.values[pole]:.3f}, transform {capped.field.values[pole]:.3f}")
print(f"nodes whose infimum sits at the smallest radius: {int(capped.at_grid_floor.sum())}")

# nodes within delta of the pole are left out of the comparison
rep = hessian_floor_check(psi, params, alpha, kernel)
print(f"Hessian floor -K delta^2 = {rep.floor_min:.4f}; worst violation away from the pole {rep.worst_violation:.2e}")
