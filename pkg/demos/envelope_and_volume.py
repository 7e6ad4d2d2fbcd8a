"""Envelope of a mixed-sign form on the flat torus, its contact set and its volume.

The form is a = 0.3 + cos(2 pi x): negative on a band around x = 1/2, so the
largest alpha-psh function below zero must leave zero there.  Run with

    python demos/envelope_and_volume.py
"""

import numpy as np

from pluripot.geometry import TorusGrid, alpha_from_spec, integrate
from pluripot.monge_ampere import ma_measure, solve_envelope, volume

N = 256
grid = TorusGrid(1, N)
# dd^c of -cos(2 pi x) / pi is cos(2 pi x), so beta = 0.3 plus this q gives a
alpha = alpha_from_spec(grid, [[0.3]], [((1, 0), -1 / np.pi, 0.0)], dims=[0])

result = solve_envelope(alpha, dims=[0])
phi = result.phi.values[:, 0]
contact = np.broadcast_to(result.contact, result.phi.values.shape)[:, 0]
x = np.arange(N) / N
print(f"solver: {result.method}, {result.iterations} sweeps")
print(f"min phi = {phi.min():.6f} at x = {x[np.argmin(phi)]:.4f}")
print(f"contact set covers {contact.mean():.3f} of the circle; it ends at x = {x[~contact].min():.4f}")

# the Monge-Ampere mass of the envelope sits on the contact set
rep = ma_measure(alpha, result.phi, contact=result.contact)
print(f"total MA mass {rep.total_mass:.6f}, carried off the dilated contact set: "
      f"{rep.off_contact_mass_dilated:.2e}")

print(f"vol(alpha) = {volume(alpha, result=result):.6f}   (integral of a: {integrate(alpha.density()):.6f})")
