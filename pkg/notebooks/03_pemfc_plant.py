"""
The air-supply plant on its own
================================

Four states: cathode pressure x1, nitrogen partial pressure x2, compressor
speed x3 and supply manifold pressure x4.  The inputs are the compressor
motor current u, the stack current xi and a leak f at the supply manifold.
"""

import numpy as np

from stwobs.pemfc import PhysicalParams, derive_constants, equilibrium, plant_deriv, psi, rk4_step

c = derive_constants(PhysicalParams())

# cathode exit flow: subsonic below about 1.9 bar, choked (linear) above
for x1 in (1.2e5, 1.5e5, 2.0e5, 3.0e5):
    print(f"psi({x1:.1e}) = {psi(x1, c):.6f} kg/s")

# operating point holding x1 = 2.5 bar at 100 A
x, u = equilibrium(c, 100.0, x1=2.5e5)
print("equilibrium state:", x, " motor current:", u)
print("residual dx/dt   :", plant_deriv(x, u, 100.0, 0.0, c))

# a 3 g/s leak pulls the manifold pressure down
dt = 1e-4
y = x.copy()
for _ in range(int(2.0 / dt)):
    y = rk4_step(y, u, 100.0, 3e-3, c, dt)
print("after 2 s of leak:", y, " manifold drop:", x[3] - y[3], "Pa")
