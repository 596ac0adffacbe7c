"""
Design conditions for the fuel cell observer
============================================

The Riccati equation fixes P1, the gain equation fixes K, and the block
matrix Q must be positive definite.  certify() solves and checks all three.
"""

import numpy as np

from stwobs.design import InfeasibleDesign, certify, smallest_feasible_H
from stwobs.pemfc import (PhysicalParams, as_system_description, derive_constants,
                          lipschitz_constants)

c = derive_constants(PhysicalParams())

# Lipschitz constants are sampled over an operating box of pressures and speeds
gamma2, gamma_g1, gamma_g2 = lipschitz_constants(c, H=4.0)
print(f"gamma2 = {gamma2:.4f}, gamma_g1 = {gamma_g1}, gamma_g2 = {gamma_g2:.1f}")

sysd = as_system_description(c, 4.0, lipschitz=(gamma2, gamma_g1, gamma_g2))
cert = certify(sysd, eps_r=0.1, eps_k=10.0)
print(cert.report())

# the output-injection gain H sets how fast z2 errors decay; too small is infeasible
try:
    certify(as_system_description(c, 2.0), 0.1, 10.0)
except InfeasibleDesign as exc:
    print("H = 2:", exc)

# scan for the smallest feasible H with gamma2 held at its H = 4 value
H = smallest_feasible_H(lambda H: (np.diag([-H, -c.c9]), gamma2), np.arange(0.5, 5.0, 0.05), 0.1)
print("smallest feasible H on the grid:", round(H, 2))
