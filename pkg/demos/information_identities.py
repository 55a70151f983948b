"""Walk through the exact information identities and the Gaussian estimator bounds.

    python3 demos/information_identities.py
"""

import numpy as np

from cvmim.oracle import DiscreteJoint, discrete_info, gaussian_mi, gaussian_mi_quadrature, \
    prop1_joint, verify_propositions
from cvmim.sandwich import gaussian_sandwich

# a joint where y and z observe independent halves of x
j = prop1_joint(p_u=0.3, p_w=0.6, flip_y=0.1, flip_z=0.2)
whole = discrete_info(j, "I(x;(y,z))")
parts = discrete_info(j, "I(x;y)") + discrete_info(j, "I(x;z)")
print(f"I(x;(y,z)) = {whole:.12f}  I(x;y) + I(x;z) = {parts:.12f}")

# perfectly correlated bits carry one bit
print("MI of copied bit:", discrete_info(DiscreteJoint(np.diag([0.5, 0.5])), "MI(x;y)"), "=", np.log(2))

r = verify_propositions(1000, seed=0)
print(f"1000 random trials: residual {r['prop1_max_residual']:.1e}, DPI violations {r['dpi_violations']}")

for rho in (0.0, 0.5, 0.9):
    print(f"rho={rho}: closed form {gaussian_mi(rho):.6f}, quadrature {gaussian_mi_quadrature(rho):.6f}")

print("\nestimator bounds on 10^4 samples per rho (takes a few seconds):")
for e in gaussian_sandwich()["results"]:
    print(f"  rho={e['rho']}: lower {e['lower']:+.3f} <= true {e['true_mi']:.3f} <= upper {e['upper']:.3f}")
