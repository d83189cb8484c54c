"""Critical visibilities by linear programming and Frank-Wolfe, with extracted Bell inequalities.

Run: python3 demos/03_local_polytope.py
"""

from jsibell.bell import theoretical_cglmp
from jsibell.core import Scenario, grid_to_tensor
from jsibell.lhv import fw_visibility, lp_visibility
from jsibell.simulate import cglmp_phase_probabilities, jpd_binned

for d in (2, 3, 4):
    P = cglmp_phase_probabilities(None, d)
    lp = lp_visibility(P)
    line = f"d={d}: LP v_crit {lp.v_crit:.6f} (2/I_d = {2 / theoretical_cglmp(d):.6f})"
    if d < 4:
        fw = fw_visibility(P)
        line += f", FW bracket [{fw.v_lower:.6f}, {fw.v_upper:.6f}]"
    cert = lp.certificate
    line += f", certificate value/bound {cert.value(P) / cert.local_bound:.6f}"
    print(line)

# a third measurement basis per party on the bin-integrated d=2 distribution
M = 16
B = grid_to_tensor(jpd_binned(Scenario(2, M)).values, Scenario(2, M))
v2 = lp_visibility(B[:, :, [0, M // 2]][:, :, :, [M // 2, 0]]).v_crit
v3 = lp_visibility(B[:, :, [0, M // 2, M // 4]][:, :, :, [M // 2, 0, M // 4]]).v_crit
print(f"binned d=2, M={M}: v_crit with 2 settings {v2:.6f}, with 3 settings {v3:.6f}")
